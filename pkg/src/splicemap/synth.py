"""Deterministic synthetic video sources with planted splices.

Each source is filtered white noise: a seeded noise canvas smoothed by a
small kernel, rescaled to 8 bits, cropped with a per-frame drift to emulate
camera motion, plus independent per-frame sensor-like noise. A splice pastes
a moving rectangle of a second source (with a different kernel, hence
different residual statistics) over the first; ground truth marks exactly the
pasted pixels.

With ``frame_noise = 0`` and zero drift all frames are bit-identical; the
default nonzero noise makes frames differ while keeping the sequence fully
determined by the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d

from .errors import InvalidParameter, RegionOutOfBounds
from .features import compute_residual, cooccurrence_histogram, quantize_truncate
from .frames import Frame, FrameSequence, GroundTruthMask, write_pgm

# 3x3 binomial smoothing: the default pristine ("camera A") texture
KERNEL_SMOOTH = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64) / 16.0
# identity kernel: unfiltered noise, maximally different residual statistics
KERNEL_IDENTITY = np.array([[1.0]])

# minimum chi-square distance between the default A/B co-occurrence
# distributions; see tests for the check at desk scale
CHI2_DISTANCE_FLOOR = 0.05

# desk-scale analogue of the full 720x1280 / patch 128 / stride 8 setup
DESK_DIMS = (256, 256)
DESK_PATCH = 64
DESK_STRIDE = 16
DESK_TRAIN_FRAMES = 50
DESK_TEST_FRAMES = 40


@dataclass(frozen=True)
class SourceModel:
    """Seeded texture generator; same seed always yields the same sequence."""

    seed: int
    kernel: np.ndarray = field(default_factory=lambda: KERNEL_SMOOTH.copy())
    contrast: float = 40.0
    base_level: float = 128.0
    drift: tuple = (1, 2)
    frame_noise: float = 1.0


@dataclass(frozen=True)
class SpliceTrajectory:
    """Rectangle per frame: fixed size, integer velocity from start_frame on.

    Frames before ``start_frame`` get a zero-area rectangle (no splice).
    """

    top: int
    left: int
    height: int
    width: int
    velocity: tuple = (0, 1)
    start_frame: int = 0

    def rect_at(self, t: int):
        if t < self.start_frame:
            return (self.top, self.left, 0, 0)
        dt = t - self.start_frame
        return (self.top + self.velocity[0] * dt,
                self.left + self.velocity[1] * dt,
                self.height, self.width)


def _check_dims(dims):
    h, w = dims
    if h < 1 or w < 1:
        raise InvalidParameter(f"frame dims must be positive, got {dims}")
    return int(h), int(w)


def generate_pristine(source: SourceModel, n_frames: int, dims) -> FrameSequence:
    """Textured frames drifting over a fixed smoothed-noise canvas."""
    if n_frames < 1:
        raise InvalidParameter(f"need at least one frame, got {n_frames}")
    h, w = _check_dims(dims)
    dy, dx = int(source.drift[0]), int(source.drift[1])
    rng = np.random.default_rng(np.random.SeedSequence([source.seed]))

    span_y = abs(dy) * (n_frames - 1)
    span_x = abs(dx) * (n_frames - 1)
    kh, kw = source.kernel.shape
    noise = rng.standard_normal((h + span_y + kh - 1, w + span_x + kw - 1))
    canvas = convolve2d(noise, source.kernel, mode="valid")
    canvas = source.base_level + source.contrast * (canvas - canvas.mean()) / canvas.std()

    oy0 = span_y if dy < 0 else 0
    ox0 = span_x if dx < 0 else 0
    frames = []
    for t in range(n_frames):
        oy, ox = oy0 + dy * t, ox0 + dx * t
        pix = canvas[oy : oy + h, ox : ox + w]
        if source.frame_noise > 0:
            pix = pix + source.frame_noise * rng.standard_normal((h, w))
        frames.append(Frame(np.clip(np.floor(pix + 0.5), 0, 255).astype(np.uint8)))
    return FrameSequence(frames)


def generate_forged(source_a: SourceModel, source_b: SourceModel,
                    trajectory: SpliceTrajectory, n_frames: int, dims):
    """Source-A sequence with a moving region replaced by source-B content.

    Returns (FrameSequence, per-frame GroundTruthMask list). With a zero-area
    trajectory the frames equal generate_pristine(source_a, ...) exactly.
    """
    h, w = _check_dims(dims)
    base = generate_pristine(source_a, n_frames, dims)
    overlay = generate_pristine(source_b, n_frames, dims)

    frames, masks = [], []
    for t in range(n_frames):
        top, left, rh, rw = trajectory.rect_at(t)
        labels = np.zeros((h, w), dtype=np.uint8)
        if rh > 0 and rw > 0:
            if top < 0 or left < 0 or top + rh > h or left + rw > w:
                raise RegionOutOfBounds(
                    f"frame {t}: rect {(top, left, rh, rw)} outside {h}x{w}"
                )
            luma = base[t].luma.copy()
            luma[top : top + rh, left : left + rw] = \
                overlay[t].luma[top : top + rh, left : left + rw]
            frames.append(Frame(luma))
            labels[top : top + rh, left : left + rw] = 1
        else:
            frames.append(base[t])
        masks.append(GroundTruthMask(labels))
    return FrameSequence(frames), masks


def default_sources(seed_a: int = 11, seed_b: int = 23):
    """The documented A/B pair: smoothed texture vs raw noise."""
    a = SourceModel(seed=seed_a, kernel=KERNEL_SMOOTH.copy())
    b = SourceModel(seed=seed_b, kernel=KERNEL_IDENTITY.copy(), drift=(0, 1))
    return a, b


def default_trajectory(start_frame: int = DESK_TRAIN_FRAMES,
                       dims=DESK_DIMS, n_active: int = DESK_TEST_FRAMES) -> SpliceTrajectory:
    """Desk-scale splice: a centered block of ~7/16 frame extent drifting
    rightward one pixel per frame (held still if the drift would leave the
    frame within ``n_active`` frames)."""
    h, w = dims
    height = max(1, (h * 7) // 16)
    width = max(1, (w * 7) // 16)
    top = (h * 9) // 32
    left = (w * 15) // 64
    vx = 1 if left + width + (n_active - 1) <= w else 0
    return SpliceTrajectory(top=top, left=left, height=height, width=width,
                            velocity=(0, vx), start_frame=start_frame)


def residual_cooccurrence_distribution(seq: FrameSequence, q: float = 3.0,
                                       trunc: int = 2) -> np.ndarray:
    """Normalized co-occurrence histogram pooled over frames and directions."""
    nbins = (2 * trunc + 1) ** 4
    total = np.zeros(nbins, dtype=np.float64)
    for frame in seq.frames:
        qh = quantize_truncate(compute_residual(frame, "horizontal"), q, trunc)
        qv = quantize_truncate(compute_residual(frame, "vertical"), q, trunc)
        total += cooccurrence_histogram(qh, direction="along-rows", trunc=trunc)
        total += cooccurrence_histogram(qv, direction="along-columns", trunc=trunc)
    return total / total.sum()


def chi_square_distance(p: np.ndarray, q: np.ndarray) -> float:
    """0.5 * sum (p-q)^2 / (p+q) over bins where p+q > 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    mask = (p + q) > 0
    return float(0.5 * np.sum((p[mask] - q[mask]) ** 2 / (p[mask] + q[mask])))


def write_synthetic_dataset(out_dir, seed: int = 0, dims=DESK_DIMS,
                            n_train: int = DESK_TRAIN_FRAMES,
                            n_test: int = DESK_TEST_FRAMES) -> dict:
    """Write a train+test sequence: pristine frames, then spliced ones.

    Frames land in ``frames/frame_%04d.pgm``, per-frame masks in
    ``masks/mask_%04d.pgm``; a manifest records everything needed to
    regenerate the data.
    """
    out_dir = Path(out_dir)
    frames_dir = out_dir / "frames"
    masks_dir = out_dir / "masks"
    frames_dir.mkdir(parents=True, exist_ok=True)
    masks_dir.mkdir(parents=True, exist_ok=True)

    source_a, source_b = default_sources(seed_a=seed * 1000 + 11, seed_b=seed * 1000 + 23)
    trajectory = default_trajectory(start_frame=n_train, dims=dims, n_active=n_test)
    n_frames = n_train + n_test
    seq, masks = generate_forged(source_a, source_b, trajectory, n_frames, dims)

    for t in range(n_frames):
        write_pgm(frames_dir / (f"frame_{t:04d}.pgm"), seq[t].luma)
        write_pgm(masks_dir / (f"mask_{t:04d}.pgm"), masks[t].labels * np.uint8(255))

    manifest = {
        "dims": list(dims),
        "n_train": n_train,
        "n_test": n_test,
        "seed": seed,
        "source_a": {"seed": source_a.seed, "kernel": source_a.kernel.tolist(),
                     "contrast": source_a.contrast, "base_level": source_a.base_level,
                     "drift": list(source_a.drift), "frame_noise": source_a.frame_noise},
        "source_b": {"seed": source_b.seed, "kernel": source_b.kernel.tolist(),
                     "contrast": source_b.contrast, "base_level": source_b.base_level,
                     "drift": list(source_b.drift), "frame_noise": source_b.frame_noise},
        "trajectory": {"top": trajectory.top, "left": trajectory.left,
                       "height": trajectory.height, "width": trajectory.width,
                       "velocity": list(trajectory.velocity),
                       "start_frame": trajectory.start_frame},
        "frame_pattern": "frame_%04d.pgm",
        "mask_pattern": "mask_%04d.pgm",
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return manifest
