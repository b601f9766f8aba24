"""Patch scoring and heat-map construction.

Every patch of every frame is scored by its autoencoder reconstruction error;
scores are projected back onto pixels as the mean over all patches covering
each pixel. Pixels covered by no patch (stride remainder at the right/bottom
edges) are flagged in a coverage mask and excluded downstream.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import InvalidParameter, ShapeError
from .features import FeatureField, PatchGrid
from .frames import write_pgm
from .neural import DenseAutoencoder, LstmAutoencoder


@dataclass(frozen=True)
class HeatMap:
    """Per-pixel anomaly scores with a mask of patch-covered pixels."""

    values: np.ndarray
    coverage: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.coverage.shape:
            raise ShapeError(
                f"values {self.values.shape} vs coverage {self.coverage.shape}"
            )


@dataclass(frozen=True)
class DetectionMask:
    """Thresholded heat map; positives are always covered pixels."""

    mask: np.ndarray
    tau: float


def _score_vectors(model: DenseAutoencoder, flat: np.ndarray, chunk: int) -> np.ndarray:
    scores = np.empty(flat.shape[0])
    for start in range(0, flat.shape[0], chunk):
        block = flat[start : start + chunk]
        _, xhat = model.forward(block)
        scores[start : start + chunk] = np.mean((block - xhat) ** 2, axis=1)
    return scores


def _score_sequences(model: LstmAutoencoder, series: np.ndarray, chunk: int) -> np.ndarray:
    """Per-step losses for (S, T, K) series, chunked over locations.

    Each location's series is split into disjoint windows of the model's
    unroll length, each started from zero state; a final partial window runs
    at its natural length.
    """
    s, t, _ = series.shape
    scores = np.empty((s, t))
    for start in range(0, s, chunk):
        block = series[start : start + chunk]
        for w0 in range(0, t, model.unroll):
            w1 = min(w0 + model.unroll, t)
            window = block[:, w0:w1]
            xhat, _ = model.forward(window)
            scores[start : start + chunk, w0:w1] = np.mean((window - xhat) ** 2, axis=2)
    return scores


def score_patches(model, field: FeatureField, chunk: int = 2048,
                  workers: int = 1) -> np.ndarray:
    """Anomaly score of every patch: array (n_frames, rows, cols).

    Dense models score each feature independently; recurrent models score the
    frame-ordered feature sequence at each spatial location. ``workers`` only
    bounds parallel execution; chunk boundaries are fixed, so results are
    identical at any worker count.
    """
    feats = np.asarray(field.features, dtype=np.float64)
    t, rows, cols, dim = feats.shape
    if dim != model.input_dim:
        raise ShapeError(f"feature dim {dim}, model expects {model.input_dim}")
    if isinstance(model, DenseAutoencoder):
        flat = feats.reshape(-1, dim)
        return _score_vectors(model, flat, chunk).reshape(t, rows, cols)
    if isinstance(model, LstmAutoencoder):
        series = np.ascontiguousarray(
            np.transpose(feats, (1, 2, 0, 3)).reshape(rows * cols, t, dim)
        )
        per_loc = _score_sequences(model, series, chunk)
        return np.transpose(per_loc.reshape(rows, cols, t), (2, 0, 1))
    raise InvalidParameter(f"cannot score with model of type {type(model).__name__}")


def aggregate_heatmap(scores: np.ndarray, grid: PatchGrid) -> HeatMap:
    """Project one frame's patch scores back to pixels.

    Each pixel gets the arithmetic mean of the scores of all patches whose
    footprint covers it.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (grid.rows, grid.cols):
        raise ShapeError(
            f"score grid {scores.shape}, geometry expects {(grid.rows, grid.cols)}"
        )
    if (scores < 0).any():
        raise InvalidParameter("anomaly scores must be non-negative")
    total = np.zeros((grid.frame_height, grid.frame_width))
    count = np.zeros((grid.frame_height, grid.frame_width), dtype=np.int64)
    p = grid.patch
    for r in range(grid.rows):
        r0 = r * grid.stride
        for c in range(grid.cols):
            c0 = c * grid.stride
            total[r0 : r0 + p, c0 : c0 + p] += scores[r, c]
            count[r0 : r0 + p, c0 : c0 + p] += 1
    coverage = count > 0
    values = np.zeros_like(total)
    np.divide(total, count, out=values, where=coverage)
    return HeatMap(values, coverage)


def threshold_map(heatmap: HeatMap, tau: float) -> DetectionMask:
    """Pixel positive iff covered and score strictly above tau."""
    mask = (heatmap.coverage & (heatmap.values > tau)).astype(np.uint8)
    return DetectionMask(mask, float(tau))


# heat-map raster file: header, float32 values row-major, uint8 coverage
_MAGIC = b"SMHM"
_VERSION = 1
_HEADER = struct.Struct("<4sH II i")  # magic, version, height, width, frame index


def save_heatmap(heatmap: HeatMap, path, frame_index: int = 0) -> None:
    h, w = heatmap.values.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, h, w, frame_index))
        fh.write(np.ascontiguousarray(heatmap.values, dtype=np.float32).tobytes())
        fh.write(np.ascontiguousarray(heatmap.coverage, dtype=np.uint8).tobytes())


def load_heatmap(path):
    """Returns (HeatMap, frame_index)."""
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise InvalidParameter(f"{path}: truncated heat-map header")
        magic, version, h, w, frame_index = _HEADER.unpack(header)
        if magic != _MAGIC:
            raise InvalidParameter(f"{path}: not a heat-map raster")
        if version != _VERSION:
            raise InvalidParameter(f"{path}: unsupported heat-map version {version}")
        values = np.frombuffer(fh.read(h * w * 4), dtype=np.float32)
        coverage = np.frombuffer(fh.read(h * w), dtype=np.uint8)
    if values.size != h * w or coverage.size != h * w:
        raise InvalidParameter(f"{path}: truncated heat-map data")
    return (
        HeatMap(values.reshape(h, w).astype(np.float64), coverage.reshape(h, w) > 0),
        frame_index,
    )


def heatmap_to_png(heatmap: HeatMap, path) -> None:
    """8-bit grayscale rendering, min-max normalized over covered pixels."""
    values = heatmap.values
    out = np.zeros(values.shape, dtype=np.uint8)
    if heatmap.coverage.any():
        covered = values[heatmap.coverage]
        lo, hi = covered.min(), covered.max()
        span = hi - lo
        if span <= 0:
            scaled = np.full(values.shape, 128, dtype=np.uint8)
        else:
            scaled = np.clip(
                np.floor((values - lo) / span * 255.0 + 0.5), 0, 255
            ).astype(np.uint8)
        out[heatmap.coverage] = scaled[heatmap.coverage]
    Image.fromarray(out, mode="L").save(path)


def save_detection_mask(mask: DetectionMask, path) -> None:
    write_pgm(path, mask.mask * np.uint8(255))
