"""Residual co-occurrence features over a sliding patch grid.

Pipeline per frame: third-derivative high-pass residual (exact integer
arithmetic), uniform quantization with truncation to [-T, T], 4-pixel
co-occurrence histograms along rows and columns, symmetry pooling, zero-mean /
unit-norm normalization. One feature vector per patch of a sliding grid.

Histogram bin layout: tuple (k0, k1, k2, k3) with k_i in [-T, T] maps to bin
(((k0+T)*B + k1+T)*B + k2+T)*B + k3+T, B = 2T+1, i.e. k0 is the most
significant digit. Symmetry merging sums bins over orbits of the selected
group acting on tuples; orbits are numbered by increasing smallest member bin.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import InvalidParameter, PatchTooSmall, RegionOutOfBounds, ShapeError
from .frames import Frame, FrameSequence

# taps of the high-pass filter; annihilates polynomials up to degree 2
RESIDUAL_KERNEL = (1, -3, 3, -1)

SYMMETRY_OPTIONS = ("none", "sign", "reversal", "sign+reversal")


def _luma_array(frame) -> np.ndarray:
    if isinstance(frame, Frame):
        return frame.luma
    return np.asarray(frame)


def compute_residual(frame, orientation: str = "horizontal") -> np.ndarray:
    """High-pass residual r[i,k] = f[i,k] - 3 f[i,k+1] + 3 f[i,k+2] - f[i,k+3].

    Valid region only (no padding): output is 3 narrower along the filtered
    axis. ``vertical`` applies the same taps along columns. int32 output.
    """
    f = _luma_array(frame).astype(np.int32)
    if f.ndim != 2:
        raise ShapeError(f"expected 2-D raster, got shape {f.shape}")
    if orientation == "vertical":
        f = f.T
    elif orientation != "horizontal":
        raise InvalidParameter(f"unknown orientation {orientation!r}")
    if f.shape[1] < 4:
        raise PatchTooSmall(
            f"raster extent {f.shape[1]} along {orientation} axis, need >= 4"
        )
    r = f[:, :-3] - 3 * f[:, 1:-2] + 3 * f[:, 2:-1] - f[:, 3:]
    return r.T if orientation == "vertical" else r


def quantize_truncate(residual: np.ndarray, q: float, trunc: int) -> np.ndarray:
    """Quantize: trunc_T(round(r / q)), rounding half away from zero.

    Half-away-from-zero makes quantization commute with negation exactly.
    """
    if q <= 0:
        raise InvalidParameter(f"quantization step must be positive, got {q}")
    if trunc < 1:
        raise InvalidParameter(f"truncation level must be >= 1, got {trunc}")
    r = np.asarray(residual)
    scaled = np.abs(r) / float(q)
    mag = np.floor(scaled + 0.5)
    out = np.sign(r) * np.minimum(mag, trunc)
    return out.astype(np.int32)


def _tuple_codes(qres: np.ndarray, trunc: int, axis: int) -> np.ndarray:
    """Bin code of each aligned 4-tuple start position along ``axis``."""
    base = 2 * trunc + 1
    v = np.moveaxis(qres, axis, 1) + trunc
    codes = ((v[:, :-3] * base + v[:, 1:-2]) * base + v[:, 2:-1]) * base + v[:, 3:]
    return np.moveaxis(codes, 1, axis)


def cooccurrence_histogram(qres: np.ndarray, region=None, direction: str = "along-rows",
                           trunc: int = 2) -> np.ndarray:
    """Counts of aligned 4-tuples with unit stride over a rectangular region.

    ``region`` is (top, left, height, width) in the quantized-residual grid;
    None means the full raster. ``along-rows`` scans 4 consecutive values in
    each row; ``along-columns`` in each column.
    """
    qres = np.asarray(qres)
    if qres.ndim != 2:
        raise ShapeError(f"expected 2-D quantized residual, got shape {qres.shape}")
    if np.abs(qres).max(initial=0) > trunc:
        raise InvalidParameter(f"values exceed truncation level {trunc}")
    if region is None:
        region = (0, 0) + qres.shape
    top, left, height, width = region
    if top < 0 or left < 0 or top + height > qres.shape[0] or left + width > qres.shape[1]:
        raise RegionOutOfBounds(f"region {region} outside raster {qres.shape}")
    block = qres[top : top + height, left : left + width]
    axis = 1 if direction == "along-rows" else 0
    if direction not in ("along-rows", "along-columns"):
        raise InvalidParameter(f"unknown direction {direction!r}")
    if block.shape[axis] < 4:
        raise RegionOutOfBounds(
            f"region extent {block.shape[axis]} along scan axis admits no 4-tuple"
        )
    codes = _tuple_codes(block, trunc, axis)
    nbins = (2 * trunc + 1) ** 4
    return np.bincount(codes.ravel(), minlength=nbins).astype(np.int64)


class SymmetryMerge:
    """Pools bins over orbits of a symmetry group acting on 4-tuples.

    Groups: ``sign`` identifies (k0..k3) with (-k0..-k3), ``reversal`` with
    (k3..k0), ``sign+reversal`` is the 4-element group they generate. Output
    dimension is the orbit count, found by explicit enumeration at
    construction.
    """

    def __init__(self, symmetry: str = "sign+reversal", trunc: int = 2):
        if symmetry not in SYMMETRY_OPTIONS:
            raise InvalidParameter(
                f"symmetry must be one of {SYMMETRY_OPTIONS}, got {symmetry!r}"
            )
        self.symmetry = symmetry
        self.trunc = trunc
        base = 2 * trunc + 1
        self.nbins = base ** 4

        digits = np.indices((base,) * 4).reshape(4, -1) - trunc  # (4, nbins)

        def encode(tup):
            code = np.zeros(self.nbins, dtype=np.int64)
            for d in tup:
                code = code * base + (d + trunc)
            return code

        images = [encode(digits)]
        if symmetry in ("sign", "sign+reversal"):
            images.append(encode(-digits))
        if symmetry in ("reversal", "sign+reversal"):
            images.append(encode(digits[::-1]))
        if symmetry == "sign+reversal":
            images.append(encode(-digits[::-1]))
        canon = np.minimum.reduce(images)
        reps, inverse = np.unique(canon, return_inverse=True)
        self.bin_to_orbit = inverse.astype(np.int64)
        self.dim = len(reps)

    def merge(self, row_hist: np.ndarray, col_hist: np.ndarray) -> np.ndarray:
        """Sum the two direction histograms, then sum bins within each orbit."""
        row_hist = np.asarray(row_hist, dtype=np.float64)
        col_hist = np.asarray(col_hist, dtype=np.float64)
        if row_hist.shape != (self.nbins,) or col_hist.shape != (self.nbins,):
            raise InvalidParameter(
                f"histograms must have length {self.nbins}, got "
                f"{row_hist.shape} and {col_hist.shape}"
            )
        pooled = row_hist + col_hist
        return np.bincount(self.bin_to_orbit, weights=pooled, minlength=self.dim)


def normalize_feature(merged: np.ndarray) -> np.ndarray:
    """Center to zero mean and scale to unit L2 norm.

    Degenerate (constant) inputs fall back to the all-zero vector.
    """
    v = np.asarray(merged, dtype=np.float64)
    if v.size == 0:
        raise InvalidParameter("cannot normalize an empty vector")
    centered = v - v.mean()
    norm = np.linalg.norm(centered)
    if norm < 1e-12:
        return np.zeros_like(v)
    return centered / norm


@dataclass(frozen=True)
class PatchGrid:
    """Sliding-grid geometry: origins at multiples of ``stride``."""

    frame_height: int
    frame_width: int
    patch: int
    stride: int

    def __post_init__(self):
        if self.patch < 8:
            raise InvalidParameter(f"patch must be >= 8, got {self.patch}")
        if self.stride < 1:
            raise InvalidParameter(f"stride must be >= 1, got {self.stride}")
        if self.frame_height < self.patch or self.frame_width < self.patch:
            raise PatchTooSmall(
                f"frame {self.frame_height}x{self.frame_width} smaller than patch {self.patch}"
            )

    @property
    def rows(self) -> int:
        return (self.frame_height - self.patch) // self.stride + 1

    @property
    def cols(self) -> int:
        return (self.frame_width - self.patch) // self.stride + 1

    def origin(self, r: int, c: int):
        return r * self.stride, c * self.stride


def extract_patch_features(frame, patch: int, stride: int, q: float = 3.0,
                           trunc: int = 2, merger: SymmetryMerge | None = None) -> np.ndarray:
    """Feature grid (rows, cols, dim) for one frame.

    Residuals are computed once per orientation on the whole frame; each
    patch then counts only the tuples whose full filter+tuple support lies
    inside the patch footprint, so features are independent of neighboring
    content.
    """
    luma = _luma_array(frame)
    if merger is None:
        merger = SymmetryMerge(trunc=trunc)
    if merger.trunc != trunc:
        raise InvalidParameter("merger truncation level disagrees with trunc")
    grid = PatchGrid(luma.shape[0], luma.shape[1], patch, stride)

    qh = quantize_truncate(compute_residual(luma, "horizontal"), q, trunc)
    qv = quantize_truncate(compute_residual(luma, "vertical"), q, trunc)
    # code of the 4-tuple starting at each residual position
    ch = _tuple_codes(qh, trunc, axis=1)  # (h, w-6)
    cv = _tuple_codes(qv, trunc, axis=0)  # (h-6, w)

    nbins = merger.nbins
    out = np.empty((grid.rows, grid.cols, merger.dim), dtype=np.float64)
    for r in range(grid.rows):
        for c in range(grid.cols):
            r0, c0 = grid.origin(r, c)
            row_hist = np.bincount(
                ch[r0 : r0 + patch, c0 : c0 + patch - 6].ravel(), minlength=nbins
            )
            col_hist = np.bincount(
                cv[r0 : r0 + patch - 6, c0 : c0 + patch].ravel(), minlength=nbins
            )
            out[r, c] = normalize_feature(merger.merge(row_hist, col_hist))
    return out


@dataclass
class FeatureField:
    """Per-patch features over frames: array (n_frames, rows, cols, dim).

    Carries the extraction provenance (patch geometry, quantizer, symmetry)
    needed to score and to project scores back onto pixels.
    """

    features: np.ndarray
    frame_height: int
    frame_width: int
    patch: int
    stride: int
    q: float
    trunc: int
    symmetry: str
    first_frame_index: int = 0

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]

    @property
    def rows(self) -> int:
        return self.features.shape[1]

    @property
    def cols(self) -> int:
        return self.features.shape[2]

    @property
    def dim(self) -> int:
        return self.features.shape[3]

    @property
    def grid(self) -> PatchGrid:
        return PatchGrid(self.frame_height, self.frame_width, self.patch, self.stride)


def extract_sequence_features(seq: FrameSequence, patch: int, stride: int,
                              q: float = 3.0, trunc: int = 2,
                              symmetry: str = "sign+reversal",
                              workers: int = 1) -> FeatureField:
    """Extract the full feature field for a frame sequence.

    Frames may be processed in parallel; each result is written at its frame
    slot, so output does not depend on scheduling.
    """
    merger = SymmetryMerge(symmetry, trunc)
    grid = PatchGrid(seq.height, seq.width, patch, stride)
    out = np.empty((len(seq), grid.rows, grid.cols, merger.dim), dtype=np.float32)

    def work(t):
        out[t] = extract_patch_features(seq[t], patch, stride, q, trunc, merger)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, range(len(seq))))
    else:
        for t in range(len(seq)):
            work(t)
    return FeatureField(out, seq.height, seq.width, patch, stride, float(q),
                        trunc, symmetry, first_frame_index=seq.first_index)


# binary feature-field container: fixed header then row-major float32 data
_MAGIC = b"SMFF"
_VERSION = 1
# magic, version, n_frames, rows, cols, dim, frame_h, frame_w, patch, stride,
# first_frame_index, q, trunc, symmetry tag
_HEADER = struct.Struct("<4sH IIII IIII i d I 16s")


def save_feature_field(field: FeatureField, path) -> None:
    sym = field.symmetry.encode("ascii").ljust(16, b"\0")
    header = _HEADER.pack(
        _MAGIC, _VERSION,
        field.n_frames, field.rows, field.cols, field.dim,
        field.frame_height, field.frame_width, field.patch, field.stride,
        field.first_frame_index, float(field.q), field.trunc, sym,
    )
    data = np.ascontiguousarray(field.features, dtype=np.float32)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())


def load_feature_field(path) -> FeatureField:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise InvalidParameter(f"{path}: truncated feature file header")
        (magic, version, n_frames, rows, cols, dim, frame_h, frame_w, patch,
         stride, first_index, q, trunc, sym) = _HEADER.unpack(header)
        if magic != _MAGIC:
            raise InvalidParameter(f"{path}: not a feature field file")
        if version != _VERSION:
            raise InvalidParameter(f"{path}: unsupported feature file version {version}")
        count = n_frames * rows * cols * dim
        data = np.frombuffer(fh.read(count * 4), dtype=np.float32)
        if data.size != count:
            raise InvalidParameter(f"{path}: truncated feature data")
    features = data.reshape(n_frames, rows, cols, dim).copy()
    return FeatureField(features, frame_h, frame_w, patch, stride, q, trunc,
                        sym.rstrip(b"\0").decode("ascii"), first_frame_index=first_index)


def feature_field_to_csv(field: FeatureField, path) -> None:
    """Debug export: one line per patch, columns frame,row,col,f0..f{dim-1}."""
    with open(path, "w") as fh:
        cols = ",".join(f"f{i}" for i in range(field.dim))
        fh.write(f"frame,row,col,{cols}\n")
        for t in range(field.n_frames):
            for r in range(field.rows):
                for c in range(field.cols):
                    vals = ",".join(repr(float(v)) for v in field.features[t, r, c])
                    fh.write(f"{field.first_frame_index + t},{r},{c},{vals}\n")
