"""Frame and mask ingestion.

Frames are 8-bit single-channel (luma) rasters loaded from PGM (binary P5,
maxval 255) or PNG (8-bit grayscale or RGB) image sequences. Color inputs are
converted with BT.601 weights. Ground-truth masks binarize at >127.
"""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import InconsistentDimensions, NotFound, UnsupportedFormat

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class Frame:
    """Single 8-bit luma raster, shape (height, width)."""

    luma: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.luma)
        if arr.ndim != 2 or arr.dtype != np.uint8:
            raise UnsupportedFormat(
                f"frame must be a 2-D uint8 array, got shape {arr.shape} dtype {arr.dtype}"
            )
        object.__setattr__(self, "luma", arr)

    @property
    def height(self) -> int:
        return self.luma.shape[0]

    @property
    def width(self) -> int:
        return self.luma.shape[1]


@dataclass(frozen=True)
class FrameSequence:
    """Ordered frames of identical dimensions.

    ``first_index`` records the index of the first frame in the source
    numbering, so artifacts derived from a sub-range keep their original
    frame numbers.
    """

    frames: list = field(default_factory=list)
    first_index: int = 0

    def __post_init__(self):
        if not self.frames:
            raise InconsistentDimensions("frame sequence must be non-empty")
        h, w = self.frames[0].height, self.frames[0].width
        for k, f in enumerate(self.frames):
            if (f.height, f.width) != (h, w):
                raise InconsistentDimensions(
                    f"frame {self.first_index + k} is {f.height}x{f.width}, expected {h}x{w}"
                )

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, k) -> Frame:
        return self.frames[k]

    @property
    def height(self) -> int:
        return self.frames[0].height

    @property
    def width(self) -> int:
        return self.frames[0].width


@dataclass(frozen=True)
class GroundTruthMask:
    """Binary raster: 0 = pristine, 1 = forged."""

    labels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise UnsupportedFormat(f"mask must be 2-D, got shape {arr.shape}")
        if not np.isin(arr, (0, 1)).all():
            raise UnsupportedFormat("mask labels must be 0 or 1")
        object.__setattr__(self, "labels", arr.astype(np.uint8))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


def to_luma(rgb: np.ndarray) -> Frame:
    """Convert an 8-bit RGB raster to luma: Y = round(.299 R + .587 G + .114 B)."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise UnsupportedFormat(f"expected (h, w, 3) raster, got shape {rgb.shape}")
    r, g, b = LUMA_WEIGHTS
    y = r * rgb[:, :, 0].astype(np.float64) + g * rgb[:, :, 1] + b * rgb[:, :, 2]
    y = np.clip(np.floor(y + 0.5), 0, 255)
    return Frame(y.astype(np.uint8))


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) PGM with maxval 255."""
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise UnsupportedFormat(f"{path}: not a binary P5 PGM")
    # header = magic, width, height, maxval as whitespace-separated tokens,
    # '#' comments allowed between them
    pos, tokens = 2, []
    while len(tokens) < 3:
        m = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\d+)").match(data, pos)
        if m is None:
            raise UnsupportedFormat(f"{path}: malformed PGM header")
        tokens.append(int(m.group(1)))
        pos = m.end()
    width, height, maxval = tokens
    if maxval != 255:
        raise UnsupportedFormat(f"{path}: maxval {maxval}, only 255 supported")
    pos += 1  # single whitespace byte after maxval
    raster = data[pos : pos + width * height]
    if len(raster) != width * height:
        raise UnsupportedFormat(f"{path}: truncated raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width)


def write_pgm(path, raster: np.ndarray) -> None:
    raster = np.ascontiguousarray(raster, dtype=np.uint8)
    if raster.ndim != 2:
        raise UnsupportedFormat(f"PGM raster must be 2-D, got shape {raster.shape}")
    h, w = raster.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(raster.tobytes())


def _read_image(path) -> np.ndarray:
    """Read PGM/PNG as uint8 array, (h, w) for gray or (h, w, 3) for RGB."""
    path = Path(path)
    if not path.exists():
        raise NotFound(f"{path}: no such file")
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"P5":
        return read_pgm(path)
    if magic.startswith(b"P"):
        raise UnsupportedFormat(f"{path}: only binary P5 PGM is supported")
    try:
        img = Image.open(path)
    except UnidentifiedImageError as err:
        raise UnsupportedFormat(f"{path}: {err}") from err
    if img.mode == "L":
        return np.asarray(img, dtype=np.uint8)
    if img.mode == "RGB":
        return np.asarray(img, dtype=np.uint8)
    if img.mode == "RGBA":
        return np.asarray(img.convert("RGB"), dtype=np.uint8)
    raise UnsupportedFormat(f"{path}: unsupported mode {img.mode} (8-bit gray/RGB only)")


def load_frame(path) -> Frame:
    arr = _read_image(path)
    return to_luma(arr) if arr.ndim == 3 else Frame(arr)


def load_frame_sequence(directory, pattern: str, first: int, last: int, workers: int = 1) -> FrameSequence:
    """Load frames ``pattern % index`` for index in [first, last], in index order.

    Files may load in parallel; output order is by index regardless of
    scheduling.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise NotFound(f"{directory}: no such directory")
    if last < first:
        raise NotFound(f"empty frame range [{first}, {last}]")
    paths = []
    for idx in range(first, last + 1):
        p = directory / (pattern % idx)
        if not p.exists():
            raise NotFound(f"{p}: missing frame {idx}", index=idx)
        paths.append(p)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            frames = list(pool.map(load_frame, paths))
    else:
        frames = [load_frame(p) for p in paths]
    return FrameSequence(frames, first_index=first)


def load_mask(path, expected_shape=None) -> GroundTruthMask:
    """Load a ground-truth mask; pixels >127 are forged."""
    arr = _read_image(path)
    if arr.ndim == 3:
        arr = to_luma(arr).luma
    if expected_shape is not None and arr.shape != tuple(expected_shape):
        raise InconsistentDimensions(
            f"{path}: mask is {arr.shape}, expected {tuple(expected_shape)}"
        )
    return GroundTruthMask((arr > 127).astype(np.uint8))
