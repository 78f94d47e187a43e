"""Sensor and frame preprocessing.

* accelerometer magnitude ``sqrt(ax^2 + ay^2 + az^2)``
* activity id -> binary fall label
* RGB -> grayscale in [0, 1] with ITU-R BT.601 luma weights
* bilinear resize to 32 x 32 with pixel-center alignment
* per-channel z-score standardization fitted on the training split
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DecodeError, InputError

log = logging.getLogger(__name__)

FRAME_SIZE = 32
DEFAULT_FALL_SET = frozenset({1, 2, 3, 4, 5})
# 5 falls + 6 daily activities
DEFAULT_ACTIVITY_IDS = frozenset(range(1, 12))
LUMA = (0.299, 0.587, 0.114)


@dataclass
class SensorSample:
    timestamp: int
    ax: float
    ay: float
    az: float
    sv_total: float
    activity_id: int
    subject: int
    trial: int
    extra: tuple[float, ...] = ()


@dataclass
class FrameGray:
    pixels: np.ndarray
    source_camera: int
    timestamp: int

    def __post_init__(self):
        if self.pixels.shape != (FRAME_SIZE, FRAME_SIZE):
            raise InputError(f"frame must be {FRAME_SIZE}x{FRAME_SIZE}, got {self.pixels.shape}")
        if self.source_camera not in (1, 2):
            raise InputError(f"source_camera must be 1 or 2, got {self.source_camera}")


def magnitude(ax, ay, az):
    """Euclidean norm of the three accelerometer axes (in g).

    Works element-wise on arrays; raises :class:`InputError` on NaN/Inf.
    """
    a = np.asarray(ax, dtype=np.float64)
    b = np.asarray(ay, dtype=np.float64)
    c = np.asarray(az, dtype=np.float64)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
        raise InputError("accelerometer components must be finite")
    # hypot avoids the under/overflow of squaring tiny or huge components
    out = np.hypot(np.hypot(a, b), c)
    return float(out) if out.ndim == 0 else out


def binarize_label(activity_id: int, fall_set=DEFAULT_FALL_SET, known_ids=DEFAULT_ACTIVITY_IDS) -> int:
    """1 if ``activity_id`` is a fall activity, else 0.

    ``known_ids`` is the full set of valid activity codes (``None`` to skip
    the check); ids outside it still map to 0 but are logged.
    """
    if not fall_set:
        raise InputError("fall_set must not be empty")
    if activity_id in fall_set:
        return 1
    if known_ids is not None and activity_id not in known_ids:
        log.warning("unknown activity id %s mapped to 'no fall'", activity_id)
    return 0


def to_grayscale(rgb) -> np.ndarray:
    """``H x W x 3`` uint8 RGB -> ``H x W`` float luma in [0, 1]."""
    arr = np.asarray(rgb)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DecodeError(f"expected an H x W x 3 RGB buffer, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if arr.dtype.kind not in "iuf" or arr.min() < 0 or arr.max() > 255:
            raise DecodeError("RGB values must lie in [0, 255]")
    arr = arr.astype(np.float64)
    gray = (LUMA[0] * arr[..., 0] + LUMA[1] * arr[..., 1] + LUMA[2] * arr[..., 2]) / 255.0
    return np.clip(gray, 0.0, 1.0)


def _interp_axis(n_in: int, n_out: int):
    # pixel-center alignment: output center i maps to input coordinate (i + 0.5) * n_in / n_out - 0.5
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize_bilinear(gray, out_h: int = FRAME_SIZE, out_w: int = FRAME_SIZE) -> np.ndarray:
    """Bilinear resize with pixel-center alignment (``align_corners=False``).

    Sample positions outside the outer pixel centers are clamped to the edge.
    The result is a convex combination of input pixels, so it stays within
    the input's [min, max].
    """
    img = np.asarray(gray, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise InputError(f"expected a non-empty 2D image, got shape {img.shape}")
    h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    r0, r1, ty = _interp_axis(h, out_h)
    c0, c1, tx = _interp_axis(w, out_w)
    top = img[r0][:, c0] + (img[r0][:, c1] - img[r0][:, c0]) * tx[None, :]
    bottom = img[r1][:, c0] + (img[r1][:, c1] - img[r1][:, c0]) * tx[None, :]
    out = top + (bottom - top) * ty[:, None]
    return np.clip(out, img.min(), img.max())


def preprocess_frame(rgb, camera: int, timestamp: int) -> FrameGray:
    return FrameGray(resize_bilinear(to_grayscale(rgb)), camera, int(timestamp))


@dataclass
class Standardizer:
    """Per-channel z-score; ``std`` entries below 1e-12 are replaced by 1."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x) -> "Standardizer":
        x = np.asarray(x, dtype=np.float64)
        std = x.std(axis=0)
        std = np.where(std < 1e-12, 1.0, std)
        return cls(x.mean(axis=0), std)

    @classmethod
    def identity(cls, width: int) -> "Standardizer":
        return cls(np.zeros(width), np.ones(width))

    def transform(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return (x - self.mean) / self.std

