"""Labelled synthetic fused corpora for desk-scale experiments.

Falls carry an acceleration spike of about ``spike_g`` and a wide, low
silhouette in both camera frames; daily activities sit near 1 g with a tall,
narrow silhouette. Gaussian noise of standard deviation ``noise`` is added to
every accelerometer axis and every pixel. Labels are exact by construction.

The sensor vector is ``(ax, ay, az, sv_total)`` for the wrist followed by the
same four channels for each of ``extra_sites`` additional body sites, so the
multi-sensor ablation can use columns ``[:4 + 4 * extra_sites]`` while mono
variants use ``[:4]``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError
from ..preprocess import DEFAULT_FALL_SET, FRAME_SIZE, binarize_label, magnitude
from .examples import FusedDataset, FusedExample

FALL_IDS = (1, 2, 3, 4, 5)
ADL_IDS = (6, 7, 8, 9, 10, 11)


@dataclass(frozen=True)
class SynthConfig:
    n: int = 2000
    prevalence: float = 0.3
    noise: float = 0.1
    spike_g: float = 3.0
    # silhouette semi-axes (x, y) in pixels
    fall_axes: tuple = (10.0, 3.5)
    adl_axes: tuple = (3.5, 10.0)
    jitter_px: float = 3.0
    size_jitter: float = 0.15
    background: float = 0.2
    foreground: float = 0.8
    extra_sites: int = 2
    site_gain: float = 0.8
    subjects: tuple = (1, 2, 3)
    frame_period_ms: int = 55
    start_ms: int = 1_530_000_000_000
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if not 0 < self.prevalence < 1:
            raise ConfigError(f"prevalence must be in (0, 1), got {self.prevalence}")
        if self.noise < 0:
            raise ConfigError(f"noise must be >= 0, got {self.noise}")
        if self.spike_g <= 1.3 / 0.8:
            raise ConfigError(f"spike_g must exceed {1.3 / 0.8:.3f} g so falls stand out, got {self.spike_g}")
        if self.extra_sites < 0:
            raise ConfigError(f"extra_sites must be >= 0, got {self.extra_sites}")
        if self.frame_period_ms < 1:
            raise ConfigError("frame_period_ms must be >= 1")

    @property
    def sensor_width(self) -> int:
        return 4 * (1 + self.extra_sites)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def _accelerometer(rng, falls, spike_g, gain, noise):
    n = falls.shape[0]
    direction = rng.standard_normal((n, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    # daily activity: gravity plus up to 0.3 g of motion; fall: 0.8-1.0 of the spike
    u = rng.random(n)
    mag = np.where(falls, gain * spike_g * (0.8 + 0.2 * u), 1.0 + 0.3 * u)
    axes = direction * mag[:, None] + noise * rng.standard_normal((n, 3))
    sv = magnitude(axes[:, 0], axes[:, 1], axes[:, 2])
    return np.column_stack([axes, sv])


def _silhouettes(rng, falls, cfg: SynthConfig, camera: int):
    n = falls.shape[0]
    yy, xx = np.mgrid[0:FRAME_SIZE, 0:FRAME_SIZE].astype(np.float64)
    fall_ax = np.array(cfg.fall_axes, dtype=np.float64)
    adl_ax = np.array(cfg.adl_axes, dtype=np.float64)
    # camera 2 looks from the side: silhouettes sit slightly off-center
    base_x = 16.0 if camera == 1 else 13.0
    fall_y, adl_y = (24.0, 15.0) if camera == 1 else (23.0, 14.0)
    axes = np.where(falls[:, None], fall_ax, adl_ax)
    axes = axes * (1.0 + cfg.size_jitter * (2 * rng.random((n, 2)) - 1))
    cx = base_x + cfg.jitter_px * (2 * rng.random(n) - 1)
    cy = np.where(falls, fall_y, adl_y) + cfg.jitter_px * (2 * rng.random(n) - 1)
    r2 = ((xx[None] - cx[:, None, None]) / axes[:, 0, None, None]) ** 2 \
        + ((yy[None] - cy[:, None, None]) / axes[:, 1, None, None]) ** 2
    body = np.clip(4.0 * (1.0 - r2), 0.0, 1.0)
    frames = cfg.background + (cfg.foreground - cfg.background) * body
    frames = frames + cfg.noise * rng.standard_normal(frames.shape)
    return np.clip(frames, 0.0, 1.0)


def synth_dataset(cfg: SynthConfig) -> FusedDataset:
    """Columnar form of :func:`synth_generate` (same values, same seed use)."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n
    falls = rng.random(n) < cfg.prevalence
    activity = np.where(falls, rng.choice(FALL_IDS, n), rng.choice(ADL_IDS, n))
    subject = rng.choice(np.asarray(cfg.subjects), n)
    trial = rng.integers(1, 4, n)
    sites = [_accelerometer(rng, falls, cfg.spike_g, 1.0, cfg.noise)]
    for _ in range(cfg.extra_sites):
        sites.append(_accelerometer(rng, falls, cfg.spike_g, cfg.site_gain, cfg.noise))
    sensor = np.hstack(sites)
    cam1 = _silhouettes(rng, falls, cfg, 1)
    cam2 = _silhouettes(rng, falls, cfg, 2)
    label = np.array([binarize_label(int(a), DEFAULT_FALL_SET) for a in activity], dtype=np.int64)
    timestamp = cfg.start_ms + cfg.frame_period_ms * np.arange(n, dtype=np.int64)
    return FusedDataset(sensor, cam1, cam2, label, timestamp, subject, trial, activity)


def synth_generate(cfg: SynthConfig) -> list[FusedExample]:
    return synth_dataset(cfg).examples()
