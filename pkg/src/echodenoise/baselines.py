"""Classical outlier filters: DROR, LIOR and the multi-echo MEDROR.

All searches are bounded by the same grid window as the neighbor encoder,
with the strongest-echo cloud as the reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cloud import MultiEchoOrderedCloud
from .errors import ConfigError
from .inference import InferenceConfig, classify_echoes
from .neighbors import window_candidates


@dataclass(frozen=True)
class DrorConfig:
    alpha: float | None = None  # horizontal angular resolution; None -> 2*pi / W
    beta: float = 3.0
    min_neighbors: int = 3
    window: tuple[int, int] = (9, 9)
    sr_min: float = 0.04

    def __post_init__(self):
        object.__setattr__(self, "window", tuple(int(v) for v in self.window))
        if (self.alpha is not None and not self.alpha > 0) or not self.beta > 0 or not self.sr_min > 0:
            raise ConfigError("alpha, beta and sr_min must be positive")
        if self.min_neighbors < 1:
            raise ConfigError("min_neighbors must be >= 1")
        if any(v < 1 or v % 2 == 0 for v in self.window):
            raise ConfigError("window extents must be odd and >= 1")

    def radius(self, r, width: int):
        alpha = 2 * math.pi / width if self.alpha is None else self.alpha
        return np.maximum(self.sr_min, self.beta * alpha * r)


@dataclass(frozen=True)
class LiorConfig:
    # defaults tuned once on a synthetic validation split
    intensity_threshold: float = 8.0  # range-normalized intensity, raw * m^2
    ror_radius: float = 0.6
    ror_min_neighbors: int = 2
    window: tuple[int, int] = (9, 9)

    def __post_init__(self):
        object.__setattr__(self, "window", tuple(int(v) for v in self.window))
        if not (self.intensity_threshold > 0 and self.ror_radius > 0) or self.ror_min_neighbors < 1:
            raise ConfigError("LIOR parameters must be positive")
        if any(v < 1 or v % 2 == 0 for v in self.window):
            raise ConfigError("window extents must be odd and >= 1")


def neighbor_counts(cloud: MultiEchoOrderedCloud, radius: np.ndarray, window) -> np.ndarray:
    """Per echo: number of other valid strongest-echo points in the window closer than ``radius``."""
    H, W, NE = cloud.shape
    hh, ww, ok = window_candidates(cloud, window)
    ref = cloud.xyz[:, :, 0].astype(np.float64)[hh, ww]
    q = cloud.xyz.astype(np.float64)
    diff = q[:, :, :, None, :] - ref[:, :, None, :, :]
    dist = np.sqrt(np.einsum("...i,...i->...", diff, diff))
    own = (hh == np.arange(H)[:, None, None]) & (ww == np.arange(W)[None, :, None])
    self_ref = own[:, :, None, :] & (np.arange(NE) == 0)[None, None, :, None]
    hit = ok[:, :, None, :] & ~self_ref & (dist < np.asarray(radius)[..., None])
    return np.where(cloud.valid, hit.sum(axis=-1), 0)


def dror(cloud: MultiEchoOrderedCloud, cfg: DrorConfig) -> np.ndarray:
    """H x W noise flags for the strongest echoes (False on empty cells)."""
    s = cloud.strongest()
    counts = neighbor_counts(s, cfg.radius(s.ranges(), s.width), cfg.window)[:, :, 0]
    return s.valid[:, :, 0] & (counts < cfg.min_neighbors)


def lior(cloud: MultiEchoOrderedCloud, cfg: LiorConfig) -> np.ndarray:
    """H x W noise flags: dim after range normalization and a fixed-radius outlier."""
    s = cloud.strongest()
    r = s.ranges()[:, :, 0]
    dim = s.intensity[:, :, 0].astype(np.float64) * r * r < cfg.intensity_threshold
    counts = neighbor_counts(s, np.full(s.shape, cfg.ror_radius), cfg.window)[:, :, 0]
    return s.valid[:, :, 0] & dim & (counts < cfg.ror_min_neighbors)


def medror_inliers(cloud: MultiEchoOrderedCloud, cfg: DrorConfig) -> np.ndarray:
    """DROR inlier test applied to every echo against the strongest-echo reference."""
    counts = neighbor_counts(cloud, cfg.radius(cloud.ranges(), cloud.width), cfg.window)
    return cloud.valid & (counts >= cfg.min_neighbors)


def medror(cloud: MultiEchoOrderedCloud, cfg: DrorConfig, min_separation: float = 0.05) -> np.ndarray:
    """Echo classes from binary inlier scores (inlier -1, outlier +1, threshold 0)."""
    scores = np.where(medror_inliers(cloud, cfg), -1.0, 1.0)
    return classify_echoes(scores, cloud, InferenceConfig(0.0, min_separation))
