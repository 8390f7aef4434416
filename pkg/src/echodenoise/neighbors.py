"""Multi-echo neighbor encoder: window-bounded KNN against the strongest-echo cloud.

Every echo of every cell is a query. Candidates are the valid strongest-echo
points inside a grid window centred on the query cell (azimuth wraps, rows
outside the image are dropped). Among candidates closer than the cutoff
radius the ``k`` nearest are kept, sorted by distance and then by
``(row, col)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import MultiEchoOrderedCloud
from .errors import ConfigError

KNN = "knn"
GRID = "grid_neighbors"


@dataclass(frozen=True)
class EncoderConfig:
    k: int = 5
    cutoff: float = 2.0  # meters
    window: tuple[int, int] = (9, 9)  # rows x cols, both odd
    mode: str = KNN

    def __post_init__(self):
        object.__setattr__(self, "window", tuple(int(v) for v in self.window))
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if not self.cutoff > 0:
            raise ConfigError("cutoff radius must be positive")
        if len(self.window) != 2 or any(v < 1 or v % 2 == 0 for v in self.window):
            raise ConfigError(f"window extents must be odd and >= 1, got {self.window}")
        if self.mode not in (KNN, GRID):
            raise ConfigError(f"unknown neighbor mode {self.mode!r}")

    @property
    def slots(self) -> int:
        """Neighbor slots per query (window area in grid mode)."""
        return self.k if self.mode == KNN else self.window[0] * self.window[1]


@dataclass(frozen=True)
class NeighborSet:
    """Per-query neighbor slots, arrays shaped (H, W, Ne, slots)."""

    rows: np.ndarray
    cols: np.ndarray
    dist: np.ndarray  # meters; 0 for absent slots
    present: np.ndarray
    cfg: EncoderConfig

    @property
    def shape(self):
        return self.present.shape


@dataclass(frozen=True)
class FeatureTensor:
    """Encoder input: per slot (neighbor range, d_azimuth, d_elevation)."""

    values: np.ndarray  # (H, W, Ne, slots, 3)
    present: np.ndarray  # (H, W, Ne, slots)
    ref: np.ndarray  # (H, W, Ne, slots) flat cell index of the referenced strongest echo, -1 if absent

    def flat(self) -> np.ndarray:
        """H x W x (Ne*slots*3): echo-major, then neighbor rank, then triple."""
        h, w = self.values.shape[:2]
        return self.values.reshape(h, w, -1)


def window_offsets(window: tuple[int, int], width: int) -> list[tuple[int, int]]:
    """Raster-ordered (drow, dcol) offsets, skipping columns that alias after wrap."""
    rh, rw = window[0] // 2, window[1] // 2
    dws, seen = [], set()
    for dw in range(-rw, rw + 1):
        if dw % width not in seen:
            seen.add(dw % width)
            dws.append(dw)
    return [(dh, dw) for dh in range(-rh, rh + 1) for dw in dws]


def window_candidates(cloud: MultiEchoOrderedCloud, window):
    H, W, _ = cloud.shape
    offs = window_offsets(window, W)
    hh = np.arange(H)[:, None, None] + np.array([o[0] for o in offs])[None, None, :]
    ww = (np.arange(W)[None, :, None] + np.array([o[1] for o in offs])[None, None, :]) % W
    hh, ww = np.broadcast_arrays(hh, ww)
    inside = (hh >= 0) & (hh < H)
    hh = np.clip(hh, 0, H - 1)
    ok = inside & cloud.valid[hh, ww, 0]
    return hh, ww, ok


def gather_neighbors(cloud: MultiEchoOrderedCloud, cfg: EncoderConfig) -> NeighborSet:
    H, W, NE = cloud.shape
    hh, ww, ok = window_candidates(cloud, cfg.window)  # (H, W, C)
    ref = cloud.xyz[:, :, 0].astype(np.float64)[hh, ww]  # (H, W, C, 3)
    q = cloud.xyz.astype(np.float64)  # (H, W, NE, 3)
    diff = q[:, :, :, None, :] - ref[:, :, None, :, :]
    dist = np.sqrt(np.einsum("...i,...i->...", diff, diff))  # (H, W, NE, C)
    usable = ok[:, :, None, :] & cloud.valid[:, :, :, None]
    C = hh.shape[-1]
    rows = np.broadcast_to(hh[:, :, None, :], dist.shape)
    cols = np.broadcast_to(ww[:, :, None, :], dist.shape)

    if cfg.mode == KNN:
        key = np.where(usable & (dist < cfg.cutoff), dist, np.inf)
        order = np.lexsort((cols, rows, key), axis=-1)[..., : cfg.k]
        take = lambda a: np.take_along_axis(a, order, axis=-1)
        dist_k, rows_k, cols_k, key_k = take(dist), take(rows), take(cols), take(key)
        present = np.isfinite(key_k)
        if cfg.k > C:
            pad = ((0, 0),) * 3 + ((0, cfg.k - C),)
            dist_k, rows_k, cols_k = (np.pad(a, pad) for a in (dist_k, rows_k, cols_k))
            present = np.pad(present, pad)
    else:
        # grid ablation: every in-image window cell occupies its raster slot
        slots = cfg.slots
        present = usable
        dist_k, rows_k, cols_k = dist, rows, cols
        if slots > C:
            pad = ((0, 0),) * 3 + ((0, slots - C),)
            dist_k, rows_k, cols_k = (np.pad(a, pad) for a in (dist_k, rows_k, cols_k))
            present = np.pad(present, pad)

    dist_k = np.where(present, dist_k, 0.0)
    rows_k = np.where(present, rows_k, 0)
    cols_k = np.where(present, cols_k, 0)
    return NeighborSet(rows_k.astype(np.int64), cols_k.astype(np.int64), dist_k, present.copy(), cfg)


def self_slots(neighbors: NeighborSet) -> np.ndarray:
    """Slots that reference the query's own record (strongest echo of its own cell)."""
    H, W, NE, _ = neighbors.shape
    h = np.arange(H)[:, None, None, None]
    w = np.arange(W)[None, :, None, None]
    e0 = (np.arange(NE) == 0)[None, None, :, None]
    return neighbors.present & e0 & (neighbors.rows == h) & (neighbors.cols == w)


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    a = np.asarray(a, dtype=np.float64)
    return a - 2 * np.pi * np.ceil((a - np.pi) / (2 * np.pi))


def encode_features(cloud: MultiEchoOrderedCloud, neighbors: NeighborSet) -> FeatureTensor:
    """Per present slot: (neighbor range, query azimuth - neighbor azimuth, elevation difference)."""
    H, W, NE, S = neighbors.shape
    if cloud.shape != (H, W, NE):
        raise ValueError("neighbor set does not belong to this cloud")
    rng0 = cloud.ranges()[:, :, 0]
    az = cloud.azimuth.astype(np.float64)
    el = cloud.elevation.astype(np.float64)
    r, c = neighbors.rows, neighbors.cols
    vals = np.empty((H, W, NE, S, 3))
    vals[..., 0] = rng0[r, c]
    vals[..., 1] = wrap_angle(az[:, :, None, None] - az[r, c])
    vals[..., 2] = el[:, :, None, None] - el[r, c]
    vals[~neighbors.present] = 0.0
    ref = np.where(neighbors.present, r * W + c, -1)
    return FeatureTensor(vals, neighbors.present.copy(), ref)


def nearest_distance(neighbors: NeighborSet) -> np.ndarray:
    """Distance to the nearest non-self neighbor per query; the cutoff when none."""
    cand = neighbors.present & ~self_slots(neighbors) & (neighbors.dist < neighbors.cfg.cutoff)
    d = np.where(cand, neighbors.dist, np.inf).min(axis=-1, initial=np.inf)
    return np.where(np.isfinite(d), d, neighbors.cfg.cutoff)
