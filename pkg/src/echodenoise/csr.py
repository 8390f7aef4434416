"""Characteristics similarity regularization.

Points that look alike in range-normalized intensity and sparsity should get
similar correlation scores. For every valid echo the ``k`` nearest other
echoes in the standardized (intensity, sparsity) plane are found and the
echo's score is compared to their score distribution with an absolute
Z-score.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import MultiEchoOrderedCloud
from .errors import ConfigError, DegenerateRange


@dataclass(frozen=True)
class CsrConfig:
    k: int = 9
    eps: float = 1e-6
    clamp: float = 1e3

    def __post_init__(self):
        if self.k < 2:
            raise ConfigError("k_CSR must be >= 2")
        if not self.eps > 0:
            raise ConfigError("eps must be positive")
        if not self.clamp > 0:
            raise ConfigError("clamp must be positive")


@dataclass(frozen=True)
class CharacteristicsMap:
    intensity: np.ndarray  # (H, W, Ne) intensity_raw * r^2
    sparsity: np.ndarray  # (H, W, Ne) nn_dist / r
    valid: np.ndarray

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat indices of valid echoes and their (N, 2) characteristics."""
        idx = np.flatnonzero(self.valid)
        return idx, np.stack([self.intensity.ravel()[idx], self.sparsity.ravel()[idx]], axis=1)


def characteristics_map(cloud: MultiEchoOrderedCloud, nn_dist: np.ndarray) -> CharacteristicsMap:
    r = cloud.ranges()
    valid = cloud.valid
    if np.any(r[valid] <= 0):
        raise DegenerateRange("valid echo with zero range")
    safe = np.where(valid, r, 1.0)
    inten = np.where(valid, cloud.intensity.astype(np.float64) * r * r, 0.0)
    spars = np.where(valid, np.asarray(nn_dist, dtype=np.float64) / safe, 0.0)
    return CharacteristicsMap(inten, spars, valid.copy())


def standardize(x: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance columns (population std; constant columns only centred)."""
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    return (x - mu) / np.where(sd > 0, sd, 1.0)


def knn_indices(x: np.ndarray, k: int, chunk: int = 512) -> np.ndarray:
    """Exact k nearest other rows of ``x`` by Euclidean distance; ties go to the lower index."""
    n = len(x)
    out = np.empty((n, k), np.int64)
    for s in range(0, n, chunk):
        blk = x[s : s + chunk]
        d2 = ((blk[:, None, :] - x[None, :, :]) ** 2).sum(axis=-1)
        rows = np.arange(len(blk))
        d2[rows, s + rows] = np.inf
        part = np.argpartition(d2, k - 1, axis=1)[:, :k]
        kth = d2[rows[:, None], part].max(axis=1)
        crowded = (d2 <= kth[:, None]).sum(axis=1) > k
        order = np.lexsort((part, d2[rows[:, None], part]), axis=1)
        res = np.take_along_axis(part, order, axis=1)
        if crowded.any():
            res[crowded] = np.argsort(d2[crowded], axis=1, kind="stable")[:, :k]
        out[s : s + chunk] = res
    return out


@dataclass(frozen=True)
class CsrNeighbors:
    """Frozen characteristic-space neighbor selection for one scan."""

    flat_index: np.ndarray  # (N,) flat (h, w, e) indices of valid echoes
    neighbors: np.ndarray  # (N, k) positions into flat_index; empty when too few echoes
    shape: tuple


def csr_neighbors(theta: CharacteristicsMap, cfg: CsrConfig) -> CsrNeighbors:
    idx, x = theta.points()
    if len(idx) < cfg.k + 1:
        return CsrNeighbors(idx, np.zeros((len(idx), 0), np.int64), theta.valid.shape)
    return CsrNeighbors(idx, knn_indices(standardize(x), cfg.k), theta.valid.shape)


def zscore_penalty(s: np.ndarray, nbr: np.ndarray, cfg: CsrConfig):
    """Clamped |Z-score| of each s[i] against s[nbr[i]]. Returns (xi, cache)."""
    if nbr.shape[1] == 0:
        return np.zeros_like(s), None
    phi = s[nbr]
    m = phi.mean(axis=1)
    sd = np.sqrt(((phi - m[:, None]) ** 2).mean(axis=1))
    d = s - m
    z = np.abs(d) / (sd + cfg.eps)
    xi = np.minimum(z, cfg.clamp)
    return xi, (phi, m, sd, d, z)


def zscore_penalty_backward(dxi: np.ndarray, nbr: np.ndarray, cache, cfg: CsrConfig) -> np.ndarray:
    """Gradient of sum(dxi * xi) w.r.t. the scores, neighbor choice held fixed."""
    ds = np.zeros(len(dxi))
    if cache is None:
        return ds
    phi, m, sd, d, z = cache
    k = nbr.shape[1]
    g = np.where(z > cfg.clamp, 0.0, dxi)
    D = sd + cfg.eps
    sgn = np.sign(d)
    ds += g * sgn / D
    dsd = np.where((sd > 0)[:, None], (phi - m[:, None]) / (k * np.where(sd > 0, sd, 1.0))[:, None], 0.0)
    dphi = -(g * sgn / (k * D))[:, None] - (g * np.abs(d) / D**2)[:, None] * dsd
    np.add.at(ds, nbr, dphi)
    return ds


def csr_penalty(theta: CharacteristicsMap, scores: np.ndarray, cfg: CsrConfig) -> np.ndarray:
    """Per-echo penalty grid (0 on invalid echoes)."""
    sel = csr_neighbors(theta, cfg)
    xi, _ = zscore_penalty(np.asarray(scores, dtype=np.float64).ravel()[sel.flat_index], sel.neighbors, cfg)
    out = np.zeros(theta.valid.size)
    out[sel.flat_index] = xi
    return out.reshape(theta.valid.shape)
