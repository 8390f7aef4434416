"""Spherical projection of unordered multi-echo returns onto an ordered grid."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .cloud import MultiEchoOrderedCloud, empty_cloud
from .errors import ConfigError, InvariantError

# echoes whose coordinates agree this closely are treated as the same return
DUPLICATE_TOL = 1e-6


class EchoKind(enum.IntEnum):
    STRONGEST = 0
    SECOND_STRONGEST = 1
    LAST = 2


@dataclass(frozen=True)
class ProjectionConfig:
    height: int
    width: int
    fov_up: float  # radians
    fov_down: float  # radians

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ConfigError("projection grid must be at least 1 x 1")
        if not self.fov_up > self.fov_down:
            raise ConfigError(f"fov_up ({self.fov_up}) must exceed fov_down ({self.fov_down})")

    def cell_angles(self) -> tuple[np.ndarray, np.ndarray]:
        """Azimuth and elevation at the centre of every cell, each H x W."""
        w = np.arange(self.width) + 0.5
        h = np.arange(self.height) + 0.5
        az = np.pi * (1.0 - 2.0 * w / self.width)
        el = self.fov_down + (1.0 - h / self.height) * (self.fov_up - self.fov_down)
        return np.broadcast_to(az, (self.height, self.width)).copy(), np.broadcast_to(
            el[:, None], (self.height, self.width)
        ).copy()

    def cell_of(self, xyz: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Row/column indices of points (N x 3, float64)."""
        r = np.linalg.norm(xyz, axis=-1)
        theta = np.arctan2(xyz[..., 1], xyz[..., 0])
        phi = np.arcsin(np.clip(xyz[..., 2] / r, -1.0, 1.0))
        fov = self.fov_up - self.fov_down
        h = np.floor((1.0 - (phi - self.fov_down) / fov) * self.height)
        h = np.clip(h, 0, self.height - 1).astype(np.int64)
        w = np.floor(0.5 * (1.0 - theta / np.pi) * self.width).astype(np.int64) % self.width
        return h, w


@dataclass
class RawEchoList:
    """Unordered returns; each row is one echo of pulse ``pulse_id``."""

    xyz: np.ndarray  # (N, 3)
    intensity: np.ndarray  # (N,)
    pulse_id: np.ndarray  # (N,) int
    echo_kind: np.ndarray  # (N,) EchoKind values

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        self.intensity = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
        self.pulse_id = np.asarray(self.pulse_id, dtype=np.int64).reshape(-1)
        self.echo_kind = np.asarray(self.echo_kind, dtype=np.int64).reshape(-1)
        n = len(self.xyz)
        if not (len(self.intensity) == len(self.pulse_id) == len(self.echo_kind) == n):
            raise ValueError("RawEchoList columns must have equal length")

    def __len__(self):
        return len(self.xyz)


def _same_point(a, b) -> bool:
    return bool(np.all(np.abs(np.asarray(a[:3], float) - np.asarray(b[:3], float)) <= DUPLICATE_TOL))


def assemble_2p5(strongest, second=None, last=None) -> list:
    """Build a two-slot echo group from strongest, second-strongest and last returns.

    Records are ``(x, y, z, intensity)`` tuples or None. The last echo fills
    slot 1 unless it coincides with the strongest, in which case the second
    strongest is used; slot 1 is None when no distinct alternative exists.
    """
    if strongest is None:
        raise ValueError("strongest echo is required")
    for alt in (last, second):
        if alt is not None and not _same_point(alt, strongest):
            return [strongest, alt]
    return [strongest, None]


def _group_slots(echoes: list, num_echoes: int) -> list:
    """echoes: list of (kind, record). Returns up to num_echoes records."""
    by_kind = {}
    for kind, rec in echoes:
        if kind in by_kind:
            raise InvariantError(f"pulse has two echoes of kind {EchoKind(kind).name}")
        by_kind[kind] = rec
    if EchoKind.STRONGEST not in by_kind:
        raise InvariantError("pulse has no strongest echo")
    strongest = by_kind[EchoKind.STRONGEST]
    if num_echoes == 1:
        return [strongest]
    if num_echoes == 2:
        return assemble_2p5(strongest, by_kind.get(EchoKind.SECOND_STRONGEST), by_kind.get(EchoKind.LAST))
    # more slots: remaining echoes by decreasing intensity, lower kind first on ties
    rest = sorted(((k, r) for k, r in by_kind.items() if k != EchoKind.STRONGEST), key=lambda kr: (-kr[1][3], kr[0]))
    slots = [strongest]
    for _, rec in rest:
        if not any(_same_point(rec, s) for s in slots):
            slots.append(rec)
    return slots[:num_echoes] + [None] * (num_echoes - len(slots))


def project(points: RawEchoList, cfg: ProjectionConfig, num_echoes: int = 2) -> MultiEchoOrderedCloud:
    """Spherical projection to an ``H x W x num_echoes`` ordered cloud.

    Each pulse is placed in the cell of its strongest echo. When distinct
    pulses fall into one cell the pulse with the nearer strongest echo wins
    (lower pulse id on exact ties).
    """
    if num_echoes < 1:
        raise ConfigError("num_echoes must be >= 1")
    az, el = cfg.cell_angles()
    if len(points) == 0:
        return empty_cloud(az, el, num_echoes)
    xyz32 = points.xyz.astype(np.float32)
    xyz = xyz32.astype(np.float64)
    if not np.isfinite(xyz).all():
        raise ValueError("point coordinates must be finite")
    if np.any(np.linalg.norm(xyz, axis=1) <= 0):
        raise ValueError("points must have positive range")

    order = np.lexsort((points.echo_kind, points.pulse_id))
    groups: dict[int, list] = {}
    for i in order:
        rec = (xyz32[i, 0], xyz32[i, 1], xyz32[i, 2], np.float32(points.intensity[i]))
        groups.setdefault(int(points.pulse_id[i]), []).append((int(points.echo_kind[i]), rec))

    H, W = cfg.height, cfg.width
    out_xyz = np.zeros((H, W, num_echoes, 3), np.float32)
    out_int = np.zeros((H, W, num_echoes), np.float32)
    out_valid = np.zeros((H, W, num_echoes), bool)
    best = np.full((H, W), np.inf)

    for pid in sorted(groups):
        slots = _group_slots(groups[pid], num_echoes)
        s = np.array(slots[0][:3], dtype=np.float64)
        h, w = cfg.cell_of(s[None])
        h, w = int(h[0]), int(w[0])
        r = math.sqrt(float(s @ s))
        if r >= best[h, w]:
            continue
        best[h, w] = r
        out_xyz[h, w] = 0
        out_int[h, w] = 0
        out_valid[h, w] = False
        for e, rec in enumerate(slots):
            if rec is None:
                continue
            out_xyz[h, w, e] = rec[:3]
            out_int[h, w, e] = rec[3]
            out_valid[h, w, e] = True
    return MultiEchoOrderedCloud(out_xyz, out_int, out_valid, az, el)


def cloud_to_points(cloud: MultiEchoOrderedCloud) -> RawEchoList:
    """Flatten an ordered cloud back into returns (slot 0 strongest, last slot last)."""
    H, W, NE = cloud.shape
    hh, ww, ee = np.nonzero(cloud.valid)
    kinds = np.where(ee == 0, EchoKind.STRONGEST, np.where(ee == NE - 1, EchoKind.LAST, EchoKind.SECOND_STRONGEST))
    return RawEchoList(cloud.xyz[hh, ww, ee], cloud.intensity[hh, ww, ee], hh * W + ww, kinds)
