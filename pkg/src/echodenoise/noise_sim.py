"""Synthetic clear-weather scans and snowfall injection with exact labels.

Scenes are built from analytic primitives (ground plane, vertical walls,
yawed boxes, vertical cylinders) and ray cast through the cell centres of a
projection grid. Snow is added per beam: a particle return is placed in
front of the surface with a low raw intensity, which makes particles both
dimmer (after range normalization) and sparser than scene points.

Scene files use an INI grammar, one section per primitive::

    [sensor]
    height = 16
    width = 128
    fov_up = 0.1
    fov_down = -0.3
    max_range = 50
    range_noise = 0.0

    [ground]
    height = -1.7
    reflectivity = 0.25

    [wall.facade]            ; any suffix after the dot
    start = 12, -20
    end = 12, 20
    bottom = -1.7
    top = 6
    reflectivity = 0.6

    [box.car]
    center = 8, 3, -0.95
    size = 4, 1.8, 1.5
    yaw = 0.3
    reflectivity = 0.5

    [cylinder.pole]
    center = 5, -4
    radius = 0.2
    bottom = -1.7
    top = 5
    reflectivity = 0.4
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field

import numpy as np

from .cloud import EMPTY, NOISE_PARTICLE, VALID_OBJECT, MultiEchoOrderedCloud
from .errors import ConfigError, ModeError
from .projection import ProjectionConfig

SEVERITY_PROBABILITY = {"light": 0.02, "medium": 0.06, "heavy": 0.12}

DEFAULT_SENSOR = ProjectionConfig(height=16, width=128, fov_up=0.1, fov_down=-0.3)


@dataclass(frozen=True)
class Wall:
    start: tuple[float, float]
    end: tuple[float, float]
    bottom: float
    top: float
    reflectivity: float


@dataclass(frozen=True)
class Box:
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float
    reflectivity: float


@dataclass(frozen=True)
class Cylinder:
    center: tuple[float, float]
    radius: float
    bottom: float
    top: float
    reflectivity: float


@dataclass
class SceneSpec:
    sensor: ProjectionConfig = DEFAULT_SENSOR
    ground_height: float | None = -1.7  # None: no ground plane
    ground_reflectivity: float = 0.25
    primitives: list = field(default_factory=list)
    max_range: float = 50.0
    range_noise: float = 0.0  # std of additive range noise, meters

    def validate(self):
        if not self.max_range > 0:
            raise ConfigError("max_range must be positive")
        if self.range_noise < 0:
            raise ConfigError("range_noise must be >= 0")
        refl = [p.reflectivity for p in self.primitives]
        if self.ground_height is not None:
            refl.append(self.ground_reflectivity)
            if self.ground_height >= 0:
                raise ConfigError("ground plane must lie below the sensor")
        if any(not 0 < r <= 1 for r in refl):
            raise ConfigError("reflectivities must lie in (0, 1]")
        for p in self.primitives:
            if isinstance(p, Wall):
                anchor = np.array(p.start)
                if p.top <= p.bottom or np.allclose(p.start, p.end):
                    raise ConfigError("degenerate wall")
            elif isinstance(p, Box):
                anchor = np.array(p.center[:2])
                if min(p.size) <= 0:
                    raise ConfigError("box sizes must be positive")
            elif isinstance(p, Cylinder):
                anchor = np.array(p.center)
                if p.radius <= 0 or p.top <= p.bottom:
                    raise ConfigError("degenerate cylinder")
            else:
                raise ConfigError(f"unknown primitive {p!r}")
            if np.linalg.norm(anchor) > self.max_range:
                raise ConfigError("primitive lies beyond max_range")


# ------------------------------------------------------------- ray casting


def beam_directions(cfg: ProjectionConfig) -> np.ndarray:
    az, el = cfg.cell_angles()
    return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)


def _hit_ground(d, height):
    with np.errstate(divide="ignore", invalid="ignore"):
        t = height / d[..., 2]
    return np.where((d[..., 2] < 0) & (t > 0), t, np.inf)


def _hit_wall(d, w: Wall):
    p0, p1 = np.array(w.start, float), np.array(w.end, float)
    seg = p1 - p0
    n = np.array([-seg[1], seg[0]])
    denom = d[..., 0] * n[0] + d[..., 1] * n[1]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (p0 @ n) / denom
        hx, hy = t * d[..., 0], t * d[..., 1]
        u = ((hx - p0[0]) * seg[0] + (hy - p0[1]) * seg[1]) / (seg @ seg)
    hz = t * d[..., 2]
    ok = (t > 0) & (u >= 0) & (u <= 1) & (hz >= w.bottom) & (hz <= w.top)
    return np.where(ok, t, np.inf)


def _hit_box(d, b: Box):
    c = np.array(b.center, float)
    cy, sy = math.cos(-b.yaw), math.sin(-b.yaw)
    rot = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    o = rot @ (-c)
    dl = d @ rot.T
    half = np.array(b.size, float) / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - o) / dl
        t2 = (half - o) / dl
    tmin = np.nanmax(np.minimum(t1, t2), axis=-1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=-1)
    ok = (tmax >= tmin) & (tmax > 0)
    t = np.where(tmin > 0, tmin, tmax)
    return np.where(ok, t, np.inf)


def _hit_cylinder(d, cyl: Cylinder):
    cx, cy = cyl.center
    a = d[..., 0] ** 2 + d[..., 1] ** 2
    b = -2 * (d[..., 0] * cx + d[..., 1] * cy)
    c = cx * cx + cy * cy - cyl.radius**2
    disc = b * b - 4 * a * c
    with np.errstate(divide="ignore", invalid="ignore"):
        sq = np.sqrt(np.maximum(disc, 0))
        t0 = (-b - sq) / (2 * a)
        t1 = (-b + sq) / (2 * a)
    best = np.full(d.shape[:-1], np.inf)
    for t in (t1, t0):
        z = t * d[..., 2]
        ok = (disc >= 0) & (a > 0) & (t > 0) & (z >= cyl.bottom) & (z <= cyl.top)
        best = np.where(ok, t, best)
    # caps
    for zc in (cyl.bottom, cyl.top):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = zc / d[..., 2]
        x, y = t * d[..., 0], t * d[..., 1]
        ok = (t > 0) & ((x - cx) ** 2 + (y - cy) ** 2 <= cyl.radius**2)
        best = np.where(ok & (t < best), t, best)
    return best


def _hit(d, prim):
    if isinstance(prim, Wall):
        return _hit_wall(d, prim)
    if isinstance(prim, Box):
        return _hit_box(d, prim)
    return _hit_cylinder(d, prim)


def raycast_scene(spec: SceneSpec, seed: int = 0) -> tuple[MultiEchoOrderedCloud, np.ndarray]:
    """Clear single-echo scan and its labels (valid_object wherever a surface was hit)."""
    spec.validate()
    rng = np.random.default_rng(seed)
    cfg = spec.sensor
    d = beam_directions(cfg)
    t = np.full(d.shape[:-1], np.inf)
    refl = np.zeros(d.shape[:-1])
    candidates = []
    if spec.ground_height is not None:
        candidates.append((_hit_ground(d, spec.ground_height), spec.ground_reflectivity))
    candidates += [(_hit(d, p), p.reflectivity) for p in spec.primitives]
    for tp, rp in candidates:
        closer = tp < t
        t = np.where(closer, tp, t)
        refl = np.where(closer, rp, refl)
    jitter = rng.uniform(0.0, 0.1, t.shape)
    noise = rng.normal(0.0, spec.range_noise, t.shape) if spec.range_noise > 0 else np.zeros(t.shape)
    t = t + noise
    hit = np.isfinite(t) & (t <= spec.max_range) & (t > 0)
    xyz = np.where(hit[..., None], d * np.where(hit, t, 0)[..., None], 0.0)
    inten = np.where(hit, refl / (1.0 + jitter), 0.0)
    az, el = cfg.cell_angles()
    cloud = MultiEchoOrderedCloud(xyz[:, :, None], inten[:, :, None], hit[:, :, None], az, el)
    labels = np.where(cloud.valid, VALID_OBJECT, EMPTY).astype(np.uint8)
    return cloud, labels


# ------------------------------------------------------------------- snow


@dataclass(frozen=True)
class SnowSpec:
    severity: str = "medium"
    probability: float | None = None  # overrides the severity table
    r_min: float = 1.0
    r_max: float = 20.0
    i_max: float = 0.3
    occlusion_drop: float = 0.1

    def __post_init__(self):
        if self.probability is None and self.severity not in SEVERITY_PROBABILITY:
            raise ConfigError(f"unknown severity {self.severity!r}")
        if not 0 <= self.corruption <= 1 or not 0 <= self.occlusion_drop <= 1:
            raise ConfigError("probabilities must lie in [0, 1]")
        if not self.r_max > self.r_min >= 0 or self.r_max <= 1:
            raise ConfigError("need r_max > max(r_min, 1 m)")
        if not 0 < self.i_max <= 1:
            raise ConfigError("i_max must lie in (0, 1]")

    @property
    def corruption(self) -> float:
        return SEVERITY_PROBABILITY[self.severity] if self.probability is None else self.probability


def inject_snow(clean: MultiEchoOrderedCloud, spec: SnowSpec, multi_echo: bool, seed: int = 0):
    """Corrupt a clear scan with particle returns. Returns (cloud, labels).

    Single-echo: a firing beam reports the particle instead of the surface.
    Multi-echo: the particle becomes the strongest echo and the surface
    return (if not dropped) moves to slot 1 with at most the particle's raw
    intensity.
    """
    if clean.num_echoes != 1:
        raise ModeError("inject_snow expects a single-echo clear scan")
    H, W, _ = clean.shape
    rng = np.random.default_rng(seed)
    u = rng.random((H, W, 4))  # fire, range, intensity, drop

    r_true = clean.ranges()[:, :, 0]
    surf = clean.valid[:, :, 0]
    upper = np.where(surf, np.minimum(0.8 * r_true, spec.r_max), spec.r_max)
    fire = (u[..., 0] < spec.corruption) & (upper > spec.r_min)
    r_p = spec.r_min + u[..., 1] * (upper - spec.r_min)
    i_p = (u[..., 2] * spec.i_max).astype(np.float32)
    az, el = clean.azimuth.astype(np.float64), clean.elevation.astype(np.float64)
    d = np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)
    p_xyz = (d * r_p[..., None]).astype(np.float32)

    txyz, tint = clean.xyz[:, :, 0], clean.intensity[:, :, 0]
    if not multi_echo:
        xyz = np.where(fire[..., None], p_xyz, txyz)[:, :, None]
        inten = np.where(fire, i_p, tint)[:, :, None]
        valid = (fire | surf)[:, :, None]
        labels = np.where(fire, NOISE_PARTICLE, np.where(surf, VALID_OBJECT, EMPTY))[:, :, None]
    else:
        keep = surf & fire & ~(u[..., 3] < spec.occlusion_drop)
        xyz = np.zeros((H, W, 2, 3), np.float32)
        inten = np.zeros((H, W, 2), np.float32)
        xyz[:, :, 0] = np.where(fire[..., None], p_xyz, txyz)
        inten[:, :, 0] = np.where(fire, i_p, tint)
        xyz[:, :, 1] = np.where(keep[..., None], txyz, 0)
        inten[:, :, 1] = np.where(keep, np.minimum(tint, i_p), 0)
        valid = np.stack([fire | surf, keep], axis=-1)
        labels = np.stack(
            [np.where(fire, NOISE_PARTICLE, np.where(surf, VALID_OBJECT, EMPTY)), np.where(keep, VALID_OBJECT, EMPTY)],
            axis=-1,
        )
    cloud = MultiEchoOrderedCloud(xyz, inten, valid, clean.azimuth, clean.elevation)
    return cloud, labels.astype(np.uint8)


# --------------------------------------------------------- random scenes


def random_scene(rng: np.random.Generator, sensor: ProjectionConfig = DEFAULT_SENSOR) -> SceneSpec:
    """Street-like scene: ground, a few facades, parked boxes and poles."""
    prims = []
    ground = -1.7
    for _ in range(rng.integers(2, 5)):
        ang = rng.uniform(-np.pi, np.pi)
        dist = rng.uniform(8, 35)
        normal = np.array([math.cos(ang), math.sin(ang)])
        tangent = np.array([-normal[1], normal[0]])
        half = rng.uniform(8, 30)
        mid = normal * dist
        prims.append(Wall(tuple(mid - tangent * half), tuple(mid + tangent * half), ground, float(rng.uniform(3, 12)),
                          float(rng.uniform(0.3, 0.9))))
    for _ in range(rng.integers(3, 9)):
        ang, dist = rng.uniform(-np.pi, np.pi), rng.uniform(4, 28)
        h = float(rng.uniform(1.3, 2.5))
        prims.append(Box((dist * math.cos(ang), dist * math.sin(ang), ground + h / 2),
                         (float(rng.uniform(3.5, 5.0)), float(rng.uniform(1.6, 2.2)), h),
                         float(rng.uniform(-np.pi, np.pi)), float(rng.uniform(0.2, 0.9))))
    for _ in range(rng.integers(3, 9)):
        ang, dist = rng.uniform(-np.pi, np.pi), rng.uniform(3, 25)
        prims.append(Cylinder((dist * math.cos(ang), dist * math.sin(ang)), float(rng.uniform(0.15, 0.6)), ground,
                              float(rng.uniform(2, 8)), float(rng.uniform(0.2, 0.9))))
    return SceneSpec(sensor=sensor, ground_height=ground, ground_reflectivity=float(rng.uniform(0.15, 0.35)),
                     primitives=prims, max_range=50.0, range_noise=0.02)


def synthetic_scans(n: int, snow: SnowSpec, multi_echo: bool, seed: int, sensor: ProjectionConfig = DEFAULT_SENSOR):
    """``n`` snowy scans of random scenes as (cloud, labels) pairs."""
    ss = np.random.SeedSequence(seed)
    out = []
    for child in ss.spawn(n):
        scene_seed, ray_seed, snow_seed = child.generate_state(3)
        spec = random_scene(np.random.default_rng(scene_seed), sensor)
        clean, _ = raycast_scene(spec, int(ray_seed))
        out.append(inject_snow(clean, snow, multi_echo, int(snow_seed)))
    return out


# ----------------------------------------------------------- config files


def _floats(s: str) -> tuple:
    return tuple(float(v) for v in s.replace(",", " ").split())


def parse_scene_spec(text: str) -> SceneSpec:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
        s = cp["sensor"] if cp.has_section("sensor") else {}
        sensor = ProjectionConfig(
            int(s.get("height", DEFAULT_SENSOR.height)), int(s.get("width", DEFAULT_SENSOR.width)),
            float(s.get("fov_up", DEFAULT_SENSOR.fov_up)), float(s.get("fov_down", DEFAULT_SENSOR.fov_down)),
        )
        spec = SceneSpec(sensor=sensor, ground_height=None,
                         max_range=float(s.get("max_range", 50.0)), range_noise=float(s.get("range_noise", 0.0)))
        if cp.has_section("ground"):
            spec.ground_height = cp.getfloat("ground", "height")
            spec.ground_reflectivity = cp.getfloat("ground", "reflectivity", fallback=0.25)
        for name in cp.sections():
            sec = cp[name]
            kind = name.split(".", 1)[0]
            if kind == "wall":
                spec.primitives.append(Wall(_floats(sec["start"]), _floats(sec["end"]), float(sec["bottom"]),
                                            float(sec["top"]), float(sec["reflectivity"])))
            elif kind == "box":
                spec.primitives.append(Box(_floats(sec["center"]), _floats(sec["size"]), float(sec.get("yaw", 0.0)),
                                           float(sec["reflectivity"])))
            elif kind == "cylinder":
                spec.primitives.append(Cylinder(_floats(sec["center"]), float(sec["radius"]), float(sec["bottom"]),
                                                float(sec["top"]), float(sec["reflectivity"])))
            elif kind not in ("sensor", "ground"):
                raise ConfigError(f"unknown section [{name}]")
    except (configparser.Error, KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad scene file: {exc}") from exc
    spec.validate()
    return spec


def read_scene_spec(path) -> SceneSpec:
    with open(path) as f:
        return parse_scene_spec(f.read())


def format_scene_spec(spec: SceneSpec) -> str:
    s = spec.sensor
    lines = ["[sensor]", f"height = {s.height}", f"width = {s.width}", f"fov_up = {s.fov_up!r}",
             f"fov_down = {s.fov_down!r}", f"max_range = {spec.max_range!r}", f"range_noise = {spec.range_noise!r}", ""]
    if spec.ground_height is not None:
        lines += ["[ground]", f"height = {spec.ground_height!r}", f"reflectivity = {spec.ground_reflectivity!r}", ""]
    j = lambda v: ", ".join(repr(float(x)) for x in v)
    for i, p in enumerate(spec.primitives):
        if isinstance(p, Wall):
            lines += [f"[wall.{i}]", f"start = {j(p.start)}", f"end = {j(p.end)}", f"bottom = {p.bottom!r}",
                      f"top = {p.top!r}"]
        elif isinstance(p, Box):
            lines += [f"[box.{i}]", f"center = {j(p.center)}", f"size = {j(p.size)}", f"yaw = {p.yaw!r}"]
        else:
            lines += [f"[cylinder.{i}]", f"center = {j(p.center)}", f"radius = {p.radius!r}", f"bottom = {p.bottom!r}",
                      f"top = {p.top!r}"]
        lines += [f"reflectivity = {p.reflectivity!r}", ""]
    return "\n".join(lines)
