"""Coordinate and correlation learners, their joint loss, and the training loop.

Both learners share one architecture: a per-cell linear map of the neighbor
features followed by residual blocks of two 3x3 grid convolutions and a 1x1
head with one output per echo slot. They differ only in the input: the
coordinate learner never sees the records of the blind-spot subset, while
the correlation learner sees every neighbor including the query itself.

The coordinate learner predicts each query's range; the correlation learner
predicts a score that is high where that prediction is hard, i.e. on
weather noise.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import layers
from .cloud import MultiEchoOrderedCloud
from .csr import CsrConfig, CsrNeighbors, characteristics_map, csr_neighbors, zscore_penalty, zscore_penalty_backward
from .errors import ConfigError, DivergenceError, EmptySubset, FormatError, ShapeError
from .neighbors import EncoderConfig, FeatureTensor, encode_features, gather_neighbors, nearest_distance

EXP_MIN, EXP_MAX = 1e-6, 1e6
NETWORKS = ("coo", "cor")


@dataclass(frozen=True)
class NetworkConfig:
    num_echoes: int = 2
    slots: int = 5  # neighbor slots per query, must match the encoder
    features: int = 16  # encoder output channels
    residual_blocks: int = 3
    widths: tuple | None = None  # per block; defaults to `features` everywhere
    activation: str = "leaky_relu"
    seed: int = 0
    range_scale: float = 10.0  # meters; input normalisation and output unit
    angle_scale: float = 0.05  # radians

    def __post_init__(self):
        widths = (self.features,) * self.residual_blocks if self.widths is None else tuple(int(v) for v in self.widths)
        object.__setattr__(self, "widths", widths)
        if self.residual_blocks < 1 or len(widths) != self.residual_blocks:
            raise ConfigError("need residual_blocks >= 1 and one width per block")
        if min(widths) < 1 or self.features < 1 or self.slots < 1 or self.num_echoes < 1:
            raise ConfigError("widths, features, slots and num_echoes must be >= 1")
        if self.activation not in ("leaky_relu", "tanh", "softplus"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if not (self.range_scale > 0 and self.angle_scale > 0):
            raise ConfigError("input scales must be positive")

    @property
    def in_features(self) -> int:
        return self.num_echoes * self.slots * 3

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(**{**d, "widths": tuple(d["widths"])})


# Two learners of 567,634 parameters each, 1,135,268 in total.
PAPER_SCALE = NetworkConfig(num_echoes=2, slots=5, features=48, residual_blocks=3, widths=(96, 96, 128))


def network_shapes(cfg: NetworkConfig) -> dict[str, tuple]:
    """Parameter shapes of a single learner (names without the network prefix)."""
    shapes = {"enc.w": (cfg.in_features, cfg.features), "enc.b": (cfg.features,)}
    c_in = cfg.features
    for i, c in enumerate(cfg.widths):
        shapes[f"block{i}.conv1.w"] = (9 * c_in, c)
        shapes[f"block{i}.conv1.b"] = (c,)
        shapes[f"block{i}.conv2.w"] = (9 * c, c)
        shapes[f"block{i}.conv2.b"] = (c,)
        if c != c_in:
            shapes[f"block{i}.proj.w"] = (c_in, c)
        c_in = c
    shapes["head.w"] = (c_in, cfg.num_echoes)
    shapes["head.b"] = (cfg.num_echoes,)
    return shapes


def parameter_shapes(cfg: NetworkConfig) -> dict[str, tuple]:
    return {f"{net}.{k}": v for net in NETWORKS for k, v in network_shapes(cfg).items()}


def parameter_count(cfg: NetworkConfig) -> int:
    """Trainable scalars of both learners."""
    return sum(math.prod(s) for s in parameter_shapes(cfg).values())


class ParameterStore:
    """Named float64 tensors of both learners plus the config that shaped them."""

    def __init__(self, cfg: NetworkConfig, tensors: dict[str, np.ndarray]):
        expected = parameter_shapes(cfg)
        if set(tensors) != set(expected):
            raise ShapeError("parameter names do not match the network config")
        for k, s in expected.items():
            if tuple(tensors[k].shape) != s:
                raise ShapeError(f"{k}: shape {tensors[k].shape} != {s}")
        self.cfg = cfg
        self.tensors = {k: np.asarray(tensors[k], dtype=np.float64) for k in expected}

    @classmethod
    def initialize(cls, cfg: NetworkConfig) -> "ParameterStore":
        rng = np.random.default_rng(cfg.seed)
        tensors = {}
        for name, shape in parameter_shapes(cfg).items():
            if name.endswith(".b"):
                tensors[name] = np.zeros(shape)
            else:
                tensors[name] = rng.normal(0.0, math.sqrt(2.0 / shape[0]), size=shape)
            if name.split(".", 1)[1].endswith("conv2.w"):
                tensors[name] *= 0.5
        # zero score head: every echo starts at O_cor = 0, so early losses are not blown up by e^-O_cor
        tensors["cor.head.w"][:] = 0.0
        # start the range head near one range_scale
        tensors["coo.head.w"] *= 0.1
        tensors["coo.head.b"][:] = math.log(math.e - 1.0)
        return cls(cfg, tensors)

    def __getitem__(self, name):
        return self.tensors[name]

    def names(self):
        return list(self.tensors)

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "ParameterStore":
        return ParameterStore(self.cfg, {k: v.copy() for k, v in self.tensors.items()})

    def equals(self, other: "ParameterStore") -> bool:
        return self.cfg == other.cfg and all(np.array_equal(self[k], other[k]) for k in self.tensors)


# ------------------------------------------------------------------ forward


def _scaled_input(features: FeatureTensor, cfg: NetworkConfig) -> np.ndarray:
    H, W, NE, S, _ = features.values.shape
    if NE != cfg.num_echoes or S != cfg.slots:
        raise ShapeError(f"features have Ne={NE}, slots={S}; network expects {cfg.num_echoes}, {cfg.slots}")
    scale = np.array([1.0 / cfg.range_scale, 1.0 / cfg.angle_scale, 1.0 / cfg.angle_scale])
    return (features.values * scale).reshape(H, W, -1)


def _net_forward(P: ParameterStore, net: str, x: np.ndarray):
    cfg = P.cfg
    act = cfg.activation
    g = lambda k: P[f"{net}.{k}"]
    caches = {}
    z, caches["enc"] = layers.dense(x, g("enc.w"), g("enc.b"))
    caches["enc.z"] = z
    h = layers.activate(z, act)
    c_in = cfg.features
    for i, c in enumerate(cfg.widths):
        b = f"block{i}"
        z1, c1 = layers.conv3x3(h, g(f"{b}.conv1.w"), g(f"{b}.conv1.b"))
        a1 = layers.activate(z1, act)
        z2, c2 = layers.conv3x3(a1, g(f"{b}.conv2.w"), g(f"{b}.conv2.b"))
        if c != c_in:
            skip, cp = layers.dense(h, g(f"{b}.proj.w"))
        else:
            skip, cp = h, None
        z3 = z2 + skip
        caches[b] = (c1, z1, c2, cp, z3)
        h = layers.activate(z3, act)
        c_in = c
    out, caches["head"] = layers.dense(h, g("head.w"), g("head.b"))
    return out, caches


def _net_backward(P: ParameterStore, net: str, caches, dout) -> dict[str, np.ndarray]:
    cfg = P.cfg
    act = cfg.activation
    g = lambda k: P[f"{net}.{k}"]
    grads = {}
    dh, grads[f"{net}.head.w"], grads[f"{net}.head.b"] = layers.dense_backward(dout, g("head.w"), caches["head"])
    for i in reversed(range(len(cfg.widths))):
        b = f"block{i}"
        c1, z1, c2, cp, z3 = caches[b]
        dz3 = layers.activate_backward(dh, z3, act)
        da1, grads[f"{net}.{b}.conv2.w"], grads[f"{net}.{b}.conv2.b"] = layers.conv3x3_backward(dz3, g(f"{b}.conv2.w"), c2)
        dz1 = layers.activate_backward(da1, z1, act)
        dh_in, grads[f"{net}.{b}.conv1.w"], grads[f"{net}.{b}.conv1.b"] = layers.conv3x3_backward(dz1, g(f"{b}.conv1.w"), c1)
        if cp is not None:
            dskip, grads[f"{net}.{b}.proj.w"], _ = layers.dense_backward(dz3, g(f"{b}.proj.w"), cp)
        else:
            dskip = dz3
        dh = dh_in + dskip
    dz = layers.activate_backward(dh, caches["enc.z"], act)
    _, grads[f"{net}.enc.w"], grads[f"{net}.enc.b"] = layers.dense_backward(dz, g("enc.w"), caches["enc"])
    return grads


def apply_blind_spots(features: FeatureTensor, mask: np.ndarray) -> FeatureTensor:
    """Hide the records of masked echoes from every neighbor slot.

    Only strongest-echo records are ever referenced, so masking echo 0 of a
    cell removes that record wherever it appears, including the query's own
    self-match. The result carries no information from the masked records.
    """
    hidden = np.asarray(mask)[:, :, 0].ravel()
    hide = features.present & hidden[np.where(features.ref >= 0, features.ref, 0)]
    values = np.where(hide[..., None], 0.0, features.values)
    return FeatureTensor(values, features.present & ~hide, np.where(hide, -1, features.ref))


def forward_coordinate(features: FeatureTensor, mask: np.ndarray, params: ParameterStore) -> np.ndarray:
    """Predicted range (meters, >= 0) per query from blind-spotted features."""
    x = _scaled_input(apply_blind_spots(features, mask), params.cfg)
    out, _ = _net_forward(params, "coo", x)
    return params.cfg.range_scale * layers.softplus(out)


def forward_correlation(features: FeatureTensor, params: ParameterStore) -> np.ndarray:
    """Unbounded noise score per query; higher means less predictable."""
    out, _ = _net_forward(params, "cor", _scaled_input(features, params.cfg))
    return out


# --------------------------------------------------------------------- loss


def ceil_meters(r):
    return np.maximum(np.ceil(r), 1.0)


def loss(o_coo, o_cor, cloud: MultiEchoOrderedCloud, mask, xi, lam: float) -> float:
    """Mean over masked valid echoes of lam*|o_coo - r| / (ceil(r) e^o_cor) + o_cor + xi."""
    sel = np.asarray(mask, bool) & cloud.valid
    if not sel.any():
        raise EmptySubset("blind-spot mask selects no valid echo")
    r = cloud.ranges()[sel]
    e = np.clip(np.exp(np.asarray(o_cor)[sel]), EXP_MIN, EXP_MAX)
    terms = lam * np.abs(np.asarray(o_coo)[sel] - r) / (ceil_meters(r) * e) + np.asarray(o_cor)[sel] + np.asarray(xi)[sel]
    return float(terms.mean())


@dataclass
class ScanData:
    """Everything about one scan that stays fixed during training."""

    cloud: MultiEchoOrderedCloud
    features: FeatureTensor
    ranges: np.ndarray
    csr: CsrNeighbors


def prepare_scan(cloud: MultiEchoOrderedCloud, enc_cfg: EncoderConfig, csr_cfg: CsrConfig) -> ScanData:
    nbrs = gather_neighbors(cloud, enc_cfg)
    theta = characteristics_map(cloud, nearest_distance(nbrs))
    return ScanData(cloud, encode_features(cloud, nbrs), cloud.ranges(), csr_neighbors(theta, csr_cfg))


def loss_and_grad(params: ParameterStore, scan: ScanData, mask, lam: float, csr_cfg: CsrConfig | None, need_grad=True):
    """Joint loss of both learners on one scan and its exact gradient.

    The characteristic-space neighbor selection in ``scan.csr`` is treated
    as constant; ``csr_cfg=None`` drops the regularizer.
    """
    cfg = params.cfg
    valid = scan.cloud.valid
    sel = np.asarray(mask, bool) & valid
    n = int(sel.sum())
    if n == 0:
        raise EmptySubset("blind-spot mask selects no valid echo")

    x_coo = _scaled_input(apply_blind_spots(scan.features, mask), cfg)
    x_cor = _scaled_input(scan.features, cfg)
    z_coo, cache_coo = _net_forward(params, "coo", x_coo)
    o_cor, cache_cor = _net_forward(params, "cor", x_cor)
    o_coo = cfg.range_scale * layers.softplus(z_coo)

    if csr_cfg is not None:
        s = o_cor.ravel()[scan.csr.flat_index]
        xi_v, zcache = zscore_penalty(s, scan.csr.neighbors, csr_cfg)
        xi = np.zeros(valid.size)
        xi[scan.csr.flat_index] = xi_v
        xi = xi.reshape(valid.shape)
    else:
        xi = np.zeros(valid.shape)

    r = scan.ranges
    cm = ceil_meters(r)
    raw_e = np.exp(np.where(sel, o_cor, 0.0))
    e = np.clip(raw_e, EXP_MIN, EXP_MAX)
    err = o_coo - r
    a = lam * np.abs(err) / (cm * e)
    value = float(np.where(sel, a + o_cor + xi, 0.0).sum() / n)
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite loss {value}")
    if not need_grad:
        return value, None

    w = sel / n
    d_ocoo = w * lam * np.sign(err) / (cm * e)
    inside = (raw_e >= EXP_MIN) & (raw_e <= EXP_MAX)
    d_ocor = w * (1.0 - np.where(inside, a, 0.0))
    if csr_cfg is not None:
        dxi = w.ravel()[scan.csr.flat_index]
        ds = zscore_penalty_backward(dxi, scan.csr.neighbors, zcache, csr_cfg)
        flat = d_ocor.ravel()
        np.add.at(flat, scan.csr.flat_index, ds)
        d_ocor = flat.reshape(valid.shape)
    d_zcoo = d_ocoo * cfg.range_scale * layers.sigmoid(z_coo)
    grads = _net_backward(params, "coo", cache_coo, d_zcoo)
    grads.update(_net_backward(params, "cor", cache_cor, d_ocor))
    return value, grads


# ----------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    lr_decay: float = 0.99
    momentum: float = 0.9
    epochs: int = 30
    lam: float = 5.0
    blind_fraction: float = 0.5
    seed: int = 0
    use_csr: bool = True

    def __post_init__(self):
        if self.learning_rate < 0 or not 0 < self.lr_decay <= 1 or not 0 <= self.momentum < 1:
            raise ConfigError("invalid optimizer settings")
        if self.epochs < 1 or not self.lam > 0:
            raise ConfigError("epochs and lambda must be positive")
        if not 0 < self.blind_fraction <= 1:
            raise ConfigError("blind_fraction must lie in (0, 1]")


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    """Rate used during ``epoch`` (0-based): decayed once per completed epoch."""
    return cfg.learning_rate * cfg.lr_decay**epoch


def sample_mask(valid: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli blind-spot subset of the valid echoes; never empty if any echo is valid."""
    mask = valid & (rng.random(valid.shape) < fraction)
    if valid.any() and not mask.any():
        idx = np.flatnonzero(valid)
        mask.ravel()[idx[rng.integers(len(idx))]] = True
    return mask


@dataclass
class LogEntry:
    epoch: int
    mean_loss: float
    lr: float


@dataclass
class TrainResult:
    params: ParameterStore
    log: list[LogEntry] = field(default_factory=list)


def train(dataset, net_cfg: NetworkConfig, train_cfg: TrainConfig, enc_cfg: EncoderConfig,
          csr_cfg: CsrConfig | None = None, init: ParameterStore | None = None, progress=None) -> TrainResult:
    """SGD with momentum over whole scans; a fresh blind-spot mask per scan and epoch."""
    dataset = list(dataset)
    if not dataset:
        raise ValueError("training set is empty")
    if net_cfg.slots != enc_cfg.slots:
        raise ShapeError(f"network expects {net_cfg.slots} slots, encoder yields {enc_cfg.slots}")
    csr_cfg = csr_cfg or CsrConfig()
    scans = [d if isinstance(d, ScanData) else prepare_scan(d, enc_cfg, csr_cfg) for d in dataset]
    for s in scans:
        if s.cloud.num_echoes != net_cfg.num_echoes:
            raise ShapeError("scan echo count does not match the network config")
    scans = [s for s in scans if s.cloud.valid.any()]

    params = (init or ParameterStore.initialize(net_cfg)).copy()
    velocity = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    rng = np.random.default_rng(train_cfg.seed)
    reg = csr_cfg if train_cfg.use_csr else None
    log = []
    for epoch in range(train_cfg.epochs):
        lr = learning_rate(train_cfg, epoch)
        losses = []
        for i in rng.permutation(len(scans)):
            scan = scans[i]
            mask = sample_mask(scan.cloud.valid, train_cfg.blind_fraction, rng)
            value, grads = loss_and_grad(params, scan, mask, train_cfg.lam, reg)
            for k, g in grads.items():
                v = velocity[k]
                v *= train_cfg.momentum
                v += g
                params.tensors[k] -= lr * v
            losses.append(value)
        mean = float(np.mean(losses)) if losses else float("nan")
        if losses and not np.isfinite(mean):
            raise DivergenceError(f"loss diverged in epoch {epoch}")
        log.append(LogEntry(epoch, mean, lr))
        if progress is not None:
            progress(log[-1])
    return TrainResult(params, log)


def write_loss_log(log, path) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["epoch", "mean_loss", "lr"])
        for e in log:
            wr.writerow([e.epoch, repr(e.mean_loss), repr(e.lr)])


def read_loss_log(path) -> list[LogEntry]:
    with open(path, newline="") as f:
        return [LogEntry(int(r["epoch"]), float(r["mean_loss"]), float(r["lr"])) for r in csv.DictReader(f)]


# --------------------------------------------------------------- checkpoint

CKPT_MAGIC = b"SMED"
CKPT_VERSION = 1


def save_checkpoint(params: ParameterStore, enc_cfg: EncoderConfig, path) -> None:
    """Header, JSON config block, then named float32 tensors (all little-endian)."""
    meta = json.dumps({"network": params.cfg.to_dict(), "encoder": asdict(enc_cfg)}, sort_keys=True).encode()
    out = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(meta)), meta, struct.pack("<I", len(params.tensors))]
    for name, t in params.tensors.items():
        nb = name.encode()
        out.append(struct.pack("<I", len(nb)) + nb + struct.pack("<I", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape))
        out.append(t.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(out))


def load_checkpoint(path) -> tuple[ParameterStore, EncoderConfig]:
    buf = Path(path).read_bytes()
    if buf[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint")
    try:
        version, n_meta = struct.unpack_from("<II", buf, 4)
        if version != CKPT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        off = 12
        meta = json.loads(buf[off : off + n_meta])
        off += n_meta
        (count,) = struct.unpack_from("<I", buf, off)
        off += 4
        tensors = {}
        for _ in range(count):
            (nl,) = struct.unpack_from("<I", buf, off)
            name = buf[off + 4 : off + 4 + nl].decode()
            off += 4 + nl
            (ndim,) = struct.unpack_from("<I", buf, off)
            shape = struct.unpack_from(f"<{ndim}I", buf, off + 4)
            off += 4 + 4 * ndim
            size = math.prod(shape)
            if off + 4 * size > len(buf):
                raise FormatError(f"{path}: truncated tensor {name}")
            tensors[name] = np.frombuffer(buf, "<f4", count=size, offset=off).reshape(shape).astype(np.float64)
            off += 4 * size
    except (struct.error, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint ({exc})") from exc
    enc = meta["encoder"]
    enc_cfg = EncoderConfig(**{**enc, "window": tuple(enc["window"])})
    return ParameterStore(NetworkConfig.from_dict(meta["network"]), tensors), enc_cfg
