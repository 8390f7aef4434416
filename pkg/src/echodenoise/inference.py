"""Turn per-echo noise scores into echo classes and a single-echo output cloud.

Classes per echo:

* VS: strongest echo whose score passes the threshold.
* PS: when the strongest fails, the best-scoring passing alternative echo
  whose range differs from the strongest by more than ``min_separation``.
* DI: everything else.

Lower scores mean "more valid"; an echo passes when ``score <= threshold``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import MultiEchoOrderedCloud
from .denoiser import forward_correlation
from .errors import ConfigError, ShapeError
from .neighbors import encode_features, gather_neighbors

DI, VS, PS = 0, 1, 2
# class codes as written to .mel files
MEL_CODE = {DI: 0, VS: 1, PS: 4}


@dataclass(frozen=True)
class InferenceConfig:
    threshold: float = 0.0
    min_separation: float = 0.05  # meters

    def __post_init__(self):
        if not self.min_separation > 0:
            raise ConfigError("min_separation must be positive")


def classify_echoes(scores: np.ndarray, cloud: MultiEchoOrderedCloud, cfg: InferenceConfig) -> np.ndarray:
    """Echo class grid (H x W x Ne, values DI/VS/PS)."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != cloud.shape:
        raise ShapeError(f"scores {scores.shape} do not match cloud {cloud.shape}")
    valid = cloud.valid
    r = cloud.ranges()
    passes = valid & (scores <= cfg.threshold)
    classes = np.full(cloud.shape, DI, np.int8)
    vs = passes[:, :, 0]
    classes[:, :, 0][vs] = VS
    if cloud.num_echoes > 1:
        alt_ok = passes[:, :, 1:] & (np.abs(r[:, :, 1:] - r[:, :, :1]) > cfg.min_separation)
        alt_ok &= ~vs[:, :, None]
        key = np.where(alt_ok, scores[:, :, 1:], np.inf)
        best = np.argmin(key, axis=-1)  # first index wins ties
        has = alt_ok.any(axis=-1)
        hh, ww = np.nonzero(has)
        classes[hh, ww, best[hh, ww] + 1] = PS
    return classes


@dataclass(frozen=True)
class DenoisedCloud:
    cloud: MultiEchoOrderedCloud  # Ne = 1
    substitute: np.ndarray  # H x W, True where the kept echo is a substitute
    source_echo: np.ndarray  # H x W, slot the kept echo came from (-1 if none)


def assemble_output(cloud: MultiEchoOrderedCloud, classes: np.ndarray) -> DenoisedCloud:
    """Keep the VS echo, else the PS echo, else leave the cell empty."""
    if classes.shape != cloud.shape:
        raise ShapeError("class grid does not match cloud")
    kept = (classes == VS) | (classes == PS)
    src = np.where(kept.any(axis=-1), np.argmax(kept, axis=-1), -1)
    hh, ww = np.nonzero(src >= 0)
    H, W, _ = cloud.shape
    xyz = np.zeros((H, W, 1, 3), np.float32)
    inten = np.zeros((H, W, 1), np.float32)
    valid = np.zeros((H, W, 1), bool)
    xyz[hh, ww, 0] = cloud.xyz[hh, ww, src[hh, ww]]
    inten[hh, ww, 0] = cloud.intensity[hh, ww, src[hh, ww]]
    valid[hh, ww, 0] = True
    out = MultiEchoOrderedCloud(xyz, inten, valid, cloud.azimuth, cloud.elevation)
    return DenoisedCloud(out, src > 0, src)


def classes_to_mel(classes: np.ndarray) -> np.ndarray:
    out = np.zeros(classes.shape, np.uint8)
    for cls, code in MEL_CODE.items():
        out[classes == cls] = code
    return out


def mel_to_classes(codes: np.ndarray) -> np.ndarray:
    out = np.full(codes.shape, DI, np.int8)
    out[codes == MEL_CODE[VS]] = VS
    out[codes == MEL_CODE[PS]] = PS
    return out


def denoise_scan(cloud: MultiEchoOrderedCloud, params, enc_cfg, inf_cfg: InferenceConfig):
    """Encode, score with the correlation learner, classify and assemble.

    Returns ``(DenoisedCloud, scores, classes)``.
    """
    feats = encode_features(cloud, gather_neighbors(cloud, enc_cfg))
    scores = forward_correlation(feats, params)
    classes = classify_echoes(scores, cloud, inf_cfg)
    return assemble_output(cloud, classes), scores, classes
