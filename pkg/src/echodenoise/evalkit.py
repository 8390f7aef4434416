"""Noise-class IoU, ROC-AUC, runtime benchmarking and CSV/PGM exports."""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from .cloud import ARTIFACT, EMPTY, NOISE_PARTICLE
from .errors import AlignmentError, UndefinedMetric
from .inference import DI


@dataclass(frozen=True)
class ConfusionCounts:
    """Counts for the noise class (positive = noise)."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def iou(c: ConfusionCounts) -> float:
    den = c.tp + c.fp + c.fn
    if den == 0:
        raise UndefinedMetric("IoU undefined: no positives predicted or present")
    return c.tp / den


def iou_valid(c: ConfusionCounts) -> float:
    """IoU of the valid (negative) class."""
    return iou(ConfusionCounts(c.tn, c.fn, c.fp, c.tp))


def precision(c: ConfusionCounts) -> float:
    return c.tp / (c.tp + c.fp) if c.tp + c.fp else float("nan")


def recall(c: ConfusionCounts) -> float:
    return c.tp / (c.tp + c.fn) if c.tp + c.fn else float("nan")


def confusion(pred_noise: np.ndarray, labels: np.ndarray) -> ConfusionCounts:
    """Confusion counts over labelled echoes; empty cells are skipped.

    ``pred_noise`` is True where an echo is discarded. Particles and
    artifacts are positives.
    """
    pred_noise = np.asarray(pred_noise, bool)
    labels = np.asarray(labels)
    if pred_noise.shape != labels.shape:
        raise AlignmentError(f"prediction {pred_noise.shape} vs labels {labels.shape}")
    keep = labels != EMPTY
    pos = ((labels == NOISE_PARTICLE) | (labels == ARTIFACT))[keep]
    pred = pred_noise[keep]
    return ConfusionCounts(int((pred & pos).sum()), int((pred & ~pos).sum()), int((~pred & pos).sum()),
                           int((~pred & ~pos).sum()))


def confusion_from_classes(classes: np.ndarray, labels: np.ndarray) -> ConfusionCounts:
    """Multi-echo variant: a DI echo counts as a noise decision."""
    return confusion(np.asarray(classes) == DI, labels)


def roc_auc(scores: np.ndarray, positive: np.ndarray) -> float:
    """Area under the ROC curve via the rank-sum statistic (ties get mid-ranks)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    positive = np.asarray(positive, bool).ravel()
    n_pos, n_neg = int(positive.sum()), int((~positive).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("ROC-AUC needs both classes")
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    ranks = np.empty(len(s))
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[j + 1] == s[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1
        i = j + 1
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


@dataclass(frozen=True)
class RuntimeStats:
    median_ms: float
    p95_ms: float
    scans: int


def benchmark(runner, dataset, warmup: int = 3, clock=time.perf_counter) -> RuntimeStats:
    """Per-scan wall time of ``runner(scan)``; the first ``warmup`` scans are not timed."""
    dataset = list(dataset)
    if len(dataset) <= warmup:
        raise ValueError(f"need more than {warmup} scans to benchmark, got {len(dataset)}")
    times = []
    for i, scan in enumerate(dataset):
        t0 = clock()
        runner(scan)
        dt = clock() - t0
        if i >= warmup:
            times.append(dt * 1e3)
    t = np.sort(times)
    return RuntimeStats(float(np.median(t)), float(np.percentile(t, 95)), len(t))


@dataclass
class ReportRow:
    method: str
    severity: str
    iou_noise: float
    iou_valid: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int
    tn: int
    scans: int
    mean_scan_iou: float
    runtime_median_ms: float = float("nan")
    runtime_p95_ms: float = float("nan")
    parameters: int = 0


REPORT_HEADER = [f.name for f in fields(ReportRow)]


def evaluate(predictions, labels, severity: str, method: str = "") -> ReportRow:
    """Pooled and per-scan-mean metrics over aligned (pred_noise, labels) scan pairs."""
    predictions, labels = list(predictions), list(labels)
    if len(predictions) != len(labels):
        raise AlignmentError("number of predictions and label grids differ")
    total = ConfusionCounts()
    per_scan = []
    for p, l in zip(predictions, labels):
        c = confusion(p, l)
        total = total + c
        if c.tp + c.fp + c.fn:
            per_scan.append(iou(c))
    return ReportRow(
        method, severity, _safe(iou, total), _safe(iou_valid, total), precision(total), recall(total),
        total.tp, total.fp, total.fn, total.tn, len(labels),
        statistics.fmean(per_scan) if per_scan else float("nan"),
    )


def _safe(metric, c):
    try:
        return metric(c)
    except UndefinedMetric:
        return float("nan")


def write_report(rows, path) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(REPORT_HEADER)
        for r in rows:
            wr.writerow([repr(v) if isinstance(v, float) else v for v in asdict(r).values()])


def read_report(path) -> list[ReportRow]:
    types = {f.name: f.type for f in fields(ReportRow)}
    conv = {"str": str, "int": int, "float": float}
    with open(path, newline="") as f:
        return [ReportRow(**{k: conv[types[k]](v) for k, v in row.items()}) for row in csv.DictReader(f)]


def write_pgm(image: np.ndarray, path, lo: float | None = None, hi: float | None = None, mask=None) -> None:
    """Binary (P5) 8-bit grayscale; values mapped linearly from [lo, hi], masked pixels black."""
    img = np.asarray(image, dtype=np.float64)
    mask = np.ones(img.shape, bool) if mask is None else np.asarray(mask, bool)
    vals = img[mask]
    lo = float(vals.min()) if lo is None and vals.size else (0.0 if lo is None else lo)
    hi = float(vals.max()) if hi is None and vals.size else (1.0 if hi is None else hi)
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    g = np.clip(np.round((img - lo) * scale), 0, 255).astype(np.uint8)
    g[~mask] = 0
    h, w = g.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(g.tobytes())


def read_pgm(path) -> np.ndarray:
    data = open(path, "rb").read()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, mx = int(parts[1]), int(parts[2]), int(parts[3])
    if mx != 255:
        raise ValueError("only 8-bit PGM supported")
    return np.frombuffer(parts[4], np.uint8, count=w * h).reshape(h, w)
