"""Confusion counts and pixel metrics (precision, recall, F1, IoU, OA).

Urban (1) is the positive class.  When a scene holds no positives in either
mask, precision/recall/F1/IoU are all 1; otherwise an undefined ratio with
tp = 0 is 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Tuple

import numpy as np

from .raster import BinaryMask

CSV_HEADER = "scene,tp,fp,fn,tn,precision,recall,f1,iou,oa"


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)


@dataclass(frozen=True)
class MetricReport:
    precision: float
    recall: float
    f1: float
    iou: float
    overall_accuracy: float
    counts: ConfusionCounts

    def csv_row(self, scene: str) -> str:
        c = self.counts
        return (f"{scene},{c.tp},{c.fp},{c.fn},{c.tn},{self.precision!r},{self.recall!r},"
                f"{self.f1!r},{self.iou!r},{self.overall_accuracy!r}")


def _array(m) -> np.ndarray:
    return m.data if isinstance(m, BinaryMask) else np.asarray(m)


def confuse(pred, truth) -> ConfusionCounts:
    p = _array(pred).astype(bool)
    t = _array(truth).astype(bool)
    if p.shape != t.shape:
        raise ValueError(f"prediction {p.shape} and truth {t.shape} differ in size")
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return ConfusionCounts(tp, fp, fn, p.size - tp - fp - fn)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def metrics(c: ConfusionCounts) -> MetricReport:
    if c.total <= 0:
        raise ValueError("no pixels compared")
    oa = (c.tp + c.tn) / c.total
    if c.tp + c.fp + c.fn == 0:
        return MetricReport(1.0, 1.0, 1.0, 1.0, oa, c)
    p = _ratio(c.tp, c.tp + c.fp)
    r = _ratio(c.tp, c.tp + c.fn)
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    iou = c.tp / (c.tp + c.fp + c.fn)
    return MetricReport(p, r, f1, iou, oa, c)


def evaluate_scene(pred, truth) -> MetricReport:
    return metrics(confuse(pred, truth))


def evaluate_scenes(pairs: Iterable[Tuple[object, object]]) -> Tuple[List[MetricReport], MetricReport, float]:
    """Per-scene reports, the pooled report over all pixels, and macro-averaged OA."""
    reports = [evaluate_scene(p, t) for p, t in pairs]
    if not reports:
        raise ValueError("no scenes to evaluate")
    pooled = reports[0].counts
    for r in reports[1:]:
        pooled = pooled + r.counts
    macro_oa = float(np.mean([r.overall_accuracy for r in reports]))
    return reports, metrics(pooled), macro_oa
