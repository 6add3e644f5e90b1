"""Pixel-wise binary cross-entropy, Adam, and per-epoch training curves."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .micronet import NetParams

CLAMP_EPS = 1e-7


class NonFiniteError(FloatingPointError):
    """Raised when a gradient or loss stops being finite."""


def bce_loss(y, p, clamp_eps: float = CLAMP_EPS) -> Tuple[float, np.ndarray]:
    """Mean binary cross-entropy over all elements and its gradient w.r.t. p.

    ``p`` is clamped into [eps, 1 - eps] before the logs; the gradient is
    evaluated at the clamped value so saturated but wrong pixels still push.
    """
    y = np.asarray(y, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if y.shape != p.shape:
        raise ValueError(f"target shape {y.shape} != prediction shape {p.shape}")
    m = y.size
    if m == 0:
        raise ValueError("empty batch")
    pc = np.clip(p, clamp_eps, 1.0 - clamp_eps)
    terms = y * np.log(pc) + (1.0 - y) * np.log1p(-pc)
    loss = -float(terms.sum()) / m
    grad = -(y / pc - (1.0 - y) / (1.0 - pc)) / m
    return max(loss, 0.0), grad


@dataclass
class AdamState:
    m: NetParams
    v: NetParams
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: NetParams, lr: float = 1e-3, **kw) -> "AdamState":
        return cls(m=params.zeros_like(), v=params.zeros_like(), lr=lr, **kw)


def adam_step(params: NetParams, grads: NetParams, state: AdamState) -> Tuple[NetParams, AdamState]:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(grads) != len(params):
        raise ValueError("gradient does not match parameter layout")
    for g, p in zip(grads, params):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.isfinite(g).all():
            raise NonFiniteError("non-finite gradient")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.step
    corr2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    params.version += 1
    return params, state


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_f1: float
    val_oa: float


@dataclass
class EpochCurve:
    records: List[EpochRecord] = field(default_factory=list)

    def append(self, train_loss, val_loss, val_f1, val_oa) -> EpochRecord:
        rec = EpochRecord(len(self.records) + 1, float(train_loss), float(val_loss),
                          float(val_f1), float(val_oa))
        self.records.append(rec)
        return rec

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> List[float]:
        return [getattr(r, name) for r in self.records]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("epoch,train_loss,val_loss,val_f1,val_oa\n")
            for r in self.records:
                fh.write(f"{r.epoch},{r.train_loss!r},{r.val_loss!r},{r.val_f1!r},{r.val_oa!r}\n")

    @classmethod
    def from_csv(cls, path) -> "EpochCurve":
        curve = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                curve.append(float(row["train_loss"]), float(row["val_loss"]),
                             float(row["val_f1"]), float(row["val_oa"]))
        return curve


def select_best_epoch(curve) -> int:
    """1-based epoch with the highest validation F1; earliest wins ties.

    Accepts an :class:`EpochCurve` or a plain sequence of F1 values.
    """
    f1 = curve.column("val_f1") if isinstance(curve, EpochCurve) else list(curve)
    if not f1:
        raise ValueError("empty curve")
    best = 0
    for i, v in enumerate(f1):
        if v > f1[best] or (math.isnan(f1[best]) and not math.isnan(v)):
            best = i
    return best + 1
