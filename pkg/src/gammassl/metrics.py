"""Misclassification-detection metrics.

Positives are accurate pixels, "certain" predictions are scores strictly
above a threshold. Curves pool every valid pixel of a test set.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import IGNORE
from .errors import MetricError


@dataclass
class EvalRecord:
    score: np.ndarray
    accurate: np.ndarray
    valid: np.ndarray | None = None

    def flat(self) -> tuple[np.ndarray, np.ndarray]:
        score = np.asarray(self.score, dtype=np.float64).ravel()
        accurate = np.asarray(self.accurate, dtype=bool).ravel()
        if score.shape != accurate.shape:
            raise MetricError(f"score {score.shape} and accurate {accurate.shape} differ")
        if self.valid is None:
            return score, accurate
        valid = np.asarray(self.valid, dtype=bool).ravel()
        if valid.shape != score.shape:
            raise MetricError("valid mask shape differs from score")
        return score[valid], accurate[valid]


@dataclass
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray
    threshold: np.ndarray
    tp: np.ndarray
    n_valid: int


@dataclass
class MetricsReport:
    aupr: float
    max_f_half: float
    pac_at_max: float
    threshold_at_max: float
    curve: PRCurve
    f_sweep: np.ndarray  # F_0.5 at each curve point
    pac_sweep: np.ndarray  # p(a,c) at each curve point
    accuracy: float = float("nan")
    domain: str = ""


def _pool(records) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(records, EvalRecord):
        return records.flat()
    parts = [r.flat() for r in records]
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def pr_curve(records) -> PRCurve:
    """One point per distinct score: certain = score > next-lower distinct score.

    The last point is the all-certain endpoint (threshold min - 1).
    """
    score, accurate = _pool(records)
    n_pos = int(accurate.sum())
    if n_pos == 0:
        raise MetricError("no accurate (positive) pixels among valid pixels")
    order = np.argsort(-score, kind="stable")
    s = score[order]
    tp_cum = np.cumsum(accurate[order])
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])  # last index of each score group
    tp = tp_cum[ends]
    count = ends + 1
    thresholds = np.r_[s[ends[1:]], s[-1] - 1.0]
    return PRCurve(
        recall=tp / n_pos,
        precision=tp / count,
        threshold=thresholds,
        tp=tp,
        n_valid=s.size,
    )


def aupr(curve: PRCurve) -> float:
    """Average-precision step integral sum_i (R_i - R_{i-1}) * P_i with R_0 = 0."""
    dr = np.diff(np.r_[0.0, curve.recall])
    return float(np.sum(dr * curve.precision))


def f_beta(precision, recall, beta: float = 0.5):
    p = np.asarray(precision, dtype=np.float64)
    r = np.asarray(recall, dtype=np.float64)
    b2 = beta * beta
    denom = b2 * p + r
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.where(denom > 0, (1 + b2) * p * r / np.where(denom > 0, denom, 1.0), 0.0)
    return float(f) if f.ndim == 0 else f


def max_f_beta_with_pac(records, beta: float = 0.5, curve: PRCurve | None = None):
    """(max F_beta, p(a,c) at the maximiser, threshold); ties go to the lowest threshold."""
    curve = pr_curve(records) if curve is None else curve
    f = f_beta(curve.precision, curve.recall, beta)
    best = float(f.max())
    i = int(np.flatnonzero(f >= best - 1e-12)[-1])
    pac = float(curve.tp[i] / curve.n_valid)
    return float(f[i]), pac, float(curve.threshold[i])


def report(records, domain: str = "") -> MetricsReport:
    curve = pr_curve(records)
    f = f_beta(curve.precision, curve.recall, 0.5)
    max_f, pac, thr = max_f_beta_with_pac(records, 0.5, curve=curve)
    _, accurate = _pool(records)
    return MetricsReport(
        aupr=aupr(curve),
        max_f_half=max_f,
        pac_at_max=pac,
        threshold_at_max=thr,
        curve=curve,
        f_sweep=f,
        pac_sweep=curve.tp / curve.n_valid,
        accuracy=float(accurate.mean()),
        domain=domain,
    )


def accuracy_mask(pred: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """pred == label, with IGNORE (undefined-class) pixels always inaccurate."""
    labels = np.asarray(labels)
    return (np.asarray(pred) == labels) & (labels != IGNORE)


def evaluate_model(scorer, images, labels, domain_id: str = "") -> MetricsReport:
    """Pixel-pooled report for ``scorer(images) -> (score, pred)`` over a labelled test set."""
    score, pred = scorer(images)
    record = EvalRecord(score=score, accurate=accuracy_mask(pred, labels))
    return report(record, domain=domain_id)
