"""Detection and segmentation metrics: Dice, confusion rates, ROC/PR, kappa,
and the Dice + weighted binary cross-entropy loss as a standalone function.

Conventions pinned here so results are reproducible: ROC AUC is the
trapezoidal area over all distinct-score thresholds (identical to the
Mann-Whitney statistic with half credit for ties); PR AUC is stepwise
average precision, not trapezoidal; Dice of two empty masks is 1.0;
undefined rates are reported as None, never fabricated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import InputError
from .volume import Volume

BCE_EPS = 1e-7
DICE_SMOOTH = 1.0


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise InputError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn
        )

    @classmethod
    def from_predictions(cls, predicted: Sequence[bool], actual: Sequence[bool]) -> "ConfusionCounts":
        if len(predicted) != len(actual):
            raise InputError("prediction/label lengths differ")
        tp = fp = tn = fn = 0
        for p, a in zip(predicted, actual):
            if p and a:
                tp += 1
            elif p and not a:
                fp += 1
            elif not p and a:
                fn += 1
            else:
                tn += 1
        return cls(tp, fp, tn, fn)


class Rates(NamedTuple):
    sensitivity: float | None
    specificity: float | None
    ppv: float | None
    accuracy: float | None


def confusion_metrics(counts: ConfusionCounts) -> Rates:
    """Derived rates; a zero denominator yields None for that rate."""
    if counts.total == 0:
        raise InputError("confusion counts are all zero")
    pos = counts.tp + counts.fn
    neg = counts.tn + counts.fp
    pred_pos = counts.tp + counts.fp
    return Rates(
        sensitivity=counts.tp / pos if pos else None,
        specificity=counts.tn / neg if neg else None,
        ppv=counts.tp / pred_pos if pred_pos else None,
        accuracy=(counts.tp + counts.tn) / counts.total,
    )


@dataclass(frozen=True)
class CurvePoint:
    x: float
    y: float
    threshold: float


def _split_scores(scores: Sequence[tuple[float, bool]]) -> tuple[np.ndarray, np.ndarray]:
    if not scores:
        raise InputError("empty score list")
    s = np.asarray([v for v, _ in scores], dtype=np.float64)
    y = np.asarray([bool(lbl) for _, lbl in scores], dtype=bool)
    if not np.isfinite(s).all():
        raise InputError("scores must be finite")
    return s, y


def roc_curve_auc(scores: Sequence[tuple[float, bool]]) -> tuple[list[CurvePoint], float]:
    """ROC curve over all distinct score thresholds plus trapezoidal AUC.

    Points are (fpr, tpr) sorted by fpr ascending, starting at (0, 0) and
    ending at (1, 1). The trapezoidal area equals the probability that a
    random positive outscores a random negative, counting ties as 1/2.
    """
    s, y = _split_scores(scores)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise InputError("ROC needs at least one positive and one negative")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    distinct = np.flatnonzero(np.diff(s)) if len(s) > 1 else np.array([], dtype=int)
    cut = np.concatenate([distinct, [len(s) - 1]])  # last index of each distinct score
    tp = np.cumsum(y)[cut]
    fp = np.cumsum(~y)[cut]
    points = [CurvePoint(0.0, 0.0, math.inf)]
    points += [
        CurvePoint(float(f) / n_neg, float(t) / n_pos, float(s[i]))
        for t, f, i in zip(tp, fp, cut)
    ]
    auc = 0.0
    for a, b in zip(points, points[1:]):
        auc += (b.x - a.x) * (a.y + b.y) / 2.0
    return points, auc


def pr_curve_auc(scores: Sequence[tuple[float, bool]]) -> tuple[list[CurvePoint], float]:
    """Precision-recall curve plus stepwise average precision.

    Points are (recall, precision) over all distinct thresholds, sorted by
    recall ascending. AUC is sum over threshold steps of
    (recall_k - recall_{k-1}) * precision_k; no interpolation.
    """
    s, y = _split_scores(scores)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise InputError("PR curve needs at least one positive")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    distinct = np.flatnonzero(np.diff(s)) if len(s) > 1 else np.array([], dtype=int)
    cut = np.concatenate([distinct, [len(s) - 1]])
    tp = np.cumsum(y)[cut]
    predicted = cut + 1
    points = []
    auc = 0.0
    prev_recall = 0.0
    for t, n, i in zip(tp, predicted, cut):
        recall = float(t) / n_pos
        precision = float(t) / float(n)
        points.append(CurvePoint(recall, precision, float(s[i])))
        auc += (recall - prev_recall) * precision
        prev_recall = recall
    return points, auc


def cohens_kappa(table) -> float:
    """Chance-corrected agreement from a 2x2 contingency table.

    Rows are rater A's yes/no, columns rater B's. Expected agreement uses
    the marginal products; degenerate tables where chance agreement is 1
    return 1.0 (the observed agreement is then also 1).
    """
    t = np.asarray(table, dtype=np.float64)
    if t.shape != (2, 2):
        raise InputError(f"expected a 2x2 table, got shape {t.shape}")
    if (t < 0).any():
        raise InputError("table counts must be non-negative")
    n = t.sum()
    if n <= 0:
        raise InputError("table must contain at least one observation")
    p_obs = (t[0, 0] + t[1, 1]) / n
    row = t.sum(axis=1) / n
    col = t.sum(axis=0) / n
    p_exp = float(row @ col)
    if p_exp >= 1.0:
        return 1.0
    return float((p_obs - p_exp) / (1.0 - p_exp))


def _as_bool_array(mask) -> np.ndarray:
    data = mask.data if isinstance(mask, Volume) else np.asarray(mask)
    return data.astype(bool)


def dice_score(a, b) -> float:
    """Overlap 2|A∩B| / (|A|+|B|); two empty masks agree perfectly (1.0)."""
    arr_a = _as_bool_array(a)
    arr_b = _as_bool_array(b)
    if arr_a.shape != arr_b.shape:
        raise InputError(f"mask shapes differ: {arr_a.shape} vs {arr_b.shape}")
    size_a = int(arr_a.sum())
    size_b = int(arr_b.sum())
    if size_a == 0 and size_b == 0:
        return 1.0
    inter = int((arr_a & arr_b).sum())
    return 2.0 * inter / (size_a + size_b)


def dice_bce_loss(prob, truth, pos_weight: float = 50.0, mix: float = 0.5) -> float:
    """Linear mix of soft-Dice loss and positively-weighted binary cross entropy.

    loss = mix * (1 - softDice) + (1 - mix) * mean_v( -[w*y*ln p + (1-y)*ln(1-p)] )
    with softDice = (2*sum(p*y) + 1) / (sum(p) + sum(y) + 1). The clamp of
    p to [1e-7, 1 - 1e-7] guards the logarithms only; soft-Dice sees raw
    probabilities, so an exactly-right prediction has zero Dice loss. The
    BCE mean divides by the voxel count, not by the weight total.
    """
    if not (pos_weight > 0):
        raise InputError(f"pos_weight must be positive, got {pos_weight!r}")
    if not (0.0 <= mix <= 1.0):
        raise InputError(f"mix must be in [0,1], got {mix!r}")
    p = prob.data if isinstance(prob, Volume) else np.asarray(prob, dtype=np.float64)
    y = _as_bool_array(truth).astype(np.float64)
    if p.shape != y.shape:
        raise InputError(f"shapes differ: {p.shape} vs {y.shape}")
    p = p.astype(np.float64)
    soft_dice = (2.0 * float((p * y).sum()) + DICE_SMOOTH) / (float(p.sum()) + float(y.sum()) + DICE_SMOOTH)
    p_safe = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    bce = float(np.mean(-(pos_weight * y * np.log(p_safe) + (1.0 - y) * np.log1p(-p_safe))))
    return mix * (1.0 - soft_dice) + (1.0 - mix) * bce


@dataclass
class MetricsReport:
    """Everything the pipeline reports for one evaluation.

    Curve AUCs and kappa are None when the underlying quantity is undefined
    (single-class cohorts); Dice statistics are None when no segmentation
    pairs were supplied.
    """

    counts: ConfusionCounts
    sensitivity: float | None
    specificity: float | None
    ppv: float | None
    accuracy: float | None
    roc_auc: float | None = None
    pr_auc: float | None = None
    kappa: float | None = None
    dice_mean: float | None = None
    dice_std: float | None = None
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "counts": {"tp": self.counts.tp, "fp": self.counts.fp, "tn": self.counts.tn, "fn": self.counts.fn},
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "ppv": self.ppv,
            "accuracy": self.accuracy,
            "roc_auc": self.roc_auc,
            "pr_auc": self.pr_auc,
            "kappa": self.kappa,
            "dice_mean": self.dice_mean,
            "dice_std": self.dice_std,
            "pr_auc_convention": "average_precision_stepwise",
            "warnings": list(self.warnings),
        }


def detection_report(
    records: Sequence[tuple[float, bool, bool]],
    dice_values: Sequence[float] | None = None,
) -> tuple[MetricsReport, list[CurvePoint], list[CurvePoint]]:
    """Build a MetricsReport from (score, predicted, label) triples.

    Kappa here is the chance-corrected agreement between predictions and
    labels. Returns the report plus ROC and PR points (empty when the
    cohort is single-class and the curve is undefined).
    """
    if not records:
        raise InputError("no detection records to evaluate")
    preds = [r[1] for r in records]
    labels = [r[2] for r in records]
    counts = ConfusionCounts.from_predictions(preds, labels)
    rates = confusion_metrics(counts)
    warnings: list[str] = []
    scored = [(r[0], r[2]) for r in records]
    roc_points: list[CurvePoint] = []
    pr_points: list[CurvePoint] = []
    roc_auc = pr_auc = None
    try:
        roc_points, roc_auc = roc_curve_auc(scored)
    except InputError as exc:
        warnings.append(f"ROC undefined: {exc}")
    try:
        pr_points, pr_auc = pr_curve_auc(scored)
    except InputError as exc:
        warnings.append(f"PR undefined: {exc}")
    table = [[counts.tp, counts.fp], [counts.fn, counts.tn]]
    kappa = cohens_kappa(table)
    dice_mean = dice_std = None
    if dice_values is not None and len(dice_values) > 0:
        arr = np.asarray(dice_values, dtype=np.float64)
        dice_mean = float(arr.mean())
        dice_std = float(arr.std())  # population std
    report = MetricsReport(
        counts=counts,
        sensitivity=rates.sensitivity,
        specificity=rates.specificity,
        ppv=rates.ppv,
        accuracy=rates.accuracy,
        roc_auc=roc_auc,
        pr_auc=pr_auc,
        kappa=kappa,
        dice_mean=dice_mean,
        dice_std=dice_std,
        warnings=warnings,
    )
    return report, roc_points, pr_points
