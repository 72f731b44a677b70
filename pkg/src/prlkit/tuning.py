"""Cross-validated grid search for the (tau_p, tau_r) detection thresholds.

Thresholds are tuned to maximize PPV subject to a sensitivity band
(default 90-95%) in a subject-level k-fold split. Lesion scores at every
candidate tau_p are precomputed once per lesion (they do not depend on
labels), so the expensive morphology never runs inside the fold loop and
held-out labels cannot influence threshold choice.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import InputError
from .metrics import CurvePoint, MetricsReport, detection_report

DEFAULT_BAND = (0.90, 0.95)


def default_tau_p_grid() -> tuple[float, ...]:
    """0.50 to 0.95 in steps of 0.05, plus 0.99."""
    return tuple(round(0.50 + 0.05 * k, 2) for k in range(10)) + (0.99,)


@dataclass(frozen=True)
class FoldAssignment:
    """Subject-level fold split; never splits one subject across folds."""

    n_folds: int
    subject_to_fold: Mapping[str, int]

    def fold_of(self, subject_id: str) -> int:
        try:
            return self.subject_to_fold[subject_id]
        except KeyError:
            raise InputError(f"subject {subject_id!r} has no fold assignment") from None


@dataclass(frozen=True)
class ScoredLesion:
    """One lesion's ground truth plus its score at every candidate tau_p.

    `has_adjacent_pair` is a per-lesion constant (it depends only on the
    FLAIR perimeter profile, not on tau_p); lesions without any adjacent
    measured slice pair are never predicted positive, matching the
    classifier's reading of the consecutive-slice rule.
    """

    subject_id: str
    lesion_id: int
    is_prl: bool
    scores: Mapping[float, float]
    has_adjacent_pair: bool = True

    def score_at(self, tau_p: float) -> float:
        try:
            return self.scores[tau_p]
        except KeyError:
            raise InputError(f"lesion {self.lesion_id} has no score at tau_p={tau_p}") from None


@dataclass(frozen=True)
class ThresholdChoice:
    tau_p: float
    tau_r: float
    sensitivity: float
    ppv: float
    fallback: bool = False


@dataclass
class FoldResult:
    fold: int
    tau_p: float
    tau_r: float
    val_sensitivity: float
    val_ppv: float
    fallback: bool


@dataclass
class TuningResult:
    band: tuple[float, float]
    per_fold: list[FoldResult]
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "band": list(self.band),
            "per_fold": [
                {
                    "fold": f.fold,
                    "tau_p": f.tau_p,
                    "tau_r": f.tau_r,
                    "val_sensitivity": f.val_sensitivity,
                    "val_ppv": f.val_ppv,
                    "fallback": f.fallback,
                }
                for f in self.per_fold
            ],
            "warnings": list(self.warnings),
        }


@dataclass(frozen=True)
class HeldoutVerdict:
    fold: int
    subject_id: str
    lesion_id: int
    score: float
    predicted: bool
    label: bool


@dataclass
class CrossValidationOutcome:
    tuning: TuningResult
    report: MetricsReport
    roc_points: list[CurvePoint]
    pr_points: list[CurvePoint]
    heldout: list[HeldoutVerdict]
    fold_curves: dict[int, tuple[list[CurvePoint], list[CurvePoint]]]


def make_folds(
    subjects: Sequence[tuple[str, int]],
    n_folds: int = 5,
    seed: int = 0,
) -> FoldAssignment:
    """Deterministic subject-level folds, stratified on PRL-positive status.

    `subjects` is (subject_id, positive_lesion_count). Subjects are
    shuffled with the seeded generator, positives first, then dealt
    round-robin, so per-fold positive counts differ from the mean by at
    most one, and so do total counts.
    """
    if n_folds < 2:
        raise InputError(f"n_folds must be at least 2, got {n_folds}")
    if len(subjects) < n_folds:
        raise InputError(f"{len(subjects)} subjects cannot fill {n_folds} folds")
    ids = [s for s, _ in subjects]
    if len(set(ids)) != len(ids):
        raise InputError("duplicate subject ids")
    rng = np.random.default_rng(seed)
    positives = sorted(s for s, n_pos in subjects if n_pos > 0)
    negatives = sorted(s for s, n_pos in subjects if n_pos <= 0)
    ordered = [positives[i] for i in rng.permutation(len(positives))]
    ordered += [negatives[i] for i in rng.permutation(len(negatives))]
    assignment = {subject: k % n_folds for k, subject in enumerate(ordered)}
    return FoldAssignment(n_folds=n_folds, subject_to_fold=assignment)


def _evaluate_pairs(scores: np.ndarray, labels: np.ndarray, eligible: np.ndarray, tau_r_values: np.ndarray):
    """Sensitivity and PPV of `eligible and score >= tau_r` per candidate tau_r."""
    pred = (scores[None, :] >= tau_r_values[:, None]) & eligible[None, :]
    tp = (pred & labels[None, :]).sum(axis=1)
    pred_pos = pred.sum(axis=1)
    n_pos = int(labels.sum())
    sens = tp / n_pos
    ppv = np.where(pred_pos > 0, tp / np.maximum(pred_pos, 1), 0.0)
    return sens, ppv


def grid_search_thresholds(
    train: Sequence[ScoredLesion],
    band: tuple[float, float] = DEFAULT_BAND,
    tau_p_grid: Sequence[float] | None = None,
) -> ThresholdChoice:
    """Pick (tau_p, tau_r) maximizing PPV within the sensitivity band.

    tau_r candidates are the score values attained on the training lesions
    at each tau_p (a finer sweep cannot change any decision). Ties break
    toward higher sensitivity, then higher tau_p, then higher tau_r. If no
    pair lands in the band, the pair with sensitivity closest above the
    lower edge is returned with the fallback flag set.
    """
    lo, hi = band
    if not (0.0 <= lo <= hi <= 1.0):
        raise InputError(f"invalid sensitivity band {band!r}")
    if not train:
        raise InputError("empty training set")
    labels = np.array([l.is_prl for l in train], dtype=bool)
    if not labels.any():
        raise InputError("no positive lesions in training set")
    eligible = np.array([l.has_adjacent_pair for l in train], dtype=bool)
    if tau_p_grid is None:
        tau_p_grid = sorted(train[0].scores.keys())
    feasible: list[tuple] = []
    above: list[tuple] = []
    for tau_p in tau_p_grid:
        scores = np.array([l.score_at(tau_p) for l in train], dtype=np.float64)
        tau_r_values = np.unique(scores)
        sens, ppv = _evaluate_pairs(scores, labels, eligible, tau_r_values)
        for j, tau_r in enumerate(tau_r_values):
            entry = (float(ppv[j]), float(sens[j]), float(tau_p), float(tau_r))
            if lo <= sens[j] <= hi:
                feasible.append(entry)
            elif sens[j] > hi:
                above.append(entry)
    if feasible:
        ppv_v, sens_v, tau_p, tau_r = max(feasible)
        return ThresholdChoice(tau_p=tau_p, tau_r=tau_r, sensitivity=sens_v, ppv=ppv_v, fallback=False)
    if not above:
        raise InputError("no threshold pair reaches the sensitivity band lower edge")
    # closest above the band: minimal sensitivity, then the usual tie-break
    best = min(above, key=lambda e: (e[1], -e[0], -e[2], -e[3]))
    ppv_v, sens_v, tau_p, tau_r = best
    return ThresholdChoice(tau_p=tau_p, tau_r=tau_r, sensitivity=sens_v, ppv=ppv_v, fallback=True)


def cross_validate(
    lesions: Sequence[ScoredLesion],
    folds: FoldAssignment,
    band: tuple[float, float] = DEFAULT_BAND,
    tau_p_grid: Sequence[float] | None = None,
) -> CrossValidationOutcome:
    """Tune on k-1 folds, evaluate on the held-out fold, pool the verdicts.

    Pooled confusion counts and curves come from held-out verdicts only;
    per-fold selection metrics (on the tuning folds) go into the
    TuningResult. A held-out fold without positives is evaluated anyway
    and recorded as a warning.
    """
    if not lesions:
        raise InputError("empty cohort")
    for lesion in lesions:
        folds.fold_of(lesion.subject_id)  # validate up front
    tuning = TuningResult(band=band, per_fold=[])
    heldout: list[HeldoutVerdict] = []
    fold_curves: dict[int, tuple[list[CurvePoint], list[CurvePoint]]] = {}
    for k in range(folds.n_folds):
        train = [l for l in lesions if folds.fold_of(l.subject_id) != k]
        held = [l for l in lesions if folds.fold_of(l.subject_id) == k]
        if not train:
            raise InputError(f"fold {k} leaves an empty training set")
        choice = grid_search_thresholds(train, band=band, tau_p_grid=tau_p_grid)
        tuning.per_fold.append(
            FoldResult(
                fold=k,
                tau_p=choice.tau_p,
                tau_r=choice.tau_r,
                val_sensitivity=choice.sensitivity,
                val_ppv=choice.ppv,
                fallback=choice.fallback,
            )
        )
        if choice.fallback:
            tuning.warnings.append(f"fold {k}: sensitivity band unattainable, fallback pair used")
        if held and not any(l.is_prl for l in held):
            tuning.warnings.append(f"fold {k}: held-out fold has no positive lesions")
        fold_records = []
        for lesion in held:
            score = lesion.score_at(choice.tau_p)
            verdict = HeldoutVerdict(
                fold=k,
                subject_id=lesion.subject_id,
                lesion_id=lesion.lesion_id,
                score=score,
                predicted=lesion.has_adjacent_pair and score >= choice.tau_r,
                label=lesion.is_prl,
            )
            heldout.append(verdict)
            fold_records.append((verdict.score, verdict.predicted, verdict.label))
        if fold_records:
            try:
                _, roc_pts, pr_pts = detection_report(fold_records)
                fold_curves[k] = (roc_pts, pr_pts)
            except InputError:
                pass
    heldout.sort(key=lambda v: (v.subject_id, v.lesion_id))
    records = [(v.score, v.predicted, v.label) for v in heldout]
    report, roc_points, pr_points = detection_report(records)
    report.warnings = tuning.warnings + report.warnings
    return CrossValidationOutcome(
        tuning=tuning,
        report=report,
        roc_points=roc_points,
        pr_points=pr_points,
        heldout=heldout,
        fold_curves=fold_curves,
    )
