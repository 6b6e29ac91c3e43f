"""Two-step screening for the young group: a high-precision first threshold,
then a high-recall second threshold over first-pass negatives."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .errors import (
    InfeasiblePrecisionError,
    InfeasibleRecallError,
    InvalidArgumentError,
    UndefinedMetricError,
)
from .evalkit import PredictionSet, _pr_points

POSITIVE = "positive"
HIGH_RISK = "high_risk"
NEGATIVE = "negative"


@dataclass(frozen=True)
class PolicyTargets:
    precision_target: float = 0.95
    recall_target: float = 0.90

    def __post_init__(self):
        for name, v in (("precision_target", self.precision_target),
                        ("recall_target", self.recall_target)):
            if not 0.0 < v <= 1.0:
                raise InvalidArgumentError(f"{name} must be in (0, 1], got {v}")


@dataclass(frozen=True)
class TwoStepPolicy:
    t1: float
    t2: float
    achieved_precision_at_t1: float
    achieved_recall_at_t2: float
    collapsed: bool = False

    def __post_init__(self):
        if self.t1 < self.t2:
            raise InvalidArgumentError(f"t1 {self.t1} < t2 {self.t2}")


@dataclass(frozen=True)
class ScreenOutcome:
    subject_id: str
    score: float
    outcome: str  # positive / high_risk / negative
    decided_by_step: int  # 1 or 2


def calibrate(validation: PredictionSet, targets: PolicyTargets) -> TwoStepPolicy:
    """Pick (t1, t2) on a young-group validation set.

    t1 is the smallest distinct-score threshold with precision >= target
    (maximizing recall under the precision constraint); t2 is the largest with
    recall >= target. A crossing (t1 < t2) collapses to t1 = t2.
    """
    labels, scores = validation.labels_scores()
    if labels.sum() == 0 or labels.sum() == len(labels):
        raise UndefinedMetricError("calibration needs both positives and negatives")
    thr, precision, recall = _pr_points(labels, scores)

    ok_p = np.nonzero(precision >= targets.precision_target)[0]
    if ok_p.size == 0:
        raise InfeasiblePrecisionError(
            f"no threshold reaches precision {targets.precision_target}"
        )
    i1 = int(ok_p[-1])  # thresholds are descending; last feasible = smallest
    ok_r = np.nonzero(recall >= targets.recall_target)[0]
    if ok_r.size == 0:
        raise InfeasibleRecallError(f"no threshold reaches recall {targets.recall_target}")
    i2 = int(ok_r[0])  # largest threshold meeting the recall target

    t1, t2 = float(thr[i1]), float(thr[i2])
    collapsed = False
    if t1 < t2:
        t1, i1 = t2, i2
        collapsed = True
    return TwoStepPolicy(
        t1=t1,
        t2=t2,
        achieved_precision_at_t1=float(precision[i1]),
        achieved_recall_at_t2=float(recall[i2]),
        collapsed=collapsed,
    )


def apply_policy(policy: TwoStepPolicy, scores: dict[str, float]) -> list[ScreenOutcome]:
    """score >= t1 -> positive (step 1); else score >= t2 -> high_risk (step 2);
    else negative (step 2)."""
    outcomes = []
    for subject_id in sorted(scores):
        s = float(scores[subject_id])
        if s >= policy.t1:
            outcomes.append(ScreenOutcome(subject_id, s, POSITIVE, 1))
        elif s >= policy.t2:
            outcomes.append(ScreenOutcome(subject_id, s, HIGH_RISK, 2))
        else:
            outcomes.append(ScreenOutcome(subject_id, s, NEGATIVE, 2))
    return outcomes


@dataclass
class PolicySummary:
    step1_precision: float
    step1_recall: float
    combined_recall: float
    n_positive: int
    n_high_risk: int
    n_negative: int


def policy_report(policy: TwoStepPolicy, test: PredictionSet) -> PolicySummary:
    """Step-1 precision/recall plus recall of the combined flagged set
    (positive union high_risk), which equals single-threshold recall at t2."""
    labels, scores = test.labels_scores()
    n_pos_labels = int(labels.sum())
    if n_pos_labels == 0:
        raise UndefinedMetricError("policy_report needs at least one positive")

    step1 = scores >= policy.t1
    flagged = scores >= policy.t2
    tp1 = int((step1 & (labels == 1)).sum())
    step1_precision = tp1 / step1.sum() if step1.sum() else float("nan")
    step1_recall = tp1 / n_pos_labels
    combined_recall = int((flagged & (labels == 1)).sum()) / n_pos_labels
    return PolicySummary(
        step1_precision=float(step1_precision),
        step1_recall=float(step1_recall),
        combined_recall=float(combined_recall),
        n_positive=int(step1.sum()),
        n_high_risk=int((flagged & ~step1).sum()),
        n_negative=int((~flagged).sum()),
    )


def save_outcomes(outcomes: list[ScreenOutcome], path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["subject_id", "score", "outcome", "decided_by_step"])
        for o in outcomes:
            w.writerow([o.subject_id, f"{o.score:.17g}", o.outcome, o.decided_by_step])
