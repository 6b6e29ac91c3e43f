"""AUPRC, per-age-group reporting with disparity, PR curves, and the
averaged-and-sorted feature L1 diagnostic."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .corpus import AGE_GROUPS, ELDERLY, HC, PD, YOUNG
from .errors import InvalidArgumentError, SchemaError, UndefinedMetricError

REPORT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class PredictionRow:
    sample_id: str
    age_group: str
    label: str  # PD or HC
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise InvalidArgumentError(
                f"{self.sample_id}: score {self.score} outside [0, 1]"
            )
        if self.label not in (PD, HC):
            raise InvalidArgumentError(f"{self.sample_id}: bad label {self.label!r}")
        if self.age_group not in AGE_GROUPS:
            raise InvalidArgumentError(f"{self.sample_id}: bad group {self.age_group!r}")


@dataclass
class PredictionSet:
    rows: list[PredictionRow]

    def __post_init__(self):
        ids = [r.sample_id for r in self.rows]
        if len(set(ids)) != len(ids):
            raise InvalidArgumentError("duplicate sample_ids in prediction set")

    def restrict(self, age_group: str) -> "PredictionSet":
        return PredictionSet([r for r in self.rows if r.age_group == age_group])

    def labels_scores(self) -> tuple[np.ndarray, np.ndarray]:
        labels = np.array([1 if r.label == PD else 0 for r in self.rows])
        scores = np.array([r.score for r in self.rows])
        return labels, scores

    def __len__(self):
        return len(self.rows)


def _pr_points(labels: np.ndarray, scores: np.ndarray):
    """(threshold, precision, recall) per distinct score, descending threshold.

    Ties share one threshold; a prediction counts as positive when
    score >= threshold.
    """
    labels = np.asarray(labels, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape or labels.ndim != 1 or labels.size == 0:
        raise InvalidArgumentError("labels and scores must be equal-length 1-D arrays")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetricError("no positive labels; PR metrics undefined")

    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    l_sorted = labels[order]
    tp = np.cumsum(l_sorted)
    fp = np.cumsum(1 - l_sorted)
    # Last index of each tie block = counts at threshold == that score.
    distinct = np.nonzero(np.diff(s_sorted, append=-np.inf))[0]
    thr = s_sorted[distinct]
    precision = tp[distinct] / (tp[distinct] + fp[distinct])
    recall = tp[distinct] / n_pos
    return thr, precision, recall


def average_precision(labels, scores) -> float:
    """Step-wise AP: sum of (R_i - R_{i-1}) * P_i over distinct thresholds."""
    _, precision, recall = _pr_points(np.asarray(labels), np.asarray(scores))
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * precision))


@dataclass
class PRCurve:
    thresholds: np.ndarray
    precisions: np.ndarray
    recalls: np.ndarray

    def area(self) -> float:
        prev = np.concatenate([[0.0], self.recalls[:-1]])
        return float(np.sum((self.recalls - prev) * self.precisions))

    def save_txt(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write("# threshold precision recall\n")
            for t, p, r in zip(self.thresholds, self.precisions, self.recalls):
                f.write(f"{t:.17g} {p:.17g} {r:.17g}\n")

    def save_png(self, path: str | os.PathLike, label: str = "") -> None:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(5, 4))
        ax.step(self.recalls, self.precisions, where="post", label=label or None)
        ax.set_xlabel("Recall")
        ax.set_ylabel("Precision")
        ax.set_xlim(0, 1.02)
        ax.set_ylim(0, 1.02)
        if label:
            ax.legend()
        fig.tight_layout()
        fig.savefig(os.fspath(path), dpi=120)
        plt.close(fig)


def pr_curve(labels, scores) -> PRCurve:
    thr, precision, recall = _pr_points(np.asarray(labels), np.asarray(scores))
    return PRCurve(thresholds=thr, precisions=precision, recalls=recall)


@dataclass
class GroupedEvalReport:
    auprc_average: float
    auprc_young: float
    auprc_elderly: float
    n_samples: int = 0
    variant: str = ""
    backbone: str = ""
    seed_info: dict = field(default_factory=dict)

    @property
    def delta(self) -> float:
        return self.auprc_elderly - self.auprc_young


def grouped_report(preds: PredictionSet, variant: str = "", backbone: str = "",
                   seed_info: dict | None = None) -> GroupedEvalReport:
    """Overall and per-group AUPRC plus the elderly-minus-young disparity."""
    for group in AGE_GROUPS:
        sub = preds.restrict(group)
        if not any(r.label == PD for r in sub.rows):
            raise UndefinedMetricError(f"group {group!r} has no positive labels")
    labels, scores = preds.labels_scores()
    ly, sy = preds.restrict(YOUNG).labels_scores()
    le, se = preds.restrict(ELDERLY).labels_scores()
    return GroupedEvalReport(
        auprc_average=average_precision(labels, scores),
        auprc_young=average_precision(ly, sy),
        auprc_elderly=average_precision(le, se),
        n_samples=len(preds),
        variant=variant,
        backbone=backbone,
        seed_info=seed_info or {},
    )


def export_report(report: GroupedEvalReport, path: str | os.PathLike) -> None:
    payload = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "variant": report.variant,
        "backbone": report.backbone,
        "auprc_average": report.auprc_average,
        "auprc_young": report.auprc_young,
        "auprc_elderly": report.auprc_elderly,
        "delta": report.delta,
        "n_samples": report.n_samples,
        "seed_info": report.seed_info,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")


def load_report(path: str | os.PathLike) -> GroupedEvalReport:
    with open(path, encoding="utf-8") as f:
        payload = json.load(f)
    required = {
        "schema_version", "variant", "backbone", "auprc_average",
        "auprc_young", "auprc_elderly", "delta", "n_samples", "seed_info",
    }
    missing = required - payload.keys()
    if missing:
        raise SchemaError(f"{path}: missing report fields {sorted(missing)}")
    if payload["schema_version"] != REPORT_SCHEMA_VERSION:
        raise SchemaError(
            f"{path}: schema version {payload['schema_version']} != {REPORT_SCHEMA_VERSION}"
        )
    report = GroupedEvalReport(
        auprc_average=payload["auprc_average"],
        auprc_young=payload["auprc_young"],
        auprc_elderly=payload["auprc_elderly"],
        n_samples=payload["n_samples"],
        variant=payload["variant"],
        backbone=payload["backbone"],
        seed_info=payload["seed_info"],
    )
    if abs(report.delta - payload["delta"]) > 1e-12:
        raise SchemaError(
            f"{path}: stored delta {payload['delta']} inconsistent with "
            f"elderly - young = {report.delta}"
        )
    return report


@dataclass
class FeatureDistanceReport:
    """L1 distance between averaged-then-sorted PD and HC feature vectors,
    keyed by (split, age_group)."""

    distances: dict[tuple[str, str], float]
    sorted_means: dict[tuple[str, str, str], np.ndarray] = field(default_factory=dict)


def feature_distance(
    features: dict[tuple[str, str, str], np.ndarray]
) -> FeatureDistanceReport:
    """`features` maps (split, age_group, label) to an (n_samples, dim) array.

    Per cell: mean over samples, components sorted descending; per
    (split, group): L1 distance between the PD and HC sorted means.
    """
    cells: dict[tuple[str, str, str], np.ndarray] = {}
    pairs = sorted({(split, group) for (split, group, _) in features})
    for split, group in pairs:
        for label in (PD, HC):
            arr = features.get((split, group, label))
            if arr is None or len(arr) == 0:
                raise UndefinedMetricError(
                    f"empty feature cell ({split!r}, {group!r}, {label!r})"
                )
            mean = np.asarray(arr, dtype=np.float64).mean(axis=0)
            cells[(split, group, label)] = np.sort(mean)[::-1]
    distances = {
        (split, group): float(
            np.abs(cells[(split, group, PD)] - cells[(split, group, HC)]).sum()
        )
        for split, group in pairs
    }
    return FeatureDistanceReport(distances=distances, sorted_means=cells)
