import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairvoice.corpus import ELDERLY, HC, PD, YOUNG
from fairvoice.errors import SchemaError, UndefinedMetricError
from fairvoice.evalkit import (
    GroupedEvalReport,
    PredictionRow,
    PredictionSet,
    average_precision,
    export_report,
    feature_distance,
    grouped_report,
    load_report,
    pr_curve,
)


def ap_oracle(labels, scores):
    """Brute force: enumerate every distinct threshold, count TP/FP from raw
    comparisons, sum (R_i - R_{i-1}) * P_i."""
    labels = list(labels)
    scores = list(scores)
    n_pos = sum(labels)
    assert n_pos > 0
    thresholds = sorted(set(scores), reverse=True)
    ap, prev_recall = 0.0, 0.0
    for t in thresholds:
        tp = sum(1 for l, s in zip(labels, scores) if s >= t and l == 1)
        fp = sum(1 for l, s in zip(labels, scores) if s >= t and l == 0)
        precision = tp / (tp + fp)
        recall = tp / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


class TestAveragePrecision:
    def test_hand_cases(self):
        assert average_precision([1, 0, 1], [0.9, 0.8, 0.7]) == pytest.approx(
            0.8333, abs=5e-5
        )
        assert average_precision([1, 1, 0], [0.9, 0.8, 0.1]) == 1.0
        assert average_precision([0, 0, 1], [0.9, 0.8, 0.7]) == pytest.approx(
            0.3333, abs=5e-5
        )

    def test_exhaustive_small_sets(self):
        # All label patterns up to size 8, distinct scores.
        for n in range(1, 9):
            scores = [(n - i) / n for i in range(n)]
            for pattern in itertools.product([0, 1], repeat=n):
                if sum(pattern) == 0:
                    continue
                assert average_precision(pattern, scores) == pytest.approx(
                    ap_oracle(pattern, scores), abs=1e-12
                )

    def test_random_tied_sets(self, rng):
        for _ in range(1000):
            n = int(rng.integers(2, 12))
            labels = rng.integers(0, 2, size=n)
            if labels.sum() == 0:
                labels[0] = 1
            scores = rng.integers(0, 4, size=n) / 3.0  # heavy ties
            assert average_precision(labels, scores) == pytest.approx(
                ap_oracle(labels, scores), abs=1e-12
            )

    def test_no_positives_error(self):
        with pytest.raises(UndefinedMetricError):
            average_precision([0, 0], [0.1, 0.2])

    def test_all_ties_equal_prevalence(self):
        assert average_precision([1, 0, 0, 1], [0.5] * 4) == pytest.approx(0.5)

    @given(
        st.lists(
            st.tuples(st.integers(0, 1), st.integers(0, 100)),
            min_size=2,
            max_size=20,
        ).filter(lambda rows: any(l for l, _ in rows))
    )
    @settings(max_examples=200, deadline=None)
    def test_monotone_transform_invariance(self, rows):
        labels = [l for l, _ in rows]
        scores = [s / 100 for _, s in rows]
        transformed = [0.1 + 0.8 * (s**2 + s) / 2 for s in scores]  # strictly increasing
        assert average_precision(labels, scores) == pytest.approx(
            average_precision(labels, transformed), abs=1e-12
        )

    @given(
        st.lists(
            st.tuples(st.integers(0, 1), st.floats(0, 1, allow_nan=False)),
            min_size=1,
            max_size=30,
        ).filter(lambda rows: any(l for l, _ in rows))
    )
    @settings(max_examples=200, deadline=None)
    def test_bounds(self, rows):
        ap = average_precision([l for l, _ in rows], [s for _, s in rows])
        assert 0.0 <= ap <= 1.0


class TestPRCurve:
    def test_perfect_ranking_hits_corner(self):
        c = pr_curve([1, 1, 0], [0.9, 0.8, 0.1])
        assert (1.0, 1.0) in set(zip(c.precisions.round(12), c.recalls.round(12)))

    def test_all_ties_single_point(self):
        c = pr_curve([1, 0, 0, 1], [0.5] * 4)
        assert len(c.thresholds) == 1
        assert c.precisions[0] == pytest.approx(0.5)
        assert c.recalls[0] == 1.0

    def test_area_matches_ap(self, rng):
        for _ in range(50):
            labels = rng.integers(0, 2, size=15)
            if labels.sum() == 0:
                labels[0] = 1
            scores = rng.random(15).round(1)
            c = pr_curve(labels, scores)
            assert c.area() == pytest.approx(average_precision(labels, scores), abs=1e-12)
            assert np.all(np.diff(c.recalls) >= 0)
            assert c.recalls[-1] == 1.0


def preds_from(young, elderly):
    rows = []
    for i, (label, score) in enumerate(young):
        rows.append(PredictionRow(f"y{i}", YOUNG, label, score))
    for i, (label, score) in enumerate(elderly):
        rows.append(PredictionRow(f"e{i}", ELDERLY, label, score))
    return PredictionSet(rows)


class TestGroupedReport:
    # Published (young, elderly, delta) AUPRC triples whose delta equals
    # elderly - young at 4 decimal places.
    CONSISTENT_PAIRS = [
        (0.6517, 0.9739, 0.3222),
        (0.6710, 0.9714, 0.3004),
        (0.6728, 0.9596, 0.2868),
        (0.7488, 0.9810, 0.2322),
        (0.6735, 0.9736, 0.3001),
        (0.6675, 0.9752, 0.3077),
        (0.6764, 0.9606, 0.2842),
        (0.6947, 0.9804, 0.2857),
        (0.7221, 0.9792, 0.2571),
    ]
    # Triples where the published delta was evidently computed before rounding
    # the operands: it differs from elderly - young by exactly one unit in the
    # fourth decimal place.
    PREROUNDED_PAIRS = [
        (0.6912, 0.9727, 0.2814),
        (0.6994, 0.9806, 0.2811),
        (0.7541, 0.9869, 0.2327),
    ]

    def test_delta_identity_table_rows(self):
        for young, elderly, delta in self.CONSISTENT_PAIRS:
            r = GroupedEvalReport(auprc_average=0.0, auprc_young=young, auprc_elderly=elderly)
            assert abs(r.delta - delta) <= 1e-12

    def test_delta_identity_prerounded_rows(self):
        for young, elderly, delta in self.PREROUNDED_PAIRS:
            r = GroupedEvalReport(auprc_average=0.0, auprc_young=young, auprc_elderly=elderly)
            assert abs(r.delta - delta) <= 1e-4 + 1e-12

    def test_symmetric_groups_zero_delta(self):
        data = [(PD, 0.9), (HC, 0.4), (PD, 0.7), (HC, 0.2)]
        r = grouped_report(preds_from(data, data))
        assert r.delta == 0.0

    def test_group_without_positives_named(self):
        p = preds_from([(HC, 0.5), (HC, 0.2)], [(PD, 0.9), (HC, 0.1)])
        with pytest.raises(UndefinedMetricError, match="young"):
            grouped_report(p)

    def test_round_trip(self, tmp_path):
        p = preds_from(
            [(PD, 0.9), (HC, 0.4), (PD, 0.3)], [(PD, 0.95), (HC, 0.1), (PD, 0.8)]
        )
        r = grouped_report(p, variant="plain", backbone="tinytest", seed_info={"seed": 1})
        path = tmp_path / "r.json"
        export_report(r, path)
        back = load_report(path)
        assert back == r
        assert abs(back.delta - r.delta) <= 1e-12

    def test_missing_field_schema_error(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"schema_version": 1, "delta": 0.0}')
        with pytest.raises(SchemaError):
            load_report(path)

    def test_tampered_delta_rejected(self, tmp_path):
        import json

        p = preds_from([(PD, 0.9), (HC, 0.4)], [(PD, 0.95), (HC, 0.1)])
        r = grouped_report(p)
        path = tmp_path / "r.json"
        export_report(r, path)
        payload = json.loads(path.read_text())
        payload["delta"] += 0.1
        path.write_text(json.dumps(payload))
        with pytest.raises(SchemaError):
            load_report(path)


class TestFeatureDistance:
    def test_hand_example(self):
        feats = {
            ("train", YOUNG, PD): np.array([[1.0, 3.0], [3.0, 1.0]]),
            ("train", YOUNG, HC): np.array([[0.0, 0.0], [0.0, 2.0]]),
        }
        r = feature_distance(feats)
        assert r.distances[("train", YOUNG)] == pytest.approx(3.0)
        np.testing.assert_allclose(r.sorted_means[("train", YOUNG, PD)], [2.0, 2.0])
        np.testing.assert_allclose(r.sorted_means[("train", YOUNG, HC)], [1.0, 0.0])

    def test_identical_cells_zero(self, rng):
        arr = rng.random((5, 16))
        r = feature_distance({("test", ELDERLY, PD): arr, ("test", ELDERLY, HC): arr.copy()})
        assert r.distances[("test", ELDERLY)] == 0.0

    def test_sample_order_invariance(self, rng):
        pd_feats = rng.random((6, 8))
        hc_feats = rng.random((4, 8))
        a = feature_distance({("t", YOUNG, PD): pd_feats, ("t", YOUNG, HC): hc_feats})
        b = feature_distance(
            {("t", YOUNG, PD): pd_feats[::-1], ("t", YOUNG, HC): hc_feats[::-1]}
        )
        assert a.distances == b.distances

    def test_joint_component_permutation_invariance(self, rng):
        pd_feats = rng.random((6, 8))
        hc_feats = rng.random((4, 8))
        perm = rng.permutation(8)
        a = feature_distance({("t", YOUNG, PD): pd_feats, ("t", YOUNG, HC): hc_feats})
        b = feature_distance(
            {("t", YOUNG, PD): pd_feats[:, perm], ("t", YOUNG, HC): hc_feats[:, perm]}
        )
        assert a.distances[("t", YOUNG)] == pytest.approx(b.distances[("t", YOUNG)])

    def test_empty_cell_named(self):
        with pytest.raises(UndefinedMetricError, match="HC"):
            feature_distance({("t", YOUNG, PD): np.ones((2, 3))})
