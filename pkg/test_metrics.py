#!/usr/bin/env python3
"""
Tests for distance-weighted accuracy, stability and the standard metrics
"""

import sys

import numpy as np

from errors import UndefinedMetricError, ValidationError
from metrics import (PredictionRecord, average_precision, distance_bins, distance_weight, dwa,
                     evaluate_records, gss, standard_metrics)


def _record(true, pred, distance, windows=None, env='synthetic', clip='c'):
    return PredictionRecord(clip, true, pred, distance, list(windows or []), environment=env)


def test_distance_weight_endpoints():
    assert distance_weight(2.0) == 1.0
    assert abs(distance_weight(30.0) - 2.6) < 1e-12
    assert abs(distance_weight(16.0) - 1.8) < 1e-12


def test_dwa_hand_computed():
    records = [_record(0, 0, 2.0), _record(1, 2, 30.0), _record(3, 3, 16.0)]
    raw, normalized = dwa(records)
    assert abs(raw - 2.8 / 3) < 1e-12
    assert abs(normalized - 2.8 / 5.4) < 1e-12


def test_dwa_all_correct_normalizes_to_one():
    records = [_record(i % 13, i % 13, 2.0 + i) for i in range(20)]
    raw, normalized = dwa(records)
    assert normalized == 1.0
    assert raw > 1.0


def test_dwa_rejects_out_of_range_distance():
    try:
        dwa([_record(0, 0, 31.0)])
        assert False
    except ValidationError:
        pass


def test_gss_averages_window_agreement():
    records = [_record(0, 0, 5.0, windows=[0, 0, 1, 0]), _record(2, 2, 8.0, windows=[2, 2])]
    assert abs(gss(records) - 0.875) < 1e-12
    try:
        gss([_record(0, 0, 5.0)])
        assert False
    except ValidationError:
        pass


def test_average_precision_hand_computed():
    scores = np.array([0.9, 0.8, 0.7, 0.6])
    positives = np.array([1, 0, 1, 0])
    assert abs(average_precision(scores, positives) - (1.0 + 2.0 / 3.0) / 2) < 1e-12
    assert average_precision(scores, np.zeros(4)) == 0.0


def test_average_precision_ties_keep_input_order():
    scores = np.array([0.5, 0.5, 0.5])
    assert abs(average_precision(scores, np.array([0, 0, 1])) - 1.0 / 3.0) < 1e-12
    assert average_precision(scores, np.array([1, 0, 0])) == 1.0


def _slow_ap(scores, positives):
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    precisions, hits = [], 0
    for rank, i in enumerate(order, start=1):
        hits += positives[i]
        precisions.append(hits / rank)
    total = sum(max(precisions[k:]) for k, i in enumerate(order) if positives[i])
    return total / sum(positives) if sum(positives) else 0.0


def test_metrics_match_brute_force_on_random_record_sets():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(1, 7))
        records = []
        for i in range(n):
            true = int(rng.integers(0, 3))
            pred = int(rng.integers(0, 3))
            windows = [int(w) for w in rng.integers(0, 3, size=int(rng.integers(1, 5)))]
            records.append(_record(true, pred, float(rng.uniform(2.0, 30.0)), windows, clip=f"c{i}"))

        weights = [1.0 + 1.6 * (r.distance - 2.0) / 28.0 for r in records]
        hit_weight = sum(w for w, r in zip(weights, records) if r.true_label == r.predicted_label)
        raw, normalized = dwa(records)
        assert abs(raw - hit_weight / n) < 1e-12
        assert abs(normalized - hit_weight / sum(weights)) < 1e-12

        expected_gss = sum(sum(1 for w in r.window_predictions if w == r.true_label) / len(r.window_predictions)
                           for r in records) / n
        assert abs(gss(records) - expected_gss) < 1e-12

        scores = [float(s) for s in rng.random(n)]
        positives = [int(r.true_label == 0) for r in records]
        assert abs(average_precision(np.array(scores), np.array(positives)) - _slow_ap(scores, positives)) < 1e-12


def test_standard_metrics_on_perfect_predictions():
    records = [_record(c, c, 10.0) for c in (0, 1, 1, 11)]
    out = standard_metrics(records)
    assert out['success_rate'] == 1.0
    assert out['macro_f1'] == 1.0
    assert out['mean_average_precision'] == 1.0
    assert out['classes_present'] == [0, 1, 11]
    cm = np.array(out['confusion_matrix'])
    assert cm.shape == (13, 13) and cm[1, 1] == 2 and cm.sum() == 4


def test_distance_bins_assign_edges_half_open():
    records = [_record(0, 0, 6.0), _record(0, 1, 5.99), _record(0, 0, 30.0), _record(0, 1, 26.0)]
    bins = distance_bins(records)
    assert len(bins) == 7
    assert (bins[0].count, bins[0].accuracy) == (1, 0.0)
    assert (bins[1].count, bins[1].accuracy) == (1, 1.0)
    assert (bins[-1].count, bins[-1].accuracy) == (2, 0.5)
    assert bins[3].count == 0 and bins[3].accuracy is None
    try:
        distance_bins(records, edges=[2.0, 10.0, 6.0])
        assert False
    except ValidationError:
        pass


def test_empty_record_sets_are_undefined():
    for fn in (lambda: dwa([]), lambda: gss([]), lambda: standard_metrics([]), lambda: evaluate_records([])):
        try:
            fn()
            assert False
        except UndefinedMetricError:
            pass


def test_evaluate_records_report():
    records = [_record(0, 0, 4.0, windows=[0, 0], env='indoor'),
               _record(8, 9, 20.0, windows=[9, 8], env='outdoor'),
               _record(11, 11, 28.0, windows=[11, 11], env='outdoor')]
    report = evaluate_records(records)
    assert report.count == 3
    assert abs(report.success_rate - 2 / 3) < 1e-12
    assert abs(report.gss - (1.0 + 0.5 + 1.0) / 3) < 1e-12
    assert report.per_environment == {'indoor': 1.0, 'outdoor': 0.5}
    assert report.to_dict()['distance_bins'][0]['count'] == 1

    no_windows = evaluate_records([_record(0, 0, 4.0)])
    assert no_windows.gss is None


if __name__ == "__main__":
    print("Metrics Tests")
    print("=" * 30)
    failed = 0
    for name, fn in list(globals().items()):
        if name.startswith('test_') and callable(fn):
            try:
                fn()
                print(f"✓ {name}")
            except Exception as e:
                failed += 1
                print(f"❌ {name}: {e!r}")
    sys.exit(1 if failed else 0)
