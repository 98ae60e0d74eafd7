#!/usr/bin/env python3
"""
Tests for report validation, tables and figures
"""

import os
import sys
import tempfile

import numpy as np

from errors import ValidationError
from gesture_dataset import CLASS_NAMES
from metrics import PredictionRecord, evaluate_records
from reports import (ablation_rows, emit_figures, format_table, plot_finetune_curve, read_json,
                     validate_report, write_json)


def _report():
    records = [PredictionRecord('a', 0, 0, 4.0), PredictionRecord('b', 11, 8, 25.0)]
    return evaluate_records(records).to_dict()


def test_metrics_report_passes_validation():
    validate_report(_report())


def test_validation_lists_problems():
    report = _report()
    del report['dwa_raw']
    report['confusion_matrix'] = [[1, 0], [0]]
    report['distance_bins'][0].pop('accuracy')
    try:
        validate_report(report)
        assert False
    except ValidationError as e:
        message = str(e)
        assert "missing 'dwa_raw'" in message
        assert "not square" in message
        assert "distance bin 0" in message


def test_json_writer_handles_numpy_values():
    with tempfile.TemporaryDirectory() as tmp:
        path = write_json(os.path.join(tmp, 'out', 'r.json'),
                          {'n': np.int64(3), 'x': np.float32(0.5), 'v': np.arange(3)})
        assert read_json(path) == {'n': 3, 'x': 0.5, 'v': [0, 1, 2]}


def test_format_table_pads_columns_and_marks_missing():
    text = format_table([{'variant': 'full', 'success_rate': 0.5}, {'variant': 'no-dada'}],
                        ['variant', 'success_rate'])
    lines = text.splitlines()
    assert len(lines) == 4
    assert lines[2].startswith('full') and '0.5000' in lines[2]
    assert lines[3].rstrip().endswith('-')


def test_ablation_rows_sort_by_success_with_failures_last():
    rows = ablation_rows([
        {'variant': 'no-stg', 'status': 'ok', 'report': {'success_rate': 0.4}},
        {'variant': 'broken', 'status': 'failed', 'error': 'boom'},
        {'variant': 'full', 'status': 'ok', 'report': {'success_rate': 0.9}},
    ])
    assert [r['variant'] for r in rows] == ['full', 'no-stg', 'broken']
    assert rows[-1]['error'] == 'boom'


def test_figures_are_written():
    data_sweep = [{'fraction': 0.5, 'clips': 10, 'status': 'ok', 'mean': 0.4, 'std': 0.1},
                  {'fraction': 1.0, 'clips': 20, 'status': 'ok', 'mean': 0.6, 'std': 0.05}]
    frame_sweep = [{'n': 8, 'status': 'ok', 'success': 0.5, 'success_dynamic': 0.4, 'success_static': 0.7},
                   {'n': 16, 'status': 'ok', 'success': 0.6, 'success_dynamic': 0.5, 'success_static': 0.8}]
    with tempfile.TemporaryDirectory() as tmp:
        paths = emit_figures(tmp, _report(), CLASS_NAMES, data_sweep, frame_sweep)
        assert len(paths) == 4
        assert all(os.path.getsize(p) > 0 for p in paths)
        rows = [{'count': 0, 'seed': 0, 'status': 'ok', 'success': 0.6, 'success_new': 0.0, 'success_old': 0.9},
                {'count': 5, 'seed': 0, 'status': 'ok', 'success': 0.7, 'success_new': 0.5, 'success_old': 0.8}]
        curve = plot_finetune_curve(rows, os.path.join(tmp, 'finetune.png'))
        assert os.path.exists(curve)


if __name__ == "__main__":
    print("Report Tests")
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
