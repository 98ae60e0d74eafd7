#!/usr/bin/env python3
"""
Check that every module imports and the command line runs end to end on a
tiny synthetic benchmark
"""

import os
import sys
import json
import tempfile

from errors import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, NumericError, ValidationError, exit_code_for


def test_imports():
    """All required packages and project modules import"""
    print("Testing imports...")
    import numpy
    import torch
    import cv2
    import sklearn
    import matplotlib
    import flask
    import psutil
    import pytz
    import requests
    import dotenv

    import config
    import gesture_dataset
    import degradation
    import gesture_synth
    import external_services
    import preprocess
    import dada
    import stgt
    import rstdal
    import metrics
    import trainer
    import streaming
    import reports
    import experiment_config
    import gradient_check
    import dig_net_cli


def test_exit_codes():
    assert exit_code_for(ValidationError("bad")) == EXIT_VALIDATION
    assert exit_code_for(NumericError("nan", stage="dada")) == EXIT_RUNTIME
    assert exit_code_for(RuntimeError("boom")) == EXIT_RUNTIME


def test_cli_synth_writes_benchmark():
    from dig_net_cli import main
    with tempfile.TemporaryDirectory() as tmp:
        config_path = os.path.join(tmp, 'experiment.json')
        with open(config_path, 'w') as f:
            json.dump({'schema_version': 1, 'synth': {'frame_count': 6, 'distance_range': [4.0, 10.0]}}, f)
        out = os.path.join(tmp, 'bench')
        code = main(['--config', config_path, '--out-dir', out, 'synth', '--count', '3', '--classes', 'stop'])
        assert code == EXIT_OK
        with open(os.path.join(out, 'manifest.jsonl')) as f:
            rows = [json.loads(line) for line in f if line.strip()]
        assert len(rows) == 3
        assert all(r['label'] == 'stop' for r in rows)
        assert os.path.exists(os.path.join(out, 'experiment.json'))


def test_cli_robustness_reports_every_condition():
    import config
    from dig_net_cli import main
    from gesture_dataset import CLASS_NAMES
    from stgt import DiGNet, ModelConfig, save_checkpoint

    model_cfg = ModelConfig(stem_channels=4, stem_stride=4, dada_channels=(8,), dada_strides=(2,), ray_samples=1,
                            offset_hidden=4, weight_hidden=4, stg_layers=1, transformer_layers=1,
                            transformer_heads=2)
    with tempfile.TemporaryDirectory() as tmp:
        checkpoint = os.path.join(tmp, 'model.pt')
        save_checkpoint(checkpoint, DiGNet(model_cfg), CLASS_NAMES)
        config_path = os.path.join(tmp, 'experiment.json')
        with open(config_path, 'w') as f:
            json.dump({'schema_version': 1,
                       'preprocess': {'keyframes': 4, 'image_size': 32, 'window': 8},
                       'synth': {'frame_count': 8}}, f)
        code = main(['--config', config_path, '--out-dir', tmp, 'robustness',
                     '--checkpoint', checkpoint, '--count', '2'])
        assert code == EXIT_OK
        with open(os.path.join(tmp, 'robustness.json')) as f:
            rows = json.load(f)
    assert len(rows) == len(config.CLUTTER_PRESETS) + len(config.DEGRADATION_PRESETS)
    assert all(r['status'] == 'ok' and 0.0 <= r['success_rate'] <= 1.0 for r in rows)


def test_cli_rejects_bad_config_and_missing_inputs():
    from dig_net_cli import main
    with tempfile.TemporaryDirectory() as tmp:
        config_path = os.path.join(tmp, 'experiment.json')
        with open(config_path, 'w') as f:
            json.dump({'schema_version': 2}, f)
        assert main(['--config', config_path, '--out-dir', tmp, 'synth']) == EXIT_VALIDATION
        assert main(['--out-dir', tmp, 'train']) == EXIT_VALIDATION
        assert main(['--out-dir', tmp, 'train', '--manifest', os.path.join(tmp, 'none.jsonl')]) == EXIT_VALIDATION


if __name__ == "__main__":
    print("DiG-Net Import and CLI Test")
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
