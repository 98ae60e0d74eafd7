#!/usr/bin/env python3
"""
Tests for sliding-window streaming, sequence voting and the status service
"""

import sys

import numpy as np

from errors import ValidationError
from gesture_synth import SyntheticSceneSpec, synth_clip
from preprocess import PreprocessConfig
from stgt import DiGNet, ModelConfig
from streaming import (StreamRunner, StreamState, StreamStatus, WindowPrediction, create_status_app,
                       fps_table, run_stream_worker, segment_votes, sequence_accuracy, sequence_correct,
                       window_count, window_predictions, window_sample, window_starts)


def _model():
    return DiGNet(ModelConfig(stem_channels=4, stem_stride=4, dada_channels=(8,), dada_strides=(2,),
                              ray_samples=1, offset_hidden=4, weight_hidden=4, stg_layers=1,
                              transformer_layers=1, transformer_heads=2))


def _cfg():
    return PreprocessConfig(keyframes=4, image_size=32)


def _sample(frames=10):
    return synth_clip(SyntheticSceneSpec(distance=6.0, gesture=3, frame_count=frames), seed=2)


def _pred(start, label, n=8):
    return WindowPrediction(start, start + n, label, [])


def test_window_count():
    assert window_count(84, 8) == 77
    assert window_count(84, 8, stride=4) == 20
    assert window_count(7, 8) == 0
    assert window_count(8, 8) == 1
    assert window_starts(12, 8, 2) == [0, 2, 4]
    try:
        window_count(10, 0)
        assert False
    except ValidationError:
        pass


def test_stream_state_predicts_every_stride_once_full():
    state = StreamState(3, stride=2)
    due = [state.push(np.full((2, 2, 3), i, np.uint8)) for i in range(7)]
    assert due == [False, False, True, False, True, False, True]
    assert state.window_start == 4
    assert [int(f[0, 0, 0]) for f in state.window()] == [4, 5, 6]
    assert state.fps == 0.0
    try:
        StreamState(0)
        assert False
    except ValidationError:
        pass


def test_window_sample_slices_frames_and_annotations():
    sample = _sample()
    part = window_sample(sample, 2, sample.video.frames[2:6])
    assert part.video.frame_count == 4
    assert np.array_equal(part.annotations.actor_mask, sample.annotations.actor_mask[2:6])
    assert part.clip_id.endswith('@2')
    assert part.label == sample.label


def test_window_center():
    assert _pred(0, 1).center == 3
    assert WindowPrediction(4, 7, 0, []).center == 5


def test_segment_votes_majority_and_ties():
    segments = [{'label': 1, 'start': 0, 'end': 10}, {'label': 2, 'start': 10, 'end': 20},
                {'label': 3, 'start': 20, 'end': 30}]
    predictions = [_pred(0, 1), _pred(2, 4), _pred(4, 1),          # centers 3, 5, 7
                   _pred(8, 2), _pred(10, 5), _pred(12, 5), _pred(6, 2)]   # centers 11, 13, 15, 9
    assert segment_votes(predictions, segments) == [1, 5, None]


def test_segment_vote_tie_goes_to_first_seen_label():
    segments = [{'label': 5, 'start': 0, 'end': 20}]
    predictions = [_pred(0, 5), _pred(1, 6), _pred(2, 6), _pred(3, 5)]
    assert segment_votes(predictions, segments) == [5]


def test_sequence_accuracy():
    segments = [{'label': 1, 'start': 0, 'end': 10}, {'label': 2, 'start': 10, 'end': 20}]
    good = [_pred(0, 1), _pred(1, 1), _pred(8, 2), _pred(9, 2)]
    bad = [_pred(0, 1), _pred(8, 3)]
    missing = [_pred(0, 1)]
    assert sequence_correct(good, segments)
    assert not sequence_correct(bad, segments)
    assert not sequence_correct(missing, segments)
    assert sequence_accuracy([(good, segments), (bad, segments)]) == 0.5
    try:
        sequence_accuracy([])
        assert False
    except ValidationError:
        pass


def test_runner_emits_one_prediction_per_window():
    runner = StreamRunner(_model(), n=8, stride=1, preprocess_cfg=_cfg())
    seen = []
    state = runner.run(_sample(10), on_prediction=lambda p, s: seen.append(p.start))
    assert seen == [0, 1, 2]
    assert [(p.start, p.end) for p in state.history] == [(0, 8), (1, 9), (2, 10)]
    assert all(len(p.logits) == 13 for p in state.history)
    assert state.fps > 0


def test_streamed_logits_match_offline_windows():
    runner = StreamRunner(_model(), n=8, stride=2, preprocess_cfg=_cfg())
    sample = _sample(12)
    streamed = np.array([p.logits for p in runner.run(sample).history])
    offline = runner.batch_logits(sample)
    assert offline.shape == (3, 13)
    assert np.allclose(streamed, offline, atol=1e-5)


def test_short_stream_gives_no_prediction():
    runner = StreamRunner(_model(), n=8, stride=1, preprocess_cfg=_cfg())
    state = runner.run(_sample(5))
    assert state.history == [] and state.frames_seen == 5
    assert runner.batch_logits(_sample(5)).shape == (0, 13)
    assert window_predictions(runner.model, [_sample(5)], 8, 1, _cfg()) == {_sample(5).clip_id: []}


def test_fps_table_rows():
    rows = fps_table(_model(), _sample(10), windows=[8, 20], preprocess_cfg=_cfg())
    assert [r['label'] for r in rows] == ['8-frame sequence', '20-frame sequence']
    assert rows[0]['windows'] == 3 and rows[0]['fps'] > 0
    assert rows[1]['fps'] is None and 'notice' in rows[1]


def test_status_service_endpoints():
    status = StreamStatus(8)
    client = create_status_app(status).test_client()

    response = client.get('/health')
    assert response.status_code == 200
    assert response.get_json()['status'] == 'healthy'

    body = client.get('/status').get_json()
    assert body['window_length'] == 8
    assert 'system_info' in body

    status.update(status='failed', last_error='boom')
    assert client.get('/health').get_json()['status'] == 'unhealthy'


def test_stream_worker_publishes_progress():
    runner = StreamRunner(_model(), n=8, stride=1, preprocess_cfg=_cfg())
    status = StreamStatus(8)
    run_stream_worker(runner, [_sample(10), _sample(9)], status)
    snap = status.snapshot()
    assert snap['status'] == 'finished'
    assert snap['clips_processed'] == 2
    assert snap['windows_processed'] == 5
    assert snap['last_prediction']['window'] == [1, 9]


if __name__ == "__main__":
    print("Streaming Tests")
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
