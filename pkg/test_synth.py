#!/usr/bin/env python3
"""
Tests for the synthetic long-range gesture generator
"""

import os
import sys
import math
import tempfile

import numpy as np

import config
from errors import GenerationError, ValidationError
from gesture_dataset import CLASS_NAMES, load_manifest
from degradation import DegradationConfig
from gesture_synth import (NULL_LABEL, SyntheticSceneSpec, benchmark_items, generate_benchmark,
                           gesture_pose, resolve_classes, synth_clip, synth_sequence)


def _still_spec(distance, gesture=NULL_LABEL, **kw):
    return SyntheticSceneSpec(distance=distance, gesture=gesture, idle_motion=0.0, jitter_degrees=0.0,
                              frame_count=kw.pop('frame_count', 3), **kw)


def _measured_height(sample) -> int:
    rows = np.nonzero(sample.annotations.actor_mask[0].max(axis=1) >= 128)[0]
    return int(rows.max() - rows.min() + 1)


def test_actor_height_follows_pinhole_law():
    heights = {}
    for distance in (4.0, 8.0, 15.0, 30.0):
        spec = _still_spec(distance)
        heights[distance] = _measured_height(synth_clip(spec, seed=1))
        assert abs(heights[distance] - spec.actor_height) <= 1.5, (distance, heights[distance], spec.actor_height)
    assert heights[4.0] > heights[8.0] > heights[15.0] > heights[30.0]
    assert abs(heights[30.0] - 0.5 * heights[15.0]) <= 1.5


def test_actor_below_minimum_size_is_rejected():
    spec = SyntheticSceneSpec(distance=30.0, gesture=0, focal_scale=100.0)
    try:
        synth_clip(spec, seed=0)
        assert False, "tiny actor rendered"
    except GenerationError as e:
        assert "actor below minimum renderable size" in str(e)


def test_clean_actor_contrast_equals_illumination_gain():
    spec = _still_spec(4.0, environment='synthetic')
    sample = synth_clip(spec, DegradationConfig(), seed=2)
    full = sample.annotations.actor_mask == 255
    assert full.any()
    values = sample.video.frames[..., 0][full]
    expected = config.BACKGROUND_LEVEL + config.ACTOR_BASE_CONTRAST * spec.illumination_gain
    assert (values == int(round(expected))).all()
    untouched = sample.annotations.actor_mask == 0
    assert (sample.video.frames[..., 0][untouched] == int(config.BACKGROUND_LEVEL)).all()


def test_attenuation_scales_actor_contrast():
    # contrast chosen so that both clean and attenuated levels are near-integer
    gain = 136.0 / config.ACTOR_BASE_CONTRAST
    spec = _still_spec(5.0, illumination_gain=gain)
    clean = synth_clip(spec, DegradationConfig(), seed=3)
    hazy = synth_clip(spec, DegradationConfig(attenuation=0.2), seed=3)
    assert np.array_equal(clean.annotations.actor_mask, hazy.annotations.actor_mask)

    full = clean.annotations.actor_mask == 255
    background = config.BACKGROUND_LEVEL
    clean_contrast = clean.video.frames[..., 0][full].astype(float).mean() - background
    hazy_contrast = hazy.video.frames[..., 0][full].astype(float).mean() - background
    ratio = hazy_contrast / clean_contrast
    assert abs(ratio / math.exp(-1.0) - 1.0) < 0.01, ratio


def test_brightest_actor_stays_below_full_scale():
    for name, env in config.ENVIRONMENT_PRESETS.items():
        gain = env['illumination_gain'] * (1.0 + config.ILLUMINATION_JITTER)
        assert env['background_level'] + config.ACTOR_BASE_CONTRAST * gain <= 255.0, name

    env = config.ENVIRONMENT_PRESETS['outdoor-sun']
    gain = env['illumination_gain'] * (1.0 + config.ILLUMINATION_JITTER)
    spec = _still_spec(4.0, environment='outdoor-sun', illumination_gain=gain)
    sample = synth_clip(spec, DegradationConfig(), seed=4)
    full = sample.annotations.actor_mask == 255
    expected = env['background_level'] + config.ACTOR_BASE_CONTRAST * gain
    median = float(np.median(sample.video.frames[..., 0][full]))
    assert median < 255.0
    assert abs(median - expected) < 2.0, (median, expected)


def test_synth_clip_is_deterministic_per_seed():
    spec = SyntheticSceneSpec(distance=12.0, gesture=CLASS_NAMES.index('beckoning'), frame_count=6)
    deg = DegradationConfig.preset('moderate')
    a, b = synth_clip(spec, deg, seed=5), synth_clip(spec, deg, seed=5)
    assert np.array_equal(a.video.frames, b.video.frames)
    assert np.array_equal(a.annotations.actor_mask, b.annotations.actor_mask)
    c = synth_clip(spec, deg, seed=6)
    assert not np.array_equal(a.video.frames, c.video.frames)
    assert a.label == spec.gesture and a.distance == 12.0
    assert a.metadata['seed'] == 5


def test_confusable_pairs_share_the_starting_pose():
    for a, b in (('go-back', 'stop'), ('go-up', 'beckoning'), ('turn-around', 'pointing')):
        for side in (1, -1):
            assert gesture_pose(a, 0.0, 0.0, side) == gesture_pose(b, 0.0, 0.0, side)
    assert gesture_pose('go-back', math.pi, 0.5, 1) != gesture_pose('stop', math.pi, 0.5, 1)


def test_lateral_moves_sweep_in_opposite_directions():
    right = [gesture_pose('move-right', 0.0, c, 1).fore for c in (0.1, 0.5, 0.9)]
    left = [gesture_pose('move-left', 0.0, c, 1).fore for c in (0.1, 0.5, 0.9)]
    assert right[0] > right[1] > right[2]
    assert left[0] < left[1] < left[2]


def test_sequence_records_segments():
    spec = SyntheticSceneSpec(distance=6.0, gesture=0, frame_count=10)
    labels = [0, CLASS_NAMES.index('stop'), CLASS_NAMES.index('move-right')]
    sample = synth_sequence(spec, labels, seed=1, gap_frames=5)
    segments = sample.metadata['segments']
    assert [(s['label'], s['start'], s['end']) for s in segments] == [(0, 0, 10), (11, 15, 25), (3, 30, 40)]
    assert sample.video.frame_count == 40
    frame_labels = sample.metadata['frame_labels']
    assert frame_labels[10:15] == [NULL_LABEL] * 5
    try:
        synth_sequence(spec, [], seed=1)
        assert False
    except ValidationError:
        pass


def test_benchmark_items_are_balanced_and_seeded():
    items = benchmark_items(26, seed=4)
    assert [i.clip_id for i in items] == [i.clip_id for i in benchmark_items(26, seed=4)]
    counts = np.bincount([i.spec.gesture for i in items], minlength=13)
    assert (counts == 2).all()
    splits = [i.split for i in items]
    assert (splits.count('train'), splits.count('val'), splits.count('test')) == (18, 4, 4)
    assert all(config.MIN_DISTANCE <= i.spec.distance <= config.MAX_DISTANCE for i in items)


def test_resolve_classes_groups():
    assert resolve_classes(['dynamic']) == list(range(8))
    assert resolve_classes(['static']) == [8, 9, 10, 11]
    assert resolve_classes(['stop', 'null']) == [11, 12]
    assert len(resolve_classes(None)) == 13


def test_generate_benchmark_writes_loadable_manifest():
    items = benchmark_items(3, seed=0, distance_range=(4.0, 10.0), frame_count=4)
    with tempfile.TemporaryDirectory() as tmp:
        generate_benchmark(tmp, items, workers=2)
        samples = load_manifest(os.path.join(tmp, 'manifest.jsonl'))
        assert [s.clip_id for s in samples] == [i.clip_id for i in items]
        loaded = samples[0].load()
        assert loaded.video.frame_count == 4
        assert loaded.annotations.actor_mask.shape == (4, config.SYNTH_FRAME_HEIGHT, config.SYNTH_FRAME_WIDTH)


if __name__ == "__main__":
    print("Synthetic Generator Tests")
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
