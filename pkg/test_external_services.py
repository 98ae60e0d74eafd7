#!/usr/bin/env python3
"""
Tests for the depth estimator and person detector HTTP adapters, with the
HTTP session stubbed out
"""

import sys
import json
import base64

import cv2
import numpy as np
import requests

from errors import ConfigurationError
from external_services import DepthEstimatorClient, PersonDetectorClient, encode_png


class FakeResponse:
    def __init__(self, body, status=200):
        self.body = body
        self.status_code = status

    def raise_for_status(self):
        if self.status_code >= 400:
            raise requests.HTTPError(f"status {self.status_code}")

    def json(self):
        return self.body


class FakeSession:
    def __init__(self, response=None, error=None):
        self.response = response
        self.error = error
        self.calls = []
        self.headers = {}

    def post(self, url, json=None, timeout=None):
        self.calls.append((url, json, timeout))
        if self.error is not None:
            raise self.error
        return self.response


def _frames(n=2, h=6, w=8):
    return np.random.default_rng(0).integers(0, 256, size=(n, h, w, 3), dtype=np.uint8)


def test_png_encoding_round_trips():
    frame = _frames(1)[0]
    raw = np.frombuffer(base64.b64decode(encode_png(frame)), dtype=np.uint8)
    decoded = cv2.cvtColor(cv2.imdecode(raw, cv2.IMREAD_COLOR), cv2.COLOR_BGR2RGB)
    assert np.array_equal(decoded, frame)


def test_depth_estimator_posts_images_and_checks_shape():
    frames = _frames()
    client = DepthEstimatorClient('http://depth.local/', timeout=5)
    client.session = FakeSession(FakeResponse({'depth': np.full((2, 6, 8), 7.5).tolist()}))
    depth = client.estimate(frames)
    assert depth.shape == (2, 6, 8) and depth.dtype == np.float32
    assert np.allclose(depth, 7.5)
    url, payload, timeout = client.session.calls[0]
    assert url == 'http://depth.local/depth' and timeout == 5
    assert len(payload['images']) == 2
    json.dumps(payload)

    client.session = FakeSession(FakeResponse({'depth': np.ones((2, 3, 8)).tolist()}))
    try:
        client.estimate(frames)
        assert False, "wrong depth shape accepted"
    except ConfigurationError:
        pass


def test_depth_estimator_failures_are_configuration_errors():
    client = DepthEstimatorClient('http://depth.local')
    client.session = FakeSession(error=requests.ConnectionError("refused"))
    try:
        client.estimate(_frames())
        assert False
    except ConfigurationError as e:
        assert 'constant' in str(e)

    client.base_url = None
    try:
        client.estimate(_frames())
        assert False
    except ConfigurationError:
        pass


def test_person_detector_keeps_best_scoring_person():
    detections = [
        [{'box': [1, 2, 3, 4], 'score': 0.5, 'label': 'person'},
         {'box': [0, 0, 5, 5], 'score': 0.9, 'label': 'person'},
         {'box': [2, 2, 2, 2], 'score': 0.99, 'label': 'dog'}],
        [{'box': [1, 1, 1, 1], 'score': 0.1, 'label': 'person'}],
    ]
    client = PersonDetectorClient('http://detector.local', min_score=0.3)
    client.session = FakeSession(FakeResponse({'detections': detections}))
    boxes = client.detect(_frames(3))
    assert boxes == [[0.0, 0.0, 5.0, 5.0], None, None]


def test_person_detector_failure_means_no_boxes():
    client = PersonDetectorClient('http://detector.local')
    client.session = FakeSession(FakeResponse({}, status=503))
    assert client.detect(_frames()) == [None, None]


if __name__ == "__main__":
    print("External Service Adapter Tests")
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
