"""
HTTP adapters for the pretrained models the pipeline consumes but does not
train: a monocular depth estimator and a person detector.

Both services take JSON `{"images": [<base64 PNG>, ...]}`. The depth
service answers `{"depth": [[[...]]]}` (meters, one map per image); the
detector answers `{"detections": [[{"box": [x, y, w, h], "score": s,
"label": "person"}, ...], ...]}`.
"""

import base64
import logging
from typing import List, Optional

import cv2
import numpy as np
import requests

import config
from errors import ConfigurationError

logger = logging.getLogger(__name__)


def encode_png(frame: np.ndarray) -> str:
    ok, buf = cv2.imencode('.png', cv2.cvtColor(frame, cv2.COLOR_RGB2BGR))
    if not ok:
        raise ValueError("PNG encoding failed")
    return base64.b64encode(buf.tobytes()).decode('ascii')


class ExternalServiceClient:
    def __init__(self, base_url: Optional[str], timeout: int = config.EXTERNAL_TIMEOUT_SECONDS):
        self.base_url = base_url.rstrip('/') if base_url else None
        self.timeout = timeout
        self.session = requests.Session()
        self.session.headers.update({'Content-Type': 'application/json'})
        self.logger = logging.getLogger(__name__)

    @property
    def available(self) -> bool:
        return bool(self.base_url)

    def post_images(self, route: str, frames: np.ndarray) -> dict:
        payload = {'images': [encode_png(f) for f in frames]}
        response = self.session.post(f"{self.base_url}{route}", json=payload, timeout=self.timeout)
        response.raise_for_status()
        return response.json()


class DepthEstimatorClient(ExternalServiceClient):
    def __init__(self, base_url: Optional[str] = None, **kwargs):
        super().__init__(base_url or config.DEPTH_ESTIMATOR_URL, **kwargs)

    def estimate(self, frames: np.ndarray) -> np.ndarray:
        """Per-pixel depth in meters for each RGB frame, shape (n, h, w)."""
        if not self.available:
            raise ConfigurationError(
                "external depth estimator is not configured (set DEPTH_ESTIMATOR_URL); "
                "use the 'constant' depth strategy instead"
            )
        try:
            body = self.post_images('/depth', frames)
        except (requests.RequestException, ValueError) as e:
            raise ConfigurationError(
                f"external depth estimator unavailable at {self.base_url}: {e}; "
                "use the 'constant' depth strategy instead"
            )

        depth = np.asarray(body.get('depth'), dtype=np.float32)
        expected = frames.shape[:3]
        if depth.shape != expected:
            raise ConfigurationError(f"depth estimator returned shape {depth.shape}, expected {expected}")
        return depth


class PersonDetectorClient(ExternalServiceClient):
    def __init__(self, base_url: Optional[str] = None, min_score: float = 0.3, **kwargs):
        super().__init__(base_url or config.PERSON_DETECTOR_URL, **kwargs)
        self.min_score = min_score

    def detect(self, frames: np.ndarray) -> List[Optional[List[float]]]:
        """Best person box per frame, None where nothing was found or the call failed."""
        if not self.available:
            raise ConfigurationError("person detector is not configured (set PERSON_DETECTOR_URL)")
        try:
            body = self.post_images('/detect', frames)
        except (requests.RequestException, ValueError) as e:
            self.logger.error(f"Person detector request failed: {e}")
            return [None] * len(frames)

        boxes = []
        for detections in body.get('detections', [])[:len(frames)]:
            people = [d for d in detections
                      if d.get('label', 'person') == 'person' and d.get('score', 1.0) >= self.min_score]
            if people:
                best = max(people, key=lambda d: d.get('score', 1.0))
                boxes.append([float(v) for v in best['box']])
            else:
                boxes.append(None)
        boxes.extend([None] * (len(frames) - len(boxes)))
        return boxes
