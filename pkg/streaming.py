"""
Sliding-window streaming inference: a ring buffer of the last n frames, one
prediction per stride once the buffer is full, wall-clock FPS, sequence
accuracy, and a small Flask status service for long-running streams.
"""

import time
import logging
import threading
from collections import Counter, deque
from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Deque, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import psutil
import pytz
import torch
from flask import Flask, jsonify

import config
from errors import ValidationError
from gesture_dataset import CLASS_NAMES, GestureSample, RawVideo, SceneAnnotations
from preprocess import PreprocessConfig, preprocess
from stgt import DiGNet, batch_from_clips

logger = logging.getLogger(__name__)


def window_count(frames: int, n: int, stride: int = 1) -> int:
    if n < 1 or stride < 1:
        raise ValidationError(f"window length and stride must be >= 1, got n={n}, stride={stride}")
    return max(0, (frames - n) // stride + 1) if frames >= n else 0


def window_starts(frames: int, n: int, stride: int = 1) -> List[int]:
    return [i * stride for i in range(window_count(frames, n, stride))]


def window_sample(sample: GestureSample, start: int, frames: np.ndarray) -> GestureSample:
    """The sample restricted to frames [start, start + len(frames))."""
    end = start + len(frames)
    annotations = None
    if sample.annotations is not None:
        mask = sample.annotations.actor_mask
        annotations = SceneAnnotations(
            boxes=sample.annotations.boxes[start:end],
            actor_mask=None if mask is None else mask[start:end],
        )
    fps = sample.raw_video.fps if sample.raw_video is not None else float(config.SYNTH_FPS)
    return replace(sample, raw_video=RawVideo(np.ascontiguousarray(frames), fps), source=None,
                   annotations=annotations, clip_id=f"{sample.clip_id}@{start}")


@dataclass
class WindowPrediction:
    start: int
    end: int                    # exclusive
    label: int
    logits: List[float]

    @property
    def center(self) -> int:
        return (self.start + self.end - 1) // 2


@dataclass
class StreamState:
    """Ring buffer of the last n frames plus the prediction history."""
    n: int
    stride: int = 1
    buffer: Deque[np.ndarray] = field(default_factory=deque)
    frames_seen: int = 0
    history: List[WindowPrediction] = field(default_factory=list)
    inference_seconds: float = 0.0

    def __post_init__(self):
        if self.n < 1 or self.stride < 1:
            raise ValidationError(f"window length and stride must be >= 1, got n={self.n}, stride={self.stride}")
        self.buffer = deque(self.buffer, maxlen=self.n)

    def push(self, frame: np.ndarray) -> bool:
        """Add a frame; True when a prediction is due."""
        self.buffer.append(frame)
        self.frames_seen += 1
        if len(self.buffer) < self.n:
            return False
        return (self.frames_seen - self.n) % self.stride == 0

    @property
    def window_start(self) -> int:
        return self.frames_seen - len(self.buffer)

    def window(self) -> np.ndarray:
        return np.stack(self.buffer)

    @property
    def fps(self) -> float:
        """Frames advanced per second of inference time."""
        steps = len(self.history) * self.stride
        return steps / self.inference_seconds if self.inference_seconds > 0 else 0.0


class StreamRunner:
    def __init__(self, model: DiGNet, n: int = config.STREAM_WINDOW_LENGTH, stride: int = 1,
                 preprocess_cfg: Optional[PreprocessConfig] = None):
        self.model = model.eval()
        self.n = n
        self.stride = stride
        self.preprocess_cfg = replace(preprocess_cfg or PreprocessConfig(), window=n)
        self.device = next(model.parameters()).device
        self.logger = logging.getLogger(__name__)

    def window_logits(self, sample: GestureSample, start: int, frames: np.ndarray) -> np.ndarray:
        clip = preprocess(window_sample(sample, start, frames), self.preprocess_cfg)
        batch = batch_from_clips([clip], device=self.device)
        with torch.no_grad():
            return self.model(batch['x'], batch['depth']).logits[0].cpu().numpy()

    def run(self, sample: GestureSample, frames: Optional[Iterable[np.ndarray]] = None,
            state: Optional[StreamState] = None, on_prediction=None) -> StreamState:
        """
        Feed frames one at a time (the sample's own frames unless a live
        iterable is given). A source that ends before n frames produces no
        prediction and a notice.
        """
        state = state or StreamState(self.n, self.stride)
        if frames is None:
            sample = sample.load()
            frames = iter(sample.video.frames)
        for frame in frames:
            if not state.push(frame):
                continue
            started = time.perf_counter()
            start = state.window_start
            logits = self.window_logits(sample, start, state.window())
            state.inference_seconds += time.perf_counter() - started
            prediction = WindowPrediction(start, start + self.n, int(np.argmax(logits)), logits.tolist())
            state.history.append(prediction)
            if on_prediction is not None:
                on_prediction(prediction, state)

        if not state.history:
            self.logger.warning(f"Clip {sample.clip_id}: stream ended after {state.frames_seen} frames, "
                                f"fewer than n={self.n}; no prediction")
        return state

    def batch_logits(self, sample: GestureSample) -> np.ndarray:
        """Logits for every stride window computed offline from the full clip."""
        sample = sample.load()
        video = sample.video.frames
        starts = window_starts(len(video), self.n, self.stride)
        if not starts:
            return np.zeros((0, self.model.cfg.num_classes), dtype=np.float32)
        return np.stack([self.window_logits(sample, s, video[s:s + self.n]) for s in starts])


def window_predictions(model: DiGNet, samples: Sequence[GestureSample], n: int, stride: int = 1,
                       preprocess_cfg: Optional[PreprocessConfig] = None) -> Dict[str, List[int]]:
    """Per-clip window labels for the stability score."""
    runner = StreamRunner(model, n, stride, preprocess_cfg)
    out = {}
    for sample in samples:
        logits = runner.batch_logits(sample)
        out[sample.clip_id] = [int(i) for i in np.argmax(logits, axis=1)] if len(logits) else []
    return out


# ---------------------------------------------------------------------------
# Throughput
# ---------------------------------------------------------------------------

def process_usage() -> Dict:
    try:
        process = psutil.Process()
        return {
            'memory_mb': process.memory_info().rss / 1024 / 1024,
            'memory_percent': process.memory_percent(),
            'cpu_percent': process.cpu_percent(),
        }
    except psutil.Error as e:
        logger.warning(f"Could not read process usage: {e}")
        return {'error': str(e)}


def fps_table(model: DiGNet, sample: GestureSample, windows: Sequence[int] = tuple(config.STREAM_FPS_WINDOWS),
              preprocess_cfg: Optional[PreprocessConfig] = None) -> List[Dict]:
    """One row per window length n: '<n>-frame sequence' with measured FPS."""
    sample = sample.load()
    rows = []
    for n in windows:
        state = StreamRunner(model, n, 1, preprocess_cfg).run(sample)
        row = {'n': n, 'label': f"{n}-frame sequence", 'windows': len(state.history),
               'fps': round(state.fps, 2) if state.history else None}
        row.update(process_usage())
        if not state.history:
            row['notice'] = f"clip has {state.frames_seen} frames, fewer than n"
        rows.append(row)
        logger.info(f"{row['label']}: {row['fps']} FPS over {row['windows']} windows")
    return rows


# ---------------------------------------------------------------------------
# Sequence accuracy
# ---------------------------------------------------------------------------

def segment_votes(predictions: Sequence[WindowPrediction], segments: Sequence[Dict]) -> List[Optional[int]]:
    """Majority label per segment over windows whose center lies in [start, end)."""
    votes = []
    for seg in segments:
        labels = [p.label for p in predictions if seg['start'] <= p.center < seg['end']]
        if not labels:
            votes.append(None)
            continue
        counts = Counter(labels)
        best = max(counts.values())
        # ties go to the label that appeared first
        votes.append(next(l for l in labels if counts[l] == best))
    return votes


def sequence_correct(predictions: Sequence[WindowPrediction], segments: Sequence[Dict]) -> bool:
    votes = segment_votes(predictions, segments)
    return all(v is not None and v == seg['label'] for v, seg in zip(votes, segments))


def sequence_accuracy(results: Sequence[Tuple[Sequence[WindowPrediction], Sequence[Dict]]]) -> float:
    if not results:
        raise ValidationError("sequence accuracy needs at least one sequence")
    return float(np.mean([sequence_correct(p, s) for p, s in results]))


# ---------------------------------------------------------------------------
# Status service
# ---------------------------------------------------------------------------

def _now() -> str:
    return datetime.now(pytz.utc).strftime('%Y-%m-%d %H:%M:%S UTC')


class StreamStatus:
    """Thread-safe snapshot of a running stream."""

    def __init__(self, n: int):
        self._lock = threading.Lock()
        self.values = {
            'status': 'starting',
            'service_started': _now(),
            'window_length': n,
            'windows_processed': 0,
            'clips_processed': 0,
            'last_prediction': None,
            'fps': None,
            'last_error': None,
        }

    def update(self, **values):
        with self._lock:
            self.values.update(values)

    def snapshot(self) -> Dict:
        with self._lock:
            return dict(self.values)


def create_status_app(status: StreamStatus) -> Flask:
    app = Flask(__name__)

    @app.route('/health')
    def health():
        snap = status.snapshot()
        return jsonify({
            'status': 'healthy' if snap['status'] != 'failed' else 'unhealthy',
            'service': 'DiG-Net stream',
            'timestamp': _now(),
            'windows_processed': snap['windows_processed'],
        })

    @app.route('/status')
    def stream_status():
        snap = status.snapshot()
        snap['system_info'] = process_usage()
        return jsonify(snap)

    return app


def run_stream_worker(runner: StreamRunner, samples: Sequence[GestureSample], status: StreamStatus) -> None:
    """Stream every sample, publishing progress into `status`."""
    status.update(status='running')
    total = 0

    def publish(prediction: WindowPrediction, state: StreamState):
        status.update(windows_processed=total + len(state.history), fps=round(state.fps, 2),
                      last_prediction={'window': [prediction.start, prediction.end],
                                       'label': CLASS_NAMES[prediction.label]},
                      last_update=_now())

    try:
        for i, sample in enumerate(samples):
            state = runner.run(sample, on_prediction=publish)
            total += len(state.history)
            status.update(clips_processed=i + 1, windows_processed=total)
        status.update(status='finished')
    except Exception as e:
        logger.error(f"Stream worker failed: {e}")
        status.update(status='failed', last_error=str(e))


def serve_stream(runner: StreamRunner, samples: Sequence[GestureSample],
                 port: int = config.STREAM_SERVICE_PORT) -> None:
    status = StreamStatus(runner.n)
    worker = threading.Thread(target=run_stream_worker, args=(runner, samples, status), daemon=True)
    worker.start()
    logger.info(f"Stream status service on port {port}")
    create_status_app(status).run(host='0.0.0.0', port=port, debug=False)
