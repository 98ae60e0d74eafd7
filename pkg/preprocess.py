"""
Turn a GestureSample into a model-ready ProcessedClip.

Steps: take the first `window` frames, pick r keyframes by K-means over
frame embeddings, crop one clip-level person box extended by b/a on each
side, letterbox and resize to IMAGE_SIZE, compute dense optical flow per
keyframe, provide depth, and normalise RGB per clip.
"""

import os
import json
import math
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import cv2
import numpy as np
from sklearn.cluster import KMeans

import config
from errors import ConfigurationError, LoadError, ShapeError, ValidationError
from gesture_dataset import CLASS_NAMES, GestureSample, RawVideo, SceneAnnotations
from external_services import DepthEstimatorClient, PersonDetectorClient

logger = logging.getLogger(__name__)

DEPTH_STRATEGIES = ('auto', 'constant', 'synthetic', 'external')
DETECTORS = ('auto', 'ground-truth', 'full-frame', 'external')
EMBEDDERS = ('block-mean', 'resnet18')
FLOW_METHODS = ('farneback',)
PROCESSED_SUFFIX = '.pclip'
PROCESSED_VERSION = 1


@dataclass
class PreprocessConfig:
    keyframes: int = config.KEYFRAMES
    image_size: int = config.IMAGE_SIZE
    crop_ratio: float = config.CROP_RATIO
    window: int = config.WINDOW_LENGTH
    depth_strategy: str = 'auto'
    detector: str = 'auto'
    embedder: str = 'block-mean'
    flow: str = 'farneback'
    seed: int = 0

    def __post_init__(self):
        if self.keyframes < 1:
            raise ValidationError(f"keyframes must be >= 1, got {self.keyframes}")
        if self.window < 1:
            raise ValidationError(f"window must be >= 1, got {self.window}")
        if self.crop_ratio <= 0:
            raise ValidationError(f"crop ratio a must be > 0, got {self.crop_ratio}")
        if self.image_size < 8:
            raise ValidationError(f"image size too small: {self.image_size}")
        for name, value, allowed in (('depth strategy', self.depth_strategy, DEPTH_STRATEGIES),
                                     ('detector', self.detector, DETECTORS),
                                     ('embedder', self.embedder, EMBEDDERS),
                                     ('flow method', self.flow, FLOW_METHODS)):
            if value not in allowed:
                raise ConfigurationError(f"unknown {name} '{value}', expected one of {allowed}")

    @property
    def effective_keyframes(self) -> int:
        return min(self.keyframes, self.window)

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class ProcessedClip:
    frames: np.ndarray            # (r, 5, S, S) float32: normalised RGB, then flow u, v
    depth: np.ndarray             # (r, S, S) float32 meters
    distance: float
    motion: float                 # xi, mean flow magnitude in pixels/frame
    label: int
    clip_id: str = ''
    environment: str = 'synthetic'
    frame_indices: List[int] = field(default_factory=list)
    window: int = config.WINDOW_LENGTH
    detector_miss: bool = False
    depth_strategy: str = 'constant'

    @property
    def keyframes(self) -> int:
        return int(self.frames.shape[0])

    def header(self) -> Dict:
        return {
            'clip_id': self.clip_id, 'distance': float(self.distance), 'motion': float(self.motion),
            'label': int(self.label), 'environment': self.environment,
            'frame_indices': [int(i) for i in self.frame_indices], 'window': int(self.window),
            'detector_miss': bool(self.detector_miss), 'depth_strategy': self.depth_strategy,
        }


# ---------------------------------------------------------------------------
# Frame embeddings and keyframe reduction
# ---------------------------------------------------------------------------

class BlockMeanEmbedder:
    """Grayscale frame averaged over a grid x grid block layout (d = grid^2)."""

    LUMA = np.array([0.299, 0.587, 0.114])

    def __init__(self, grid: int = config.EMBED_GRID):
        self.grid = grid
        self.dim = grid * grid

    def __call__(self, frame: np.ndarray) -> np.ndarray:
        gray = frame.astype(np.float64) @ self.LUMA
        h, w = gray.shape
        if h < self.grid or w < self.grid:
            gray = cv2.resize(gray, (max(w, self.grid), max(h, self.grid)), interpolation=cv2.INTER_NEAREST)
            h, w = gray.shape
        rows = np.linspace(0, h, self.grid + 1).astype(int)
        cols = np.linspace(0, w, self.grid + 1).astype(int)
        sums = np.add.reduceat(np.add.reduceat(gray, rows[:-1], axis=0), cols[:-1], axis=1)
        areas = np.outer(np.diff(rows), np.diff(cols))
        return (sums / areas).ravel()


class ResNetEmbedder:
    """ImageNet ResNet-18 penultimate features (d = 512); downloads weights on first use."""

    def __init__(self, device: str = config.DEVICE):
        import torch
        from torchvision import models

        weights = models.ResNet18_Weights.DEFAULT
        net = models.resnet18(weights=weights)
        net.fc = torch.nn.Identity()
        self.net = net.eval().to(device)
        self.transform = weights.transforms()
        self.device = device
        self.dim = 512
        self._torch = torch

    def __call__(self, frame: np.ndarray) -> np.ndarray:
        torch = self._torch
        tensor = torch.from_numpy(np.ascontiguousarray(frame)).permute(2, 0, 1)
        with torch.no_grad():
            batch = self.transform(tensor).unsqueeze(0).to(self.device)
            return self.net(batch)[0].cpu().double().numpy()


def make_embedder(name: str):
    if name == 'block-mean':
        return BlockMeanEmbedder()
    if name == 'resnet18':
        return ResNetEmbedder()
    raise ConfigurationError(f"unknown embedder '{name}'")


_DEFAULT_EMBEDDER = BlockMeanEmbedder()


def embed_frame(frame: np.ndarray, embedder=None) -> np.ndarray:
    return (embedder or _DEFAULT_EMBEDDER)(frame)


def reduce_frames(video: RawVideo, r: int, seed: int, embedder=None) -> List[int]:
    """
    Keyframe indices: K-means over frame embeddings, one representative per
    cluster (nearest to the centroid, lowest index on ties), sorted and
    padded with the last index up to r.
    """
    if r < 1:
        raise ValidationError(f"r must be >= 1, got {r}")
    embeddings = np.stack([embed_frame(f, embedder) for f in video.frames])
    n = len(embeddings)
    k = min(r, len(np.unique(embeddings, axis=0)))

    if k == n:
        chosen = list(range(n))
    else:
        km = KMeans(n_clusters=k, init='k-means++', n_init=1,
                    max_iter=config.KMEANS_MAX_ITER, random_state=seed).fit(embeddings)
        chosen = []
        for cluster in range(k):
            members = np.flatnonzero(km.labels_ == cluster)
            if len(members) == 0:
                continue
            dist = np.linalg.norm(embeddings[members] - km.cluster_centers_[cluster], axis=1)
            chosen.append(int(members[np.argmin(dist)]))
        chosen = sorted(set(chosen))

    chosen.extend([chosen[-1]] * (r - len(chosen)))
    return chosen


# ---------------------------------------------------------------------------
# Person boxes and cropping
# ---------------------------------------------------------------------------

@dataclass
class BoundingBox:
    x: float
    y: float
    width: float
    height: float

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def extend(self, a: float) -> 'BoundingBox':
        """Grow by b/a on every side, b being the diagonal."""
        if a <= 0:
            raise ValidationError(f"crop ratio a must be > 0, got {a}")
        pad = self.diagonal / a
        return BoundingBox(self.x - pad, self.y - pad, self.width + 2 * pad, self.height + 2 * pad)

    def clamp(self, width: int, height: int) -> 'BoundingBox':
        x0, y0 = min(max(self.x, 0.0), float(width)), min(max(self.y, 0.0), float(height))
        x1 = min(max(self.x + self.width, 0.0), float(width))
        y1 = min(max(self.y + self.height, 0.0), float(height))
        return BoundingBox(x0, y0, x1 - x0, y1 - y0)

    def union(self, other: 'BoundingBox') -> 'BoundingBox':
        x0, y0 = min(self.x, other.x), min(self.y, other.y)
        x1 = max(self.x + self.width, other.x + other.width)
        y1 = max(self.y + self.height, other.y + other.height)
        return BoundingBox(x0, y0, x1 - x0, y1 - y0)

    def pixel_bounds(self, width: int, height: int) -> Tuple[int, int, int, int]:
        """Integer (x0, y0, x1, y1) inside the image, at least one pixel each way."""
        x0 = int(min(max(math.floor(self.x), 0), width - 1))
        y0 = int(min(max(math.floor(self.y), 0), height - 1))
        x1 = int(min(max(math.ceil(self.x + self.width), x0 + 1), width))
        y1 = int(min(max(math.ceil(self.y + self.height), y0 + 1), height))
        return x0, y0, x1, y1

    @classmethod
    def full_frame(cls, width: int, height: int) -> 'BoundingBox':
        return cls(0.0, 0.0, float(width), float(height))


class PersonDetector(Protocol):
    def detect(self, frames: np.ndarray, annotations: Optional[SceneAnnotations],
               indices: Sequence[int]) -> List[Optional[BoundingBox]]:
        ...


class GroundTruthDetector:
    """Boxes recorded by the generator."""

    def detect(self, frames, annotations, indices):
        if annotations is None:
            return [None] * len(indices)
        boxes = []
        for i in indices:
            row = annotations.boxes[i]
            boxes.append(None if np.any(np.isnan(row)) else BoundingBox(*[float(v) for v in row]))
        return boxes


class FullFrameDetector:
    def detect(self, frames, annotations, indices):
        h, w = frames.shape[1:3]
        return [BoundingBox.full_frame(w, h) for _ in indices]


class HttpPersonDetector:
    def __init__(self, client: Optional[PersonDetectorClient] = None):
        self.client = client or PersonDetectorClient()

    def detect(self, frames, annotations, indices):
        found = self.client.detect(frames[list(indices)])
        return [None if b is None else BoundingBox(*b) for b in found]


def make_detector(name: str, sample: Optional[GestureSample] = None) -> PersonDetector:
    if name == 'auto':
        has_boxes = sample is not None and sample.annotations is not None
        return GroundTruthDetector() if has_boxes else FullFrameDetector()
    if name == 'ground-truth':
        return GroundTruthDetector()
    if name == 'full-frame':
        return FullFrameDetector()
    if name == 'external':
        return HttpPersonDetector()
    raise ConfigurationError(f"unknown detector '{name}'")


def clip_crop_box(boxes: Sequence[Optional[BoundingBox]], width: int, height: int,
                  a: float) -> Tuple[BoundingBox, bool]:
    """Union of the detected boxes, extended and clamped. Returns (box, missed)."""
    found = [b for b in boxes if b is not None]
    missed = len(found) < len(boxes)
    if not found:
        return BoundingBox.full_frame(width, height), True
    union = found[0]
    for b in found[1:]:
        union = union.union(b)
    return union.extend(a).clamp(width, height), missed


def crop_region(frame: np.ndarray, box: BoundingBox) -> np.ndarray:
    h, w = frame.shape[:2]
    x0, y0, x1, y1 = box.pixel_bounds(w, h)
    return frame[y0:y1, x0:x1]


def letterbox_resize(region: np.ndarray, size: int) -> np.ndarray:
    """Pad to a square with replicated borders, then resize to size x size."""
    h, w = region.shape[:2]
    side = max(h, w)
    top, left = (side - h) // 2, (side - w) // 2
    square = cv2.copyMakeBorder(region, top, side - h - top, left, side - w - left, cv2.BORDER_REPLICATE)
    interp = cv2.INTER_AREA if side > size else cv2.INTER_LINEAR
    return cv2.resize(square, (size, size), interpolation=interp)


def detect_and_crop(frame: np.ndarray, detector: PersonDetector, a: float,
                    annotations: Optional[SceneAnnotations] = None,
                    index: int = 0) -> Tuple[np.ndarray, BoundingBox, bool]:
    """Single-frame crop: (region before resize, extended box, detector-miss flag)."""
    h, w = frame.shape[:2]
    found = detector.detect(frame[None], annotations, [index])[0]
    if found is None:
        logger.warning("Person detector found nothing; using the full frame")
        box, missed = BoundingBox.full_frame(w, h), True
    else:
        box, missed = found.extend(a).clamp(w, h), False
    return crop_region(frame, box), box, missed


# ---------------------------------------------------------------------------
# Optical flow
# ---------------------------------------------------------------------------

def compute_flow(frame_t: np.ndarray, frame_next: np.ndarray) -> np.ndarray:
    """Dense (u, v) flow from frame_t to frame_next, shape (h, w, 2) float32."""
    if frame_t.shape != frame_next.shape:
        raise ShapeError(f"flow frames differ in shape: {frame_t.shape} vs {frame_next.shape}")
    h, w = frame_t.shape[:2]
    if np.array_equal(frame_t, frame_next):
        return np.zeros((h, w, 2), dtype=np.float32)
    a = cv2.cvtColor(frame_t, cv2.COLOR_RGB2GRAY) if frame_t.ndim == 3 else frame_t
    b = cv2.cvtColor(frame_next, cv2.COLOR_RGB2GRAY) if frame_next.ndim == 3 else frame_next
    flow = cv2.calcOpticalFlowFarneback(a, b, None, **config.FARNEBACK_PARAMS)
    return flow.astype(np.float32)


def flow_pair(index: int, frame_count: int) -> Tuple[int, int]:
    """Raw frames whose flow stands for keyframe `index`."""
    if frame_count < 2:
        return index, index
    if index + 1 < frame_count:
        return index, index + 1
    return index - 1, index


# ---------------------------------------------------------------------------
# Depth
# ---------------------------------------------------------------------------

@dataclass
class DepthContext:
    distance: float
    frames: np.ndarray                      # (r, S, S, 3) cropped keyframes
    actor_alpha: Optional[np.ndarray] = None    # (r, S, S) in [0, 1], generator clips only


def provide_depth(context: DepthContext, strategy: str,
                  estimator: Optional[DepthEstimatorClient] = None) -> np.ndarray:
    r, h, w = context.frames.shape[:3]
    if strategy == 'auto':
        strategy = 'synthetic' if context.actor_alpha is not None else 'constant'

    if strategy == 'constant':
        depth = np.full((r, h, w), context.distance, dtype=np.float32)
    elif strategy == 'synthetic':
        if context.actor_alpha is None:
            raise ValidationError("synthetic-ground-truth depth is only available for generator clips")
        depth = np.where(context.actor_alpha >= 0.5, context.distance, config.FAR_PLANE_DEPTH).astype(np.float32)
    elif strategy == 'external':
        depth = (estimator or DepthEstimatorClient()).estimate(context.frames)
    else:
        raise ConfigurationError(f"unknown depth strategy '{strategy}'")
    return np.maximum(depth, config.MIN_DEPTH).astype(np.float32)


# ---------------------------------------------------------------------------
# Normalisation and the full pipeline
# ---------------------------------------------------------------------------

def normalize_rgb(rgb: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance per channel over the whole clip; rgb is (r, 3, S, S)."""
    data = rgb.astype(np.float64)
    mean = data.mean(axis=(0, 2, 3), keepdims=True)
    std = data.std(axis=(0, 2, 3), keepdims=True)
    std[std == 0] = 1.0
    return ((data - mean) / std).astype(np.float32)


def preprocess(sample: GestureSample, cfg: Optional[PreprocessConfig] = None,
               detector: Optional[PersonDetector] = None, embedder=None,
               estimator: Optional[DepthEstimatorClient] = None) -> ProcessedClip:
    cfg = cfg or PreprocessConfig()
    sample = sample.load()
    video = sample.video
    window = min(cfg.window, video.frame_count)
    frames = video.frames[:window]
    size = cfg.image_size

    if embedder is None and cfg.embedder != 'block-mean':
        embedder = make_embedder(cfg.embedder)
    indices = reduce_frames(RawVideo(frames, fps=video.fps), cfg.effective_keyframes, cfg.seed, embedder)

    detector = detector or make_detector(cfg.detector, sample)
    boxes = detector.detect(frames, sample.annotations, indices)
    box, missed = clip_crop_box(boxes, video.width, video.height, cfg.crop_ratio)
    if missed:
        logger.warning(f"Clip {sample.clip_id}: person detector missed a keyframe")

    def prepare(i: int) -> np.ndarray:
        return letterbox_resize(crop_region(frames[i], box), size)

    crops = np.stack([prepare(i) for i in indices])
    flows = []
    for i in indices:
        a, b = flow_pair(i, window)
        flows.append(np.zeros((size, size, 2), np.float32) if a == b else compute_flow(prepare(a), prepare(b)))
    flow = np.stack(flows)
    motion = float(np.linalg.norm(flow, axis=-1).mean())

    alpha = None
    mask = sample.annotations.actor_mask if sample.annotations is not None else None
    if mask is not None:
        alpha = np.stack([letterbox_resize(crop_region(mask[i], box), size) for i in indices]).astype(np.float32) / 255.0
    depth = provide_depth(DepthContext(sample.distance, crops, alpha), cfg.depth_strategy, estimator)
    strategy = cfg.depth_strategy if cfg.depth_strategy != 'auto' else ('synthetic' if alpha is not None else 'constant')

    rgb = normalize_rgb(crops.transpose(0, 3, 1, 2))
    channels = np.concatenate([rgb, flow.transpose(0, 3, 1, 2)], axis=1).astype(np.float32)

    return ProcessedClip(
        frames=channels, depth=depth, distance=float(sample.distance), motion=motion,
        label=int(sample.label), clip_id=sample.clip_id, environment=sample.environment,
        frame_indices=list(indices), window=int(window), detector_miss=missed,
        depth_strategy=strategy,
    )


# ---------------------------------------------------------------------------
# Processed-clip store
# ---------------------------------------------------------------------------

def write_processed_clip(path: str, clip: ProcessedClip) -> None:
    frames = np.ascontiguousarray(clip.frames, dtype='<f4')
    depth = np.ascontiguousarray(clip.depth, dtype='<f4')
    header = {
        'format': 'pclip', 'version': PROCESSED_VERSION, 'dtype': '<f4',
        'shape': list(frames.shape), 'depth_shape': list(depth.shape), **clip.header(),
    }
    with open(path, 'wb') as f:
        f.write(json.dumps(header, sort_keys=True).encode('utf-8') + b'\n')
        f.write(frames.tobytes())
        f.write(depth.tobytes())


def read_processed_clip(path: str) -> ProcessedClip:
    try:
        with open(path, 'rb') as f:
            header = json.loads(f.readline().decode('utf-8'))
            payload = f.read()
    except (OSError, json.JSONDecodeError) as e:
        raise LoadError(f"cannot read processed clip {path}: {e}")
    if header.get('format') != 'pclip' or header.get('version') != PROCESSED_VERSION:
        raise LoadError(f"{path} is not a version {PROCESSED_VERSION} processed clip")

    shape, depth_shape = header['shape'], header['depth_shape']
    n_frames = int(np.prod(shape)) * 4
    if len(payload) != n_frames + int(np.prod(depth_shape)) * 4:
        raise LoadError(f"processed clip {path} is truncated")
    frames = np.frombuffer(payload[:n_frames], dtype='<f4').reshape(shape).astype(np.float32)
    depth = np.frombuffer(payload[n_frames:], dtype='<f4').reshape(depth_shape).astype(np.float32)
    return ProcessedClip(
        frames=frames, depth=depth, distance=header['distance'], motion=header['motion'],
        label=header['label'], clip_id=header['clip_id'], environment=header['environment'],
        frame_indices=header['frame_indices'], window=header['window'],
        detector_miss=header['detector_miss'], depth_strategy=header['depth_strategy'],
    )


class ProcessedStore:
    """Directory of .pclip records plus an index.jsonl with one line per clip."""

    def __init__(self, directory: str):
        self.directory = directory
        self.index_path = os.path.join(directory, 'index.jsonl')
        self.logger = logging.getLogger(__name__)

    def entries(self) -> List[Dict]:
        if not os.path.exists(self.index_path):
            raise LoadError(f"processed store index not found: {self.index_path}")
        with open(self.index_path, 'r', encoding='utf-8') as f:
            return [json.loads(line) for line in f if line.strip()]

    def load(self, split: Optional[str] = None) -> List[ProcessedClip]:
        return [read_processed_clip(os.path.join(self.directory, e['file']))
                for e in self.entries() if split is None or e['split'] == split]

    def write(self, items: Sequence[Tuple[ProcessedClip, str]]) -> None:
        os.makedirs(self.directory, exist_ok=True)
        with open(self.index_path, 'w', encoding='utf-8') as f:
            for clip, split in items:
                name = clip.clip_id + PROCESSED_SUFFIX
                write_processed_clip(os.path.join(self.directory, name), clip)
                row = {'file': name, 'split': split, 'label': CLASS_NAMES[clip.label], **clip.header()}
                f.write(json.dumps(row, sort_keys=True) + '\n')
        self.logger.info(f"Wrote {len(items)} processed clips to {self.directory}")


def prepare_dataset(samples: Sequence[GestureSample], store_dir: str,
                    cfg: Optional[PreprocessConfig] = None, workers: int = 1) -> ProcessedStore:
    """Preprocess every sample (in order) into a processed-clip store."""
    cfg = cfg or PreprocessConfig()
    embedder = make_embedder(cfg.embedder)

    def work(sample: GestureSample) -> Tuple[ProcessedClip, str]:
        return preprocess(sample, cfg, embedder=embedder), sample.split

    logger.info(f"Preprocessing {len(samples)} clips with {workers} worker(s)")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            items = list(pool.map(work, samples))
    else:
        items = [work(s) for s in samples]

    store = ProcessedStore(store_dir)
    store.write(items)
    return store
