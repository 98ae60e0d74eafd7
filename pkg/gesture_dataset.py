"""
Gesture data model, clip storage formats, manifest ingestion and augmentation.
"""

import os
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple, Union

import cv2
import numpy as np

import config
from errors import LoadError, ValidationError

logger = logging.getLogger(__name__)

CLASS_NAMES = list(config.GESTURE_CLASSES.keys())
PACKED_CLIP_SUFFIX = '.gclip'
PACKED_CLIP_VERSION = 1


@dataclass(frozen=True)
class GestureClass:
    index: int
    name: str
    kind: str

    @property
    def is_dynamic(self) -> bool:
        return self.kind == 'dynamic'

    @property
    def is_static(self) -> bool:
        return self.kind == 'static'


GESTURE_CLASSES = [
    GestureClass(i, name, spec['kind']) for i, (name, spec) in enumerate(config.GESTURE_CLASSES.items())
]
DYNAMIC_CLASSES = [c.index for c in GESTURE_CLASSES if c.is_dynamic]
STATIC_CLASSES = [c.index for c in GESTURE_CLASSES if c.is_static]


def gesture_class(key: Union[int, str]) -> GestureClass:
    """Look a class up by index or name."""
    if isinstance(key, str):
        if key not in config.GESTURE_CLASSES:
            raise ValidationError(f"unknown gesture class '{key}'")
        return GESTURE_CLASSES[CLASS_NAMES.index(key)]
    if not 0 <= int(key) < len(GESTURE_CLASSES):
        raise ValidationError(f"gesture class index {key} outside [0, {len(GESTURE_CLASSES) - 1}]")
    return GESTURE_CLASSES[int(key)]


def mirror_label(label: int) -> int:
    """Label seen after a horizontal flip (move-right <-> move-left)."""
    name = gesture_class(label).name
    return CLASS_NAMES.index(config.GESTURE_CLASSES[name]['mirror'])


@dataclass
class RawVideo:
    frames: np.ndarray          # (n, h, w, 3) uint8 RGB
    fps: float = float(config.SYNTH_FPS)

    def __post_init__(self):
        frames = self.frames
        if not isinstance(frames, np.ndarray) or frames.ndim != 4 or frames.shape[-1] != 3:
            raise ValidationError(f"video frames must be (n, h, w, 3), got {getattr(frames, 'shape', None)}")
        if frames.shape[0] < 1:
            raise ValidationError("video must contain at least one frame")
        if frames.dtype != np.uint8:
            raise ValidationError(f"video frames must be uint8, got {frames.dtype}")
        if self.fps <= 0:
            raise ValidationError(f"fps must be positive, got {self.fps}")

    @property
    def frame_count(self) -> int:
        return int(self.frames.shape[0])

    @property
    def height(self) -> int:
        return int(self.frames.shape[1])

    @property
    def width(self) -> int:
        return int(self.frames.shape[2])


@dataclass
class SceneAnnotations:
    """Ground truth the generator knows about each frame."""
    boxes: np.ndarray                     # (n, 4) x, y, w, h; NaN rows when the actor is absent
    actor_mask: Optional[np.ndarray] = None   # (n, h, w) uint8 alpha 0..255


@dataclass
class GestureSample:
    distance: float
    label: int
    split: str = 'train'
    environment: str = 'synthetic'
    clip_id: str = ''
    raw_video: Optional[RawVideo] = None
    source: Optional[str] = None
    annotations: Optional[SceneAnnotations] = None
    metadata: Dict = field(default_factory=dict)

    @property
    def video(self) -> RawVideo:
        if self.raw_video is not None:
            return self.raw_video
        if self.source is None:
            raise LoadError(f"sample {self.clip_id or '?'} has neither frames nor a source path")
        video, _, _ = read_clip(self.source)
        return video

    @property
    def gesture(self) -> GestureClass:
        return gesture_class(self.label)

    def load(self) -> 'GestureSample':
        """Return a copy with frames (and annotations, when stored) in memory."""
        if self.raw_video is not None or self.source is None:
            return self
        video, annotations, meta = read_clip(self.source)
        merged = dict(meta)
        merged.update(self.metadata)
        return replace(self, raw_video=video, annotations=annotations or self.annotations, metadata=merged)


def validate_sample(sample: GestureSample, where: str = '') -> None:
    prefix = f"{where}: " if where else ''
    if not config.MIN_DISTANCE <= float(sample.distance) <= config.MAX_DISTANCE:
        raise ValidationError(
            f"{prefix}distance {sample.distance} m outside [{config.MIN_DISTANCE}, {config.MAX_DISTANCE}]"
        )
    if not isinstance(sample.label, (int, np.integer)):
        raise ValidationError(f"{prefix}label must be an integer index, got {sample.label!r}")
    gesture_class(int(sample.label))
    if sample.split not in config.SPLITS:
        raise ValidationError(f"{prefix}unknown split '{sample.split}'")
    if sample.environment not in config.ENVIRONMENTS:
        raise ValidationError(f"{prefix}unknown environment '{sample.environment}'")


# ---------------------------------------------------------------------------
# Clip storage
# ---------------------------------------------------------------------------

def write_packed_clip(path: str, video: RawVideo, actor_mask: Optional[np.ndarray] = None,
                      meta: Optional[Dict] = None) -> None:
    """Write a single-file clip; identical inputs give identical bytes."""
    arrays = [('frames', np.ascontiguousarray(video.frames, dtype='<u1'))]
    if actor_mask is not None:
        arrays.append(('actor_mask', np.ascontiguousarray(actor_mask, dtype='<u1')))

    entries, offset = [], 0
    for name, arr in arrays:
        entries.append({
            'name': name, 'dtype': arr.dtype.str, 'shape': list(arr.shape),
            'offset': offset, 'nbytes': int(arr.nbytes),
        })
        offset += int(arr.nbytes)

    header = {
        'format': 'gclip', 'version': PACKED_CLIP_VERSION, 'fps': float(video.fps),
        'arrays': entries, 'meta': meta or {},
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'wb') as f:
        f.write(json.dumps(header, sort_keys=True).encode('utf-8') + b'\n')
        for _, arr in arrays:
            f.write(arr.tobytes())


def read_packed_clip(path: str) -> Tuple[RawVideo, Optional[np.ndarray], Dict]:
    try:
        with open(path, 'rb') as f:
            header = json.loads(f.readline().decode('utf-8'))
            payload = f.read()
    except OSError as e:
        raise LoadError(f"cannot read clip {path}: {e}")
    except json.JSONDecodeError as e:
        raise LoadError(f"clip {path} has a corrupt header: {e}")

    if header.get('format') != 'gclip' or header.get('version') != PACKED_CLIP_VERSION:
        raise LoadError(f"clip {path} is not a version {PACKED_CLIP_VERSION} packed clip")

    arrays = {}
    for entry in header['arrays']:
        start = entry['offset']
        chunk = payload[start:start + entry['nbytes']]
        if len(chunk) != entry['nbytes']:
            raise LoadError(f"clip {path} is truncated in array '{entry['name']}'")
        arrays[entry['name']] = np.frombuffer(chunk, dtype=np.dtype(entry['dtype'])).reshape(entry['shape']).copy()

    video = RawVideo(arrays['frames'].astype(np.uint8), fps=header['fps'])
    return video, arrays.get('actor_mask'), header.get('meta', {})


def write_frame_directory(path: str, video: RawVideo, meta: Optional[Dict] = None) -> None:
    os.makedirs(path, exist_ok=True)
    for i, frame in enumerate(video.frames):
        cv2.imwrite(os.path.join(path, f"{i:06d}.png"), cv2.cvtColor(frame, cv2.COLOR_RGB2BGR))
    with open(os.path.join(path, 'meta.json'), 'w') as f:
        json.dump({'fps': float(video.fps), **(meta or {})}, f, indent=2, sort_keys=True)


def read_frame_directory(path: str) -> Tuple[RawVideo, Dict]:
    names = sorted(
        (n for n in os.listdir(path) if n.lower().endswith(('.png', '.jpg', '.jpeg', '.bmp'))),
        key=lambda n: int(os.path.splitext(n)[0]) if os.path.splitext(n)[0].isdigit() else n,
    )
    if not names:
        raise LoadError(f"frame directory {path} contains no images")

    meta = {}
    meta_path = os.path.join(path, 'meta.json')
    if os.path.exists(meta_path):
        with open(meta_path, 'r') as f:
            meta = json.load(f)

    frames = []
    for name in names:
        image = cv2.imread(os.path.join(path, name), cv2.IMREAD_COLOR)
        if image is None:
            raise LoadError(f"cannot decode frame {name} in {path}")
        frames.append(cv2.cvtColor(image, cv2.COLOR_BGR2RGB))
    if len({f.shape for f in frames}) != 1:
        raise ValidationError(f"frames in {path} do not share dimensions")
    return RawVideo(np.stack(frames), fps=float(meta.get('fps', config.SYNTH_FPS))), meta


def read_clip(path: str) -> Tuple[RawVideo, Optional[SceneAnnotations], Dict]:
    """Read either storage layout; annotations only come back for generator clips."""
    if not os.path.exists(path):
        raise LoadError(f"clip not found: {path}")
    if os.path.isdir(path):
        video, meta = read_frame_directory(path)
        mask = None
    else:
        video, mask, meta = read_packed_clip(path)

    annotations = None
    if 'boxes' in meta:
        boxes = np.array([[np.nan] * 4 if b is None else b for b in meta['boxes']], dtype=np.float64)
        annotations = SceneAnnotations(boxes=boxes, actor_mask=mask)
    return video, annotations, meta


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

MANIFEST_FIELDS = ('video', 'distance', 'label', 'split')


def load_manifest(path: str) -> List[GestureSample]:
    """
    Read a JSON Lines manifest. Clip paths are resolved against the manifest's
    directory; frames are loaded lazily.
    """
    if not os.path.exists(path):
        raise LoadError(f"manifest not found: {path}")

    base_dir = os.path.dirname(os.path.abspath(path))
    samples = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            where = f"{path}:{line_no}"
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError(f"{where}: not a JSON record ({e})")

            missing = [k for k in MANIFEST_FIELDS if k not in row]
            if missing:
                raise ValidationError(f"{where}: missing fields {missing}")

            video_path = row['video'] if os.path.isabs(row['video']) else os.path.join(base_dir, row['video'])
            if not os.path.exists(video_path):
                raise LoadError(f"{where}: video file not found: {row['video']}")

            try:
                distance = float(row['distance'])
            except (TypeError, ValueError):
                raise ValidationError(f"{where}: distance {row['distance']!r} is not a number")

            label_key = row['label']
            if not _known_label(label_key):
                raise ValidationError(f"{where}: unknown class name '{label_key}'")
            label = gesture_class(label_key if isinstance(label_key, str) else int(label_key)).index

            sample = GestureSample(
                distance=distance,
                label=label,
                split=row['split'],
                environment=row.get('environment', 'synthetic'),
                clip_id=row.get('clip_id') or os.path.splitext(os.path.basename(row['video']))[0],
                source=video_path,
            )
            validate_sample(sample, where)
            samples.append(sample)

    logger.info(f"Loaded {len(samples)} samples from manifest {path}")
    return samples


def _known_label(key) -> bool:
    if isinstance(key, str):
        return key in config.GESTURE_CLASSES
    try:
        return 0 <= int(key) < len(GESTURE_CLASSES)
    except (TypeError, ValueError):
        return False


def write_manifest(path: str, samples: List[GestureSample]) -> None:
    base_dir = os.path.dirname(os.path.abspath(path))
    os.makedirs(base_dir, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for sample in samples:
            if sample.source is None:
                raise ValidationError(f"sample {sample.clip_id} has no stored clip to reference")
            row = {
                'clip_id': sample.clip_id,
                'video': os.path.relpath(os.path.abspath(sample.source), base_dir),
                'distance': round(float(sample.distance), 4),
                'label': CLASS_NAMES[sample.label],
                'split': sample.split,
                'environment': sample.environment,
            }
            f.write(json.dumps(row, sort_keys=True) + '\n')


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------

@dataclass
class AugmentConfig:
    flip_prob: float = 0.0
    rotation_degrees: float = 0.0
    scale_range: float = 0.0
    crop_fraction: float = 0.0
    brightness_delta: float = 0.0
    contrast_range: float = 0.0
    noise_std: float = 0.0

    @classmethod
    def default(cls) -> 'AugmentConfig':
        return cls(**config.AUGMENTATION_CONFIG)


def hflip_sample(sample: GestureSample) -> GestureSample:
    """Mirror frames and annotations; left/right-sensitive labels swap."""
    video = sample.video
    width = video.width
    frames = np.ascontiguousarray(video.frames[:, :, ::-1, :])

    annotations = sample.annotations
    if annotations is not None:
        boxes = annotations.boxes.copy()
        boxes[:, 0] = width - boxes[:, 0] - boxes[:, 2]
        mask = None
        if annotations.actor_mask is not None:
            mask = np.ascontiguousarray(annotations.actor_mask[:, :, ::-1])
        annotations = SceneAnnotations(boxes=boxes, actor_mask=mask)

    return replace(
        sample,
        raw_video=RawVideo(frames, fps=video.fps),
        label=mirror_label(sample.label),
        annotations=annotations,
    )


def augment(sample: GestureSample, seed: int, cfg: Optional[AugmentConfig] = None) -> GestureSample:
    """
    Random flip, rotation, scaling, crop, brightness/contrast and sensor noise.
    Distance is kept as annotated even when scaling changes apparent size.
    """
    cfg = cfg or AugmentConfig.default()
    sample = sample.load()
    rng = np.random.default_rng(seed)

    flip = bool(cfg.flip_prob > 0 and rng.random() < cfg.flip_prob)
    angle = float(rng.uniform(-cfg.rotation_degrees, cfg.rotation_degrees)) if cfg.rotation_degrees > 0 else 0.0
    scale = 1.0 + float(rng.uniform(-cfg.scale_range, cfg.scale_range)) if cfg.scale_range > 0 else 1.0
    crop = float(rng.uniform(0.0, cfg.crop_fraction)) if cfg.crop_fraction > 0 else 0.0
    crop_x, crop_y = (float(rng.random()), float(rng.random())) if crop > 0 else (0.0, 0.0)
    brightness = float(rng.uniform(-cfg.brightness_delta, cfg.brightness_delta)) if cfg.brightness_delta > 0 else 0.0
    contrast = 1.0 + float(rng.uniform(-cfg.contrast_range, cfg.contrast_range)) if cfg.contrast_range > 0 else 1.0

    if flip:
        sample = hflip_sample(sample)

    video = sample.video
    frames = video.frames
    annotations = sample.annotations
    geometric = angle != 0.0 or scale != 1.0 or crop > 0.0

    if geometric:
        matrix = _augment_matrix(video.width, video.height, angle, scale, crop, crop_x, crop_y)
        frames = np.stack([
            cv2.warpAffine(f, matrix, (video.width, video.height),
                           flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE)
            for f in frames
        ])
        if annotations is not None:
            annotations = _warp_annotations(annotations, matrix, video.width, video.height)

    photometric = brightness != 0.0 or contrast != 1.0 or cfg.noise_std > 0
    if photometric:
        work = frames.astype(np.float32)
        if brightness != 0.0 or contrast != 1.0:
            mean = work.mean(axis=(1, 2, 3), keepdims=True)
            work = (work - mean) * contrast + mean + brightness
        if cfg.noise_std > 0:
            work = work + rng.normal(0.0, cfg.noise_std * 255.0, size=work.shape).astype(np.float32)
        frames = np.clip(np.rint(work), 0, 255).astype(np.uint8)

    if not geometric and not photometric:
        frames = frames.copy()

    return replace(
        sample,
        raw_video=RawVideo(frames, fps=video.fps),
        annotations=annotations,
        metadata={**sample.metadata, 'augment_seed': int(seed)},
    )


def _augment_matrix(width: int, height: int, angle: float, scale: float,
                    crop: float, crop_x: float, crop_y: float) -> np.ndarray:
    rotation = np.vstack([cv2.getRotationMatrix2D((width / 2.0, height / 2.0), angle, scale), [0, 0, 1]])
    crop_w, crop_h = width * (1.0 - crop), height * (1.0 - crop)
    x0, y0 = crop_x * (width - crop_w), crop_y * (height - crop_h)
    resize = np.array([
        [width / crop_w, 0.0, -x0 * width / crop_w],
        [0.0, height / crop_h, -y0 * height / crop_h],
        [0.0, 0.0, 1.0],
    ])
    return (resize @ rotation)[:2]


def _warp_annotations(annotations: SceneAnnotations, matrix: np.ndarray,
                      width: int, height: int) -> SceneAnnotations:
    if annotations.actor_mask is not None:
        mask = np.stack([
            cv2.warpAffine(m, matrix, (width, height), flags=cv2.INTER_LINEAR,
                           borderMode=cv2.BORDER_CONSTANT, borderValue=0)
            for m in annotations.actor_mask
        ])
        return SceneAnnotations(boxes=boxes_from_masks(mask), actor_mask=mask)

    boxes = annotations.boxes.copy()
    for i, (x, y, w, h) in enumerate(annotations.boxes):
        if np.isnan(x):
            continue
        corners = np.array([[x, y, 1], [x + w, y, 1], [x, y + h, 1], [x + w, y + h, 1]]) @ matrix.T
        lo, hi = corners.min(axis=0), corners.max(axis=0)
        lo = np.clip(lo, 0, [width, height])
        hi = np.clip(hi, 0, [width, height])
        boxes[i] = [lo[0], lo[1], hi[0] - lo[0], hi[1] - lo[1]]
    return SceneAnnotations(boxes=boxes, actor_mask=None)


def boxes_from_masks(masks: np.ndarray, threshold: int = 128) -> np.ndarray:
    """Tight per-frame boxes around mask pixels at or above `threshold`."""
    boxes = np.full((masks.shape[0], 4), np.nan)
    for i, mask in enumerate(masks):
        ys, xs = np.nonzero(mask >= threshold)
        if len(xs):
            boxes[i] = [xs.min(), ys.min(), xs.max() - xs.min() + 1, ys.max() - ys.min() + 1]
    return boxes
