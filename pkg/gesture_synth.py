"""
Synthetic long-range gesture generator.

An anti-aliased stick figure (head, torso, legs, two 2-segment arms and a
small hand marker) is rendered over a background layer. The actor's pixel
height follows the pinhole law focal_scale / distance, and the physical
degradations are applied in light-path order so that the actor contrast
above the background scales by exp(-eta * distance).

Visually confusable classes share frames by construction:
go-back/stop, go-up/beckoning and turn-around/pointing all pass through the
partner's pose at phase zero.
"""

import os
import math
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict, replace
from typing import Dict, List, Optional, Sequence, Tuple

import cv2
import numpy as np

import config
from errors import GenerationError, ValidationError
from gesture_dataset import (
    CLASS_NAMES, PACKED_CLIP_SUFFIX, GestureSample, RawVideo, SceneAnnotations,
    boxes_from_masks, gesture_class, write_manifest, write_packed_clip,
)
from degradation import (
    DegradationConfig, apply_clutter, apply_defocus, attenuation_factor,
    collapse_resolution, defocus_sigma_at, finish_frames, quantize,
)

logger = logging.getLogger(__name__)

NULL_LABEL = CLASS_NAMES.index('null')
BOX_MASK_THRESHOLD = 64
_SHIFT = 4                      # fractional bits for sub-pixel drawing


@dataclass
class SyntheticSceneSpec:
    distance: float
    gesture: int
    focal_scale: float = config.SYNTH_FOCAL_SCALE
    tempo: float = 1.0                  # gesture cycles per second
    background_seed: int = 0
    illumination_gain: float = 1.0
    environment: str = 'synthetic'
    arm: str = 'auto'                   # 'left', 'right' or 'auto' (drawn from the seed)
    frame_count: int = config.SYNTH_FRAME_COUNT
    fps: float = float(config.SYNTH_FPS)
    width: int = config.SYNTH_FRAME_WIDTH
    height: int = config.SYNTH_FRAME_HEIGHT
    idle_motion: float = 0.03           # null-class sway, fraction of actor height
    jitter_degrees: float = 1.5

    def __post_init__(self):
        gesture_class(self.gesture)
        if self.distance <= 0:
            raise ValidationError(f"distance must be positive, got {self.distance}")
        if self.focal_scale <= 0:
            raise ValidationError(f"focal scale must be positive, got {self.focal_scale}")
        if self.tempo <= 0:
            raise ValidationError(f"tempo must be positive, got {self.tempo}")
        if self.illumination_gain <= 0:
            raise ValidationError(f"illumination gain must be positive, got {self.illumination_gain}")
        if self.environment not in config.ENVIRONMENT_PRESETS:
            raise ValidationError(f"unknown environment '{self.environment}'")
        if self.arm not in ('auto', 'left', 'right'):
            raise ValidationError(f"arm must be 'auto', 'left' or 'right', got '{self.arm}'")
        if self.frame_count < 1:
            raise ValidationError("frame count must be >= 1")

    @property
    def actor_height(self) -> float:
        return self.focal_scale / self.distance

    def to_dict(self) -> Dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Kinematics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArmPose:
    """Angles in degrees from straight down, positive away from the body."""
    upper: float
    fore: float
    marker: str = 'none'
    marker_side: float = 0.0    # for 'palm-side': +1 outward, -1 inward


REST_POSE = ArmPose(12.0, 6.0)


def gesture_pose(name: str, phase: float, cycle: float, side: int) -> ArmPose:
    """
    Pose of the gesturing arm. `phase` is the cycle angle in radians,
    `cycle` the fractional cycle position in [0, 1) and `side` is +1 when
    the arm's outward direction is image +x.
    """
    lift = (1.0 - math.cos(phase)) / 2.0

    if name == 'stop':
        return ArmPose(95.0, 175.0, 'palm')
    if name == 'go-back':
        return ArmPose(95.0, 175.0 - 45.0 * lift, 'palm')
    if name == 'pointing':
        return ArmPose(90.0, 90.0, 'finger')
    if name == 'turn-around':
        return ArmPose(90.0, 90.0 + math.degrees(phase) % 360.0, 'finger')
    if name == 'go-up':
        upper = 90.0 + 75.0 * lift
        return ArmPose(upper, upper, 'palm-up')
    if name == 'beckoning':
        return ArmPose(90.0, 90.0 + 70.0 * lift, 'palm-up')
    if name == 'go-down':
        upper = 90.0 - 65.0 * lift
        return ArmPose(upper, upper, 'palm-down')
    if name == 'follow-me':
        swing = math.sin(phase)
        return ArmPose(100.0 + 40.0 * swing, 150.0 + 30.0 * math.cos(phase), 'palm')
    if name == 'thumbs-up':
        return ArmPose(35.0, 150.0, 'thumb-up')
    if name == 'thumbs-down':
        return ArmPose(35.0, 70.0, 'thumb-down')
    if name in ('move-right', 'move-left'):
        # slow sweep towards the travel direction, quick return
        direction = 1.0 if name == 'move-right' else -1.0
        fore_image = 180.0 - direction * (-50.0 + 100.0 * cycle)
        return ArmPose(55.0, side * fore_image, 'palm-side', marker_side=direction * side)
    return REST_POSE


def _limb(origin: Tuple[float, float], angle: float, length: float, side: int) -> Tuple[float, float]:
    rad = math.radians(angle)
    return origin[0] + side * length * math.sin(rad), origin[1] + length * math.cos(rad)


class _Jitter:
    """Smooth per-clip angle wobble from two random sinusoids."""

    def __init__(self, rng: np.random.Generator, amplitude: float):
        self.amplitude = amplitude
        self.freqs = rng.uniform(0.2, 0.7, size=2)
        self.phases = rng.uniform(0.0, 2 * math.pi, size=2)

    def __call__(self, seconds: float, offset: float = 0.0) -> float:
        if self.amplitude == 0:
            return 0.0
        waves = np.sin(2 * math.pi * self.freqs * seconds + self.phases + offset)
        return float(self.amplitude * waves.mean())


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

class StickFigureRenderer:
    """Draws actor alpha masks on a supersampled canvas."""

    def __init__(self, width: int, height: int, actor_height: float,
                 supersample: int = config.SYNTH_SUPERSAMPLE):
        self.width = width
        self.height = height
        self.scale = supersample
        self.actor_height = actor_height
        self.thickness = max(1.5, 0.06 * actor_height)

    def _pt(self, p: Tuple[float, float]) -> Tuple[int, int]:
        k = self.scale * (1 << _SHIFT)
        return int(round(p[0] * k)), int(round(p[1] * k))

    def _line(self, canvas, a, b, thickness):
        cv2.line(canvas, self._pt(a), self._pt(b), 255,
                 thickness=max(1, int(round(thickness * self.scale))), lineType=cv2.LINE_AA, shift=_SHIFT)

    def _disc(self, canvas, center, radius):
        r = int(round(max(radius, 0.5) * self.scale * (1 << _SHIFT)))
        cv2.circle(canvas, self._pt(center), r, 255, thickness=-1, lineType=cv2.LINE_AA, shift=_SHIFT)

    def render(self, cx: float, top: float, poses: Dict[int, ArmPose]) -> np.ndarray:
        """
        Alpha mask in [0, 1] for a figure whose head top is at `top` and whose
        feet end exactly `actor_height` below it. `poses` maps side (+1/-1) to
        an arm pose.
        """
        H = self.actor_height
        t = self.thickness
        canvas = np.zeros((self.height * self.scale, self.width * self.scale), dtype=np.uint8)

        head_r = max(0.08 * H, t / 2.0)
        neck_y = top + 2 * head_r
        shoulder_y = neck_y + 0.04 * H
        hip_y = top + 0.55 * H
        foot_y = top + H - t / 2.0
        shoulder_half = 0.09 * H

        self._disc(canvas, (cx, top + head_r), head_r)
        self._line(canvas, (cx, neck_y), (cx, hip_y), t)
        self._line(canvas, (cx - shoulder_half, shoulder_y), (cx + shoulder_half, shoulder_y), t)
        self._line(canvas, (cx, hip_y), (cx - 0.09 * H, foot_y), t)
        self._line(canvas, (cx, hip_y), (cx + 0.09 * H, foot_y), t)

        for side, pose in poses.items():
            shoulder = (cx + side * shoulder_half, shoulder_y)
            elbow = _limb(shoulder, pose.upper, 0.17 * H, side)
            hand = _limb(elbow, pose.fore, 0.16 * H, side)
            self._line(canvas, shoulder, elbow, t)
            self._line(canvas, elbow, hand, t)
            self._marker(canvas, hand, pose, side)

        small = cv2.resize(canvas, (self.width, self.height), interpolation=cv2.INTER_AREA)
        return small.astype(np.float32) / 255.0

    def _marker(self, canvas, hand, pose: ArmPose, side: int):
        H = self.actor_height
        r = max(0.035 * H, self.thickness / 2.0)
        reach = 0.05 * H
        if pose.marker == 'palm':
            self._disc(canvas, hand, r * 1.3)
        elif pose.marker == 'palm-up':
            self._disc(canvas, (hand[0], hand[1] - 1.2 * r), r)
        elif pose.marker == 'palm-down':
            self._disc(canvas, (hand[0], hand[1] + 1.2 * r), r)
        elif pose.marker == 'palm-side':
            self._disc(canvas, (hand[0] + side * pose.marker_side * 1.2 * r, hand[1]), r)
        elif pose.marker == 'finger':
            self._line(canvas, hand, _limb(hand, pose.fore, reach, side), self.thickness * 0.7)
        elif pose.marker == 'thumb-up':
            self._line(canvas, hand, (hand[0], hand[1] - reach), self.thickness * 0.7)
        elif pose.marker == 'thumb-down':
            self._line(canvas, hand, (hand[0], hand[1] + reach), self.thickness * 0.7)


def frame_labels(segments: Sequence[Tuple[int, int]]) -> np.ndarray:
    return np.concatenate([np.full(length, label, dtype=np.int64) for label, length in segments])


def _render_actor(spec: SyntheticSceneSpec, segments: Sequence[Tuple[int, int]],
                  rng: np.random.Generator) -> Tuple[np.ndarray, Dict]:
    H = spec.actor_height
    if H < config.SYNTH_MIN_ACTOR_PIXELS:
        raise GenerationError(
            f"actor below minimum renderable size: {H:.2f} px at {spec.distance} m "
            f"(minimum {config.SYNTH_MIN_ACTOR_PIXELS} px)"
        )

    horizon = 0.45 * spec.height
    ground = spec.height - 4.0
    foot = horizon + (ground - horizon) * min(1.0, config.MIN_DISTANCE / spec.distance)
    top = foot - H
    if top < 0:
        raise GenerationError(f"actor of {H:.1f} px does not fit a {spec.height} px frame")

    cx = float(rng.uniform(0.3, 0.7)) * spec.width
    side = int(rng.choice([-1, 1])) if spec.arm == 'auto' else (1 if spec.arm == 'left' else -1)
    phase0 = float(rng.uniform(0.0, 2 * math.pi))
    jitter = _Jitter(rng, spec.jitter_degrees)
    sway_phase = float(rng.uniform(0.0, 2 * math.pi))

    renderer = StickFigureRenderer(spec.width, spec.height, H)
    labels = frame_labels(segments)
    alphas = np.empty((len(labels), spec.height, spec.width), dtype=np.float32)
    for t, label in enumerate(labels):
        seconds = t / spec.fps
        cycles = spec.tempo * seconds + phase0 / (2 * math.pi)
        phase = 2 * math.pi * cycles
        name = CLASS_NAMES[label]

        x = cx
        if name == 'null':
            x = cx + spec.idle_motion * H * math.sin(2 * math.pi * 0.3 * seconds + sway_phase)
            pose = REST_POSE
        else:
            pose = gesture_pose(name, phase, cycles % 1.0, side)
        pose = replace(pose, upper=pose.upper + jitter(seconds), fore=pose.fore + jitter(seconds, 1.0))

        alphas[t] = renderer.render(x, top, {side: pose, -side: REST_POSE})

    info = {
        'arm': 'left' if side == 1 else 'right',
        'actor_height_px': round(H, 4),
        'actor_top': round(top, 4),
        'actor_center_x': round(cx, 4),
        'phase0': round(phase0, 6),
    }
    return alphas, info


def _compose(spec: SyntheticSceneSpec, deg: DegradationConfig, alphas: np.ndarray,
             scene_rng: np.random.Generator, rng: np.random.Generator) -> np.ndarray:
    env = config.ENVIRONMENT_PRESETS[spec.environment]
    n = alphas.shape[0]

    background = np.full((n, spec.height, spec.width, 3), env['background_level'], dtype=np.float32)
    background = apply_clutter(background, deg.clutter, scene_rng)
    contrast = config.ACTOR_BASE_CONTRAST * spec.illumination_gain
    transmission = attenuation_factor(deg.attenuation, spec.distance)
    sigma = defocus_sigma_at(deg.defocus_sigma, spec.distance)

    frames = np.empty_like(background)
    for t in range(n):
        actor = np.repeat(alphas[t][..., None] * contrast, 3, axis=2)
        back = background[t]
        back = apply_defocus(collapse_resolution(back, deg.resolution_factor), sigma)
        actor = apply_defocus(collapse_resolution(actor, deg.resolution_factor), sigma)
        frames[t] = back + transmission * actor

    sensor = replace(deg, noise_std=float(math.hypot(deg.noise_std, env['noise_std'])))
    blur_angle = float(rng.uniform(0.0, 180.0))
    return finish_frames(frames, sensor, rng, blur_angle)


def _render(spec: SyntheticSceneSpec, deg: DegradationConfig, seed: int,
            segments: Sequence[Tuple[int, int]]) -> Tuple[RawVideo, SceneAnnotations, Dict]:
    rng = np.random.default_rng(seed)
    scene_rng = np.random.default_rng([spec.background_seed, seed])
    alphas, info = _render_actor(spec, segments, rng)
    frames = _compose(spec, deg, alphas, scene_rng, rng)

    mask = np.rint(alphas * 255.0).astype(np.uint8)
    annotations = SceneAnnotations(boxes=boxes_from_masks(mask, BOX_MASK_THRESHOLD), actor_mask=mask)
    return RawVideo(quantize(frames), fps=spec.fps), annotations, info


def synth_clip(spec: SyntheticSceneSpec, deg: Optional[DegradationConfig] = None,
               seed: int = 0) -> GestureSample:
    """Render one labelled clip; identical arguments give identical bytes."""
    deg = deg or DegradationConfig()
    video, annotations, info = _render(spec, deg, seed, [(spec.gesture, spec.frame_count)])
    return GestureSample(
        distance=float(spec.distance),
        label=int(spec.gesture),
        environment=spec.environment,
        clip_id=f"synth-{seed}",
        raw_video=video,
        annotations=annotations,
        metadata={'seed': int(seed), 'spec': spec.to_dict(), 'degradation': deg.to_dict(), **info},
    )


def synth_sequence(spec: SyntheticSceneSpec, labels: Sequence[int], deg: Optional[DegradationConfig] = None,
                   seed: int = 0, gap_frames: int = config.SYNTH_FPS) -> GestureSample:
    """
    Several gestures performed back to back by one actor, separated by
    null-class gaps. Segment spans go in metadata['segments'].
    """
    if not labels:
        raise ValidationError("a gesture sequence needs at least one label")
    deg = deg or DegradationConfig()

    layout, segments, cursor = [], [], 0
    for i, label in enumerate(labels):
        gesture_class(label)
        if i > 0 and gap_frames > 0:
            layout.append((NULL_LABEL, gap_frames))
            cursor += gap_frames
        layout.append((int(label), spec.frame_count))
        segments.append({'label': int(label), 'start': cursor, 'end': cursor + spec.frame_count})
        cursor += spec.frame_count

    video, annotations, info = _render(spec, deg, seed, layout)
    return GestureSample(
        distance=float(spec.distance),
        label=int(labels[0]),
        environment=spec.environment,
        clip_id=f"sequence-{seed}",
        raw_video=video,
        annotations=annotations,
        metadata={'seed': int(seed), 'segments': segments, 'frame_labels': frame_labels(layout).tolist(),
                  'spec': spec.to_dict(), 'degradation': deg.to_dict(), **info},
    )


def save_clip(sample: GestureSample, path: str) -> GestureSample:
    """Store a generated sample as a packed clip and point the sample at it."""
    boxes = None
    if sample.annotations is not None:
        boxes = [None if np.isnan(b[0]) else [float(v) for v in b] for b in sample.annotations.boxes]
    meta = {k: v for k, v in sample.metadata.items() if k != 'frame_labels'}
    meta.update({'distance': float(sample.distance), 'label': CLASS_NAMES[sample.label], 'boxes': boxes})
    mask = sample.annotations.actor_mask if sample.annotations is not None else None
    write_packed_clip(path, sample.video, actor_mask=mask, meta=meta)
    return replace(sample, source=path)


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------

@dataclass
class BenchmarkItem:
    clip_id: str
    spec: SyntheticSceneSpec
    seed: int
    split: str


def resolve_classes(class_mix: Optional[Sequence[str]]) -> List[int]:
    """Class names, or the groups 'all', 'dynamic', 'static'."""
    if not class_mix:
        class_mix = ['all']
    labels = []
    for key in class_mix:
        if key == 'all':
            labels.extend(range(len(CLASS_NAMES)))
        elif key in ('dynamic', 'static'):
            labels.extend(i for i, name in enumerate(CLASS_NAMES)
                          if config.GESTURE_CLASSES[name]['kind'] == key)
        else:
            labels.append(gesture_class(key).index)
    return sorted(set(labels))


def benchmark_items(count: int, seed: int, classes: Optional[Sequence[int]] = None,
                    distance_range: Tuple[float, float] = (config.MIN_DISTANCE, config.MAX_DISTANCE),
                    environments: Optional[Sequence[str]] = None,
                    split_fractions: Tuple[float, float, float] = (0.7, 0.15, 0.15),
                    frame_count: int = config.SYNTH_FRAME_COUNT) -> List[BenchmarkItem]:
    """Class-balanced scene specs with seeded distances, tempos and splits."""
    lo, hi = distance_range
    if not config.MIN_DISTANCE <= lo <= hi <= config.MAX_DISTANCE:
        raise ValidationError(f"distance range {distance_range} outside "
                              f"[{config.MIN_DISTANCE}, {config.MAX_DISTANCE}]")
    if count < 1:
        raise ValidationError("benchmark count must be >= 1")
    classes = list(classes) if classes else list(range(len(CLASS_NAMES)))
    environments = list(environments) if environments else ['synthetic']

    rng = np.random.default_rng(seed)
    order = rng.permutation(count)
    n_train = int(round(split_fractions[0] * count))
    n_val = int(round(split_fractions[1] * count))
    split_of = np.empty(count, dtype=object)
    split_of[order[:n_train]] = 'train'
    split_of[order[n_train:n_train + n_val]] = 'val'
    split_of[order[n_train + n_val:]] = 'test'

    items = []
    for i in range(count):
        env = environments[i % len(environments)]
        jitter = config.ILLUMINATION_JITTER
        gain = config.ENVIRONMENT_PRESETS[env]['illumination_gain'] * float(rng.uniform(1.0 - jitter, 1.0 + jitter))
        spec = SyntheticSceneSpec(
            distance=round(float(rng.uniform(lo, hi)), 3),
            gesture=classes[i % len(classes)],
            tempo=float(rng.uniform(0.7, 1.3)),
            background_seed=int(rng.integers(0, 2 ** 31 - 1)),
            illumination_gain=gain,
            environment=env,
            frame_count=frame_count,
        )
        items.append(BenchmarkItem(f"clip-{seed}-{i:05d}", spec, int(rng.integers(0, 2 ** 31 - 1)), split_of[i]))
    return items


def render_item(item: BenchmarkItem, deg: DegradationConfig) -> GestureSample:
    sample = synth_clip(item.spec, deg, item.seed)
    return replace(sample, clip_id=item.clip_id, split=item.split)


def generate_benchmark(out_dir: str, items: Sequence[BenchmarkItem],
                       deg: Optional[DegradationConfig] = None, workers: int = 1) -> List[GestureSample]:
    """Render every item to `out_dir/clips` and write `out_dir/manifest.jsonl`."""
    deg = deg or DegradationConfig()
    clip_dir = os.path.join(out_dir, 'clips')
    os.makedirs(clip_dir, exist_ok=True)

    def work(item: BenchmarkItem) -> GestureSample:
        sample = render_item(item, deg)
        stored = save_clip(sample, os.path.join(clip_dir, item.clip_id + PACKED_CLIP_SUFFIX))
        return replace(stored, raw_video=None, annotations=None)

    logger.info(f"Rendering {len(items)} synthetic clips into {out_dir} with {workers} worker(s)")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(work, items))
    else:
        samples = [work(item) for item in items]

    write_manifest(os.path.join(out_dir, 'manifest.jsonl'), samples)
    logger.info(f"Wrote manifest with {len(samples)} clips")
    return samples
