"""
Physical degradation simulators: resolution collapse, defocus, Beer-Lambert
attenuation, fog, motion blur, sensor noise and scene clutter.

Stages run in light-path order (scene -> optics -> medium -> sensor):
clutter, resolution collapse, defocus, attenuation, fog, motion blur, noise.
"""

import math
import logging
from dataclasses import dataclass, asdict
from typing import Optional

import cv2
import numpy as np

import config
from errors import ValidationError
from gesture_dataset import RawVideo

logger = logging.getLogger(__name__)


@dataclass
class DegradationConfig:
    attenuation: float = 0.0          # eta_sim, 1/m
    defocus_sigma: float = 0.0        # sigma_0, pixels at the reference distance
    fog_density: float = 0.0
    motion_blur: float = 0.0          # kernel length, pixels
    noise_std: float = 0.0            # fraction of full scale
    clutter: str = 'none'
    resolution_factor: int = 0        # 0/1 disables the stage

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.attenuation < 0:
            raise ValidationError(f"attenuation must be >= 0, got {self.attenuation}")
        if self.defocus_sigma < 0:
            raise ValidationError(f"defocus sigma must be >= 0, got {self.defocus_sigma}")
        if not 0.0 <= self.fog_density <= 1.0:
            raise ValidationError(f"fog density must lie in [0, 1], got {self.fog_density}")
        if self.motion_blur < 0:
            raise ValidationError(f"motion blur length must be >= 0, got {self.motion_blur}")
        if not 0.0 <= self.noise_std <= 1.0:
            raise ValidationError(f"noise std must lie in [0, 1], got {self.noise_std}")
        if self.clutter not in config.CLUTTER_PRESETS:
            raise ValidationError(f"unknown clutter level '{self.clutter}'")
        if int(self.resolution_factor) < 0:
            raise ValidationError(f"resolution factor must be >= 0, got {self.resolution_factor}")

    @classmethod
    def preset(cls, name: str) -> 'DegradationConfig':
        if name not in config.DEGRADATION_PRESETS:
            raise ValidationError(f"unknown degradation preset '{name}'")
        return cls(**config.DEGRADATION_PRESETS[name])

    def is_identity(self) -> bool:
        return (self.attenuation == 0 and self.defocus_sigma == 0 and self.fog_density == 0
                and self.motion_blur == 0 and self.noise_std == 0 and self.clutter == 'none'
                and int(self.resolution_factor) <= 1)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Stage functions (float32 images, gray levels 0..255)
# ---------------------------------------------------------------------------

def defocus_sigma_at(sigma0: float, distance: Optional[float]) -> float:
    if distance is None:
        return float(sigma0)
    return float(sigma0) * float(distance) / config.REFERENCE_DISTANCE


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = max(1, int(math.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return (kernel / kernel.sum()).astype(np.float32)


def collapse_resolution(image: np.ndarray, factor: int) -> np.ndarray:
    factor = int(factor)
    if factor <= 1:
        return image
    h, w = image.shape[:2]
    small = cv2.resize(image, (max(1, w // factor), max(1, h // factor)), interpolation=cv2.INTER_AREA)
    return cv2.resize(small, (w, h), interpolation=cv2.INTER_NEAREST)


def apply_defocus(image: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return image
    kernel = gaussian_kernel(sigma)
    return cv2.sepFilter2D(image.astype(np.float32), -1, kernel, kernel, borderType=cv2.BORDER_REFLECT)


def attenuation_factor(eta: float, distance: float) -> float:
    """Beer-Lambert transmission exp(-eta * distance)."""
    return float(math.exp(-float(eta) * float(distance)))


def apply_attenuation(image: np.ndarray, factor: float) -> np.ndarray:
    """Scale contrast around the frame mean by `factor`."""
    if factor == 1.0:
        return image
    mean = image.mean(axis=(0, 1), keepdims=True)
    return mean + (image - mean) * factor


def apply_fog(image: np.ndarray, density: float, color: float = config.FOG_COLOR) -> np.ndarray:
    if density <= 0:
        return image
    return image * (1.0 - density) + color * density


def motion_blur_kernel(length: float, angle_degrees: float) -> np.ndarray:
    size = max(1, int(round(length)))
    if size % 2 == 0:
        size += 1
    kernel = np.zeros((size, size), dtype=np.float32)
    kernel[size // 2, :] = 1.0
    rotation = cv2.getRotationMatrix2D((size / 2.0 - 0.5, size / 2.0 - 0.5), angle_degrees, 1.0)
    kernel = cv2.warpAffine(kernel, rotation, (size, size))
    total = kernel.sum()
    if total <= 0:
        kernel[size // 2, size // 2] = 1.0
        total = 1.0
    return kernel / total


def apply_motion_blur(image: np.ndarray, length: float, angle_degrees: float) -> np.ndarray:
    if length < 1:
        return image
    kernel = motion_blur_kernel(length, angle_degrees)
    return cv2.filter2D(image.astype(np.float32), -1, kernel, borderType=cv2.BORDER_REFLECT)


def add_noise(image: np.ndarray, std: float, rng: np.random.Generator) -> np.ndarray:
    if std <= 0:
        return image
    return image + rng.normal(0.0, std * 255.0, size=image.shape).astype(np.float32)


def quantize(frames: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(frames), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# Clutter
# ---------------------------------------------------------------------------

def clutter_texture(height: int, width: int, level: str, rng: np.random.Generator) -> np.ndarray:
    amplitude = config.CLUTTER_PRESETS[level]['texture']
    if amplitude <= 0:
        return np.zeros((height, width), dtype=np.float32)
    noise = rng.normal(0.0, 1.0, size=(height, width)).astype(np.float32)
    noise = cv2.GaussianBlur(noise, (0, 0), sigmaX=max(1.0, min(height, width) / 40.0))
    noise /= max(float(noise.std()), 1e-6)
    return noise * amplitude


def apply_clutter(frames: np.ndarray, level: str, rng: np.random.Generator) -> np.ndarray:
    """Static texture, moving distractor blobs and abrupt lighting steps."""
    preset = config.CLUTTER_PRESETS[level]
    n, h, w = frames.shape[:3]
    if level == 'none':
        return frames

    frames = frames + clutter_texture(h, w, level, rng)[None, :, :, None]

    for _ in range(preset['distractors']):
        radius = float(rng.uniform(0.03, 0.08)) * min(h, w)
        color = rng.uniform(40.0, 220.0, size=3).astype(np.float32)
        pos = np.array([rng.uniform(0, w), rng.uniform(0, h)])
        vel = rng.uniform(-2.0, 2.0, size=2)
        for t in range(n):
            alpha = disc_alpha(h, w, pos[0], pos[1], radius)
            frames[t] = frames[t] * (1.0 - alpha[..., None]) + color * alpha[..., None]
            pos = pos + vel
            for axis, limit in ((0, w), (1, h)):
                if pos[axis] < 0 or pos[axis] > limit:
                    vel[axis] = -vel[axis]
                    pos[axis] = min(max(pos[axis], 0.0), float(limit))

    for _ in range(preset['lighting_jumps']):
        start = int(rng.integers(0, n))
        frames[start:] = frames[start:] * float(rng.uniform(0.7, 1.3))
    return frames


def disc_alpha(height: int, width: int, cx: float, cy: float, radius: float,
               supersample: int = config.SYNTH_SUPERSAMPLE) -> np.ndarray:
    """Anti-aliased filled disc as float alpha in [0, 1]."""
    s = supersample
    canvas = np.zeros((height * s, width * s), dtype=np.uint8)
    cv2.circle(canvas, (int(round(cx * s)), int(round(cy * s))), max(1, int(round(radius * s))),
               255, thickness=-1, lineType=cv2.LINE_AA)
    small = cv2.resize(canvas, (width, height), interpolation=cv2.INTER_AREA)
    return small.astype(np.float32) / 255.0


# ---------------------------------------------------------------------------
# Whole-video degradation
# ---------------------------------------------------------------------------

def degrade(video: RawVideo, deg: DegradationConfig, seed: int,
            distance: Optional[float] = None) -> RawVideo:
    """
    Apply the configured degradations to every frame. The all-zero config is
    the identity. Attenuation only applies when `distance` is given.
    """
    if deg.is_identity():
        return RawVideo(video.frames.copy(), fps=video.fps)

    rng = np.random.default_rng(seed)
    frames = video.frames.astype(np.float32)
    frames = apply_clutter(frames, deg.clutter, rng)

    sigma = defocus_sigma_at(deg.defocus_sigma, distance)
    factor = attenuation_factor(deg.attenuation, distance) if distance is not None else 1.0
    blur_angle = float(rng.uniform(0.0, 180.0))

    out = np.empty_like(frames)
    for t in range(frames.shape[0]):
        image = collapse_resolution(frames[t], deg.resolution_factor)
        image = apply_defocus(image, sigma)
        image = apply_attenuation(image, factor)
        out[t] = image
    out = finish_frames(out, deg, rng, blur_angle)
    return RawVideo(quantize(out), fps=video.fps)


def finish_frames(frames: np.ndarray, deg: DegradationConfig, rng: np.random.Generator,
                  blur_angle: float) -> np.ndarray:
    """Medium and sensor stages shared with the generator: fog, motion blur, noise."""
    out = np.empty_like(frames)
    for t in range(frames.shape[0]):
        image = apply_fog(frames[t], deg.fog_density)
        image = apply_motion_blur(image, deg.motion_blur, blur_angle)
        out[t] = add_noise(image, deg.noise_std, rng)
    return out
