"""
Depth-conditioned deformable alignment (DADA).

Feature volumes are (B, C, T, H, W). Depth z is (B, 1, T, H, W) in meters and
flow is (B, 2, T, H, W) holding (u, v) in pixels/frame of the same grid.

For each ray index k in [-K, K] a position is sampled at

    S_k = (x, y) + (k / z) * f_hat + dP,   f_hat = (u, v) / (|(u, v)| + eps)

the samples are mixed with weights g_k(z, |flow|) that sum to one, and the
result is multiplied by exp(eta * z) to undo Beer-Lambert attenuation.
"""

import math
import logging
from dataclasses import dataclass, asdict
from typing import Callable, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

import config
from errors import NumericError, ShapeError

logger = logging.getLogger(__name__)


@dataclass
class RaySampleConfig:
    ray_samples: int = config.MODEL_CONFIG['ray_samples']
    epsilon: float = config.FLOW_EPSILON
    eta_init: float = config.MODEL_CONFIG['eta_init']
    eta_learnable: bool = config.MODEL_CONFIG['eta_learnable']
    exponent_cap: float = config.MODEL_CONFIG['exponent_cap']
    offset_clamp: float = config.MODEL_CONFIG['offset_clamp']
    offset_hidden: int = config.MODEL_CONFIG['offset_hidden']
    weight_hidden: int = config.MODEL_CONFIG['weight_hidden']

    def __post_init__(self):
        if self.ray_samples < 1:
            raise ShapeError(f"ray_samples K must be >= 1, got {self.ray_samples}")
        if not 0 < self.exponent_cap <= 20:
            raise ShapeError(f"exponent cap must lie in (0, 20], got {self.exponent_cap}")
        if self.epsilon <= 0:
            raise ShapeError("epsilon must be positive")

    def to_dict(self):
        return asdict(self)


def check_aligned(features: torch.Tensor, z: torch.Tensor, flow: torch.Tensor) -> None:
    if features.dim() != 5:
        raise ShapeError(f"feature volume must be (B, C, T, H, W), got {tuple(features.shape)}")
    b, _, t, h, w = features.shape
    for name, tensor, channels in (('depth', z, 1), ('flow', flow, 2)):
        if tensor.dim() != 5 or tensor.shape[1] != channels:
            raise ShapeError(f"{name} must be (B, {channels}, T, H, W), got {tuple(tensor.shape)}")
        for axis, a, e in zip(('B', 'T', 'H', 'W'), (tensor.shape[0],) + tuple(tensor.shape[2:]), (b, t, h, w)):
            if a != e:
                raise ShapeError(f"{name} axis {axis} is {a} but the feature volume has {e}")


def check_finite(tensor: torch.Tensor, stage: str) -> torch.Tensor:
    if not torch.isfinite(tensor).all():
        raise NumericError("non-finite values", stage=stage)
    return tensor


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def flow_direction(flow: torch.Tensor, epsilon: float = config.FLOW_EPSILON) -> torch.Tensor:
    magnitude = torch.sqrt((flow ** 2).sum(dim=1, keepdim=True))
    return flow / (magnitude + epsilon)


def ray_offsets(k: float, z: torch.Tensor, flow: torch.Tensor,
                epsilon: float = config.FLOW_EPSILON) -> torch.Tensor:
    """Flow term (k / z) * f_hat, shape (B, 2, T, H, W)."""
    return (k / z) * flow_direction(flow, epsilon)


def base_grid(like: torch.Tensor) -> torch.Tensor:
    """Pixel coordinates (x, y) of every cell, shape (1, 2, 1, H, W)."""
    h, w = like.shape[-2:]
    ys, xs = torch.meshgrid(torch.arange(h, dtype=like.dtype, device=like.device),
                            torch.arange(w, dtype=like.dtype, device=like.device), indexing='ij')
    return torch.stack([xs, ys])[None, :, None]


def sample_positions(k: float, z: torch.Tensor, flow: torch.Tensor, offsets: Optional[torch.Tensor] = None,
                     epsilon: float = config.FLOW_EPSILON) -> torch.Tensor:
    """Absolute (x, y) sample positions S_k; may be fractional or out of bounds."""
    positions = base_grid(z) + ray_offsets(k, z, flow, epsilon)
    if offsets is not None:
        positions = positions + offsets
    return positions


def bilinear_gather(features: torch.Tensor, positions: torch.Tensor) -> torch.Tensor:
    """Bilinear lookup of each frame at (x, y) positions with edge clamping."""
    b, c, t, h, w = features.shape
    x = positions[:, 0].clamp(0, w - 1)
    y = positions[:, 1].clamp(0, h - 1)
    x0, y0 = x.detach().floor(), y.detach().floor()
    wx, wy = (x - x0).unsqueeze(1), (y - y0).unsqueeze(1)
    x0i, y0i = x0.long(), y0.long()
    x1i, y1i = (x0i + 1).clamp(max=w - 1), (y0i + 1).clamp(max=h - 1)

    flat = features.reshape(b, c, t, h * w)

    def take(yi, xi):
        index = (yi * w + xi).reshape(b, 1, t, h * w).expand(b, c, t, h * w)
        return flat.gather(3, index).reshape(b, c, t, h, w)

    return (take(y0i, x0i) * (1 - wx) * (1 - wy) + take(y0i, x1i) * wx * (1 - wy)
            + take(y1i, x0i) * (1 - wx) * wy + take(y1i, x1i) * wx * wy)


# ---------------------------------------------------------------------------
# Learned pieces
# ---------------------------------------------------------------------------

class OffsetNet(nn.Module):
    """Two 3-D convolutions over [F, z, flow]; last layer starts at zero."""

    def __init__(self, channels: int, hidden: int = 32, clamp: float = 8.0):
        super().__init__()
        self.clamp = clamp
        self.conv1 = nn.Conv3d(channels + 3, hidden, kernel_size=3, padding=1)
        self.conv2 = nn.Conv3d(hidden, 2, kernel_size=3, padding=1)
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)

    def forward(self, features, z, flow):
        check_aligned(features, z, flow)
        guide = torch.cat([features, z / config.REFERENCE_DISTANCE, flow], dim=1)
        raw = self.conv2(F.gelu(self.conv1(guide)))
        return self.clamp * torch.tanh(raw / self.clamp)


class RayWeightNet(nn.Module):
    """Pointwise 2-layer perceptron (z, |flow|) -> softmax over 2K+1 rays."""

    def __init__(self, ray_samples: int, hidden: int = 16):
        super().__init__()
        self.fc1 = nn.Conv3d(2, hidden, kernel_size=1)
        self.fc2 = nn.Conv3d(hidden, 2 * ray_samples + 1, kernel_size=1)

    def forward(self, z, flow):
        magnitude = torch.sqrt((flow ** 2).sum(dim=1, keepdim=True))
        logits = self.fc2(F.gelu(self.fc1(torch.cat([z / config.REFERENCE_DISTANCE, magnitude], dim=1))))
        return torch.softmax(logits, dim=1)


def ray_warp(features: torch.Tensor, z: torch.Tensor, flow: torch.Tensor,
             offsets: Optional[torch.Tensor], weights: torch.Tensor, ray_samples: int,
             epsilon: float = config.FLOW_EPSILON) -> torch.Tensor:
    """
    Weighted sum over k of features gathered at S_k. `weights` is either
    (B, 2K+1, T, H, W) or a (2K+1,) vector shared by every position.
    """
    check_aligned(features, z, flow)
    check_finite(features, 'ray_warp')
    if weights.dim() == 1:
        weights = weights.reshape(1, -1, 1, 1, 1)
    if weights.shape[1] != 2 * ray_samples + 1:
        raise ShapeError(f"expected {2 * ray_samples + 1} ray weights, got {weights.shape[1]}")

    warped = 0
    for i, k in enumerate(range(-ray_samples, ray_samples + 1)):
        gathered = bilinear_gather(features, sample_positions(k, z, flow, offsets, epsilon))
        warped = warped + weights[:, i:i + 1] * gathered
    return warped


def attenuation_correct(features: torch.Tensor, z: torch.Tensor, eta,
                        exponent_cap: float = config.MODEL_CONFIG['exponent_cap'],
                        on_clamp: Optional[Callable[[int], None]] = None) -> torch.Tensor:
    """features * exp(eta * z), exponent capped at `exponent_cap`."""
    exponent = eta * z
    over = exponent > exponent_cap
    if bool(over.any()):
        count = int(over.sum())
        logger.warning(f"Attenuation exponent above {exponent_cap} at {count} positions; clamped")
        if on_clamp is not None:
            on_clamp(count)
        exponent = exponent.clamp(max=exponent_cap)
    return features * torch.exp(exponent)


def inverse_softplus(value: float) -> float:
    return value + math.log(-math.expm1(-value))


class Attenuation(nn.Module):
    """Beer-Lambert correction with eta = softplus(raw) >= 0."""

    def __init__(self, eta_init: float = 0.05, learnable: bool = True, exponent_cap: float = 20.0):
        super().__init__()
        self.exponent_cap = exponent_cap
        raw = torch.tensor(inverse_softplus(eta_init)) if eta_init > 0 else torch.tensor(-30.0)
        if learnable:
            self.raw_eta = nn.Parameter(raw)
        else:
            self.register_buffer('raw_eta', raw)
        self.clamp_count = 0

    @property
    def eta(self) -> torch.Tensor:
        return F.softplus(self.raw_eta)

    def _count(self, n: int):
        self.clamp_count += n

    def forward(self, features, z):
        return attenuation_correct(features, z, self.eta, self.exponent_cap, on_clamp=self._count)


# ---------------------------------------------------------------------------
# Blocks
# ---------------------------------------------------------------------------

def resample_guidance(z: torch.Tensor, flow: torch.Tensor,
                      size: Tuple[int, int, int]) -> Tuple[torch.Tensor, torch.Tensor]:
    """Nearest in time, bilinear in space; flow rescaled to the new pixel units."""
    t, h, w = size
    b, _, t0, h0, w0 = z.shape
    if (t0, h0, w0) == (t, h, w):
        return z, flow
    frames = torch.div(torch.arange(t, device=z.device) * t0, t, rounding_mode='floor')
    z, flow = z[:, :, frames], flow[:, :, frames]

    def spatial(x):
        c = x.shape[1]
        flat = x.permute(0, 2, 1, 3, 4).reshape(b * t, c, h0, w0)
        out = F.interpolate(flat, size=(h, w), mode='bilinear', align_corners=False)
        return out.reshape(b, t, c, h, w).permute(0, 2, 1, 3, 4)

    scale = torch.tensor([w / w0, h / h0], dtype=flow.dtype, device=flow.device).reshape(1, 2, 1, 1, 1)
    z = spatial(z).clamp(min=config.MIN_DEPTH)
    return z, spatial(flow) * scale


class DADABlock(nn.Module):
    """offset_net -> ray_warp -> attenuation_correct -> 1x1x1 channel mix (strided) -> GELU."""

    def __init__(self, in_channels: int, out_channels: int, stride: int = 2,
                 cfg: Optional[RaySampleConfig] = None):
        super().__init__()
        cfg = cfg or RaySampleConfig()
        self.cfg = cfg
        self.offset_net = OffsetNet(in_channels, cfg.offset_hidden, cfg.offset_clamp)
        self.weight_net = RayWeightNet(cfg.ray_samples, cfg.weight_hidden)
        self.attenuation = Attenuation(cfg.eta_init, cfg.eta_learnable, cfg.exponent_cap)
        self.mix = nn.Conv3d(in_channels, out_channels, kernel_size=1, stride=stride)
        self.activation = nn.GELU()

    def forward(self, features, z, flow):
        check_aligned(features, z, flow)
        offsets = self.offset_net(features, z, flow)
        weights = self.weight_net(z, flow)
        warped = ray_warp(features, z, flow, offsets, weights, self.cfg.ray_samples, self.cfg.epsilon)
        corrected = self.attenuation(warped, z)
        return check_finite(self.activation(self.mix(corrected)), 'dada')


class PlainStage(nn.Module):
    """Strided 3-D convolution used when alignment is ablated."""

    def __init__(self, in_channels: int, out_channels: int, stride: int = 2):
        super().__init__()
        self.conv = nn.Conv3d(in_channels, out_channels, kernel_size=3, stride=stride, padding=1)

    def forward(self, features, z, flow):
        return F.gelu(self.conv(features))


class Stem(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int = 4):
        super().__init__()
        self.conv = nn.Conv3d(in_channels, out_channels, kernel_size=(3, 7, 7),
                              stride=(1, stride, stride), padding=(1, 3, 3))

    def forward(self, x):
        return F.gelu(self.conv(x))


class DADAStack(nn.Module):
    def __init__(self, in_channels: int, channels: Sequence[int], strides: Sequence[int],
                 cfg: Optional[RaySampleConfig] = None, use_dada: bool = True):
        super().__init__()
        stages, width = [], in_channels
        for out_channels, stride in zip(channels, strides):
            stage = DADABlock(width, out_channels, stride, cfg) if use_dada else PlainStage(width, out_channels, stride)
            stages.append(stage)
            width = out_channels
        self.stages = nn.ModuleList(stages)
        self.out_channels = width

    def forward(self, features, z, flow):
        for stage in self.stages:
            z_s, flow_s = resample_guidance(z, flow, tuple(features.shape[2:]))
            features = stage(features, z_s, flow_s)
        return features

    @property
    def clamp_count(self) -> int:
        return sum(s.attenuation.clamp_count for s in self.stages if isinstance(s, DADABlock))
