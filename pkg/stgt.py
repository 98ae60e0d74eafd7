"""
Spatio-temporal graph over DADA features, graph message passing, a graph
transformer with adjacency-biased attention, mean pooling and the classifier
head. `DiGNet` wires the stem, the DADA stack and these stages together.
"""

import os
import math
import logging
from dataclasses import dataclass, asdict, fields
from functools import lru_cache
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

import config
from errors import CheckpointError, ConfigurationError, ShapeError, ValidationError
from dada import DADAStack, RaySampleConfig, Stem, check_finite
from rstdal import init_prototypes

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 'dignet-checkpoint'
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# Graph
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpatioTemporalGraph:
    shape: Tuple[int, int, int]
    edges: np.ndarray                 # (E, 2) undirected pairs, i < j
    spatial_edges: int
    temporal_edges: int

    @property
    def num_nodes(self) -> int:
        t, h, w = self.shape
        return t * h * w

    def adjacency(self, dtype=torch.float32, device=None) -> torch.Tensor:
        n = self.num_nodes
        adj = torch.zeros(n, n, dtype=dtype, device=device)
        if len(self.edges):
            idx = torch.as_tensor(self.edges, device=device)
            adj[idx[:, 0], idx[:, 1]] = 1
            adj[idx[:, 1], idx[:, 0]] = 1
        return adj

    def mean_operator(self, dtype=torch.float32, device=None) -> torch.Tensor:
        adj = self.adjacency(dtype, device)
        return adj / adj.sum(dim=1, keepdim=True).clamp(min=1)


def node_index(t: int, h: int, w: int, shape: Tuple[int, int, int]) -> int:
    _, hh, ww = shape
    return (t * hh + h) * ww + w


@lru_cache(maxsize=32)
def _lattice(t: int, h: int, w: int) -> SpatioTemporalGraph:
    shape = (t, h, w)
    spatial, temporal = [], []
    for ti in range(t):
        for hi in range(h):
            for wi in range(w):
                i = node_index(ti, hi, wi, shape)
                if wi + 1 < w:
                    spatial.append((i, node_index(ti, hi, wi + 1, shape)))
                if hi + 1 < h:
                    spatial.append((i, node_index(ti, hi + 1, wi, shape)))
                if ti + 1 < t:
                    temporal.append((i, node_index(ti + 1, hi, wi, shape)))
    edges = np.array(spatial + temporal, dtype=np.int64).reshape(-1, 2)
    return SpatioTemporalGraph(shape, edges, len(spatial), len(temporal))


def build_graph(volume) -> SpatioTemporalGraph:
    """4-neighbour spatial lattice per frame plus same-cell temporal links."""
    if isinstance(volume, torch.Tensor):
        if volume.dim() != 5:
            raise ShapeError(f"feature volume must be (B, C, T, H, W), got {tuple(volume.shape)}")
        shape = tuple(int(s) for s in volume.shape[2:])
    else:
        shape = tuple(int(s) for s in volume)
    if len(shape) != 3 or min(shape) < 1:
        raise ShapeError(f"graph shape must be (T, H, W) with positive sizes, got {shape}")
    if shape == (1, 1, 1):
        raise ValidationError("a single-cell feature volume has no graph edges")
    return _lattice(*shape)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

class STGLayer(nn.Module):
    """x' = act(W_self x + mean_{neighbours} W_nbr x)."""

    def __init__(self, dim: int):
        super().__init__()
        self.self_proj = nn.Linear(dim, dim)
        self.nbr_proj = nn.Linear(dim, dim, bias=False)
        self.activation = nn.GELU()

    def forward(self, x: torch.Tensor, mean_op: torch.Tensor) -> torch.Tensor:
        return self.activation(self.self_proj(x) + mean_op @ self.nbr_proj(x))


class GraphTransformerLayer(nn.Module):
    """Pre-norm multi-head self-attention with a learned per-head bias on graph edges, then a feedforward block."""

    def __init__(self, dim: int, heads: int = 4, ffn_mult: int = 2):
        super().__init__()
        if dim % heads != 0:
            raise ConfigurationError(f"model dim {dim} is not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = dim // heads
        self.Wq = nn.Linear(dim, dim)
        self.Wk = nn.Linear(dim, dim)
        self.Wv = nn.Linear(dim, dim)
        self.Wo = nn.Linear(dim, dim)
        self.edge_bias = nn.Parameter(torch.zeros(heads))
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(nn.Linear(dim, dim * ffn_mult), nn.GELU(), nn.Linear(dim * ffn_mult, dim))
        self.last_attention: Optional[torch.Tensor] = None

    def forward(self, h: torch.Tensor, adjacency: Optional[torch.Tensor] = None) -> torch.Tensor:
        b, n, d = h.shape
        res = h
        h = self.norm1(h)
        q = self.Wq(h).view(b, n, self.heads, self.head_dim)
        k = self.Wk(h).view(b, n, self.heads, self.head_dim)
        v = self.Wv(h).view(b, n, self.heads, self.head_dim)
        logits = torch.einsum('bihd,bjhd->bhij', q, k) / math.sqrt(self.head_dim)
        if adjacency is not None:
            logits = logits + self.edge_bias.view(1, -1, 1, 1) * adjacency
        attn = torch.softmax(logits, dim=-1)
        self.last_attention = attn.detach()
        out = torch.einsum('bhij,bjhd->bihd', attn, v).reshape(b, n, d)
        h = res + self.Wo(out)
        return h + self.ffn(self.norm2(h))


class GraphTransformer(nn.Module):
    def __init__(self, dim: int, layers: int = 2, heads: int = 4, dropout: float = 0.1):
        super().__init__()
        self.layers = nn.ModuleList([GraphTransformerLayer(dim, heads) for _ in range(layers)])
        self.norm = nn.LayerNorm(dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, h, adjacency=None):
        for layer in self.layers:
            h = layer(h, adjacency)
        return self.dropout(self.norm(h))


def mean_pool(nodes: torch.Tensor) -> torch.Tensor:
    """(B, N, C) -> (B, C)."""
    return nodes.mean(dim=1)


def pool_volume(volume: torch.Tensor) -> torch.Tensor:
    """Global mean over (T, H, W) of a (B, C, T, H, W) volume."""
    return volume.mean(dim=(2, 3, 4))


class ClassifierHead(nn.Module):
    """'cosine': s * <e, theta_j> with unit prototypes; 'linear': W h + b."""

    def __init__(self, dim: int, num_classes: int, mode: str = 'cosine',
                 scale: float = config.MARGIN_CONFIG['scale'], seed: int = 0):
        super().__init__()
        if mode not in ('cosine', 'linear'):
            raise ConfigurationError(f"unknown head mode '{mode}'")
        self.mode = mode
        self.scale = scale
        if mode == 'cosine':
            self.prototypes = nn.Parameter(init_prototypes(num_classes, dim, seed))
        else:
            self.linear = nn.Linear(dim, num_classes)

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0] if self.mode == 'cosine' else self.linear.out_features

    def forward(self, pooled: torch.Tensor, embedding: torch.Tensor) -> torch.Tensor:
        if self.mode == 'cosine':
            return self.scale * embedding @ self.prototypes.t()
        return self.linear(pooled)


# ---------------------------------------------------------------------------
# Full model
# ---------------------------------------------------------------------------

@dataclass
class ModelConfig:
    in_channels: int = config.MODEL_CONFIG['in_channels']
    stem_channels: int = config.MODEL_CONFIG['stem_channels']
    stem_stride: int = config.MODEL_CONFIG['stem_stride']
    dada_channels: Tuple[int, ...] = tuple(config.MODEL_CONFIG['dada_channels'])
    dada_strides: Tuple[int, ...] = tuple(config.MODEL_CONFIG['dada_strides'])
    ray_samples: int = config.MODEL_CONFIG['ray_samples']
    offset_hidden: int = config.MODEL_CONFIG['offset_hidden']
    offset_clamp: float = config.MODEL_CONFIG['offset_clamp']
    weight_hidden: int = config.MODEL_CONFIG['weight_hidden']
    eta_init: float = config.MODEL_CONFIG['eta_init']
    eta_learnable: bool = config.MODEL_CONFIG['eta_learnable']
    exponent_cap: float = config.MODEL_CONFIG['exponent_cap']
    stg_layers: int = config.MODEL_CONFIG['stg_layers']
    transformer_layers: int = config.MODEL_CONFIG['transformer_layers']
    transformer_heads: int = config.MODEL_CONFIG['transformer_heads']
    dropout: float = config.MODEL_CONFIG['dropout']
    head_mode: str = config.MODEL_CONFIG['head_mode']
    use_dada: bool = config.MODEL_CONFIG['use_dada']
    use_stg: bool = config.MODEL_CONFIG['use_stg']
    use_transformer: bool = config.MODEL_CONFIG['use_transformer']
    num_classes: int = config.NUM_CLASSES
    scale: float = config.MARGIN_CONFIG['scale']
    seed: int = 0

    def __post_init__(self):
        self.dada_channels = tuple(int(c) for c in self.dada_channels)
        self.dada_strides = tuple(int(s) for s in self.dada_strides)
        if len(self.dada_channels) != len(self.dada_strides):
            raise ConfigurationError("dada_channels and dada_strides must have the same length")
        if self.head_mode not in ('cosine', 'linear'):
            raise ConfigurationError(f"unknown head mode '{self.head_mode}'")
        if self.use_transformer and self.embed_dim % self.transformer_heads != 0:
            raise ConfigurationError(
                f"model dim {self.embed_dim} is not divisible by {self.transformer_heads} heads")

    @property
    def embed_dim(self) -> int:
        return self.dada_channels[-1] if self.dada_channels else self.stem_channels

    def ray_config(self) -> RaySampleConfig:
        return RaySampleConfig(
            ray_samples=self.ray_samples, eta_init=self.eta_init, eta_learnable=self.eta_learnable,
            exponent_cap=self.exponent_cap, offset_clamp=self.offset_clamp,
            offset_hidden=self.offset_hidden, weight_hidden=self.weight_hidden,
        )

    def to_dict(self) -> Dict:
        d = asdict(self)
        d['dada_channels'] = list(self.dada_channels)
        d['dada_strides'] = list(self.dada_strides)
        return d

    @classmethod
    def from_dict(cls, data: Dict) -> 'ModelConfig':
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class ModelOutput:
    embedding: torch.Tensor      # (B, d), unit rows
    logits: torch.Tensor         # (B, m)
    volume_shape: Tuple[int, ...]

    @property
    def probabilities(self) -> torch.Tensor:
        return torch.softmax(self.logits, dim=1)


class DiGNet(nn.Module):
    def __init__(self, cfg: Optional[ModelConfig] = None):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        # global RNG state is restored on exit
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            self.stem = Stem(cfg.in_channels, cfg.stem_channels, cfg.stem_stride)
            self.dada = DADAStack(cfg.stem_channels, cfg.dada_channels, cfg.dada_strides,
                                  cfg.ray_config(), use_dada=cfg.use_dada)
            dim = cfg.embed_dim
            self.stg = (nn.ModuleList([STGLayer(dim) for _ in range(cfg.stg_layers)]) if cfg.use_stg
                        else nn.ModuleList())
            self.transformer = (GraphTransformer(dim, cfg.transformer_layers, cfg.transformer_heads, cfg.dropout)
                                if cfg.use_transformer else None)
            self.output_dropout = nn.Dropout(cfg.dropout) if not cfg.use_transformer else nn.Identity()
            self.head = ClassifierHead(dim, cfg.num_classes, cfg.head_mode, cfg.scale, cfg.seed)

    def encode(self, x: torch.Tensor, depth: torch.Tensor) -> torch.Tensor:
        """Node features (B, N, C) after DADA, STG and the transformer."""
        if x.dim() != 5 or x.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"model input must be (B, {self.cfg.in_channels}, T, H, W), got {tuple(x.shape)}")
        if depth.dim() == 4:
            depth = depth.unsqueeze(1)
        if depth.shape[2:] != x.shape[2:] or depth.shape[0] != x.shape[0]:
            raise ShapeError(f"depth {tuple(depth.shape)} does not match input {tuple(x.shape)} on B, T, H, W")

        f0 = check_finite(self.stem(x), 'stem')
        volume = check_finite(self.dada(f0, depth, x[:, 3:5]), 'dada')
        nodes = volume.flatten(2).transpose(1, 2)

        graph = build_graph(volume) if nodes.shape[1] > 1 else None
        if graph is not None and len(self.stg):
            mean_op = graph.mean_operator(nodes.dtype, nodes.device)
            for layer in self.stg:
                nodes = layer(nodes, mean_op)
            check_finite(nodes, 'stg')
        if self.transformer is not None:
            adjacency = graph.adjacency(nodes.dtype, nodes.device) if graph is not None else None
            nodes = check_finite(self.transformer(nodes, adjacency), 'graph_transformer')
        else:
            nodes = self.output_dropout(nodes)
        self._volume_shape = tuple(volume.shape)
        return nodes

    def forward(self, x: torch.Tensor, depth: torch.Tensor) -> ModelOutput:
        nodes = self.encode(x, depth)
        pooled = mean_pool(nodes)
        embedding = pooled / pooled.norm(dim=1, keepdim=True).clamp(min=1e-12)
        logits = check_finite(self.head(pooled, embedding), 'head')
        return ModelOutput(embedding, logits, self._volume_shape)


def batch_from_clips(clips: Sequence, device: str = 'cpu') -> Dict[str, torch.Tensor]:
    """Stack ProcessedClips into model tensors: x (B, 5, T, S, S), depth (B, T, S, S)."""
    x = torch.from_numpy(np.stack([c.frames for c in clips])).permute(0, 2, 1, 3, 4).contiguous()
    depth = torch.from_numpy(np.stack([c.depth for c in clips]))
    return {
        'x': x.to(device),
        'depth': depth.to(device),
        'labels': torch.tensor([c.label for c in clips], dtype=torch.long, device=device),
        'rho': torch.tensor([c.distance for c in clips], dtype=torch.float32, device=device),
        'xi': torch.tensor([c.motion for c in clips], dtype=torch.float32, device=device),
    }


def forward_clip(clip, model: DiGNet) -> Tuple[torch.Tensor, torch.Tensor]:
    """(unit embedding, class probabilities) for one clip in inference mode."""
    model.eval()
    batch = batch_from_clips([clip], device=next(model.parameters()).device)
    with torch.no_grad():
        out = model(batch['x'], batch['depth'])
    return out.embedding[0], out.probabilities[0]


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path: str, model: DiGNet, class_names: Sequence[str], margin: Optional[Dict] = None,
                    epoch: int = 0, val_loss: Optional[float] = None, extra: Optional[Dict] = None) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    payload = {
        'format': CHECKPOINT_FORMAT,
        'version': CHECKPOINT_VERSION,
        'config': model.cfg.to_dict(),
        'class_names': list(class_names),
        'state_dict': model.state_dict(),
        'margin': margin or {},
        'epoch': int(epoch),
        'val_loss': None if val_loss is None else float(val_loss),
        'extra': extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path: str, expected: Optional[ModelConfig] = None,
                    device: str = 'cpu') -> Tuple[DiGNet, Dict]:
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location=device, weights_only=False)
    except Exception as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}")

    if not isinstance(payload, dict) or payload.get('format') != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a model checkpoint")
    if payload.get('version') != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {payload.get('version')} is not supported "
                              f"(expected {CHECKPOINT_VERSION})")

    cfg = ModelConfig.from_dict(payload['config'])
    if expected is not None:
        mismatched = {k: (v, getattr(expected, k)) for k, v in cfg.to_dict().items()
                      if k != 'seed' and expected.to_dict()[k] != v}
        if mismatched:
            raise CheckpointError(f"checkpoint config does not match the requested model: {mismatched}")

    model = DiGNet(cfg).to(device)
    model.load_state_dict(payload['state_dict'])
    model.eval()
    return model, payload
