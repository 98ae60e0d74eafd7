"""
Distance- and motion-adaptive margin softmax over unit embeddings and
class prototypes.

    M(rho, xi) = g1 (1 - exp(-mu rho)) + g2 Q + g3 (1 - exp(-lam xi)),
    Q = 1 - 1 / (1 + (rho / rho0)^2)

    loss = -mean log[ G / (G + sum_{j != y} exp(s <e, theta_j>)) ],
    G = exp(s (<e, theta_y> - M))
"""

import math
import logging
from dataclasses import dataclass, asdict
from typing import Dict, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

import config
from dada import inverse_softplus
from errors import ValidationError

logger = logging.getLogger(__name__)

UNIT_NORM_TOLERANCE = 1e-3


@dataclass
class MarginParams:
    mu: float = config.MARGIN_CONFIG['mu']
    lam: float = config.MARGIN_CONFIG['lam']
    rho0: float = config.MARGIN_CONFIG['rho0']
    gamma1: float = config.MARGIN_CONFIG['gamma1']
    gamma2: float = config.MARGIN_CONFIG['gamma2']
    gamma3: float = config.MARGIN_CONFIG['gamma3']
    scale: float = config.MARGIN_CONFIG['scale']
    learnable: bool = config.MARGIN_CONFIG['learnable']

    def __post_init__(self):
        for name in ('mu', 'lam', 'rho0', 'scale'):
            if getattr(self, name) <= 0:
                raise ValidationError(f"margin parameter {name} must be positive, got {getattr(self, name)}")
        for name in ('gamma1', 'gamma2', 'gamma3'):
            if getattr(self, name) < 0:
                raise ValidationError(f"margin weight {name} must be >= 0, got {getattr(self, name)}")

    @property
    def max_margin(self) -> float:
        return self.gamma1 + self.gamma2 + self.gamma3

    def to_dict(self) -> Dict:
        return asdict(self)


def margin_terms(rho, xi, mu, lam, rho0, p: MarginParams):
    """Tensor form; mu, lam and rho0 may be tensors (learnable mode)."""
    distance_term = 1 - torch.exp(-mu * rho)
    q = 1 - 1 / (1 + (rho / rho0) ** 2)
    motion_term = 1 - torch.exp(-lam * xi)
    return p.gamma1 * distance_term + p.gamma2 * q + p.gamma3 * motion_term


def margin(rho: float, xi: float, p: Optional[MarginParams] = None) -> float:
    p = p or MarginParams()
    if rho < 0 or xi < 0:
        raise ValidationError(f"margin needs rho >= 0 and xi >= 0, got rho={rho}, xi={xi}")
    q = 1 - 1 / (1 + (rho / p.rho0) ** 2)
    return (p.gamma1 * (1 - math.exp(-p.mu * rho)) + p.gamma2 * q
            + p.gamma3 * (1 - math.exp(-p.lam * xi)))


def check_unit_rows(e: torch.Tensor, what: str = 'embeddings') -> None:
    norms = e.detach().norm(dim=-1)
    worst = float((norms - 1).abs().max()) if norms.numel() else 0.0
    if worst > UNIT_NORM_TOLERANCE:
        raise ValidationError(f"{what} must have unit L2 norm (max deviation {worst:.2e})")


def rstdal_loss(e: torch.Tensor, labels: torch.Tensor, rho: torch.Tensor, xi: torch.Tensor,
                theta: torch.Tensor, p: Optional[MarginParams] = None,
                mu=None, lam=None, rho0=None, use_margin: bool = True) -> torch.Tensor:
    """
    Mean margin-softmax loss. `mu`, `lam`, `rho0` override the fixed values
    (tensors in learnable mode). With use_margin=False this is plain
    cross-entropy over s-scaled cosine logits.
    """
    p = p or MarginParams()
    if e.shape[0] < 1:
        raise ValidationError("loss needs a batch of at least one embedding")
    check_unit_rows(e)

    logits = p.scale * e @ theta.t()
    if use_margin:
        m = margin_terms(rho.to(e.dtype), xi.to(e.dtype),
                         p.mu if mu is None else mu,
                         p.lam if lam is None else lam,
                         p.rho0 if rho0 is None else rho0, p)
        target = F.one_hot(labels, theta.shape[0]).to(e.dtype)
        logits = logits - p.scale * m.unsqueeze(1) * target
    # logsumexp subtracts the per-row max internally
    picked = logits.gather(1, labels.unsqueeze(1)).squeeze(1)
    return (torch.logsumexp(logits, dim=1) - picked).mean()


class RSTDALLoss(nn.Module):
    """Loss module; in learnable mode mu, lam, rho0 are softplus-positive parameters."""

    def __init__(self, params: Optional[MarginParams] = None, use_margin: bool = True):
        super().__init__()
        self.params = params or MarginParams()
        self.use_margin = use_margin
        if self.params.learnable:
            self.raw_mu = nn.Parameter(torch.tensor(inverse_softplus(self.params.mu)))
            self.raw_lam = nn.Parameter(torch.tensor(inverse_softplus(self.params.lam)))
            self.raw_rho0 = nn.Parameter(torch.tensor(inverse_softplus(self.params.rho0)))

    def current(self) -> Dict[str, float]:
        if not self.params.learnable:
            return {'mu': self.params.mu, 'lam': self.params.lam, 'rho0': self.params.rho0}
        return {k: float(F.softplus(getattr(self, f'raw_{k}'))) for k in ('mu', 'lam', 'rho0')}

    def forward(self, e, labels, rho, xi, theta):
        extra = {}
        if self.params.learnable:
            extra = {k: F.softplus(getattr(self, f'raw_{k}')) for k in ('mu', 'lam', 'rho0')}
        return rstdal_loss(e, labels, rho, xi, theta, self.params, use_margin=self.use_margin, **extra)


def loss_grads(e: torch.Tensor, labels: torch.Tensor, rho: torch.Tensor, xi: torch.Tensor,
               theta: torch.Tensor, p: Optional[MarginParams] = None) -> Dict[str, torch.Tensor]:
    """Gradients of the loss w.r.t. e, theta and, in learnable mode, mu, lam, rho0."""
    p = p or MarginParams()
    e = e.detach().clone().requires_grad_(True)
    theta = theta.detach().clone().requires_grad_(True)
    inputs = {'e': e, 'theta': theta}
    extra = {}
    if p.learnable:
        for name in ('mu', 'lam', 'rho0'):
            extra[name] = torch.tensor(getattr(p, name), dtype=e.dtype, requires_grad=True)
        inputs.update(extra)

    loss = rstdal_loss(e, labels, rho, xi, theta, p, **extra)
    grads = torch.autograd.grad(loss, list(inputs.values()))
    out = dict(zip(inputs.keys(), grads))
    for name, g in out.items():
        if not torch.isfinite(g).all():
            raise ValidationError(f"non-finite gradient for {name}")
    return out


# ---------------------------------------------------------------------------
# Prototypes
# ---------------------------------------------------------------------------

def normalize_rows(theta: torch.Tensor) -> torch.Tensor:
    return theta / theta.norm(dim=1, keepdim=True).clamp(min=1e-12)


def init_prototypes(num_classes: int, dim: int, seed: int = 0) -> torch.Tensor:
    """Unit rows from the QR factor of a seeded Gaussian matrix (orthonormal when dim >= classes)."""
    generator = torch.Generator().manual_seed(seed)
    a = torch.randn(dim, num_classes, generator=generator)
    q, _ = torch.linalg.qr(a)
    theta = q.t()
    if theta.shape[0] < num_classes:
        extra = torch.randn(num_classes - theta.shape[0], dim, generator=generator)
        theta = torch.cat([theta, extra])
    return normalize_rows(theta[:num_classes].contiguous())


def extend_prototypes(theta: torch.Tensor, new_rows: int, seed: int = 0) -> torch.Tensor:
    """Append unit rows; existing rows are copied bit for bit."""
    generator = torch.Generator().manual_seed(seed)
    extra = normalize_rows(torch.randn(new_rows, theta.shape[1], generator=generator).to(theta.dtype))
    return torch.cat([theta.detach().clone(), extra])
