"""
Directional finite-difference gradient checks.

For a scalar function f of some tensors, a random unit direction v over all
of them is drawn and the autograd directional derivative <grad f, v> is
compared with the central difference (f(x + h v) - f(x - h v)) / 2h.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Sequence

import torch

logger = logging.getLogger(__name__)


@dataclass
class GradientCheckResult:
    draws: int
    max_relative_error: float
    errors: List[float]

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_relative_error < tolerance


def _relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def directional_check(fn: Callable[..., torch.Tensor], inputs: Sequence[torch.Tensor],
                      draws: int = 100, step: float = 1e-6, seed: int = 0) -> GradientCheckResult:
    """
    `fn(*inputs)` must return a scalar and be deterministic. Inputs should
    be float64 tensors; perturbed copies are passed to fn.
    """
    tensors = [t.detach().clone().double().requires_grad_(True) for t in inputs]
    generator = torch.Generator().manual_seed(seed)

    value = fn(*tensors)
    grads = torch.autograd.grad(value, tensors, allow_unused=True)
    grads = [torch.zeros_like(t) if g is None else g for t, g in zip(tensors, grads)]

    errors = []
    for _ in range(draws):
        direction = [torch.randn(t.shape, generator=generator, dtype=t.dtype) for t in tensors]
        norm = torch.sqrt(sum((d ** 2).sum() for d in direction))
        direction = [d / norm for d in direction]
        analytic = float(sum((g * d).sum() for g, d in zip(grads, direction)))

        with torch.no_grad():
            plus = [t + step * d for t, d in zip(tensors, direction)]
            minus = [t - step * d for t, d in zip(tensors, direction)]
            numeric = (float(fn(*plus)) - float(fn(*minus))) / (2 * step)
        errors.append(_relative_error(analytic, numeric))

    result = GradientCheckResult(draws, max(errors) if errors else 0.0, errors)
    logger.debug(f"Gradient check over {draws} directions: max relative error {result.max_relative_error:.2e}")
    return result


def module_check(module: torch.nn.Module, inputs: Sequence[torch.Tensor], loss: Callable = None,
                 draws: int = 100, step: float = 1e-6, seed: int = 0) -> GradientCheckResult:
    """Check a module w.r.t. its inputs and all of its parameters jointly (float64)."""
    module = module.double()
    names = [n for n, _ in module.named_parameters()]
    params = [p.detach().clone() for _, p in module.named_parameters()]
    loss = loss or (lambda out: (out ** 2).sum() if torch.is_tensor(out) else out)
    n_inputs = len(inputs)

    def fn(*tensors):
        state = dict(zip(names, tensors[n_inputs:]))
        out = torch.func.functional_call(module, state, tuple(tensors[:n_inputs]))
        return loss(out)

    return directional_check(fn, list(inputs) + params, draws, step, seed)
