#!/usr/bin/env python3
"""
Tests for the distance/motion adaptive margin loss and class prototypes
"""

import sys
import math

import torch
import torch.nn.functional as F

from errors import ValidationError
from gradient_check import directional_check
from rstdal import (MarginParams, RSTDALLoss, extend_prototypes, init_prototypes, loss_grads, margin,
                    normalize_rows, rstdal_loss)


def _problem(batch=6, classes=5, dim=8, seed=0):
    g = torch.Generator().manual_seed(seed)
    e = normalize_rows(torch.randn(batch, dim, generator=g, dtype=torch.float64))
    theta = normalize_rows(torch.randn(classes, dim, generator=g, dtype=torch.float64))
    labels = torch.randint(0, classes, (batch,), generator=g)
    rho = 1.0 + 29.0 * torch.rand(batch, generator=g, dtype=torch.float64)
    xi = 3.0 * torch.rand(batch, generator=g, dtype=torch.float64)
    return e, labels, rho, xi, theta


def test_margin_reference_values():
    assert margin(0.0, 0.0) == 0.0
    assert abs(margin(16.0, 0.0) - 0.5692) < 1e-4
    assert abs(margin(30.0, 0.0) - 0.7694) < 1e-4
    assert abs(margin(0.0, 5.0) - 0.2 * (1 - math.exp(-1.0))) < 1e-12


def test_margin_grows_with_distance_and_stays_bounded():
    p = MarginParams()
    values = [margin(r, 1.0, p) for r in (1.0, 5.0, 10.0, 20.0, 30.0, 100.0)]
    assert all(a < b for a, b in zip(values, values[1:]))
    assert values[-1] < p.max_margin


def test_margin_rejects_negative_inputs_and_bad_params():
    for rho, xi in ((-1.0, 0.0), (0.0, -0.5)):
        try:
            margin(rho, xi)
            assert False
        except ValidationError:
            pass
    for bad in (dict(mu=0.0), dict(rho0=-1.0), dict(gamma2=-0.1), dict(scale=0.0)):
        try:
            MarginParams(**bad)
            assert False, f"accepted {bad}"
        except ValidationError:
            pass


def test_zero_margin_equals_cross_entropy():
    p = MarginParams(gamma1=0.0, gamma2=0.0, gamma3=0.0)
    for seed in range(50):
        e, labels, rho, xi, theta = _problem(seed=seed)
        expected = float(F.cross_entropy(p.scale * e @ theta.t(), labels))
        assert abs(float(rstdal_loss(e, labels, rho, xi, theta, p)) - expected) < 1e-10
        unmargined = rstdal_loss(e, labels, rho, xi, theta, MarginParams(), use_margin=False)
        assert abs(float(unmargined) - expected) < 1e-10


def test_margin_increases_the_loss():
    e, labels, rho, xi, theta = _problem(seed=1)
    with_margin = float(rstdal_loss(e, labels, rho, xi, theta))
    without = float(rstdal_loss(e, labels, rho, xi, theta, use_margin=False))
    assert with_margin > without


def test_loss_is_stable_for_saturated_logits():
    e, labels, rho, xi, theta = _problem(seed=2)
    theta = theta.clone()
    theta[labels[0]] = e[0]
    loss = rstdal_loss(e, labels, rho, xi, theta, MarginParams(scale=500.0))
    assert torch.isfinite(loss)


def test_non_unit_embeddings_are_rejected():
    e, labels, rho, xi, theta = _problem()
    try:
        rstdal_loss(2.0 * e, labels, rho, xi, theta)
        assert False
    except ValidationError:
        pass


def test_loss_gradients_match_finite_differences():
    e, labels, rho, xi, theta = _problem(seed=3)

    def fn(emb, protos):
        return rstdal_loss(emb, labels, rho, xi, protos)

    result = directional_check(fn, [e, theta], draws=100)
    assert result.passed(1e-4), result.max_relative_error


def test_learnable_margin_parameter_gradients():
    e, labels, rho, xi, theta = _problem(seed=4)
    p = MarginParams(learnable=True)
    grads = loss_grads(e, labels, rho, xi, theta, p)
    assert set(grads) == {'e', 'theta', 'mu', 'lam', 'rho0'}

    h = 1e-6
    values = {'mu': p.mu, 'lam': p.lam, 'rho0': p.rho0}
    for name in ('mu', 'lam', 'rho0'):
        def at(v):
            kw = {k: torch.tensor(x, dtype=torch.float64) for k, x in values.items()}
            kw[name] = torch.tensor(v, dtype=torch.float64)
            return float(rstdal_loss(e, labels, rho, xi, theta, p, **kw))
        numeric = (at(values[name] + h) - at(values[name] - h)) / (2 * h)
        analytic = float(grads[name])
        assert abs(analytic - numeric) <= 1e-4 * max(abs(analytic), abs(numeric), 1e-3), name


def test_loss_module_learnable_mode_starts_at_configured_values():
    module = RSTDALLoss(MarginParams(learnable=True))
    current = module.current()
    for name, value in (('mu', 0.1), ('lam', 0.2), ('rho0', 16.0)):
        assert abs(current[name] - value) < 1e-4, name
    assert len(list(module.parameters())) == 3
    assert len(list(RSTDALLoss().parameters())) == 0


def test_prototypes_are_orthonormal_when_dim_allows():
    theta = init_prototypes(13, 32, seed=0)
    assert theta.shape == (13, 32)
    assert torch.allclose(theta @ theta.t(), torch.eye(13), atol=1e-5)
    assert torch.equal(theta, init_prototypes(13, 32, seed=0))

    crowded = init_prototypes(13, 8, seed=0)
    assert torch.allclose(crowded.norm(dim=1), torch.ones(13), atol=1e-5)


def test_extend_prototypes_keeps_old_rows():
    theta = init_prototypes(13, 16, seed=1)
    extended = extend_prototypes(theta, 2, seed=7)
    assert extended.shape == (15, 16)
    assert torch.equal(extended[:13], theta)
    assert torch.allclose(extended[13:].norm(dim=1), torch.ones(2), atol=1e-6)


if __name__ == "__main__":
    print("Margin Loss Tests")
    print("=" * 30)
    failed = 0
    for name, fn in list(globals().items()):
        if name.startswith('test_') and callable(fn):
            try:
                fn()
                print(f"✓ {name}")
            except Exception as e:
                failed += 1
                print(f"❌ {name}: {e!r}")
    sys.exit(1 if failed else 0)
