"""Autograd gradients against central finite differences in float64."""

import numpy as np
import pytest
import torch

from ppg_distill.losses import (
    DistillConfig,
    feature_kd_loss,
    joint_objective,
    morphology_loss,
    prediction_kd_loss,
    rhythm_loss,
    supervised_loss,
)
from ppg_distill.model import ModelOutput
from ppg_distill.oracle import (
    finite_difference_grad,
    morphology_loss_reference,
    rhythm_loss_reference,
)

STEP = 1e-5
TOL = 1e-4


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    # Floor keeps exactly-zero gradients (e.g. scale-invariant directions) well defined.
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-6)
    return np.linalg.norm(a - b) / scale


def autograd(fn, *tensors):
    leaves = [torch.tensor(x, dtype=torch.float64, requires_grad=True) for x in tensors]
    fn(*leaves).backward()
    return [leaf.grad.numpy() for leaf in leaves]


def instance(seed):
    r = np.random.default_rng(seed)
    n, d_s, d_t = r.integers(2, 7), r.integers(1, 6), r.integers(1, 6)
    return r.normal(size=(n, d_s)), r.normal(size=(n, d_t)), r.normal(size=(d_t, d_s))


@pytest.mark.parametrize("seed", range(20))
def test_morphology_gradients(seed):
    s, t, a = instance(seed)
    tau = 2.0
    gs, ga = autograd(lambda s_, a_: morphology_loss(s_, torch.tensor(t), a_, tau), s, a)
    fs = finite_difference_grad(lambda x: morphology_loss_reference(x, t, a, tau), s, STEP)
    fa = finite_difference_grad(lambda x: morphology_loss_reference(s, t, x, tau), a, STEP)
    assert rel_err(gs, fs) <= TOL
    assert rel_err(ga, fa) <= TOL


@pytest.mark.parametrize("seed", range(20))
def test_rhythm_gradients(seed):
    s, t, a = instance(seed)
    gs, ga = autograd(lambda s_, a_: rhythm_loss(s_, torch.tensor(t), a_, 1.0), s, a)
    fs = finite_difference_grad(lambda x: rhythm_loss_reference(x, t, a, 1.0), s, STEP)
    fa = finite_difference_grad(lambda x: rhythm_loss_reference(s, t, x, 1.0), a, STEP)
    assert rel_err(gs, fs) <= TOL
    assert rel_err(ga, fa) <= TOL


def _torch_fd(fn, x):
    return finite_difference_grad(lambda v: fn(torch.tensor(v, dtype=torch.float64)).item(), x, STEP)


@pytest.mark.parametrize("seed", range(20))
def test_global_term_gradients(seed):
    r = np.random.default_rng(1000 + seed)
    b, d_t, d_s, c = 4, int(r.integers(1, 6)), int(r.integers(1, 6)), 3
    pred, target = r.normal(size=b), r.normal(size=b)
    logits, labels = r.normal(size=(b, c)), torch.tensor(r.integers(0, c, size=b))
    t_pred, t_logits = r.normal(size=b), r.normal(size=(b, c))
    t_pooled, s_pooled, a = r.normal(size=(b, d_t)), r.normal(size=(b, d_s)), r.normal(size=(d_t, d_s))

    checks = [
        (lambda p: supervised_loss(p, torch.tensor(target), "regression"), pred),
        (lambda p: supervised_loss(p, labels, "classification"), logits),
        (lambda p: prediction_kd_loss(torch.tensor(t_pred), p, "regression"), pred),
        (lambda p: prediction_kd_loss(torch.tensor(t_logits), p, "classification", 2.0), logits),
        (lambda p: feature_kd_loss(torch.tensor(t_pooled), p, torch.tensor(a)), s_pooled),
        (lambda w: feature_kd_loss(torch.tensor(t_pooled), torch.tensor(s_pooled), w), a),
    ]
    for fn, x in checks:
        (g,) = autograd(fn, x)
        assert rel_err(g, _torch_fd(fn, x)) <= TOL


@pytest.mark.parametrize("seed", range(5))
def test_joint_objective_gradient_through_pooling(seed):
    r = np.random.default_rng(2000 + seed)
    b, n, d_t, d_s = 3, 5, 4, 3
    tp = torch.tensor(r.normal(size=(b, n, d_t)))
    teacher = ModelOutput(tp, tp.mean(1), torch.tensor(r.normal(size=b)))
    head = torch.tensor(r.normal(size=d_s))
    y = torch.tensor(r.normal(size=b))
    a = r.normal(size=(d_t, d_s))
    cfg = DistillConfig(alpha=0.5, beta=0.1, gamma=0.5)

    def fn(sp, w):
        pooled = sp.mean(1)
        return joint_objective(teacher, ModelOutput(sp, pooled, pooled @ head), y, w, cfg, "regression")[0]

    sp = r.normal(size=(b, n, d_s))
    gs, ga = autograd(fn, sp, a)
    fs = np.stack([
        _torch_fd(lambda m, i=i: fn(torch.cat([torch.tensor(sp[:i]), m[None], torch.tensor(sp[i + 1:])]),
                                    torch.tensor(a)), sp[i])
        for i in range(b)
    ])
    fa = _torch_fd(lambda w: fn(torch.tensor(sp), w), a)
    assert rel_err(gs, fs) <= TOL
    assert rel_err(ga, fa) <= TOL
