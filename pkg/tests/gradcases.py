"""Random instances of every differentiable primitive for finite-difference checks.

Each factory takes a seeded generator and returns ``(leaves, build)`` where
``build(*leaves)`` produces the primitive's output tensor.
"""

from __future__ import annotations

import numpy as np

from snds import autodiff as ad
from snds.autodiff import Parameter, Tensor

from tests.oracles import central_difference, relative_error


def _away_from_zero(rng, shape, low=0.05):
    mag = rng.uniform(low, 1.0, size=shape)
    return mag * rng.choice([-1.0, 1.0], size=shape)


def case_affine(rng):
    n, i, o = rng.integers(1, 5), rng.integers(1, 9), rng.integers(1, 9)
    leaves = [Parameter(rng.normal(size=(n, i))), Parameter(rng.normal(size=(i, o))), Parameter(rng.normal(size=o))]
    return leaves, ad.affine


def _conv_case(rng, stride):
    n, c, o = rng.integers(1, 5), rng.integers(1, 9), rng.integers(1, 9)
    h = rng.integers(3, 9)
    leaves = [
        Parameter(rng.normal(size=(n, c, h, h))),
        Parameter(rng.normal(size=(o, c, 3, 3)) * 0.3),
        Parameter(rng.normal(size=o)),
    ]
    return leaves, lambda x, w, b: ad.conv2d(x, w, b, stride=stride, padding=1)


def case_conv_stride1(rng):
    return _conv_case(rng, 1)


def case_conv_stride2(rng):
    return _conv_case(rng, 2)


def case_residual_add(rng):
    shape = (int(rng.integers(1, 5)),) + tuple(int(v) for v in rng.integers(1, 9, size=3))
    return [Parameter(rng.normal(size=shape)), Parameter(rng.normal(size=shape))], ad.add


def case_relu(rng):
    shape = (int(rng.integers(1, 5)), int(rng.integers(1, 9)), int(rng.integers(1, 9)))
    return [Parameter(_away_from_zero(rng, shape))], ad.relu


def case_avg_pool(rng):
    k = int(rng.integers(1, 5))
    n, c = int(rng.integers(1, 5)), int(rng.integers(1, 9))
    h = int(rng.integers(k, 9))
    return [Parameter(rng.normal(size=(n, c, h, h)))], lambda x: ad.avg_pool2d(x, k)


def case_scale_shift(rng):
    n, c, h = int(rng.integers(1, 5)), int(rng.integers(1, 9)), int(rng.integers(1, 9))
    shape = (n, c, h, h) if rng.random() < 0.5 else (n, c)
    leaves = [Parameter(rng.normal(size=shape)), Parameter(rng.normal(size=c)), Parameter(rng.normal(size=c))]
    return leaves, ad.scale_shift


def case_cross_entropy(rng):
    n, c = int(rng.integers(1, 9)), int(rng.integers(2, 11))
    labels = rng.integers(0, c, size=n)
    return [Parameter(rng.normal(size=(n, c)) * 2)], lambda z: ad.softmax_cross_entropy(z, labels)


def case_weighted_sum(rng):
    k = int(rng.integers(1, 6))
    shape = (int(rng.integers(1, 5)), int(rng.integers(1, 9)))
    leaves = [Parameter(rng.normal(size=k))] + [Parameter(rng.normal(size=shape)) for _ in range(k)]
    return leaves, lambda w, *ts: ad.weighted_sum(w, ts)


def case_softmax(rng):
    n, c = int(rng.integers(1, 5)), int(rng.integers(2, 9))
    return [Parameter(rng.normal(size=(n, c)))], ad.softmax


PRIMITIVE_CASES = {
    "affine": case_affine,
    "conv3x3_stride1": case_conv_stride1,
    "conv3x3_stride2": case_conv_stride2,
    "residual_add": case_residual_add,
    "relu": case_relu,
    "avg_pool": case_avg_pool,
    "scale_shift": case_scale_shift,
    "softmax_cross_entropy": case_cross_entropy,
    "weighted_sum": case_weighted_sum,
    "softmax": case_softmax,
}


def gradient_error(leaves, build, rng, step=1e-5) -> float:
    """Worst relative error between backward and central differences over all leaves."""
    out = build(*leaves)
    proj = rng.normal(size=out.shape)
    loss = ad.total(ad.mul(out, Tensor(proj)))
    for p in leaves:
        p.zero_grad()
    ad.backward(loss)

    def f():
        with ad.no_grad():
            return float(np.sum(build(*leaves).data * proj))

    worst = 0.0
    for p in leaves:
        numeric = central_difference(f, p.data, step)
        worst = max(worst, relative_error(p.grad, numeric))
    return worst


def loss_case(rng, loss_fn):
    """A small dense growing net under ``loss_fn``; leaves are every weight plus lambda."""
    from snds.network import GrowingNetwork, NetworkSpec
    from snds.posterior import DepthPrior, TruncatedPoissonPosterior

    depth = int(rng.integers(2, 5))
    net = GrowingNetwork(NetworkSpec("dense-block", (3,), 3, width=4, seed=int(rng.integers(1 << 30))))
    net.grow_to(depth)
    for p in net.parameters():
        p.data = p.data + 0.3 * rng.normal(size=p.shape)
    posterior = TruncatedPoissonPosterior(Parameter(rng.uniform(0.5, 3.0)), 1, depth)
    prior = DepthPrior(float(rng.uniform(0.5, 2.0)))
    x, y = rng.normal(size=(6, 3)), rng.integers(0, 3, size=6)
    wd = float(rng.uniform(0.01, 0.5))

    def build(*_):
        return loss_fn(net, posterior, prior, x, y, wd, dataset_size=6.0).total

    return net.parameters() + [posterior.lam], build
