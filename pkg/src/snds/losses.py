"""Variational objectives over (depth, weights) and pseudo-uniform depth sampling.

Losses are reported in dataset units: the expected cross-entropy is the
batch-mean CE scaled by ``dataset_size`` so that it keeps its magnitude
relative to the KL terms.  Callers divide ``total`` by ``dataset_size``
before differentiating (see :mod:`snds.active`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from snds import autodiff as ad
from snds.autodiff import Parameter, Tensor
from snds.errors import DomainError
from snds.network import GrowingNetwork
from snds.posterior import DepthPrior, TruncatedPoissonPosterior, kl_depth, kl_depth_mc


@dataclass
class LossBreakdown:
    total: Tensor
    expected_ce: Tensor
    kl_depth: Tensor
    kl_weights: Tensor
    per_depth_ce: dict[int, float] = field(default_factory=dict)

    def values(self) -> dict[str, float]:
        return {
            "total": self.total.item(),
            "expected_ce": self.expected_ce.item(),
            "kl_depth": self.kl_depth.item(),
            "kl_weights": self.kl_weights.item(),
        }


def _sum(scalars: list[Tensor]) -> Tensor:
    return ad.total(ad.stack(scalars)) if scalars else Tensor(0.0)


def _sq_norm(params: list[Parameter]) -> Tensor:
    return _sum([ad.sum_squares(p) for p in params])


def _check(net: GrowingNetwork, posterior: TruncatedPoissonPosterior) -> None:
    if posterior.d_max > net.depth:
        raise DomainError(f"posterior support reaches depth {posterior.d_max} but the network has {net.depth} layers")


def _expected_ce(net, posterior, x, y, dataset_size):
    logits = net.forward_all(x, posterior.d_max)
    ces = [ad.softmax_cross_entropy(logits[d - 1], y) for d in posterior.support]
    q = posterior.pmf_tensor()
    scale = Tensor(float(dataset_size))
    expected = ad.mul(ad.weighted_sum(q, ces), scale)
    per_depth = {d: ce.item() * dataset_size for d, ce in zip(posterior.support, ces)}
    return q, expected, per_depth


def _depth_kl(posterior, prior, kl_samples, rng):
    if kl_samples:
        return kl_depth_mc(posterior, prior, kl_samples, rng if rng is not None else np.random.default_rng())[0]
    return kl_depth(posterior, prior)


def meanfield_loss(
    net: GrowingNetwork,
    posterior: TruncatedPoissonPosterior,
    prior: DepthPrior,
    x: np.ndarray,
    y: np.ndarray,
    weight_decay: float,
    dataset_size: float = 1.0,
    kl_samples: int = 0,
    rng: np.random.Generator | None = None,
) -> LossBreakdown:
    """Negative ELBO with depth and weights independent.

    The weight term is ``weight_decay * ||w||^2`` over every weight inside
    the support (stem, layers and heads up to ``d_max``), whatever the depth.
    """
    _check(net, posterior)
    _, expected, per_depth = _expected_ce(net, posterior, x, y, dataset_size)
    kl_d = _depth_kl(posterior, prior, kl_samples, rng)
    kl_w = ad.mul(_sq_norm(net.params_within(posterior.d_max)), Tensor(float(weight_decay)))
    total = ad.add(ad.add(expected, kl_d), kl_w)
    return LossBreakdown(total, expected, kl_d, kl_w, per_depth)


def svi_loss(
    net: GrowingNetwork,
    posterior: TruncatedPoissonPosterior,
    prior: DepthPrior,
    x: np.ndarray,
    y: np.ndarray,
    weight_decay: float,
    dataset_size: float = 1.0,
    kl_samples: int = 0,
    rng: np.random.Generator | None = None,
) -> LossBreakdown:
    """Negative ELBO with weights conditioned on depth.

    Identical first two terms to :func:`meanfield_loss`; the weight term is
    ``weight_decay * sum_d q(d) ||w_{1:d}||^2`` where ``w_{1:d}`` is the
    stem, layers ``1..d`` and head ``d``.
    """
    _check(net, posterior)
    q, expected, per_depth = _expected_ce(net, posterior, x, y, dataset_size)
    kl_d = _depth_kl(posterior, prior, kl_samples, rng)
    stem = _sq_norm(net.stem_params)
    running = stem
    per_depth_sq = []
    for k in range(1, posterior.d_max + 1):
        running = ad.add(running, _sq_norm(net.layer_params(k)))
        if k >= posterior.d_min:
            per_depth_sq.append(ad.add(running, _sq_norm(net.head_params(k))))
    kl_w = ad.mul(ad.weighted_sum(q, per_depth_sq), Tensor(float(weight_decay)))
    total = ad.add(ad.add(expected, kl_d), kl_w)
    return LossBreakdown(total, expected, kl_d, kl_w, per_depth)


class DepthSampler:
    """Sampling counts per depth for pseudo-uniform depth selection.

    ``counts`` is keyed by the current support ``1..d_max``.  Depths that
    leave the support keep their count in case they re-enter it.
    """

    def __init__(self, rng: np.random.Generator | int | None = None, d_max: int = 1,
                 counts: dict[int, int] | None = None):
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self._counts: dict[int, int] = {int(k): int(v) for k, v in (counts or {}).items()}
        self.d_max = 0
        self.resize(max(d_max, max(self._counts, default=1)))

    def resize(self, d_max: int) -> None:
        if d_max < 1:
            raise DomainError("sampler support must contain at least depth 1")
        for d in range(1, d_max + 1):
            self._counts.setdefault(d, 0)
        self.d_max = d_max

    @property
    def counts(self) -> dict[int, int]:
        return {d: self._counts[d] for d in range(1, self.d_max + 1)}

    @property
    def all_counts(self) -> dict[int, int]:
        return dict(sorted(self._counts.items()))

    def probabilities(self) -> np.ndarray:
        inv = 1.0 / (np.array([self._counts[d] for d in range(1, self.d_max + 1)], dtype=np.float64) + 1.0)
        return inv / inv.sum()


def pseudo_uniform_sample(sampler: DepthSampler) -> int:
    """Draw a depth with probability proportional to ``1 / (count + 1)`` and count it."""
    p = sampler.probabilities()
    d = 1 + int(sampler.rng.choice(len(p), p=p))
    sampler._counts[d] += 1
    return d


def uniform_phase_step(
    net: GrowingNetwork,
    sampler: DepthSampler,
    x: np.ndarray,
    y: np.ndarray,
    optimizer: ad.SGD,
    weight_decay: float = 0.0,
) -> float:
    """One shared-weight update at a pseudo-uniformly drawn depth.

    Only the sampled sub-network (stem, layers ``1..d``, head ``d``) is stepped;
    ``weight_decay`` enters the objective as ``weight_decay/2 * ||w_{1:d}||^2``.
    Returns the batch-mean cross-entropy at the sampled depth.
    """
    d = pseudo_uniform_sample(sampler)
    if d > net.depth:
        raise DomainError(f"sampled depth {d} exceeds the {net.depth} grown layers")
    params = net.params_for_depth(d)
    for p in params:
        p.zero_grad()
    ce = ad.softmax_cross_entropy(net.forward_at_depth(x, d), y)
    loss = ce
    if weight_decay:
        loss = ad.add(ce, ad.mul(_sq_norm(params), Tensor(weight_decay / 2.0)))
    ad.backward(loss)
    optimizer.step(subset=params)
    return ce.item()


def gradient_ratio_diagnostic(net: GrowingNetwork, posterior: TruncatedPoissonPosterior, x: np.ndarray,
                              y: np.ndarray) -> dict[int, float]:
    """L2 norm of d(expected CE)/d(w_l) for every grown layer ``l``.

    Uses the depth-averaged CE alone (KL terms excluded); existing gradients
    are restored afterwards.
    """
    _check(net, posterior)
    params = net.parameters() + [posterior.lam]
    saved = {p.uid: p.grad for p in params}
    try:
        for p in params:
            p.zero_grad()
        _, expected, _ = _expected_ce(net, posterior, x, y, 1.0)
        ad.backward(expected)
        return {
            k: float(np.sqrt(sum(np.sum(p.grad**2) for p in net.layer_params(k))))
            for k in range(1, net.depth + 1)
        }
    finally:
        for p in params:
            p.grad = saved[p.uid]
