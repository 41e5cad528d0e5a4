"""Residual network of unbounded depth with one prediction head per depth.

Layer ``k`` (1-based) is produced on demand by :meth:`GrowingNetwork.layer_generator`
with its own seeded generator, so the initial weights of a layer never depend
on when it was grown.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from snds import autodiff as ad
from snds.autodiff import Parameter, Tensor
from snds.errors import ConstructionError, DomainError
from snds.posterior import TruncatedPoissonPosterior, mode_depth

BLOCK_KINDS = ("conv-basic-block", "dense-block", "scalar-test-block")


@dataclass
class BlockSpec:
    kind: str
    in_channels: int = 1
    out_channels: int = 1
    downsample: bool = False

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise ConstructionError(f"unknown block kind {self.kind!r}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConstructionError(f"channel counts must be positive: {self.in_channels}->{self.out_channels}")
        if self.kind == "conv-basic-block" and self.downsample and self.out_channels != 2 * self.in_channels:
            raise ConstructionError("downsampling blocks must double the channel count")
        if self.kind != "conv-basic-block" and self.downsample:
            raise ConstructionError(f"{self.kind} cannot downsample")


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Norm:
    """Per-channel scale-and-shift, or batch normalisation when ``batch=True``."""

    def __init__(self, channels: int, name: str, scale: float = 1.0, batch: bool = False):
        self.name = name
        self.gamma = Parameter(np.full(channels, scale), name=f"{name}.gamma")
        self.beta = Parameter(np.zeros(channels), name=f"{name}.beta")
        self.batch = batch
        self.running = {"mean": np.zeros(channels), "var": np.ones(channels)} if batch else None

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if self.batch:
            return ad.batch_norm(x, self.gamma, self.beta, self.running, training and ad.is_grad_enabled())
        return ad.scale_shift(x, self.gamma, self.beta)

    def params(self) -> list[Parameter]:
        return [self.gamma, self.beta]


class ConvBasicBlock:
    """conv-norm-relu, conv-norm, add shortcut, relu."""

    def __init__(self, spec: BlockSpec, name: str, rng: np.random.Generator, batch_norm: bool = False):
        ci, co = spec.in_channels, spec.out_channels
        self.stride = 2 if spec.downsample else 1
        self.conv1 = Parameter(he_uniform(rng, (co, ci, 3, 3), ci * 9), name=f"{name}.conv1.weight")
        self.norm1 = Norm(co, f"{name}.norm1", batch=batch_norm)
        self.conv2 = Parameter(he_uniform(rng, (co, co, 3, 3), co * 9), name=f"{name}.conv2.weight")
        self.norm2 = Norm(co, f"{name}.norm2", scale=0.0, batch=batch_norm)
        self.proj = None
        if self.stride != 1 or ci != co:
            self.proj = Parameter(he_uniform(rng, (co, ci, 1, 1), ci), name=f"{name}.shortcut.weight")
            self.proj_norm = Norm(co, f"{name}.shortcut.norm", batch=batch_norm)

    def __call__(self, x: Tensor, training: bool = True) -> Tensor:
        h = ad.relu(self.norm1(ad.conv2d(x, self.conv1, stride=self.stride, padding=1), training))
        h = self.norm2(ad.conv2d(h, self.conv2, stride=1, padding=1), training)
        short = x
        if self.proj is not None:
            short = self.proj_norm(ad.conv2d(x, self.proj, stride=self.stride, padding=0), training)
        return ad.relu(ad.add(h, short))

    def params(self) -> list[Parameter]:
        out = [self.conv1, *self.norm1.params(), self.conv2, *self.norm2.params()]
        if self.proj is not None:
            out += [self.proj, *self.proj_norm.params()]
        return out


class DenseBlock:
    """``x + norm2(W2 relu(norm1(W1 x)))``: one hidden non-linearity per block."""

    def __init__(self, spec: BlockSpec, name: str, rng: np.random.Generator, batch_norm: bool = False):
        w = spec.in_channels
        if spec.out_channels != w:
            raise ConstructionError("dense-block keeps its width")
        self.w1 = Parameter(he_uniform(rng, (w, w), w), name=f"{name}.fc1.weight")
        self.norm1 = Norm(w, f"{name}.norm1", batch=batch_norm)
        self.w2 = Parameter(he_uniform(rng, (w, w), w), name=f"{name}.fc2.weight")
        self.norm2 = Norm(w, f"{name}.norm2", scale=0.0, batch=batch_norm)

    def __call__(self, x: Tensor, training: bool = True) -> Tensor:
        h = ad.relu(self.norm1(ad.affine(x, self.w1), training))
        return ad.add(x, self.norm2(ad.affine(h, self.w2), training))

    def params(self) -> list[Parameter]:
        return [self.w1, *self.norm1.params(), self.w2, *self.norm2.params()]


class ScalarBlock:
    """``y = (1 + w) x`` with a single scalar weight; exists for hand-computable checks."""

    def __init__(self, spec: BlockSpec, name: str, rng: np.random.Generator | None = None, value: float = 0.0):
        self.w = Parameter(value, name=f"{name}.w")

    def __call__(self, x: Tensor, training: bool = True) -> Tensor:
        return ad.add(x, ad.mul(x, self.w))

    def params(self) -> list[Parameter]:
        return [self.w]


class Head:
    """Average pooling (conv nets), flatten, affine classifier.  ``affine=False`` is the identity head."""

    def __init__(self, name: str, rng: np.random.Generator | None, in_features: int, num_classes: int,
                 pool: int | None = None, affine: bool = True):
        self.pool = pool
        self.in_features = in_features
        self.weight = self.bias = None
        if affine:
            bound = 1.0 / math.sqrt(in_features)
            self.weight = Parameter(rng.uniform(-bound, bound, size=(in_features, num_classes)), name=f"{name}.fc.weight")
            self.bias = Parameter(rng.uniform(-bound, bound, size=num_classes), name=f"{name}.fc.bias")

    def features(self, h: Tensor) -> Tensor:
        if self.pool is not None:
            h = ad.flatten(ad.avg_pool2d(h, self.pool))
        return h

    def __call__(self, h: Tensor) -> Tensor:
        f = self.features(h)
        if self.weight is None:
            return f
        return ad.affine(f, self.weight, self.bias)

    def params(self) -> list[Parameter]:
        return [] if self.weight is None else [self.weight, self.bias]


@dataclass
class NetworkSpec:
    """Architecture family of a growing network.

    ``width`` is the stem channel count (conv) or hidden width (dense).
    Downsampling layers halve the spatial size and double the channels.
    """

    kind: str
    input_shape: tuple[int, ...]
    num_classes: int
    width: int = 8
    downsample_at: tuple[int, ...] = (4, 9)
    pool_kernel: int = 4
    batch_norm: bool = False
    seed: int = 0
    scalar_init: Sequence[float] = field(default_factory=tuple)

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.downsample_at = tuple(int(v) for v in self.downsample_at)
        if self.kind not in BLOCK_KINDS:
            raise ConstructionError(f"unknown block kind {self.kind!r}")
        if self.kind == "conv-basic-block" and len(self.input_shape) != 3:
            raise ConstructionError(f"conv networks need (C, H, W) inputs, got {self.input_shape}")
        if self.kind == "dense-block" and len(self.input_shape) != 1:
            raise ConstructionError(f"dense networks need flat inputs, got {self.input_shape}")
        if self.width < 1 or self.num_classes < 1:
            raise ConstructionError("width and num_classes must be positive")


class GrowingNetwork:
    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        self.layers: list = []
        self.heads: list[Head] = []
        self.training = True
        rng = np.random.default_rng([spec.seed, 0])
        self.stem_params: list[Parameter] = []
        if spec.kind == "conv-basic-block":
            cin = spec.input_shape[0]
            self.stem_conv = Parameter(he_uniform(rng, (spec.width, cin, 3, 3), cin * 9), name="stem.conv.weight")
            self.stem_norm = Norm(spec.width, "stem.norm", batch=spec.batch_norm)
            self.stem_params = [self.stem_conv, *self.stem_norm.params()]
        elif spec.kind == "dense-block":
            fin = spec.input_shape[0]
            self.stem_weight = Parameter(he_uniform(rng, (fin, spec.width), fin), name="stem.fc.weight")
            self.stem_bias = Parameter(np.zeros(spec.width), name="stem.fc.bias")
            self.stem_params = [self.stem_weight, self.stem_bias]

    # -- structure -------------------------------------------------------
    @property
    def depth(self) -> int:
        return len(self.layers)

    def _geometry(self, k: int) -> tuple[int, int, bool]:
        """(in_channels, out_channels, downsample) of layer ``k``."""
        spec = self.spec
        if spec.kind != "conv-basic-block":
            return spec.width, spec.width, False
        before = sum(1 for j in spec.downsample_at if j < k)
        cin = spec.width * 2**before
        down = k in spec.downsample_at
        return cin, cin * 2 if down else cin, down

    def _spatial(self, k: int) -> tuple[int, int]:
        _, h, w = self.spec.input_shape
        for j in self.spec.downsample_at:
            if j <= k:
                h, w = (h + 1) // 2, (w + 1) // 2
        return h, w

    def layer_generator(self, k: int):
        """Build (block, head) for layer ``k``."""
        spec = self.spec
        if k < 1:
            raise ConstructionError(f"layer index must be >= 1, got {k}")
        rng = np.random.default_rng([spec.seed, k])
        cin, cout, down = self._geometry(k)
        block_spec = BlockSpec(spec.kind, cin, cout, down)
        name = f"layer{k}"
        if spec.kind == "conv-basic-block":
            block = ConvBasicBlock(block_spec, name, rng, spec.batch_norm)
            h, w = self._spatial(k)
            pool = min(spec.pool_kernel, h, w)
            head = Head(f"head{k}", rng, cout * (h // pool) * (w // pool), spec.num_classes, pool=pool)
        elif spec.kind == "dense-block":
            block = DenseBlock(block_spec, name, rng, spec.batch_norm)
            head = Head(f"head{k}", rng, cout, spec.num_classes)
        else:
            init = spec.scalar_init[k - 1] if k - 1 < len(spec.scalar_init) else 0.0
            block = ScalarBlock(block_spec, name, value=float(init))
            head = Head(f"head{k}", None, spec.input_shape[0], spec.num_classes, affine=False)
        return block, head

    def grow_to(self, target_depth: int) -> int:
        """Append layers until there are ``target_depth``; returns how many were added."""
        if target_depth < 1:
            raise DomainError(f"target depth must be >= 1, got {target_depth}")
        added = 0
        while len(self.layers) < target_depth:
            block, head = self.layer_generator(len(self.layers) + 1)
            self.layers.append(block)
            self.heads.append(head)
            added += 1
        return added

    # -- parameters ------------------------------------------------------
    def layer_params(self, k: int) -> list[Parameter]:
        return self.layers[k - 1].params()

    def head_params(self, k: int) -> list[Parameter]:
        return self.heads[k - 1].params()

    def params_for_depth(self, d: int) -> list[Parameter]:
        """Weights of the depth-``d`` sub-network: stem, layers 1..d and head d."""
        self._check_depth(d)
        out = list(self.stem_params)
        for k in range(1, d + 1):
            out += self.layer_params(k)
        return out + self.head_params(d)

    def params_within(self, d_max: int) -> list[Parameter]:
        """Stem, layers 1..d_max and heads 1..d_max."""
        self._check_depth(d_max)
        out = list(self.stem_params)
        for k in range(1, d_max + 1):
            out += self.layer_params(k) + self.head_params(k)
        return out

    def parameters(self) -> list[Parameter]:
        return self.params_within(self.depth) if self.layers else list(self.stem_params)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def checksum(self, depth: int | None = None) -> str:
        """SHA-256 over the names and values of the parameters of layers up to ``depth``."""
        params = self.parameters() if depth is None else self.params_within(depth)
        h = hashlib.sha256()
        for p in params:
            h.update(p.name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    # -- forward ---------------------------------------------------------
    def _check_depth(self, d: int) -> None:
        if not 1 <= d <= len(self.layers):
            raise DomainError(f"depth {d} outside [1, {len(self.layers)}]")

    def _stem(self, x: Tensor) -> Tensor:
        if self.spec.kind == "conv-basic-block":
            return ad.relu(self.stem_norm(ad.conv2d(x, self.stem_conv, stride=1, padding=1), self.training))
        if self.spec.kind == "dense-block":
            return ad.affine(x, self.stem_weight, self.stem_bias)
        return x

    def trunk(self, x, depth: int) -> list[Tensor]:
        """Activations after layers 1..depth."""
        self._check_depth(depth)
        h = self._stem(x if isinstance(x, Tensor) else Tensor(x))
        out = []
        for block in self.layers[:depth]:
            h = block(h, self.training)
            out.append(h)
        return out

    def forward_at_depth(self, x, d: int) -> Tensor:
        self._check_depth(d)
        return self.heads[d - 1](self.trunk(x, d)[-1])

    def forward_all(self, x, d_max: int) -> list[Tensor]:
        """Logits of heads 1..d_max from a single pass through the shared trunk."""
        return [head(h) for head, h in zip(self.heads, self.trunk(x, d_max))]

    def features_at_depth(self, x, d: int) -> Tensor:
        self._check_depth(d)
        return self.heads[d - 1].features(self.trunk(x, d)[-1])

    def norms(self) -> list[Norm]:
        found = []
        for obj in [self, *self.layers]:
            for value in vars(obj).values():
                if isinstance(value, Norm):
                    found.append(value)
        return found


def _batches(n: int, size: int):
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))


def predict_mixture(net: GrowingNetwork, x: np.ndarray, posterior: TruncatedPoissonPosterior,
                    batch_size: int = 256) -> np.ndarray:
    """Posterior-weighted average of the per-depth softmax outputs."""
    if posterior.d_max > net.depth:
        raise DomainError(f"posterior support reaches depth {posterior.d_max} but the network has {net.depth} layers")
    q = posterior.pmf_values()
    lo = posterior.d_min
    was_training, net.training = net.training, False
    out = []
    try:
        with ad.no_grad():
            for sl in _batches(len(x), batch_size):
                logits = net.forward_all(x[sl], posterior.d_max)
                probs = sum(q[d - lo] * ad.softmax(logits[d - 1]).data for d in posterior.support)
                out.append(probs)
    finally:
        net.training = was_training
    return np.concatenate(out) if out else np.zeros((0, net.spec.num_classes))


def features_at_mode(net: GrowingNetwork, x: np.ndarray, posterior: TruncatedPoissonPosterior,
                     batch_size: int = 256) -> np.ndarray:
    """Head input (pooled, flattened) at the posterior's most probable depth."""
    if posterior.d_max > net.depth:
        raise DomainError(f"posterior support reaches depth {posterior.d_max} but the network has {net.depth} layers")
    d = mode_depth(posterior)
    net._check_depth(d)
    was_training, net.training = net.training, False
    try:
        with ad.no_grad():
            return np.concatenate([net.features_at_depth(x[sl], d).data for sl in _batches(len(x), batch_size)])
    finally:
        net.training = was_training
