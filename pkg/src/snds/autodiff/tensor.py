"""Define-by-run tensors with reverse-mode differentiation.

Every primitive builds its output through :func:`record`, which attaches the
parents and a vector-Jacobian closure only when at least one parent takes part
in differentiation.  :func:`backward` walks the recorded graph once, in reverse
topological order, and accumulates into :attr:`Parameter.grad`.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterator, Sequence

import numpy as np

from snds.errors import GraphError, NumericOverflowError

_grad_enabled = True
_ids = itertools.count()


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording; safe to use for pure forward passes."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_vjp", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = ""
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.item())

    def numpy(self) -> np.ndarray:
        return self.data

    def __float__(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}{tag})"

    # Thin operator sugar; the primitives live in snds.autodiff.ops.
    def __add__(self, other):
        from snds.autodiff import ops

        return ops.add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        from snds.autodiff import ops

        return ops.sub(self, _as_tensor(other))

    def __mul__(self, other):
        from snds.autodiff import ops

        return ops.mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        from snds.autodiff import ops

        return ops.mul(self, Tensor(-1.0))


class Parameter(Tensor):
    """A trainable leaf.  ``name`` is the stable identifier used in checkpoints."""

    __slots__ = ("grad", "name", "uid")

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.grad = np.zeros_like(self.data)
        self.uid = next(_ids)
        self.name = name or f"param{self.uid}"

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def record(
    op: str,
    value: np.ndarray,
    parents: Sequence[Tensor],
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]],
) -> Tensor:
    """Wrap ``value`` as the output of primitive ``op``.

    ``vjp`` maps the output cotangent to one cotangent per parent (``None``
    for parents that need none).
    """
    value = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(value)):
        raise NumericOverflowError(f"{op}: non-finite output")
    out = Tensor(value)
    for p in parents:
        if p._consumed and not isinstance(p, Parameter):
            raise GraphError(f"{op}: input belongs to a graph that was already differentiated")
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
        out._op = op
    return out


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` that take part in differentiation, inputs first."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into every reachable :class:`Parameter`."""
    if loss.data.shape != ():
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("backward already run on this graph; record a new forward pass")
    if not loss.requires_grad:
        loss._consumed = True
        return
    order = topological_order(loss)
    cot: dict[int, np.ndarray] = {id(loss): np.ones(())}
    for node in reversed(order):
        g = cot.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad = node.grad + g
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            cot[key] = cot[key] + pg if key in cot else pg
    for node in order:
        if not isinstance(node, Parameter):
            node._vjp = None
            node._parents = ()
            node._consumed = True
