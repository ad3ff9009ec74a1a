"""Dense float64 tensors with reverse-mode automatic differentiation.

Define-by-run: each operation returns a new :class:`Tensor` that remembers its
parents and a closure that routes the incoming gradient to them.  Calling
:func:`backward` on a scalar walks the recorded graph once in reverse
topological order, carrying this pass's gradients in a scratch buffer, and
adds the result into each leaf's ``.grad``.  Gradients accumulate there until
explicitly cleared, so two backward calls on the same graph double every leaf
gradient.  Graphs are rebuilt on every forward pass.

Everything is float64 on purpose: the engine is meant for desk-scale models
whose correctness is checked against central finite differences, and the
extra precision keeps those comparisons honest.
"""

from __future__ import annotations

import contextlib
import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

# not named `log`: that name is taken by the elementwise logarithm op below
logger = logging.getLogger(__name__)


class DimensionError(ValueError):
    """Raised when operand shapes do not line up for an operation."""


_grad_enabled: bool = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / benchmarking)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A numpy float64 array plus the bookkeeping needed for backprop."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64, copy=True)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- convenience -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _non_scalar(self)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _non_scalar(t: Tensor):
    raise DimensionError(f"expected a scalar tensor, got shape {t.shape}")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out._parents = ()
    out._backward = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# While a backward sweep is running, gradients flow through this per-pass
# buffer (id(tensor) -> (tensor, grad)) instead of the persistent .grad
# fields.  Only graph leaves have the pass result added into .grad at the
# end, so repeated backward calls accumulate exactly one dLoss/dLeaf each.
_pass_grads: dict[int, tuple["Tensor", np.ndarray]] | None = None


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if _pass_grads is not None:
        entry = _pass_grads.get(id(t))
        if entry is None:
            _pass_grads[id(t)] = (t, np.array(g, dtype=np.float64, copy=True))
        else:
            _pass_grads[id(t)] = (t, entry[1] + g)
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to `shape` after numpy broadcasting expanded it."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def backward(g: np.ndarray) -> None:
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def backward(g: np.ndarray) -> None:
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g: np.ndarray) -> None:
        _accumulate(a, -g)

    return _make(-a.data, (a,), backward)


def scale(a, factor: float) -> Tensor:
    """Multiply by a python constant (no graph node for the constant)."""
    a = _as_tensor(a)
    factor = float(factor)

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g * factor)

    return _make(a.data * factor, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes do not align: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _make(data, (a, b), backward)


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a 2-D tensor, got {a.shape}")

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g.T)

    return _make(a.data.T.copy(), (a,), backward)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    data = a.data.reshape(shape)

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g.reshape(a.shape))

    return _make(data.copy(), (a,), backward)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    keep = a.data > 0

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g * keep)

    return _make(np.where(keep, a.data, 0.0), (a,), backward)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g * (1.0 - y * y))

    return _make(y, (a,), backward)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    # piecewise form avoids overflow in exp for large |x|
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g * y * (1.0 - y))

    return _make(y, (a,), backward)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    y = np.exp(a.data)

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g * y)

    return _make(y, (a,), backward)


def log(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g / a.data)

    return _make(np.log(a.data), (a,), backward)


def tsum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g: np.ndarray) -> None:
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(gg, a.shape).copy())

    return _make(np.asarray(data, dtype=np.float64), (a,), backward)


def tmean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax along `axis` (max-subtraction)."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray) -> None:
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accumulate(a, y * (g - dot))

    return _make(y, (a,), backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine.

    The epsilon sits inside the square root: (var + eps) ** -0.5.
    """
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm affine shapes {gain.shape}/{bias.shape} do not match feature dim ({d},)"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    y = xhat * gain.data + bias.data

    def backward(g: np.ndarray) -> None:
        flat_axes = tuple(range(g.ndim - 1))
        _accumulate(gain, (g * xhat).sum(axis=flat_axes))
        _accumulate(bias, g.sum(axis=flat_axes))
        dxhat = g * gain.data
        term = dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        _accumulate(x, inv * term)

    return _make(y, (x, gain, bias), backward)


def gather_rows(x, indices) -> Tensor:
    """Select rows `x[indices]`; gradient scatter-adds back (duplicates sum)."""
    x = _as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise DimensionError(f"gather_rows expects a 1-D index array, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise IndexError(f"gather_rows index out of range for {x.shape[0]} rows")
    data = x.data[idx]

    def backward(g: np.ndarray) -> None:
        if not x.requires_grad:
            return
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        _accumulate(x, gx)

    return _make(data.copy(), (x,), backward)


def scatter_rows(x, indices, n_rows: int) -> Tensor:
    """Place rows of `x` at `indices` in an otherwise-zero (n_rows, d) tensor."""
    x = _as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.shape != (x.shape[0],):
        raise DimensionError(f"scatter_rows needs one index per row: {idx.shape} vs {x.shape}")
    data = np.zeros((n_rows,) + x.shape[1:], dtype=np.float64)
    data[idx] = x.data

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g[idx])

    return _make(data, (x,), backward)


def narrow(x, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of `length` entries along `axis` (0 or 1)."""
    x = _as_tensor(x)
    if axis not in (0, 1) or x.ndim < axis + 1:
        raise DimensionError(f"narrow supports axis 0/1 on ≥{axis + 1}-D tensors, got {x.shape}")
    if start < 0 or start + length > x.shape[axis]:
        raise DimensionError(f"narrow range [{start}, {start + length}) exceeds axis {axis} of {x.shape}")
    sl = (slice(start, start + length),) if axis == 0 else (slice(None), slice(start, start + length))
    data = x.data[sl].copy()

    def backward(g: np.ndarray) -> None:
        if not x.requires_grad:
            return
        gx = np.zeros_like(x.data)
        gx[sl] = g
        _accumulate(x, gx)

    return _make(data, (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of an empty sequence")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def backward(g: np.ndarray) -> None:
        offset = 0
        for t, s in zip(tensors, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offset, offset + s)
            _accumulate(t, g[tuple(sl)])
            offset += s

    return _make(data, tuple(tensors), backward)


_ACTIVATIONS = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid}


def activation(x, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; choose from {sorted(_ACTIVATIONS)}") from None
    return fn(x)


# ---------------------------------------------------------------------------
# linear layers and embeddings
# ---------------------------------------------------------------------------


@dataclass
class Linear:
    """Affine map y = x @ weight.T + bias with weight shape (out, in)."""

    weight: Tensor
    bias: Tensor

    def __call__(self, x) -> Tensor:
        return linear(x, self)

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]


def linear(x, layer: Linear) -> Tensor:
    x = _as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"linear expects (rows, features), got {x.shape}")
    if x.shape[1] != layer.in_features:
        raise DimensionError(
            f"linear input width {x.shape} incompatible with weight {layer.weight.shape}"
        )
    return add(matmul(x, transpose(layer.weight)), layer.bias)


def embedding_lookup(table, index: int, *, warn_label: str = "embedding") -> Tensor:
    """Row `index` of an embedding table, clamping overshoots to the last row.

    A negative index is a caller bug and raises; an index past the table end is
    clamped to the final row with a logged warning (the documented behaviour
    for out-of-vocabulary buckets).
    """
    table = _as_tensor(table)
    n = table.shape[0]
    if index < 0:
        raise ValueError(f"{warn_label}: negative index {index}")
    if index >= n:
        logger.warning("%s: index %d clamped to table size %d", warn_label, index, n)
        index = n - 1
    return reshape(gather_rows(table, np.array([index])), (table.shape[1],))


def clamp_indices(indices: np.ndarray, n_rows: int, *, warn_label: str = "embedding") -> np.ndarray:
    """Vectorised variant of the lookup clamp rule for index arrays."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and idx.min() < 0:
        raise ValueError(f"{warn_label}: negative index {int(idx.min())}")
    if idx.size and idx.max() >= n_rows:
        logger.warning(
            "%s: %d indices clamped to table size %d", warn_label, int((idx >= n_rows).sum()), n_rows
        )
        idx = np.minimum(idx, n_rows - 1)
    return idx


# ---------------------------------------------------------------------------
# graph traversal
# ---------------------------------------------------------------------------


def backward(out: Tensor) -> None:
    """Backpropagate from a scalar: reverse-topological sweep of the graph.

    Each call adds exactly dLoss/dLeaf into every requires_grad leaf's .grad
    (pure accumulation: two calls without zeroing double the grads).
    Intermediate nodes never retain gradients across calls.
    """
    if out.size != 1:
        raise DimensionError(f"backward expects a scalar output, got shape {out.shape}")
    if not out.requires_grad:
        raise ValueError("backward on a tensor that does not require grad (graph not recorded?)")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(out, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    global _pass_grads
    _pass_grads = {id(out): (out, np.ones_like(out.data))}
    try:
        for node in reversed(topo):
            entry = _pass_grads.get(id(node))
            if entry is not None and node._backward is not None:
                node._backward(entry[1])
    finally:
        pass_grads, _pass_grads = _pass_grads, None

    for node, g in pass_grads.values():
        if node._backward is None and node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g


# ---------------------------------------------------------------------------
# parameter helpers
# ---------------------------------------------------------------------------


def init_param(rng: np.random.Generator, shape: tuple[int, ...]) -> Tensor:
    """Learned-parameter initialiser: uniform(-0.1, 0.1) from the run generator."""
    return Tensor(rng.uniform(-0.1, 0.1, size=shape), requires_grad=True)


def init_linear(rng: np.random.Generator, n_out: int, n_in: int) -> Linear:
    return Linear(init_param(rng, (n_out, n_in)), init_param(rng, (n_out,)))


def zero_grads(params: Iterable[Tensor]) -> None:
    for t in params:
        t.grad = None


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Compare analytic gradients of scalar-valued `f` against central differences.

    Returns max over coordinates of |analytic - numeric| / max(|analytic|,
    |numeric|, 1e-8).  `f` must rebuild its graph on each call and not mutate
    external state.
    """
    if not x.requires_grad:
        raise ValueError("grad_check input must require grad")
    x.grad = None
    out = f(x)
    if out.size != 1:
        raise DimensionError(f"grad_check target must be scalar, got shape {out.shape}")
    backward(out)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(x).data.reshape(-1)[0])
            flat[i] = orig - h
            fm = float(f(x).data.reshape(-1)[0])
            flat[i] = orig
            num_flat[i] = (fp - fm) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    rel = np.abs(analytic - numeric) / denom
    x.grad = None
    return float(rel.max()) if rel.size else 0.0


def global_grad_norm(params: Iterable[Tensor]) -> float:
    total = 0.0
    for t in params:
        if t.grad is not None:
            total += float((t.grad * t.grad).sum())
    return math.sqrt(total)
