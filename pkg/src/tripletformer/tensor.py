"""Dense float64 tensors with a minimal reverse-mode gradient tape.

The package trains small attention models on CPU, so the engine favours
transparency over generality: every tensor wraps a C-contiguous float64 numpy
array, a :class:`GradTape` records one node per primitive op in execution
order (which is already a topological order), and :func:`backward` runs a
single reverse sweep with additive gradient accumulation.  Tapes are dynamic:
one tape per forward pass, consumed and cleared by ``backward``.

Broadcasting is deliberately restricted to what the model needs: elementwise
ops on equal shapes, scalars against anything, and matrix + row-vector for
bias addition.  Anything else is a shape error.

Multiply-add counters live here so attention cost claims can be checked by
exact counts rather than asymptotics: ``matmul`` adds ``m*k*n`` per call and
attention code adds its softmax-score products to a separate field.  Counters
are thread-local; a tape and its tensors are a single-threaded unit of work.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit, ndtr

__all__ = [
    "Tensor",
    "GradTape",
    "OpCounters",
    "op_counters",
    "backward",
    "grad_check",
    "matmul",
    "transpose",
    "relu",
    "softplus",
    "gelu",
    "log",
    "tsum",
    "tmean",
    "softmax_rows",
    "concat_cols",
    "take_rows",
    "reshape",
]

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class OpCounters:
    """Exact multiply-add tallies, reset between measurements."""

    __slots__ = ("matmul_madds", "score_madds")

    def __init__(self):
        self.matmul_madds = 0
        self.score_madds = 0

    def reset(self) -> None:
        self.matmul_madds = 0
        self.score_madds = 0


_local = threading.local()


def op_counters() -> OpCounters:
    """The calling thread's counter block."""
    counters = getattr(_local, "counters", None)
    if counters is None:
        counters = _local.counters = OpCounters()
    return counters


class Tensor:
    """A dense float64 array, optionally attached to a gradient tape."""

    __slots__ = ("data", "tape", "tape_id")

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            # ascontiguousarray would promote 0-d to 1-d, so only call it
            # when needed; 0-d arrays are always contiguous
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.tape: GradTape | None = None
        self.tape_id: int | None = None

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
        return float(self.data)

    def __repr__(self) -> str:
        tracked = "" if self.tape is None else ", tracked"
        return f"Tensor(shape={self.shape}{tracked})"

    # arithmetic sugar; all logic lives in the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return tsum(self)


class _Node:
    __slots__ = ("parents", "backward_fn")

    def __init__(self, parents, backward_fn):
        self.parents = parents
        self.backward_fn = backward_fn


class GradTape:
    """Ordered op record for one forward pass.

    Ops are appended in execution order, so parents always precede children
    and the reverse sweep visits each node exactly once.  ``backward``
    consumes the tape; recording on a consumed tape raises.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._watched: list[Tensor] = []
        self._consumed = False

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def consumed(self) -> bool:
        return self._consumed

    def watch(self, tensor: Tensor) -> Tensor:
        """Register ``tensor`` as a tracked leaf parameter."""
        if self._consumed:
            raise RuntimeError("cannot watch on a consumed tape")
        if tensor.tape is self:
            return tensor
        if tensor.tape is not None:
            raise ValueError("tensor already belongs to another tape")
        tensor.tape = self
        tensor.tape_id = self._record((), None)
        self._watched.append(tensor)
        return tensor

    def _record(self, parent_ids: tuple, backward_fn) -> int:
        if self._consumed:
            raise RuntimeError("cannot record on a consumed tape")
        self._nodes.append(_Node(parent_ids, backward_fn))
        return len(self._nodes) - 1

    def _close(self) -> None:
        for t in self._watched:
            t.tape = None
            t.tape_id = None
        self._nodes = []
        self._watched = []
        self._consumed = True


def _as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def _merge_tape(*tensors: Tensor) -> GradTape | None:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if t.tape.consumed:
            raise RuntimeError("tensor belongs to a consumed tape")
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ValueError("operands belong to two different tapes")
    return tape


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    tape = _merge_tape(*parents)
    if tape is not None:
        ids = tuple(p.tape_id if p.tape is tape else None for p in parents)
        out.tape = tape
        out.tape_id = tape._record(ids, backward_fn)
    return out


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse sweep from a scalar loss.

    Returns d(loss)/d(param) for every watched parameter of the loss's tape;
    parameters the loss does not depend on receive zeros.  The tape is cleared
    afterwards and cannot be reused.
    """
    tape = loss.tape
    if tape is None or tape.consumed:
        raise ValueError("loss is not attached to an active tape")
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    nodes = tape._nodes
    grads: list[np.ndarray | None] = [None] * len(nodes)
    grads[loss.tape_id] = np.ones_like(loss.data)
    for nid in range(len(nodes) - 1, -1, -1):
        out_grad = grads[nid]
        if out_grad is None:
            continue
        node = nodes[nid]
        if node.backward_fn is None:
            continue
        for pid, pgrad in zip(node.parents, node.backward_fn(out_grad)):
            if pid is None or pgrad is None:
                continue
            if grads[pid] is None:
                grads[pid] = pgrad.copy() if pgrad.base is not None else pgrad
            else:
                grads[pid] = grads[pid] + pgrad
    result = {}
    for param in tape._watched:
        g = grads[param.tape_id]
        if g is None:
            g = np.zeros_like(param.data)
        elif not g.flags["C_CONTIGUOUS"]:
            # ascontiguousarray promotes 0-d to 1-d, so call it only when
            # needed; 0-d arrays are always contiguous
            g = np.ascontiguousarray(g)
        result[param] = g
    tape._close()
    return result


# ---------------------------------------------------------------------------
# primitive ops


def _is_scalar_like(t: Tensor) -> bool:
    return t.ndim == 0


def add(a, b) -> Tensor:
    """Elementwise sum; supports equal shapes, scalars and matrix + row-vector."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        def back(g):
            return g, g
    elif _is_scalar_like(b) or _is_scalar_like(a):
        def back(g):
            ga = g if a.shape == out_shape else np.array(g.sum())
            gb = g if b.shape == out_shape else np.array(g.sum())
            return ga, gb
    elif a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        def back(g):
            return g, g.sum(axis=0)
    else:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    data = a.data + b.data
    out_shape = data.shape
    return _make(data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        def back(g):
            return g, -g
    elif _is_scalar_like(b) or _is_scalar_like(a):
        def back(g):
            ga = g if a.shape == out_shape else np.array(g.sum())
            gb = -g if b.shape == out_shape else np.array(-g.sum())
            return ga, gb
    else:
        raise ValueError(f"sub shape mismatch: {a.shape} vs {b.shape}")
    data = a.data - b.data
    out_shape = data.shape
    return _make(data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if not (a.shape == b.shape or _is_scalar_like(a) or _is_scalar_like(b)):
        raise ValueError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    data = a.data * b.data
    out_shape = data.shape

    def back(g):
        ga = g * b.data
        gb = g * a.data
        if a.shape != out_shape:
            ga = np.array(ga.sum())
        if b.shape != out_shape:
            gb = np.array(gb.sum())
        return ga, gb

    return _make(data, (a, b), back)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if not (a.shape == b.shape or _is_scalar_like(a) or _is_scalar_like(b)):
        raise ValueError(f"div shape mismatch: {a.shape} vs {b.shape}")
    data = a.data / b.data
    out_shape = data.shape

    def back(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        if a.shape != out_shape:
            ga = np.array(ga.sum())
        if b.shape != out_shape:
            gb = np.array(gb.sum())
        return ga, gb

    return _make(data, (a, b), back)


def neg(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of 2-D tensors; adds ``m*k*n`` to the multiply-add tally."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} vs {b.shape}")
    m, k = a.shape
    n = b.shape[1]
    op_counters().matmul_madds += m * k * n

    def back(g):
        op_counters().matmul_madds += m * n * k + k * m * n
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), back)


def transpose(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ValueError(f"transpose expects a matrix, got shape {a.shape}")
    return _make(np.ascontiguousarray(a.data.T), (a,), lambda g: (np.ascontiguousarray(g.T),))


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    data = np.maximum(a.data, 0.0)
    return _make(data, (a,), lambda g: (g * (a.data > 0.0),))


def softplus(a: Tensor) -> Tensor:
    """Overflow-safe ``log(1 + exp(x))`` = ``max(x, 0) + log1p(exp(-|x|))``."""
    a = _as_tensor(a)
    data = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))
    return _make(data, (a,), lambda g: (g * expit(a.data),))


def gelu(a: Tensor) -> Tensor:
    """Exact Gaussian error linear unit ``x * Phi(x)``."""
    a = _as_tensor(a)
    cdf = ndtr(a.data)
    data = a.data * cdf

    def back(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * a.data * a.data)
        return (g * (cdf + a.data * pdf),)

    return _make(data, (a,), back)


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def tsum(a: Tensor) -> Tensor:
    """Sum of all entries as a scalar tensor."""
    a = _as_tensor(a)
    return _make(np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def tmean(a: Tensor) -> Tensor:
    """Mean of all entries; identical floats to ``np.mean`` (sum then divide)."""
    a = _as_tensor(a)
    return div(tsum(a), float(a.size))


def softmax_rows(x: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
    """Row-wise softmax of a matrix with an optional column mask.

    ``key_mask`` is a boolean vector over columns; masked columns receive
    weight exactly 0.0 and rows renormalise over the surviving columns.
    Stabilised by subtracting the per-row maximum over unmasked columns.
    """
    x = _as_tensor(x)
    if x.ndim != 2:
        raise ValueError(f"softmax_rows expects a matrix, got shape {x.shape}")
    n = x.shape[1]
    if key_mask is None:
        mask = np.ones(n, dtype=bool)
    else:
        mask = np.asarray(key_mask, dtype=bool)
        if mask.shape != (n,):
            raise ValueError(f"key_mask shape {mask.shape} does not match {n} columns")
    if not mask.any():
        raise ValueError("empty attention support: every key is masked")
    masked_logits = np.where(mask, x.data, -np.inf)
    row_max = masked_logits.max(axis=1, keepdims=True)
    exp = np.exp(masked_logits - row_max)
    weights = exp / exp.sum(axis=1, keepdims=True)

    def back(g):
        inner = (g * weights).sum(axis=1, keepdims=True)
        return (weights * (g - inner),)

    return _make(weights, (x,), back)


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate matrices with equal row counts along columns."""
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat_cols needs at least one tensor")
    rows = tensors[0].shape[0]
    for t in tensors:
        if t.ndim != 2 or t.shape[0] != rows:
            raise ValueError(
                f"concat_cols row mismatch: {[tuple(u.shape) for u in tensors]}"
            )
    widths = [t.shape[1] for t in tensors]
    offsets = np.cumsum([0] + widths)

    def back(g):
        return tuple(
            np.ascontiguousarray(g[:, offsets[i]:offsets[i + 1]])
            for i in range(len(tensors))
        )

    return _make(np.concatenate([t.data for t in tensors], axis=1), tuple(tensors), back)


def take_rows(x: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows by index; the backward pass scatter-adds into the source."""
    x = _as_tensor(x)
    if x.ndim != 2:
        raise ValueError(f"take_rows expects a matrix, got shape {x.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ValueError("take_rows expects a 1-D index vector")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ValueError(f"row index out of range for shape {x.shape}")

    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _make(x.data[idx], (x,), back)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    x = _as_tensor(x)
    data = x.data.reshape(shape)
    return _make(np.ascontiguousarray(data), (x,), lambda g: (g.reshape(x.shape),))


# ---------------------------------------------------------------------------
# finite-difference gradient checking


def grad_check(
    f: Callable[[list[Tensor]], Tensor],
    params: Sequence,
    eps: float = 1e-4,
) -> float:
    """Compare analytic gradients of ``f`` against central differences.

    ``f`` maps a list of tensors to a scalar; it is called once on a tape for
    the analytic gradients and twice per parameter entry for the numeric ones,
    ``(f(x + eps) - f(x - eps)) / (2 eps)``.  Returns the maximum relative
    error over all entries with denominator ``max(|a|, |b|, 1e-8)``.
    """
    if eps <= 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    arrays = [np.array(p.data if isinstance(p, Tensor) else p, dtype=np.float64) for p in params]

    def scalar_eval(values: list[np.ndarray]) -> float:
        out = f([Tensor(v) for v in values])
        val = float(out.data) if isinstance(out, Tensor) else float(out)
        if not math.isfinite(val):
            raise ValueError(f"objective is non-finite: {val}")
        return val

    tape = GradTape()
    tracked = [tape.watch(Tensor(a.copy())) for a in arrays]
    loss = f(tracked)
    if not isinstance(loss, Tensor):
        raise TypeError("objective must return a Tensor")
    grad_map = backward(loss)
    analytic = [grad_map[t] for t in tracked]

    max_rel = 0.0
    for i, base in enumerate(arrays):
        flat = base.reshape(-1)
        for j in range(flat.size):
            saved = flat[j]
            flat[j] = saved + eps
            f_plus = scalar_eval(arrays)
            flat[j] = saved - eps
            f_minus = scalar_eval(arrays)
            flat[j] = saved
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = analytic[i].reshape(-1)[j]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if rel > max_rel:
                max_rel = rel
    return max_rel
