"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records an entry on a global tape: (output, inputs,
backward rule). ``backward(loss)`` walks the tape in reverse, propagating
gradients from a scalar loss; gradients accumulate additively across
multiple uses of a tensor, and a second ``backward`` call adds another
full pass of gradients on top of the first (callers zero grads between
steps).

Broadcasting is restricted to one rule: a binary elementwise op may pair
an (n, d) tensor with a (d,) tensor, in which case the (d,) operand is
applied to every row and its gradient is the row-sum of the output
gradient. All other shape combinations must match exactly.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NumericsError(ArithmeticError):
    """A non-finite value appeared where finite values are required."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; the functional forms below do the work.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of primitive ops; inputs always precede outputs."""

    def __init__(self):
        self.ops: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def clear(self) -> None:
        self.ops.clear()


_TAPE = Tape()
_GRAD_ENABLED = True


def reset_tape() -> None:
    _TAPE.clear()


def tape_length() -> int:
    return len(_TAPE.ops)


@contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    if _GRAD_ENABLED and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _TAPE.ops.append((out, inputs, backward_fn))
    return out


def backward(loss: Tensor) -> None:
    """Populate .grad on every requires_grad tensor reachable from loss.

    loss must be scalar (shape ()). Gradients are added into any existing
    .grad buffers, so repeated calls accumulate.
    """
    if loss.data.shape != ():
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    flows: dict[int, np.ndarray] = {id(loss): np.ones(())}
    holders: dict[int, Tensor] = {id(loss): loss}
    for out, inputs, backward_fn in reversed(_TAPE.ops):
        g = flows.get(id(out))
        if g is None:
            continue
        for inp, gi in zip(inputs, backward_fn(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in flows:
                flows[key] = flows[key] + gi
            else:
                flows[key] = gi
                holders[key] = inp
    for key, g in flows.items():
        t = holders[key]
        if t.requires_grad:
            t.grad = g if t.grad is None else t.grad + g


# --- elementwise / broadcast helpers -------------------------------------

def _check_broadcast(a: Tensor, b: Tensor, opname: str) -> bool:
    """Return True when b is row-broadcast over a; raise on mismatch."""
    if a.shape == b.shape:
        return False
    if a.data.ndim == 2 and b.shape == (a.shape[1],):
        return True
    raise ShapeError(f"{opname}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_broadcast(g: np.ndarray, broadcast: bool) -> np.ndarray:
    return g.sum(axis=0) if broadcast else g


# --- primitive ops --------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data)

    def backward_fn(g):
        return g @ b.data.T, a.data.T @ g

    return _record(out, (a, b), backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    bc = _check_broadcast(a, b, "add")
    out = Tensor(a.data + b.data)

    def backward_fn(g):
        return g, _reduce_broadcast(g, bc)

    return _record(out, (a, b), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    bc = _check_broadcast(a, b, "sub")
    out = Tensor(a.data - b.data)

    def backward_fn(g):
        return g, -_reduce_broadcast(g, bc)

    return _record(out, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    bc = _check_broadcast(a, b, "mul")
    out = Tensor(a.data * b.data)

    def backward_fn(g):
        return g * b.data, _reduce_broadcast(g * a.data, bc)

    return _record(out, (a, b), backward_fn)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.data * c)

    def backward_fn(g):
        return (g * c,)

    return _record(out, (a,), backward_fn)


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))
    mask = a.data > 0.0  # subgradient 0 at 0

    def backward_fn(g):
        return (g * mask,)

    return _record(out, (a,), backward_fn)


def sigmoid(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(s)

    def backward_fn(g):
        return (g * s * (1.0 - s),)

    return _record(out, (a,), backward_fn)


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    out = Tensor(e)

    def backward_fn(g):
        return (g * e,)

    return _record(out, (a,), backward_fn)


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))

    def backward_fn(g):
        return (g / a.data,)

    return _record(out, (a,), backward_fn)


def powc(a: Tensor, p: float) -> Tensor:
    """Elementwise power with a constant exponent."""
    p = float(p)
    out = Tensor(a.data ** p)

    def backward_fn(g):
        return (g * p * a.data ** (p - 1.0),)

    return _record(out, (a,), backward_fn)


def absolute(a: Tensor) -> Tensor:
    out = Tensor(np.abs(a.data))
    sgn = np.sign(a.data)

    def backward_fn(g):
        return (g * sgn,)

    return _record(out, (a,), backward_fn)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(np.concatenate([a.data, b.data], axis=1))
    da = a.shape[1]

    def backward_fn(g):
        return g[:, :da], g[:, da:]

    return _record(out, (a, b), backward_fn)


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())

    def backward_fn(g):
        return (np.full(a.shape, g),)

    return _record(out, (a,), backward_fn)


def sum_rows(a: Tensor) -> Tensor:
    """Sum over axis 0: (n, d) -> (d,)."""
    if a.data.ndim != 2:
        raise ShapeError(f"sum_rows expects a matrix, got shape {a.shape}")
    out = Tensor(a.data.sum(axis=0))
    n = a.shape[0]

    def backward_fn(g):
        return (np.broadcast_to(g, (n,) + g.shape).copy(),)

    return _record(out, (a,), backward_fn)


def sum_cols(a: Tensor) -> Tensor:
    """Sum over axis 1, keepdims: (n, d) -> (n, 1)."""
    if a.data.ndim != 2:
        raise ShapeError(f"sum_cols expects a matrix, got shape {a.shape}")
    out = Tensor(a.data.sum(axis=1, keepdims=True))
    d = a.shape[1]

    def backward_fn(g):
        return (np.broadcast_to(g, (g.shape[0], d)).copy(),)

    return _record(out, (a,), backward_fn)


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(a.data[idx])
    shape = a.shape

    def backward_fn(g):
        da = np.zeros(shape)
        np.add.at(da, idx, g)
        return (da,)

    return _record(out, (a,), backward_fn)


def segment_sum(a: Tensor, idx: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of a into num_segments buckets given by idx.

    Rows are accumulated in storage order of a; callers that need a
    canonical summation order sort their rows first.
    """
    idx = np.asarray(idx, dtype=np.int64)
    if a.data.ndim != 2 or idx.shape != (a.shape[0],):
        raise ShapeError(f"segment_sum: data {a.shape} vs index {idx.shape}")
    acc = np.zeros((num_segments, a.shape[1]))
    np.add.at(acc, idx, a.data)
    out = Tensor(acc)

    def backward_fn(g):
        return (g[idx],)

    return _record(out, (a,), backward_fn)


# --- verification ---------------------------------------------------------

def assert_finite(a: Tensor, context: str) -> None:
    if not np.isfinite(a.data).all():
        raise NumericsError(f"non-finite values in {context}")


def finite_diff_check(f, x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between analytic grad of f at x and central differences.

    f maps the Tensor x to a scalar Tensor. The relative error per
    coordinate is |analytic - numeric| / max(1, |analytic|).
    """
    if h <= 0:
        raise ValueError(f"step must be positive, got {h}")
    start = tape_length()
    x.zero_grad()
    out = f(x)
    if out.data.shape != ():
        raise ShapeError(f"finite_diff_check: f returned shape {out.data.shape}")
    if not np.isfinite(out.data):
        raise NumericsError("finite_diff_check: f returned a non-finite value")
    backward(out)
    del _TAPE.ops[start:]
    analytic = x.grad if x.grad is not None else np.zeros(x.shape)

    flat = x.data.reshape(-1)
    numeric = np.zeros(flat.shape)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(f(x).data)
            flat[i] = orig - h
            f_minus = float(f(x).data)
            flat[i] = orig
            numeric[i] = (f_plus - f_minus) / (2.0 * h)
    numeric = numeric.reshape(x.shape)
    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom))
