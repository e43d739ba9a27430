"""Dense float64 tensors with taped reverse-mode differentiation.

Everything else in the package is built on the handful of operations here.
Forward values are checked for NaN/Inf at creation so a numerical blow-up
surfaces at the op that produced it instead of three modules later.
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

Array = np.ndarray


class NumericsError(ValueError):
    """Malformed shapes or non-finite values in a tensor operation."""


class ZeroNormError(NumericsError):
    """A vector that must be normalized has zero length."""


_local = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = []
        _local.tapes = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Immutable dense float64 array, optionally participating in gradients.

    Data is never mutated after construction; training loops write updated
    values into fresh leaf tensors each step.
    """

    __slots__ = ("data", "grad_enabled")

    def __init__(self, data, grad_enabled: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericsError("tensor holds non-finite values")
        self.data = arr
        self.grad_enabled = bool(grad_enabled)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, grad_enabled={self.grad_enabled})"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, as_tensor(other))

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    # -- shape / reduction methods --------------------------------------
    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else self.data.shape[axis]
        return reduce_sum(self, axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, shape: tuple[int, ...]) -> "Tensor":
        return reshape(self, shape)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


class Tape:
    """Execution-ordered record of operations, replayed in reverse.

    Recording order is execution order, so inputs of every entry precede
    it and one reverse sweep visits each recorded op exactly once.
    """

    def __init__(self) -> None:
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _tape_stack().pop()
        return False

    def __len__(self) -> int:
        return len(self._entries)

    def _record(self, output: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> None:
        self._entries.append((output, inputs, backward))

    def gradients(self, loss: Tensor, sources: Sequence[Tensor]) -> list[Array]:
        """Gradient of a scalar loss w.r.t. each source, as plain arrays."""
        if loss.size != 1:
            raise NumericsError("gradients require a scalar loss")
        grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
        for output, inputs, backward in reversed(self._entries):
            gout = grads.pop(id(output), None)
            if gout is None:
                continue
            for inp, contrib in zip(inputs, backward(gout)):
                if contrib is None or not inp.grad_enabled:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + contrib
                else:
                    grads[key] = contrib
        return [grads.get(id(s), np.zeros_like(s.data)) for s in sources]


def _emit(out_data: Array, inputs: tuple[Tensor, ...], backward: Callable) -> Tensor:
    out = Tensor(out_data, grad_enabled=any(t.grad_enabled for t in inputs))
    tape = active_tape()
    if tape is not None and out.grad_enabled:
        tape._record(out, inputs, backward)
    return out


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise arithmetic ---------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(g: Array):
        return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))

    return _emit(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def backward(g: Array):
        return (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))

    return _emit(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g: Array):
        return (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))

    return _emit(a.data * b.data, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    def backward(g: Array):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return (ga, gb)

    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    return _emit(out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _emit(-a.data, (a,), lambda g: (-g,))


# -- linear algebra ------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise NumericsError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise NumericsError(f"matmul inner extents differ: {a.shape} x {b.shape}")

    def backward(g: Array):
        return (g @ b.data.T, a.data.T @ g)

    return _emit(a.data @ b.data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise NumericsError("transpose expects a 2-D tensor")
    return _emit(np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    orig = a.shape
    return _emit(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(parts)
    if not parts:
        raise NumericsError("concat of zero tensors")
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g: Array):
        return tuple(np.split(g, offsets, axis=axis))

    return _emit(np.concatenate([p.data for p in parts], axis=axis), parts, backward)


def take_row(a: Tensor, index: int) -> Tensor:
    if a.ndim != 2:
        raise NumericsError("take_row expects a 2-D tensor")
    if not 0 <= index < a.shape[0]:
        raise NumericsError(f"row index {index} out of range for {a.shape}")

    def backward(g: Array):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _emit(a.data[index].copy(), (a,), backward)


def take_rows(a: Tensor, indices: Sequence[int]) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    if a.ndim != 2:
        raise NumericsError("take_rows expects a 2-D tensor")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise NumericsError("row indices out of range")

    def backward(g: Array):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _emit(a.data[idx], (a,), backward)


# -- reductions -----------------------------------------------------------

def reduce_sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    def backward(g: Array):
        if axis is None:
            return (np.full(a.shape, float(g)),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _emit(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


# -- nonlinearities --------------------------------------------------------

def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _emit(y, (a,), lambda g: (g * (1.0 - y * y),))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = np.exp(a.data)
    return _emit(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(a.data)
    return _emit(y, (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    with np.errstate(invalid="ignore"):
        y = np.sqrt(a.data)
    return _emit(y, (a,), lambda g: (g / (2.0 * y),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _emit(a.data * mask, (a,), lambda g: (g * mask,))


# -- fused building blocks --------------------------------------------------

def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if x.shape[-1] != gain.shape[-1] or x.shape[-1] != bias.shape[-1]:
        raise NumericsError("layer_norm gain/bias must match the last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g: Array):
        lead = tuple(range(g.ndim - 1))
        ggain = (g * xhat).sum(axis=lead)
        gbias = g.sum(axis=lead)
        gx_hat = g * gain.data
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return (gx, ggain.reshape(gain.shape), gbias.reshape(bias.shape))

    return _emit(xhat * gain.data + bias.data, (x, gain, bias), backward)


def softmax_cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean negative log softmax probability of the true class.

    Stabilized by per-row max subtraction; `labels` is a plain integer
    sequence, not a tensor.
    """
    if logits.ndim != 2:
        raise NumericsError("logits must be (n, classes)")
    y = np.asarray(labels, dtype=np.intp)
    n, c = logits.shape
    if y.shape != (n,):
        raise NumericsError(f"expected {n} labels, got shape {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= c):
        raise NumericsError("label out of range")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    sum_ez = ez.sum(axis=1, keepdims=True)
    log_probs = z - np.log(sum_ez)
    loss = -log_probs[np.arange(n), y].mean()

    def backward(g: Array):
        p = ez / sum_ez
        p[np.arange(n), y] -= 1.0
        return (float(g) * p / n,)

    return _emit(np.float64(loss), (logits,), backward)


def cosine_similarity(u: Tensor, v: Tensor) -> Tensor:
    """u.v / (|u||v|) for two equal-length vectors."""
    if u.ndim != 1 or v.ndim != 1 or u.shape != v.shape:
        raise NumericsError(f"cosine_similarity expects equal-length vectors, got {u.shape}, {v.shape}")
    if not np.any(u.data) or not np.any(v.data):
        raise ZeroNormError("cosine similarity of a zero vector")
    num = (u * v).sum()
    den = sqrt((u * u).sum()) * sqrt((v * v).sum())
    return num / den


# -- gradient verification ----------------------------------------------------

def grad_check(
    f: Callable[..., Tensor],
    points: Sequence[Array] | Array,
    step: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    zero_floor: float = 1e-4,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    Coordinates where both gradients sit below `zero_floor` are compared on
    an absolute scale (divided by the floor). With `max_coords`, a random
    subset of coordinates per argument is probed instead of all of them.
    """
    if isinstance(points, np.ndarray) or np.isscalar(points):
        points = [points]
    base = [np.asarray(p, dtype=np.float64).copy() for p in points]
    leaves = [Tensor(p, grad_enabled=True) for p in base]

    with Tape() as tape:
        out = f(*leaves)
    if out.size != 1:
        raise NumericsError("grad_check needs a scalar-valued function")
    analytic = tape.gradients(out, leaves)

    if rng is None:
        rng = np.random.default_rng(0)

    worst = 0.0
    for i, arr in enumerate(base):
        flat_indices = np.arange(arr.size)
        if max_coords is not None and arr.size > max_coords:
            flat_indices = rng.choice(arr.size, size=max_coords, replace=False)
        for flat in flat_indices:
            idx = np.unravel_index(flat, arr.shape) if arr.shape else ()
            orig = arr[idx] if arr.shape else arr[()]

            def eval_at(value: float) -> float:
                probe = [b if j != i else _with_coord(b, idx, value) for j, b in enumerate(base)]
                return f(*[Tensor(p) for p in probe]).item()

            fp = eval_at(orig + step)
            fm = eval_at(orig - step)
            numeric = (fp - fm) / (2.0 * step)
            a = analytic[i][idx] if arr.shape else float(analytic[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), zero_floor)
            worst = max(worst, err)
    return worst


def _with_coord(arr: Array, idx, value: float) -> Array:
    out = arr.copy()
    if arr.shape:
        out[idx] = value
    else:
        out = np.asarray(value, dtype=np.float64)
    return out
