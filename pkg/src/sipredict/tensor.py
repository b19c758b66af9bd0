"""Dense tensors with reverse-mode automatic differentiation.

Tensors wrap a numpy array plus an optional gradient buffer. Operations record
a backward rule and their input tensors on the output; calling ``backward()``
on a scalar result walks the recorded tape once in reverse topological order
and accumulates gradients into the leaves that were created with
``requires_grad=True``. The tape is freed after the walk.

Precision is process-global: training runs in 32-bit by default, gradient
checking switches to 64-bit via ``using_dtype``.
"""

from __future__ import annotations

import contextlib
import math
import threading
from dataclasses import dataclass

import numpy as np
from scipy.special import erf, expit

from .errors import ContractError, DimensionError, EmptyPoolError, NumericError

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class _ThreadState(threading.local):
    # per-thread so parallel folds cannot flip each other's recording mode
    def __init__(self):
        self.default_dtype = np.dtype(np.float32)
        self.grad_enabled = True


_state = _ThreadState()


def get_default_dtype() -> np.dtype:
    return _state.default_dtype


def set_default_dtype(dtype) -> None:
    dt = np.dtype(dtype)
    if dt not in _FLOAT_DTYPES:
        raise ContractError(f"default dtype must be float32 or float64, got {dt}")
    _state.default_dtype = dt


@contextlib.contextmanager
def using_dtype(dtype):
    """Temporarily switch the default tensor precision."""
    prev = _state.default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference fast path)."""
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    """A dense real array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(_state.default_dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        """Run reverse-mode differentiation from this tensor.

        Without an explicit seed gradient the tensor must be scalar-sized.
        The tape feeding this tensor is freed afterwards.
        """
        if grad is None:
            if self.data.size != 1:
                raise ContractError(
                    f"backward() without a seed gradient requires a scalar, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise DimensionError(f"seed gradient shape {grad.shape} != tensor shape {self.shape}")
        Graph(self).run(grad)

    # -- operator sugar -------------------------------------------------

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other) -> "Tensor":
        return scale(self, float(other))

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def sum(self) -> "Tensor":
        return sum_all(self)

    def transpose(self) -> "Tensor":
        return transpose(self)

    def slice(self, axis: int, start: int, stop: int) -> "Tensor":
        return slice_along(self, axis, start, stop)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class Graph:
    """Topologically ordered tape of the nodes feeding one output tensor.

    Construction collects every reachable recorded node with inputs before
    consumers; ``run`` visits each node exactly once in reverse order, then
    drops the recorded rules so buffers can be reclaimed.
    """

    def __init__(self, root: Tensor):
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
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.nodes = order

    def run(self, seed_grad: np.ndarray) -> None:
        pending: dict[int, np.ndarray] = {id(self.nodes[-1]): seed_grad}
        for node in reversed(self.nodes):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg
            node._backward = None
            node._parents = ()


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad and _state.grad_enabled:
        out._parents = parents
        out._backward = backward
    return out


# -- arithmetic ----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; the only broadcast allowed is a row-vector bias."""
    if a.shape == b.shape:
        def backward(g):
            return g, g
        return _node(a.data + b.data, (a, b), backward)
    if _is_row_bias(a.shape, b.shape):
        def backward(g):
            return g, g.sum(axis=0).reshape(b.shape)
        return _node(a.data + b.data.reshape(1, -1), (a, b), backward)
    raise DimensionError(f"add shapes {a.shape} and {b.shape} are incompatible")


def _is_row_bias(a_shape, b_shape) -> bool:
    if len(a_shape) != 2:
        return False
    d = a_shape[1]
    return b_shape == (d,) or b_shape == (1, d)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"sub shapes {a.shape} and {b.shape} differ")

    def backward(g):
        return g, -g

    return _node(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul shapes {a.shape} and {b.shape} differ")

    def backward(g):
        return g * b.data, g * a.data

    return _node(a.data * b.data, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    def backward(g):
        return (g * s,)

    return _node(a.data * s, (a,), backward)


def shift(a: Tensor, c: float) -> Tensor:
    """Add a python constant elementwise."""

    def backward(g):
        return (g,)

    return _node(a.data + c, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _node(a.data @ b.data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose needs a 2-D tensor, got {a.shape}")

    def backward(g):
        return (g.T.copy(),)

    return _node(a.data.T.copy(), (a,), backward)


def slice_along(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    if not 0 <= axis < a.data.ndim:
        raise DimensionError(f"slice axis {axis} out of range for shape {a.shape}")
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _node(a.data[index].copy(), (a,), backward)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ContractError("concat of zero tensors")
    ndim = tensors[0].data.ndim
    for t in tensors[1:]:
        if t.data.ndim != ndim:
            raise DimensionError(f"concat rank mismatch: {tensors[0].shape} vs {t.shape}")
    sizes = [t.shape[axis] for t in tensors]

    def backward(g):
        out, offset = [], 0
        for size in sizes:
            index = [slice(None)] * ndim
            index[axis] = slice(offset, offset + size)
            out.append(g[tuple(index)].copy())
            offset += size
        return out

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def sum_all(a: Tensor) -> Tensor:
    def backward(g):
        return (np.full_like(a.data, float(g.reshape(()))),)

    return _node(np.asarray(a.data.sum(), dtype=a.data.dtype), (a,), backward)


# -- nonlinearities -------------------------------------------------------

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def sigmoid(a: Tensor) -> Tensor:
    y = expit(a.data)

    def backward(g):
        return (g * y * (1.0 - y),)

    return _node(y, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - y * y),)

    return _node(y, (a,), backward)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) gelu."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))

    def backward(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        return (g * (cdf + x * pdf),)

    return _node(x * cdf, (a,), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along one axis; rows sum to 1."""
    if not np.all(np.isfinite(a.data)):
        raise NumericError("softmax input contains non-finite values")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _node(y, (a,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize each trailing-axis vector to mean 0 / variance 1, then affine.

    Zero-variance vectors come out as the bias (eps keeps the division finite).
    """
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm gain/bias shapes {gain.shape}/{bias.shape} do not match feature dim {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        dxhat = g * gain.data
        # d/dx of (x - mu) * inv_std with mu, var both functions of x
        dvar = (dxhat * centered).sum(axis=-1, keepdims=True) * (-0.5) * inv_std**3
        dmu = -(dxhat.sum(axis=-1, keepdims=True)) * inv_std + dvar * (-2.0) * centered.mean(
            axis=-1, keepdims=True
        )
        dx = dxhat * inv_std + dvar * 2.0 * centered / d + dmu / d
        return dx, dgain, dbias

    return _node(xhat * gain.data + bias.data, (x, gain, bias), backward)


def masked_mean(x: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over the unmasked rows of a t x d tensor, producing 1 x d."""
    mask = np.asarray(mask, dtype=bool)
    if x.data.ndim != 2 or mask.shape != (x.shape[0],):
        raise DimensionError(f"masked_mean needs t x d input and t mask, got {x.shape} and {mask.shape}")
    kept = int(mask.sum())
    if kept == 0:
        raise EmptyPoolError("masked_mean over an all-false mask")

    def backward(g):
        dx = np.zeros_like(x.data)
        dx[mask] = g / kept
        return (dx,)

    return _node(x.data[mask].mean(axis=0, keepdims=True), (x,), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when rate is 0 or no rng is supplied."""
    if rate < 0.0 or rate >= 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)

    def backward(g):
        return (g * keep,)

    return _node(x.data * keep, (x,), backward)


# -- gradient checking ----------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_index: tuple[int, ...]
    n_checked: int
    h: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def _rel_err(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-4)
    return np.abs(a - n) / denom


def gradient_check(f, x: Tensor, h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare the autodiff gradient of a scalar function against central differences.

    Requires 64-bit inputs; perturbs ``x.data`` in place and restores it.
    """
    if x.data.dtype != np.float64:
        raise ContractError("gradient_check requires a float64 tensor")
    if not x.requires_grad:
        raise ContractError("gradient_check input must have requires_grad=True")
    x.zero_grad()
    y = f(x)
    if y.data.size != 1:
        raise ContractError(f"gradient_check needs a scalar-valued function, got shape {y.shape}")
    y.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(x).item()
        flat[i] = orig - h
        down = f(x).item()
        flat[i] = orig
        numeric.reshape(-1)[i] = (up - down) / (2.0 * h)

    err = _rel_err(analytic, numeric)
    worst = np.unravel_index(int(err.argmax()), err.shape) if err.size else ()
    return GradCheckReport(
        max_rel_err=float(err.max()) if err.size else 0.0,
        worst_index=tuple(int(i) for i in worst),
        n_checked=int(err.size),
        h=h,
        tol=tol,
    )


def gradient_check_params(forward, params: dict[str, Tensor], h: float = 1e-5, tol: float = 1e-4) -> dict[str, GradCheckReport]:
    """Gradient-check a scalar forward function against every named parameter.

    One backward pass supplies the autodiff gradients; finite differences
    perturb each parameter element in place. All parameters must be float64.
    """
    for name, p in params.items():
        if p.data.dtype != np.float64:
            raise ContractError(f"parameter {name} must be float64 for gradient checking")
        p.zero_grad()
    y = forward()
    if y.data.size != 1:
        raise ContractError(f"gradient_check_params needs a scalar forward, got shape {y.shape}")
    y.backward()

    reports = {}
    for name, p in params.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = forward().item()
            flat[i] = orig - h
            down = forward().item()
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2.0 * h)
        err = _rel_err(analytic, numeric)
        worst = np.unravel_index(int(err.argmax()), err.shape) if err.size else ()
        reports[name] = GradCheckReport(
            max_rel_err=float(err.max()) if err.size else 0.0,
            worst_index=tuple(int(i) for i in worst),
            n_checked=int(err.size),
            h=h,
            tol=tol,
        )
    return reports
