"""Dense float64 tensors with define-by-run reverse-mode differentiation."""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Sequence

import numpy as np

from . import _kernels


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class GraphError(RuntimeError):
    """Misuse of the computation graph (non-scalar loss, double backward)."""


_grad_enabled = True
_mul_counter: list[int] | None = None


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def count_multiplies():
    """Count scalar multiplies executed by matmul/linear/conv/deconv.

    Yields a one-element list whose entry holds the running total.
    """
    global _mul_counter
    prev = _mul_counter
    box = [0]
    _mul_counter = box
    try:
        yield box
    finally:
        _mul_counter = prev


def _count(n: int) -> None:
    if _mul_counter is not None:
        _mul_counter[0] += int(n)


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op: str | None = None
        self._released = False

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_error(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{rg})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return mul(self, reciprocal(as_tensor(other)))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self) -> None:
        backward(self)


class Parameter(Tensor):
    """Trainable leaf tensor with a dotted module-path name."""

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _scalar_error(t: Tensor):
    raise GraphError(f"expected a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._op = op
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def _topo(root: Tensor) -> list[Tensor]:
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires_grad tensor reachable from ``loss``.

    Leaf gradients accumulate; the graph is released afterwards, so a second
    call without a fresh forward pass raises :class:`GraphError`.
    """
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._released:
        raise GraphError("graph already consumed by a previous backward(); re-run forward")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any tensor requiring grad")
    order = _topo(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.array(g, dtype=np.float64)
            else:
                node.grad += g
            continue
        node.grad = g
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg
        node._backward = None
        node._parents = ()
        node._released = True


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), bw, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return _make(out, (a,), lambda g: (-g * out * out,), "reciprocal")


def elementwise(op: str, a, b) -> Tensor:
    """Dispatch by name: ``add``, ``sub``, ``mul`` or ``scale`` (b a float)."""
    if op == "scale":
        return scale(as_tensor(a), b)
    try:
        return {"add": add, "sub": sub, "mul": mul}[op](a, b)
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None


def tabs(a: Tensor) -> Tensor:
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def tsqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def texp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


# ---------------------------------------------------------------------------
# shape ops and reductions
# ---------------------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(range(a.ndim))[::-1] if not axes else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def index(a: Tensor, idx) -> Tensor:
    def bw(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), bw, "index")


def take(a: Tensor, indices, axis: int) -> Tensor:
    """Gather slices along ``axis`` (repeated indices accumulate on backward)."""
    indices = np.asarray(indices, dtype=np.int64)
    axis = axis % a.ndim

    def bw(g):
        out = np.zeros_like(a.data)
        moved = np.moveaxis(out, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (out,)

    return _make(np.take(a.data, indices, axis=axis), (a,), bw, "take")


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[i] for i in axes]))
    return scale(tsum(a, axis, keepdims), 1.0 / n)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        parts = np.moveaxis(g, axis, 0)
        return tuple(parts[i] for i in range(len(tensors)))

    return _make(out, tensors, bw, "stack")


def norm(a: Tensor, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; the gradient at a zero vector is zero."""
    n = np.sqrt(np.sum(a.data * a.data, axis=axis))

    def bw(g):
        ne = np.expand_dims(n, axis)
        safe = np.where(ne > 0, ne, 1.0)
        return (np.where(ne > 0, a.data / safe, 0.0) * np.expand_dims(g, axis),)

    return _make(n, (a,), bw, "norm")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ in {a.shape} x {b.shape}")
    try:
        lead = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None
    m, k = a.shape[-2:]
    n = b.shape[-1]
    _count(int(np.prod(lead, dtype=np.int64)) * m * k * n)

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the trailing axis of ``x``."""
    x = as_tensor(x)
    d_in, d_out = w.shape
    if x.shape[-1] != d_in:
        raise DimensionError(f"linear: input {x.shape} does not match weight {w.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, d_in)
    _count(x2.shape[0] * d_in * d_out)
    out = x2 @ w.data
    if b is not None:
        out = out + b.data

    def bw(g):
        g2 = g.reshape(-1, d_out)
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2
        gb = g2.sum(axis=0) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _make(out.reshape(lead + (d_out,)), parents, bw, "linear")


# ---------------------------------------------------------------------------
# nonlinearities and normalisation
# ---------------------------------------------------------------------------


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis (max-subtracted)."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - np.sum(g * y, axis=-1, keepdims=True)),)

    return _make(y, (x,), bw, "softmax")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    v = x.data
    v2 = v * v
    inner = _GELU_C * v * (1.0 + 0.044715 * v2)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)

    def bw(g):
        d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * v2)
        return (g * d,)

    return _make(out, (x,), bw, "gelu")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    v = x.data
    mu = v.mean(axis=-1, keepdims=True)
    xc = v - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data

    def bw(g):
        gx_hat = g * gamma.data
        gx = rstd * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * np.mean(gx_hat * xhat, axis=-1, keepdims=True)
        )
        red = tuple(range(v.ndim - 1))
        return gx, np.sum(g * xhat, axis=red), np.sum(g, axis=red)

    return _make(out, (x, gamma, beta), bw, "layer_norm")


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; ``rate == 0`` (the default everywhere) is the identity."""
    if rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout with rate > 0 needs an explicit rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# ---------------------------------------------------------------------------
# temporal convolutions
# ---------------------------------------------------------------------------


def _as_3d(x: Tensor, c: int, op: str):
    if x.ndim < 2 or x.shape[-2] != c:
        raise DimensionError(f"{op}: input {x.shape} does not have {c} channels on axis -2")
    return x.data.reshape((-1,) + x.shape[-2:])


def conv1d(x: Tensor, w: Tensor, stride: int = 1, bias: Tensor | None = None) -> Tensor:
    """Valid (unpadded) convolution of ``x[..., c_in, t]`` with ``w[c_out, c_in, k]``."""
    c_out, c_in, k = w.shape
    x3 = _as_3d(x, c_in, "conv1d")
    t = x3.shape[2]
    if t < k:
        raise DimensionError(f"conv1d: sequence length {t} shorter than kernel {k} (input {x.shape}, weight {w.shape})")
    t_out = (t - k) // stride + 1
    _count(x3.shape[0] * c_out * c_in * k * t_out)
    out = _kernels.get("conv1d_forward")(np.ascontiguousarray(x3), w.data, stride)
    if bias is not None:
        out = out + bias.data[:, None]
    lead = x.shape[:-2]

    def bw(g):
        g3 = np.ascontiguousarray(g.reshape((-1, c_out, t_out)))
        gx, gw = _kernels.get("conv1d_backward")(np.ascontiguousarray(x3), w.data, g3, stride)
        grads = [gx.reshape(x.shape), gw]
        if bias is not None:
            grads.append(g3.sum(axis=(0, 2)))
        return tuple(grads)

    parents = (x, w) if bias is None else (x, w, bias)
    return _make(out.reshape(lead + (c_out, t_out)), parents, bw, "conv1d")


def deconv1d(x: Tensor, w: Tensor, stride: int = 1, bias: Tensor | None = None) -> Tensor:
    """Transposed convolution of ``x[..., c_in, t]`` with ``w[c_in, c_out, k]``.

    Output length is ``(t - 1) * stride + k``; this is the exact adjoint of
    :func:`conv1d` with the same weight array.
    """
    c_in, c_out, k = w.shape
    x3 = _as_3d(x, c_in, "deconv1d")
    t = x3.shape[2]
    t_out = (t - 1) * stride + k
    _count(x3.shape[0] * c_in * c_out * k * t)
    out = _kernels.get("deconv1d_forward")(np.ascontiguousarray(x3), w.data, stride)
    if bias is not None:
        out = out + bias.data[:, None]
    lead = x.shape[:-2]

    def bw(g):
        g3 = np.ascontiguousarray(g.reshape((-1, c_out, t_out)))
        gx, gw = _kernels.get("deconv1d_backward")(np.ascontiguousarray(x3), w.data, g3, stride)
        grads = [gx.reshape(x.shape), gw]
        if bias is not None:
            grads.append(g3.sum(axis=(0, 2)))
        return tuple(grads)

    parents = (x, w) if bias is None else (x, w, bias)
    return _make(out.reshape(lead + (c_out, t_out)), parents, bw, "deconv1d")


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def numerical_grad(f: Callable[[], Tensor], t: Tensor, h: float = 1e-5, entries=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. entries of ``t`` (all by default; others stay 0)."""
    if not t.data.flags.c_contiguous:
        t.data = np.ascontiguousarray(t.data)  # probing writes through a flat view
    out = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = out.reshape(-1)
    with no_grad():
        for i in range(flat.size) if entries is None else entries:
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
    return out


def grad_check(
    f: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    floor: float = 1e-6,
    max_entries: int | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` takes no arguments and closes over ``inputs`` (mutated in place
    while probing).  Relative error is measured per input as
    ``max|analytic - numeric| / max(max|analytic|, max|numeric|, floor)``;
    the floor keeps gradients that are exactly zero in theory (a key bias
    under softmax, say) from turning rounding noise into a relative error of 1.
    With ``max_entries`` each input is probed at its largest analytic entry
    plus a fixed random sample, up to that many entries.
    """
    for t in inputs:
        t.grad = None
    loss = f()
    backward(loss)
    worst = 0.0
    rng = np.random.default_rng(0)
    for t in inputs:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        idx = None
        if max_entries is not None and t.size > max_entries:
            top = int(np.argmax(np.abs(analytic)))
            idx = np.unique(np.concatenate([[top], rng.choice(t.size, max_entries - 1, replace=False)]))
        numeric = numerical_grad(f, t, h, idx)
        a = analytic.reshape(-1) if idx is None else analytic.reshape(-1)[idx]
        n = numeric.reshape(-1) if idx is None else numeric.reshape(-1)[idx]
        scale_ = max(np.abs(a).max(), np.abs(n).max(), floor)
        worst = max(worst, float(np.abs(a - n).max() / scale_))
    return worst
