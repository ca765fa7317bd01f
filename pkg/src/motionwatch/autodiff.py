"""Minimal dense-tensor reverse-mode automatic differentiation.

Tensors wrap float64 numpy arrays and record a backward closure per
operation; `Tensor.backward()` walks the graph in reverse topological
order and accumulates gradients.  The op set is exactly what the flow
prediction network needs: elementwise arithmetic, matmul, stride-1
convolution (im2col), 2x average pooling, nearest-neighbour upsampling,
ReLU, channel concatenation, spatial broadcast/reduction, exp, and sum.

Gradient tracking can be suspended with :func:`no_grad` for inference.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad and _grad_enabled
        self._backward: Callable[[np.ndarray], None] | None = None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, mul_scalar(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), mul_scalar(self, -1.0))

    def __mul__(self, other):
        if np.isscalar(other):
            return mul_scalar(self, float(other))
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    if tensor.grad is None:
        tensor.grad = np.array(grad)
    else:
        tensor.grad += grad


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- primitive operations ----------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(grad):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(grad, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(grad, b.shape))

    return _make(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(grad):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(grad * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(grad * a.data, b.shape))

    return _make(data, (a, b), backward)


def mul_scalar(a: Tensor, s: float) -> Tensor:
    data = a.data * s

    def backward(grad):
        if a.requires_grad:
            _accumulate(a, grad * s)

    return _make(data, (a,), backward)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def backward(grad):
        if a.requires_grad:
            _accumulate(a, grad * data)

    return _make(data, (a,), backward)


def square(a: Tensor) -> Tensor:
    data = a.data * a.data

    def backward(grad):
        if a.requires_grad:
            _accumulate(a, grad * 2.0 * a.data)

    return _make(data, (a,), backward)


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0
    data = np.where(keep, a.data, 0.0)

    def backward(grad):
        if a.requires_grad:
            _accumulate(a, grad * keep)

    return _make(data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data @ b.data

    def backward(grad):
        if a.requires_grad:
            _accumulate(a, grad @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ grad)

    return _make(data, (a, b), backward)


def sum_all(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum())

    def backward(grad):
        if a.requires_grad:
            _accumulate(a, np.broadcast_to(grad, a.shape).astype(np.float64))

    return _make(data, (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    return mul_scalar(sum_all(a), 1.0 / a.size)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = a.data.reshape(shape)

    def backward(grad):
        if a.requires_grad:
            _accumulate(a, grad.reshape(a.shape))

    return _make(data, (a,), backward)


def concat(tensors: Iterable[Tensor], axis: int = 1) -> Tensor:
    parts = list(tensors)
    data = np.concatenate([t.data for t in parts], axis=axis)
    sizes = [t.shape[axis] for t in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(grad):
        for t, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                slicer = [slice(None)] * grad.ndim
                slicer[axis] = slice(start, stop)
                _accumulate(t, grad[tuple(slicer)])

    return _make(data, tuple(parts), backward)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, padding: int = 0) -> Tensor:
    """Stride-1 2D convolution on NCHW tensors; weight is (C_out, C_in, k, k)."""
    n, c_in, h, wdt = x.shape
    c_out, c_in_w, kh, kw = w.shape
    if c_in != c_in_w or kh != kw:
        raise ValueError("weight shape incompatible with input")
    k = kh
    out_h = h + 2 * padding - k + 1
    out_w = wdt + 2 * padding - k + 1
    if out_h <= 0 or out_w <= 0:
        raise ValueError("kernel larger than padded input")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    # (n, c_in, out_h, out_w, k, k) -> (n, c_in*k*k, out_h*out_w)
    cols = windows.transpose(0, 1, 4, 5, 2, 3).reshape(n, c_in * k * k, out_h * out_w)
    w_mat = w.data.reshape(c_out, c_in * k * k)
    out = np.matmul(w_mat, cols).reshape(n, c_out, out_h, out_w)
    if b is not None:
        out = out + b.data.reshape(1, c_out, 1, 1)

    def backward(grad):
        gout = grad.reshape(n, c_out, out_h * out_w)
        if w.requires_grad:
            gw = np.einsum("nol,ncl->oc", gout, cols).reshape(w.shape)
            _accumulate(w, gw)
        if b is not None and b.requires_grad:
            _accumulate(b, grad.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gcols = np.matmul(w_mat.T, gout)  # (n, c_in*k*k, L)
            gcols = gcols.reshape(n, c_in, k, k, out_h, out_w)
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + out_h, j:j + out_w] += gcols[:, :, i, j]
            if padding:
                gx = gxp[:, :, padding:-padding, padding:-padding]
            else:
                gx = gxp
            _accumulate(x, gx)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, backward)


def avg_pool2(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError("avg_pool2 needs even spatial dimensions")
    data = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(grad):
        if x.requires_grad:
            g = np.repeat(np.repeat(grad, 2, axis=2), 2, axis=3) * 0.25
            _accumulate(x, g)

    return _make(data, (x,), backward)


def upsample_nearest2(x: Tensor) -> Tensor:
    data = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward(grad):
        if x.requires_grad:
            n, c, h, w = x.shape
            g = grad.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))
            _accumulate(x, g)

    return _make(data, (x,), backward)


def global_mean_spatial(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C) mean over the spatial axes."""
    n, c, h, w = x.shape
    data = x.data.mean(axis=(2, 3))

    def backward(grad):
        if x.requires_grad:
            g = np.broadcast_to(grad[:, :, None, None] / (h * w), x.shape)
            _accumulate(x, g.copy())

    return _make(data, (x,), backward)


def broadcast_spatial(z: Tensor, height: int, width: int) -> Tensor:
    """(N, D) -> (N, D, H, W) by spatial tiling."""
    n, d = z.shape
    data = np.broadcast_to(z.data[:, :, None, None], (n, d, height, width)).copy()

    def backward(grad):
        if z.requires_grad:
            _accumulate(z, grad.sum(axis=(2, 3)))

    return _make(data, (z,), backward)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error over all elements."""
    if a.shape != b.shape:
        raise ValueError(f"mse shapes differ: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    data = np.asarray((diff * diff).mean())
    scale = 2.0 / a.size

    def backward(grad):
        g = grad * scale * diff
        if a.requires_grad:
            _accumulate(a, g)
        if b.requires_grad:
            _accumulate(b, -g)

    return _make(data, (a, b), backward)


def gradcheck(
    fn: Callable[[list[Tensor]], Tensor],
    inputs: list[Tensor],
    eps: float = 1e-5,
    rtol: float = 1e-3,
    atol: float = 1e-5,
) -> bool:
    """Compare analytic gradients of a scalar function against central
    finite differences; raises AssertionError on mismatch."""
    for t in inputs:
        t.zero_grad()
        t.data = np.ascontiguousarray(t.data)
    out = fn(inputs)
    out.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    for idx, t in enumerate(inputs):
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        with no_grad():
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = fn(inputs).item()
                flat[i] = orig - eps
                down = fn(inputs).item()
                flat[i] = orig
                num_flat[i] = (up - down) / (2.0 * eps)
        denom = np.maximum(np.abs(numeric), np.abs(analytic[idx]))
        err = np.abs(numeric - analytic[idx])
        ok = err <= atol + rtol * denom
        if not ok.all():
            worst = float(err.max())
            raise AssertionError(
                f"gradient mismatch on input {idx}: max abs err {worst:.3e}"
            )
    return True
