"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Nodes created while a :class:`Tape` is active are appended to it in
creation order, which is already a topological order of the graph, so the
backward pass is a single reverse sweep over the tape.

    >>> with Tape(seed=0) as tape:
    ...     x = Node(2.0, requires_grad=True)
    ...     y = x * 3.0 + x
    ...     tape.backward(y)
    >>> float(x.grad)
    4.0
"""

from __future__ import annotations

import numpy as np

_ACTIVE: list["Tape"] = []


class Tape:
    """Ordered record of differentiable operations plus the pass's RNG."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.ops: list[Node] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)

    def backward(self, out: "Node", grad=None) -> None:
        out._accum(np.ones_like(out.value) if grad is None else np.asarray(grad, float))
        for node in reversed(self.ops):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


class Node:
    __slots__ = ("value", "grad", "requires_grad", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self.name = name

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if not self.requires_grad:
            return
        if g.shape != self.value.shape:
            raise ValueError(f"gradient shape {g.shape} != value shape {self.value.shape}")
        if self.grad is None:
            self.grad = np.array(g, dtype=float, copy=True)
        else:
            self.grad += g

    def _accum_at(self, idx, g, basic: bool = True):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if basic:
            self.grad[idx] += g
        else:
            np.add.at(self.grad, idx, g)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def is_node(x) -> bool:
    return isinstance(x, Node)


def _make(value, parents, backward) -> Node:
    out = Node(value, requires_grad=any(p.requires_grad for p in parents))
    tape = active_tape()
    if out.requires_grad and tape is not None:
        out._backward = backward
        tape.ops.append(out)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ----------------------------------------------------------------------
# elementwise arithmetic
# ----------------------------------------------------------------------


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)

    def backward(g):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(_unbroadcast(g, b.shape))

    return _make(a.value + b.value, (a, b), backward)


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)

    def backward(g):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(_unbroadcast(-g, b.shape))

    return _make(a.value - b.value, (a, b), backward)


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.value, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.value, b.shape))

    return _make(a.value * b.value, (a, b), backward)


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    out_val = a.value / b.value

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.value, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * out_val / b.value, b.shape))

    return _make(out_val, (a, b), backward)


def power(a, p: float) -> Node:
    a = as_node(a)

    def backward(g):
        a._accum(g * p * a.value ** (p - 1))

    return _make(a.value**p, (a,), backward)


def _unary(a, value, dvalue) -> Node:
    a = as_node(a)

    def backward(g):
        a._accum(g * dvalue)

    return _make(value, (a,), backward)


def exp(a) -> Node:
    a = as_node(a)
    v = np.exp(a.value)
    return _unary(a, v, v)


def log(a) -> Node:
    a = as_node(a)
    return _unary(a, np.log(a.value), 1.0 / a.value)


def sqrt(a) -> Node:
    a = as_node(a)
    v = np.sqrt(a.value)
    return _unary(a, v, 0.5 / v)


def tanh(a) -> Node:
    a = as_node(a)
    v = np.tanh(a.value)
    return _unary(a, v, 1.0 - v * v)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a) -> Node:
    a = as_node(a)
    v = _sigmoid(a.value)
    return _unary(a, v, v * (1.0 - v))


def relu(a) -> Node:
    a = as_node(a)
    mask = a.value > 0
    return _unary(a, np.where(mask, a.value, 0.0), mask.astype(float))


def softplus(a) -> Node:
    """log(1 + exp(a)), computed without overflow."""
    a = as_node(a)
    x = a.value
    v = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _unary(a, v, _sigmoid(x))


# ----------------------------------------------------------------------
# reductions and shape plumbing
# ----------------------------------------------------------------------


def sum_(a, axis=None, keepdims=False) -> Node:
    a = as_node(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.shape))

    return _make(a.value.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims=False) -> Node:
    a = as_node(a)
    if axis is None:
        count = a.value.size
    else:
        axes = (axis,) if np.isscalar(axis) else axis
        count = int(np.prod([a.shape[i] for i in axes]))
    return sum_(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape) -> Node:
    a = as_node(a)

    def backward(g):
        a._accum(g.reshape(a.shape))

    return _make(a.value.reshape(shape), (a,), backward)


def transpose(a, axes=None) -> Node:
    a = as_node(a)
    inv = None if axes is None else np.argsort(axes)

    def backward(g):
        a._accum(np.transpose(g, inv))

    return _make(np.transpose(a.value, axes), (a,), backward)


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)


def getitem(a, idx) -> Node:
    a = as_node(a)
    basic = _is_basic_index(idx)

    def backward(g):
        a._accum_at(idx, g, basic)

    return _make(a.value[idx], (a,), backward)


def concat(nodes, axis=-1) -> Node:
    nodes = [as_node(n) for n in nodes]
    sizes = np.cumsum([n.shape[axis] for n in nodes])[:-1]

    def backward(g):
        for n, piece in zip(nodes, np.split(g, sizes, axis=axis)):
            n._accum(piece)

    return _make(np.concatenate([n.value for n in nodes], axis=axis), nodes, backward)


def stack(nodes, axis=0) -> Node:
    nodes = [as_node(n) for n in nodes]

    def backward(g):
        for i, n in enumerate(nodes):
            n._accum(np.take(g, i, axis=axis))

    return _make(np.stack([n.value for n in nodes], axis=axis), nodes, backward)


# ----------------------------------------------------------------------
# linear algebra
# ----------------------------------------------------------------------


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul expects operands with at least 2 axes")

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.shape))

    return _make(a.value @ b.value, (a, b), backward)


def einsum(spec: str, a, b) -> Node:
    """Two-operand einsum without repeated indices inside an operand."""
    a, b = as_node(a), as_node(b)
    ins, out = spec.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    for s, other in ((sa, sb), (sb, sa)):
        if any(ch not in out and ch not in other for ch in s):
            raise ValueError(f"index summed over a single operand in {spec!r}")

    def backward(g):
        if a.requires_grad:
            a._accum(np.einsum(f"{out},{sb}->{sa}", g, b.value, optimize=True))
        if b.requires_grad:
            b._accum(np.einsum(f"{out},{sa}->{sb}", g, a.value, optimize=True))

    return _make(np.einsum(spec, a.value, b.value, optimize=True), (a, b), backward)


def dense(x, w, b) -> Node:
    """Affine map x @ w + b for x of shape (..., D_in)."""
    x, w, b = as_node(x), as_node(w), as_node(b)
    if x.shape[-1] != w.shape[0] or w.shape[1:] != b.shape:
        raise ValueError(f"dense shape mismatch: x{x.shape} w{w.shape} b{b.shape}")
    return add(matmul(x, w), b)


def conv1d(x, kernels, stride: int = 1) -> Node:
    """Valid (unpadded) 1-D convolution.

    x: (B, T, C_in), kernels: (k, C_in, C_out) -> (B, floor((T - k)/stride) + 1, C_out)
    """
    x, kernels = as_node(x), as_node(kernels)
    B, T, cin = x.shape
    k, kcin, cout = kernels.shape
    if kcin != cin:
        raise ValueError(f"conv1d channel mismatch: input {cin}, kernel {kcin}")
    if T < k:
        raise ValueError(f"conv1d needs T >= k, got T={T}, k={k}")
    t_out = (T - k) // stride + 1
    span = stride * (t_out - 1) + 1
    xv, kv = x.value, kernels.value
    # im2col: (B, t_out, k * C_in) so the whole convolution is one GEMM
    cols = np.concatenate([xv[:, j : j + span : stride, :] for j in range(k)], axis=2)
    kflat = kv.reshape(k * cin, cout)
    out = cols @ kflat

    def backward(g):
        if kernels.requires_grad:
            kernels._accum((cols.reshape(-1, k * cin).T @ g.reshape(-1, cout)).reshape(kv.shape))
        if x.requires_grad:
            gcols = g @ kflat.T
            gx = np.zeros_like(xv)
            for j in range(k):
                gx[:, j : j + span : stride, :] += gcols[:, :, j * cin : (j + 1) * cin]
            x._accum(gx)

    return _make(out, (x, kernels), backward)


def maxpool1d(x, window: int) -> Node:
    """Non-overlapping max over time; ties resolve to the first index."""
    x = as_node(x)
    if window < 1:
        raise ValueError("maxpool window must be >= 1")
    B, T, C = x.shape
    t_out = T // window
    xr = x.value[:, : t_out * window].reshape(B, t_out, window, C)
    idx = np.argmax(xr, axis=2)[:, :, None, :]
    out = np.take_along_axis(xr, idx, axis=2)[:, :, 0, :]

    def backward(g):
        gr = np.zeros((B, t_out, window, C))
        np.put_along_axis(gr, idx, g[:, :, None, :], axis=2)
        gx = np.zeros_like(x.value)
        gx[:, : t_out * window] = gr.reshape(B, t_out * window, C)
        x._accum(gx)

    return _make(out, (x,), backward)


def lstm_step(x, state, params):
    """One LSTM cell update with a hand-written backward.

    params = (w_x: (D, 4H), w_h: (H, 4H), b: (4H,)); gate blocks ordered i, f, o, g.
    Returns (h', c').
    """
    h, c = state
    x, h, c = as_node(x), as_node(h), as_node(c)
    w_x, w_h, b = (as_node(p) for p in params)
    H = h.shape[-1]
    z = x.value @ w_x.value + h.value @ w_h.value + b.value
    gates = _sigmoid(z[:, : 3 * H])
    i, f, o = gates[:, :H], gates[:, H : 2 * H], gates[:, 2 * H :]
    gg = np.tanh(z[:, 3 * H :])
    c_new = f * c.value + i * gg
    tc = np.tanh(c_new)
    h_new = o * tc

    def backward(grad):
        dh, dc = grad[:, :H], grad[:, H:]
        dc = dc + dh * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [
                dc * gg * i * (1.0 - i),
                dc * c.value * f * (1.0 - f),
                dh * tc * o * (1.0 - o),
                dc * i * (1.0 - gg * gg),
            ],
            axis=1,
        )
        c._accum(dc * f)
        if x.requires_grad:
            x._accum(dz @ w_x.value.T)
        if h.requires_grad:
            h._accum(dz @ w_h.value.T)
        if w_x.requires_grad:
            w_x._accum(x.value.T @ dz)
        if w_h.requires_grad:
            w_h._accum(h.value.T @ dz)
        if b.requires_grad:
            b._accum(dz.sum(axis=0))

    hc = _make(np.concatenate([h_new, c_new], axis=1), (x, h, c, w_x, w_h, b), backward)
    return hc[:, :H], hc[:, H:]


def dropout(x, p: float, training: bool, rng: np.random.Generator | None = None) -> Node:
    """Inverted dropout: zero with probability p, rescale survivors by 1/(1-p)."""
    x = as_node(x)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout p must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        tape = active_tape()
        if tape is None:
            raise RuntimeError("dropout in training mode needs an rng or an active tape")
        rng = tape.rng
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, mask)


# ----------------------------------------------------------------------
# helpers
# ----------------------------------------------------------------------


def value_of(x):
    """Numpy payload of a Node, or the argument unchanged."""
    return x.value if isinstance(x, Node) else x


def numerical_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar f at x (x is perturbed in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return g
