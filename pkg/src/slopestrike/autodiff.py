"""Reverse-mode automatic differentiation over dense float64 tensors.

Tensors wrap numpy arrays; every operation that touches a gradient-carrying
input records a node so that ``backward`` can sweep the graph in reverse
topological order.  A restricted subset of operations additionally supports
building the backward pass itself as a differentiable graph
(``create_graph=True``), which is what the Wasserstein gradient penalty needs.

Subgradient conventions (fixed for deterministic replay):
  * ``sign``           -> derivative 0 everywhere
  * ``clamp``          -> pass-through inside [lo, hi], bounds count as inside
  * ``maxpool1d``      -> gradient routed to the first (lowest-index) maximum
  * ``sqrt`` at 0      -> derivative 0 (stabilising convention)
  * ``abs`` at 0       -> derivative 0
  * ``leaky_relu``     -> second derivative treated as 0 almost everywhere
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np


class AutodiffError(Exception):
    """Base error for the autodiff engine."""


class ShapeError(AutodiffError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(AutodiffError):
    """Operation evaluated outside its mathematical domain."""


class GraphError(AutodiffError):
    """Graph contract violation (non-scalar root, reuse after backward, ...)."""


class SecondOrderError(AutodiffError):
    """An operation outside the second-order-capable subset was differentiated twice."""


_STATE = threading.local()


def _recording() -> bool:
    return getattr(_STATE, "recording", True)


@contextmanager
def no_record():
    """Disable graph recording in the enclosed block (attack update steps etc.)."""
    prev = _recording()
    _STATE.recording = False
    try:
        yield
    finally:
        _STATE.recording = prev


@contextmanager
def _record(enabled: bool):
    prev = _recording()
    _STATE.recording = enabled
    try:
        yield
    finally:
        _STATE.recording = prev


class Node:
    """One recorded operation: kind, parent tensors and the vector-Jacobian product."""

    __slots__ = ("kind", "parents", "vjp", "second_order", "freed")

    def __init__(self, kind, parents, vjp, second_order):
        self.kind = kind
        self.parents = parents
        self.vjp = vjp
        self.second_order = second_order
        self.freed = False


class Tensor:
    """Dense float64 tensor with an optional gradient buffer and graph node."""

    __slots__ = ("data", "requires_grad", "grad", "node", "_retain")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self._retain = False

    # -- bookkeeping ------------------------------------------------------

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
        if self.data.size != 1:
            raise GraphError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def requires_grad_(self, flag: bool = True) -> "Tensor":
        self.requires_grad = flag
        return self

    def retain_grad(self) -> "Tensor":
        """Keep the gradient of this (possibly interior) tensor during backward."""
        self._retain = True
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, key):
        return tslice(self, key)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# node construction
# ---------------------------------------------------------------------------

# Operations whose vector-Jacobian products may themselves be recorded and
# differentiated once more (the gradient-penalty subset), plus the structural
# ops their vjps are built from.
_SECOND_ORDER_KINDS = frozenset(
    {
        "add", "sub", "mul", "matmul", "affine", "tanh", "sigmoid",
        "leaky_relu", "sum", "mean", "sqrt", "pow",
        "expand", "reshape", "transpose",
    }
)


def _make(kind, out_data, parents, vjp):
    out = Tensor(out_data)
    if _recording() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = Node(kind, tuple(parents), vjp, kind in _SECOND_ORDER_KINDS)
    return out


def _check_elementwise(kind, a: Tensor, b: Tensor) -> None:
    # Broadcasting is restricted to scalar-tensor and trailing-dimension
    # expansion; anything richer must reshape explicitly.
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    small, big = (a, b) if a.ndim < b.ndim else (b, a)
    if small.ndim < big.ndim and big.shape[big.ndim - small.ndim:] == small.shape:
        return
    raise ShapeError(f"{kind}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Sum a gradient back down to the shape of a broadcast operand."""
    while g.ndim > len(shape):
        g = tsum(g, axis=0)
    if g.shape != shape:  # scalar operand
        g = tsum(g, None)
        if len(shape):
            g = reshape(g, shape)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("add", a, b)

    def vjp(g):
        return (_reduce_to(g, a.shape), _reduce_to(g, b.shape))

    return _make("add", a.data + b.data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("sub", a, b)

    def vjp(g):
        return (_reduce_to(g, a.shape), _reduce_to(mul(g, -1.0), b.shape))

    return _make("sub", a.data - b.data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("mul", a, b)

    def vjp(g):
        return (_reduce_to(mul(g, b), a.shape), _reduce_to(mul(g, a), b.shape))

    return _make("mul", a.data * b.data, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("div", a, b)
    if np.any(b.data == 0.0):
        raise DomainError("div: division by zero")

    def vjp(g):
        ga = div(g, b)
        gb = mul(mul(g, -1.0), div(a, mul(b, b)))
        return (_reduce_to(ga, a.shape), _reduce_to(gb, b.shape))

    return _make("div", a.data / b.data, (a, b), vjp)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    if p != int(p) and np.any(a.data < 0.0):
        raise DomainError(f"pow: negative base with non-integer exponent {p}")

    def vjp(g):
        return (mul(g, mul(p, power(a, p - 1.0))),)

    return _make("pow", a.data ** p, (a,), vjp)


def texp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def vjp(g, _y=out_data):
        return (mul(g, Tensor(_y)),)

    return _make("exp", out_data, (a,), vjp)


def tlog(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log: argument must be strictly positive")

    def vjp(g):
        return (div(g, a),)

    return _make("log", np.log(a.data), (a,), vjp)


def tsqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0.0):
        raise DomainError("sqrt: negative argument")
    out_data = np.sqrt(a.data)
    out = Tensor(out_data)
    if _recording() and a.requires_grad:
        # derivative 0 at exactly 0: shift those entries so pow stays finite,
        # then mask them out with a constant factor
        zero = out_data == 0.0
        shift = Tensor(np.where(zero, 1.0, 0.0))
        mask = Tensor(np.where(zero, 0.0, 0.5))

        def vjp(g):
            safe = add(out, shift)
            return (mul(mul(g, mask), power(safe, -1.0)),)

        out.requires_grad = True
        out.node = Node("sqrt", (a,), vjp, True)
    return out


def tabs(a) -> Tensor:
    a = as_tensor(a)
    s = np.sign(a.data)

    def vjp(g):
        return (mul(g, Tensor(s)),)

    return _make("abs", np.abs(a.data), (a,), vjp)


def sign(a) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        return (Tensor(np.zeros(a.shape)),)

    return _make("sign", np.sign(a.data), (a,), vjp)


def clamp(a, lo=None, hi=None) -> Tensor:
    a = as_tensor(a)
    lo_arr = None if lo is None else np.asarray(lo, dtype=np.float64)
    hi_arr = None if hi is None else np.asarray(hi, dtype=np.float64)
    out_data = np.clip(a.data, lo_arr, hi_arr)
    inside = np.ones(a.shape)
    if lo_arr is not None:
        inside = inside * (a.data >= lo_arr)
    if hi_arr is not None:
        inside = inside * (a.data <= hi_arr)

    def vjp(g):
        return (mul(g, Tensor(inside)),)

    return _make("clamp", out_data, (a,), vjp)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = (a.data > 0.0).astype(np.float64)

    def vjp(g):
        return (mul(g, Tensor(mask)),)

    return _make("relu", a.data * mask, (a,), vjp)


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = as_tensor(a)
    mask = np.where(a.data >= 0.0, 1.0, slope)

    def vjp(g):
        return (mul(g, Tensor(mask)),)

    return _make("leaky_relu", a.data * mask, (a,), vjp)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)
    out = Tensor(out_data)
    if _recording() and a.requires_grad:
        def vjp(g):
            return (mul(g, sub(1.0, mul(out, out))),)

        out.requires_grad = True
        out.node = Node("tanh", (a,), vjp, True)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(out_data)
    if _recording() and a.requires_grad:
        def vjp(g):
            return (mul(g, mul(out, sub(1.0, out))),)

        out.requires_grad = True
        out.node = Node("sigmoid", (a,), vjp, True)
    return out


# ---------------------------------------------------------------------------
# reductions and shape plumbing
# ---------------------------------------------------------------------------

def tsum(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        return (expand(g, shape, axis),)

    return _make("sum", np.sum(a.data, axis=axis), (a,), vjp)


def tmean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    n = a.size if axis is None else shape[axis]
    if n == 0:
        raise ShapeError("mean: empty tensor")

    def vjp(g):
        return (mul(expand(g, shape, axis), 1.0 / n),)

    return _make("mean", np.mean(a.data, axis=axis), (a,), vjp)


def expand(a, shape: tuple[int, ...], axis: int | None = None) -> Tensor:
    """Adjoint of ``sum``: replicate a reduced tensor back to ``shape``."""
    a = as_tensor(a)
    if axis is None:
        out_data = np.broadcast_to(a.data, shape).copy()
    else:
        out_data = np.broadcast_to(np.expand_dims(a.data, axis), shape).copy()

    def vjp(g):
        return (tsum(g, axis),)

    return _make("expand", out_data, (a,), vjp)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    old = a.shape

    def vjp(g):
        return (reshape(g, old),)

    try:
        out_data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {old} as {shape}") from exc
    return _make("reshape", out_data, (a,), vjp)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D, got {a.shape}")

    def vjp(g):
        return (transpose(g),)

    return _make("transpose", a.data.T.copy(), (a,), vjp)


def tslice(a, key) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out_data = a.data[key]

    def vjp(g):
        buf = np.zeros(shape)
        np.add.at(buf, key, g.data)
        return (Tensor(buf),)

    return _make("slice", np.array(out_data, dtype=np.float64), (a,), vjp)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no inputs")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        grads = []
        for i in range(len(tensors)):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            grads.append(tslice(g, tuple(idx)))
        return tuple(grads)

    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    return _make("concat", out_data, tuple(tensors), vjp)


def sort_last(a) -> Tensor:
    """Sort along the last axis; gradients route back through the permutation."""
    a = as_tensor(a)
    order = np.argsort(a.data, axis=-1, kind="stable")
    out_data = np.take_along_axis(a.data, order, axis=-1)

    def vjp(g):
        buf = np.empty(a.shape)
        np.put_along_axis(buf, order, g.data, axis=-1)
        return (Tensor(buf),)

    return _make("sort", out_data, (a,), vjp)


# ---------------------------------------------------------------------------
# linear algebra and convolution
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 1:
        return reshape(matmul(reshape(a, (1, a.shape[0])), b), (-1,))
    if b.ndim == 1:
        return reshape(matmul(a, reshape(b, (b.shape[0], 1))), (-1,))
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")

    def vjp(g):
        return (matmul(g, transpose(b)), matmul(transpose(a), g))

    return _make("matmul", a.data @ b.data, (a, b), vjp)


def affine(x, w, b) -> Tensor:
    """Linear layer x @ w + b (recorded as matmul + add)."""
    return add(matmul(x, w), b)


def channel_bias(x, b) -> Tensor:
    """Add a per-channel bias (C,) to a channels-first (C, T) or (B, C, T) tensor."""
    x, b = as_tensor(x), as_tensor(b)
    if x.ndim == 2:
        return add(x, expand(b, x.shape, 1))
    if x.ndim == 3:
        return add(x, expand(expand(b, x.shape[1:], 1), x.shape, 0))
    raise ShapeError(f"channel_bias: expected 2-D or 3-D input, got {x.shape}")


def conv1d(x, w, stride: int = 1, dilation: int = 1, causal: bool = False) -> Tensor:
    """1-D convolution (cross-correlation), channels-first.

    x: (C_in, T) or (B, C_in, T); w: (C_out, C_in, K).  ``causal`` left-pads
    with (K-1)*dilation zeros so the output keeps length T when stride is 1.
    First-order only.
    """
    x, w = as_tensor(x), as_tensor(w)
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or w.ndim != 3 or xd.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d: incompatible shapes {x.shape} and {w.shape}")
    B, Cin, T = xd.shape
    Cout, _, K = w.shape
    pad = (K - 1) * dilation if causal else 0
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, 0)))
    span = (K - 1) * dilation + 1
    if xp.shape[2] < span:
        raise ShapeError(f"conv1d: input length {T} shorter than kernel span {span}")
    t_out = (xp.shape[2] - span) // stride + 1
    idx = np.arange(t_out)[:, None] * stride + np.arange(K)[None, :] * dilation
    patches = xp[:, :, idx]  # (B, Cin, t_out, K)
    # contract via BLAS: (B*t_out, Cin*K) @ (Cin*K, Cout)
    pmat = patches.transpose(0, 2, 1, 3).reshape(B * t_out, Cin * K)
    wmat = w.data.reshape(Cout, Cin * K).T
    out_data = (pmat @ wmat).reshape(B, t_out, Cout).transpose(0, 2, 1)

    def vjp(g):
        gd = g.data[None] if squeeze else g.data
        gmat = gd.transpose(0, 2, 1).reshape(B * t_out, Cout)
        gw = (gmat.T @ pmat).reshape(Cout, Cin, K)
        scat = (gmat @ wmat.T).reshape(B, t_out, Cin, K).transpose(0, 2, 1, 3)
        gx = np.zeros_like(xp)
        np.add.at(gx, (slice(None), slice(None), idx), scat)
        gx = gx[:, :, pad:]
        if squeeze:
            gx = gx[0]
        return (Tensor(gx), Tensor(gw))

    return _make("conv1d", out_data[0] if squeeze else out_data, (x, w), vjp)


def maxpool1d(x, kernel: int, stride: int | None = None) -> Tensor:
    """Max pooling along the last axis; trailing remainder windows are dropped.

    Gradient goes to the first maximum inside each window.
    """
    x = as_tensor(x)
    if kernel < 1:
        raise ShapeError(f"maxpool1d: kernel {kernel} < 1")
    stride = kernel if stride is None else stride
    T = x.shape[-1]
    if T < kernel:
        raise ShapeError(f"maxpool1d: length {T} shorter than kernel {kernel}")
    t_out = (T - kernel) // stride + 1
    idx = np.arange(t_out)[:, None] * stride + np.arange(kernel)[None, :]
    windows = x.data[..., idx]  # (..., t_out, kernel)
    arg = np.argmax(windows, axis=-1)  # first max
    out_data = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def vjp(g):
        buf = np.zeros(x.shape)
        flat = buf.reshape(-1, T)
        pos = np.arange(t_out)[None, :] * stride + arg.reshape(-1, t_out)
        rows = np.repeat(np.arange(flat.shape[0])[:, None], t_out, axis=1)
        np.add.at(flat, (rows, pos), g.data.reshape(-1, t_out))
        return (Tensor(flat.reshape(x.shape)),)

    return _make("maxpool1d", out_data, (x,), vjp)


# ---------------------------------------------------------------------------
# public forward_op dispatch
# ---------------------------------------------------------------------------

_OPS = {
    "add": add, "sub": sub, "mul": mul, "div": div, "matmul": matmul,
    "conv1d": conv1d, "maxpool1d": maxpool1d, "affine": affine,
    "relu": relu, "leaky_relu": leaky_relu, "tanh": tanh, "sigmoid": sigmoid,
    "exp": texp, "log": tlog, "pow": power, "sum": tsum, "mean": tmean,
    "slice": tslice, "concat": concat, "clamp": clamp, "sign": sign,
    "sqrt": tsqrt, "abs": tabs, "reshape": reshape, "transpose": transpose,
    "expand": expand, "sort": sort_last,
}


def forward_op(kind: str, *inputs, **kwargs) -> Tensor:
    """Apply an operation by name (the string-keyed surface of the op table)."""
    if kind not in _OPS:
        raise AutodiffError(f"unknown operation kind '{kind}'")
    return _OPS[kind](*inputs, **kwargs)


# ---------------------------------------------------------------------------
# backward engine
# ---------------------------------------------------------------------------

def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
    return order


def _matters_map(order: list[Tensor], targets: set[int]) -> set[int]:
    """Tensors through which gradient must flow to reach a target."""
    matters: set[int] = set()
    for t in order:  # order is parents-before-children
        if id(t) in targets:
            matters.add(id(t))
        elif t.node is not None and any(id(p) in matters for p in t.node.parents):
            matters.add(id(t))
    return matters


def _run_backward(root: Tensor, create_graph: bool, sinks: list[Tensor] | None,
                  accumulate: bool) -> dict[int, Tensor]:
    if root.data.size != 1:
        raise GraphError(f"backward root must be scalar, got shape {root.shape}")
    if root.node is None:
        if not root.requires_grad and not sinks:
            raise GraphError("backward on a constant with no recorded graph")
    elif root.node.freed:
        raise GraphError("backward called twice without re-running forward")

    order = _toposort(root)
    if sinks is not None:
        targets = {id(t) for t in sinks}
    else:
        targets = {id(t) for t in order
                   if (t.node is None and t.requires_grad) or t._retain}
    matters = _matters_map(order, targets)

    grads: dict[int, Tensor] = {id(root): Tensor(np.ones(root.shape))}
    out: dict[int, Tensor] = {}

    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if sinks is not None and id(t) in targets:
            out[id(t)] = g
        if accumulate and ((t.node is None and t.requires_grad) or t._retain):
            if t.grad is None:
                t.grad = np.zeros(t.shape)
            t.grad = t.grad + g.data
        node = t.node
        if node is None:
            continue
        if node.freed:
            raise GraphError("backward through an already-consumed graph; re-run forward")
        if create_graph and not node.second_order:
            raise SecondOrderError(
                f"operation '{node.kind}' does not support second-order differentiation")
        with _record(create_graph):
            pgrads = node.vjp(g)
            for p, pg in zip(node.parents, pgrads):
                if pg is None or id(p) not in matters:
                    continue
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else add(prev, pg)
        if accumulate and not create_graph:
            node.freed = True
    return out


def backward(root: Tensor, create_graph: bool = False) -> None:
    """Accumulate d(root)/d(leaf) into ``grad`` of every requires-grad leaf.

    Unless ``create_graph`` is set the swept nodes are consumed; a second
    backward over them raises ``GraphError``.
    """
    _run_backward(root, create_graph, sinks=None, accumulate=True)


def gradients(root: Tensor, wrt: list[Tensor], create_graph: bool = False) -> list[Tensor]:
    """Return d(root)/d(t) for each tensor in ``wrt`` without touching ``grad`` buffers.

    With ``create_graph=True`` the returned tensors are graph-connected and can
    be differentiated again (second-order subset only).
    """
    found = _run_backward(root, create_graph, sinks=list(wrt), accumulate=False)
    res = []
    for t in wrt:
        g = found.get(id(t))
        res.append(g if g is not None else Tensor(np.zeros(t.shape)))
    return res


def gradient(root: Tensor, wrt: Tensor, create_graph: bool = False) -> Tensor:
    return gradients(root, [wrt], create_graph)[0]


def grad_of_grad(root: Tensor, wrt: Tensor, then, params) -> Tensor | list[Tensor]:
    """Differentiate ``then(d root / d wrt)`` with respect to ``params``.

    ``then`` maps the first-order gradient tensor to a scalar (for the
    Wasserstein penalty: (||g||_2 - 1)^2).  ``params`` may be a single tensor
    or a sequence; the result mirrors that structure.
    """
    g = gradient(root, wrt, create_graph=True)
    scalar = then(g)
    single = isinstance(params, Tensor)
    plist = [params] if single else list(params)
    res = gradients(scalar, plist)
    return res[0] if single else res


def zero_grads(params) -> None:
    for p in params:
        p.grad = None
