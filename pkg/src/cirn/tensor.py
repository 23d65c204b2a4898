"""Dense tensors with reverse-mode automatic differentiation.

Every array-valued quantity in the model is a :class:`Tensor`.  Operations
record their inputs and a backward rule; :func:`backward` walks the recorded
graph in reverse topological order and accumulates gradients into the leaves.

Shapes are explicit: element-wise operations require identical shapes and
broadcasting is spelled out with :func:`expand`.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError, ConfigError

_DEFAULT_DTYPE = np.float32


def get_default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ConfigError(f"unsupported element type {dtype!r}; use float32 or float64")
    _DEFAULT_DTYPE = dtype


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily switch the element type used for new tensors."""
    prev = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


class Tensor:
    """An n-dimensional array that may participate in a differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(_DEFAULT_DTYPE)
        elif arr.dtype.type not in (np.float32, np.float64):
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr if arr.flags.c_contiguous else arr.copy()
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # arithmetic sugar; all of these route through the explicit ops below
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, other)

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_scalar(self, -other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def backward(self, leaves: Optional[Iterable["Tensor"]] = None) -> None:
        backward(self, leaves)


def tensor(data, requires_grad: bool = False, name: Optional[str] = None) -> Tensor:
    arr = np.array(data, dtype=_DEFAULT_DTYPE)
    return Tensor(arr, requires_grad=requires_grad, name=name)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_DEFAULT_DTYPE), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=_DEFAULT_DTYPE), requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    out = Tensor(data)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# element-wise


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def ewise(op: str, a: Tensor, b: Tensor) -> Tensor:
    try:
        fn = {"add": add, "sub": sub, "mul": mul}[op]
    except KeyError:
        raise ContractError(f"unknown element-wise op {op!r}") from None
    return fn(a, b)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * a.data.dtype.type(c), (a,), lambda g: (g * g.dtype.type(c),), "scale")


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _make(a.data + a.data.dtype.type(c), (a,), lambda g: (g,), "add_scalar")


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2 * g * ad,), "square")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,), "relu")


def gelu(a: Tensor) -> Tensor:
    """Tanh approximation of GELU."""
    x = a.data
    c = np.sqrt(2.0 / np.pi)
    inner = c * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = (0.5 * x * (1 + t)).astype(x.dtype)

    def bw(g):
        dinner = c * (1 + 3 * 0.044715 * x**2)
        return ((g * (0.5 * (1 + t) + 0.5 * x * (1 - t * t) * dinner)).astype(x.dtype),)

    return _make(out, (a,), bw, "gelu")


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {src} as {shape}") from None
    return _make(out, (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                 lambda g: (np.ascontiguousarray(g.transpose(inv)),), "transpose")


def expand(a: Tensor, shape) -> Tensor:
    """Broadcast size-1 axes of ``a`` to ``shape`` (ranks must agree)."""
    shape = tuple(int(s) for s in shape)
    if len(shape) != a.ndim or any(s != t and s != 1 for s, t in zip(a.shape, shape)):
        raise DimensionError(f"expand: cannot expand {a.shape} to {shape}")
    axes = tuple(i for i, (s, t) in enumerate(zip(a.shape, shape)) if s != t)
    out = np.ascontiguousarray(np.broadcast_to(a.data, shape))
    return _make(out, (a,), lambda g: (g.sum(axis=axes, keepdims=True),), "expand")


def getitem(a: Tensor, index) -> Tensor:
    """Basic (slice/int) indexing; gradients scatter back into a zero buffer."""
    src_shape = a.shape
    out = np.ascontiguousarray(a.data[index])

    def bw(g):
        full = np.zeros(src_shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return _make(out, (a,), bw, "getitem")


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ContractError("concat: no parts")
    ref = parts[0].shape
    ax = axis % len(ref)
    for p in parts[1:]:
        if p.ndim != len(ref) or any(s != t for i, (s, t) in enumerate(zip(p.shape, ref)) if i != ax):
            raise DimensionError(f"concat: incompatible shapes {ref} and {p.shape} on axis {axis}")
    sizes = [p.shape[ax] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(np.ascontiguousarray(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax))
                     for i in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts], axis=ax), parts, bw, "concat")


def stack(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Stack equal-shaped tensors along a new axis."""
    parts = list(parts)
    ax = axis % (parts[0].ndim + 1)
    expanded = [reshape(p, p.shape[:ax] + (1,) + p.shape[ax:]) for p in parts]
    return concat(expanded, axis=ax)


def take_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]``; gradient is a scatter-add into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"take_rows: id out of range [0, {table.shape[0]})")
    src_shape = table.shape

    def bw(g):
        full = np.zeros(src_shape, dtype=g.dtype)
        np.add.at(full, ids.reshape(-1), g.reshape((-1,) + src_shape[1:]))
        return (full,)

    return _make(table.data[ids], (table,), bw, "take_rows")


def gather_positions(h: Tensor, index: np.ndarray) -> Tensor:
    """Per-example row gather: ``out[b, k] = h[b, index[b, k]]`` for ``h`` of shape B×N×d."""
    index = np.asarray(index, dtype=np.int64)
    rows = np.arange(h.shape[0])[:, None]
    src_shape = h.shape

    def bw(g):
        full = np.zeros(src_shape, dtype=g.dtype)
        np.add.at(full, (np.broadcast_to(rows, index.shape), index), g)
        return (full,)

    return _make(h.data[rows, index], (h,), bw, "gather_positions")


# ---------------------------------------------------------------------------
# reductions


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = a.shape
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims), dtype=a.dtype)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _make(out, (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading (batch) axes must match exactly."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _make(ad @ bd, (a, b), bw, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight + bias`` over the last axis of ``x`` (any leading shape)."""
    lead = x.shape[:-1]
    flat = reshape(x, (int(np.prod(lead)) if lead else 1, x.shape[-1]))
    out = matmul(flat, weight)
    if bias is not None:
        out = add(out, expand(reshape(bias, (1, bias.shape[0])), out.shape))
    return reshape(out, lead + (weight.shape[1],))


# ---------------------------------------------------------------------------
# normalisation and probabilities


def softmax_lastdim(a: Tensor) -> Tensor:
    x = a.data
    if not np.all(np.isfinite(x) | (x == -np.inf)):
        raise NumericError("softmax: non-finite input")
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _make(p, (a,), bw, "softmax")


def log_softmax_lastdim(a: Tensor) -> Tensor:
    x = a.data
    mx = x.max(axis=-1, keepdims=True)
    shifted = x - mx
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _make(out, (a,), bw, "log_softmax")


def cross_entropy_logits(logits: Tensor, labels) -> Tensor:
    """Mean of ``-log softmax(logits)[y]`` over the batch, fused for stability."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    x = logits.data
    if x.ndim != 2 or x.shape[0] != labels.shape[0]:
        raise DimensionError(f"cross_entropy: logits {x.shape} vs labels {labels.shape}")
    mx = x.max(axis=-1, keepdims=True)
    shifted = x - mx
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(len(labels))
    picked = logp[rows, labels]
    loss = np.asarray(-picked.mean(), dtype=x.dtype)
    batch = len(labels)

    def bw(g):
        p = np.exp(logp)
        p[rows, labels] -= 1
        return ((p * (g / batch)).astype(x.dtype),)

    return _make(loss, (logits,), bw, "cross_entropy")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: width {d} vs gain {gain.shape} / bias {bias.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    lead = tuple(range(x.ndim - 1))

    def bw(g):
        dxhat = g * gain.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx.astype(xd.dtype), (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(out.astype(xd.dtype), (x, gain, bias), bw, "layer_norm")


def dropout(x: Tensor, rate: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1/(1-rate)``; identity in eval mode."""
    if not 0 <= rate < 1:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1 - rate)
    return _make(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# ---------------------------------------------------------------------------
# convolution and pooling


def _conv2d_grads(g, xp, k, kh, kw, H, W):
    """Gradients of the direct cross-correlation w.r.t. padded input and kernel."""
    dxp = np.zeros_like(xp)
    dk = np.zeros_like(k)
    for u in range(kh):
        for v in range(kw):
            win = xp[:, :, u:u + H, v:v + W]
            # (O,C)^T contraction over output channels
            dxp[:, :, u:u + H, v:v + W] += np.einsum("bohw,oc->bchw", g, k[:, :, u, v])
            dk[:, :, u, v] = np.einsum("bohw,bchw->oc", g, win)
    return dxp, dk


def conv2d(x: Tensor, k: Tensor, bias: Optional[Tensor] = None, padding: str = "same") -> Tensor:
    """2-D cross-correlation of ``x`` (C×H×W or B×C×H×W) with kernels O×C×kh×kw."""
    unbatched = x.ndim == 3
    if unbatched:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 4 or k.ndim != 4:
        raise DimensionError(f"conv2d: expected 4-D input and kernel, got {x.shape} and {k.shape}")
    B, C, H, W = x.shape
    O, Ck, kh, kw = k.shape
    if C != Ck:
        raise DimensionError(f"conv2d: input has {C} channels but kernel {k.shape} expects {Ck}")
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ConfigError("conv2d: same padding needs odd kernel extents")
        ph, pw = kh // 2, kw // 2
        Ho, Wo = H, W
    elif padding == "valid":
        ph = pw = 0
        Ho, Wo = H - kh + 1, W - kw + 1
        if Ho < 1 or Wo < 1:
            raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than input {H}x{W}")
    else:
        raise ConfigError(f"conv2d: unknown padding {padding!r}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    kd = k.data
    out = np.zeros((B, O, Ho, Wo), dtype=x.dtype)
    for u in range(kh):
        for v in range(kw):
            out += np.einsum("bchw,oc->bohw", xp[:, :, u:u + Ho, v:v + Wo], kd[:, :, u, v])

    parents = [x, k]
    if bias is not None:
        out += bias.data.reshape(1, O, 1, 1)
        parents.append(bias)

    def bw(g):
        dxp, dk = _conv2d_grads(g, xp, kd, kh, kw, Ho, Wo)
        dx = dxp[:, :, ph:ph + H, pw:pw + W] if (ph or pw) else dxp
        grads = [np.ascontiguousarray(dx), dk]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    res = _make(out, parents, bw, "conv2d")
    return reshape(res, res.shape[1:]) if unbatched else res


def maxpool2d(x: Tensor) -> Tensor:
    """2×2 max pool, stride 2; ragged edges pool over the in-bounds sub-window.

    The backward pass routes each gradient to the first maximum in row-major
    window order.
    """
    unbatched = x.ndim == 3
    if unbatched:
        x = reshape(x, (1,) + x.shape)
    B, C, H, W = x.shape
    H2, W2 = -(-H // 2), -(-W // 2)
    padded = np.full((B, C, 2 * H2, 2 * W2), -np.inf, dtype=x.dtype)
    padded[:, :, :H, :W] = x.data
    win = padded.reshape(B, C, H2, 2, W2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H2, W2, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gw = np.zeros((B, C, H2, W2, 4), dtype=g.dtype)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        full = gw.reshape(B, C, H2, W2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, 2 * H2, 2 * W2)
        return (np.ascontiguousarray(full[:, :, :H, :W]),)

    res = _make(np.ascontiguousarray(out), (x,), bw, "maxpool2d")
    return reshape(res, res.shape[1:]) if unbatched else res


def global_maxpool(x: Tensor) -> Tensor:
    """Per-channel spatial maximum of C×H×W (or B×C×H×W); first argmax takes the gradient."""
    unbatched = x.ndim == 3
    if unbatched:
        x = reshape(x, (1,) + x.shape)
    B, C, H, W = x.shape
    flat = x.data.reshape(B, C, H * W)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gf = np.zeros((B, C, H * W), dtype=g.dtype)
        np.put_along_axis(gf, arg[..., None], g[..., None], axis=-1)
        return (gf.reshape(B, C, H, W),)

    res = _make(np.ascontiguousarray(out), (x,), bw, "global_maxpool")
    return reshape(res, (C,)) if unbatched else res


# ---------------------------------------------------------------------------
# graph traversal


def topological_order(root: Tensor) -> list:
    """Nodes reachable from ``root`` with every node after all of its inputs."""
    order, seen = [], set()
    stack = [(root, False)]
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
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor, leaves: Optional[Iterable[Tensor]] = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Leaves passed explicitly but unreachable from ``loss`` get a zero gradient.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    if leaves is not None:
        for leaf in leaves:
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
