"""Reverse-mode automatic differentiation over the operator set the networks need.

Design notes:
  - A Tensor wraps a numpy array plus an optional gradient accumulator. Ops
    record their parents and a vector-Jacobian-product closure on the output;
    backward() walks the implicit DAG once in reverse topological order and
    accumulates adjoints additively into .grad (so calling backward twice
    without clearing grads doubles them).
  - Convolution uses the cross-correlation convention (no kernel flip).
  - No general broadcasting: elementwise ops take equal shapes or a python
    scalar; the two attention products get dedicated ops instead.
  - Double precision is the default so finite-difference checks are meaningful;
    training passes float32 arrays through unchanged.
"""

from __future__ import annotations

import numpy as np
from .errors import ShapeMismatchError

__all__ = [
    "Tensor", "backward", "grad_check", "custom_op",
    "conv2d", "transpose_conv2d", "leaky_relu", "sigmoid", "softmax",
    "global_max_pool", "concat_channels", "reshape", "log", "clip",
    "absolute", "tsum", "tmean", "mul_spatial", "mul_channel",
]


class Tensor:
    """N-d value node in the computation graph.

    grad is None until a backward pass reaches this node; afterwards it holds
    an array of the same shape and dtype as data.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def __float__(self):
        return float(self.data)

    def detach(self):
        """Same storage, no gradient tracking."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
        return out

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # -- arithmetic (same-shape tensor or python scalar; no broadcasting) --

    def __add__(self, other):
        if isinstance(other, Tensor):
            _check_same_shape(self, other, "add")
            return _from_op(self.data + other.data, (self, other),
                            lambda g, a=self, b=other: (g if a.requires_grad else None,
                                                        g if b.requires_grad else None))
        return _from_op(self.data + other, (self,), lambda g: (g,))

    __radd__ = __add__

    def __neg__(self):
        return _from_op(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        if isinstance(other, Tensor):
            _check_same_shape(self, other, "sub")
            return _from_op(self.data - other.data, (self, other),
                            lambda g, a=self, b=other: (g if a.requires_grad else None,
                                                        -g if b.requires_grad else None))
        return _from_op(self.data - other, (self,), lambda g: (g,))

    def __rsub__(self, other):
        return _from_op(other - self.data, (self,), lambda g: (-g,))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            _check_same_shape(self, other, "mul")
            return _from_op(self.data * other.data, (self, other),
                            lambda g, a=self, b=other: (
                                g * b.data if a.requires_grad else None,
                                g * a.data if b.requires_grad else None))
        return _from_op(self.data * other, (self,), lambda g, c=other: (g * c,))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not part of the op set")
        return self * (1.0 / other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _check_same_shape(a, b, opname):
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError(
            f"{opname}: shapes {a.data.shape} and {b.data.shape} differ")


def _from_op(data, parents, vjp):
    out = Tensor.__new__(Tensor)
    out.data = data if isinstance(data, np.ndarray) else np.asarray(data)
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._vjp = vjp
    else:
        out._parents = ()
        out._vjp = None
    return out


def custom_op(data, parents, vjp):
    """Record a hand-written op: data is the forward value, vjp maps the output
    adjoint to one adjoint (or None) per parent."""
    return _from_op(np.asarray(data), parents, vjp)


def backward(loss):
    """Accumulate d(loss)/d(node) into .grad of every reachable requires_grad node.

    The loss must be scalar. Each graph node is visited exactly once; grads add
    onto whatever is already stored, so callers reset grads between passes.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")

    topo = []
    visited = set()
    stack = [(loss, False)]
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
            if id(p) not in visited:
                stack.append((p, False))

    adjoint = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._vjp is not None:
            for p, pg in zip(node._parents, node._vjp(g)):
                if pg is None:
                    continue
                key = id(p)
                if key in adjoint:
                    adjoint[key] = adjoint[key] + pg
                else:
                    adjoint[key] = pg


# ---------------------------------------------------------------------------
# convolution cores

def _pad2d(x, pad):
    if not pad:
        return x
    c, h, w = x.shape
    out = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    out[:, pad:pad + h, pad:pad + w] = x
    return out


def _strided_windows(xp, kh, kw, stride):
    """(C, Hp, Wp) -> (C, Ho, Wo, kh, kw) view of sliding patches."""
    c, hp, wp = xp.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    s0, s1, s2 = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, shape=(c, ho, wo, kh, kw),
        strides=(s0, s1 * stride, s2 * stride, s1, s2), writeable=False)


def _im2col(xp, kh, kw, stride):
    """(C, Hp, Wp) -> (Ho*Wo, C*kh*kw) patch matrix plus output extents."""
    win = _strided_windows(xp, kh, kw, stride)
    c, ho, wo = win.shape[0], win.shape[1], win.shape[2]
    cols = win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, c * kh * kw)
    return cols, ho, wo


def _col2im_add(dcols, c, hp, wp, kh, kw, stride, ho, wo):
    """Adjoint of _im2col: scatter-add patch gradients back onto the padded plane."""
    dxp = np.zeros((c, hp, wp), dtype=dcols.dtype)
    d = dcols.reshape(ho, wo, c, kh, kw)
    for u in range(kh):
        du = d[:, :, :, u, :]
        for v in range(kw):
            dxp[:, u:u + ho * stride:stride, v:v + wo * stride:stride] += \
                du[:, :, :, v].transpose(2, 0, 1)
    return dxp


def conv2d(x, k, b=None, stride=1, pad=0):
    """Strided cross-correlation. x: (C_in,H,W), k: (C_out,C_in,kh,kw), b: (C_out,).

    Output extent: floor((H + 2*pad - kh)/stride) + 1 per axis.
    """
    if x.data.ndim != 3 or k.data.ndim != 4:
        raise ShapeMismatchError(
            f"conv2d expects (C,H,W) input and (O,C,kh,kw) kernel, got {x.data.shape}, {k.data.shape}")
    cin, h, w = x.data.shape
    cout, cin_k, kh, kw = k.data.shape
    if cin_k != cin:
        raise ShapeMismatchError(f"conv2d: input has {cin} channels, kernel expects {cin_k}")
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise ShapeMismatchError(f"conv2d: kernel {kh}x{kw} larger than padded input")
    if b is not None and b.data.shape != (cout,):
        raise ShapeMismatchError(f"conv2d: bias shape {b.data.shape} != ({cout},)")
    if stride < 1:
        raise ValueError("conv2d: stride must be a positive integer")

    if kh == 1 and kw == 1 and stride == 1 and pad == 0:
        # pointwise mixing: plain matrix product over flattened positions
        kmat = k.data.reshape(cout, cin)
        out = (kmat @ x.data.reshape(cin, h * w)).reshape(cout, h, w)
        if b is not None:
            out = out + b.data[:, None, None]
        parents = (x, k) if b is None else (x, k, b)
        need_x, need_k = x.requires_grad, k.requires_grad
        need_b = b is not None and b.requires_grad

        def vjp_1x1(g):
            g2 = g.reshape(cout, h * w)
            dx = (kmat.T @ g2).reshape(cin, h, w) if need_x else None
            dk = (g2 @ x.data.reshape(cin, h * w).T).reshape(k.data.shape) if need_k else None
            if b is None:
                return (dx, dk)
            db = g.sum(axis=(1, 2)) if need_b else None
            return (dx, dk, db)

        return _from_op(out, parents, vjp_1x1)

    xp = _pad2d(x.data, pad)
    hp, wp = xp.shape[1], xp.shape[2]
    cols, ho, wo = _im2col(xp, kh, kw, stride)
    kmat = k.data.reshape(cout, cin * kh * kw)
    out2 = cols @ kmat.T
    if b is not None:
        out2 = out2 + b.data
    out = out2.T.reshape(cout, ho, wo)

    parents = (x, k) if b is None else (x, k, b)
    need_x, need_k = x.requires_grad, k.requires_grad
    need_b = b is not None and b.requires_grad

    def vjp(g):
        g2 = g.reshape(cout, ho * wo)
        dk = (g2 @ cols).reshape(k.data.shape) if need_k else None
        dx = None
        if need_x:
            dcols = g2.T @ kmat
            dxp = _col2im_add(dcols, cin, hp, wp, kh, kw, stride, ho, wo)
            dx = dxp[:, pad:pad + h, pad:pad + w] if pad else dxp
        if b is None:
            return (dx, dk)
        db = g.sum(axis=(1, 2)) if need_b else None
        return (dx, dk, db)

    return _from_op(out, parents, vjp)


def transpose_conv2d(x, k, b=None, stride=1, pad=0, out_pad=0):
    """Adjoint of conv2d with matching geometry. x: (C_in,H,W), k: (C_in,C_out,kh,kw).

    Output extent: (H-1)*stride - 2*pad + kh + out_pad. The same kernel array
    used by conv2d (read with its axes swapped) satisfies the inner-product
    adjoint identity.
    """
    if x.data.ndim != 3 or k.data.ndim != 4:
        raise ShapeMismatchError(
            f"transpose_conv2d expects (C,H,W) input and (C,O,kh,kw) kernel, got "
            f"{x.data.shape}, {k.data.shape}")
    if out_pad >= stride:
        raise ValueError(f"transpose_conv2d: out_pad {out_pad} must be < stride {stride}")
    cin, h, w = x.data.shape
    cin_k, cout, kh, kw = k.data.shape
    if cin_k != cin:
        raise ShapeMismatchError(
            f"transpose_conv2d: input has {cin} channels, kernel expects {cin_k}")
    if b is not None and b.data.shape != (cout,):
        raise ShapeMismatchError(f"transpose_conv2d: bias shape {b.data.shape} != ({cout},)")
    ho = (h - 1) * stride - 2 * pad + kh + out_pad
    wo = (w - 1) * stride - 2 * pad + kw + out_pad
    if ho < 1 or wo < 1:
        raise ShapeMismatchError("transpose_conv2d: output would be empty")

    ch = (h - 1) * stride + kh + out_pad
    cw = (w - 1) * stride + kw + out_pad
    canvas = np.zeros((cout, ch, cw), dtype=np.result_type(x.data, k.data))
    prod = np.tensordot(x.data, k.data, axes=([0], [0]))          # (h, w, cout, kh, kw)
    pr = prod.transpose(2, 3, 4, 0, 1)                            # (cout, kh, kw, h, w)
    for u in range(kh):
        for v in range(kw):
            canvas[:, u:u + h * stride:stride, v:v + w * stride:stride] += pr[:, u, v]
    out = canvas[:, pad:pad + ho, pad:pad + wo].copy()
    if b is not None:
        out += b.data[:, None, None]

    parents = (x, k) if b is None else (x, k, b)
    need_x, need_k = x.requires_grad, k.requires_grad
    need_b = b is not None and b.requires_grad

    def vjp(g):
        gc = np.zeros((cout, ch, cw), dtype=g.dtype)
        gc[:, pad:pad + ho, pad:pad + wo] = g
        win = _strided_windows(gc, kh, kw, stride)
        dx = None
        if need_x:
            dx = np.tensordot(win, k.data, axes=([0, 3, 4], [1, 2, 3])).transpose(2, 0, 1)
        dk = None
        if need_k:
            dk = np.tensordot(x.data, win, axes=([1, 2], [1, 2]))
        if b is None:
            return (dx, dk)
        db = g.sum(axis=(1, 2)) if need_b else None
        return (dx, dk, db)

    return _from_op(out, parents, vjp)


# ---------------------------------------------------------------------------
# pointwise and structural ops

def leaky_relu(x, slope=0.2):
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0,1), got {slope}")
    mask = x.data >= 0
    out = np.where(mask, x.data, x.data * slope)

    def vjp(g):
        return (np.where(mask, g, g * slope),)

    return _from_op(out, (x,), vjp)


def sigmoid(x):
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _from_op(out, (x,), vjp)


def softmax(x, axis):
    if not -x.data.ndim <= axis < x.data.ndim:
        raise ValueError(f"softmax: axis {axis} invalid for shape {x.data.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _from_op(out, (x,), vjp)


def global_max_pool(x):
    """(C,H,W) -> (C,1) channel maxima; gradient flows to the first argmax."""
    if x.data.ndim != 3:
        raise ShapeMismatchError(f"global_max_pool expects (C,H,W), got {x.data.shape}")
    c = x.data.shape[0]
    flat = x.data.reshape(c, -1)
    idx = flat.argmax(axis=1)
    out = flat[np.arange(c), idx].reshape(c, 1)

    def vjp(g):
        dflat = np.zeros_like(flat)
        dflat[np.arange(c), idx] = g.reshape(c)
        return (dflat.reshape(x.data.shape),)

    return _from_op(out, (x,), vjp)


def concat_channels(a, b):
    """Stack (C_a,H,W) and (C_b,H,W) along channels; a first."""
    if a.data.ndim != 3 or b.data.ndim != 3 or a.data.shape[1:] != b.data.shape[1:]:
        raise ShapeMismatchError(
            f"concat_channels: spatial dims differ ({a.data.shape} vs {b.data.shape})")
    ca = a.data.shape[0]
    out = np.concatenate([a.data, b.data], axis=0)

    def vjp(g):
        ga = g[:ca] if a.requires_grad else None
        gb = g[ca:] if b.requires_grad else None
        return (ga, gb)

    return _from_op(out, (a, b), vjp)


def reshape(x, shape):
    shape = tuple(shape)
    if int(np.prod(shape)) != x.data.size:
        raise ShapeMismatchError(f"reshape: cannot view {x.data.shape} as {shape}")
    old = x.data.shape

    def vjp(g):
        return (g.reshape(old),)

    return _from_op(x.data.reshape(shape), (x,), vjp)


def log(x):
    out = np.log(x.data)

    def vjp(g):
        return (g / x.data,)

    return _from_op(out, (x,), vjp)


def clip(x, lo, hi):
    """Clamp to [lo, hi]; gradient passes through wherever the value was kept."""
    out = np.clip(x.data, lo, hi)
    mask = (x.data >= lo) & (x.data <= hi)

    def vjp(g):
        return (np.where(mask, g, 0.0),)

    return _from_op(out, (x,), vjp)


def absolute(x):
    out = np.abs(x.data)
    sign = np.sign(x.data)

    def vjp(g):
        return (g * sign,)

    return _from_op(out, (x,), vjp)


def tsum(x):
    """Full reduction to a 0-d scalar."""
    out = x.data.sum()

    def vjp(g):
        return (np.full_like(x.data, g),)

    return _from_op(np.asarray(out), (x,), vjp)


def tmean(x):
    n = x.data.size
    out = x.data.mean()

    def vjp(g):
        return (np.full_like(x.data, g / n),)

    return _from_op(np.asarray(out), (x,), vjp)


def mul_spatial(f, m):
    """Weight every channel plane of f (C,H,W) by the map m (1,H,W)."""
    if f.data.ndim != 3 or m.data.shape != (1,) + f.data.shape[1:]:
        raise ShapeMismatchError(
            f"mul_spatial: map shape {m.data.shape} incompatible with {f.data.shape}")
    out = f.data * m.data

    def vjp(g):
        df = g * m.data if f.requires_grad else None
        dm = (g * f.data).sum(axis=0, keepdims=True) if m.requires_grad else None
        return (df, dm)

    return _from_op(out, (f, m), vjp)


def mul_channel(f, v):
    """Scale channel c of f (C,H,W) by v[c]; v has shape (C,1,1)."""
    if f.data.ndim != 3 or v.data.shape != (f.data.shape[0], 1, 1):
        raise ShapeMismatchError(
            f"mul_channel: vector shape {v.data.shape} incompatible with {f.data.shape}")
    out = f.data * v.data

    def vjp(g):
        df = g * v.data if f.requires_grad else None
        dv = (g * f.data).sum(axis=(1, 2)).reshape(-1, 1, 1) if v.requires_grad else None
        return (df, dv)

    return _from_op(out, (f, v), vjp)


# ---------------------------------------------------------------------------
# verification harness

def grad_check(fn, leaves, eps=1e-5):
    """Max relative error between backward grads and central finite differences.

    fn is a zero-argument callable returning a scalar Tensor; it must read the
    leaf tensors' .data live so in-place perturbation is visible. Relative
    error uses max(1, |analytic|, |numeric|) as denominator.
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be positive")
    if isinstance(leaves, Tensor):
        leaves = [leaves]
    for t in leaves:
        t.grad = None
    out = fn()
    backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in leaves]

    worst = 0.0
    for t, a in zip(leaves, analytic):
        flat = t.data.reshape(-1)
        aflat = a.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            f_plus = float(fn().data)
            flat[i] = keep - eps
            f_minus = float(fn().data)
            flat[i] = keep
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(aflat[i] - numeric) / max(1.0, abs(aflat[i]), abs(numeric))
            if err > worst:
                worst = err
    return worst
