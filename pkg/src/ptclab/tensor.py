"""Reverse-mode autodiff over dense numpy arrays.

Small on purpose: exactly the ops the depth network, the point-injection
MLP and the two losses need. Float32 is the production precision; wrap
code in `with precision(Precision.F64):` to make finite-difference
gradient checks sharp. All tensors built inside one precision context
share one dtype (one graph, one mode).
"""

from __future__ import annotations

import enum
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ConfigurationError, UsageError


class Precision(enum.Enum):
    F32 = "f32"
    F64 = "f64"


_DTYPES = {Precision.F32: np.float32, Precision.F64: np.float64}
_active = Precision.F32


def active_precision() -> Precision:
    return _active


def active_dtype():
    return _DTYPES[_active]


@contextmanager
def precision(mode: Precision):
    global _active
    previous = _active
    _active = mode
    try:
        yield
    finally:
        _active = previous


class Tensor:
    """A node of the computation graph.

    `data` is a numpy array in the active precision, `grad` a same-shape
    buffer allocated lazily during backward. Parent links plus the
    per-node backward closure are the graph record; backward() walks them
    in reverse topological order so each node is visited exactly once,
    after all of its consumers.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=active_dtype())
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise UsageError(f"backward() needs a scalar loss, got shape {self.data.shape}")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    # convenience operators used when assembling losses
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__


def _toposort(root: Tensor):
    """Iterative post-order DFS over grad-requiring nodes."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited and parent.requires_grad:
                stack.append((parent, False))
    return order


def _accumulate(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def as_tensor(data, requires_grad=False) -> Tensor:
    if isinstance(data, Tensor):
        return data
    return Tensor(data, requires_grad=requires_grad)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=active_dtype()), requires_grad=True)


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b) -> Tensor:
    b = as_tensor(b)
    if a.data.shape != b.data.shape and b.data.size != 1 and a.data.size != 1:
        raise ConfigurationError(f"add shapes differ: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data + b.data, requires_grad=a.requires_grad or b.requires_grad, parents=(a, b))

    def _bw():
        if a.requires_grad:
            _accumulate(a, out.grad if a.data.shape == out.data.shape else out.grad.sum())
        if b.requires_grad:
            _accumulate(b, out.grad if b.data.shape == out.data.shape else out.grad.sum())

    out._backward = _bw
    return out


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product; the second operand may be a python scalar."""
    if isinstance(b, (int, float)):
        out = Tensor(a.data * b, requires_grad=a.requires_grad, parents=(a,))

        def _bw_scalar():
            if a.requires_grad:
                _accumulate(a, out.grad * b)

        out._backward = _bw_scalar
        return out

    b = as_tensor(b)
    if a.data.shape != b.data.shape and b.data.size != 1 and a.data.size != 1:
        raise ConfigurationError(f"mul shapes differ: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data * b.data, requires_grad=a.requires_grad or b.requires_grad, parents=(a, b))

    def _bw():
        if a.requires_grad:
            g = out.grad * b.data
            _accumulate(a, g if a.data.shape == out.data.shape else g.sum())
        if b.requires_grad:
            g = out.grad * a.data
            _accumulate(b, g if b.data.shape == out.data.shape else g.sum())

    out._backward = _bw
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0), requires_grad=x.requires_grad, parents=(x,))

    def _bw():
        if x.requires_grad:
            # gradient at exactly 0 is 0
            _accumulate(x, out.grad * (x.data > 0))

    out._backward = _bw
    return out


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    out = Tensor(np.where(x.data > 0, x.data, slope * x.data),
                 requires_grad=x.requires_grad, parents=(x,))

    def _bw():
        if x.requires_grad:
            _accumulate(x, out.grad * np.where(x.data > 0, 1.0, slope).astype(x.data.dtype))

    out._backward = _bw
    return out


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    # split form: never exponentiates a large positive argument
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid_stable(x.data)
    out = Tensor(s, requires_grad=x.requires_grad, parents=(x,))

    def _bw():
        if x.requires_grad:
            _accumulate(x, out.grad * s * (1.0 - s))

    out._backward = _bw
    return out


def concat_channels(tensors) -> Tensor:
    tensors = list(tensors)
    base = tensors[0].data.shape
    for t in tensors[1:]:
        if t.data.ndim != 4 or t.data.shape[0] != base[0] or t.data.shape[2:] != base[2:]:
            raise ConfigurationError(
                f"concat_channels needs matching N,H,W: {base} vs {t.data.shape}")
    data = np.concatenate([t.data for t in tensors], axis=1)
    out = Tensor(data, requires_grad=any(t.requires_grad for t in tensors), parents=tuple(tensors))
    splits = np.cumsum([t.data.shape[1] for t in tensors])[:-1]

    def _bw():
        pieces = np.split(out.grad, splits, axis=1)
        for t, g in zip(tensors, pieces):
            if t.requires_grad:
                _accumulate(t, g)

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# convolution / resampling / linear


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, ph: int, pw: int):
    """NCHW input -> (N*Ho*Wo, kh*kw*C) patch matrix (channels-last inside,
    so the forced copy gathers contiguous runs) plus the output extents."""
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    xt = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
    n, hp, wp, c = xt.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    sn, sr, scol, sc = xt.strides
    win = as_strided(xt, (n, ho, wo, kh, kw, c),
                     (sn, sr * stride, scol * stride, sr, scol, sc),
                     writeable=False)
    return win.reshape(n * ho * wo, kh * kw * c), ho, wo


def _kernel_cols(k: np.ndarray) -> np.ndarray:
    # (K, C, kh, kw) -> (kh*kw*C, K), matching the _im2col patch layout
    return k.transpose(2, 3, 1, 0).reshape(-1, k.shape[0])


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding=None) -> Tensor:
    """Cross-correlation with odd kernels, 'same'-style padding, stride 1 or 2."""
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ConfigurationError("conv2d expects NCHW input and KCkhkw kernel")
    kk, kc, kh, kw = kernel.data.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigurationError(f"conv2d kernel extents must be odd, got {kh}x{kw}")
    if stride not in (1, 2):
        raise ConfigurationError(f"conv2d stride must be 1 or 2, got {stride}")
    if x.data.shape[1] != kc:
        raise ConfigurationError(
            f"conv2d channel mismatch: input {x.data.shape[1]}, kernel {kc}")
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    if padding is not None and padding != ph:
        raise ConfigurationError(f"conv2d padding must be (kh-1)/2 = {ph}, got {padding}")

    n, _, h, w = x.data.shape
    cols, ho, wo = _im2col(x.data, kh, kw, stride, ph, pw)
    data = (cols @ _kernel_cols(kernel.data)).reshape(n, ho, wo, kk)
    out = Tensor(np.ascontiguousarray(data.transpose(0, 3, 1, 2)),
                 requires_grad=x.requires_grad or kernel.requires_grad,
                 parents=(x, kernel))
    saved_cols = cols if kernel.requires_grad else None

    def _bw():
        g = out.grad
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, kk)
        if kernel.requires_grad:
            gk = (saved_cols.T @ g2).reshape(kh, kw, kc, kk)
            _accumulate(kernel, gk.transpose(3, 2, 0, 1))
        if x.requires_grad:
            hp, wp = h + 2 * ph, w + 2 * pw
            if stride == 1:
                gd = g
            else:
                gd = np.zeros((n, kk, hp - kh + 1, wp - kw + 1), dtype=g.dtype)
                gd[:, :, ::stride, ::stride] = g
            # full correlation of the (dilated) output grad with the
            # spatially flipped, channel-transposed kernel
            krot = kernel.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            gcols, hx, wx = _im2col(gd, kh, kw, 1, kh - 1, kw - 1)
            gx = (gcols @ _kernel_cols(krot)).reshape(n, hx, wx, kc)
            gx = np.ascontiguousarray(gx.transpose(0, 3, 1, 2))
            if ph or pw:
                gx = gx[:, :, ph:ph + h, pw:pw + w]
            _accumulate(x, np.ascontiguousarray(gx))

    out._backward = _bw
    return out


def down2(x: Tensor) -> Tensor:
    """2x2 mean pooling; exact adjoint in backward."""
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ConfigurationError(f"down2 needs even extents, got {h}x{w}")
    data = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    out = Tensor(data, requires_grad=x.requires_grad, parents=(x,))

    def _bw():
        if x.requires_grad:
            g = np.repeat(np.repeat(out.grad, 2, axis=2), 2, axis=3) * \
                np.asarray(0.25, dtype=out.grad.dtype)
            _accumulate(x, g)

    out._backward = _bw
    return out


def up2(x: Tensor) -> Tensor:
    """Nearest-neighbor 2x duplication; exact adjoint in backward."""
    n, c, h, w = x.data.shape
    data = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    out = Tensor(data, requires_grad=x.requires_grad, parents=(x,))

    def _bw():
        if x.requires_grad:
            g = out.grad.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))
            _accumulate(x, g)

    out._backward = _bw
    return out


def resample(x: Tensor, factor: str) -> Tensor:
    if factor == "down2":
        return down2(x)
    if factor == "up2":
        return up2(x)
    raise ConfigurationError(f"resample factor must be 'down2' or 'up2', got {factor!r}")


def linear(x: Tensor, weight: Tensor, bias: Tensor = None) -> Tensor:
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ConfigurationError("linear expects 2-D input and weight")
    if x.data.shape[1] != weight.data.shape[1]:
        raise ConfigurationError(
            f"linear dims disagree: input {x.data.shape}, weight {weight.data.shape}")
    data = x.data @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        if bias.data.shape != (weight.data.shape[0],):
            raise ConfigurationError(
                f"linear bias shape {bias.data.shape} != ({weight.data.shape[0]},)")
        data = data + bias.data
        parents.append(bias)
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents),
                 parents=tuple(parents))

    def _bw():
        g = out.grad
        if x.requires_grad:
            _accumulate(x, g @ weight.data)
        if weight.requires_grad:
            _accumulate(weight, g.T @ x.data)
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=0))

    out._backward = _bw
    return out


def matmul_const(matrix: np.ndarray, x: Tensor) -> Tensor:
    """out = M @ x for a constant matrix M (segment pooling and the like)."""
    m = np.asarray(matrix, dtype=active_dtype())
    out = Tensor(m @ x.data, requires_grad=x.requires_grad, parents=(x,))

    def _bw():
        if x.requires_grad:
            _accumulate(x, m.T @ out.grad)

    out._backward = _bw
    return out


def broadcast_hw(x: Tensor, h: int, w: int) -> Tensor:
    """(N, C) -> (N, C, h, w) constant channels; backward sums over h, w."""
    if x.data.ndim != 2:
        raise ConfigurationError("broadcast_hw expects an (N, C) tensor")
    data = np.broadcast_to(x.data[:, :, None, None], x.data.shape + (h, w)).copy()
    out = Tensor(data, requires_grad=x.requires_grad, parents=(x,))

    def _bw():
        if x.requires_grad:
            _accumulate(x, out.grad.sum(axis=(2, 3)))

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# fused loss ops


def masked_smooth_l1(pred: Tensor, target: np.ndarray, valid: np.ndarray) -> Tensor:
    """Mean smooth-L1 of (pred - target) over valid pixels.

    Invalid pixels contribute exactly nothing, forward and backward; an
    empty valid set yields a zero loss with zero gradient.
    """
    if pred.data.shape != target.shape or pred.data.shape != valid.shape:
        raise UsageError(
            f"loss extents differ: pred {pred.data.shape}, gt {target.shape}")
    valid = valid.astype(bool)
    n = int(valid.sum())
    if n == 0:
        return Tensor(0.0, requires_grad=pred.requires_grad, parents=(pred,))
    x = pred.data - target
    ax = np.abs(x)
    per_pixel = np.where(ax < 1.0, 0.5 * x * x, ax - 0.5)
    value = float(per_pixel[valid].sum()) / n
    out = Tensor(value, requires_grad=pred.requires_grad, parents=(pred,))

    def _bw():
        if pred.requires_grad:
            d = np.where(ax < 1.0, x, np.sign(x)) * valid
            _accumulate(pred, out.grad * (d / n).astype(pred.data.dtype))

    out._backward = _bw
    return out


def bce_with_logits(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean binary cross-entropy on logits, numerically stable form."""
    if logits.data.shape != target.shape:
        raise UsageError(
            f"bce extents differ: logits {logits.data.shape}, target {target.shape}")
    z = logits.data
    per_pixel = np.maximum(z, 0) - z * target + np.log1p(np.exp(-np.abs(z)))
    out = Tensor(float(per_pixel.mean()), requires_grad=logits.requires_grad,
                 parents=(logits,))

    def _bw():
        if logits.requires_grad:
            g = (_sigmoid_stable(z) - target) / z.size
            _accumulate(logits, out.grad * g.astype(z.dtype))

    out._backward = _bw
    return out
