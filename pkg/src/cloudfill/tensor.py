"""Dense float32 tensors with reverse-mode automatic differentiation.

Implements exactly the operator set the reconstruction model needs:
matmul (optionally batched), strided valid convolution, softmax, layer
norm, GELU, bilinear resizing, reductions and elementwise glue. The
operation graph is recorded dynamically and freed after each backward
pass, and every reduction uses a fixed sequential order so repeated
runs are bit-identical.

Also provides the Adam optimizer, a central-difference gradient
checker, and the binary container format used for all rasters and
checkpoints.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

_F32 = np.float32
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715

CONTAINER_MAGIC = b"TSR1"
CONTAINER_VERSION = 1
CONTAINER_DTYPE_F32 = 1


class ShapeError(ValueError):
    """Raised when operand extents are incompatible."""


def _as_array(data, dtype=None) -> np.ndarray:
    if dtype is not None:
        return np.asarray(data).astype(dtype, copy=False)
    if isinstance(data, (np.ndarray, np.generic)):
        arr = np.asarray(data)
        if arr.dtype in (np.float32, np.float64):
            return arr
        return arr.astype(_F32)
    # python scalars and (nested) sequences become float32
    return np.asarray(data, dtype=_F32)


class Tensor:
    """N-dimensional array plus an optional autodiff tape node.

    Data is float32 in every artifact path; float64 tensors are
    supported so the gradient checker can run the same graph at full
    precision.
    """

    __slots__ = ("data", "requires_grad", "grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._backward: Callable[[np.ndarray], None] | None = None
        self._parents: tuple[Tensor, ...] = ()

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- autodiff plumbing --------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        g = g.astype(self.data.dtype, copy=False)
        self.grad = g if self.grad is None else self.grad + g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Run reverse-mode accumulation from this node.

        The recorded graph is released afterwards; leaf tensors keep
        their ``grad``, intermediates are cleared.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without grad requires a scalar, got shape {self.data.shape}")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        self.grad = grad.astype(self.data.dtype, copy=False)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if node._parents:
                node._parents = ()
                node._backward = None
                if node is not self:
                    node.grad = None

    # -- operator sugar -----------------------------------------------------

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, inverting numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    return out


# -- elementwise and structural ops ------------------------------------------


def add(a, b) -> Tensor:
    if isinstance(b, (int, float)) and isinstance(a, Tensor):
        out_data = a.data + b

        def _bw_s(g):
            if a.requires_grad:
                a._accumulate(g)

        return _node(out_data, (a,), _bw_s)
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def _bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _node(out_data, (a, b), _bw)


def sub(a, b) -> Tensor:
    if isinstance(b, (int, float)) and isinstance(a, Tensor):
        return add(a, -b)
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data

    def _bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return _node(out_data, (a, b), _bw)


def mul(a, b) -> Tensor:
    if isinstance(b, (int, float)) and isinstance(a, Tensor):
        out_data = a.data * b

        def _bw_s(g):
            if a.requires_grad:
                a._accumulate(g * b)

        return _node(out_data, (a,), _bw_s)
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def _bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _node(out_data, (a, b), _bw)


def div(a, b) -> Tensor:
    if isinstance(b, (int, float)) and isinstance(a, Tensor):
        return mul(a, 1.0 / b)
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data / b.data

    def _bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _node(out_data, (a, b), _bw)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def _bw(g):
        if a.requires_grad:
            a._accumulate(-g)

    return _node(-a.data, (a,), _bw)


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    orig = a.data.shape
    out_data = a.data.reshape(shape)

    def _bw(g):
        if a.requires_grad:
            a._accumulate(g.reshape(orig))

    return _node(out_data, (a,), _bw)


def transpose(a: Tensor, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out_data = a.data.transpose(axes)

    def _bw(g):
        if a.requires_grad:
            a._accumulate(g.transpose(inv))

    return _node(out_data, (a,), _bw)


def getitem(a: Tensor, idx) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data[idx]

    def _bw(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[idx] = g
            a._accumulate(full)

    return _node(out_data, (a,), _bw)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def _bw(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape))
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape))

    return _node(out_data, (a,), _bw)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    count = a.data.size if axis is None else int(np.prod([a.data.shape[ax] for ax in np.atleast_1d(axis)]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.sqrt(a.data)

    def _bw(g):
        if a.requires_grad:
            a._accumulate(g * (0.5 / out_data))

    return _node(out_data, (a,), _bw)


def arccos(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.arccos(a.data)

    def _bw(g):
        if a.requires_grad:
            a._accumulate(-g / np.sqrt(1.0 - a.data * a.data))

    return _node(out_data, (a,), _bw)


def clip(a, lo: float, hi: float) -> Tensor:
    a = _as_tensor(a)
    out_data = np.clip(a.data, lo, hi)

    def _bw(g):
        if a.requires_grad:
            mask = ((a.data >= lo) & (a.data <= hi)).astype(a.data.dtype)
            a._accumulate(g * mask)

    return _node(out_data, (a,), _bw)


# -- linear algebra -----------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product; leading batch dimensions broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner extents disagree: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def _bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ b.data.swapaxes(-1, -2), a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(a.data.swapaxes(-1, -2) @ g, b.data.shape))

    return _node(out_data, (a, b), _bw)


def conv2d(x, kernel, bias, stride: int) -> Tensor:
    """Valid (no-padding) 2-d convolution with square kernel.

    x: (B, C, H, W); kernel: (D, C, k, k); bias: (D,). Output is
    (B, D, H', W') with H' = (H - k) // stride + 1.
    """
    x, kernel, bias = _as_tensor(x), _as_tensor(kernel), _as_tensor(bias)
    if not isinstance(stride, int) or stride <= 0:
        raise ShapeError(f"stride must be a positive int, got {stride!r}")
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernel, got {x.data.shape} and {kernel.data.shape}")
    B, C, H, W = x.data.shape
    D, Ck, kh, kw = kernel.data.shape
    if kh != kw:
        raise ShapeError(f"conv2d kernel must be square, got {kernel.data.shape}")
    k = kh
    if Ck != C:
        raise ShapeError(f"conv2d channel mismatch: input {x.data.shape} vs kernel {kernel.data.shape}")
    if k > H or k > W:
        raise ShapeError(f"conv2d kernel {kernel.data.shape} larger than input {x.data.shape}")
    if bias.data.shape != (D,):
        raise ShapeError(f"conv2d bias must have shape ({D},), got {bias.data.shape}")
    Ho = (H - k) // stride + 1
    Wo = (W - k) // stride + 1

    windows = np.lib.stride_tricks.sliding_window_view(x.data, (k, k), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]              # B,C,Ho,Wo,k,k
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(B, Ho * Wo, C * k * k)
    wmat = kernel.data.reshape(D, C * k * k)
    out_flat = cols @ wmat.T + bias.data                      # B,P,D
    out_data = out_flat.transpose(0, 2, 1).reshape(B, D, Ho, Wo)

    def _bw(g):
        gmat = g.reshape(B, D, Ho * Wo).transpose(0, 2, 1)    # B,P,D
        if kernel.requires_grad:
            dw = np.einsum("bpd,bpc->dc", gmat, cols)
            kernel._accumulate(dw.reshape(D, C, k, k))
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = (gmat @ wmat).reshape(B, Ho, Wo, C, k, k).transpose(0, 3, 1, 2, 4, 5)
            dx = np.zeros_like(x.data)
            for ki in range(k):
                rows = slice(ki, ki + stride * (Ho - 1) + 1, stride)
                for kj in range(k):
                    colsl = slice(kj, kj + stride * (Wo - 1) + 1, stride)
                    dx[:, :, rows, colsl] += dcols[:, :, :, :, ki, kj]
            x._accumulate(dx)

    return _node(out_data, (x, kernel, bias), _bw)


# -- neural-net nonlinearities ------------------------------------------------


def softmax_lastdim(x) -> Tensor:
    """Row-stochastic softmax over the last axis, max-shifted for stability."""
    x = _as_tensor(x)
    if x.data.shape[-1] < 1:
        raise ShapeError("softmax_lastdim needs a non-empty last axis")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def _bw(g):
        if x.requires_grad:
            dot = (g * y).sum(axis=-1, keepdims=True)
            x._accumulate((g - dot) * y)

    return _node(y, (x,), _bw)


def layer_norm(x, gain, shift, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, shift = _as_tensor(x), _as_tensor(gain), _as_tensor(shift)
    if eps <= 0:
        raise ValueError(f"layer_norm eps must be positive, got {eps}")
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or shift.data.shape != (d,):
        raise ShapeError(f"layer_norm gain/shift must have shape ({d},), got {gain.data.shape}/{shift.data.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.data.dtype))
    xhat = xc * inv
    out_data = xhat * gain.data + shift.data

    reduce_axes = tuple(range(x.data.ndim - 1))

    def _bw(g):
        if gain.requires_grad:
            gain._accumulate((g * xhat).sum(axis=reduce_axes))
        if shift.requires_grad:
            shift._accumulate(g.sum(axis=reduce_axes))
        if x.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x._accumulate((dxhat - m1 - xhat * m2) * inv)

    return _node(out_data, (x, gain, shift), _bw)


def gelu(x) -> Tensor:
    """GELU, tanh approximation."""
    x = _as_tensor(x)
    xd = x.data
    u = _GELU_C * (xd + _GELU_A * xd ** 3)
    t = np.tanh(u)
    out_data = 0.5 * xd * (1.0 + t)

    def _bw(g):
        if x.requires_grad:
            du = _GELU_C * (1.0 + 3.0 * _GELU_A * xd * xd)
            dy = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du
            x._accumulate(g * dy.astype(xd.dtype, copy=False))

    return _node(out_data, (x,), _bw)


# -- bilinear resize ----------------------------------------------------------

_resize_matrix_cache: dict[tuple, np.ndarray] = {}


def _resize_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    """1-d bilinear interpolation weights (align_corners=False)."""
    key = (n_in, n_out, np.dtype(dtype).str)
    cached = _resize_matrix_cache.get(key)
    if cached is not None:
        return cached
    w = np.zeros((n_out, n_in), dtype=np.float64)
    ratio = n_in / n_out
    for o in range(n_out):
        src = (o + 0.5) * ratio - 0.5
        i0f = math.floor(src)
        f = src - i0f
        i0 = min(max(i0f, 0), n_in - 1)
        i1 = min(max(i0f + 1, 0), n_in - 1)
        w[o, i0] += 1.0 - f
        w[o, i1] += f
    w = w.astype(dtype)
    w.setflags(write=False)
    _resize_matrix_cache[key] = w
    return w


def bilinear_resize(x, scale: float) -> Tensor:
    """Resize the last two axes by ``scale`` (align_corners=False).

    ``scale == 1.0`` is an exact pass-through. Output extents are
    ``ceil(scale * extent)`` and must be >= 1.
    """
    x = _as_tensor(x)
    if scale <= 0:
        raise ValueError(f"resize scale must be positive, got {scale}")
    if x.data.ndim < 2:
        raise ShapeError(f"bilinear_resize needs >=2-d input, got shape {x.data.shape}")
    if scale == 1.0:
        out_data = x.data.copy()

        def _bw_id(g):
            if x.requires_grad:
                x._accumulate(g)

        return _node(out_data, (x,), _bw_id)

    H, W = x.data.shape[-2:]
    Ho, Wo = math.ceil(scale * H), math.ceil(scale * W)
    if Ho < 1 or Wo < 1:
        raise ValueError(f"resize scale {scale} collapses extents {(H, W)}")
    A = _resize_matrix(H, Ho, x.data.dtype)      # (Ho, H)
    Bm = _resize_matrix(W, Wo, x.data.dtype)     # (Wo, W)
    out_data = np.matmul(np.matmul(A, x.data), Bm.T)

    def _bw(g):
        if x.requires_grad:
            x._accumulate(np.matmul(np.matmul(A.T, g), Bm))

    return _node(out_data, (x,), _bw)


# -- Adam ---------------------------------------------------------------------


@dataclass
class AdamState:
    """Moment buffers and step counter for bias-corrected Adam."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState):
    """One in-place Adam update over ``params``; returns (params, state)."""
    state.step += 1
    t = state.step
    c1 = 1.0 / (1.0 - state.beta1 ** t)
    c2 = 1.0 / (1.0 - state.beta2 ** t)
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ShapeError(f"adam_step gradient shape {g.shape} != param shape {p.data.shape} for {name!r}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[name] = m
        v = state.v.get(name)
        if v is None:
            v = np.zeros_like(p.data)
            state.v[name] = v
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m * c1) / (np.sqrt(v * c2) + state.eps)
    return params, state


# -- gradient checking --------------------------------------------------------


def grad_check(f, x: Tensor, eps: float = 1e-3, max_elements: int | None = None, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    The probe runs the graph in float64 so the comparison isn't drowned
    by float32 quantization of the loss value. ``max_elements`` caps the
    number of checked coordinates (seeded uniform subset) for very large
    tensors; default checks every element.
    """
    if not (1e-4 <= eps <= 1e-2):
        raise ValueError(f"grad_check eps must lie in [1e-4, 1e-2], got {eps}")
    base = x.data.astype(np.float64)
    probe = Tensor(base.copy(), requires_grad=True)
    y = f(probe)
    if y.data.size != 1:
        raise ShapeError(f"grad_check target must be scalar-valued, got shape {y.data.shape}")
    if not np.isfinite(float(y.data)):
        raise ValueError("grad_check: f(x) is not finite")
    y.backward()
    analytic = (probe.grad if probe.grad is not None else np.zeros_like(base)).reshape(-1)

    flat = base.reshape(-1)
    n = flat.size
    if max_elements is not None and max_elements < n:
        rng = np.random.default_rng(seed)
        indices = rng.choice(n, size=max_elements, replace=False)
        indices.sort()
    else:
        indices = np.arange(n)

    worst = 0.0
    for i in indices:
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(Tensor(base)).data)
        flat[i] = orig - eps
        fm = float(f(Tensor(base)).data)
        flat[i] = orig
        numeric = (fp - fm) / (2.0 * eps)
        a = analytic[i]
        err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        if err > worst:
            worst = err
    return float(worst)


# -- container format ---------------------------------------------------------


def save_tensor(path, t) -> None:
    """Write a tensor to the TSR1 container (float32, little-endian)."""
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    arr = np.ascontiguousarray(arr, dtype="<f4")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(CONTAINER_MAGIC)
        fh.write(struct.pack("<I", CONTAINER_VERSION))
        fh.write(struct.pack("<BB", CONTAINER_DTYPE_F32, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes())


def load_tensor(path) -> Tensor:
    """Read a TSR1 container back into a float32 tensor."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != CONTAINER_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}, expected {CONTAINER_MAGIC!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CONTAINER_VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    dtype_code, ndim = struct.unpack_from("<BB", raw, 8)
    if dtype_code != CONTAINER_DTYPE_F32:
        raise ValueError(f"{path}: unsupported dtype code {dtype_code}")
    shape = struct.unpack_from(f"<{ndim}Q", raw, 10)
    offset = 10 + 8 * ndim
    count = int(np.prod(shape)) if ndim else 1
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
    if data.size != count:
        raise ValueError(f"{path}: payload truncated ({data.size} of {count} values)")
    return Tensor(data.reshape(shape).astype(np.float32))


def save_tensor_dir(directory, tensors: Mapping[str, Tensor], extra: dict | None = None) -> None:
    """Write a directory of TSR1 files plus an index.json manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {"tensors": {}}
    if extra:
        index.update(extra)
        index["tensors"] = {}
    for name, t in tensors.items():
        fname = name + ".tsr"
        save_tensor(directory / fname, t)
        index["tensors"][name] = fname
    with open(directory / "index.json", "w") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_tensor_dir(directory) -> tuple[dict[str, Tensor], dict]:
    """Load a checkpoint directory; returns (tensors, index manifest)."""
    directory = Path(directory)
    index_path = directory / "index.json"
    if not index_path.exists():
        raise FileNotFoundError(f"no index.json in checkpoint directory {directory}")
    with open(index_path) as fh:
        index = json.load(fh)
    tensors = {name: load_tensor(directory / fname) for name, fname in index["tensors"].items()}
    return tensors, index
