"""Dense NCHW tensor kernels: convolution, batch norm, activations, pooling.

Two convolution paths are provided. ``conv2d`` computes each output site
directly from its receptive field and serves as the reference path;
``conv2d_lowered`` rearranges input patches into a matrix and reduces the
convolution to a single matrix multiply. Both produce the same values up to
float32 rounding.

All operations are pure: tensors are immutable once constructed, and no op
mutates its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are inconsistent with an operation."""


@dataclass(frozen=True)
class Tensor:
    """Immutable dense 4-D feature map in (n, c, h, w) row-major layout.

    2-D weight matrices are carried as (out, in, 1, 1).
    """

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float32)
        if a.ndim != 4:
            raise ShapeError(f"tensor must be 4-D (n,c,h,w), got ndim={a.ndim}")
        if not a.flags.c_contiguous:
            a = np.ascontiguousarray(a)
        a = a.view()
        a.flags.writeable = False
        object.__setattr__(self, "data", a)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    @classmethod
    def zeros(cls, shape: tuple[int, int, int, int]) -> "Tensor":
        return cls(np.zeros(shape, dtype=np.float32))

    @classmethod
    def full(cls, shape: tuple[int, int, int, int], value: float) -> "Tensor":
        return cls(np.full(shape, value, dtype=np.float32))


@dataclass(frozen=True)
class ConvParams:
    """Convolution weights: (c_out, c_in, k, k) kernel, optional bias, stride, padding."""

    weight: Tensor
    bias: np.ndarray | None = None
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        c_out, c_in, kh, kw = self.weight.shape
        if kh != kw:
            raise ShapeError(f"kernel must be square, got {kh}x{kw}")
        if self.stride < 1:
            raise ShapeError(f"stride must be positive, got {self.stride}")
        if self.padding < 0:
            raise ShapeError(f"padding must be non-negative, got {self.padding}")
        if self.bias is not None:
            b = np.asarray(self.bias, dtype=np.float32)
            if b.shape != (c_out,):
                raise ShapeError(f"bias length {b.shape} does not match c_out={c_out}")
            b = b.view()
            b.flags.writeable = False
            object.__setattr__(self, "bias", b)

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    @property
    def c_in(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel(self) -> int:
        return self.weight.shape[2]


@dataclass(frozen=True)
class BnParams:
    """Inference-mode batch-norm parameters, one entry per channel."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-3

    def __post_init__(self):
        vecs = {}
        for name in ("gamma", "beta", "running_mean", "running_var"):
            v = np.asarray(getattr(self, name), dtype=np.float32).reshape(-1)
            v = v.view()
            v.flags.writeable = False
            vecs[name] = v
        lengths = {v.shape[0] for v in vecs.values()}
        if len(lengths) != 1:
            raise ShapeError(f"batch-norm vectors disagree in length: {sorted(lengths)}")
        if np.any(vecs["running_var"] < 0):
            raise ValueError("running_var must be non-negative")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        for name, v in vecs.items():
            object.__setattr__(self, name, v)

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


def _out_dim(size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ShapeError(
            f"convolution output dim < 1 (size={size}, k={kernel}, "
            f"stride={stride}, pad={padding})"
        )
    return out


def _check_conv_input(x: Tensor, p: ConvParams) -> tuple[int, int]:
    n, c, h, w = x.shape
    if c != p.c_in:
        raise ShapeError(f"input has {c} channels, kernel expects {p.c_in}")
    return _out_dim(h, p.kernel, p.stride, p.padding), _out_dim(w, p.kernel, p.stride, p.padding)


def conv2d(x: Tensor, p: ConvParams) -> Tensor:
    """Direct 2-D convolution (cross-correlation): reference path.

    Each output value is the dot product of the receptive field with the
    kernel, plus bias. Accumulation happens one kernel tap at a time.
    """
    h_out, w_out = _check_conv_input(x, p)
    n, _, h, w = x.shape
    k, s, pad = p.kernel, p.stride, p.padding
    xp = x.data
    if pad:
        xp = np.pad(xp, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    w4 = p.weight.data
    out = np.zeros((n, p.c_out, h_out, w_out), dtype=np.float32)
    for ki in range(k):
        for kj in range(k):
            patch = xp[:, :, ki : ki + s * h_out : s, kj : kj + s * w_out : s]
            # (n, c_in, h_out, w_out) x (c_out, c_in) summed over c_in
            out += np.einsum("nchw,oc->nohw", patch, w4[:, :, ki, kj], optimize=True)
    if p.bias is not None:
        out += p.bias[None, :, None, None]
    return Tensor(out)


def conv2d_lowered(x: Tensor, p: ConvParams) -> Tensor:
    """Convolution via patch-matrix lowering and a single matrix multiply."""
    h_out, w_out = _check_conv_input(x, p)
    n, c, _, _ = x.shape
    k, s, pad = p.kernel, p.stride, p.padding
    xp = x.data
    if pad:
        xp = np.pad(xp, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    if k == 1:
        # pointwise: a reshape is already the patch matrix
        cols = xp[:, :, ::s, ::s].transpose(0, 2, 3, 1).reshape(n * h_out * w_out, c)
    else:
        windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
        windows = windows[:, :, ::s, ::s]  # (n, c, h_out, w_out, k, k)
        cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * h_out * w_out, c * k * k)
    wmat = p.weight.data.reshape(p.c_out, c * k * k)
    out = cols @ wmat.T
    if p.bias is not None:
        out += p.bias
    out = out.reshape(n, h_out, w_out, p.c_out).transpose(0, 3, 1, 2)
    return Tensor(np.ascontiguousarray(out))


def batchnorm_infer(x: Tensor, bn: BnParams) -> Tensor:
    """Per-channel affine normalization using frozen running statistics."""
    n, c, h, w = x.shape
    if c != bn.channels:
        raise ShapeError(f"input has {c} channels, batch-norm expects {bn.channels}")
    scale = bn.gamma / np.sqrt(bn.running_var + np.float32(bn.eps))
    shift = bn.beta - bn.running_mean * scale
    out = x.data * scale[None, :, None, None] + shift[None, :, None, None]
    return Tensor(out.astype(np.float32))


def fold_bn(p: ConvParams, bn: BnParams) -> ConvParams:
    """Absorb inference-mode batch norm into the preceding convolution.

    The returned params always carry a bias, so conv2d(x, folded)
    reproduces batchnorm_infer(conv2d(x, p), bn).
    """
    if p.c_out != bn.channels:
        raise ShapeError(f"conv has {p.c_out} output channels, batch-norm expects {bn.channels}")
    scale = bn.gamma / np.sqrt(bn.running_var + np.float32(bn.eps))
    weight = p.weight.data * scale[:, None, None, None]
    bias = p.bias if p.bias is not None else np.zeros(p.c_out, dtype=np.float32)
    bias = bn.beta + (bias - bn.running_mean) * scale
    return ConvParams(
        weight=Tensor(weight.astype(np.float32)),
        bias=bias.astype(np.float32),
        stride=p.stride,
        padding=p.padding,
    )


def silu(x: Tensor) -> Tensor:
    """Elementwise x * sigmoid(x); sigmoid written via tanh to avoid overflow."""
    a = x.data
    return Tensor(a * (0.5 * (1.0 + np.tanh(0.5 * a))))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis.

    Accepts a length-K vector or a batch of rows; the max is subtracted
    before exponentiation so arbitrarily large logits do not overflow.
    Computed in float64: float32 exp underflows to an exact zero once the
    gap to the max passes ~88, which would break strict positivity.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0:
        raise ValueError("softmax of empty input")
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax requires finite logits")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean per (n, c), returned as (n, c, 1, 1)."""
    n, c, h, w = x.shape
    if h < 1 or w < 1:
        raise ShapeError(f"cannot pool empty spatial dims {h}x{w}")
    return Tensor(x.data.mean(axis=(2, 3), keepdims=True).astype(np.float32))


def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map w @ x + b for a single vector or a batch of row vectors."""
    x = np.asarray(x, dtype=np.float32)
    weight = np.asarray(weight, dtype=np.float32)
    bias = np.asarray(bias, dtype=np.float32)
    d_out, d_in = weight.shape
    if x.shape[-1] != d_in:
        raise ShapeError(f"input dim {x.shape[-1]} does not match weight d_in={d_in}")
    if bias.shape != (d_out,):
        raise ShapeError(f"bias shape {bias.shape} does not match d_out={d_out}")
    return x @ weight.T + bias


def _check_spatial_match(tensors: tuple[Tensor, ...]) -> None:
    shapes = {(t.shape[0],) + t.shape[2:] for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"batch/spatial dims disagree: {sorted(shapes)}")


def concat_channels(*tensors: Tensor) -> Tensor:
    """Concatenate along the channel axis; batch and spatial dims must agree."""
    if not tensors:
        raise ShapeError("concat_channels needs at least one tensor")
    _check_spatial_match(tensors)
    return Tensor(np.concatenate([t.data for t in tensors], axis=1))


def split_channels(x: Tensor, parts: list[int] | tuple[int, ...]) -> tuple[Tensor, ...]:
    """Partition the channel axis into consecutive chunks of the given sizes."""
    if sum(parts) != x.shape[1]:
        raise ShapeError(f"split sizes {list(parts)} do not sum to {x.shape[1]} channels")
    out = []
    at = 0
    for p in parts:
        out.append(Tensor(np.ascontiguousarray(x.data[:, at : at + p])))
        at += p
    return tuple(out)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; shapes must match exactly."""
    if a.shape != b.shape:
        raise ShapeError(f"add shapes disagree: {a.shape} vs {b.shape}")
    return Tensor(a.data + b.data)
