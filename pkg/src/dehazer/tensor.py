"""Dense 4-D tensor operations with hand-written forward and backward passes.

Tensors are contiguous numpy arrays in (batch, channel, height, width)
order, float32 or float64, uniform per array. Convolutions are realized
as an explicit patch gather (im2col) followed by a BLAS matrix multiply,
with the gather/scatter inner loops provided by :mod:`dehazer.kernels`;
the workspace for the patch matrix is chunked over output rows so memory
stays bounded on large images. All operations are pure: inputs are never
modified and results are freshly allocated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels, memtrack

# Caps the per-sample patch-matrix chunk; large images are processed in
# row bands of at most this many bytes (plus an equally sized GEMM buffer).
WORKSPACE_LIMIT = 64 << 20

_FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Dimension contract violation; `axis` names the offending axis."""

    def __init__(self, message: str, axis: str | None = None):
        super().__init__(message)
        self.axis = axis


@dataclass(frozen=True)
class ConvSpec:
    """Static geometry of one convolution or transposed-convolution layer."""

    kernel: int
    stride: int
    pad: int
    in_channels: int
    out_channels: int

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ShapeError(f"kernel must be odd and positive, got {self.kernel}",
                             axis="kernel")
        if self.stride < 1:
            raise ShapeError(f"stride must be positive, got {self.stride}", axis="stride")
        if self.pad < 0:
            raise ShapeError(f"pad must be non-negative, got {self.pad}", axis="pad")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ShapeError("channel counts must be positive", axis="channel")

    def out_size(self, size: int) -> int:
        """Spatial output extent of the forward convolution."""
        return (size + 2 * self.pad - self.kernel) // self.stride + 1

    def transposed_out_size(self, size: int) -> int:
        """Spatial output extent of the transposed convolution.

        One implicit output pad row/column of `stride - 1` at the bottom/right
        makes the k=3, s=2, pad=1 layer double its input exactly.
        """
        return (size - 1) * self.stride - 2 * self.pad + self.kernel + (self.stride - 1)


def _check_dtype(name: str, *arrays):
    dt = arrays[0].dtype
    if dt.type not in _FLOAT_DTYPES:
        raise TypeError(f"{name}: dtype must be float32 or float64, got {dt}")
    for a in arrays[1:]:
        if a is not None and a.dtype != dt:
            raise TypeError(f"{name}: mixed dtypes {dt} and {a.dtype}")
    return dt


def _check_nchw(name: str, arr, what: str = "input"):
    if arr.ndim != 4:
        raise ShapeError(f"{name}: {what} must be 4-D (n, c, h, w), got {arr.ndim}-D",
                         axis="rank")


def _chunk_rows(ckk: int, ow: int, oh: int, itemsize: int) -> int:
    per_row = ckk * ow * itemsize
    return max(1, min(oh, WORKSPACE_LIMIT // max(per_row, 1)))


def _flat_view(buf: np.ndarray, rows: int, cols: int) -> np.ndarray:
    # contiguous (rows, cols) view over the head of a preallocated buffer
    return buf.ravel()[: rows * cols].reshape(rows, cols)


def _core_forward(src, w2, dst, k, s, p):
    """dst[i] = w2 @ patches(src[i]), chunked over output rows."""
    n = src.shape[0]
    ckk, oh, ow = w2.shape[1], dst.shape[2], dst.shape[3]
    co = dst.shape[1]
    rows = _chunk_rows(ckk, ow, oh, src.itemsize)
    colbuf = memtrack.empty((ckk, rows * ow), src.dtype, "workspace")
    outbuf = memtrack.empty((co, rows * ow), src.dtype, "workspace")
    dst2 = dst.reshape(n, co, oh * ow)
    for i in range(n):
        for r0 in range(0, oh, rows):
            r1 = min(oh, r0 + rows)
            cols = (r1 - r0) * ow
            piece = _flat_view(colbuf, ckk, cols)
            kernels.gather_patches(src[i], k, s, p, r0, r1, piece)
            tmp = _flat_view(outbuf, co, cols)
            np.matmul(w2, piece, out=tmp)
            dst2[i, :, r0 * ow : r1 * ow] = tmp


def _core_scatter(src, w2, dst, k, s, p):
    """dst[i] += scatter(w2.T @ src[i]): the adjoint of _core_forward."""
    n = src.shape[0]
    co, oh, ow = src.shape[1], src.shape[2], src.shape[3]
    ckk = w2.shape[1]
    rows = _chunk_rows(ckk, ow, oh, src.itemsize)
    colbuf = memtrack.empty((ckk, rows * ow), src.dtype, "workspace")
    src2 = src.reshape(n, co, oh * ow)
    for i in range(n):
        for r0 in range(0, oh, rows):
            r1 = min(oh, r0 + rows)
            cols = (r1 - r0) * ow
            piece = _flat_view(colbuf, ckk, cols)
            np.matmul(w2.T, src2[i, :, r0 * ow : r1 * ow], out=piece)
            kernels.scatter_patches(piece, k, s, p, r0, r1, dst[i])


def _core_weight_grad(img, out_side, k, s, p, ckk):
    """sum_i out_side[i] @ patches(img[i]).T -> (out_channels, ckk)."""
    n = img.shape[0]
    co, oh, ow = out_side.shape[1], out_side.shape[2], out_side.shape[3]
    rows = _chunk_rows(ckk, ow, oh, img.itemsize)
    colbuf = memtrack.empty((ckk, rows * ow), img.dtype, "workspace")
    accbuf = memtrack.empty((co, ckk), img.dtype, "workspace")
    gw2 = np.zeros((co, ckk), dtype=img.dtype)
    out2 = out_side.reshape(n, co, oh * ow)
    for i in range(n):
        for r0 in range(0, oh, rows):
            r1 = min(oh, r0 + rows)
            cols = (r1 - r0) * ow
            piece = _flat_view(colbuf, ckk, cols)
            kernels.gather_patches(img[i], k, s, p, r0, r1, piece)
            np.matmul(out2[i, :, r0 * ow : r1 * ow], piece.T, out=accbuf)
            gw2 += accbuf
    return gw2


def _validate_conv(name, x, weight, bias, spec, transposed):
    _check_nchw(name, x)
    _check_nchw(name, weight, "weight")
    dt = _check_dtype(name, x, weight, bias)
    k = spec.kernel
    if transposed:
        expect = (spec.in_channels, spec.out_channels, k, k)
    else:
        expect = (spec.out_channels, spec.in_channels, k, k)
    if tuple(weight.shape) != expect:
        raise ShapeError(
            f"{name}: weight dims {tuple(weight.shape)} do not match spec {expect}",
            axis="weight")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(
            f"{name}: input has {x.shape[1]} channels, spec expects {spec.in_channels}",
            axis="channel")
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ShapeError(
            f"{name}: bias length {bias.shape} != out_channels {spec.out_channels}",
            axis="bias")
    return dt


def conv2d(x, weight, bias, spec: ConvSpec):
    """Cross-correlation with zero padding.

    x: (n, in_channels, h, w); weight: (out_channels, in_channels, k, k);
    bias: (out_channels,) or None. Output spatial dims follow
    floor((size + 2*pad - k)/stride) + 1.
    """
    x = np.ascontiguousarray(x)
    _validate_conv("conv2d", x, weight, bias, spec, transposed=False)
    n, _, h, w = x.shape
    oh, ow = spec.out_size(h), spec.out_size(w)
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"conv2d: output dims {oh}x{ow} not positive for input {h}x{w}",
            axis="spatial")
    out = memtrack.empty((n, spec.out_channels, oh, ow), x.dtype)
    w2 = weight.reshape(spec.out_channels, -1)
    _core_forward(x, w2, out, spec.kernel, spec.stride, spec.pad)
    if bias is not None:
        out += bias.reshape(1, -1, 1, 1)
    return out


def conv2d_backward(x, weight, spec: ConvSpec, grad_out):
    """Gradients of conv2d w.r.t. input, weight and bias."""
    x = np.ascontiguousarray(x)
    grad_out = np.ascontiguousarray(grad_out)
    _validate_conv("conv2d_backward", x, weight, None, spec, transposed=False)
    _check_dtype("conv2d_backward", x, grad_out)
    n, _, h, w = x.shape
    expect = (n, spec.out_channels, spec.out_size(h), spec.out_size(w))
    if tuple(grad_out.shape) != expect:
        raise ShapeError(
            f"conv2d_backward: grad_out dims {tuple(grad_out.shape)} != {expect}",
            axis="grad_out")
    k, s, p = spec.kernel, spec.stride, spec.pad
    grad_bias = grad_out.sum(axis=(0, 2, 3))
    gw2 = _core_weight_grad(x, grad_out, k, s, p, spec.in_channels * k * k)
    grad_input = memtrack.zeros(x.shape, x.dtype)
    _core_scatter(grad_out, weight.reshape(spec.out_channels, -1), grad_input, k, s, p)
    return grad_input, gw2.reshape(weight.shape), grad_bias


def deconv2d(x, weight, bias, spec: ConvSpec):
    """Transposed convolution (the adjoint of conv2d with the same weight).

    x: (n, in_channels, h, w); weight: (in_channels, out_channels, k, k).
    Output spatial dims are (size-1)*stride - 2*pad + k + (stride-1); for
    k=3, stride=2, pad=1 this is exactly twice the input. With bias zero,
    <conv2d(a, w), x> == <a, deconv2d(x, w)> for all compatible a.
    """
    x = np.ascontiguousarray(x)
    _validate_conv("deconv2d", x, weight, bias, spec, transposed=True)
    n, _, h, w = x.shape
    oh, ow = spec.transposed_out_size(h), spec.transposed_out_size(w)
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"deconv2d: output dims {oh}x{ow} not positive for input {h}x{w}",
            axis="spatial")
    out = memtrack.zeros((n, spec.out_channels, oh, ow), x.dtype)
    _core_scatter(x, weight.reshape(spec.in_channels, -1), out,
                  spec.kernel, spec.stride, spec.pad)
    if bias is not None:
        out += bias.reshape(1, -1, 1, 1)
    return out


def deconv2d_backward(x, weight, spec: ConvSpec, grad_out):
    """Gradients of deconv2d w.r.t. input, weight and bias."""
    x = np.ascontiguousarray(x)
    grad_out = np.ascontiguousarray(grad_out)
    _validate_conv("deconv2d_backward", x, weight, None, spec, transposed=True)
    _check_dtype("deconv2d_backward", x, grad_out)
    n, _, h, w = x.shape
    expect = (n, spec.out_channels, spec.transposed_out_size(h),
              spec.transposed_out_size(w))
    if tuple(grad_out.shape) != expect:
        raise ShapeError(
            f"deconv2d_backward: grad_out dims {tuple(grad_out.shape)} != {expect}",
            axis="grad_out")
    k, s, p = spec.kernel, spec.stride, spec.pad
    grad_bias = grad_out.sum(axis=(0, 2, 3))
    # grad w.r.t. the deconv input is a plain forward convolution of grad_out
    grad_input = memtrack.empty(x.shape, x.dtype)
    _core_forward(grad_out, weight.reshape(spec.in_channels, -1), grad_input, k, s, p)
    gw2 = _core_weight_grad(grad_out, x, k, s, p, spec.out_channels * k * k)
    return grad_input, gw2.reshape(weight.shape), grad_bias


def relu(x):
    """Elementwise max(0, x)."""
    return memtrack.track(np.maximum(x, 0))


def relu_backward(x, grad_out):
    """Pass grad_out where x > 0; the gradient at exactly 0 is 0."""
    if x.shape != grad_out.shape:
        raise ShapeError(
            f"relu_backward: dims {x.shape} != grad dims {grad_out.shape}")
    return memtrack.track(grad_out * (x > 0))


def add_channels(a, b):
    """Elementwise sum; dims must match exactly (no broadcasting)."""
    if a.shape != b.shape:
        for axis, (da, db) in enumerate(zip(a.shape, b.shape)):
            if da != db:
                raise ShapeError(
                    f"add_channels: axis {axis} mismatch ({da} vs {db})",
                    axis=str(axis))
        raise ShapeError(f"add_channels: rank mismatch {a.shape} vs {b.shape}",
                         axis="rank")
    _check_dtype("add_channels", a, b)
    return memtrack.track(a + b)


def add_channels_backward(grad_out):
    """The sum distributes grad_out to both addends unchanged."""
    return grad_out, grad_out


@dataclass
class GradCheckReport:
    max_rel_err: float
    tolerance: float
    passed: bool
    worst_input: int
    worst_coord: tuple
    coords_checked: int

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}: max rel err {self.max_rel_err:.3e} "
                f"(tol {self.tolerance:.1e}, {self.coords_checked} coords, "
                f"worst input {self.worst_input} at {self.worst_coord})")


def grad_check(forward, backward, inputs, tolerance, step=1e-5, seed=0):
    """Compare an analytic backward pass against central finite differences.

    forward(*inputs) must return an ndarray; backward(*inputs, cotangent)
    must return one gradient per input (None for non-differentiable ones).
    The scalar probed is <forward(inputs), R> for a fixed Gaussian R, and
    every coordinate of every differentiable input is perturbed by +-step.
    Inputs must be float64.
    """
    inputs = [np.ascontiguousarray(v) for v in inputs]
    for v in inputs:
        if v.dtype != np.float64:
            raise TypeError("grad_check: inputs must be float64")
    out = np.asarray(forward(*inputs))
    if not np.all(np.isfinite(out)):
        raise ValueError("grad_check: forward produced non-finite values")
    rng = np.random.default_rng(seed)
    cot = rng.standard_normal(out.shape)
    grads = backward(*inputs, cot)
    if len(grads) != len(inputs):
        raise ValueError(
            f"grad_check: backward returned {len(grads)} gradients "
            f"for {len(inputs)} inputs")

    def probe():
        val = float(np.vdot(np.asarray(forward(*inputs)), cot))
        if not np.isfinite(val):
            raise ValueError("grad_check: non-finite value during probing")
        return val

    worst = (0.0, 0, ())
    checked = 0
    for idx, (x, g) in enumerate(zip(inputs, grads)):
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise ValueError("grad_check: analytic gradient is non-finite")
        it = np.nditer(x, flags=["multi_index"])
        while not it.finished:
            coord = it.multi_index
            orig = x[coord]
            x[coord] = orig + step
            lp = probe()
            x[coord] = orig - step
            lm = probe()
            x[coord] = orig
            fd = (lp - lm) / (2.0 * step)
            a = float(g[coord])
            rel = abs(a - fd) / max(abs(a), abs(fd), 1e-6)
            if rel > worst[0]:
                worst = (rel, idx, coord)
            checked += 1
            it.iternext()
    return GradCheckReport(
        max_rel_err=worst[0], tolerance=tolerance, passed=worst[0] < tolerance,
        worst_input=worst[1], worst_coord=worst[2], coords_checked=checked)
