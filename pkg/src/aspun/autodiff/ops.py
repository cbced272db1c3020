"""Differentiable operations.

Shape conventions:

* feature maps are ``(H, W, C)`` channels-last;
* convolution weights are ``(kh, kw, c_in_per_group, c_out)``;
* ``transposed_conv2d`` with a given weight is the exact linear adjoint of
  ``conv2d`` with the same weight and hyperparameters;
* elementwise ops broadcast only over leading extents: the smaller shape
  must be a suffix of the larger one (scalars count as the empty suffix);
* pooling divides by the full window area, including padded zeros;
* ``gelu`` uses the exact erf form.

Each op validates shapes eagerly and registers a backward closure via
:func:`aspun.autodiff.tensor.make_result`.
"""

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf, expit

from .. import cassi
from ..errors import ShapeError
from .tensor import Tensor, as_tensor, make_result

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


# --------------------------------------------------------------------------
# Broadcasting helpers (leading extents only)
# --------------------------------------------------------------------------

def _check_suffix_broadcast(a_shape: tuple, b_shape: tuple):
    if a_shape == b_shape:
        return
    small, large = sorted((a_shape, b_shape), key=len)
    if len(small) == len(large) or (len(small) > 0 and large[-len(small):] != small):
        raise ShapeError(
            f"shapes {a_shape} and {b_shape} do not broadcast over leading extents"
        )


def _reduce_to_shape(grad: np.ndarray, shape: tuple) -> np.ndarray:
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    return grad


# --------------------------------------------------------------------------
# Elementwise arithmetic
# --------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_suffix_broadcast(a.shape, b.shape)

    def backward(g):
        return _reduce_to_shape(g, a.shape), _reduce_to_shape(g, b.shape)

    return make_result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_suffix_broadcast(a.shape, b.shape)

    def backward(g):
        return _reduce_to_shape(g, a.shape), _reduce_to_shape(-g, b.shape)

    return make_result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_suffix_broadcast(a.shape, b.shape)
    a_data, b_data = a.data, b.data

    def backward(g):
        return (_reduce_to_shape(g * b_data, a.shape),
                _reduce_to_shape(g * a_data, b.shape))

    return make_result(a_data * b_data, (a, b), backward, "mul")


def matmul(a, b) -> Tensor:
    """Stacked matrix product; leading batch dims must match or be absent."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must have at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    lead_a, lead_b = a.shape[:-2], b.shape[:-2]
    if lead_a != lead_b and lead_a != () and lead_b != ():
        raise ShapeError(f"matmul leading dims differ: {a.shape} @ {b.shape}")
    a_data, b_data = a.data, b.data

    def backward(g):
        ga = _reduce_to_shape(g @ np.swapaxes(b_data, -1, -2), a.shape)
        gb = _reduce_to_shape(np.swapaxes(a_data, -1, -2) @ g, b.shape)
        return ga, gb

    return make_result(a_data @ b_data, (a, b), backward, "matmul")


# --------------------------------------------------------------------------
# Convolution family
# --------------------------------------------------------------------------

def _conv_out_size(extent: int, kernel: int, stride: int, padding: int) -> int:
    out = (extent + 2 * padding - kernel) // stride + 1
    if out < 1 or extent + 2 * padding < kernel:
        raise ShapeError(
            f"kernel {kernel} with stride {stride}, padding {padding} "
            f"does not fit extent {extent}"
        )
    return out


def _im2col(padded: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # (Hp, Wp, C) -> (Ho, Wo, kh, kw, C)
    windows = sliding_window_view(padded, (kh, kw), axis=(0, 1))[::stride, ::stride]
    return windows.transpose(0, 1, 3, 4, 2)


def _conv_fwd_data(x, w, bias, stride, padding, groups):
    height, width, c_in = x.shape
    kh, kw, cin_g, c_out = w.shape
    if c_in != cin_g * groups:
        raise ShapeError(f"input channels {c_in} != {cin_g} * groups {groups}")
    if c_out % groups:
        raise ShapeError(f"output channels {c_out} not divisible by groups {groups}")
    if kh == 1 and kw == 1 and stride == 1 and padding == 0 and groups == 1:
        out = x @ w[0, 0]
    else:
        out_h = _conv_out_size(height, kh, stride, padding)
        out_w = _conv_out_size(width, kw, stride, padding)
        padded = np.pad(x, ((padding, padding), (padding, padding), (0, 0)))
        cols = _im2col(padded, kh, kw, stride)
        cout_g = c_out // groups
        out = np.empty((out_h, out_w, c_out), dtype=x.dtype)
        cols_g = cols.reshape(out_h * out_w, kh, kw, groups, cin_g)
        for g in range(groups):
            flat = cols_g[:, :, :, g, :].reshape(out_h * out_w, kh * kw * cin_g)
            w_flat = w[:, :, :, g * cout_g:(g + 1) * cout_g].reshape(kh * kw * cin_g, cout_g)
            out[:, :, g * cout_g:(g + 1) * cout_g] = (flat @ w_flat).reshape(out_h, out_w, cout_g)
    if bias is not None:
        out = out + bias
    return out


def _conv_dw_data(x, dy, stride, padding, groups, w_shape):
    kh, kw, cin_g, c_out = w_shape
    out_h, out_w, _ = dy.shape
    padded = np.pad(x, ((padding, padding), (padding, padding), (0, 0)))
    cols = _im2col(padded, kh, kw, stride)
    cout_g = c_out // groups
    dw = np.empty(w_shape, dtype=dy.dtype)
    cols_g = cols.reshape(out_h * out_w, kh, kw, groups, cin_g)
    for g in range(groups):
        flat = cols_g[:, :, :, g, :].reshape(out_h * out_w, kh * kw * cin_g)
        dy_flat = dy[:, :, g * cout_g:(g + 1) * cout_g].reshape(out_h * out_w, cout_g)
        dw[:, :, :, g * cout_g:(g + 1) * cout_g] = (flat.T @ dy_flat).reshape(kh, kw, cin_g, cout_g)
    return dw


def _conv_dx_data(dy, w, stride, padding, groups, in_spatial):
    kh, kw, cin_g, c_out = w.shape
    out_h, out_w, _ = dy.shape
    height, width = in_spatial
    c_in = cin_g * groups
    cout_g = c_out // groups
    dcols = np.empty((out_h * out_w, kh, kw, groups, cin_g), dtype=dy.dtype)
    for g in range(groups):
        w_flat = w[:, :, :, g * cout_g:(g + 1) * cout_g].reshape(kh * kw * cin_g, cout_g)
        dy_flat = dy[:, :, g * cout_g:(g + 1) * cout_g].reshape(out_h * out_w, cout_g)
        dcols[:, :, :, g, :] = (dy_flat @ w_flat.T).reshape(out_h * out_w, kh, kw, cin_g)
    dcols = dcols.reshape(out_h, out_w, kh, kw, c_in)
    dx_padded = np.zeros((height + 2 * padding, width + 2 * padding, c_in), dtype=dy.dtype)
    for i in range(kh):
        for j in range(kw):
            dx_padded[i:i + stride * out_h:stride, j:j + stride * out_w:stride] += dcols[:, :, i, j]
    if padding:
        return dx_padded[padding:padding + height, padding:padding + width]
    return dx_padded


def conv2d(x, w, bias=None, stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """2D cross-correlation over an ``(H, W, C)`` map with zero padding."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError(f"conv2d expects (H, W, C) input and 4D weight, got {x.shape}, {w.shape}")
    bias_t = None if bias is None else as_tensor(bias)
    if bias_t is not None and bias_t.shape != (w.shape[3],):
        raise ShapeError(f"conv2d bias shape {bias_t.shape} != ({w.shape[3]},)")
    x_data, w_data = x.data, w.data
    out = _conv_fwd_data(x_data, w_data, None if bias_t is None else bias_t.data,
                         stride, padding, groups)

    def backward(g):
        dx = _conv_dx_data(g, w_data, stride, padding, groups, x_data.shape[:2])
        dw = _conv_dw_data(x_data, g, stride, padding, groups, w_data.shape)
        if bias_t is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 1))

    parents = (x, w) if bias_t is None else (x, w, bias_t)
    return make_result(out, parents, backward, "conv2d")


def transposed_conv2d(x, w, bias=None, stride: int = 1, padding: int = 0,
                      groups: int = 1, output_spatial: tuple[int, int] | None = None) -> Tensor:
    """Adjoint of :func:`conv2d` with the same weight and hyperparameters.

    Input channels equal the conv's output channels; the result has the
    conv's input channel count.  ``output_spatial`` defaults to
    ``(H - 1) * stride + kh - 2 * padding`` per axis.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError(
            f"transposed_conv2d expects (H, W, C) input and 4D weight, got {x.shape}, {w.shape}"
        )
    kh, kw, cin_g, c_out = w.shape
    if x.shape[2] != c_out:
        raise ShapeError(f"input channels {x.shape[2]} != weight output channels {c_out}")
    height, width, _ = x.shape
    if output_spatial is None:
        output_spatial = ((height - 1) * stride + kh - 2 * padding,
                          (width - 1) * stride + kw - 2 * padding)
    if (_conv_out_size(output_spatial[0], kh, stride, padding) != height
            or _conv_out_size(output_spatial[1], kw, stride, padding) != width):
        raise ShapeError(
            f"output spatial {output_spatial} is inconsistent with input {x.shape[:2]}"
        )
    bias_t = None if bias is None else as_tensor(bias)
    if bias_t is not None and bias_t.shape != (cin_g * groups,):
        raise ShapeError(f"transposed_conv2d bias shape {bias_t.shape} != ({cin_g * groups},)")
    x_data, w_data = x.data, w.data
    out = _conv_dx_data(x_data, w_data, stride, padding, groups, output_spatial)
    if bias_t is not None:
        out = out + bias_t.data

    def backward(g):
        dx = _conv_fwd_data(g, w_data, None, stride, padding, groups)
        dw = _conv_dw_data(g, x_data, stride, padding, groups, w_data.shape)
        if bias_t is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 1))

    parents = (x, w) if bias_t is None else (x, w, bias_t)
    return make_result(out, parents, backward, "transposed_conv2d")


def avg_pool2d(x, kernel: int, stride: int | None = None, padding: int = 0) -> Tensor:
    """Average pooling; the divisor is always kernel**2 (pad included)."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"avg_pool2d expects (H, W, C), got {x.shape}")
    stride = kernel if stride is None else stride
    height, width, channels = x.shape
    out_h = _conv_out_size(height, kernel, stride, padding)
    out_w = _conv_out_size(width, kernel, stride, padding)
    padded = np.pad(x.data, ((padding, padding), (padding, padding), (0, 0)))
    windows = sliding_window_view(padded, (kernel, kernel), axis=(0, 1))[::stride, ::stride]
    out = windows.mean(axis=(3, 4))
    area = float(kernel * kernel)

    def backward(g):
        spread = g / area
        dx_padded = np.zeros((height + 2 * padding, width + 2 * padding, channels),
                             dtype=g.dtype)
        for i in range(kernel):
            for j in range(kernel):
                dx_padded[i:i + stride * out_h:stride, j:j + stride * out_w:stride] += spread
        if padding:
            return (dx_padded[padding:padding + height, padding:padding + width],)
        return (dx_padded,)

    return make_result(out, (x,), backward, "avg_pool2d")


def global_avg_pool(x) -> Tensor:
    """Mean over both spatial axes: (H, W, C) -> (C,)."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"global_avg_pool expects (H, W, C), got {x.shape}")
    height, width, _ = x.shape
    scale = 1.0 / (height * width)

    def backward(g):
        return (np.broadcast_to(g * scale, x.shape).copy(),)

    return make_result(x.data.mean(axis=(0, 1)), (x,), backward, "global_avg_pool")


# --------------------------------------------------------------------------
# Normalization and nonlinearities
# --------------------------------------------------------------------------

def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the channel (last) extent with learnable scale/shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    channels = x.shape[-1] if x.ndim else 0
    if x.ndim < 1 or gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(
            f"layer_norm over {channels} channels needs (C,) scale/shift, "
            f"got {gamma.shape}, {beta.shape}"
        )
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    normed = centered * inv_std
    gamma_data = gamma.data

    def backward(g):
        lead_axes = tuple(range(g.ndim - 1))
        dgamma = (g * normed).sum(axis=lead_axes)
        dbeta = g.sum(axis=lead_axes)
        dnormed = g * gamma_data
        mean_d = dnormed.mean(axis=-1, keepdims=True)
        mean_dn = (dnormed * normed).mean(axis=-1, keepdims=True)
        dx = inv_std * (dnormed - mean_d - normed * mean_dn)
        return dx, dgamma, dbeta

    return make_result(normed * gamma_data + beta.data, (x, gamma, beta), backward, "layer_norm")


def softmax(x, axis: int = -1) -> Tensor:
    """Softmax along one axis; outputs along that axis sum to 1."""
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    out = exp / exp.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return make_result(out, (x,), backward, "softmax")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = expit(x.data)

    def backward(g):
        return (g * out * (1.0 - out),)

    return make_result(out, (x,), backward, "sigmoid")


def gelu(x) -> Tensor:
    """Exact-erf gelu: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    x = as_tensor(x)
    x_data = x.data
    cdf = 0.5 * (1.0 + erf(x_data * _INV_SQRT2))

    def backward(g):
        pdf = np.exp(-0.5 * x_data * x_data) * _INV_SQRT2PI
        return (g * (cdf + x_data * pdf),)

    return make_result(x_data * cdf, (x,), backward, "gelu")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return make_result(np.where(mask, x.data, 0.0), (x,), backward, "relu")


def softplus(x) -> Tensor:
    """log(1 + exp(x)), computed stably; derivative is the sigmoid."""
    x = as_tensor(x)
    x_data = x.data

    def backward(g):
        return (g * expit(x_data),)

    return make_result(np.logaddexp(0.0, x_data), (x,), backward, "softplus")


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)

    def backward(g):
        return (g * (0.5 / out),)

    return make_result(out, (x,), backward, "sqrt")


# --------------------------------------------------------------------------
# Structure: concat / split / reshape / permute / windows / reductions
# --------------------------------------------------------------------------

def concat(tensors, axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    if not -ndim <= axis < ndim:
        raise ShapeError(f"concat axis {axis} invalid for rank {ndim}")
    axis = axis % ndim
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != ndim or other[:axis] + other[axis + 1:] != base[:axis] + base[axis + 1:]:
            raise ShapeError(f"concat shapes incompatible: {[t.shape for t in tensors]}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis),
                       tensors, backward, "concat")


def slice_axis(x, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice along one axis (the building block of split)."""
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"slice axis {axis} invalid for shape {x.shape}")
    axis = axis % x.ndim
    extent = x.shape[axis]
    if not (0 <= start < stop <= extent):
        raise ShapeError(f"slice [{start}:{stop}] invalid for extent {extent}")
    index = tuple(slice(None) if d != axis else slice(start, stop) for d in range(x.ndim))
    x_shape = x.shape

    def backward(g):
        dx = np.zeros(x_shape, dtype=g.dtype)
        dx[index] = g
        return (dx,)

    return make_result(x.data[index].copy(), (x,), backward, "slice")


def split(x, sizes, axis: int = -1) -> list[Tensor]:
    """Partition one axis into consecutive chunks of the given sizes."""
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"split axis {axis} invalid for shape {x.shape}")
    axis = axis % x.ndim
    if sum(sizes) != x.shape[axis] or any(s < 1 for s in sizes):
        raise ShapeError(f"split sizes {sizes} do not cover extent {x.shape[axis]}")
    pieces = []
    start = 0
    for size in sizes:
        pieces.append(slice_axis(x, axis, start, start + size))
        start += size
    return pieces


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    in_shape = x.shape

    def backward(g):
        return (g.reshape(in_shape),)

    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    return make_result(out.copy(), (x,), backward, "reshape")


def permute(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permutation {axes} invalid for rank {x.ndim}")
    inverse = np.argsort(axes)

    def backward(g):
        return (g.transpose(inverse),)

    return make_result(x.data.transpose(axes).copy(), (x,), backward, "permute")


def window_partition(x, window: int) -> Tensor:
    """(H, W, C) -> (num_windows, window, window, C), non-overlapping tiles."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"window_partition expects (H, W, C), got {x.shape}")
    height, width, channels = x.shape
    if window < 1 or height % window or width % window:
        raise ShapeError(f"window {window} does not divide spatial extents {height}x{width}")
    grid_h, grid_w = height // window, width // window

    def forward_data(data):
        tiles = data.reshape(grid_h, window, grid_w, window, channels)
        return tiles.transpose(0, 2, 1, 3, 4).reshape(grid_h * grid_w, window, window, channels)

    def backward(g):
        tiles = g.reshape(grid_h, grid_w, window, window, channels)
        return (tiles.transpose(0, 2, 1, 3, 4).reshape(height, width, channels),)

    return make_result(forward_data(x.data).copy(), (x,), backward, "window_partition")


def window_merge(windows, height: int, width: int) -> Tensor:
    """Inverse of :func:`window_partition` for the given spatial extents."""
    windows = as_tensor(windows)
    if windows.ndim != 4 or windows.shape[1] != windows.shape[2]:
        raise ShapeError(f"window_merge expects (nw, b, b, C), got {windows.shape}")
    count, window, _, channels = windows.shape
    if window < 1 or height % window or width % window:
        raise ShapeError(f"window {window} does not divide spatial extents {height}x{width}")
    grid_h, grid_w = height // window, width // window
    if count != grid_h * grid_w:
        raise ShapeError(f"{count} windows cannot tile {height}x{width} with window {window}")

    def backward(g):
        tiles = g.reshape(grid_h, window, grid_w, window, channels)
        return (tiles.transpose(0, 2, 1, 3, 4).reshape(count, window, window, channels),)

    tiles = windows.data.reshape(grid_h, grid_w, window, window, channels)
    out = tiles.transpose(0, 2, 1, 3, 4).reshape(height, width, channels)
    return make_result(out.copy(), (windows,), backward, "window_merge")


def tensor_sum(x) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    x = as_tensor(x)
    x_shape = x.shape

    def backward(g):
        return (np.full(x_shape, g.reshape(())),)

    return make_result(np.asarray(x.data.sum()), (x,), backward, "sum")


def tensor_mean(x) -> Tensor:
    """Mean of all elements, as a scalar tensor."""
    x = as_tensor(x)
    x_shape = x.shape
    scale = 1.0 / x.size

    def backward(g):
        return (np.full(x_shape, g.reshape(()) * scale),)

    return make_result(np.asarray(x.data.mean()), (x,), backward, "mean")


# --------------------------------------------------------------------------
# Sensing-operator bridge (linear; backward is the exact adjoint partner)
# --------------------------------------------------------------------------

def cassi_forward(x, mask_values: np.ndarray, step: int) -> Tensor:
    """Differentiable mask-shear-sum acquisition of a (H, W, C) tensor."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"cassi_forward expects (H, W, C), got {x.shape}")
    channels = x.shape[2]

    def backward(g):
        return (cassi.adjoint_data(g, mask_values, step, channels),)

    return make_result(cassi.forward_data(x.data, mask_values, step), (x,), backward,
                       "cassi_forward")


def cassi_adjoint(y, mask_values: np.ndarray, step: int, channels: int) -> Tensor:
    """Differentiable adjoint acquisition: measurement back to a cube."""
    y = as_tensor(y)
    if y.ndim != 2:
        raise ShapeError(f"cassi_adjoint expects (H, W_m), got {y.shape}")

    def backward(g):
        return (cassi.forward_data(g, mask_values, step),)

    return make_result(cassi.adjoint_data(y.data, mask_values, step, channels), (y,),
                       backward, "cassi_adjoint")
