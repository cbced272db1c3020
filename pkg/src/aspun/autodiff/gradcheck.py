"""Central finite-difference validation of every registered op.

For each op a builder draws random small inputs, wires them into a scalar
loss (a randomly weighted sum of the op output), and the harness compares
analytic gradients from ``backward()`` against central differences with
``h = 1e-5`` in double precision.  The reported error is

    max over coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)

Linear ops must pass at 1e-7, the rest at 1e-4.  :func:`directional_check`
offers the cheap whole-Jacobian variant (one random direction through all
leaves at once) used for large composite graphs.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops
from .tensor import Tensor, no_grad

STEP = 1e-5
# Linear ops have zero truncation error at any step, so a larger step is
# used for them purely to shrink floating-point cancellation noise.
STEP_LINEAR = 1e-3
TOL_LINEAR = 1e-7
TOL_NONLINEAR = 1e-4


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def check_gradients(fn: Callable[[], Tensor], tensors, h: float = STEP,
                    max_coords: int | None = None, rng=None) -> float:
    """Coordinate-wise central-difference check of d fn() / d tensors.

    ``fn`` must recompute the scalar loss from the tensors' current data.
    Returns the worst relative error over all checked coordinates.
    """
    tensors = list(tensors)
    for t in tensors:
        t.grad = None
    loss = fn()
    loss.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    worst = 0.0
    with no_grad():
        for t, grad in zip(tensors, analytic):
            flat = t.data.reshape(-1)
            grad_flat = grad.reshape(-1)
            if max_coords is not None and flat.size > max_coords:
                if rng is None:
                    rng = np.random.default_rng(0)
                coords = rng.choice(flat.size, size=max_coords, replace=False)
            else:
                coords = range(flat.size)
            for idx in coords:
                original = flat[idx]
                flat[idx] = original + h
                f_plus = fn().item()
                flat[idx] = original - h
                f_minus = fn().item()
                flat[idx] = original
                numeric = (f_plus - f_minus) / (2.0 * h)
                worst = max(worst, relative_error(float(grad_flat[idx]), numeric))
    for t in tensors:
        t.grad = None
    return worst


def directional_check(fn: Callable[[], Tensor], tensors, h: float = STEP,
                      seed: int = 0) -> float:
    """Jacobian-vector check: <grad, v> vs (f(x+hv) - f(x-hv)) / 2h."""
    tensors = list(tensors)
    rng = np.random.default_rng(seed)
    for t in tensors:
        t.grad = None
    loss = fn()
    loss.backward()
    directions = [rng.standard_normal(t.shape) for t in tensors]
    norm = np.sqrt(sum(float((d * d).sum()) for d in directions))
    directions = [d / norm for d in directions]
    analytic = sum(
        float((t.grad * d).sum()) for t, d in zip(tensors, directions) if t.grad is not None
    )
    originals = [t.data.copy() for t in tensors]
    with no_grad():
        for t, d in zip(tensors, directions):
            t.data = t.data + h * d
        f_plus = fn().item()
        for t, orig, d in zip(tensors, originals, directions):
            t.data = orig - h * d
        f_minus = fn().item()
        for t, orig in zip(tensors, originals):
            t.data = orig
    for t in tensors:
        t.grad = None
    numeric = (f_plus - f_minus) / (2.0 * h)
    return relative_error(analytic, numeric)


# --------------------------------------------------------------------------
# Registry
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class OpCase:
    """One registered op: a random-instance builder plus its tolerance class."""

    name: str
    linear: bool
    build: Callable[[np.random.Generator], tuple[Callable[[], Tensor], list[Tensor]]]

    @property
    def tolerance(self) -> float:
        return TOL_LINEAR if self.linear else TOL_NONLINEAR

    @property
    def step(self) -> float:
        return STEP_LINEAR if self.linear else STEP


def _leaf(rng, *shape, low=None, high=None, away_from_zero=False) -> Tensor:
    if low is not None:
        data = rng.uniform(low, high, size=shape)
    else:
        data = rng.standard_normal(shape)
    if away_from_zero:
        data = np.where(np.abs(data) < 0.1, np.sign(data) * 0.1 + data, data)
    return Tensor(data, requires_grad=True)


def _weighted(rng, out: Tensor) -> Tensor:
    weights = Tensor(rng.standard_normal(out.shape))
    return ops.tensor_sum(ops.mul(out, weights))


def _dims(rng, n, lo=2, hi=5):
    return tuple(int(rng.integers(lo, hi + 1)) for _ in range(n))


def _build_add(rng):
    h, w, c = _dims(rng, 3)
    a = _leaf(rng, h, w, c)
    variant = int(rng.integers(3))
    b = (_leaf(rng, h, w, c), _leaf(rng, c), _leaf(rng))[variant]
    weights = Tensor(rng.standard_normal((h, w, c)))
    return (lambda: ops.tensor_sum(ops.mul(ops.add(a, b), weights))), [a, b]


def _build_sub(rng):
    h, w, c = _dims(rng, 3)
    a = _leaf(rng, h, w, c)
    variant = int(rng.integers(3))
    b = (_leaf(rng, h, w, c), _leaf(rng, w, c), _leaf(rng))[variant]
    weights = Tensor(rng.standard_normal((h, w, c)))
    return (lambda: ops.tensor_sum(ops.mul(ops.sub(a, b), weights))), [a, b]


def _build_mul(rng):
    h, w, c = _dims(rng, 3)
    a = _leaf(rng, h, w, c)
    variant = int(rng.integers(3))
    b = (_leaf(rng, h, w, c), _leaf(rng, c), _leaf(rng))[variant]
    weights = Tensor(rng.standard_normal((h, w, c)))
    return (lambda: ops.tensor_sum(ops.mul(ops.mul(a, b), weights))), [a, b]


def _build_matmul(rng):
    m, k, n, batch = _dims(rng, 4)
    variant = int(rng.integers(3))
    if variant == 0:
        a, b = _leaf(rng, m, k), _leaf(rng, k, n)
    elif variant == 1:
        a, b = _leaf(rng, batch, m, k), _leaf(rng, batch, k, n)
    else:
        a, b = _leaf(rng, batch, m, k), _leaf(rng, k, n)
    weights = Tensor(rng.standard_normal((a.shape[:-2] + (m, n))))
    return (lambda: ops.tensor_sum(ops.mul(ops.matmul(a, b), weights))), [a, b]


def _build_conv2d(rng):
    variant = int(rng.integers(3))
    if variant == 0:
        x = _leaf(rng, 4, 4, 3)
        w = _leaf(rng, 3, 3, 3, 2)
        stride, padding, groups = 1, 1, 1
    elif variant == 1:
        x = _leaf(rng, 6, 6, 2)
        w = _leaf(rng, 2, 2, 2, 3)
        stride, padding, groups = 2, 0, 1
    else:
        x = _leaf(rng, 5, 5, 4)
        w = _leaf(rng, 3, 3, 2, 4)
        stride, padding, groups = 1, 1, 2
    bias = _leaf(rng, w.shape[3])

    def fn():
        out = ops.conv2d(x, w, bias, stride=stride, padding=padding, groups=groups)
        return ops.tensor_sum(ops.mul(out, weights))

    weights = Tensor(rng.standard_normal(
        ops.conv2d(x.detach(), w.detach(), None, stride=stride, padding=padding,
                   groups=groups).shape))
    return fn, [x, w, bias]


def _build_transposed_conv2d(rng):
    variant = int(rng.integers(3))
    if variant == 0:
        x = _leaf(rng, 3, 3, 4)
        w = _leaf(rng, 2, 2, 2, 4)
        stride, padding, groups = 2, 0, 1
    elif variant == 1:
        x = _leaf(rng, 4, 4, 2)
        w = _leaf(rng, 3, 3, 3, 2)
        stride, padding, groups = 1, 1, 1
    else:
        x = _leaf(rng, 3, 4, 4)
        w = _leaf(rng, 2, 2, 2, 4)
        stride, padding, groups = 2, 0, 2
    bias = _leaf(rng, w.shape[2] * groups)

    def fn():
        out = ops.transposed_conv2d(x, w, bias, stride=stride, padding=padding, groups=groups)
        return ops.tensor_sum(ops.mul(out, weights))

    weights = Tensor(rng.standard_normal(
        ops.transposed_conv2d(x.detach(), w.detach(), None, stride=stride,
                              padding=padding, groups=groups).shape))
    return fn, [x, w, bias]


def _build_avg_pool2d(rng):
    variant = int(rng.integers(3))
    kernel, stride, padding, extent = ((2, 2, 0, 6), (2, 1, 0, 5), (3, 3, 1, 7))[variant]
    c = int(rng.integers(1, 4))
    x = _leaf(rng, extent, extent, c)

    def fn():
        return ops.tensor_sum(ops.mul(ops.avg_pool2d(x, kernel, stride, padding), weights))

    weights = Tensor(rng.standard_normal(
        ops.avg_pool2d(x.detach(), kernel, stride, padding).shape))
    return fn, [x]


def _build_global_avg_pool(rng):
    h, w, c = _dims(rng, 3)
    x = _leaf(rng, h, w, c)
    weights = Tensor(rng.standard_normal((c,)))
    return (lambda: ops.tensor_sum(ops.mul(ops.global_avg_pool(x), weights))), [x]


def _build_layer_norm(rng):
    h, w, c = _dims(rng, 3, lo=3)
    x = _leaf(rng, h, w, c)
    gamma = _leaf(rng, c, low=0.5, high=1.5)
    beta = _leaf(rng, c)
    weights = Tensor(rng.standard_normal((h, w, c)))
    return (lambda: ops.tensor_sum(ops.mul(ops.layer_norm(x, gamma, beta), weights))), [x, gamma, beta]


def _build_softmax(rng):
    shape = _dims(rng, 3)
    axis = int(rng.integers(3))
    x = _leaf(rng, *shape)
    weights = Tensor(rng.standard_normal(shape))
    return (lambda: ops.tensor_sum(ops.mul(ops.softmax(x, axis=axis), weights))), [x]


def _pointwise_builder(op, away=False, low=None, high=None):
    def build(rng):
        shape = _dims(rng, int(rng.integers(1, 4)))
        x = _leaf(rng, *shape, low=low, high=high, away_from_zero=away)
        weights = Tensor(rng.standard_normal(shape))
        return (lambda: ops.tensor_sum(ops.mul(op(x), weights))), [x]

    return build


def _build_concat(rng):
    h, w, c = _dims(rng, 3)
    axis = int(rng.integers(3))
    parts = [_leaf(rng, h, w, c) for _ in range(int(rng.integers(2, 4)))]
    out_shape = list((h, w, c))
    out_shape[axis] *= len(parts)
    weights = Tensor(rng.standard_normal(tuple(out_shape)))
    return (lambda: ops.tensor_sum(ops.mul(ops.concat(parts, axis=axis), weights))), parts


def _build_split(rng):
    h, w = _dims(rng, 2)
    total = int(rng.integers(3, 6))
    x = _leaf(rng, h, w, total)
    cut = int(rng.integers(1, total))
    sizes = [cut, total - cut]
    weight_list = [Tensor(rng.standard_normal((h, w, s))) for s in sizes]

    def fn():
        pieces = ops.split(x, sizes, axis=2)
        total_loss = ops.tensor_sum(ops.mul(pieces[0], weight_list[0]))
        for piece, weights in zip(pieces[1:], weight_list[1:]):
            total_loss = ops.add(total_loss, ops.tensor_sum(ops.mul(piece, weights)))
        return total_loss

    return fn, [x]


def _build_reshape(rng):
    h, w, c = _dims(rng, 3)
    x = _leaf(rng, h, w, c)
    weights = Tensor(rng.standard_normal((h * w * c,)))
    return (lambda: ops.tensor_sum(ops.mul(ops.reshape(x, (h * w * c,)), weights))), [x]


def _build_permute(rng):
    shape = _dims(rng, 4)
    x = _leaf(rng, *shape)
    axes = tuple(rng.permutation(4))
    weights = Tensor(rng.standard_normal(tuple(shape[a] for a in axes)))
    return (lambda: ops.tensor_sum(ops.mul(ops.permute(x, axes), weights))), [x]


def _build_window_partition(rng):
    window, grid = int(rng.integers(2, 4)), int(rng.integers(1, 3))
    extent = window * grid
    c = int(rng.integers(1, 4))
    x = _leaf(rng, extent, extent, c)
    weights = Tensor(rng.standard_normal((grid * grid, window, window, c)))
    return (lambda: ops.tensor_sum(ops.mul(ops.window_partition(x, window), weights))), [x]


def _build_window_merge(rng):
    window, grid = int(rng.integers(2, 4)), int(rng.integers(1, 3))
    extent = window * grid
    c = int(rng.integers(1, 4))
    x = _leaf(rng, grid * grid, window, window, c)
    weights = Tensor(rng.standard_normal((extent, extent, c)))
    return (lambda: ops.tensor_sum(ops.mul(ops.window_merge(x, extent, extent), weights))), [x]


def _build_sum(rng):
    shape = _dims(rng, 3)
    x = _leaf(rng, *shape)
    return (lambda: ops.tensor_sum(x)), [x]


def _build_mean(rng):
    shape = _dims(rng, 3)
    x = _leaf(rng, *shape)
    return (lambda: ops.tensor_mean(x)), [x]


def _build_cassi_forward(rng):
    h, w, c = _dims(rng, 3)
    step = int(rng.integers(0, 3))
    mask = rng.uniform(0.0, 1.0, size=(h, w))
    x = _leaf(rng, h, w, c)
    weights = Tensor(rng.standard_normal((h, w + step * (c - 1))))
    return (lambda: ops.tensor_sum(ops.mul(ops.cassi_forward(x, mask, step), weights))), [x]


def _build_cassi_adjoint(rng):
    h, w, c = _dims(rng, 3)
    step = int(rng.integers(0, 3))
    mask = rng.uniform(0.0, 1.0, size=(h, w))
    y = _leaf(rng, h, w + step * (c - 1))
    weights = Tensor(rng.standard_normal((h, w, c)))
    return (lambda: ops.tensor_sum(ops.mul(ops.cassi_adjoint(y, mask, step, c), weights))), [y]


REGISTRY: dict[str, OpCase] = {
    case.name: case
    for case in [
        OpCase("add", True, _build_add),
        OpCase("sub", True, _build_sub),
        OpCase("mul", True, _build_mul),
        OpCase("matmul", True, _build_matmul),
        OpCase("conv2d", True, _build_conv2d),
        OpCase("transposed_conv2d", True, _build_transposed_conv2d),
        OpCase("avg_pool2d", True, _build_avg_pool2d),
        OpCase("global_avg_pool", True, _build_global_avg_pool),
        OpCase("layer_norm", False, _build_layer_norm),
        OpCase("softmax", False, _build_softmax),
        OpCase("sigmoid", False, _pointwise_builder(ops.sigmoid)),
        OpCase("gelu", False, _pointwise_builder(ops.gelu)),
        OpCase("relu", False, _pointwise_builder(ops.relu, away=True)),
        OpCase("softplus", False, _pointwise_builder(ops.softplus)),
        OpCase("sqrt", False, _pointwise_builder(ops.sqrt, low=0.5, high=2.0)),
        OpCase("concat", True, _build_concat),
        OpCase("split", True, _build_split),
        OpCase("reshape", True, _build_reshape),
        OpCase("permute", True, _build_permute),
        OpCase("window_partition", True, _build_window_partition),
        OpCase("window_merge", True, _build_window_merge),
        OpCase("sum", True, _build_sum),
        OpCase("mean", True, _build_mean),
        OpCase("cassi_forward", True, _build_cassi_forward),
        OpCase("cassi_adjoint", True, _build_cassi_adjoint),
    ]
}


def grad_check(op_name: str, seed: int = 0, variants: int = 3) -> float:
    """Max relative error for one registered op over random instances."""
    if op_name not in REGISTRY:
        raise KeyError(f"unknown op {op_name!r}; known: {sorted(REGISTRY)}")
    case = REGISTRY[op_name]
    worst = 0.0
    for variant in range(variants):
        rng = np.random.default_rng((seed, variant))
        fn, tensors = case.build(rng)
        worst = max(worst, check_gradients(fn, tensors, h=case.step, rng=rng))
    return worst


def grad_check_all(seed: int = 0) -> list[tuple[str, float, float, bool]]:
    """(name, max_rel_error, tolerance, passed) for every registered op."""
    rows = []
    for name in REGISTRY:
        error = grad_check(name, seed=seed)
        tolerance = REGISTRY[name].tolerance
        rows.append((name, error, tolerance, error < tolerance))
    return rows
