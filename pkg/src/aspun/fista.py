"""Classical FISTA solver for the sparse snapshot reconstruction problem

    minimize_x  0.5 * ||A x - y||_2^2 + reg_weight * ||T x||_1

where ``A`` is the CASSI sensing operator and ``T`` is either the identity
or an orthonormal per-channel 2D DCT.  One iteration performs

    r      = z - rho * A^T (A z - y)
    x_new  = T^* soft(T r, reg_weight * rho)
    t_next = (1 + sqrt(1 + 4 t^2)) / 2
    z_new  = x_new + ((t - 1) / t_next) * (x_new - x_prev)

With ``accelerate=False`` the momentum scalar stays at 1 and the loop is
plain ISTA, whose objective trace is monotone for ``rho <= 1/L``.

The helpers :func:`momentum_update` and :func:`extrapolate` are written
against plain ``+ - *`` semantics so both this solver (numpy arrays) and
the unfolding network (autodiff tensors) share one implementation.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.fft

from .cassi import (
    CodedMask,
    DispersionSpec,
    Measurement,
    SpectralCube,
    adjoint_data,
    forward_data,
    shift_back,
)
from .errors import DivergenceError, ShapeError

TRANSFORMS = ("identity", "dct")


@dataclass
class SolverConfig:
    """Step size, regularization, and stopping rules for :func:`solve`.

    ``step_size=None`` selects ``0.9 / L`` with ``L`` estimated by
    20 power iterations, which keeps the ISTA trace provably monotone.
    """

    step_size: float | None = None
    reg_weight: float = 0.0
    max_iters: int = 200
    transform: str = "identity"
    tolerance: float = 1e-8
    accelerate: bool = True

    def __post_init__(self):
        if self.step_size is not None and self.step_size <= 0:
            raise ShapeError("step_size must be positive")
        if self.reg_weight < 0:
            raise ShapeError("reg_weight must be non-negative")
        if self.max_iters < 1:
            raise ShapeError("max_iters must be at least 1")
        if self.transform not in TRANSFORMS:
            raise ShapeError(f"transform must be one of {TRANSFORMS}")


@dataclass
class SolverState:
    """One iterate of the accelerated proximal-gradient loop (t >= 1)."""

    x_curr: np.ndarray
    x_prev: np.ndarray
    z: np.ndarray
    t: float
    iteration: int


def soft_threshold(values: np.ndarray, threshold) -> np.ndarray:
    """Elementwise sign(v) * max(|v| - threshold, 0), the exact l1 prox.

    ``threshold`` is a non-negative scalar or an array broadcastable
    against ``values``.
    """
    threshold = np.asarray(threshold)
    if np.any(threshold < 0):
        raise ShapeError("threshold must be non-negative")
    return np.sign(values) * np.maximum(np.abs(values) - threshold, 0.0)


def momentum_update(t: float) -> float:
    """Next momentum scalar, (1 + sqrt(1 + 4 t^2)) / 2; strictly > t for t >= 1."""
    return (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0


def extrapolate(x_curr, x_prev, t: float, t_next: float):
    """Momentum extrapolation x + ((t - 1) / t_next) * (x - x_prev).

    Duck-typed: works for numpy arrays and for autodiff tensors.  With
    ``t == 1`` the coefficient is exactly zero and ``x_curr`` is returned
    unchanged.
    """
    coeff = (t - 1.0) / t_next
    if coeff == 0.0:
        return x_curr
    return x_curr + coeff * (x_curr - x_prev)


def analysis(data: np.ndarray, transform: str) -> np.ndarray:
    """Apply the sparsifying transform per channel (orthonormal for "dct")."""
    if transform == "identity":
        return data
    return scipy.fft.dctn(data, type=2, axes=(0, 1), norm="ortho")


def synthesis(coeffs: np.ndarray, transform: str) -> np.ndarray:
    """Inverse of :func:`analysis`."""
    if transform == "identity":
        return coeffs
    return scipy.fft.idctn(coeffs, type=2, axes=(0, 1), norm="ortho")


def _objective_data(x: np.ndarray, y: np.ndarray, mask_values: np.ndarray,
                    step: int, cfg: SolverConfig) -> float:
    residual = forward_data(x, mask_values, step) - y
    value = 0.5 * float(np.sum(residual * residual))
    if cfg.reg_weight > 0:
        value += cfg.reg_weight * float(np.sum(np.abs(analysis(x, cfg.transform))))
    return value


def objective(x: SpectralCube, y: Measurement, mask: CodedMask,
              spec: DispersionSpec, cfg: SolverConfig) -> float:
    """0.5 * ||A x - y||^2 + reg_weight * ||T x||_1."""
    return _objective_data(x.data, y.data, mask.values, spec.step, cfg)


def gradient_step(z: SpectralCube, y: Measurement, mask: CodedMask,
                  spec: DispersionSpec, step_size: float) -> SpectralCube:
    """r = z - step_size * A^T (A z - y)."""
    if step_size < 0:
        raise ShapeError("step_size must be non-negative")
    residual = forward_data(z.data, mask.values, spec.step) - y.data
    grad = adjoint_data(residual, mask.values, spec.step, z.channels)
    return SpectralCube(z.data - step_size * grad, z.wavelengths)


def _prox(r: np.ndarray, threshold: float, transform: str) -> np.ndarray:
    if threshold == 0.0:
        return r
    return synthesis(soft_threshold(analysis(r, transform), threshold), transform)


def fista_iteration(state: SolverState, y: Measurement, mask: CodedMask,
                    spec: DispersionSpec, cfg: SolverConfig,
                    step_size: float) -> SolverState:
    """Advance the solver state by one full iteration."""
    residual = forward_data(state.z, mask.values, spec.step) - y.data
    r = state.z - step_size * adjoint_data(residual, mask.values, spec.step, state.z.shape[2])
    x_new = _prox(r, cfg.reg_weight * step_size, cfg.transform)
    t_next = momentum_update(state.t) if cfg.accelerate else 1.0
    z_new = extrapolate(x_new, state.x_curr, state.t, t_next)
    return SolverState(x_new, state.x_curr, z_new, t_next, state.iteration + 1)


def power_iteration_lipschitz(mask: CodedMask, spec: DispersionSpec,
                              shape: tuple[int, int, int], iters: int = 20,
                              seed: int = 0) -> float:
    """Largest eigenvalue of A^T A estimated by power iteration.

    Returns the Rayleigh quotient after ``iters`` operator applications,
    which is non-decreasing in ``iters`` and never exceeds the true value.
    """
    if iters < 1:
        raise ShapeError("iters must be at least 1")
    height, width, channels = shape
    if mask.values.shape != (height, width):
        raise ShapeError("mask shape does not match requested cube shape")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(shape)
    v /= np.linalg.norm(v.ravel())
    estimate = 0.0
    for _ in range(iters):
        w = adjoint_data(forward_data(v, mask.values, spec.step),
                         mask.values, spec.step, channels)
        estimate = float(np.sum(v * w))
        norm = np.linalg.norm(w.ravel())
        if norm == 0.0:
            return 0.0
        v = w / norm
    return estimate


def default_step_size(mask: CodedMask, spec: DispersionSpec,
                      shape: tuple[int, int, int]) -> float:
    """0.9 / L with L from 20 power iterations; the solver's default step."""
    lipschitz = power_iteration_lipschitz(mask, spec, shape, iters=20)
    if lipschitz <= 0:
        raise ShapeError("sensing operator is identically zero on this mask")
    return 0.9 / lipschitz


def solve(y: Measurement, mask: CodedMask, spec: DispersionSpec,
          cfg: SolverConfig, channels: int) -> tuple[SpectralCube, list[float]]:
    """Run the solver from the shift-back initialization.

    Returns the final iterate and the per-iteration objective trace (one
    entry per iteration actually run).  Raises :class:`DivergenceError`
    with the iteration index if the objective becomes non-finite.
    """
    x0 = shift_back(y, spec, channels).data
    step_size = cfg.step_size
    if step_size is None:
        step_size = default_step_size(mask, spec, (*x0.shape[:2], channels))
    state = SolverState(x_curr=x0, x_prev=x0.copy(), z=x0.copy(), t=1.0, iteration=0)
    trace: list[float] = []
    for _ in range(cfg.max_iters):
        state = fista_iteration(state, y, mask, spec, cfg, step_size)
        value = _objective_data(state.x_curr, y.data, mask.values, spec.step, cfg)
        if not math.isfinite(value):
            raise DivergenceError("objective became non-finite", iteration=state.iteration)
        trace.append(value)
        if len(trace) >= 2:
            prev = trace[-2]
            if abs(trace[-1] - prev) <= cfg.tolerance * max(abs(prev), 1e-12):
                break
    return SpectralCube(state.x_curr), trace
