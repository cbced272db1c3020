"""Single-disperser coded aperture snapshot spectral imaging (CASSI) model.

A scene cube ``x`` of shape ``(H, W, C)`` is multiplied channel-wise by a
coded mask ``m`` of shape ``(H, W)``, each channel ``n`` is sheared along
the width axis by ``d * n`` detector columns, and the sheared stack is
summed over channels into a single 2D snapshot:

    y[u, v] = sum_n m[u, v - d*n] * x[u, v - d*n, n]

so the measurement width is ``W + d * (C - 1)``.  The adjoint crops each
channel's window back out of the measurement and re-applies the mask:

    (adjoint(y))[u, v, n] = m[u, v] * y[u, v + d*n]

which satisfies ``<forward(x), y> == <x, adjoint(y)>`` exactly.

All operations are pure functions; the only randomness (measurement
noise) is driven by a caller-owned seed or generator.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


def default_wavelengths(channels: int) -> np.ndarray:
    """Placeholder wavelength grid (nm) for cubes without real metadata."""
    if channels < 1:
        raise ShapeError("a spectral cube needs at least one channel")
    if channels == 1:
        return np.array([550.0])
    return np.linspace(450.0, 650.0, channels)


@dataclass
class SpectralCube:
    """Hyperspectral signal of shape ``(H, W, C)`` with wavelength metadata.

    ``data`` is stored row-major in ``(h, w, c)`` order so the spectrum of a
    single pixel is contiguous.  Wavelengths must be strictly increasing.
    """

    data: np.ndarray
    wavelengths: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ShapeError(f"cube data must be 3D (H, W, C), got shape {self.data.shape}")
        if self.data.shape[2] < 1:
            raise ShapeError("cube needs at least one channel")
        if not np.all(np.isfinite(self.data)):
            raise ShapeError("cube data contains non-finite values")
        if self.wavelengths is None:
            self.wavelengths = default_wavelengths(self.data.shape[2])
        else:
            self.wavelengths = np.asarray(self.wavelengths, dtype=np.float64)
            if self.wavelengths.shape != (self.data.shape[2],):
                raise ShapeError("wavelengths length must equal channel count")
            if np.any(np.diff(self.wavelengths) <= 0):
                raise ShapeError("wavelengths must be strictly increasing")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass
class CodedMask:
    """Physical coding mask with transmission values in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeError(f"mask must be 2D (H, W), got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ShapeError("mask contains non-finite values")
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise ShapeError("mask values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class DispersionSpec:
    """Disperser geometry: integer shear step per channel index.

    ``reference_channel`` names the channel treated as unsheared; it is
    bookkeeping only, since shifts are always rebased to be non-negative
    (channel ``n`` lands at column offset ``step * n`` either way).
    """

    step: int = 1
    reference_channel: int = 0

    def __post_init__(self):
        if int(self.step) != self.step or self.step < 0:
            raise ShapeError("dispersion step must be a non-negative integer")
        if int(self.reference_channel) != self.reference_channel or self.reference_channel < 0:
            raise ShapeError("reference channel must be a non-negative integer")


@dataclass
class Measurement:
    """2D detector snapshot of shape ``(H, W + step * (C - 1))``."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ShapeError(f"measurement must be 2D, got shape {self.data.shape}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def measurement_width(width: int, step: int, channels: int) -> int:
    """Detector width produced by shearing ``channels`` bands of width ``width``."""
    return width + step * (channels - 1)


def _check_reference(spec: DispersionSpec, channels: int):
    if spec.reference_channel >= channels:
        raise ShapeError(
            f"reference channel {spec.reference_channel} out of range for {channels} channels"
        )


def _check_mask(mask: CodedMask, height: int, width: int):
    if mask.values.shape != (height, width):
        raise ShapeError(
            f"mask shape {mask.values.shape} does not match cube spatial dims ({height}, {width})"
        )


# Array-level kernels.  These hold the index arithmetic in one place; the
# dataclass API below and the autodiff bridge both delegate here.

def forward_data(x: np.ndarray, mask_values: np.ndarray, step: int) -> np.ndarray:
    """Apply mask, shear, and channel sum to a raw ``(H, W, C)`` array.

    Accumulates exactly as the staged modulate/disperse/integrate pipeline
    does, so the fused and staged paths agree bit for bit.
    """
    height, width, channels = x.shape
    coded = x * mask_values[:, :, None]
    wide = np.zeros((height, measurement_width(width, step, channels), channels),
                    dtype=x.dtype)
    for n in range(channels):
        off = step * n
        wide[:, off:off + width, n] = coded[:, :, n]
    return wide.sum(axis=2)


def adjoint_data(y: np.ndarray, mask_values: np.ndarray, step: int, channels: int) -> np.ndarray:
    """Exact adjoint of :func:`forward_data`: crop back, then re-mask."""
    height, width = mask_values.shape
    if y.shape != (height, measurement_width(width, step, channels)):
        raise ShapeError(
            f"measurement shape {y.shape} incompatible with W={width}, d={step}, C={channels}"
        )
    out = np.empty((height, width, channels), dtype=y.dtype)
    for n in range(channels):
        off = step * n
        out[:, :, n] = y[:, off:off + width] * mask_values
    return out


def shift_back_data(y: np.ndarray, step: int, width: int, channels: int) -> np.ndarray:
    """Replicate a measurement into ``channels`` bands, undoing the shear."""
    height = y.shape[0]
    if y.shape != (height, measurement_width(width, step, channels)):
        raise ShapeError(
            f"measurement shape {y.shape} incompatible with W={width}, d={step}, C={channels}"
        )
    out = np.empty((height, width, channels), dtype=y.dtype)
    for n in range(channels):
        off = step * n
        out[:, :, n] = y[:, off:off + width]
    return out


# Dataclass-level operations.

def modulate(cube: SpectralCube, mask: CodedMask) -> SpectralCube:
    """Multiply every channel of the cube by the coded mask."""
    _check_mask(mask, cube.height, cube.width)
    return SpectralCube(cube.data * mask.values[:, :, None], cube.wavelengths)


def disperse(cube: SpectralCube, spec: DispersionSpec) -> SpectralCube:
    """Shear channel ``n`` to column offset ``step * n`` in a widened cube."""
    _check_reference(spec, cube.channels)
    wide = measurement_width(cube.width, spec.step, cube.channels)
    out = np.zeros((cube.height, wide, cube.channels))
    for n in range(cube.channels):
        off = spec.step * n
        out[:, off:off + cube.width, n] = cube.data[:, :, n]
    return SpectralCube(out, cube.wavelengths)


def integrate(shifted: SpectralCube) -> Measurement:
    """Sum a (sheared) cube over its channel axis into a 2D snapshot."""
    return Measurement(shifted.data.sum(axis=2))


def forward(cube: SpectralCube, mask: CodedMask, spec: DispersionSpec) -> Measurement:
    """Full sensing operator: integrate(disperse(modulate(cube, mask), spec))."""
    _check_mask(mask, cube.height, cube.width)
    _check_reference(spec, cube.channels)
    return Measurement(forward_data(cube.data, mask.values, spec.step))


def adjoint(meas: Measurement, mask: CodedMask, spec: DispersionSpec, channels: int) -> SpectralCube:
    """Adjoint of :func:`forward` for a cube with ``channels`` bands.

    The channel count must be given explicitly: with ``step == 0`` it cannot
    be recovered from the measurement width.
    """
    _check_reference(spec, channels)
    return SpectralCube(adjoint_data(meas.data, mask.values, spec.step, channels))


def simulate(
    cube: SpectralCube,
    mask: CodedMask,
    spec: DispersionSpec,
    noise_sigma: float = 0.0,
    seed: int | np.random.Generator = 0,
) -> Measurement:
    """Noisy acquisition: forward model plus i.i.d. Gaussian detector noise.

    With ``noise_sigma == 0`` the result is bit-identical to :func:`forward`.
    Deterministic for a fixed seed; a caller-owned Generator is also accepted.
    """
    if noise_sigma < 0:
        raise ShapeError("noise_sigma must be non-negative")
    clean = forward(cube, mask, spec)
    if noise_sigma == 0:
        return clean
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return Measurement(clean.data + rng.normal(0.0, noise_sigma, size=clean.data.shape))


def shift_back(meas: Measurement, spec: DispersionSpec, channels: int,
               width: int | None = None) -> SpectralCube:
    """Initialization cube: each channel is the measurement's own window.

    ``width`` defaults to the value implied by the measurement width,
    ``W = W_m - step * (C - 1)``.
    """
    _check_reference(spec, channels)
    if width is None:
        width = meas.width - spec.step * (channels - 1)
        if width < 1:
            raise ShapeError(
                f"measurement width {meas.width} too small for d={spec.step}, C={channels}"
            )
    return SpectralCube(shift_back_data(meas.data, spec.step, width, channels))
