import numpy as np
import pytest

from aspun.cassi import (
    CodedMask,
    DispersionSpec,
    Measurement,
    SpectralCube,
    adjoint,
    adjoint_data,
    disperse,
    forward,
    forward_data,
    integrate,
    measurement_width,
    modulate,
    shift_back,
    simulate,
)
from aspun.errors import ShapeError


def random_instance(rng, height=None, width=None, channels=None, step=None):
    height = height or int(rng.integers(1, 17))
    width = width or int(rng.integers(1, 17))
    channels = channels or int(rng.integers(1, 9))
    step = int(rng.integers(0, 3)) if step is None else step
    cube = SpectralCube(rng.uniform(0, 1, (height, width, channels)))
    mask = CodedMask(rng.uniform(0, 1, (height, width)))
    return cube, mask, DispersionSpec(step)


class TestTypes:
    def test_cube_validates_wavelengths(self):
        with pytest.raises(ShapeError):
            SpectralCube(np.zeros((2, 2, 2)), wavelengths=[500.0, 450.0])

    def test_cube_rejects_nonfinite(self):
        data = np.zeros((2, 2, 1))
        data[0, 0, 0] = np.nan
        with pytest.raises(ShapeError):
            SpectralCube(data)

    def test_mask_range_enforced(self):
        with pytest.raises(ShapeError):
            CodedMask(np.full((2, 2), 1.5))

    def test_dispersion_step_non_negative_integer(self):
        with pytest.raises(ShapeError):
            DispersionSpec(-1)
        with pytest.raises(ShapeError):
            DispersionSpec(1.5)


class TestModulate:
    def test_identity_mask(self):
        cube = SpectralCube(np.ones((3, 3, 2)))
        out = modulate(cube, CodedMask(np.ones((3, 3))))
        np.testing.assert_array_equal(out.data, cube.data)

    def test_annihilator_mask(self):
        cube = SpectralCube(np.random.default_rng(0).uniform(0, 1, (3, 3, 2)))
        out = modulate(cube, CodedMask(np.zeros((3, 3))))
        np.testing.assert_array_equal(out.data, np.zeros((3, 3, 2)))

    def test_hand_multiplication(self):
        cube = SpectralCube(np.array([[1.0, 2.0], [3.0, 4.0]])[:, :, None])
        mask = CodedMask(np.array([[0.5, 1.0], [1.0, 0.0]]))
        out = modulate(cube, mask)
        np.testing.assert_allclose(out.data[:, :, 0], [[0.5, 2.0], [3.0, 0.0]])

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            modulate(SpectralCube(np.ones((3, 3, 1))), CodedMask(np.ones((2, 3))))


class TestDisperse:
    def test_zero_step_is_identity(self):
        cube = SpectralCube(np.random.default_rng(1).uniform(0, 1, (4, 5, 3)))
        out = disperse(cube, DispersionSpec(0))
        np.testing.assert_array_equal(out.data, cube.data)

    def test_hand_enumerated_shift(self):
        a, b, c, e = 1.0, 2.0, 3.0, 4.0
        cube = SpectralCube(np.array([[[a, c], [b, e]]]))  # 1x2x2
        out = disperse(cube, DispersionSpec(1))
        np.testing.assert_allclose(out.data[0, :, 0], [a, b, 0.0])
        np.testing.assert_allclose(out.data[0, :, 1], [0.0, c, e])

    def test_single_channel_any_step(self):
        cube = SpectralCube(np.random.default_rng(2).uniform(0, 1, (3, 4, 1)))
        out = disperse(cube, DispersionSpec(5))
        np.testing.assert_array_equal(out.data, cube.data)

    def test_crop_recovers_each_channel(self):
        rng = np.random.default_rng(3)
        cube, _, spec = random_instance(rng, step=2)
        wide = disperse(cube, spec)
        for n in range(cube.channels):
            off = spec.step * n
            np.testing.assert_array_equal(
                wide.data[:, off:off + cube.width, n], cube.data[:, :, n])


class TestIntegrate:
    def test_single_channel(self):
        cube = SpectralCube(np.random.default_rng(4).uniform(0, 1, (3, 3, 1)))
        np.testing.assert_array_equal(integrate(cube).data, cube.data[:, :, 0])

    def test_constant_sum(self):
        cube = SpectralCube(np.ones((2, 2, 2)))
        np.testing.assert_array_equal(integrate(cube).data, np.full((2, 2), 2.0))

    def test_dispersed_row_sum(self):
        a, b, c, e = 1.0, 2.0, 3.0, 4.0
        cube = SpectralCube(np.array([[[a, c], [b, e]]]))
        meas = integrate(disperse(cube, DispersionSpec(1)))
        np.testing.assert_allclose(meas.data[0], [a, b + c, e])


class TestForward:
    def test_identity_chain(self):
        cube = SpectralCube(np.random.default_rng(5).uniform(0, 1, (4, 4, 1)))
        out = forward(cube, CodedMask(np.ones((4, 4))), DispersionSpec(0))
        np.testing.assert_array_equal(out.data, cube.data[:, :, 0])

    def test_linearity(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            _, mask, spec = random_instance(rng)
            h, w = mask.values.shape
            c = int(rng.integers(1, 6))
            x1 = rng.standard_normal((h, w, c))
            x2 = rng.standard_normal((h, w, c))
            alpha, beta = rng.standard_normal(2)
            combined = forward_data(alpha * x1 + beta * x2, mask.values, spec.step)
            separate = (alpha * forward_data(x1, mask.values, spec.step)
                        + beta * forward_data(x2, mask.values, spec.step))
            np.testing.assert_allclose(combined, separate, atol=1e-12)

    def test_zero_cube(self):
        out = forward(SpectralCube(np.zeros((3, 3, 2))),
                      CodedMask(np.ones((3, 3))), DispersionSpec(1))
        np.testing.assert_array_equal(out.data, np.zeros((3, 4)))

    def test_width_law_random_shapes(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            cube, mask, spec = random_instance(rng)
            out = forward(cube, mask, spec)
            assert out.width == measurement_width(cube.width, spec.step, cube.channels)

    def test_equals_staged_composition_bitwise(self):
        rng = np.random.default_rng(17)
        cube, mask, spec = random_instance(rng, step=2)
        staged = integrate(disperse(modulate(cube, mask), spec))
        np.testing.assert_array_equal(forward(cube, mask, spec).data, staged.data)


class TestAdjoint:
    def test_inner_product_identity_100_trials(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            cube, mask, spec = random_instance(rng)
            h, w, c = cube.shape
            x = rng.standard_normal((h, w, c))
            y = rng.standard_normal((h, measurement_width(w, spec.step, c)))
            lhs = float(np.sum(forward_data(x, mask.values, spec.step) * y))
            rhs = float(np.sum(x * adjoint_data(y, mask.values, spec.step, c)))
            assert abs(lhs - rhs) / (abs(lhs) + 1e-12) < 1e-10

    def test_self_adjoint_identity_case(self):
        y = Measurement(np.random.default_rng(9).standard_normal((4, 4)))
        out = adjoint(y, CodedMask(np.ones((4, 4))), DispersionSpec(0), channels=1)
        np.testing.assert_array_equal(out.data[:, :, 0], y.data)

    def test_zero_measurement(self):
        out = adjoint(Measurement(np.zeros((3, 5))), CodedMask(np.ones((3, 3))),
                      DispersionSpec(1), channels=3)
        np.testing.assert_array_equal(out.data, np.zeros((3, 3, 3)))

    def test_incompatible_width_raises(self):
        with pytest.raises(ShapeError):
            adjoint(Measurement(np.zeros((3, 4))), CodedMask(np.ones((3, 3))),
                    DispersionSpec(1), channels=3)

    def test_adjoint_of_forward_preserves_shape(self):
        rng = np.random.default_rng(10)
        cube, mask, spec = random_instance(rng)
        out = adjoint(forward(cube, mask, spec), mask, spec, cube.channels)
        assert out.shape == cube.shape


class TestSimulate:
    def test_zero_noise_equals_forward(self):
        rng = np.random.default_rng(11)
        cube, mask, spec = random_instance(rng)
        np.testing.assert_array_equal(simulate(cube, mask, spec, 0.0, seed=5).data,
                                      forward(cube, mask, spec).data)

    def test_same_seed_bit_identical(self):
        rng = np.random.default_rng(12)
        cube, mask, spec = random_instance(rng)
        a = simulate(cube, mask, spec, 0.3, seed=42)
        b = simulate(cube, mask, spec, 0.3, seed=42)
        np.testing.assert_array_equal(a.data, b.data)

    def test_noise_variance_within_5_percent(self):
        sigma = 0.25
        cube = SpectralCube(np.zeros((250, 400, 1)))
        mask = CodedMask(np.ones((250, 400)))
        spec = DispersionSpec(0)
        noisy = simulate(cube, mask, spec, sigma, seed=0)
        clean = forward(cube, mask, spec)
        sample_var = float(np.var(noisy.data - clean.data))
        assert abs(sample_var - sigma ** 2) < 0.05 * sigma ** 2

    def test_negative_sigma_rejected(self):
        rng = np.random.default_rng(13)
        cube, mask, spec = random_instance(rng)
        with pytest.raises(ShapeError):
            simulate(cube, mask, spec, -0.1)


class TestShiftBack:
    def test_zero_step_replicates(self):
        y = Measurement(np.random.default_rng(14).standard_normal((3, 4)))
        out = shift_back(y, DispersionSpec(0), channels=3)
        for n in range(3):
            np.testing.assert_array_equal(out.data[:, :, n], y.data)

    def test_single_channel_identity(self):
        y = Measurement(np.random.default_rng(15).standard_normal((3, 4)))
        out = shift_back(y, DispersionSpec(2), channels=1)
        np.testing.assert_array_equal(out.data[:, :, 0], y.data)

    def test_round_trip_windows_by_brute_force(self):
        # 3x3x2 cube, d=1: enumerate the index map by hand and compare.
        rng = np.random.default_rng(16)
        x = rng.uniform(0, 1, (3, 3, 2))
        spec = DispersionSpec(1)
        cube = SpectralCube(x)
        meas = integrate(disperse(cube, spec))
        back = shift_back(meas, spec, channels=2)
        expected = np.zeros((3, 3, 2))
        for n in range(2):
            for u in range(3):
                for v in range(3):
                    col = v + n  # channel n's window starts at column d*n
                    total = 0.0
                    for m in range(2):
                        src = col - m  # channel m contributed x[u, col-m, m]
                        if 0 <= src < 3:
                            total += x[u, src, m]
                    expected[u, v, n] = total
        np.testing.assert_allclose(back.data, expected, atol=1e-14)

    def test_width_mismatch(self):
        with pytest.raises(ShapeError):
            shift_back(Measurement(np.zeros((3, 4))), DispersionSpec(1), channels=3, width=3)
        with pytest.raises(ShapeError):
            shift_back(Measurement(np.zeros((3, 1))), DispersionSpec(1), channels=3)
