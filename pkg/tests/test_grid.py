import math

import numpy as np
import pytest

from hiprompt import (
    InvalidParameterError,
    LatentGrid,
    gaussian_blur,
    gaussian_kernel,
    grid_from_bytes,
    grid_to_bytes,
    moments,
    read_grid,
    resample,
    write_grid,
)
from conftest import random_grid
from oracles import bilinear_1d, brute_blur_2d, gaussian_weights, two_pass_moments


class TestLatentGrid:
    def test_shape_and_flat_roundtrip(self):
        g = LatentGrid.from_flat(2, 3, 1, [1, 2, 3, 4, 5, 6])
        assert g.shape == (2, 3, 1)
        assert g.values[1, 0, 0] == 4.0
        assert list(g.flat()) == [1, 2, 3, 4, 5, 6]

    def test_rejects_wrong_length(self):
        with pytest.raises(InvalidParameterError):
            LatentGrid.from_flat(2, 2, 1, [1, 2, 3])

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidParameterError):
            LatentGrid(np.array([[[np.nan]]]))
        with pytest.raises(InvalidParameterError):
            LatentGrid(np.array([[[np.inf]]]))

    def test_rejects_empty_axes(self):
        with pytest.raises(InvalidParameterError):
            LatentGrid(np.zeros((0, 4, 1)))

    def test_values_immutable(self):
        g = LatentGrid.zeros(2, 2, 1)
        with pytest.raises(ValueError):
            g.values[0, 0, 0] = 1.0


class TestGaussianKernel:
    def test_sigma_zero_is_identity(self):
        k = gaussian_kernel(0.0)
        assert k.radius == 0
        assert list(k.weights) == [1.0]

    def test_sigma_two_matches_normalized_exponentials(self):
        k = gaussian_kernel(2.0)
        assert k.radius == 6
        assert k.weights.size == 13
        expected, radius = gaussian_weights(2.0)
        assert radius == 6
        np.testing.assert_allclose(k.weights, expected, rtol=1e-14)
        assert abs(k.weights.sum() - 1.0) < 1e-12

    def test_sigma_half_center_is_max(self):
        k = gaussian_kernel(0.5)
        assert k.radius == 2
        assert k.weights.size == 5
        expected, _ = gaussian_weights(0.5)
        np.testing.assert_allclose(k.weights, expected, rtol=1e-14)
        assert k.weights[2] == k.weights.max()

    @pytest.mark.parametrize("sigma", [0.3, 0.5, 1.0, 2.0, 5.0])
    def test_symmetric_nonnegative_unit_sum(self, sigma):
        k = gaussian_kernel(sigma)
        np.testing.assert_array_equal(k.weights, k.weights[::-1])
        assert (k.weights >= 0).all()
        assert abs(k.weights.sum() - 1.0) < 1e-12

    @pytest.mark.parametrize("sigma", [-1.0, float("nan"), float("inf")])
    def test_invalid_sigma(self, sigma):
        with pytest.raises(InvalidParameterError):
            gaussian_kernel(sigma)


class TestGaussianBlur:
    def test_constant_grid_unchanged(self):
        g = LatentGrid.full(8, 8, 2, 3.25)
        for sigma in (0.0, 0.7, 2.0):
            out = gaussian_blur(g, sigma)
            np.testing.assert_allclose(out.values, g.values, rtol=1e-12)

    def test_impulse_yields_kernel_outer_product(self):
        values = np.zeros((32, 32, 1))
        values[16, 16, 0] = 1.0
        out = gaussian_blur(LatentGrid(values), 2.0)
        k = gaussian_kernel(2.0)
        expected = np.outer(k.weights, k.weights)
        np.testing.assert_allclose(
            out.values[10:23, 10:23, 0], expected, atol=1e-15
        )
        assert abs(out.values.sum() - 1.0) < 1e-12

    def test_matches_brute_force_2d(self, rng):
        g = random_grid(rng, 16, 16, 4)
        k = gaussian_kernel(2.0)
        expected = brute_blur_2d(g.values, np.asarray(k.weights), k.radius)
        got = gaussian_blur(g, 2.0)
        assert np.max(np.abs(got.values - expected)) <= 1e-6

    @pytest.mark.parametrize("shape", [(1, 9, 1), (9, 1, 1), (3, 3, 2), (2, 17, 3)])
    def test_matches_brute_force_on_odd_shapes(self, rng, shape):
        g = random_grid(rng, *shape)
        for sigma in (0.5, 2.0):
            k = gaussian_kernel(sigma)
            expected = brute_blur_2d(g.values, np.asarray(k.weights), k.radius)
            got = gaussian_blur(g, sigma)
            assert np.max(np.abs(got.values - expected)) <= 1e-6

    def test_reconstruction_residue_at_ulp_scale(self, rng):
        # Raw band arithmetic reconstructs to within one ulp; the exact
        # bit-for-bit identity is owned by the frequency-split type.
        for sigma in (0.0, 0.5, 2.0, 5.0):
            g = random_grid(rng, 12, 14, 3)
            low = gaussian_blur(g, sigma)
            again = low.values + (g.values - low.values)
            assert np.max(np.abs(again - g.values)) <= 1e-15

    def test_linearity(self, rng):
        x = random_grid(rng, 10, 10, 2)
        y = random_grid(rng, 10, 10, 2)
        a, b = 1.7, -0.4
        combo = gaussian_blur(LatentGrid(a * x.values + b * y.values), 2.0)
        parts = a * gaussian_blur(x, 2.0).values + b * gaussian_blur(y, 2.0).values
        assert np.max(np.abs(combo.values - parts)) <= 1e-9

    def test_range_never_exceeded(self, rng):
        for _ in range(5):
            g = random_grid(rng, 12, 12, 2)
            out = gaussian_blur(g, 2.0)
            assert out.values.min() >= g.values.min()
            assert out.values.max() <= g.values.max()

    def test_negative_sigma_propagates(self):
        with pytest.raises(InvalidParameterError):
            gaussian_blur(LatentGrid.zeros(4, 4, 1), -0.1)


class TestResample:
    @pytest.mark.parametrize("method", ["nearest", "bilinear", "bicubic"])
    def test_identity(self, rng, method):
        g = random_grid(rng, 7, 9, 3)
        out = resample(g, 7, 9, method)
        np.testing.assert_array_equal(out.values, g.values)

    @pytest.mark.parametrize("method", ["nearest", "bilinear", "bicubic"])
    @pytest.mark.parametrize("size", [(3, 5), (14, 18), (16, 7)])
    def test_constant_preserved(self, method, size):
        g = LatentGrid.full(8, 8, 2, -1.5)
        out = resample(g, size[0], size[1], method)
        np.testing.assert_allclose(out.values, -1.5, rtol=1e-12)

    def test_bilinear_hand_oracle(self):
        g = LatentGrid.from_flat(1, 2, 1, [0.0, 1.0])
        out = resample(g, 1, 4, "bilinear")
        expected = bilinear_1d([0.0, 1.0], 4)
        assert expected == [0.0, 0.25, 0.75, 1.0]
        np.testing.assert_allclose(out.values[0, :, 0], expected, atol=1e-15)

    def test_bilinear_matches_separable_oracle(self, rng):
        g = random_grid(rng, 4, 6, 1)
        out = resample(g, 8, 9, "bilinear")
        # rows first is equivalent to columns first for separable kernels
        rows = np.array([bilinear_1d(list(col), 8) for col in g.values[:, :, 0].T]).T
        both = np.array([bilinear_1d(list(row), 9) for row in rows])
        np.testing.assert_allclose(out.values[:, :, 0], both, atol=1e-12)

    def test_bicubic_interpolates_linear_ramp_exactly(self):
        # Catmull-Rom reproduces degree-1 polynomials away from the borders.
        ramp = np.arange(16, dtype=float)[None, :, None] * np.ones((3, 1, 1))
        out = resample(LatentGrid(ramp), 3, 32, "bicubic")
        xs = (np.arange(32) + 0.5) * 0.5 - 0.5
        inner = (xs >= 1.0) & (xs <= 14.0)
        np.testing.assert_allclose(out.values[1, inner, 0], xs[inner], atol=1e-12)

    def test_invalid_target(self):
        g = LatentGrid.zeros(4, 4, 1)
        with pytest.raises(InvalidParameterError):
            resample(g, 0, 4)
        with pytest.raises(InvalidParameterError):
            resample(g, 4, -1)
        with pytest.raises(InvalidParameterError):
            resample(g, 4, 4, "lanczos")


class TestMoments:
    def test_constant(self):
        assert moments(LatentGrid.full(3, 3, 1, 2.5)) == (2.5, 0.0)

    def test_two_point(self):
        assert moments(LatentGrid.from_flat(1, 2, 1, [0.0, 2.0])) == (1.0, 1.0)

    def test_matches_two_pass_oracle(self, rng):
        g = random_grid(rng, 9, 7, 3, scale=2.0)
        mean, var = moments(g)
        exp_mean, exp_var = two_pass_moments(g.flat())
        assert abs(mean - exp_mean) <= 1e-10
        assert abs(var - exp_var) <= 1e-10


class TestGridFiles:
    def test_roundtrip(self, tmp_path, rng):
        g = random_grid(rng, 5, 4, 2)
        path = tmp_path / "fixture.grid"
        write_grid(path, g)
        back = read_grid(path)
        assert back.shape == g.shape
        np.testing.assert_allclose(back.values, g.values, atol=1e-6)

    def test_layout_is_header_plus_le_float32(self, rng):
        g = LatentGrid.from_flat(1, 2, 1, [1.0, -2.0])
        blob = grid_to_bytes(g)
        assert blob[:12] == (1).to_bytes(4, "little") + (2).to_bytes(4, "little") + (1).to_bytes(4, "little")
        assert np.frombuffer(blob[12:], dtype="<f4").tolist() == [1.0, -2.0]

    def test_truncated_rejected(self):
        with pytest.raises(InvalidParameterError):
            grid_from_bytes(b"\x01\x00\x00")
        g = LatentGrid.zeros(2, 2, 1)
        with pytest.raises(InvalidParameterError):
            grid_from_bytes(grid_to_bytes(g)[:-1])
