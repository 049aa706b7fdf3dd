import numpy as np
import pytest

from hiprompt import (
    InvalidParameterError,
    LatentGrid,
    ShapeMismatchError,
    extract,
    fuse,
    plan_patches,
)
from hiprompt.tiling import format_layout
from conftest import random_grid


def brute_origins(size, patch, stride):
    """Enumeration oracle: every stride multiple that fits, plus the clamp."""
    xs = [x for x in range(0, size, stride) if x + patch <= size]
    if xs[-1] + patch < size:
        xs.append(size - patch)
    return xs


class TestPlanPatches:
    def test_3x3_grid(self):
        layout = plan_patches(128, 128, 64, 64, 32, 32)
        assert layout.count == 9
        rows = sorted({r for r, _ in layout.origins})
        cols = sorted({c for _, c in layout.origins})
        assert rows == [0, 32, 64] and cols == [0, 32, 64]
        assert layout.coverage.max() == 4
        assert layout.coverage.min() == 1

    def test_single_patch(self):
        layout = plan_patches(40, 40, 40, 40, 8, 8)
        assert layout.origins == ((0, 0),)
        assert (layout.coverage == 1).all()

    def test_clamped_final_window(self):
        layout = plan_patches(64, 100, 64, 64, 32, 32)
        cols = sorted({c for _, c in layout.origins})
        assert cols == brute_origins(100, 64, 32) == [0, 32, 36]

    def test_patch_larger_than_grid(self):
        with pytest.raises(InvalidParameterError):
            plan_patches(32, 32, 64, 32, 8, 8)

    def test_full_coverage_and_sorted_unique(self, rng):
        for _ in range(20):
            gh, gw = int(rng.integers(8, 64)), int(rng.integers(8, 64))
            ph = int(rng.integers(2, gh + 1))
            pw = int(rng.integers(2, gw + 1))
            sh = int(rng.integers(1, ph + 1))
            sw = int(rng.integers(1, pw + 1))
            layout = plan_patches(gh, gw, ph, pw, sh, sw)
            assert (layout.coverage >= 1).all()
            assert list(layout.origins) == sorted(set(layout.origins))
            for r, c in layout.origins:
                assert 0 <= r <= gh - ph and 0 <= c <= gw - pw
            rows = sorted({r for r, _ in layout.origins})
            cols = sorted({c for _, c in layout.origins})
            assert rows == brute_origins(gh, ph, sh)
            assert cols == brute_origins(gw, pw, sw)


class TestExtract:
    def test_single_patch_is_whole_grid(self, rng):
        z = random_grid(rng, 12, 12, 2)
        layout = plan_patches(12, 12, 12, 12, 4, 4)
        np.testing.assert_array_equal(extract(z, layout, 0).values, z.values)

    def test_row_value_fixture(self):
        values = np.tile(np.arange(128.0)[:, None, None], (1, 128, 1))
        z = LatentGrid(values)
        layout = plan_patches(128, 128, 64, 64, 32, 32)
        i = layout.origins.index((32, 0))
        patch = extract(z, layout, i)
        assert patch.values[0, 0, 0] == 32.0

    def test_matches_index_arithmetic(self, rng):
        z = random_grid(rng, 20, 30, 3)
        layout = plan_patches(20, 30, 8, 10, 5, 7)
        for i, (r, c) in enumerate(layout.origins):
            np.testing.assert_array_equal(
                extract(z, layout, i).values, z.values[r : r + 8, c : c + 10, :]
            )

    def test_index_out_of_range(self, rng):
        z = random_grid(rng, 8, 8, 1)
        layout = plan_patches(8, 8, 4, 4, 4, 4)
        with pytest.raises(IndexError):
            extract(z, layout, layout.count)
        with pytest.raises(IndexError):
            extract(z, layout, -1)


class TestFuse:
    def test_constant_patches(self):
        layout = plan_patches(16, 16, 8, 8, 4, 4)
        patches = [LatentGrid.full(8, 8, 2, 3.5) for _ in range(layout.count)]
        np.testing.assert_array_equal(fuse(patches, layout).values, 3.5)

    def test_extract_then_fuse_identity(self, rng):
        for _ in range(5):
            gh, gw = int(rng.integers(10, 40)), int(rng.integers(10, 40))
            ph, pw = int(rng.integers(3, gh + 1)), int(rng.integers(3, gw + 1))
            layout = plan_patches(gh, gw, ph, pw, max(1, ph // 2), max(1, pw // 2))
            z = random_grid(rng, gh, gw, 2)
            patches = [extract(z, layout, i) for i in range(layout.count)]
            fused = fuse(patches, layout)
            assert np.max(np.abs(fused.values - z.values)) <= 1e-9

    def test_partition_of_unity_exact(self, rng):
        for _ in range(10):
            gh, gw = int(rng.integers(8, 48)), int(rng.integers(8, 48))
            ph, pw = int(rng.integers(2, gh + 1)), int(rng.integers(2, gw + 1))
            layout = plan_patches(gh, gw, ph, pw, max(1, ph // 3), max(1, pw // 3))
            ones = [LatentGrid.full(ph, pw, 1, 1.0) for _ in range(layout.count)]
            assert np.array_equal(fuse(ones, layout).values, np.ones((gh, gw, 1)))

    def test_half_overlap_band_averages(self):
        # two windows sharing a band: 0-valued and 1-valued -> band = 0.5
        layout = plan_patches(4, 6, 4, 4, 4, 2)
        assert layout.origins == ((0, 0), (0, 2))
        patches = [LatentGrid.zeros(4, 4, 1), LatentGrid.full(4, 4, 1, 1.0)]
        fused = fuse(patches, layout)
        np.testing.assert_array_equal(fused.values[:, :2, 0], 0.0)
        np.testing.assert_array_equal(fused.values[:, 2:4, 0], 0.5)
        np.testing.assert_array_equal(fused.values[:, 4:, 0], 1.0)

    def test_linear_and_order_independent(self, rng):
        layout = plan_patches(12, 12, 6, 6, 3, 3)
        a = [random_grid(rng, 6, 6, 1) for _ in range(layout.count)]
        b = [random_grid(rng, 6, 6, 1) for _ in range(layout.count)]
        lhs = fuse([LatentGrid(x.values + 2.0 * y.values) for x, y in zip(a, b)], layout)
        rhs = fuse(a, layout).values + 2.0 * fuse(b, layout).values
        assert np.max(np.abs(lhs.values - rhs)) <= 1e-12

    def test_pointwise_map_commutes(self, rng):
        layout = plan_patches(18, 14, 7, 6, 4, 3)
        z = random_grid(rng, 18, 14, 2)
        f = lambda v: 0.3 * v + 1.25
        fused = fuse(
            [LatentGrid(f(extract(z, layout, i).values)) for i in range(layout.count)], layout
        )
        assert np.max(np.abs(fused.values - f(z.values))) <= 1e-9

    def test_count_and_shape_errors(self, rng):
        layout = plan_patches(8, 8, 4, 4, 4, 4)
        patches = [random_grid(rng, 4, 4, 1) for _ in range(layout.count)]
        with pytest.raises(ShapeMismatchError):
            fuse(patches[:-1], layout)
        patches[0] = random_grid(rng, 4, 5, 1)
        with pytest.raises(ShapeMismatchError):
            fuse(patches, layout)


def test_format_layout_dump():
    layout = plan_patches(8, 8, 4, 4, 4, 4)
    text = format_layout(layout)
    lines = text.splitlines()
    assert lines[0] == "0 0 0"
    assert lines[1] == "0 0 4" or lines[1] == "1 0 4"
    assert lines[-1].startswith("coverage ")
    assert "1:64" in lines[-1]
