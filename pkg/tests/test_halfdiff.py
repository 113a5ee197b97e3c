import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from psbrdf.halfdiff import (
    HalfDiffGrid,
    half_diff_coords,
    half_diff_to_directions,
    sample_weights,
    to_half_diff,
)

from conftest import rand_unit


def rotation(axis, deg):
    axis = np.asarray(axis, float)
    axis = axis / np.linalg.norm(axis)
    a = np.radians(deg)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(a) * k + (1 - np.cos(a)) * (k @ k)


def oracle_half_diff(n, l, v):
    """Independent rotation-matrix implementation of the coordinate transform."""
    n = np.asarray(n, float)
    l = np.asarray(l, float)
    v = np.asarray(v, float)
    h = l + v
    h = h / np.linalg.norm(h)
    theta_h = np.degrees(np.arccos(np.clip(n @ h, -1, 1)))
    # rotate everything so n -> z, with an arbitrary but fixed tangent
    ref = np.eye(3)[np.argmin(np.abs(n))]
    t = ref - (ref @ n) * n
    t /= np.linalg.norm(t)
    b = np.cross(n, t)
    world_to_local = np.stack([t, b, n])
    hl = world_to_local @ h
    ll = world_to_local @ l
    phi_h = np.degrees(np.arctan2(hl[1], hl[0]))
    d = rotation((0, 1, 0), -theta_h) @ rotation((0, 0, 1), -phi_h) @ ll
    theta_d = np.degrees(np.arccos(np.clip(d[2], -1, 1)))
    phi_d = np.degrees(np.arctan2(d[1], d[0])) % 180.0
    return theta_h, theta_d, phi_d


class TestToHalfDiff:
    def test_fully_aligned(self):
        assert to_half_diff((0, 0, 1), (0, 0, 1), (0, 0, 1)) == (0.0, 0.0, 0.0)

    def test_grazing_view_45(self):
        th, td, pd = to_half_diff((0, 0, 1), (0, 0, 1), (1, 0, 0))
        assert th == pytest.approx(45.0, abs=1e-9)
        assert td == pytest.approx(45.0, abs=1e-9)
        n, l, v = (0, 0, 1), (0, 0, 1), (1, 0, 0)
        oth, otd, opd = oracle_half_diff(n, l, v)
        assert th == pytest.approx(oth, abs=1e-9)
        assert td == pytest.approx(otd, abs=1e-9)
        assert min(abs(pd - opd), 180 - abs(pd - opd)) < 1e-9

    def test_matches_rotation_oracle(self):
        rng = np.random.default_rng(42)
        checked = 0
        while checked < 300:
            n, l, v = rand_unit(rng, 3)
            if n @ l < 1e-3 or n @ v < 1e-3:
                continue
            th, td, pd = to_half_diff(n, l, v)
            oth, otd, opd = oracle_half_diff(n, l, v)
            assert th == pytest.approx(oth, abs=1e-8)
            assert td == pytest.approx(otd, abs=1e-6)
            if oth > 1e-6 and otd > 1e-6:
                assert min(abs(pd - opd), 180 - abs(pd - opd)) < 1e-6
            checked += 1

    def test_swap_is_bit_exact(self):
        rng = np.random.default_rng(7)
        checked = 0
        while checked < 500:
            n, l, v = rand_unit(rng, 3)
            if n @ l < 1e-3 or n @ v < 1e-3:
                continue
            a = half_diff_coords(n, l, v)
            b = half_diff_coords(n, v, l)
            assert np.array_equal(a, b)
            checked += 1

    def test_theta_d_is_half_angle(self):
        rng = np.random.default_rng(3)
        checked = 0
        while checked < 10_000:
            l, v = rand_unit(rng, 2)
            n = np.array([0.0, 0.0, 1.0])
            if l[2] < 1e-3 or v[2] < 1e-3:
                continue
            c = half_diff_coords(n, l, v)
            expect = 0.5 * np.degrees(np.arccos(np.clip(l @ v, -1, 1)))
            assert abs(c[1] - expect) < 1e-9
            checked += 1

    def test_rejects_non_unit(self):
        with pytest.raises(ValueError, match="unit-norm"):
            to_half_diff((0, 0, 2), (0, 0, 1), (0, 0, 1))

    def test_rejects_backfacing(self):
        with pytest.raises(ValueError, match="front-facing"):
            to_half_diff((0, 0, 1), (0, 0, -1), (0, 0, 1))

    def test_rejects_opposed_light_view(self):
        n = np.array([0.0, 1.0, 0.0])
        with pytest.raises(ValueError):
            to_half_diff(n, (1, 0, 0), (-1, 0, 0))

    def test_reconstruction_roundtrip(self, grid):
        coords = grid.node_coords()
        n, l, v = half_diff_to_directions(coords[:, 0], coords[:, 1], coords[:, 2])
        physical = (np.sum(n * l, axis=1) > 1e-9) & (np.sum(n * v, axis=1) > 1e-9)
        nondeg = physical & (coords[:, 0] > 1e-9) & (coords[:, 1] > 1e-9)
        back = half_diff_coords(n[nondeg], l[nondeg], v[nondeg])
        err = np.abs(back - coords[nondeg])
        err[:, 2] = np.minimum(err[:, 2], 180.0 - err[:, 2])
        assert err[:, 0].max() < 1e-9
        assert err[:, 1].max() < 1e-6
        assert err[:, 2].max() < 1e-6


class TestSampleWeights:
    def test_on_node_single_weight(self, grid):
        w = sample_weights(grid, (grid.step_th * 2, grid.step_td * 3, grid.step_pd * 4))
        assert len(w.indices) == 1
        assert w.weights[0] == 1.0

    def test_cell_center_eighths(self, grid):
        coords = (grid.step_th * 1.5, grid.step_td * 2.5, grid.step_pd * 3.5)
        w = sample_weights(grid, coords)
        assert len(w.indices) == 8
        np.testing.assert_allclose(w.weights, 0.125)

    def test_constant_table_reproduced(self, grid):
        rng = np.random.default_rng(0)
        table = np.full(grid.size, 2.71)
        for _ in range(200):
            coords = (rng.uniform(0, 90), rng.uniform(0, 90), rng.uniform(0, 180))
            w = sample_weights(grid, coords)
            assert w.apply(table) == pytest.approx(2.71, abs=1e-12)

    @given(
        th=st.floats(0, 89.999),
        td=st.floats(0, 89.999),
        pd=st.floats(0, 179.999),
    )
    @settings(max_examples=200, deadline=None)
    def test_partition_of_unity(self, th, td, pd):
        grid = HalfDiffGrid.with_divisor(6)
        w = sample_weights(grid, (th, td, pd))
        assert np.all(w.weights >= 0)
        assert abs(w.weights.sum() - 1.0) < 1e-12

    def test_phi_wraps(self, grid):
        near_wrap = 180.0 - grid.step_pd * 0.5
        w = sample_weights(grid, (10.0, 10.0, near_wrap))
        cols = w.indices % grid.n_pd
        assert 0 in cols and grid.n_pd - 1 in cols

    def test_theta_clamps(self, grid):
        w = sample_weights(grid, (89.999, 10.0, 10.0))
        rows = w.indices // (grid.n_td * grid.n_pd)
        assert set(rows.tolist()) == {grid.n_th - 1}

    def test_range_check(self, grid):
        with pytest.raises(ValueError):
            sample_weights(grid, (95.0, 10.0, 10.0))


class TestGrid:
    def test_full_resolution_size(self):
        g = HalfDiffGrid.full_resolution()
        assert g.size == 1_458_000

    def test_divisor_validation(self):
        with pytest.raises(ValueError):
            HalfDiffGrid.with_divisor(7)
        g = HalfDiffGrid.with_divisor(6)
        assert (g.n_th, g.n_td, g.n_pd) == (15, 15, 30)

    def test_minimum_bins(self):
        with pytest.raises(ValueError):
            HalfDiffGrid(1, 4, 4)
