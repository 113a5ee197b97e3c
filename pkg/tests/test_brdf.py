import numpy as np
import pytest

from psbrdf.brdf import (
    BrdfDictionary,
    TabulatedBrdf,
    blinn_phong,
    cook_torrance,
    eval_brdf,
    fit_to_dictionary,
    lambertian,
    relative_brdf_error,
    resample,
    tabulate,
    ward,
)
from psbrdf.halfdiff import HalfDiffGrid, half_diff_to_directions
from psbrdf.normals import nnls

from conftest import rand_unit


def constant_brdf(grid, value):
    return TabulatedBrdf(grid, np.full(grid.size, value))


class TestEval:
    def test_constant_table(self, grid):
        b = constant_brdf(grid, 3.25)
        rng = np.random.default_rng(0)
        for _ in range(50):
            l, v = rand_unit(rng, 2)
            if l[2] < 1e-3 or v[2] < 1e-3:
                continue
            assert eval_brdf(b, (0, 0, 1), l, v)[0] == pytest.approx(3.25, abs=1e-12)

    def test_backfacing_light_returns_zero(self, grid):
        b = constant_brdf(grid, 1.0)
        out = eval_brdf(b, (0, 0, 1), (0, 0, -1), (0, 0, 1))
        assert np.all(out == 0.0)

    def test_exact_at_grid_nodes(self, grid):
        spec = blinn_phong(0.3, 0.5, 60.0)
        atom = tabulate(spec, grid)
        coords = grid.node_coords()
        n, l, v = half_diff_to_directions(coords[:, 0], coords[:, 1], coords[:, 2])
        physical = (np.sum(n * l, axis=1) > 1e-6) & (np.sum(n * v, axis=1) > 1e-6)
        rng = np.random.default_rng(1)
        for i in rng.choice(np.flatnonzero(physical), 100, replace=False):
            got = eval_brdf(atom, n[i], l[i], v[i])[0]
            want = float(spec.evaluate(n[i], l[i], v[i]))
            assert got == pytest.approx(want, rel=1e-9, abs=1e-12)

    def test_reciprocity_exact(self, grid):
        atom = tabulate(ward(0.3, 0.4, 0.2), grid)
        rng = np.random.default_rng(2)
        checked = 0
        while checked < 300:
            n, l, v = rand_unit(rng, 3)
            if n @ l < 1e-3 or n @ v < 1e-3:
                continue
            a = eval_brdf(atom, n, l, v)
            b = eval_brdf(atom, n, v, l)
            assert np.array_equal(a, b)
            checked += 1


class TestTabulate:
    def test_lambertian_constant(self, grid):
        atom = tabulate(lambertian(0.7), grid)
        np.testing.assert_allclose(atom.values, 0.7 / np.pi)

    def test_wide_ward_approaches_diffuse(self, grid):
        wide = tabulate(ward(0.5, 0.4, 1e8), grid)
        lam = tabulate(lambertian(0.5), grid)
        assert np.abs(wide.values - lam.values).max() < 1e-8

    @pytest.mark.parametrize(
        "spec",
        [
            lambertian(0.9),
            blinn_phong(0.2, 0.7, 250.0),
            ward(0.1, 0.6, 0.05),
            cook_torrance(0.05, 0.6, 0.04, 0.95),
        ],
    )
    def test_finite_nonnegative(self, grid, spec):
        atom = tabulate(spec, grid)
        assert np.all(np.isfinite(atom.values))
        assert np.all(atom.values >= 0)

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            lambertian(-0.1)
        with pytest.raises(ValueError):
            ward(0.3, 0.3, 0.0)
        with pytest.raises(ValueError):
            cook_torrance(0.3, 0.3, 0.1, 1.5)
        with pytest.raises(ValueError):
            blinn_phong(0.3, 0.3, -2.0)


class TestRelativeError:
    def test_identical_is_zero(self, grid):
        a = tabulate(ward(0.3, 0.4, 0.2), grid)
        assert relative_brdf_error(a, a) == 0.0

    def test_constant_offset_closed_form(self, grid):
        base = tabulate(lambertian(0.4), grid)
        delta = 0.37
        shifted = TabulatedBrdf(grid, base.values + delta)
        got = relative_brdf_error(shifted, base)
        # independent direct-summation oracle
        coords = grid.node_coords()
        w = np.maximum(0.0, np.cos(np.radians(coords[:, 0])))
        expect = np.sqrt(np.sum((delta * w) ** 2) / grid.size)
        assert got == pytest.approx(expect, rel=1e-12)
        # closed form: delta times the rms of the damping profile
        assert got == pytest.approx(delta * np.sqrt(np.mean(w**2)), rel=1e-12)

    def test_symmetry(self, grid):
        a = tabulate(ward(0.3, 0.4, 0.2), grid)
        b = tabulate(blinn_phong(0.2, 0.5, 40.0), grid)
        assert relative_brdf_error(a, b) == relative_brdf_error(b, a)

    def test_grid_mismatch_rejected(self, grid):
        a = tabulate(lambertian(0.4), grid)
        other = HalfDiffGrid.with_divisor(9)
        b = tabulate(lambertian(0.4), other)
        with pytest.raises(ValueError):
            relative_brdf_error(a, b)


class TestFitToDictionary:
    def test_recovers_single_atom(self, mixed_dict):
        c = fit_to_dictionary(mixed_dict.atoms[3], mixed_dict, lam=0.0)
        expect = np.zeros(len(mixed_dict))
        expect[3] = 1.0
        np.testing.assert_allclose(c, expect, atol=1e-6)

    def test_in_span_zero_residual(self, mixed_dict):
        mix = mixed_dict.combine(
            np.array([0.5, 0, 0, 0.5, 0, 0, 0, 0, 0, 0, 0], dtype=float)
        )
        c = fit_to_dictionary(mix, mixed_dict, lam=0.0)
        recon = mixed_dict.combine(c)
        assert relative_brdf_error(recon, mix) < 1e-8

    def test_leave_one_out_beats_single_atoms(self, mixed_dict):
        target = mixed_dict.atoms[5]
        others = [a for i, a in enumerate(mixed_dict.atoms) if i != 5]
        sub = BrdfDictionary(mixed_dict.grid, tuple(others))
        c = fit_to_dictionary(target, sub, lam=0.0)
        recon = sub.combine(c)
        loo = relative_brdf_error(recon, target)
        # oracle: best single-atom scaled fit
        best = np.inf
        for atom in sub.atoms:
            num = float(atom.values.ravel() @ target.values.ravel())
            den = float(atom.values.ravel() @ atom.values.ravel())
            scale = max(num / den, 0.0)
            single = TabulatedBrdf(sub.grid, scale * atom.values)
            best = min(best, relative_brdf_error(single, target))
        assert loo <= best + 1e-12

    def test_kkt_conditions(self, mixed_dict):
        rng = np.random.default_rng(4)
        target = mixed_dict.combine(rng.uniform(0, 1, len(mixed_dict)))
        lam = 1e-3
        c = fit_to_dictionary(target, mixed_dict, lam=lam)
        d = mixed_dict.matrix(0).T
        g = 2.0 * d.T @ (d @ c - target.values[0]) + lam
        scale = np.abs(d.T @ target.values[0]).max()
        tol = 1e-6 * scale
        assert g.min() >= -tol
        assert np.abs(g[c > 0]).max(initial=0.0) <= tol

    def test_empty_dictionary_rejected(self, grid):
        with pytest.raises(ValueError):
            BrdfDictionary(grid, ())


class TestResample:
    def test_identity_on_same_grid(self, grid):
        a = tabulate(ward(0.3, 0.4, 0.2), grid)
        assert resample(a, grid) is a

    def test_constant_preserved(self):
        g1 = HalfDiffGrid.with_divisor(3)
        g2 = HalfDiffGrid.with_divisor(6)
        a = constant_brdf(g1, 1.5)
        b = resample(a, g2)
        np.testing.assert_allclose(b.values, 1.5)
