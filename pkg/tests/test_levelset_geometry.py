# tests/test_levelset_geometry.py
import math

import numpy as np
import pytest

from core.errors import ShellUnresolved
from core.levelset_geometry import (
    SmearSettings,
    ac_gradient_check,
    curvature_terms,
    gradient_field,
    level_set_connected,
    mean_curvature_field,
    smear_window,
    smeared_surface_integral,
    surface_report,
)


def _schwarzschild_t(r, m=1.0):
    return r + 0.5 * m


class TestSmearWindow:
    def test_unit_mass_and_support(self):
        eps = 0.2
        x = np.linspace(-0.15, 0.15, 30001)
        w = smear_window(x, eps)
        assert np.trapezoid(w, x) == pytest.approx(1.0, rel=1e-8)
        assert w[np.abs(x) >= 0.1].max() == 0.0


class TestPointwiseFields:
    def test_euclidean_mean_curvature(self, euclid_oracle):
        H = mean_curvature_field(euclid_oracle)
        r = euclid_oracle.grid.r_centers[:, None, None]
        assert np.allclose(H, np.broadcast_to(2.0 / r, H.shape), rtol=1e-8)

    def test_schwarzschild_gradient_and_curvature(self, schw_oracle):
        """|∇u|_g = r²/t⁴, H = 2r(t − m)/t³, t = r + m/2."""
        r = schw_oracle.grid.r_centers[:, None, None]
        t = _schwarzschild_t(r)
        grad = gradient_field(schw_oracle)
        assert np.allclose(grad.norm, np.broadcast_to(r * r / t ** 4, grad.norm.shape), rtol=1e-10)
        H = mean_curvature_field(schw_oracle)
        rows = schw_oracle.grid.r_centers > 0.1
        expected = np.broadcast_to(2.0 * r * (t - 1.0) / t ** 3, H.shape)
        assert np.allclose(H[rows], expected[rows], rtol=1e-5, atol=1e-6)


class TestSurfaceIntegrals:
    def test_euclidean_area_and_energy(self, euclid_oracle):
        rep = surface_report(euclid_oracle, 4.0)
        assert rep.area == pytest.approx(64.0 * math.pi, rel=1e-2)
        assert rep.int_gradu_sq == pytest.approx(math.pi / 4.0, rel=1e-2)
        assert rep.int_H_gradu == pytest.approx(2.0 * math.pi, rel=5e-3)
        assert rep.smear_width > 0

    def test_richardson_stays_close(self, euclid_oracle):
        plain = smeared_surface_integral(euclid_oracle, "gradu_sq", 4.0)
        extrapolated = smeared_surface_integral(euclid_oracle, "gradu_sq", 4.0,
                                                settings=SmearSettings(richardson=True))
        assert extrapolated == pytest.approx(math.pi / 4.0, rel=1e-2)
        assert extrapolated == pytest.approx(plain, rel=1e-2)

    def test_callable_integrand(self, euclid_oracle):
        area = smeared_surface_integral(euclid_oracle, lambda s: np.ones_like(s.u), 2.0)
        assert area == pytest.approx(16.0 * math.pi, rel=1e-2)

    def test_unknown_field_name(self, euclid_oracle):
        with pytest.raises(ValueError):
            smeared_surface_integral(euclid_oracle, "nope", 4.0)

    def test_level_outside_grid(self, euclid_oracle):
        with pytest.raises(ShellUnresolved):
            smeared_surface_integral(euclid_oracle, "one", 1e5)

    def test_too_few_samples_in_shell(self, euclid_oracle):
        with pytest.raises(ShellUnresolved) as info:
            smeared_surface_integral(euclid_oracle, "gradu_sq", 4.0, settings=SmearSettings(n_sub=1))
        assert info.value.details["required"] == 3

    def test_wider_shell_resolves_coarse_sampling(self, euclid_oracle):
        wide = SmearSettings(smear_cells=4.0, n_sub=2)
        assert smeared_surface_integral(euclid_oracle, "gradu_sq", 4.0, settings=wide) == pytest.approx(
            math.pi / 4.0, rel=5e-2)


class TestCurvatureTerms:
    def test_euclidean_f_prime_vanishes(self, euclid_oracle):
        terms = curvature_terms(euclid_oracle, 4.0)
        assert terms.connected
        assert not terms.experimental
        assert terms.int_RSigma == pytest.approx(8.0 * math.pi)
        assert abs(terms.int_sphere_defect) < 1e-10
        assert abs(terms.F_prime) < 1e-9

    def test_schwarzschild_f_prime(self, schw_oracle):
        """F(t) = 8πm − 3πm²/t ⇒ F′(t) = 3πm²/t²."""
        for t in (2.0, 4.0):
            terms = curvature_terms(schw_oracle, t)
            assert terms.int_R == 0.0
            assert terms.F_prime == pytest.approx(3.0 * math.pi / t ** 2, rel=2e-2)

    def test_connected_scan(self, euclid_oracle):
        assert level_set_connected(euclid_oracle, 8.0)


class TestAcGradient:
    def test_euclidean_identity(self, euclid_oracle):
        table = ac_gradient_check(euclid_oracle, [2.0, 4.0, 8.0])
        assert list(table.columns) == ["t", "lhs", "rhs", "rel_err"]
        assert np.allclose(table["rhs"], -8.0 * math.pi / table["t"] ** 3, rtol=5e-3)
        assert (table["rel_err"] < 2e-2).all()

    def test_schwarzschild_identity(self, schw_oracle):
        table = ac_gradient_check(schw_oracle, [2.0, 4.0, 8.0])
        assert (table["rel_err"] < 2e-2).all()


class TestGridSolve:
    def test_schwarzschild_f_prime(self, schw_solution):
        terms = curvature_terms(schw_solution, 2.0)
        assert not terms.experimental
        assert terms.int_R == 0.0
        assert terms.F_prime == pytest.approx(3.0 * math.pi / 4.0, rel=0.15)

    def test_ac_gradient_identity(self, schw_solution):
        table = ac_gradient_check(schw_solution, [2.0, 4.0, 8.0])
        assert (table["rel_err"] < 5e-2).all()

    def test_gradient_norm(self, schw_solution):
        r = schw_solution.grid.r_centers
        rows = (r > 1.0) & (r < 100.0)
        grad = gradient_field(schw_solution).norm[rows]
        t = _schwarzschild_t(r[rows])[:, None, None]
        assert np.allclose(grad, np.broadcast_to(r[rows, None, None] ** 2 / t ** 4, grad.shape), rtol=3e-2)
