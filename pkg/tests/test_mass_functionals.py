# tests/test_mass_functionals.py
import math

import numpy as np
import pytest
from scipy.integrate import quad

from core.asymptotic_expansion import AnnulusLattice, default_lattice
from core.errors import InconsistentForms, UnboundedInput, UnsupportedModel
from core.mass_functionals import (
    BumpProfile,
    E_flux_form,
    D_of,
    D_s_quadrature,
    D_volumetric,
    E_of,
    F_of_t,
    F_series,
    LinearizationInput,
    aD_series,
    bump_profile,
    cubic_lemma_check,
    d_functional,
    flat_pair,
    frechet_term,
    mass_calibration_constant,
    phi_weight,
    phi_weight_derivative,
    radial_F,
    radial_aD_oracle,
    radial_level_quantities,
    schwarzschild_aD,
)
from core.metric_models import ConformalBump, ConformalRadial, Euclidean

SCHW = ConformalRadial(profile="schwarzschild", m=1.0)


def _schwarzschild_E(T, m=1.0):
    return 3.0 * math.pi * m / T ** 2 - 7.0 * math.pi * m * m / (8.0 * T ** 3)


class TestBumpProfile:
    def test_normalized(self):
        psi = bump_profile(0.05)
        total, _ = quad(lambda s: float(psi(np.array([s]))[0]), 0.0, 1.0, points=[0.05, 0.95], limit=200)
        assert total == pytest.approx(1.0, abs=1e-10)

    def test_c_psi_range(self):
        psi = bump_profile(0.05)
        assert 2.0 * math.pi / 1.95 < psi.c_psi < 2.0 * math.pi / 1.05

    def test_support(self):
        psi = BumpProfile(0.1)
        assert psi(np.array([0.05, 0.1, 0.9, 0.95])).tolist() == [0.0, 0.0, 0.0, 0.0]
        assert psi(np.array([0.5]))[0] > 0

    def test_invalid_s0(self):
        with pytest.raises(ValueError):
            BumpProfile(0.5)

    def test_phi_weight_derivative(self):
        psi = bump_profile()
        t = np.array([0.6, 0.7, 0.8])
        h = 1e-6
        fd = (phi_weight(psi, t + h) - phi_weight(psi, t - h)) / (2.0 * h)
        assert np.allclose(phi_weight_derivative(psi, t), fd, rtol=1e-5)


class TestRadialOracles:
    def test_schwarzschild_F_closed_form(self):
        r = np.array([0.5, 1.0, 3.0, 40.0])
        t = r + 0.5
        assert np.allclose(radial_F(SCHW, r), 8.0 * math.pi - 3.0 * math.pi / t, rtol=1e-12)

    def test_euclidean_F_vanishes(self):
        assert np.allclose(radial_F(Euclidean(), np.array([1.0, 7.0])), 0.0, atol=1e-12)

    def test_non_radial_rejected(self):
        with pytest.raises(UnsupportedModel):
            radial_level_quantities(ConformalBump(), np.array([1.0]))

    def test_euclidean_aD_vanishes(self):
        assert abs(radial_aD_oracle(Euclidean(), 16.0)) < 1e-5 * 16.0

    def test_limit_is_proportional_to_mass(self):
        ratios = [radial_aD_oracle(ConformalRadial(profile="schwarzschild", m=m), 4096.0) / m for m in (0.5, 1.0, 2.0)]
        assert max(ratios) - min(ratios) < 1e-3 * abs(ratios[1])
        assert ratios[1] > 0


class TestMassCalibration:
    def test_oracle_converges_to_constant(self):
        value = mass_calibration_constant()
        assert radial_aD_oracle(SCHW, 4096.0) == pytest.approx(value, rel=1e-3)
        assert value > 0

    @pytest.mark.parametrize("m", [0.5, 1.0, 2.0])
    def test_closed_form_matches_oracle(self, m):
        model = ConformalRadial(profile="schwarzschild", m=m)
        assert radial_aD_oracle(model, 16.0) == pytest.approx(schwarzschild_aD(16.0, m), rel=1e-6)

    def test_constant_depends_on_profile(self):
        narrow = bump_profile(0.2)
        assert mass_calibration_constant(narrow) == pytest.approx(3.0 * math.pi * narrow.inverse_moment(2))
        assert mass_calibration_constant(narrow) != pytest.approx(mass_calibration_constant())


class TestF:
    def test_euclidean_is_zero(self, euclid_oracle):
        for t in (2.0, 4.0, 8.0, 16.0):
            assert abs(F_of_t(euclid_oracle, t)) <= 1e-2 * 4.0 * math.pi * t

    def test_schwarzschild_matches_closed_form(self, schw_oracle):
        for t in (2.0, 3.0, 4.0):
            assert F_of_t(schw_oracle, t) == pytest.approx(8.0 * math.pi - 3.0 * math.pi / t, rel=2e-2)

    def test_monotone_tolerance_scale(self, schw_oracle):
        series = F_series(schw_oracle, [2.0, 4.0, 8.0], rel_tol=1e-3)
        assert series.tolerance == pytest.approx(1e-3 * max(abs(f) for f in series.F))
        flat = F_series(schw_oracle, [2.0, 4.0, 8.0], rel_tol=5e-3)
        assert flat.tolerance == pytest.approx(5.0 * series.tolerance)

    def test_series_verdicts(self, schw_oracle):
        series = F_series(schw_oracle, [2.0, 4.0, 8.0, 16.0])
        assert series.monotone_ok and series.nonnegative_ok
        assert series.verdicts()["monotone"] == "PASS"
        assert list(series.f_table().columns) == ["t", "F", "monotone_flag"]
        assert (series.f_table()["monotone_flag"] == 1).all()


class TestE:
    def test_euclidean_flux_form_cancels(self, euclid_oracle):
        for T in (4.0, 8.0):
            assert abs(E_flux_form(euclid_oracle, T)) <= 1e-3 * 2.0 * math.pi / T

    def test_schwarzschild_two_forms(self, schw_oracle):
        rep = E_of(schw_oracle, 4.0, 2.0)
        exact = _schwarzschild_E(6.0)
        assert rep.quadrature == pytest.approx(exact, rel=3e-2)
        assert rep.flux_form == pytest.approx(exact, rel=3e-2)
        assert rep.discrepancy <= 3e-2 * exact


class TestD:
    def test_euclidean_vanishes(self, euclid_oracle):
        psi = bump_profile()
        series = aD_series(euclid_oracle, (4.0, 8.0, 16.0), psi, cross_check=False)
        assert max(abs(d) for d in series.D) <= 5e-3 * psi.c_psi
        assert series.limit == pytest.approx(0.0, abs=5e-2 * psi.c_psi)

    def test_schwarzschild_matches_radial_oracle(self, schw_oracle):
        series = aD_series(schw_oracle, (8.0,), cross_check=False)
        assert series.aD[0] == pytest.approx(radial_aD_oracle(SCHW, 8.0), rel=1e-2)

    def test_rel_tol_is_honoured(self, euclid_oracle):
        psi = bump_profile()
        series = aD_series(euclid_oracle, (4.0, 8.0), psi, cross_check=False, rel_tol=2e-3)
        assert series.tolerance == pytest.approx(2e-3 * psi.c_psi)

    def test_schwarzschild_monotone_with_cross_check(self, schw_oracle):
        series = aD_series(schw_oracle, (4.0, 8.0, 16.0), cross_check=True)
        assert series.monotone_ok and series.nonnegative_ok
        assert series.aD[0] < series.aD[-1]
        assert list(series.d_table().columns) == ["a", "D", "aD", "monotone_flag"]
        assert series.uncertainty >= 0

    def test_limit_is_tail_plateau(self, schw_oracle):
        series = aD_series(schw_oracle, (4.0, 8.0, 16.0, 32.0), cross_check=False)
        tail = series.aD[-3:]
        assert series.limit == pytest.approx(np.mean(tail), rel=1e-14)
        assert series.uncertainty == pytest.approx(max(tail) - min(tail), rel=1e-14)

    def test_two_forms_agree(self, schw_oracle):
        psi = bump_profile()
        vol = D_volumetric(schw_oracle, 8.0, psi)
        quad_form = D_s_quadrature(schw_oracle, 8.0, psi)
        assert vol > 0
        assert quad_form == pytest.approx(vol, rel=1e-2, abs=1e-3 * psi.c_psi)
        assert D_of(schw_oracle, 8.0, psi) == vol

    def test_inconsistent_forms(self, schw_oracle):
        with pytest.raises(InconsistentForms):
            D_of(schw_oracle, 8.0, rel_tol=-1.0)


class TestGridSolve:
    """CG 격자 풀이 위의 F, E, D (오라클이 아닌 경로)."""

    def test_F_matches_closed_form(self, schw_solution):
        for t in (2.0, 4.0):
            assert F_of_t(schw_solution, t) == pytest.approx(8.0 * math.pi - 3.0 * math.pi / t, rel=5e-2)

    def test_E_two_forms(self, schw_solution):
        rep = E_of(schw_solution, 4.0, 2.0)
        exact = _schwarzschild_E(6.0)
        assert rep.quadrature == pytest.approx(exact, rel=5e-2)
        assert rep.flux_form == pytest.approx(exact, rel=5e-2)
        assert rep.discrepancy <= 3e-2 * exact

    def test_D_matches_closed_form(self, schw_solution):
        psi = bump_profile()
        series = aD_series(schw_solution, (8.0,), psi, cross_check=False)
        assert series.D[0] == pytest.approx(schwarzschild_aD(8.0, 1.0, psi) / 8.0, abs=1e-2 * psi.c_psi)


class TestLinearization:
    def _zero_input(self, shape):
        return np.zeros(shape + (3, 3)), np.zeros(shape), np.zeros(shape + (3,))

    def test_flat_pair_gives_zero_functional(self):
        lattice = AnnulusLattice.build(n_r=200, n_theta=4, n_phi=8)
        h, rho, grad_rho = flat_pair(lattice)
        assert abs(d_functional(h, rho, grad_rho, quadrature=lattice)) < 1e-6 * bump_profile().c_psi

    def test_linear_in_k(self):
        _, rho, _ = flat_pair()
        k0, v0, g0 = self._zero_input(rho.shape)
        k1, k2 = k0.copy(), k0.copy()
        k1[..., 0, 0] = 1.0
        k2[..., 1, 2] = k2[..., 2, 1] = 0.5
        l1 = frechet_term(LinearizationInput(k1, v0, g0))
        l2 = frechet_term(LinearizationInput(k2, v0, g0))
        l12 = frechet_term(LinearizationInput(k1 + 2.0 * k2, v0, g0))
        assert l12 == pytest.approx(l1 + 2.0 * l2, rel=1e-10, abs=1e-14)

    def test_k_slot_first_order(self):
        h0, rho, grad_rho = flat_pair()
        k, v0, g0 = self._zero_input(rho.shape)
        k[..., 0, 0] = 1.0
        lin = frechet_term(LinearizationInput(k, v0, g0))
        base = d_functional(h0, rho, grad_rho)
        errs = [abs((d_functional(h0 + h * k, rho, grad_rho) - base) / h - lin) for h in (1e-2, 5e-3)]
        assert errs[1] <= 0.6 * errs[0] or errs[0] <= 1e-10

    def test_dipole_direction_cancels(self):
        lat = default_lattice()
        y, r = lat.points, lat.radius
        d = np.array([0.3, -1.2, 0.7])
        v = np.einsum("...i,i->...", y, d) / r ** 3
        grad_v = d / r[..., None] ** 3 - 3.0 * np.einsum("...i,i->...", y, d)[..., None] * y / r[..., None] ** 5
        k = np.zeros(r.shape + (3, 3))
        assert abs(frechet_term(LinearizationInput(k, v, grad_v))) < 1e-8

    def test_unbounded_input(self):
        _, rho, _ = flat_pair()
        k, v, g = self._zero_input(rho.shape)
        v[0, 0, 0] = np.inf
        with pytest.raises(UnboundedInput):
            frechet_term(LinearizationInput(k, v, g))


class TestCubicLemma:
    def test_ratio_bounded(self):
        res = cubic_lemma_check(n_samples=50_000, seed=3)
        assert 0.0 < res["max_ratio"] <= 4.0

    def test_deterministic(self):
        assert cubic_lemma_check(n_samples=10_000, seed=7) == cubic_lemma_check(n_samples=10_000, seed=7)
