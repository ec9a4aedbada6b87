# tests/test_asymptotic_expansion.py
import math

import numpy as np
import pytest

from core.asymptotic_expansion import (
    AnnulusLattice,
    admissible_radii,
    annulus_error,
    decreasing_trend,
    fit_expansion,
    harmonic_remainder,
    newtonian_potential,
    potential_from_sources,
    rescale_to_annulus,
    sample_u,
)
from core.errors import InvalidSpec, OutOfRange
from core.elliptic_green import (
    FOUR_PI,
    PROVENANCE_GRID,
    GreensSolution,
    GridSpec,
    build_grid,
    radial_oracle,
    solve_green,
)
from core.metric_models import ConformalRadial, DecayPerturbation, Euclidean

from conftest import SMALL_SPEC

DIPOLE = np.array([0.0, 0.0, 0.3])


@pytest.fixture(scope="module")
def schw_small_oracle():
    return radial_oracle(ConformalRadial(profile="schwarzschild", m=1.0), build_grid(SMALL_SPEC))


@pytest.fixture(scope="module")
def dipole_solution():
    """평탄 계량 위에 u = 1/r + ⟨d, x⟩/r³ 를 직접 올린 해."""
    grid = build_grid(GridSpec(r_min=1.0 / 32.0, r_max=1024.0, n_r=64, n_theta=16, n_phi=32))
    x = grid.centers()
    r = np.linalg.norm(x, axis=-1)
    u = 1.0 / r + np.einsum("...i,i->...", x, DIPOLE) / r ** 3
    return GreensSolution(grid=grid, model=Euclidean(), u=u, flux_constant=FOUR_PI, provenance=PROVENANCE_GRID)


def _cube_sources():
    """정육면체 꼭짓점 8개, X = e₁, 부피 합 4π."""
    corners = np.array([(i, j, k) for i in (-0.5, 0.5) for j in (-0.5, 0.5) for k in (-0.5, 0.5)])
    X = np.tile([1.0, 0.0, 0.0], (8, 1))
    volumes = np.full(8, math.pi / 2.0)
    return corners, X, volumes


class TestAnnulusLattice:
    def test_volume_and_mean(self):
        lat = AnnulusLattice.build()
        assert lat.volume == pytest.approx(4.0 / 3.0 * math.pi * (64.0 - 1.0), rel=1e-12)
        assert lat.mean(np.ones(lat.weights.shape)) == pytest.approx(1.0, rel=1e-12)
        assert lat.radius.min() > 1.0 and lat.radius.max() < 4.0


class TestRescale:
    def test_euclidean_is_exact(self, euclid_small_oracle):
        lat = AnnulusLattice.build(n_r=6, n_theta=4, n_phi=8)
        u_R = rescale_to_annulus(euclid_small_oracle, 8.0, lat)
        assert np.allclose(u_R, 1.0 / lat.radius, rtol=1e-10)

    def test_schwarzschild_sample(self, schw_small_oracle):
        point = np.array([[80.0, 60.0, 96.0]])
        R = 64.0
        r = float(np.linalg.norm(point))
        assert R * sample_u(schw_small_oracle, point / (r / (2.0 * R)))[0] == pytest.approx(0.498054, rel=1e-4)

    def test_out_of_range(self, euclid_small_oracle):
        with pytest.raises(OutOfRange):
            rescale_to_annulus(euclid_small_oracle, 1024.0)
        with pytest.raises(OutOfRange):
            rescale_to_annulus(euclid_small_oracle, 0.125)


class TestFitExpansion:
    def test_euclidean(self, euclid_small_oracle):
        radii = admissible_radii(euclid_small_oracle)
        assert len(radii) >= 4
        fit = fit_expansion(euclid_small_oracle, radii)
        assert fit.c == pytest.approx(1.0, abs=1e-8)
        assert np.allclose(fit.dipole, 0.0, atol=1e-6)
        table = fit.table()
        assert list(table.columns) == ["R", "c_R", "d_x", "d_y", "d_z", "L1", "L1.25", "W1p"]
        assert (table["L1"] < 1e-6).all()

    def test_schwarzschild_c_tends_to_one(self, schw_small_oracle):
        fit = fit_expansion(schw_small_oracle, admissible_radii(schw_small_oracle))
        assert abs(fit.c - 1.0) <= 1e-2
        c_R = fit.table()["c_R"].to_numpy()
        assert abs(c_R[-1] - 1.0) < abs(c_R[0] - 1.0)
        # 방사형 ⇒ dipole 없음
        assert np.linalg.norm(fit.dipole) < 1e-3

    def test_radii_are_asymptotic(self, euclid_small_oracle):
        radii = admissible_radii(euclid_small_oracle)
        assert radii[0] == 4.0
        assert radii[-1] == 128.0
        assert admissible_radii(euclid_small_oracle, r_asymptotic=1.0)[0] == 1.0

    def test_recovers_known_dipole(self, dipole_solution):
        fit = fit_expansion(dipole_solution, admissible_radii(dipole_solution))
        assert fit.c == pytest.approx(1.0, abs=1e-3)
        assert np.allclose(fit.dipole, DIPOLE, atol=6e-3)

    def test_per_scale_dipole_is_scale_free(self, dipole_solution):
        table = fit_expansion(dipole_solution, admissible_radii(dipole_solution)).table()
        assert np.allclose(table["d_z"], DIPOLE[2], atol=6e-3)
        assert np.allclose(table[["d_x", "d_y"]].to_numpy(), 0.0, atol=1e-3)

    def test_requires_four_radii(self, euclid_small_oracle):
        with pytest.raises(InvalidSpec):
            fit_expansion(euclid_small_oracle, [1.0, 2.0, 4.0])


class TestNewtonianPotential:
    def test_cube_far_field(self):
        pot = potential_from_sources(*_cube_sources())
        assert np.allclose(pot.xbar, [1.0, 0.0, 0.0], atol=1e-14)
        x = np.array([[50.0, 20.0, -30.0], [-40.0, 35.0, 10.0]])
        r = np.linalg.norm(x, axis=1)
        dipole = x[:, 0] / r ** 3
        assert np.allclose(pot.sample(x), dipole, rtol=1e-2)

    def test_point_source_annulus_error_vanishes(self):
        pot = potential_from_sources(np.zeros((1, 3)), np.array([[0.0, 1.0, 0.0]]), np.array([4.0 * math.pi]))
        err = annulus_error(pot, [16.0, 32.0], q=1.0)
        assert list(err.columns) == ["R", "error"]
        assert (err["error"] < 1e-12).all()

    def test_pointwise_domination(self):
        rng = np.random.default_rng(5)
        pot = potential_from_sources(rng.normal(size=(40, 3)), rng.normal(size=(40, 3)), rng.uniform(0.01, 0.1, 40))
        x = rng.normal(scale=3.0, size=(200, 3))
        assert np.all(np.abs(pot.sample(x)) <= pot.domination_bound(x) + 1e-15)

    def test_zero_sources_dropped(self):
        pot = potential_from_sources(np.ones((5, 3)), np.zeros((5, 3)), np.ones(5))
        assert pot.empty
        assert np.array_equal(pot.sample(np.ones((3, 3))), np.zeros(3))

    def test_euclidean_solution_has_no_sources(self, euclid_small_oracle):
        assert newtonian_potential(euclid_small_oracle).empty

    @pytest.mark.parametrize("q", [0.5, 1.5, 2.0])
    def test_q_out_of_range(self, q):
        pot = potential_from_sources(*_cube_sources())
        with pytest.raises(OutOfRange):
            annulus_error(pot, [16.0], q=q)


class TestDecreasingTrend:
    @pytest.mark.parametrize("values, expected", [
        ([4.0, 3.0, 2.0, 1.0], True),
        ([4.0, 3.0, 3.5, 2.0], True),
        ([4.0, 5.0, 3.5, 3.6], False),
        ([1.0, 2.0, 3.0], False),
        ([0.0, 0.0, 0.0], True),
    ])
    def test_cases(self, values, expected):
        assert decreasing_trend(values) is expected


class TestHarmonicRemainder:
    def test_euclidean(self, euclid_small_oracle):
        radii = admissible_radii(euclid_small_oracle)[-4:]
        pot = newtonian_potential(euclid_small_oracle)
        rep = harmonic_remainder(euclid_small_oracle, pot, radii,
                                 lattice=AnnulusLattice.build(n_r=6, n_theta=4, n_phi=8),
                                 dipole=np.zeros(3))
        assert list(rep.table.columns) == ["R", "c_h", "mean_abs_remainder"]
        assert np.allclose(rep.table["c_h"], 1.0, atol=1e-8)
        assert rep.closure_defect < 1e-6

    def test_known_dipole_closes(self, dipole_solution):
        radii = admissible_radii(dipole_solution)
        fit = fit_expansion(dipole_solution, radii)
        pot = newtonian_potential(dipole_solution)
        rep = harmonic_remainder(dipole_solution, pot, radii,
                                 lattice=AnnulusLattice.build(n_r=12, n_theta=8, n_phi=16), dipole=fit.dipole)
        # 평탄 계량: X = 0 이므로 b 가 dipole 전부
        assert np.allclose(rep.xbar, 0.0)
        assert np.allclose(rep.b, DIPOLE, atol=6e-3)
        assert rep.closure_defect < 2e-2 * np.linalg.norm(DIPOLE)


class TestGridSolvedModels:
    @pytest.fixture(scope="class")
    def decay_solution(self, small_grid):
        return solve_green(small_grid, DecayPerturbation(epsilon=0.2, tau=0.5, pattern="quadrupole"))

    def test_decay_perturbation_annulus_error_decreases(self, decay_solution):
        radii = admissible_radii(decay_solution)[-4:]
        err = annulus_error(newtonian_potential(decay_solution), radii, q=1.0)["error"].tolist()
        assert len(err) == 4
        assert decreasing_trend(err)
        assert err[-1] < err[0]

    def test_bump_dipole_points_along_axis(self, bump_solution):
        fit = fit_expansion(bump_solution, admissible_radii(bump_solution))
        assert fit.c == pytest.approx(1.0, abs=1e-2)
        d_x, d_y, d_z = fit.dipole
        assert abs(d_z) > 1e-3
        assert max(abs(d_x), abs(d_y)) <= 1e-2 * abs(d_z)

    def test_bump_closure(self, bump_solution):
        radii = admissible_radii(bump_solution)
        fit = fit_expansion(bump_solution, radii)
        pot = newtonian_potential(bump_solution)
        rep = harmonic_remainder(bump_solution, pot, radii,
                                 lattice=AnnulusLattice.build(n_r=12, n_theta=8, n_phi=16), dipole=fit.dipole)
        scale = max(float(np.linalg.norm(fit.dipole)), 1e-3)
        assert rep.closure_defect <= 2e-2 * scale
