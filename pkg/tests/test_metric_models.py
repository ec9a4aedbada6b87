# tests/test_metric_models.py
import math

import numpy as np
import pytest

from core.errors import NonPositiveDefinite, OutOfRange, UnsupportedModel
from core.metric_models import (
    ConformalBump,
    ConformalRadial,
    DecayPerturbation,
    Euclidean,
    build_model,
    conductivity,
    conductivity_field,
    decay_report,
    eval_metric,
    fd_laplacian,
    scalar_curvature,
    scalar_curvature_field,
)


class TestEvalMetric:
    def test_euclidean_is_identity(self):
        g = eval_metric(Euclidean(), (1.0, -2.0, 0.5))
        assert np.array_equal(g, np.eye(3))
        assert np.array_equal(conductivity(Euclidean(), (1.0, -2.0, 0.5)).B, np.zeros((3, 3)))

    def test_schwarzschild_at_r2(self):
        """φ = 1 + 1/4 ⇒ g = φ⁴ δ, A = φ² δ."""
        model = ConformalRadial(profile="schwarzschild", m=1.0)
        g = eval_metric(model, (2.0, 0.0, 0.0))
        assert np.allclose(g, 2.44140625 * np.eye(3), rtol=1e-14)
        field = conductivity(model, (0.0, 2.0, 0.0))
        assert np.allclose(field.A, 1.5625 * np.eye(3), rtol=1e-14)
        assert np.allclose(field.B, -0.5625 * np.eye(3), rtol=1e-14)

    def test_schwarzschild_origin_is_out_of_range(self):
        with pytest.raises(OutOfRange):
            eval_metric(ConformalRadial(profile="schwarzschild", m=1.0), (0.0, 0.0, 0.0))

    def test_metric_is_symmetric_positive(self):
        model = DecayPerturbation(epsilon=0.5, tau=0.5, pattern="dipole")
        g = eval_metric(model, (0.3, 0.1, -0.7))
        assert np.allclose(g, g.T)
        assert np.linalg.eigvalsh(g)[0] > 0


class TestBuildModel:
    def test_unknown_kind(self):
        with pytest.raises(UnsupportedModel):
            build_model("kerr")

    def test_unknown_keys_are_ignored(self):
        model = build_model("conformal_radial", profile="plummer", m=2.0, width=0.5, colour="red")
        assert isinstance(model, ConformalRadial)
        assert model.m == 2.0 and model.width == 0.5

    def test_bump_center_from_list(self):
        model = build_model("conformal_bump", center=[0, 0, 2], amplitude=0.1)
        assert model.center == (0.0, 0.0, 2.0)
        assert model.adm_mass_hint == pytest.approx(0.2)

    def test_negative_mass_rejected(self):
        with pytest.raises(NonPositiveDefinite):
            ConformalRadial(profile="schwarzschild", m=-1.0)

    def test_decay_requires_positive_tau(self):
        with pytest.raises(UnsupportedModel):
            DecayPerturbation(tau=0.0)

    def test_model_hash_tracks_parameters(self):
        a = ConformalRadial(profile="schwarzschild", m=1.0)
        b = ConformalRadial(profile="schwarzschild", m=1.0)
        c = ConformalRadial(profile="schwarzschild", m=2.0)
        assert a.model_hash() == b.model_hash()
        assert a.model_hash() != c.model_hash()


class TestScalarCurvature:
    def test_schwarzschild_is_scalar_flat(self):
        assert scalar_curvature(ConformalRadial(profile="schwarzschild", m=1.0), (1.0, 2.0, 3.0)) == 0.0

    def test_plummer_and_bump_positive(self):
        assert scalar_curvature(ConformalRadial(profile="plummer", m=1.0, width=1.0), (0.0, 0.0, 0.0)) > 0
        assert scalar_curvature(ConformalBump(), (0.0, 0.0, 1.0)) > 0

    def test_plummer_laplacian_matches_finite_difference(self):
        model = ConformalRadial(profile="plummer", m=1.0, width=1.0)
        pts = np.array([[0.3, 0.2, 0.1], [1.5, -0.4, 0.9]])
        exact = model.laplacian_phi(pts)
        approx = fd_laplacian(model.conformal_factor, pts)
        assert np.allclose(approx, exact, rtol=1e-4)

    def test_bump_matches_finite_difference(self):
        model = ConformalBump(center=(0.0, 0.0, 1.0), amplitude=0.25, width=0.5)
        pts = np.array([[0.0, 0.0, 1.0], [0.2, 0.1, 1.3], [0.5, -0.3, 0.6]])
        h = 1e-3
        fd = -8.0 * model.conformal_factor(pts) ** -5 * fd_laplacian(model.conformal_factor, pts, h)
        exact = scalar_curvature_field(model, pts)
        assert (exact > 0).all()
        assert np.allclose(exact, fd, rtol=10.0 * h * h)


class TestDecayReport:
    def test_euclidean_has_no_deviation(self):
        df = decay_report(Euclidean(), [1.0, 2.0, 4.0])
        assert list(df.columns) == ["radius", "sup_deviation", "scaled"]
        assert (df["sup_deviation"] == 0.0).all()

    def test_perturbation_constant_bounded_by_epsilon(self):
        model = DecayPerturbation(epsilon=0.2, tau=0.5, pattern="quadrupole")
        df = decay_report(model, [2.0 ** k for k in range(8)])
        assert (df["scaled"] <= 0.2 + 1e-12).all()
        assert df["scaled"].iloc[-1] > 0

    @pytest.mark.parametrize("m", [0.5, 1.0])
    def test_schwarzschild_without_decay_rate(self, m):
        """φ⁴ − 1 = 2m/r + O(r⁻²) ⇒ τ = 0 에서 r·|g − δ| → 2m."""
        df = decay_report(ConformalRadial(profile="schwarzschild", m=m), [1e2, 1e3, 1e4], tau=0.0)
        assert df["scaled"].iloc[-1] == pytest.approx(2.0 * m, rel=1e-3)
        assert (np.diff(df["scaled"]) < 0).all()
        assert (df["scaled"] > 2.0 * m).all()

    def test_nonpositive_radius(self):
        with pytest.raises(OutOfRange):
            decay_report(Euclidean(), [0.0])


class TestEllipticity:
    def test_values(self):
        assert Euclidean().ellipticity() == 1.0
        assert math.isinf(ConformalRadial(profile="schwarzschild", m=1.0).ellipticity(0.0))
        # φ(1/32) = 17
        assert ConformalRadial(profile="schwarzschild", m=1.0).ellipticity(1.0 / 32.0) == pytest.approx(289.0)

    @pytest.mark.parametrize("model, r_min", [
        (Euclidean(), 0.0),
        (ConformalRadial(profile="schwarzschild", m=1.0), 1.0 / 32.0),
        (ConformalRadial(profile="plummer", m=1.0, width=1.0), 0.0),
        (ConformalBump(center=(0.0, 0.0, 1.0), amplitude=0.25, width=0.5), 0.0),
        (DecayPerturbation(epsilon=0.5, tau=0.5, pattern="dipole"), 0.0),
        (DecayPerturbation(epsilon=-0.4, tau=1.0, pattern="quadrupole"), 0.0),
    ])
    def test_conductivity_within_bounds(self, model, r_min):
        rng = np.random.default_rng(11)
        directions = rng.normal(size=(1000, 3))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        radii = np.exp(rng.uniform(math.log(max(r_min, 1e-3)), math.log(1e3), size=1000))
        pts = directions * radii[:, None]
        lam = model.ellipticity(r_min)
        evals = np.linalg.eigvalsh(conductivity_field(model, pts).A)
        assert evals.min() >= (1.0 - 1e-12) / lam
        assert evals.max() <= (1.0 + 1e-12) * lam
