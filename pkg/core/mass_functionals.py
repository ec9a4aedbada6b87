# core/mass_functionals.py
"""F(t), E(a,s), D(a), aD(a) 극한, Fréchet 선형화 L(k,v), 세제곱 부등식 점검.

- ψ: (s₀, 1−s₀) 에 지지된 C^∞ bump, ∫ψ = 1, c_ψ = 2π∫ψ(s)/(1+s) ds
- D 는 부피형(coarea) 공식으로 계산하고 s-구적 ∫ψ(s/a)E(a,s)ds 로 교차 검증
- 단조성 위반은 예외가 아니라 MonotonicityViolation 기록
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.integrate import quad
from scipy.optimize import brentq

from core.asymptotic_expansion import AnnulusLattice, default_lattice
from core.elliptic_green import FOUR_PI, GreensSolution, radial_oracle_u
from core.errors import InconsistentForms, UnboundedInput, UnsupportedModel
from core.levelset_geometry import (
    DEFAULT_SMEAR,
    SmearSettings,
    lattice_for_levels,
    smeared_surface_integral,
    surface_report,
)
from core.metric_models import ConformalRadial, Euclidean, MetricModel

_log = logging.getLogger(__name__)

DEFAULT_A_GRID = (4.0, 8.0, 16.0, 32.0, 64.0)
MONOTONE_REL_TOL = 1e-3

_E_GL_NODES = 12
_S_GL_NODES = 24


# ── ψ ────────────────────────────────────────────────────

class BumpProfile:
    """ψ(s) = N·exp(−1/((s−s₀)(1−s₀−s))), 지지 (s₀, 1−s₀)."""

    def __init__(self, s0: float = 0.05):
        if not (0.0 < s0 < 0.5):
            raise ValueError(f"s0 는 (0, 1/2) 안이어야 합니다: {s0}")
        self.s0 = float(s0)
        lo, hi = self.support
        mass, _ = quad(self._raw, lo, hi, epsabs=1e-15, epsrel=1e-13, limit=200)
        self.norm = 1.0 / mass
        self.c_psi = 2.0 * math.pi * self.inverse_moment(1)

    @property
    def support(self):
        return self.s0, 1.0 - self.s0

    def inverse_moment(self, k: int) -> float:
        """∫ψ(s)(1+s)^(−k) ds."""
        lo, hi = self.support
        val, _ = quad(lambda s: self._raw(s) / (1.0 + s) ** k, lo, hi, epsabs=1e-15, epsrel=1e-13, limit=200)
        return self.norm * val

    def _raw(self, s: float) -> float:
        lo, hi = self.support
        if s <= lo or s >= hi:
            return 0.0
        return math.exp(-1.0 / ((s - lo) * (hi - s)))

    def __call__(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        lo, hi = self.support
        out = np.zeros_like(s)
        inside = (s > lo) & (s < hi)
        si = s[inside]
        out[inside] = self.norm * np.exp(-1.0 / ((si - lo) * (hi - si)))
        return out

    def derivative(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        lo, hi = self.support
        out = np.zeros_like(s)
        inside = (s > lo) & (s < hi)
        si = s[inside]
        q = (si - lo) * (hi - si)
        # d/ds[−1/q] = q′/q², q′ = (hi − s) − (s − lo)
        out[inside] = self.norm * np.exp(-1.0 / q) * ((hi - si) - (si - lo)) / (q * q)
        return out

    def to_dict(self) -> dict:
        return {"s0": self.s0, "norm": self.norm, "c_psi": self.c_psi}


@lru_cache(maxsize=8)
def bump_profile(s0: float = 0.05) -> BumpProfile:
    return BumpProfile(s0)


def phi_weight(psi: BumpProfile, t) -> np.ndarray:
    """φ(t) = t⁻³[½ψ(1/(2t) − 1) − ψ(1/t − 1)]  (D 의 coarea 가중치, a = 1)."""
    t = np.asarray(t, dtype=float)
    return t ** -3 * (0.5 * psi(0.5 / t - 1.0) - psi(1.0 / t - 1.0))


def phi_weight_derivative(psi: BumpProfile, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    inner = 0.5 * psi(0.5 / t - 1.0) - psi(1.0 / t - 1.0)
    d_inner = 0.5 * psi.derivative(0.5 / t - 1.0) * (-0.5 / t ** 2) - psi.derivative(1.0 / t - 1.0) * (-1.0 / t ** 2)
    return -3.0 * t ** -4 * inner + t ** -3 * d_inner


# ── F, E, D ───────────────────────────────────────────────

def F_of_t(solution: GreensSolution, t: float, eps: Optional[float] = None,
           settings: SmearSettings = DEFAULT_SMEAR) -> float:
    """F(t) = 4πt − t²∫H|∇u| da + t³∫|∇u|² da  ({u = 1/t} 위)."""
    if eps is None:
        rep = surface_report(solution, t, settings)
        h_term, g_term = rep.int_H_gradu, rep.int_gradu_sq
    else:
        h_term = smeared_surface_integral(solution, "H_gradu", t, eps, settings)
        g_term = smeared_surface_integral(solution, "gradu_sq", t, eps, settings)
    return FOUR_PI * t - t * t * h_term + t ** 3 * g_term


@dataclass(frozen=True)
class EReport:
    a: float
    s: float
    quadrature: float
    flux_form: float

    @property
    def discrepancy(self) -> float:
        return abs(self.quadrature - self.flux_form)


def E_flux_form(solution: GreensSolution, T: float, settings: SmearSettings = DEFAULT_SMEAR) -> float:
    """E = 2π/T + ∫_{u=1/(2T)} |∇u|²/u da − ∫_{u=1/T} |∇u|²/u da,  T = a + s."""
    outer = smeared_surface_integral(solution, "gradu_sq_over_u", 2.0 * T, settings=settings)
    inner = smeared_surface_integral(solution, "gradu_sq_over_u", T, settings=settings)
    return 2.0 * math.pi / T + outer - inner


def E_quadrature(solution: GreensSolution, T: float, settings: SmearSettings = DEFAULT_SMEAR,
                 nodes: int = _E_GL_NODES) -> float:
    """∫_T^{2T} F(t)/t³ dt (Gauss–Legendre)."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    ts = T * (1.5 + 0.5 * x)
    vals = np.array([F_of_t(solution, float(t), settings=settings) / t ** 3 for t in ts])
    return float(0.5 * T * np.dot(w, vals))


def E_of(solution: GreensSolution, a: float, s: float, settings: SmearSettings = DEFAULT_SMEAR) -> EReport:
    T = a + s
    return EReport(
        a=a,
        s=s,
        quadrature=E_quadrature(solution, T, settings),
        flux_form=E_flux_form(solution, T, settings),
    )


def D_volumetric(solution: GreensSolution, a: float, psi: BumpProfile,
                 settings: SmearSettings = DEFAULT_SMEAR) -> float:
    """D(a) = c_ψ + ∫[½ψ(1/(2au) − 1) − ψ(1/(au) − 1)]·|∇u|³/u³ dv_g."""
    lat = lattice_for_levels(solution, 1.0 / (4.0 * a), 1.0 / a, settings)
    au = a * lat.u
    weight = 0.5 * psi(0.5 / au - 1.0) - psi(1.0 / au - 1.0)
    integrand = weight * lat.grad_g ** 3 / lat.u ** 3 * lat.sqrt_g * lat.weights
    return psi.c_psi + float(np.sum(integrand))


def D_s_quadrature(solution: GreensSolution, a: float, psi: BumpProfile,
                   settings: SmearSettings = DEFAULT_SMEAR, nodes: int = _S_GL_NODES) -> float:
    """a∫ψ(v)E(a, av) dv, E 는 flux 형식."""
    lo, hi = psi.support
    x, w = np.polynomial.legendre.leggauss(nodes)
    v = lo + (hi - lo) * 0.5 * (x + 1.0)
    vals = np.array([psi(vi) * E_flux_form(solution, a + a * vi, settings) for vi in v])
    return float(a * 0.5 * (hi - lo) * np.dot(w, vals))


def D_of(solution: GreensSolution, a: float, psi: Optional[BumpProfile] = None,
         settings: SmearSettings = DEFAULT_SMEAR, cross_check: bool = True,
         rel_tol: float = 1e-2) -> float:
    psi = psi or bump_profile()
    volumetric = D_volumetric(solution, a, psi, settings)
    if cross_check:
        quadrature = D_s_quadrature(solution, a, psi, settings)
        tol = rel_tol * max(abs(volumetric), abs(quadrature)) + MONOTONE_REL_TOL * psi.c_psi
        if abs(volumetric - quadrature) > tol:
            raise InconsistentForms(
                "D 의 부피형과 s-구적 값이 허용오차 밖에서 다릅니다",
                a=a, volumetric=volumetric, quadrature=quadrature, tolerance=tol,
            )
    return volumetric


# ── 급수 / 단조성 ─────────────────────────────────────────

@dataclass(frozen=True)
class MonotonicityViolation:
    series: str
    x_left: float
    x_right: float
    value_left: float
    value_right: float
    drop: float
    tolerance: float


def _monotone_scan(name: str, xs: Sequence[float], ys: Sequence[float], tol: float) -> List[MonotonicityViolation]:
    out = []
    for i in range(len(xs) - 1):
        drop = ys[i] - ys[i + 1]
        if drop > tol:
            out.append(MonotonicityViolation(name, xs[i], xs[i + 1], ys[i], ys[i + 1], drop, tol))
    return out


def model_has_nonnegative_curvature(model: MetricModel) -> bool:
    # DecayPerturbation 은 부호 미정
    return model.kind in ("euclidean", "conformal_radial", "conformal_bump")


@dataclass(frozen=True)
class FunctionalSeries:
    t_grid: List[float] = field(default_factory=list)
    F: List[float] = field(default_factory=list)
    a_grid: List[float] = field(default_factory=list)
    D: List[float] = field(default_factory=list)
    aD: List[float] = field(default_factory=list)
    tolerance: float = 0.0
    violations: List[MonotonicityViolation] = field(default_factory=list)
    nonnegative_ok: bool = True
    monotone_ok: bool = True
    monotonicity_expected: bool = True
    limit: Optional[float] = None
    uncertainty: Optional[float] = None

    def d_table(self) -> pd.DataFrame:
        bad = {v.x_right for v in self.violations if v.series == "aD"}
        return pd.DataFrame({
            "a": self.a_grid,
            "D": self.D,
            "aD": self.aD,
            "monotone_flag": [0 if a in bad else 1 for a in self.a_grid],
        }, columns=["a", "D", "aD", "monotone_flag"])

    def f_table(self) -> pd.DataFrame:
        bad = {v.x_right for v in self.violations if v.series == "F"}
        return pd.DataFrame({
            "t": self.t_grid,
            "F": self.F,
            "monotone_flag": [0 if t in bad else 1 for t in self.t_grid],
        }, columns=["t", "F", "monotone_flag"])

    def verdicts(self) -> dict:
        return {
            "monotone": "PASS" if self.monotone_ok else ("VIOLATED" if self.monotonicity_expected else "NOT_EXPECTED"),
            "nonnegative": "PASS" if self.nonnegative_ok else "VIOLATED",
            "n_violations": len(self.violations),
            "tolerance": self.tolerance,
        }


def F_series(solution: GreensSolution, t_grid: Sequence[float],
             settings: SmearSettings = DEFAULT_SMEAR, rel_tol: float = MONOTONE_REL_TOL,
             floor_rel_tol: float = 1e-2) -> FunctionalSeries:
    """F(t) 표본. 단조성 허용오차 rel_tol·max(max|F|, 4π), F ≥ 0 은 −floor_rel_tol·4πt 까지 허용."""
    ts = [float(t) for t in t_grid]
    values = [F_of_t(solution, t, settings=settings) for t in ts]
    tol = rel_tol * max([abs(v) for v in values] + [FOUR_PI])
    violations = _monotone_scan("F", ts, values, tol)
    nonneg = all(v >= -floor_rel_tol * FOUR_PI * t for t, v in zip(ts, values))
    expected = model_has_nonnegative_curvature(solution.model)
    for v in violations:
        _log.warning("F monotonicity violation %s (expected=%s)", v, expected)
    return FunctionalSeries(
        t_grid=ts,
        F=values,
        tolerance=tol,
        violations=violations,
        nonnegative_ok=nonneg,
        monotone_ok=not violations,
        monotonicity_expected=expected,
    )


def aD_series(solution: GreensSolution, a_grid: Sequence[float] = DEFAULT_A_GRID,
              psi: Optional[BumpProfile] = None, settings: SmearSettings = DEFAULT_SMEAR,
              cross_check: bool = True, rel_tol: float = MONOTONE_REL_TOL) -> FunctionalSeries:
    psi = psi or bump_profile()
    a_vals = [float(a) for a in a_grid]
    D_vals = [D_of(solution, a, psi, settings, cross_check=cross_check) for a in a_vals]
    aD_vals = [a * d for a, d in zip(a_vals, D_vals)]

    scale = max([abs(x) for x in aD_vals] + [psi.c_psi])
    tol = rel_tol * scale
    violations = _monotone_scan("aD", a_vals, aD_vals, tol)
    expected = model_has_nonnegative_curvature(solution.model)
    for v in violations:
        _log.warning("aD monotonicity violation %s (expected=%s)", v, expected)

    # 끝 3점 plateau, 불확실도는 최대 쌍간 차이
    tail = aD_vals[-3:]
    limit = float(np.mean(tail)) if tail else None
    spread = float(max(tail) - min(tail)) if tail else None

    return FunctionalSeries(
        a_grid=a_vals,
        D=D_vals,
        aD=aD_vals,
        tolerance=tol,
        violations=violations,
        nonnegative_ok=all(d >= -rel_tol * psi.c_psi for d in D_vals),
        monotone_ok=not violations,
        monotonicity_expected=expected,
        limit=limit,
        uncertainty=spread,
    )


def rigidity_diagnostic(series: FunctionalSeries, terms: Sequence, rel_tol: float = 1e-2) -> dict:
    """F ≈ 0 이 모든 표본 level 에서 성립하면 곡률 결함항 최대값을 보고 (인증 아님)."""
    flat_like = all(abs(f) <= rel_tol * FOUR_PI * t for t, f in zip(series.t_grid, series.F))
    worst = 0.0
    for term in terms:
        worst = max(worst, abs(term.int_grad_log), abs(term.int_A_ring), abs(term.int_R), abs(term.int_sphere_defect))
    return {"F_identically_small": flat_like, "max_defect_term": worst}


# ── 방사형 1D 오라클 ──────────────────────────────────────

def radial_level_quantities(model: MetricModel, r):
    """방사형 conformal 모델에서 r 위치 구면의 (u, |∇u|_g, H, area)."""
    r = np.asarray(r, dtype=float)
    if isinstance(model, Euclidean):
        phi, dphi = np.ones_like(r), np.zeros_like(r)
    elif isinstance(model, ConformalRadial):
        phi, dphi = model.phi_of_r(r), model.dphi_dr(r)
    else:
        raise UnsupportedModel(f"방사형 모델이 아닙니다: {model.label()}")
    u = radial_oracle_u(model, r)
    grad = 1.0 / (r * r * phi ** 4)        # |∇^g u|_g = φ⁻² |u′|, u′ = −1/(r²φ²)
    H = (2.0 / r + 4.0 * dphi / phi) / phi ** 2
    area = FOUR_PI * r * r * phi ** 4
    return u, grad, H, area


def radial_F(model: MetricModel, r) -> np.ndarray:
    u, grad, H, area = radial_level_quantities(model, r)
    t = 1.0 / u
    return FOUR_PI * t - t * t * H * grad * area + t ** 3 * grad ** 2 * area


def radial_aD_oracle(model: MetricModel, a: float, psi: Optional[BumpProfile] = None, nodes: int = 400) -> float:
    """방사형 모델의 a·D(a): ∫ 가중치·|∇u|³/u³ dv_g 를 log r 에서 구적.

    dv_g = φ⁶ r² dr dΩ, 지지 {1/(4a) ≤ u ≤ 1/a} 는 u 단조성으로 r 구간이 된다.
    """
    psi = psi or bump_profile()

    def r_of_u(target):
        def f(x):
            return float(radial_oracle_u(model, np.array([math.exp(x)]))[0]) - target
        return math.exp(brentq(f, math.log(1e-9), math.log(1e12), xtol=1e-15, rtol=1e-14))

    r_lo, r_hi = r_of_u(1.0 / a), r_of_u(1.0 / (4.0 * a))
    x, w = np.polynomial.legendre.leggauss(nodes)
    s = math.log(r_lo) + (math.log(r_hi) - math.log(r_lo)) * 0.5 * (x + 1.0)
    r = np.exp(s)
    u, grad, _, _ = radial_level_quantities(model, r)
    phi = np.ones_like(r) if isinstance(model, Euclidean) else model.phi_of_r(r)
    au = a * u
    weight = 0.5 * psi(0.5 / au - 1.0) - psi(1.0 / au - 1.0)
    dv = FOUR_PI * phi ** 6 * r ** 3
    integral = 0.5 * (math.log(r_hi) - math.log(r_lo)) * float(np.dot(w, weight * grad ** 3 / u ** 3 * dv))
    return a * (psi.c_psi + integral)


def schwarzschild_aD(a: float, m: float = 1.0, psi: Optional[BumpProfile] = None) -> float:
    """Schwarzschild 의 닫힌 형태 aD(a) = 3πm∫ψ/(1+v)² − (7πm²/(8a))∫ψ/(1+v)³.

    E(T) = 3πm/T² − 7πm²/(8T³) 를 D(a) = a∫ψ(v)E(a(1+v)) dv 에 넣은 값.
    """
    psi = psi or bump_profile()
    return 3.0 * math.pi * m * psi.inverse_moment(2) - 7.0 * math.pi * m * m / (8.0 * a) * psi.inverse_moment(3)


def mass_calibration_constant(psi: Optional[BumpProfile] = None) -> float:
    """lim aD(a)/m = 3π∫ψ(v)(1+v)⁻² dv."""
    psi = psi or bump_profile()
    value = 3.0 * math.pi * psi.inverse_moment(2)
    _log.debug("mass_calibration_constant: %.12g (s0=%g)", value, psi.s0)
    return value


# ── Fréchet 선형화 ────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class LinearizationInput:
    k: np.ndarray        # (..., 3, 3) 대칭
    v: np.ndarray        # (...)
    grad_v: np.ndarray   # (..., 3)


_DEFAULT_CAPS = {"k": 1e6, "v": 1e6, "grad_v": 1e6}


def _check_caps(inp: LinearizationInput, quad_: AnnulusLattice, caps: dict, p: float = 4.0) -> None:
    vol = float(np.sum(quad_.weights))
    norms = {
        "k": float(np.max(np.abs(inp.k))) if inp.k.size else 0.0,
        "v": float((np.sum(np.abs(inp.v) ** p * quad_.weights) / vol) ** (1.0 / p)),
        "grad_v": float((np.sum(np.linalg.norm(inp.grad_v, axis=-1) ** p * quad_.weights) / vol) ** (1.0 / p)),
    }
    for name, value in norms.items():
        if not math.isfinite(value) or value > caps.get(name, math.inf):
            raise UnboundedInput(f"{name} 노름이 상한을 넘습니다", norm=value, cap=caps.get(name))


def frechet_term(inp: LinearizationInput, psi: Optional[BumpProfile] = None,
                 quadrature: Optional[AnnulusLattice] = None, caps: Optional[dict] = None) -> float:
    """L(k,v) = ∫φ′(ρ)|∇ρ|³v + 3∫φ(ρ)|∇ρ|⟨∇ρ,∇v⟩ + ∫φ(ρ)[½tr k|∇ρ|³ − (3/2)|∇ρ|k(∇ρ,∇ρ)],  ρ = 1/|y|."""
    psi = psi or bump_profile()
    quad_ = quadrature or default_lattice()
    _check_caps(inp, quad_, caps or _DEFAULT_CAPS)
    y = quad_.points
    r = quad_.radius
    rho = 1.0 / r
    grad_rho = -y / r[..., None] ** 3
    g_abs = 1.0 / (r * r)
    phi = phi_weight(psi, rho)
    dphi = phi_weight_derivative(psi, rho)
    tr_k = np.einsum("...ii->...", inp.k)
    k_rr = np.einsum("...i,...ij,...j->...", grad_rho, inp.k, grad_rho)
    integrand = (
        dphi * g_abs ** 3 * inp.v
        + 3.0 * phi * g_abs * np.einsum("...i,...i->...", grad_rho, inp.grad_v)
        + phi * (0.5 * tr_k * g_abs ** 3 - 1.5 * g_abs * k_rr)
    )
    return float(np.sum(integrand * quad_.weights))


def d_functional(h: np.ndarray, f: np.ndarray, grad_f: np.ndarray, psi: Optional[BumpProfile] = None,
                 quadrature: Optional[AnnulusLattice] = None) -> float:
    """𝒟(h, f) = c_ψ + ∫ φ(f)·(h^{ij} f_i f_j)^{3/2} √det h dy  (An 위)."""
    psi = psi or bump_profile()
    quad_ = quadrature or default_lattice()
    hinv = np.linalg.inv(h)
    sq = np.einsum("...ij,...i,...j->...", hinv, grad_f, grad_f)
    vol = np.sqrt(np.linalg.det(h))
    return psi.c_psi + float(np.sum(phi_weight(psi, f) * sq ** 1.5 * vol * quad_.weights))


def flat_pair(quadrature: Optional[AnnulusLattice] = None):
    """(δ, ρ = 1/|y|) 와 ∇ρ."""
    quad_ = quadrature or default_lattice()
    y = quad_.points
    r = quad_.radius
    h = np.broadcast_to(np.eye(3), r.shape + (3, 3)).copy()
    return h, 1.0 / r, -y / r[..., None] ** 3


# ── 세제곱 벡터 부등식 ────────────────────────────────────

def cubic_lemma_check(n_samples: int = 1_000_000, seed: int = 0, bound: float = 10.0,
                      chunk: int = 200_000) -> dict:
    """|X+Y|³ − |X|³ − 3|X|⟨X,Y⟩ 를 |X||Y|² + |Y|³ 로 나눈 비의 최대값."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    done = 0
    while done < n_samples:
        n = min(chunk, n_samples - done)
        X = rng.uniform(-bound, bound, size=(n, 3))
        Y = rng.uniform(-bound, bound, size=(n, 3))
        nx = np.linalg.norm(X, axis=1)
        ny = np.linalg.norm(Y, axis=1)
        keep = ny > 0
        lhs = np.abs(np.linalg.norm(X + Y, axis=1) ** 3 - nx ** 3 - 3.0 * nx * np.einsum("ij,ij->i", X, Y))
        rhs = nx * ny ** 2 + ny ** 3
        ratio = lhs[keep] / rhs[keep]
        if ratio.size:
            worst = max(worst, float(ratio.max()))
        done += n
    return {"n_samples": n_samples, "seed": seed, "max_ratio": worst}
