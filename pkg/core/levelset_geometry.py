# core/levelset_geometry.py
"""등위면 {u = 1/t} 기하: |∇^g u|, 평균곡률 H, coarea 스미어 면적분, F′ 곡률항.

면적분은 등위면을 직접 추출하지 않고 coarea 로 계산한다:
  ∫_{u=s₀} Q da_g ≈ ∫ Q |∇^g u|_g η_ε(u − s₀) dv_g,   ∫η_ε = 1
η_ε 는 폭 ε 의 C^∞ bump. 적분은 반경 방향으로 세분한 격자(셀당 n_sub 점)에서 하고,
필드는 ζ = 1/r 에 대한 not-a-knot cubic spline 으로 옮긴다 (1/r 과 상수는 정확).

부호: H = −div(∇u/|∇u|), 유클리드 u = 1/r 에서 H = 2/r > 0.
"""
from __future__ import annotations

import logging
import math
import weakref
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable, Dict, Optional, Union

import numpy as np
import pandas as pd
from scipy.integrate import quad
from scipy.interpolate import CubicSpline

from core.elliptic_green import (
    GreensSolution,
    SphericalGrid,
    radial_oracle_du,
    radial_oracle_u,
)
from core.errors import DegenerateGradient, ShellUnresolved
from core.metric_models import ConformalRadial, Euclidean, metric_field, scalar_curvature_field

_log = logging.getLogger(__name__)

GAUSS_BONNET_SPHERE = 8.0 * math.pi
_FD_REL_STEP = 1e-4
_LATTICE_CACHE_SIZE = 64


# 창 폭 ε = smear_cells·(반경 셀의 u 폭). 셀마다 n_sub 개의 세분 표본을 두므로
# 창 안 표본 수는 약 smear_cells·n_sub 이고 광선마다 min_samples 이상이어야 한다 (아니면 ShellUnresolved).
# 기본 1 셀 × 16 표본. smear_cells = 4 는 |∇u|² 항의 O(ε²) 편향이 16 배.
@dataclass(frozen=True)
class SmearSettings:
    smear_cells: float = 1.0
    n_sub: int = 16
    richardson: bool = False
    min_samples: int = 3
    gradient_floor: float = 1e-12


DEFAULT_SMEAR = SmearSettings()


# ── C^∞ 창 함수 ──────────────────────────────────────────

@lru_cache(maxsize=1)
def _bump_mass() -> float:
    val, _ = quad(lambda y: math.exp(-1.0 / (1.0 - y * y)), -1.0, 1.0, epsabs=1e-14, epsrel=1e-13)
    return val


def smear_window(x: np.ndarray, eps: float) -> np.ndarray:
    """η_ε(x): 지지 |x| < ε/2, ∫η_ε dx = 1."""
    y = 2.0 * np.asarray(x, dtype=float) / eps
    out = np.zeros_like(y)
    inside = np.abs(y) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - y[inside] ** 2))
    return out * (2.0 / (eps * _bump_mass()))


# ── 각도 미분 ─────────────────────────────────────────────

def _pad_theta(f: np.ndarray) -> np.ndarray:
    """극점 너머로 반사: f(−θ, φ) = f(θ, φ+π)."""
    n_p = f.shape[2]
    shift = n_p // 2
    top = np.roll(f[:, :1, :], -shift, axis=2)
    bottom = np.roll(f[:, -1:, :], -shift, axis=2)
    return np.concatenate([top, f, bottom], axis=1)


def angular_derivatives(grid: SphericalGrid, f: np.ndarray) -> Dict[str, np.ndarray]:
    """셀 중심 2차 중심차분: f_t, f_p, f_tt, f_pp, f_tp."""
    d_t, d_p = grid.d_theta, grid.d_phi
    n_t, n_p = grid.spec.n_theta, grid.spec.n_phi

    def d_phi(x):
        if n_p < 3:
            return np.zeros_like(x)
        return (np.roll(x, -1, axis=2) - np.roll(x, 1, axis=2)) / (2.0 * d_p)

    def d_phi2(x):
        if n_p < 3:
            return np.zeros_like(x)
        return (np.roll(x, -1, axis=2) - 2.0 * x + np.roll(x, 1, axis=2)) / (d_p * d_p)

    if n_t < 2:
        zero = np.zeros_like(f)
        f_t, f_tt = zero, zero
    elif n_p % 2 == 0:
        fp = _pad_theta(f)
        f_t = (fp[:, 2:, :] - fp[:, :-2, :]) / (2.0 * d_t)
        f_tt = (fp[:, 2:, :] - 2.0 * f + fp[:, :-2, :]) / (d_t * d_t)
    else:
        f_t = np.gradient(f, d_t, axis=1, edge_order=2)
        f_tt = np.gradient(f_t, d_t, axis=1, edge_order=2)
    return {
        "t": f_t,
        "p": d_phi(f),
        "tt": f_tt,
        "pp": d_phi2(f),
        "tp": d_phi(f_t),
    }


# ── 반경 spline 표현 ──────────────────────────────────────

_CHANNELS = ("u", "t", "p", "tt", "pp", "tp")


class _RadialRepresentation:
    """u 와 각도 미분들을 ζ = 1/r 의 cubic spline 으로 묶은 것 (해당 해 전용)."""

    def __init__(self, solution: GreensSolution):
        grid = solution.grid
        self.solution = solution
        self.grid = grid
        ang = angular_derivatives(grid, solution.u)
        stack = np.stack([solution.u] + [ang[c] for c in _CHANNELS[1:]], axis=-1)
        zeta = 1.0 / grid.r_centers
        self.spline = CubicSpline(zeta[::-1], stack[::-1], axis=0, bc_type="not-a-knot")
        self.u_min_row = solution.u.min(axis=(1, 2))
        self.u_max_row = solution.u.max(axis=(1, 2))
        self.u_mean_row = solution.u.mean(axis=(1, 2))
        self._lattices: Dict[tuple, "LatticeSamples"] = {}

    def rows_for(self, u_lo: float, u_hi: float, pad: int = 1):
        hit = np.nonzero((self.u_max_row >= u_lo) & (self.u_min_row <= u_hi))[0]
        n_r = self.grid.spec.n_r
        if hit.size == 0:
            raise ShellUnresolved("요청한 u 구간이 격자 밖입니다", u_lo=u_lo, u_hi=u_hi)
        i0, i1 = int(hit[0]) - pad, int(hit[-1]) + pad
        if i0 < 1 or i1 > n_r - 2:
            raise ShellUnresolved(
                "스미어 창이 격자 경계를 벗어납니다", u_lo=u_lo, u_hi=u_hi, rows=(i0, i1), n_r=n_r,
            )
        return i0, i1

    def lattice(self, i0: int, i1: int, n_sub: int) -> "LatticeSamples":
        key = (i0, i1, n_sub)
        hit = self._lattices.get(key)
        if hit is not None:
            return hit
        if len(self._lattices) >= _LATTICE_CACHE_SIZE:
            self._lattices.pop(next(iter(self._lattices)))
        samples = _build_lattice(self, i0, i1, n_sub)
        self._lattices[key] = samples
        return samples

    def level_radius(self, u_value: float) -> float:
        # 각도 평균 프로파일에서 u(r) = u_value 인 r (log-log 보간)
        log_u = np.log(self.u_mean_row[::-1])
        log_r = np.log(self.grid.r_centers[::-1])
        return float(np.exp(np.interp(math.log(u_value), log_u, log_r)))

    def cell_du(self, u_value: float) -> float:
        r_t = self.level_radius(u_value)
        half = math.sqrt(self.grid.log_ratio)
        log_u = np.log(self.u_mean_row)
        log_r = np.log(self.grid.r_centers)
        lo, hi = np.exp(np.interp(np.log([r_t / half, r_t * half]), log_r, log_u))
        return float(lo - hi)


_REPRESENTATIONS: "weakref.WeakKeyDictionary[GreensSolution, _RadialRepresentation]" = weakref.WeakKeyDictionary()


def _representation(solution: GreensSolution) -> _RadialRepresentation:
    rep = _REPRESENTATIONS.get(solution)
    if rep is None:
        rep = _RadialRepresentation(solution)
        _REPRESENTATIONS[solution] = rep
    return rep


# ── 세분 격자 샘플 ────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class LatticeSamples:
    """세분 격자 위 필드. 배열 모양 (N, n_θ, n_φ[, 3[, 3]])."""
    model: object
    r: np.ndarray
    weights: np.ndarray     # 좌표 부피 r³ Δs dΩ
    points: np.ndarray
    u: np.ndarray
    grad: np.ndarray        # 유클리드 편미분 ∂_i u
    hess: np.ndarray        # ∂_i ∂_j u
    g: np.ndarray
    ginv: np.ndarray
    sqrt_g: np.ndarray
    floor: float

    @cached_property
    def _metric_derivatives(self):
        return _metric_derivatives(self.model, self.points, np.linalg.norm(self.points, axis=-1))

    @property
    def dginv(self) -> np.ndarray:
        """∂_k g^{ij}, 마지막 축 k."""
        return self._metric_derivatives[0]

    @property
    def div_a(self) -> np.ndarray:
        """Σ_i ∂_i a_ij."""
        return self._metric_derivatives[1]

    @cached_property
    def grad_g_sq(self) -> np.ndarray:
        return np.einsum("...ij,...i,...j->...", self.ginv, self.grad, self.grad)

    @cached_property
    def grad_g(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.grad_g_sq, 0.0))

    @cached_property
    def vector_g(self) -> np.ndarray:
        return np.einsum("...ij,...j->...i", self.ginv, self.grad)

    @cached_property
    def degenerate(self) -> np.ndarray:
        return self.grad_g < self.floor

    @cached_property
    def grad_norm_derivative(self) -> np.ndarray:
        """∂_k |∇u|_g."""
        d_sq = np.einsum("...ijk,...i,...j->...k", self.dginv, self.grad, self.grad)
        d_sq = d_sq + 2.0 * np.einsum("...ij,...ik,...j->...k", self.ginv, self.hess, self.grad)
        G = np.where(self.degenerate, 1.0, self.grad_g)
        return d_sq / (2.0 * G[..., None])

    @cached_property
    def mean_curvature(self) -> np.ndarray:
        """H = −(1/√g)[ℒu/G − (A∇u)·∇G/G²], A = √g g^{-1}."""
        A = self.ginv * self.sqrt_g[..., None, None]
        Lu = np.einsum("...ij,...ij->...", A, self.hess) + np.einsum("...j,...j->...", self.div_a, self.grad)
        flux = np.einsum("...ij,...j->...i", A, self.grad)
        G = np.where(self.degenerate, 1.0, self.grad_g)
        dG = self.grad_norm_derivative
        H = -(Lu / G - np.einsum("...i,...i->...", flux, dG) / (G * G)) / self.sqrt_g
        return np.where(self.degenerate, np.nan, H)

    @cached_property
    def scalar_curvature(self) -> np.ndarray:
        return scalar_curvature_field(self.model, self.points)

    @cached_property
    def a_ring_sq(self) -> np.ndarray:
        """|Å|²_g. conformally flat 이므로 |Å_g|²_g = |Å_δ|²/λ."""
        gnorm = np.linalg.norm(self.grad, axis=-1)
        safe = np.where(gnorm > 0, gnorm, 1.0)
        n = self.grad / safe[..., None]
        P = np.eye(3) - n[..., :, None] * n[..., None, :]
        h = np.einsum("...ij,...jk,...kl->...il", P, self.hess, P) / safe[..., None, None]
        tr = np.einsum("...ii->...", h)
        sq = np.einsum("...ij,...ij->...", h, h)
        lam = np.einsum("...ii->...", self.g) / 3.0
        return np.where(gnorm > 0, (sq - 0.5 * tr * tr) / lam, np.nan)

    @cached_property
    def grad_log_sq(self) -> np.ndarray:
        """|∇^Σ |∇u||² / |∇u|² (g 기준 접선 성분)."""
        dG = self.grad_norm_derivative
        full = np.einsum("...ij,...i,...j->...", self.ginv, dG, dG)
        normal = np.einsum("...ij,...i,...j->...", self.ginv, dG, self.grad)
        G2 = np.where(self.degenerate, 1.0, self.grad_g_sq)
        return (full - normal * normal / G2) / G2


def _metric_derivatives(model, points: np.ndarray, r: np.ndarray):
    """중심차분 ∂_k g^{ij} 와 Σ_i ∂_i a_ij (a = √g g^{-1}). 보폭은 r 에 비례."""
    g = metric_field(model, points)
    dginv = np.empty(g.shape + (3,))
    div_a = np.zeros(points.shape)
    h = _FD_REL_STEP * r[..., None]
    for k in range(3):
        e = np.zeros(3)
        e[k] = 1.0
        gp = metric_field(model, points + h * e)
        gm = metric_field(model, points - h * e)
        ip, im = np.linalg.inv(gp), np.linalg.inv(gm)
        dginv[..., k] = (ip - im) / (2.0 * h[..., None])
        ap = ip * np.sqrt(np.linalg.det(gp))[..., None, None]
        am = im * np.sqrt(np.linalg.det(gm))[..., None, None]
        # Σ_i ∂_i a_ij 중 i = k 항
        div_a += (ap[..., k, :] - am[..., k, :]) / (2.0 * h)
    return dginv, div_a


def _oracle_radial(model, r: np.ndarray):
    u = radial_oracle_u(model, r)
    u_r = radial_oracle_du(model, r)
    if isinstance(model, Euclidean):
        phi, dphi = np.ones_like(r), np.zeros_like(r)
    else:
        phi, dphi = model.phi_of_r(r), model.dphi_dr(r)
    u_rr = 2.0 / (r ** 3 * phi ** 2) + 2.0 * dphi / (r * r * phi ** 3)
    return u, u_r, u_rr


def _build_lattice(rep: _RadialRepresentation, i0: int, i1: int, n_sub: int) -> LatticeSamples:
    grid = rep.grid
    solution = rep.solution
    s_faces = np.log(grid.r_faces)
    ds = (s_faces[1] - s_faces[0]) / n_sub
    offsets = (np.arange(n_sub) + 0.5) * ds
    s = (s_faces[i0:i1 + 1, None] + offsets[None, :]).ravel()
    r = np.exp(s)
    zeta = 1.0 / r
    n_t, n_p = grid.spec.n_theta, grid.spec.n_phi
    shape = (r.size, n_t, n_p)
    R = r[:, None, None]

    if solution.is_oracle and isinstance(solution.model, (Euclidean, ConformalRadial)):
        u1, ur1, urr1 = _oracle_radial(solution.model, r)
        u = np.broadcast_to(u1[:, None, None], shape)
        u_r = np.broadcast_to(ur1[:, None, None], shape)
        u_rr = np.broadcast_to(urr1[:, None, None], shape)
        zero = np.zeros(shape)
        u_t = u_p = u_tt = u_pp = u_tp = u_rt = u_rp = zero
    else:
        val = rep.spline(zeta)
        d1 = rep.spline(zeta, 1)
        d2 = rep.spline(zeta, 2)
        z = zeta[:, None, None]
        u = val[..., 0]
        u_r = -z * z * d1[..., 0]
        u_rr = z ** 4 * d2[..., 0] + 2.0 * z ** 3 * d1[..., 0]
        u_t, u_p, u_tt, u_pp, u_tp = (val[..., k] for k in range(1, 6))
        u_rt = -z * z * d1[..., 1]
        u_rp = -z * z * d1[..., 2]

    theta = grid.theta_centers[None, :, None]
    sin_t = np.sin(theta)
    cot_t = np.cos(theta) / sin_t
    e_r, e_t, e_p = grid.e_r[None], grid.e_theta[None], grid.e_phi[None]

    grad = (u_r[..., None] * e_r + (u_t / R)[..., None] * e_t + (u_p / (R * sin_t))[..., None] * e_p)

    # 정규직교 frame 에서의 Hessian 성분
    h_rr = u_rr
    h_rt = u_rt / R - u_t / (R * R)
    h_rp = u_rp / (R * sin_t) - u_p / (R * R * sin_t)
    h_tt = u_tt / (R * R) + u_r / R
    h_tp = u_tp / (R * R * sin_t) - cot_t * u_p / (R * R * sin_t)
    h_pp = u_pp / (R * R * sin_t ** 2) + u_r / R + cot_t * u_t / (R * R)
    frame = [e_r, e_t, e_p]
    comps = [[h_rr, h_rt, h_rp], [h_rt, h_tt, h_tp], [h_rp, h_tp, h_pp]]
    hess = np.zeros(shape + (3, 3))
    for a in range(3):
        for b in range(3):
            hess += comps[a][b][..., None, None] * (frame[a][..., :, None] * frame[b][..., None, :])

    points = R[..., None] * e_r
    points = np.broadcast_to(points, shape + (3,))
    g = metric_field(solution.model, points)
    ginv = np.linalg.inv(g)
    sqrt_g = np.sqrt(np.linalg.det(g))

    weights = (r ** 3 * ds)[:, None, None] * grid.solid_angles[None]
    gnorm_max = float(np.sqrt(np.max(np.einsum("...ij,...i,...j->...", ginv, grad, grad))))
    return LatticeSamples(
        model=solution.model,
        r=r,
        weights=weights,
        points=points,
        u=np.asarray(u),
        grad=grad,
        hess=hess,
        g=g,
        ginv=ginv,
        sqrt_g=sqrt_g,
        floor=DEFAULT_SMEAR.gradient_floor * gnorm_max,
    )


def lattice_for_levels(solution: GreensSolution, u_lo: float, u_hi: float,
                       settings: SmearSettings = DEFAULT_SMEAR) -> LatticeSamples:
    rep = _representation(solution)
    i0, i1 = rep.rows_for(u_lo, u_hi)
    return rep.lattice(i0, i1, settings.n_sub)


# ── 이름 붙은 면적분 피적분 함수 ──────────────────────────

QFunc = Callable[[LatticeSamples], np.ndarray]

Q_FIELDS: Dict[str, QFunc] = {
    "one": lambda s: np.ones_like(s.u),
    "gradu_sq": lambda s: s.grad_g_sq,
    "H_gradu": lambda s: s.mean_curvature * s.grad_g,
    "gradu_sq_over_u": lambda s: s.grad_g_sq / s.u,
    "sphere_defect": lambda s: (2.0 * s.grad_g / s.u - s.mean_curvature) ** 2,
    "R": lambda s: s.scalar_curvature,
    "A_ring_sq": lambda s: s.a_ring_sq,
    "grad_log": lambda s: s.grad_log_sq,
}


def _resolve_q(Q: Union[str, QFunc]) -> QFunc:
    if callable(Q):
        return Q
    try:
        return Q_FIELDS[Q]
    except KeyError:
        raise ValueError(f"알 수 없는 Q 필드: {Q!r} (허용: {', '.join(Q_FIELDS)})") from None


# ── 연산 ──────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class GradientField:
    vector: np.ndarray   # ∇^g u = g^{-1} du, (n_r, n_θ, n_φ, 3)
    norm: np.ndarray     # |∇^g u|_g


def _center_lattice(solution: GreensSolution) -> LatticeSamples:
    rep = _representation(solution)
    return rep.lattice(0, solution.grid.spec.n_r - 1, 1)


def gradient_field(solution: GreensSolution) -> GradientField:
    lat = _center_lattice(solution)
    return GradientField(vector=lat.vector_g, norm=lat.grad_g)


def mean_curvature_field(solution: GreensSolution) -> np.ndarray:
    """셀 중심 H. |∇u|_g 가 floor 아래인 셀은 NaN (마스킹)."""
    lat = _center_lattice(solution)
    H = lat.mean_curvature
    n_masked = int(np.count_nonzero(lat.degenerate))
    if n_masked:
        _log.warning("mean_curvature_field: %d cells below gradient floor masked", n_masked)
    return H


def default_smear_width(solution: GreensSolution, t: float, settings: SmearSettings = DEFAULT_SMEAR) -> float:
    return settings.smear_cells * _representation(solution).cell_du(1.0 / t)


def _smeared_once(solution: GreensSolution, q: QFunc, t: float, eps: float, settings: SmearSettings) -> float:
    s0 = 1.0 / t
    lat = lattice_for_levels(solution, s0 - 0.5 * eps, s0 + 0.5 * eps, settings)
    eta = smear_window(lat.u - s0, eps)
    active = eta > 0
    per_ray = np.count_nonzero(active, axis=0)
    if per_ray.min() < settings.min_samples:
        raise ShellUnresolved(
            "스미어 셸 안의 세분 샘플이 부족합니다",
            t=t, eps=eps, min_samples=int(per_ray.min()), required=settings.min_samples,
        )
    if np.any(active & lat.degenerate):
        raise DegenerateGradient("등위면 근처에서 |∇u| 가 floor 아래입니다", t=t)
    values = q(lat)
    integrand = np.where(active, values * lat.grad_g * eta * lat.sqrt_g * lat.weights, 0.0)
    return float(np.sum(integrand))


def smeared_surface_integral(solution: GreensSolution, Q: Union[str, QFunc], t: float,
                             eps: Optional[float] = None,
                             settings: SmearSettings = DEFAULT_SMEAR) -> float:
    """∫_{u=1/t} Q da_g 의 coarea 스미어 근사."""
    q = _resolve_q(Q)
    if eps is None:
        eps = default_smear_width(solution, t, settings)
    coarse = _smeared_once(solution, q, t, eps, settings)
    if not settings.richardson:
        return coarse
    fine = _smeared_once(solution, q, t, 0.5 * eps, settings)
    return (4.0 * fine - coarse) / 3.0


@dataclass(frozen=True)
class SurfaceIntegralReport:
    t: float
    area: float
    int_H_gradu: float
    int_gradu_sq: float
    smear_width: float


def surface_report(solution: GreensSolution, t: float, settings: SmearSettings = DEFAULT_SMEAR) -> SurfaceIntegralReport:
    eps = default_smear_width(solution, t, settings)
    return SurfaceIntegralReport(
        t=t,
        area=smeared_surface_integral(solution, "one", t, eps, settings),
        int_H_gradu=smeared_surface_integral(solution, "H_gradu", t, eps, settings),
        int_gradu_sq=smeared_surface_integral(solution, "gradu_sq", t, eps, settings),
        smear_width=eps,
    )


def level_set_connected(solution: GreensSolution, t: float) -> bool:
    """모든 반경 광선이 u = 1/t 를 정확히 한 번 가로지르는지 (셸 점유 스캔)."""
    diff = solution.u - 1.0 / t
    crossings = np.count_nonzero(np.diff(np.sign(diff), axis=0) != 0, axis=0)
    return bool(np.all(crossings == 1))


@dataclass(frozen=True)
class CurvatureTermsReport:
    t: float
    int_RSigma: float
    int_grad_log: float
    int_A_ring: float
    int_R: float
    int_sphere_defect: float
    F_prime: float
    smear_width: float
    connected: bool
    experimental: bool


def curvature_terms(solution: GreensSolution, t: float, settings: SmearSettings = DEFAULT_SMEAR) -> CurvatureTermsReport:
    model = solution.model
    radial = isinstance(model, (Euclidean, ConformalRadial))
    eps = default_smear_width(solution, t, settings)
    connected = level_set_connected(solution, t)
    if not connected:
        _log.warning("curvature_terms: level t=%g is not a single shell", t)

    if radial:
        # 방사형: 등위면이 둥근 구 → Å = 0, |∇u| 접선 기울기 = 0
        grad_log, a_ring = 0.0, 0.0
    else:
        grad_log = smeared_surface_integral(solution, "grad_log", t, eps, settings)
        a_ring = smeared_surface_integral(solution, "A_ring_sq", t, eps, settings)
    int_R = smeared_surface_integral(solution, "R", t, eps, settings)
    defect = smeared_surface_integral(solution, "sphere_defect", t, eps, settings)
    r_sigma = GAUSS_BONNET_SPHERE

    f_prime = 4.0 * math.pi + (-0.5 * r_sigma + grad_log + 0.5 * int_R + 0.5 * a_ring + 0.75 * defect)
    return CurvatureTermsReport(
        t=t,
        int_RSigma=r_sigma,
        int_grad_log=grad_log,
        int_A_ring=a_ring,
        int_R=int_R,
        int_sphere_defect=defect,
        F_prime=f_prime,
        smear_width=eps,
        connected=connected,
        experimental=not radial,
    )


def ac_gradient_check(solution: GreensSolution, levels, rel_step: float = 0.02,
                      settings: SmearSettings = DEFAULT_SMEAR) -> pd.DataFrame:
    """d/dt ∫|∇u|² da 와 −t⁻² ∫H|∇u| da 비교 (같은 ε 로 중심차분)."""
    rows = []
    for t in levels:
        t = float(t)
        h = rel_step * t
        eps = default_smear_width(solution, t, settings)
        plus = smeared_surface_integral(solution, "gradu_sq", t + h, eps, settings)
        minus = smeared_surface_integral(solution, "gradu_sq", t - h, eps, settings)
        lhs = (plus - minus) / (2.0 * h)
        rhs = -smeared_surface_integral(solution, "H_gradu", t, eps, settings) / (t * t)
        rows.append({"t": t, "lhs": lhs, "rhs": rhs, "rel_err": abs(lhs - rhs) / max(abs(rhs), 1e-300)})
    return pd.DataFrame(rows, columns=["t", "lhs", "rhs", "rel_err"])
