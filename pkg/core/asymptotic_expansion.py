# core/asymptotic_expansion.py
"""Green 함수의 점근 전개 수치 검증.

u_R(y) = R·u(Ry) 를 고정 annulus An = B(0,4)∖B(0,1) 격자로 옮겨
  u_R ≈ c/|y| + ⟨d, y⟩/(R|y|³),   d ≈ b + X̄
를 최소제곱으로 맞춘다. X = B∇u 의 Newtonian potential w 와 X̄ = (1/4π)∫X,
조화 나머지 h = u − w 의 dipole b 를 따로 계산해 d − (b + X̄) 를 맞춰 본다.
"""
from __future__ import annotations

import logging
import math
import weakref
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import ndimage

from core.elliptic_green import GreensSolution, SphericalGrid, cell_gradient, x_field
from core.errors import IllConditionedFit, InvalidSpec, OutOfRange

_log = logging.getLogger(__name__)

FIT_COND_LIMIT = 1e6
DEFAULT_Q = (1.0, 1.25)
DEFAULT_P = 4.0
# 자동 R 목록의 annulus 안쪽 반경 하한 (소스가 모여 있는 |x| < 4 제외)
ASYMPTOTIC_R_MIN = 4.0
_TARGET_CHUNK = 64


# ── annulus 격자 ──────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class AnnulusLattice:
    """구면 표본 격자: r 은 Gauss–Legendre, cosθ 는 Gauss–Legendre, φ 는 균등."""
    points: np.ndarray    # (n_r, n_θ, n_φ, 3)
    weights: np.ndarray   # 유클리드 부피 구적 가중치
    r_in: float = 1.0
    r_out: float = 4.0

    @classmethod
    def build(cls, n_r: int = 24, n_theta: int = 12, n_phi: int = 24,
              r_in: float = 1.0, r_out: float = 4.0) -> "AnnulusLattice":
        xr, wr = np.polynomial.legendre.leggauss(n_r)
        r = r_in + (r_out - r_in) * 0.5 * (xr + 1.0)
        wr = wr * 0.5 * (r_out - r_in) * r * r
        ct, wt = np.polynomial.legendre.leggauss(n_theta)
        st = np.sqrt(1.0 - ct * ct)
        ph = (np.arange(n_phi) + 0.5) * (2.0 * math.pi / n_phi)
        wp = np.full(n_phi, 2.0 * math.pi / n_phi)
        dirs = np.stack([
            st[:, None] * np.cos(ph)[None, :],
            st[:, None] * np.sin(ph)[None, :],
            np.broadcast_to(ct[:, None], (n_theta, n_phi)),
        ], axis=-1)
        points = r[:, None, None, None] * dirs[None]
        weights = wr[:, None, None] * wt[None, :, None] * wp[None, None, :]
        return cls(points=points, weights=weights, r_in=r_in, r_out=r_out)

    @property
    def radius(self) -> np.ndarray:
        return np.linalg.norm(self.points, axis=-1)

    @property
    def volume(self) -> float:
        return float(np.sum(self.weights))

    def mean(self, values: np.ndarray) -> float:
        return float(np.sum(values * self.weights) / self.volume)


_DEFAULT_LATTICE: Optional[AnnulusLattice] = None


def default_lattice() -> AnnulusLattice:
    global _DEFAULT_LATTICE
    if _DEFAULT_LATTICE is None:
        _DEFAULT_LATTICE = AnnulusLattice.build()
    return _DEFAULT_LATTICE


# ── 격자 필드 보간 (log r, θ, φ 균등 → cubic B-spline) ───

class _FieldInterpolator:
    PAD = 2

    def __init__(self, grid: SphericalGrid):
        self.grid = grid
        self._filtered: Dict[str, np.ndarray] = {}

    def _pad(self, f: np.ndarray) -> np.ndarray:
        p = self.PAD
        shift = self.grid.spec.n_phi // 2
        # 극점 너머: f(−θ, φ) = f(θ, φ+π)
        top = np.roll(f[:, :p, :][:, ::-1, :], -shift, axis=2)
        bottom = np.roll(f[:, -p:, :][:, ::-1, :], -shift, axis=2)
        f = np.concatenate([top, f, bottom], axis=1)
        return np.concatenate([f[:, :, -p:], f, f[:, :, :p]], axis=2)

    def register(self, name: str, values: np.ndarray) -> None:
        self._filtered[name] = ndimage.spline_filter(self._pad(values), order=3, mode="mirror")

    def has(self, name: str) -> bool:
        return name in self._filtered

    def coordinates(self, points: np.ndarray) -> np.ndarray:
        grid = self.grid
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        r = np.linalg.norm(pts, axis=1)
        theta = np.arccos(np.clip(pts[:, 2] / r, -1.0, 1.0))
        phi = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2.0 * math.pi)
        ds = math.log(grid.log_ratio)
        i_r = (np.log(r) - math.log(grid.r_centers[0])) / ds
        i_t = (theta - grid.theta_centers[0]) / grid.d_theta + self.PAD
        i_p = (phi - grid.phi_centers[0]) / grid.d_phi + self.PAD
        return np.stack([i_r, i_t, i_p])

    def __call__(self, name: str, points: np.ndarray) -> np.ndarray:
        shape = np.asarray(points).shape[:-1]
        coords = self.coordinates(points)
        out = ndimage.map_coordinates(self._filtered[name], coords, order=3, mode="nearest", prefilter=False)
        return out.reshape(shape)


_INTERPOLATORS: "weakref.WeakKeyDictionary[GreensSolution, _FieldInterpolator]" = weakref.WeakKeyDictionary()


def _interpolator(solution: GreensSolution) -> _FieldInterpolator:
    interp = _INTERPOLATORS.get(solution)
    if interp is None:
        grid = solution.grid
        interp = _FieldInterpolator(grid)
        r = grid.r_centers[:, None, None]
        interp.register("ru", r * solution.u)
        grad = cell_gradient(grid, solution.u)
        for i in range(3):
            interp.register(f"r2grad{i}", r * r * grad[..., i])
        _INTERPOLATORS[solution] = interp
    return interp


def _check_inside(solution: GreensSolution, r_lo: float, r_hi: float, what: str) -> None:
    rc = solution.grid.r_centers
    if r_lo < rc[1] or r_hi > rc[-2]:
        raise OutOfRange(f"{what} 이(가) 격자 밖입니다", r_lo=r_lo, r_hi=r_hi, r_min=float(rc[1]), r_max=float(rc[-2]))


def sample_u(solution: GreensSolution, points: np.ndarray) -> np.ndarray:
    r = np.linalg.norm(points, axis=-1)
    _check_inside(solution, float(r.min()), float(r.max()), "표본 점")
    return _interpolator(solution)("ru", points) / r


def sample_grad_u(solution: GreensSolution, points: np.ndarray) -> np.ndarray:
    r = np.linalg.norm(points, axis=-1)
    interp = _interpolator(solution)
    comps = [interp(f"r2grad{i}", points) for i in range(3)]
    return np.stack(comps, axis=-1) / (r * r)[..., None]


# ── rescale / fit ─────────────────────────────────────────

def rescale_to_annulus(solution: GreensSolution, R: float, lattice: Optional[AnnulusLattice] = None) -> np.ndarray:
    """u_R(y) = R·u(Ry) 를 annulus 격자에서."""
    lattice = lattice or default_lattice()
    spec = solution.grid.spec
    if lattice.r_out * R > spec.r_max / 2.0 or R < 8.0 * spec.r_min:
        raise OutOfRange("rescale 반경이 허용 범위 밖입니다", R=R, r_min=spec.r_min, r_max=spec.r_max)
    return R * sample_u(solution, R * lattice.points)


def rescaled_gradient(solution: GreensSolution, R: float, lattice: Optional[AnnulusLattice] = None) -> np.ndarray:
    """∇_y u_R(y) = R²·(∇u)(Ry)."""
    lattice = lattice or default_lattice()
    return R * R * sample_grad_u(solution, R * lattice.points)


def _design(lattice: AnnulusLattice, R: float) -> np.ndarray:
    y = lattice.points.reshape(-1, 3)
    r = np.linalg.norm(y, axis=1)
    return np.column_stack([1.0 / r, y / (R * r[:, None] ** 3)])


def _weighted_lstsq(lattice: AnnulusLattice, R: float, values: np.ndarray):
    A = _design(lattice, R)
    sw = np.sqrt(lattice.weights.reshape(-1))
    Aw = A * sw[:, None]
    cond = float(np.linalg.cond(Aw))
    if cond > FIT_COND_LIMIT:
        raise IllConditionedFit("annulus 설계 행렬 조건수가 너무 큽니다", cond=cond, R=R)
    coef, *_ = np.linalg.lstsq(Aw, values.reshape(-1) * sw, rcond=None)
    return coef, cond


def _dipole_intercept(radii: Sequence[float], per_scale: np.ndarray) -> np.ndarray:
    """R 별 dipole 추정 d_R 을 1/R 에 회귀한 절편."""
    x = 1.0 / np.asarray(radii, dtype=float)
    if len(x) < 2:
        return per_scale[-1]
    V = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(V, per_scale, rcond=None)
    return coef[0]


def _lq(lattice: AnnulusLattice, values: np.ndarray, q: float) -> float:
    return lattice.mean(np.abs(values) ** q) ** (1.0 / q)


@dataclass(frozen=True)
class AnnulusReport:
    R: float
    c_R: float
    d_R: np.ndarray         # y/(R|y|³) 열의 계수 = R 스케일의 dipole 추정
    residual_lq: Dict[float, float]
    residual_w1p: float


@dataclass(frozen=True)
class ExpansionFit:
    c: float
    dipole: np.ndarray
    reports: List[AnnulusReport]
    cond: float

    def table(self) -> pd.DataFrame:
        rows = []
        for rep in self.reports:
            row = {
                "R": rep.R,
                "c_R": rep.c_R,
                "d_x": rep.d_R[0],
                "d_y": rep.d_R[1],
                "d_z": rep.d_R[2],
            }
            for q, val in sorted(rep.residual_lq.items()):
                row[f"L{q:g}"] = val
            row["W1p"] = rep.residual_w1p
            rows.append(row)
        return pd.DataFrame(rows)


def fit_expansion(solution: GreensSolution, radii: Sequence[float],
                  lattice: Optional[AnnulusLattice] = None,
                  q_values: Sequence[float] = DEFAULT_Q, p: float = DEFAULT_P) -> ExpansionFit:
    lattice = lattice or default_lattice()
    radii = sorted(float(R) for R in radii)
    if len(radii) < 4:
        raise InvalidSpec("fit_expansion 은 dyadic R 이 4개 이상 필요합니다", n=len(radii))

    fields = []
    coefs = []
    cond = 0.0
    for R in radii:
        u_R = rescale_to_annulus(solution, R, lattice)
        coef, cond_R = _weighted_lstsq(lattice, R, u_R)
        cond = max(cond, cond_R)
        fields.append(u_R)
        coefs.append(coef)

    c = float(coefs[-1][0])
    dipole = _dipole_intercept(radii, np.array([cf[1:] for cf in coefs]))

    y = lattice.points
    ry = lattice.radius
    reports = []
    for R, u_R, coef in zip(radii, fields, coefs):
        model = c / ry + np.einsum("...i,i->...", y, dipole) / (R * ry ** 3)
        res = u_R - model
        grad_model = -c * y / ry[..., None] ** 3 + (dipole / ry[..., None] ** 3
                                                    - 3.0 * np.einsum("...i,i->...", y, dipole)[..., None] * y / ry[..., None] ** 5) / R
        grad_res = rescaled_gradient(solution, R, lattice) - grad_model
        w1p = (lattice.mean(np.abs(res) ** p) + lattice.mean(np.linalg.norm(grad_res, axis=-1) ** p)) ** (1.0 / p)
        reports.append(AnnulusReport(
            R=R,
            c_R=float(coef[0]),
            d_R=np.asarray(coef[1:], dtype=float),
            residual_lq={float(q): _lq(lattice, res, q) for q in q_values},
            residual_w1p=float(w1p),
        ))
    _log.info("fit_expansion: c=%.8f dipole=%s cond=%.3g", c, np.array2string(dipole, precision=6), cond)
    return ExpansionFit(c=c, dipole=dipole, reports=reports, cond=cond)


def admissible_radii(solution: GreensSolution, lattice: Optional[AnnulusLattice] = None,
                     r_asymptotic: float = ASYMPTOTIC_R_MIN) -> List[float]:
    """rescale 가 허용되고 annulus 안쪽 반경이 r_asymptotic 이상인 dyadic R."""
    lattice = lattice or default_lattice()
    spec = solution.grid.spec
    out = []
    k = math.ceil(math.log2(max(8.0 * spec.r_min, r_asymptotic / lattice.r_in)))
    while 2.0 ** k * lattice.r_out <= spec.r_max / 2.0:
        R = 2.0 ** k
        if R * lattice.r_in >= solution.grid.r_centers[1]:
            out.append(R)
        k += 1
    return out


# ── Newtonian potential ───────────────────────────────────

@dataclass(frozen=True, eq=False)
class PotentialField:
    sources: np.ndarray     # (N, 3)
    X: np.ndarray           # (N, 3)
    volumes: np.ndarray     # (N,)
    softening: np.ndarray   # (N,) 등부피 반지름
    xbar: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def empty(self) -> bool:
        return self.sources.shape[0] == 0

    def _reduce(self, points: np.ndarray, absolute: bool) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        flat = pts.reshape(-1, 3)
        out = np.zeros(flat.shape[0])
        if self.empty:
            return out.reshape(pts.shape[:-1])
        XV = self.X * self.volumes[:, None]
        XV_abs = np.linalg.norm(self.X, axis=1) * self.volumes
        for start in range(0, flat.shape[0], _TARGET_CHUNK):
            x = flat[start:start + _TARGET_CHUNK]
            d = x[:, None, :] - self.sources[None, :, :]
            dist = np.linalg.norm(d, axis=-1)
            denom = np.maximum(dist, self.softening[None, :]) ** 3
            if absolute:
                out[start:start + x.shape[0]] = np.sum(dist * XV_abs[None, :] / denom, axis=1)
            else:
                out[start:start + x.shape[0]] = np.einsum("mnk,nk->m", d / denom[..., None], XV)
        return (out / (4.0 * math.pi)).reshape(pts.shape[:-1])

    def sample(self, points: np.ndarray) -> np.ndarray:
        """w(x) = (1/4π) Σ ⟨x−y, X(y)⟩ V / max(|x−y|, a)³."""
        return self._reduce(points, absolute=False)

    def domination_bound(self, points: np.ndarray) -> np.ndarray:
        """(1/4π) Σ |X(y)|·|x−y| V / max(|x−y|, a)³ ≥ |w(x)|."""
        return self._reduce(points, absolute=True)


def potential_from_sources(positions: np.ndarray, X: np.ndarray, volumes: np.ndarray) -> PotentialField:
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    X = np.asarray(X, dtype=float).reshape(-1, 3)
    volumes = np.asarray(volumes, dtype=float).reshape(-1)
    keep = np.linalg.norm(X, axis=1) > 0
    positions, X, volumes = positions[keep], X[keep], volumes[keep]
    softening = (3.0 * volumes / (4.0 * math.pi)) ** (1.0 / 3.0)
    xbar = np.sum(X * volumes[:, None], axis=0) / (4.0 * math.pi) if len(volumes) else np.zeros(3)
    return PotentialField(sources=positions, X=X, volumes=volumes, softening=softening, xbar=xbar)


def newtonian_potential(solution: GreensSolution) -> PotentialField:
    grid = solution.grid
    pot = potential_from_sources(grid.centers(), x_field(solution), grid.volumes)
    _log.info("newtonian_potential: %d source cells, xbar=%s", pot.sources.shape[0],
              np.array2string(pot.xbar, precision=6))
    return pot


# ── annulus 오차 / 조화 나머지 ────────────────────────────

_AN_LATTICE: Optional[AnnulusLattice] = None


def wide_annulus_lattice() -> AnnulusLattice:
    """An(1) = [1/8, 8] 표본 (R 배로 늘려 쓴다)."""
    global _AN_LATTICE
    if _AN_LATTICE is None:
        _AN_LATTICE = AnnulusLattice.build(n_r=16, n_theta=8, n_phi=16, r_in=0.125, r_out=8.0)
    return _AN_LATTICE


def annulus_error(potential: PotentialField, radii: Sequence[float], q: float = 1.0,
                  lattice: Optional[AnnulusLattice] = None) -> pd.DataFrame:
    """(mean_{An(R)} |R²(w − ⟨x,X̄⟩/|x|³)|^q)^{1/q}."""
    if not (1.0 <= q < 1.5):
        raise OutOfRange("q 는 [1, 3/2) 안이어야 합니다", q=q)
    lattice = lattice or wide_annulus_lattice()
    rows = []
    for R in radii:
        x = R * lattice.points
        r = np.linalg.norm(x, axis=-1)
        dip = np.einsum("...i,i->...", x, potential.xbar) / r ** 3
        err = R * R * (potential.sample(x) - dip)
        rows.append({"R": float(R), "error": _lq(lattice, err, q)})
    return pd.DataFrame(rows, columns=["R", "error"])


def decreasing_trend(values: Sequence[float], allowed_inversions: int = 1) -> bool:
    vals = list(values)
    if not vals or max(abs(v) for v in vals) == 0.0:
        return True
    inversions = sum(1 for a, b in zip(vals, vals[1:]) if b >= a)
    return inversions <= allowed_inversions and vals[-1] < vals[0]


@dataclass(frozen=True)
class RemainderReport:
    table: pd.DataFrame     # R, c_h, mean_abs_remainder
    b: np.ndarray
    xbar: np.ndarray
    closure_defect: Optional[float] = None


def harmonic_remainder(solution: GreensSolution, potential: PotentialField, radii: Sequence[float],
                       lattice: Optional[AnnulusLattice] = None,
                       dipole: Optional[np.ndarray] = None) -> RemainderReport:
    """h = u − w, R 별 c_h 와 평균 |h − c/|x||, b 는 dipole 절편 회귀."""
    lattice = lattice or default_lattice()
    radii = sorted(float(R) for R in radii)
    rows, per_scale = [], []
    for R in radii:
        x = R * lattice.points
        h_R = R * (sample_u(solution, x) - potential.sample(x))
        coef, _ = _weighted_lstsq(lattice, R, h_R)
        per_scale.append(coef[1:])
        rem = (h_R - coef[0] / lattice.radius) / R
        rows.append({"R": R, "c_h": float(coef[0]), "mean_abs_remainder": lattice.mean(np.abs(rem))})
    b = _dipole_intercept(radii, np.array(per_scale))
    defect = None
    if dipole is not None:
        defect = float(np.linalg.norm(np.asarray(dipole) - (b + potential.xbar)))
    return RemainderReport(
        table=pd.DataFrame(rows, columns=["R", "c_h", "mean_abs_remainder"]),
        b=b,
        xbar=potential.xbar,
        closure_defect=defect,
    )
