# core/elliptic_green.py
"""로그-반경 구면 격자 위의 유한체적 ℒ = div(A∇·) 와 원점 극 Green 함수.

- 격자: 반경 방향 등비(log) 셀, θ 셀 중심(극점에 노드 없음), φ 주기
- 이산화: 셀 중심 two-point flux, 면 conductance = 반셀 저항의 직렬합(조화평균)
  반경 반셀 저항은 ζ = 1/r 중점 규칙 → A 가 상수이면 1/r 에 대해 정확
- 경계: 안쪽 r_min 은 flux 지정(Neumann), 바깥쪽은 r_max→∞ 외부 반경 저항
- 정규화: 모든 셸 flux 가 4π 가 되도록 u 를 상수배
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, cg, spilu

from core.errors import InvalidSpec, NoConvergence, UnsupportedModel
from core.metric_models import (
    ConformalRadial,
    Euclidean,
    MetricModel,
    build_model,
    conductivity_field,
)
from core.reports import read_npz, write_npz

_log = logging.getLogger(__name__)

FOUR_PI = 4.0 * math.pi
X_CUTOFF_RADIUS = 1.0 / 16.0
PROVENANCE_GRID = "GridSolve"
PROVENANCE_ORACLE = "RadialOracle"

_OUTER_GL_NODES = 8
_ORACLE_GL_NODES = 48


# ── 격자 ──────────────────────────────────────────────────

@dataclass(frozen=True)
class GridSpec:
    r_min: float = 1.0 / 32.0
    r_max: float = 1024.0
    n_r: int = 64
    n_theta: int = 16
    n_phi: int = 32

    def validate(self) -> None:
        if min(self.n_r, self.n_theta, self.n_phi) < 1:
            raise InvalidSpec("셀 개수는 모두 1 이상이어야 합니다", **asdict(self))
        if not (0.0 < self.r_min < self.r_max):
            raise InvalidSpec("0 < r_min < r_max 이어야 합니다", r_min=self.r_min, r_max=self.r_max)
        if self.n_phi % 2:
            raise InvalidSpec("n_phi 는 짝수여야 합니다 (극점 반사)", n_phi=self.n_phi)
        if self.r_min >= X_CUTOFF_RADIUS:
            raise InvalidSpec("r_min 은 1/16 보다 작아야 합니다", r_min=self.r_min)
        if self.r_max / self.r_min < 2.0 ** 10:
            raise InvalidSpec("r_max/r_min ≥ 2^10 이어야 합니다", ratio=self.r_max / self.r_min)

    def scaled(self, factor: int) -> "GridSpec":
        return GridSpec(self.r_min, self.r_max, self.n_r * factor, self.n_theta * factor, self.n_phi * factor)


@dataclass(frozen=True, eq=False)
class SphericalGrid:
    spec: GridSpec
    r_faces: np.ndarray
    r_centers: np.ndarray
    theta_faces: np.ndarray
    theta_centers: np.ndarray
    phi_faces: np.ndarray
    phi_centers: np.ndarray
    volumes: np.ndarray        # (n_r, n_θ, n_φ)
    solid_angles: np.ndarray   # (n_θ, n_φ)
    e_r: np.ndarray            # (n_θ, n_φ, 3)
    e_theta: np.ndarray
    e_phi: np.ndarray

    @property
    def shape(self):
        return (self.spec.n_r, self.spec.n_theta, self.spec.n_phi)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def log_ratio(self) -> float:
        return float(self.r_faces[1] / self.r_faces[0])

    @property
    def d_theta(self) -> float:
        return float(self.theta_faces[1] - self.theta_faces[0])

    @property
    def d_phi(self) -> float:
        return float(self.phi_faces[1] - self.phi_faces[0])

    def points(self, radii) -> np.ndarray:
        """(len(radii), n_θ, n_φ, 3) 직교좌표 점."""
        radii = np.asarray(radii, dtype=float)
        return radii[:, None, None, None] * self.e_r[None, :, :, :]

    def centers(self) -> np.ndarray:
        return self.points(self.r_centers)

    def shell_volume(self, r_a: float, r_b: float) -> float:
        """[r_a, r_b] 에 걸친 셀들의 부분 부피 합 (셀 경계와 무관하게 정확)."""
        w = self.radial_window_weights(r_a, r_b)
        return float(np.sum(w[:, None, None] * self.volumes))

    def radial_window_weights(self, r_a: float, r_b: float) -> np.ndarray:
        lo = np.clip(self.r_faces[:-1], r_a, r_b)
        hi = np.clip(self.r_faces[1:], r_a, r_b)
        full = self.r_faces[1:] ** 3 - self.r_faces[:-1] ** 3
        return (hi ** 3 - lo ** 3) / full


def build_grid(spec: GridSpec) -> SphericalGrid:
    spec.validate()
    r_faces = np.geomspace(spec.r_min, spec.r_max, spec.n_r + 1)
    if np.any(np.diff(r_faces) <= 0):
        raise InvalidSpec("반경 면이 단조 증가하지 않습니다")
    r_centers = np.sqrt(r_faces[:-1] * r_faces[1:])
    theta_faces = np.linspace(0.0, math.pi, spec.n_theta + 1)
    theta_centers = 0.5 * (theta_faces[:-1] + theta_faces[1:])
    phi_faces = np.linspace(0.0, 2.0 * math.pi, spec.n_phi + 1)
    phi_centers = 0.5 * (phi_faces[:-1] + phi_faces[1:])

    d_phi = phi_faces[1] - phi_faces[0]
    d_cos = np.cos(theta_faces[:-1]) - np.cos(theta_faces[1:])
    solid = np.repeat((d_cos * d_phi)[:, None], spec.n_phi, axis=1)
    radial = (r_faces[1:] ** 3 - r_faces[:-1] ** 3) / 3.0
    volumes = radial[:, None, None] * solid[None, :, :]

    th, ph = np.meshgrid(theta_centers, phi_centers, indexing="ij")
    st, ct, sp, cp = np.sin(th), np.cos(th), np.sin(ph), np.cos(ph)
    e_r = np.stack([st * cp, st * sp, ct], axis=-1)
    e_theta = np.stack([ct * cp, ct * sp, -st], axis=-1)
    e_phi = np.stack([-sp, cp, np.zeros_like(sp)], axis=-1)

    return SphericalGrid(
        spec=spec,
        r_faces=r_faces,
        r_centers=r_centers,
        theta_faces=theta_faces,
        theta_centers=theta_centers,
        phi_faces=phi_faces,
        phi_centers=phi_centers,
        volumes=volumes,
        solid_angles=solid,
        e_r=e_r,
        e_theta=e_theta,
        e_phi=e_phi,
    )


# ── 연산자 조립 ───────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """K = −ℒ (대칭 양반정부호 stiffness) + 경계 자료.

    K 는 내부 면 conductance 만 포함한다 (행 합 0). 바깥 closure 는 outer_conductance.
    """
    grid: SphericalGrid
    stiffness: sparse.csr_matrix
    radial_conductance: np.ndarray   # (n_r−1, n_θ, n_φ)
    outer_conductance: np.ndarray    # (n_θ, n_φ)
    inner_flux: np.ndarray           # (n_θ, n_φ): 1/r 의 A-flux

    @property
    def laplacian(self) -> sparse.csr_matrix:
        return -self.stiffness

    def closed_matrix(self) -> sparse.csr_matrix:
        n_ang = self.grid.spec.n_theta * self.grid.spec.n_phi
        diag = np.zeros(self.grid.n_cells)
        diag[-n_ang:] = self.outer_conductance.ravel()
        return (self.stiffness + sparse.diags(diag)).tocsr()

    def inner_source(self) -> np.ndarray:
        n_ang = self.grid.spec.n_theta * self.grid.spec.n_phi
        b = np.zeros(self.grid.n_cells)
        b[:n_ang] = self.inner_flux.ravel()
        return b


def _normal_component(model: MetricModel, points: np.ndarray, normals: np.ndarray) -> np.ndarray:
    A = conductivity_field(model, points).A
    return np.einsum("...i,...ij,...j->...", normals, A, normals)


def _log_half_tan(theta: np.ndarray) -> np.ndarray:
    # d/dθ log tan(θ/2) = 1/sinθ
    return np.log(np.tan(0.5 * theta))


def _face_pairs(shape, axis: int, periodic: bool):
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    if periodic:
        return idx, np.roll(idx, -1, axis=axis)
    sl_a = [slice(None)] * 3
    sl_b = [slice(None)] * 3
    sl_a[axis] = slice(0, -1)
    sl_b[axis] = slice(1, None)
    return idx[tuple(sl_a)], idx[tuple(sl_b)]


def assemble_operator(grid: SphericalGrid, model: MetricModel) -> DiscreteOperator:
    spec = grid.spec
    n_r, n_t, n_p = grid.shape
    rf, rc = grid.r_faces, grid.r_centers
    omega = grid.solid_angles
    e_r = grid.e_r[None]

    # 반경: ζ = 1/r 중점에서 A_rr 평가 → 반셀 저항 Δζ/(Ω A)
    zf, zc = 1.0 / rf, 1.0 / rc
    r_in = 2.0 / (zf[:-1] + zc)
    r_out = 2.0 / (zc + zf[1:])
    a_in = _normal_component(model, grid.points(r_in), e_r)
    a_out = _normal_component(model, grid.points(r_out), e_r)
    res_in = (zf[:-1] - zc)[:, None, None] / (omega[None] * a_in)
    res_out = (zc - zf[1:])[:, None, None] / (omega[None] * a_out)
    t_r = 1.0 / (res_out[:-1] + res_in[1:])

    # 각도: 셀 중심 A 로 ∫dθ/sinθ 정확 적분
    centers = grid.centers()
    a_tt = _normal_component(model, centers, grid.e_theta[None])
    a_pp = _normal_component(model, centers, grid.e_phi[None])
    dr = (rf[1:] - rf[:-1])[:, None, None]
    tc = grid.theta_centers
    t_t = None
    if n_t > 1:
        # 내부 θ 면만 (극점 면은 sinθ = 0 → flux 0)
        tf_in = grid.theta_faces[1:-1]
        up = (_log_half_tan(tf_in) - _log_half_tan(tc[:-1]))[None, :, None]
        down = (_log_half_tan(tc[1:]) - _log_half_tan(tf_in))[None, :, None]
        res_up = up / (a_tt[:, :-1, :] * dr * grid.d_phi)
        res_down = down / (a_tt[:, 1:, :] * dr * grid.d_phi)
        t_t = 1.0 / (res_up + res_down)

    t_p = None
    if n_p > 1:
        l_theta = (grid.d_theta / np.sin(tc))[None, :, None]
        res_phi = (0.5 * grid.d_phi) / (a_pp * dr * l_theta)
        t_p = 1.0 / (res_phi + np.roll(res_phi, -1, axis=2))

    rows, cols, vals = [], [], []

    def add(a_idx, b_idx, t):
        a_idx, b_idx, t = a_idx.ravel(), b_idx.ravel(), t.ravel()
        rows.extend([a_idx, b_idx, a_idx, b_idx])
        cols.extend([a_idx, b_idx, b_idx, a_idx])
        vals.extend([t, t, -t, -t])

    if n_r > 1:
        add(*_face_pairs(grid.shape, 0, False), t_r)
    if t_t is not None:
        add(*_face_pairs(grid.shape, 1, False), t_t)
    if t_p is not None:
        add(*_face_pairs(grid.shape, 2, True), t_p)

    n = grid.n_cells
    K = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    K.sum_duplicates()

    # 바깥: 마지막 반셀 + ∫_0^{1/r_max} dζ / A_rr(1/ζ) (Gauss–Legendre)
    x, w = np.polynomial.legendre.leggauss(_OUTER_GL_NODES)
    z_end = zf[-1]
    zeta = 0.5 * z_end * (x + 1.0)
    a_ext = _normal_component(model, grid.points(1.0 / zeta), e_r)
    ext = 0.5 * z_end * np.tensordot(w, 1.0 / a_ext, axes=(0, 0))
    res_ext = ext / omega
    t_out = 1.0 / (res_out[-1] + res_ext)

    a_min = _normal_component(model, grid.points([spec.r_min]), e_r)[0]
    inner = a_min * omega

    _log.info(
        "assemble_operator: %s cells=%d nnz=%d", model.label(), n, K.nnz,
    )
    return DiscreteOperator(
        grid=grid,
        stiffness=K,
        radial_conductance=t_r,
        outer_conductance=t_out,
        inner_flux=inner,
    )


# ── 해 ───────────────────────────────────────────────────

@dataclass(frozen=True)
class SolverSettings:
    rtol: float = 1e-12
    maxiter: int = 20000
    preconditioner: str = "jacobi"   # jacobi | ilu | none
    normalize_flux: bool = True


@dataclass(frozen=True, eq=False)
class GreensSolution:
    grid: SphericalGrid
    model: MetricModel
    u: np.ndarray
    flux_constant: float
    provenance: str
    residual: float = 0.0
    iterations: int = 0
    normalization: float = 1.0
    elapsed_sec: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def is_oracle(self) -> bool:
        return self.provenance == PROVENANCE_ORACLE

    def header(self) -> dict:
        return {
            "grid": asdict(self.grid.spec),
            "model": self.model.to_dict(),
            "model_hash": self.model.model_hash(),
            "flux_constant": self.flux_constant,
            "residual": self.residual,
            "iterations": self.iterations,
            "normalization": self.normalization,
            "provenance": self.provenance,
        }


def _preconditioner(K: sparse.csr_matrix, kind: str) -> Optional[LinearOperator]:
    kind = (kind or "none").lower()
    if kind == "jacobi":
        inv_d = 1.0 / K.diagonal()
        return LinearOperator(K.shape, matvec=lambda x: inv_d * x)
    if kind == "ilu":
        ilu = spilu(K.tocsc(), drop_tol=1e-5, fill_factor=10.0)
        return LinearOperator(K.shape, matvec=ilu.solve)
    if kind == "none":
        return None
    raise InvalidSpec(f"알 수 없는 preconditioner: {kind}")


def solve_green(grid: SphericalGrid, model: MetricModel, settings: Optional[SolverSettings] = None,
                operator: Optional[DiscreteOperator] = None) -> GreensSolution:
    """u = 1/|x| + ũ, Kũ = q − K(1/|x|) 를 CG 로 풀고 flux 4π 로 정규화."""
    settings = settings or SolverSettings()
    t0 = time.time()
    op = operator or assemble_operator(grid, model)
    K = op.closed_matrix()
    q = op.inner_source()

    u0 = np.broadcast_to((1.0 / grid.r_centers)[:, None, None], grid.shape).ravel().copy()
    rhs = q - K @ u0
    q_norm = float(np.linalg.norm(q))

    iters = [0]

    def _count(_xk):
        iters[0] += 1

    M = _preconditioner(K, settings.preconditioner)
    u_tilde, info = cg(
        K, rhs, x0=np.zeros_like(rhs), rtol=settings.rtol, atol=settings.rtol * q_norm,
        maxiter=settings.maxiter, M=M, callback=_count,
    )
    u_raw = u0 + u_tilde
    residual = float(np.linalg.norm(K @ u_raw - q) / q_norm)
    if info > 0:
        raise NoConvergence(
            "CG 가 최대 반복 안에 수렴하지 않았습니다",
            iterations=iters[0], residual=residual, maxiter=settings.maxiter,
        )
    if info < 0:
        raise NoConvergence("CG 입력 오류", info=int(info))

    total_q = float(np.sum(op.inner_flux))
    norm = FOUR_PI / total_q if settings.normalize_flux else 1.0
    u = (norm * u_raw).reshape(grid.shape)

    elapsed = time.time() - t0
    _log.info(
        "solve_green: %s iters=%d residual=%.3e normalization=%.6g (%.2fs)",
        model.label(), iters[0], residual, norm, elapsed,
    )
    return GreensSolution(
        grid=grid,
        model=model,
        u=u,
        flux_constant=norm * total_q,
        provenance=PROVENANCE_GRID,
        residual=residual,
        iterations=iters[0],
        normalization=norm,
        elapsed_sec=elapsed,
        meta={"preconditioner": settings.preconditioner, "normalize_flux": settings.normalize_flux},
    )


def shell_fluxes(solution: GreensSolution, operator: Optional[DiscreteOperator] = None) -> pd.DataFrame:
    """모든 반경 면의 이산 flux. 안쪽 면은 지정값, 바깥 면은 외부 closure."""
    grid = solution.grid
    op = operator or assemble_operator(grid, solution.model)
    u = solution.u
    inner = solution.normalization * float(np.sum(op.inner_flux))
    interior = np.sum(op.radial_conductance * (u[:-1] - u[1:]), axis=(1, 2))
    outer = float(np.sum(op.outer_conductance * u[-1]))
    flux = np.concatenate([[inner], interior, [outer]])
    return pd.DataFrame({"radius": grid.r_faces, "flux": flux})


# ── 방사형 오라클 ─────────────────────────────────────────

def _radial_phi(model: MetricModel, r: np.ndarray) -> np.ndarray:
    if isinstance(model, Euclidean):
        return np.ones_like(r)
    return model.phi_of_r(r)


def _require_radial(model: MetricModel) -> None:
    if not isinstance(model, (Euclidean, ConformalRadial)):
        raise UnsupportedModel(f"방사형 오라클은 radial 모델만 지원합니다: {model.label()}")


def radial_oracle_u(model: MetricModel, r) -> np.ndarray:
    """u(r) = ∫_r^∞ ds/(s²φ²) = ∫_0^{1/r} dζ/φ(1/ζ)²."""
    _require_radial(model)
    r = np.asarray(r, dtype=float)
    if isinstance(model, Euclidean) or model.m == 0:
        return 1.0 / r
    if model.profile == "schwarzschild":
        return 1.0 / (r + 0.5 * model.m)
    x, w = np.polynomial.legendre.leggauss(_ORACLE_GL_NODES)
    z_end = 1.0 / r
    zeta = 0.5 * z_end[..., None] * (x + 1.0)
    phi = model.phi_of_r(1.0 / zeta)
    return 0.5 * z_end * np.sum(w / phi ** 2, axis=-1)


def radial_oracle_du(model: MetricModel, r) -> np.ndarray:
    _require_radial(model)
    r = np.asarray(r, dtype=float)
    return -1.0 / (r * r * _radial_phi(model, r) ** 2)


def radial_oracle(model: MetricModel, grid: SphericalGrid) -> GreensSolution:
    _require_radial(model)
    u_r = radial_oracle_u(model, grid.r_centers)
    u = np.broadcast_to(u_r[:, None, None], grid.shape).copy()
    return GreensSolution(
        grid=grid,
        model=model,
        u=u,
        flux_constant=FOUR_PI,
        provenance=PROVENANCE_ORACLE,
    )


def oracle_error(solution: GreensSolution, r_lo: float = 1.0, r_hi: Optional[float] = None) -> float:
    """[r_lo, r_hi] (기본 r_max/8) 셀에서 radial oracle 대비 상대 L∞ 오차."""
    grid = solution.grid
    r_hi = grid.spec.r_max / 8.0 if r_hi is None else r_hi
    rows = (grid.r_centers >= r_lo) & (grid.r_centers <= r_hi)
    if not np.any(rows):
        raise InvalidSpec("오차 구간에 셀이 없습니다", r_lo=r_lo, r_hi=r_hi)
    exact = radial_oracle_u(solution.model, grid.r_centers[rows])[:, None, None]
    return float(np.max(np.abs(solution.u[rows] / exact - 1.0)))


# ── 셀 기울기 (Euclidean 성분) ────────────────────────────

def cell_gradient(grid: SphericalGrid, field_values: np.ndarray) -> np.ndarray:
    """중심차분 ∇f 의 직교좌표 성분 (n_r, n_θ, n_φ, 3)."""
    f = np.asarray(field_values, dtype=float)
    r = grid.r_centers[:, None, None]
    d_r = np.gradient(f, grid.r_centers, axis=0, edge_order=2)
    if grid.spec.n_theta > 1:
        d_t = np.gradient(f, grid.theta_centers, axis=1) / r
    else:
        d_t = np.zeros_like(f)
    if grid.spec.n_phi > 2:
        sin_t = np.sin(grid.theta_centers)[None, :, None]
        d_p = (np.roll(f, -1, axis=2) - np.roll(f, 1, axis=2)) / (2.0 * grid.d_phi) / (r * sin_t)
    else:
        d_p = np.zeros_like(f)
    return (
        d_r[..., None] * grid.e_r[None]
        + d_t[..., None] * grid.e_theta[None]
        + d_p[..., None] * grid.e_phi[None]
    )


def x_field(solution: GreensSolution) -> np.ndarray:
    """X = B∇u (r ≥ 1/16), 0 (r < 1/16)."""
    grid = solution.grid
    grad = cell_gradient(grid, solution.u)
    B = conductivity_field(solution.model, grid.centers()).B
    X = np.einsum("...ij,...j->...i", B, grad)
    X[grid.r_centers < X_CUTOFF_RADIUS] = 0.0
    return X


# ── 가설 점검 ─────────────────────────────────────────────

@dataclass(frozen=True)
class HypothesisReport:
    table: pd.DataFrame            # R, energy_product, L1_X
    c_lower: float
    c_upper: float
    x_decay_exponent: Optional[float]
    energy_spread: float           # max/min of energy products

    def summary(self) -> dict:
        return {
            "c_lower": self.c_lower,
            "c_upper": self.c_upper,
            "x_decay_exponent": self.x_decay_exponent,
            "energy_spread": self.energy_spread,
            "n_annuli": int(len(self.table)),
        }


def dyadic_annuli(grid: SphericalGrid, margin: float = 8.0) -> list:
    """[R/8, 8R] 가 격자 안에 들어가는 2^k 반경들."""
    spec = grid.spec
    lo = math.ceil(math.log2(spec.r_min * margin))
    hi = math.floor(math.log2(spec.r_max / margin))
    return [2.0 ** k for k in range(lo, hi + 1)]


def hypothesis_checks(solution: GreensSolution) -> HypothesisReport:
    grid = solution.grid
    radii = dyadic_annuli(grid)
    if len(radii) < 6:
        raise InvalidSpec("dyadic annulus 가 6개 미만입니다", n=len(radii))

    grad = cell_gradient(grid, solution.u)
    grad_sq = np.sum(grad * grad, axis=-1)
    x_abs = np.linalg.norm(x_field(solution), axis=-1)

    rows = []
    for R in radii:
        w = grid.radial_window_weights(R / 8.0, 8.0 * R)[:, None, None] * grid.volumes
        rows.append({
            "R": R,
            "energy_product": R * float(np.sum(w * grad_sq)),
            "L1_X": float(np.sum(w * x_abs)),
        })
    table = pd.DataFrame(rows, columns=["R", "energy_product", "L1_X"])

    ru = grid.r_centers[:, None, None] * solution.u
    exponent = None
    positive = table[table["L1_X"] > 0]
    if len(positive) >= 3:
        slope, _ = np.polyfit(np.log(positive["R"]), np.log(positive["L1_X"]), 1)
        exponent = float(slope)

    energy = table["energy_product"].to_numpy()
    report = HypothesisReport(
        table=table,
        c_lower=float(ru.min()),
        c_upper=float(ru.max()),
        x_decay_exponent=exponent,
        energy_spread=float(energy.max() / energy.min()),
    )
    _log.info("hypothesis_checks: %s", report.summary())
    return report


# ── checkpoint ────────────────────────────────────────────

def save_checkpoint(solution: GreensSolution, path) -> None:
    grid = solution.grid
    write_npz(path, solution.header(), u=solution.u, r_centers=grid.r_centers,
              theta_centers=grid.theta_centers, phi_centers=grid.phi_centers)


def load_checkpoint(path) -> GreensSolution:
    header, arrays = read_npz(path)
    spec = GridSpec(**header["grid"])
    model_params = dict(header["model"])
    model = build_model(model_params.pop("kind"), **model_params)
    return GreensSolution(
        grid=build_grid(spec),
        model=model,
        u=arrays["u"],
        flux_constant=float(header["flux_constant"]),
        provenance=str(header["provenance"]),
        residual=float(header.get("residual") or 0.0),
        iterations=int(header.get("iterations") or 0),
        normalization=float(header.get("normalization") or 1.0),
    )
