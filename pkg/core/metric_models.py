# core/metric_models.py
"""해석적 계량 모델: ℝ³ 위의 점근적 유클리드 3-계량 패밀리.

모든 내장 패밀리는 conformally flat(g = λ(x)·δ, λ = φ⁴)이다.
- Euclidean: φ ≡ 1
- ConformalRadial: φ(r) 방사형 프로파일 (schwarzschild / plummer)
- ConformalBump: φ = 1 + amplitude/√(|x−c|² + width²), −Δφ > 0
- DecayPerturbation: λ = 1 + ε·Y(x̂)·(1+r²)^{−(1+τ)/2}, 스칼라 곡률 부호 미정

점 입력은 (..., 3) 배열을 받고 (..., 3, 3) 텐서를 돌려준다 (벡터화).
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, asdict
from typing import ClassVar, Optional, Tuple

import numpy as np
import pandas as pd

from core.errors import NonPositiveDefinite, OutOfRange, UnsupportedModel

_log = logging.getLogger(__name__)

MODEL_KINDS = ["euclidean", "conformal_radial", "conformal_bump", "decay_perturbation"]
RADIAL_PROFILES = ["schwarzschild", "plummer"]
ANGULAR_PATTERNS = ["monopole", "dipole", "quadrupole"]

# 정육면체의 면·모서리·꼭짓점 방향 26개 (decay_report 각도 샘플)
_CUBE_DIRECTIONS = np.array(
    [(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1) if (i, j, k) != (0, 0, 0)],
    dtype=float,
)
_CUBE_DIRECTIONS /= np.linalg.norm(_CUBE_DIRECTIONS, axis=1, keepdims=True)

_FD_STEP = 1e-3


def _as_points(points) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    if p.shape[-1] != 3:
        raise ValueError(f"점 배열의 마지막 축은 3이어야 합니다: shape={p.shape}")
    return p


def _radius(p: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(p * p, axis=-1))


def fd_laplacian(fn, points, h: float = _FD_STEP) -> np.ndarray:
    """7-point 2차 정확도 유한차분 라플라시안. fn: (..., 3) -> (...)."""
    p = _as_points(points)
    center = fn(p)
    total = -6.0 * center
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = h
        total = total + fn(p + e) + fn(p - e)
    return total / (h * h)


# ── 모델 베이스 ───────────────────────────────────────────

class _ConformalMetric:
    """g = φ⁴·δ 공통 구현. 하위 클래스는 conformal_factor / laplacian_phi 를 제공."""

    kind: ClassVar[str] = ""
    singular_at_origin: ClassVar[bool] = False

    @property
    def is_radial(self) -> bool:
        return False

    @property
    def is_conformal(self) -> bool:
        return True

    def conformal_factor(self, points) -> np.ndarray:
        raise NotImplementedError

    def laplacian_phi(self, points) -> np.ndarray:
        return fd_laplacian(self.conformal_factor, points)

    def conformal_lambda(self, points) -> np.ndarray:
        return self.conformal_factor(points) ** 4

    def metric(self, points) -> np.ndarray:
        p = _as_points(points)
        if self.singular_at_origin and np.any(_radius(p) <= 0.0):
            raise OutOfRange(f"{self.kind} 계량은 원점에서 특이합니다")
        lam = self.conformal_lambda(p)
        return lam[..., None, None] * np.eye(3)

    def conductivity_scalar(self, points) -> np.ndarray:
        # g = λδ ⇒ a_ij = g^{ij}√|g| = λ^{-1}·λ^{3/2} = λ^{1/2} = φ²
        return self.conformal_factor(points) ** 2

    def ellipticity(self, r_min: float = 0.0) -> float:
        raise NotImplementedError

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind
        return d

    def model_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def label(self) -> str:
        return self.kind


@dataclass(frozen=True)
class Euclidean(_ConformalMetric):
    kind: ClassVar[str] = "euclidean"
    tau: float = math.inf
    adm_mass_hint: Optional[float] = 0.0

    @property
    def is_radial(self) -> bool:
        return True

    def conformal_factor(self, points) -> np.ndarray:
        p = _as_points(points)
        return np.ones(p.shape[:-1])

    def laplacian_phi(self, points) -> np.ndarray:
        p = _as_points(points)
        return np.zeros(p.shape[:-1])

    def ellipticity(self, r_min: float = 0.0) -> float:
        return 1.0


@dataclass(frozen=True)
class ConformalRadial(_ConformalMetric):
    """φ(r) 방사형 프로파일.

    schwarzschild: φ = 1 + m/(2r)  (등방 좌표, R = 0, τ 가정 위반: 1/r 감쇠)
    plummer:       φ = 1 + m/(2√(r² + w²))  (원점에서 매끄러움, R > 0)
    """
    kind: ClassVar[str] = "conformal_radial"
    profile: str = "schwarzschild"
    m: float = 1.0
    width: float = 1.0
    tau: float = 0.0

    def __post_init__(self):
        if self.profile not in RADIAL_PROFILES:
            raise UnsupportedModel(f"알 수 없는 방사형 프로파일: {self.profile}")
        if self.profile == "schwarzschild" and self.m < 0:
            raise NonPositiveDefinite("m < 0 이면 φ = 1 + m/(2r)가 0을 지납니다", m=self.m)
        if self.profile == "plummer":
            if self.width <= 0:
                raise NonPositiveDefinite("plummer width는 양수여야 합니다", width=self.width)
            if 1.0 + self.m / (2.0 * self.width) <= 0:
                raise NonPositiveDefinite("φ가 원점에서 양수가 아닙니다", m=self.m, width=self.width)

    @property
    def singular_at_origin(self) -> bool:  # type: ignore[override]
        return self.profile == "schwarzschild" and self.m != 0

    @property
    def is_radial(self) -> bool:
        return True

    @property
    def adm_mass_hint(self) -> float:
        return self.m

    def phi_of_r(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.profile == "schwarzschild":
            return 1.0 + self.m / (2.0 * r)
        return 1.0 + self.m / (2.0 * np.sqrt(r * r + self.width ** 2))

    def dphi_dr(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.profile == "schwarzschild":
            return -self.m / (2.0 * r * r)
        return -self.m * r / (2.0 * (r * r + self.width ** 2) ** 1.5)

    def conformal_factor(self, points) -> np.ndarray:
        return self.phi_of_r(_radius(_as_points(points)))

    def laplacian_phi(self, points) -> np.ndarray:
        r = _radius(_as_points(points))
        if self.profile == "schwarzschild":
            return np.zeros_like(r)
        w2 = self.width ** 2
        return -(self.m / 2.0) * 3.0 * w2 / (r * r + w2) ** 2.5

    def ellipticity(self, r_min: float = 0.0) -> float:
        if self.profile == "schwarzschild" and r_min <= 0 and self.m > 0:
            return math.inf
        # φ 는 r 에 대해 단조, 극값은 r_min(또는 원점)과 ∞(φ=1)
        phi_edge = float(self.phi_of_r(max(r_min, 0.0))) if r_min > 0 or self.profile == "plummer" else 1.0
        return max(phi_edge ** 2, 1.0 / phi_edge ** 2)

    def label(self) -> str:
        return f"{self.profile}(m={self.m:g})"


@dataclass(frozen=True)
class ConformalBump(_ConformalMetric):
    """중심 c 에 놓인 Plummer형 bump. ADM 질량 = 2·amplitude."""
    kind: ClassVar[str] = "conformal_bump"
    center: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    amplitude: float = 0.25
    width: float = 0.5
    tau: float = 0.0

    def __post_init__(self):
        if self.width <= 0:
            raise NonPositiveDefinite("bump width는 양수여야 합니다", width=self.width)
        if 1.0 + self.amplitude / self.width <= 0:
            raise NonPositiveDefinite("bump 중심에서 φ가 양수가 아닙니다", amplitude=self.amplitude)
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def adm_mass_hint(self) -> float:
        return 2.0 * self.amplitude

    def _rho2(self, p: np.ndarray) -> np.ndarray:
        d = p - np.asarray(self.center)
        return np.sum(d * d, axis=-1)

    def conformal_factor(self, points) -> np.ndarray:
        p = _as_points(points)
        return 1.0 + self.amplitude / np.sqrt(self._rho2(p) + self.width ** 2)

    def laplacian_phi(self, points) -> np.ndarray:
        p = _as_points(points)
        w2 = self.width ** 2
        return -self.amplitude * 3.0 * w2 / (self._rho2(p) + w2) ** 2.5

    def ellipticity(self, r_min: float = 0.0) -> float:
        phi_max = 1.0 + max(self.amplitude, 0.0) / self.width
        phi_min = 1.0 + min(self.amplitude, 0.0) / self.width
        return max(phi_max ** 2, 1.0 / phi_min ** 2)

    def label(self) -> str:
        return f"bump(amp={self.amplitude:g}, c={list(self.center)})"


@dataclass(frozen=True)
class DecayPerturbation(_ConformalMetric):
    """g = (1 + ε·Y·(1+r²)^{−(1+τ)/2})·δ. |g − δ| ≤ ε·r^{−1−τ}.

    스칼라 곡률은 부호가 정해지지 않는다 (가정 위반 경로 시연용).
    """
    kind: ClassVar[str] = "decay_perturbation"
    epsilon: float = 0.2
    tau: float = 0.5
    pattern: str = "quadrupole"

    def __post_init__(self):
        if self.pattern not in ANGULAR_PATTERNS:
            raise UnsupportedModel(f"알 수 없는 각도 패턴: {self.pattern}")
        if self.tau <= 0:
            raise UnsupportedModel("DecayPerturbation 은 τ > 0 이어야 합니다", tau=self.tau)
        if abs(self.epsilon) >= 1.0:
            raise NonPositiveDefinite("|ε| ≥ 1 이면 g가 퇴화할 수 있습니다", epsilon=self.epsilon)

    @property
    def adm_mass_hint(self) -> Optional[float]:
        return 0.0

    def _pattern(self, p: np.ndarray) -> np.ndarray:
        # x/√(r²+1): 원점에서도 매끄럽고 |·| < 1
        zs = p[..., 2] / np.sqrt(np.sum(p * p, axis=-1) + 1.0)
        if self.pattern == "monopole":
            return np.ones(p.shape[:-1])
        if self.pattern == "dipole":
            return zs
        return 0.5 * (3.0 * zs * zs - 1.0)

    def conformal_lambda(self, points) -> np.ndarray:
        p = _as_points(points)
        r2 = np.sum(p * p, axis=-1)
        return 1.0 + self.epsilon * self._pattern(p) * (1.0 + r2) ** (-(1.0 + self.tau) / 2.0)

    def conformal_factor(self, points) -> np.ndarray:
        return self.conformal_lambda(points) ** 0.25

    def ellipticity(self, r_min: float = 0.0) -> float:
        e = abs(self.epsilon)
        return max(math.sqrt(1.0 + e), 1.0 / math.sqrt(1.0 - e))

    def label(self) -> str:
        return f"decay(eps={self.epsilon:g}, tau={self.tau:g}, {self.pattern})"


MetricModel = _ConformalMetric


# ── 팩토리 ────────────────────────────────────────────────

def build_model(kind: str, **params) -> MetricModel:
    """설정 섹션(key=value)에서 모델 생성. 모르는 키는 무시한다."""
    kind = (kind or "").strip().lower()
    if kind == "euclidean":
        return Euclidean()
    if kind == "conformal_radial":
        return ConformalRadial(
            profile=str(params.get("profile", "schwarzschild")),
            m=float(params.get("m", 1.0)),
            width=float(params.get("width", 1.0)),
        )
    if kind == "conformal_bump":
        center = params.get("center", (0.0, 0.0, 1.0))
        return ConformalBump(
            center=tuple(float(c) for c in center),
            amplitude=float(params.get("amplitude", 0.25)),
            width=float(params.get("width", 0.5)),
        )
    if kind == "decay_perturbation":
        return DecayPerturbation(
            epsilon=float(params.get("epsilon", 0.2)),
            tau=float(params.get("tau", 0.5)),
            pattern=str(params.get("pattern", "quadrupole")),
        )
    raise UnsupportedModel(f"알 수 없는 모델 종류: {kind!r} (허용: {', '.join(MODEL_KINDS)})")


# ── 연산 ──────────────────────────────────────────────────

@dataclass(frozen=True)
class ConductivityField:
    A: np.ndarray
    B: np.ndarray


def metric_field(model: MetricModel, points) -> np.ndarray:
    g = model.metric(points)
    return 0.5 * (g + np.swapaxes(g, -1, -2))


def eval_metric(model: MetricModel, point) -> np.ndarray:
    g = metric_field(model, np.asarray(point, dtype=float).reshape(3))
    evals = np.linalg.eigvalsh(g)
    if evals[0] <= 0:
        raise NonPositiveDefinite("계량 텐서가 양의 정부호가 아닙니다", point=list(map(float, point)))
    return g


def conductivity_field(model: MetricModel, points) -> ConductivityField:
    """a_ij = g^{ij}√|g|, B = I − A (일반 텐서 공식)."""
    g = metric_field(model, points)
    det = np.linalg.det(g)
    if np.any(det <= 0):
        raise NonPositiveDefinite("det g ≤ 0 인 점이 있습니다")
    A = np.linalg.inv(g) * np.sqrt(det)[..., None, None]
    A = 0.5 * (A + np.swapaxes(A, -1, -2))
    return ConductivityField(A=A, B=np.eye(3) - A)


def conductivity(model: MetricModel, point) -> ConductivityField:
    eval_metric(model, point)
    return conductivity_field(model, np.asarray(point, dtype=float).reshape(3))


def scalar_curvature_field(model: MetricModel, points) -> np.ndarray:
    """R = −8 φ^{−5} Δφ (conformally flat 전용)."""
    if not getattr(model, "is_conformal", False):
        raise UnsupportedModel(f"{type(model).__name__}: 곡률 공식이 없습니다")
    p = _as_points(points)
    phi = model.conformal_factor(p)
    return -8.0 * phi ** -5 * model.laplacian_phi(p)


def scalar_curvature(model: MetricModel, point) -> float:
    return float(scalar_curvature_field(model, np.asarray(point, dtype=float).reshape(3)))


def decay_report(model: MetricModel, radii, tau: Optional[float] = None) -> pd.DataFrame:
    """반경별 sup_ω |g − δ|·|x|^{1+τ} (26방향 샘플, 스펙트럼 노름).

    tau 를 주지 않으면 모델의 τ 를 쓴다 (Euclidean 은 ∞ 이므로 0 을 쓴다).
    """
    exponent = model.tau if tau is None else tau
    if not math.isfinite(exponent):
        exponent = 0.0
    rows = []
    for R in radii:
        R = float(R)
        if R <= 0:
            raise OutOfRange("decay_report 반경은 양수여야 합니다", radius=R)
        g = metric_field(model, R * _CUBE_DIRECTIONS)
        dev = np.abs(np.linalg.eigvalsh(g - np.eye(3))).max(axis=-1)
        sup = float(dev.max())
        rows.append({"radius": R, "sup_deviation": sup, "scaled": sup * R ** (1.0 + exponent)})
    df = pd.DataFrame(rows, columns=["radius", "sup_deviation", "scaled"])
    if len(df):
        _log.info("decay_report %s: tau=%g, empirical constant=%.6g", model.label(), exponent, df["scaled"].max())
    return df
