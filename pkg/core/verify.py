# core/verify.py
"""수용 기준 묶음 (quick / full).

quick: Euclidean 항등식, 세제곱 부등식, dipole 방향 Fréchet 소거.
full:  quick + Schwarzschild oracle 동치, 단조성, 질량 비례, 항등식, 점근 전개, 선형화 수렴, 결정성.
"""
import filecmp
import logging
import math
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from core.asymptotic_expansion import (
    AnnulusLattice,
    admissible_radii,
    annulus_error,
    decreasing_trend,
    default_lattice,
    fit_expansion,
    harmonic_remainder,
    newtonian_potential,
)
from core.config import GridSection, ModelSection, RunConfig, SolverSection
from core.elliptic_green import (
    GreensSolution,
    GridSpec,
    SolverSettings,
    build_grid,
    oracle_error,
    radial_oracle,
    solve_green,
)
from core.errors import EXIT_NUMERICAL, EXIT_OK
from core.levelset_geometry import ac_gradient_check
from core.mass_functionals import (
    MONOTONE_REL_TOL,
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
)
from core.metric_models import (
    ConformalBump,
    ConformalRadial,
    DecayPerturbation,
    Euclidean,
    conductivity,
    eval_metric,
)
from core.pipeline import COLUMNS, run_pipeline

_log = logging.getLogger(__name__)

LEVELS = ("quick", "full")
QUICK_GRID = GridSpec(r_min=1.0 / 32.0, r_max=1024.0, n_r=64, n_theta=8, n_phi=16)
MASSES = (0.5, 1.0, 2.0)
A_GRID = (4.0, 8.0, 16.0, 32.0, 64.0)
T_LEVELS = (2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0, 24.0, 32.0, 64.0)
BUMP = dict(center=(0.0, 0.0, 1.0), amplitude=0.25, width=0.5)


@dataclass(frozen=True)
class Criterion:
    name: str
    passed: bool
    measured: Optional[float]
    tolerance: Optional[float]
    detail: str = ""


@dataclass
class VerifyReport:
    level: str
    criteria: List[Criterion] = field(default_factory=list)
    elapsed_sec: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)

    @property
    def exit_code(self) -> int:
        return EXIT_OK if self.passed else EXIT_NUMERICAL

    @property
    def failures(self) -> List[str]:
        return [c.name for c in self.criteria if not c.passed]

    def table(self) -> pd.DataFrame:
        return pd.DataFrame(
            [{"criterion": c.name, "status": "PASS" if c.passed else "FAIL", "measured": c.measured,
              "tolerance": c.tolerance, "detail": c.detail} for c in self.criteria],
            columns=["criterion", "status", "measured", "tolerance", "detail"],
        )


class _Solutions:
    """criterion 사이에서 재사용하는 해 캐시."""

    def __init__(self, spec: GridSpec, settings: SolverSettings):
        self.spec = spec
        self.settings = settings
        self._cache: Dict[tuple, GreensSolution] = {}

    def grid_solve(self, model, spec: Optional[GridSpec] = None) -> GreensSolution:
        spec = spec or self.spec
        key = ("grid", model.model_hash(), spec)
        if key not in self._cache:
            self._cache[key] = solve_green(build_grid(spec), model, self.settings)
        return self._cache[key]

    def oracle(self, model) -> GreensSolution:
        key = ("oracle", model.model_hash(), self.spec)
        if key not in self._cache:
            self._cache[key] = radial_oracle(model, build_grid(self.spec))
        return self._cache[key]


def _bounded(name: str, measured: float, tolerance: float, detail: str = "") -> Criterion:
    ok = bool(np.isfinite(measured) and measured <= tolerance)
    return Criterion(name, ok, float(measured), float(tolerance), detail)


# ── quick ─────────────────────────────────────────────────

def _euclidean_identities(sol: _Solutions) -> List[Criterion]:
    out = []
    g = eval_metric(Euclidean(), (1.0, 2.0, 3.0))
    field_ = conductivity(Euclidean(), (1.0, 2.0, 3.0))
    dev = max(float(np.max(np.abs(g - np.eye(3)))), float(np.max(np.abs(field_.B))))
    out.append(_bounded("euclidean metric = identity, B = 0", dev, 0.0))

    solution = sol.oracle(Euclidean())
    worst = max(abs(F_of_t(solution, t)) / (4.0 * math.pi * t) for t in T_LEVELS)
    out.append(_bounded("euclidean |F(t)| / 4πt", worst, 1e-2))

    psi = bump_profile()
    series = aD_series(solution, A_GRID[:4], psi, cross_check=False)
    worst = max(abs(x) for x in series.aD) / psi.c_psi
    out.append(_bounded("euclidean |aD(a)| / c_ψ", worst, 1e-3))
    return out


def _cubic_lemma(_sol: _Solutions) -> List[Criterion]:
    res = cubic_lemma_check(n_samples=1_000_000, seed=0)
    return [_bounded("cubic vector inequality ratio", res["max_ratio"], 4.0, f"n={res['n_samples']}")]


def _frechet_dipole(_sol: _Solutions) -> List[Criterion]:
    rng = np.random.default_rng(1)
    lat = default_lattice()
    y = lat.points
    r = lat.radius
    worst = 0.0
    for _ in range(20):
        d = rng.normal(size=3)
        v = np.einsum("...i,i->...", y, d) / r ** 3
        grad_v = d / r[..., None] ** 3 - 3.0 * np.einsum("...i,i->...", y, d)[..., None] * y / r[..., None] ** 5
        k = np.zeros(r.shape + (3, 3))
        worst = max(worst, abs(frechet_term(LinearizationInput(k=k, v=v, grad_v=grad_v))))
    return [_bounded("L(0, dipole) = 0", worst, 1e-8, "20 random d")]


# ── full ──────────────────────────────────────────────────

def _oracle_equivalence(sol: _Solutions) -> List[Criterion]:
    model = ConformalRadial(profile="schwarzschild", m=1.0)
    coarse = oracle_error(sol.grid_solve(model))
    fine = oracle_error(sol.grid_solve(model, sol.spec.scaled(2)))
    return [
        _bounded("schwarzschild oracle L∞ (relative)", coarse, 1e-2),
        Criterion("oracle error improvement under doubling", coarse / max(fine, 1e-300) >= 1.8,
                  coarse / max(fine, 1e-300), 1.8, f"coarse={coarse:.3e} fine={fine:.3e}"),
    ]


def _fitted_c(sol: _Solutions) -> List[Criterion]:
    solution = sol.grid_solve(ConformalRadial(profile="schwarzschild", m=1.0))
    fit = fit_expansion(solution, admissible_radii(solution))
    return [_bounded("fitted c = 1", abs(fit.c - 1.0), 1e-2, f"c={fit.c:.6f}")]


def _monotonicity(sol: _Solutions) -> List[Criterion]:
    out = []
    models = [ConformalRadial(profile="schwarzschild", m=m) for m in MASSES] + [ConformalBump(**BUMP)]
    for model in models:
        solution = sol.grid_solve(model)
        f = F_series(solution, T_LEVELS, rel_tol=MONOTONE_REL_TOL)
        d = aD_series(solution, A_GRID, rel_tol=MONOTONE_REL_TOL)
        ok = f.monotone_ok and d.monotone_ok and f.nonnegative_ok and d.nonnegative_ok
        drops = [v.drop for v in f.violations + d.violations]
        out.append(Criterion(f"monotonicity {model.label()}", ok, max(drops, default=0.0), max(f.tolerance, d.tolerance),
                             f"F levels={len(T_LEVELS)} aD points={len(A_GRID)}"))
    return out


def _mass_proportionality(sol: _Solutions) -> List[Criterion]:
    ratios = []
    for m in MASSES:
        series = aD_series(sol.grid_solve(ConformalRadial(profile="schwarzschild", m=m)), A_GRID, cross_check=False)
        ratios.append(series.limit / m)
    spread = (max(ratios) - min(ratios)) / abs(np.mean(ratios))
    calibration = mass_calibration_constant()
    mismatch = abs(np.mean(ratios) - calibration) / abs(calibration)
    return [
        _bounded("lim aD / m spread across m", spread, 2e-2, f"ratios={np.round(ratios, 6).tolist()}"),
        _bounded("lim aD / m vs radial calibration", mismatch, 2e-2, f"calibration={calibration:.6g}"),
    ]


def _identities(sol: _Solutions) -> List[Criterion]:
    out = []
    schw = sol.grid_solve(ConformalRadial(profile="schwarzschild", m=1.0))
    worst = 0.0
    for s in (1.0, 2.0, 4.0):
        rep = E_of(schw, 4.0, s)
        worst = max(worst, rep.discrepancy / max(abs(rep.quadrature), abs(rep.flux_form)))
    out.append(_bounded("E flux form vs F/t³ quadrature", worst, 1e-2, "a=4, s∈{1,2,4}"))
    for name, solution in (("euclidean", sol.oracle(Euclidean())), ("schwarzschild", schw)):
        table = ac_gradient_check(solution, T_LEVELS[:8])
        out.append(_bounded(f"ac-gradient identity {name}", float(table["rel_err"].max()), 2e-2))
    return out


def _asymptotics(sol: _Solutions) -> List[Criterion]:
    out = []
    decay = sol.grid_solve(DecayPerturbation(epsilon=0.2, tau=0.5, pattern="quadrupole"))
    radii = admissible_radii(decay)
    pot = newtonian_potential(decay)
    err = annulus_error(pot, radii[-4:], q=1.0)["error"].tolist()
    out.append(Criterion("annulus error decreasing (τ = 0.5)", decreasing_trend(err), err[-1], None,
                         f"errors={np.round(err, 8).tolist()}"))

    bump = sol.grid_solve(ConformalBump(**BUMP))
    radii = admissible_radii(bump)
    fit = fit_expansion(bump, radii)
    pot = newtonian_potential(bump)
    rem = harmonic_remainder(bump, pot, radii, lattice=AnnulusLattice.build(n_r=12, n_theta=8, n_phi=16),
                             dipole=fit.dipole)
    scale = max(float(np.linalg.norm(fit.dipole)), 1e-3)
    out.append(_bounded("closure |d − (b + X̄)| relative", rem.closure_defect / scale, 2e-2))
    return out


def _linearization(_sol: _Solutions) -> List[Criterion]:
    h0, rho, grad_rho = flat_pair()
    shape = rho.shape
    k = np.zeros(shape + (3, 3))
    k[..., 0, 0] = 1.0
    zero_v = np.zeros(shape)
    zero_g = np.zeros(shape + (3,))
    lin_k = frechet_term(LinearizationInput(k=k, v=zero_v, grad_v=zero_g))

    y = default_lattice().points
    r = default_lattice().radius
    bump = np.exp(-((r - 2.5) ** 2) / 0.1)
    v = bump
    grad_v = (-2.0 * (r - 2.5) / 0.1 * bump / r)[..., None] * y
    lin_v = frechet_term(LinearizationInput(k=np.zeros(shape + (3, 3)), v=v, grad_v=grad_v))

    base = d_functional(h0, rho, grad_rho)
    errs_k, errs_v = [], []
    for h in (1e-2, 5e-3):
        fd_k = (d_functional(h0 + h * k, rho, grad_rho) - base) / h
        fd_v = (d_functional(h0, rho + h * v, grad_rho + h * grad_v) - base) / h
        errs_k.append(abs(fd_k - lin_k))
        errs_v.append(abs(fd_v - lin_v))

    def first_order(errs):
        return errs[1] <= 0.6 * errs[0] or errs[0] <= 1e-10

    return [
        Criterion("Fréchet k-slot first-order convergence", first_order(errs_k), errs_k[1], None,
                  f"errors={errs_k}"),
        Criterion("Fréchet v-slot first-order convergence", first_order(errs_v), errs_v[1], None,
                  f"errors={errs_v}"),
    ]


def _determinism(sol: _Solutions) -> List[Criterion]:

    with tempfile.TemporaryDirectory(prefix="lab-verify-") as tmp:
        base = RunConfig(
            model=ModelSection(kind="conformal_radial", profile="schwarzschild", m=1.0),
            grid=GridSection(r_min=sol.spec.r_min, r_max=sol.spec.r_max, n_r=sol.spec.n_r,
                             n_theta=sol.spec.n_theta, n_phi=sol.spec.n_phi),
            solver=SolverSection(oracle=True),
        )
        first = run_pipeline(replace(base, output=replace(base.output, out_dir=str(Path(tmp) / "a"))))
        second = run_pipeline(replace(base, output=replace(base.output, out_dir=str(Path(tmp) / "b"))))
        names = [f["name"] for f in first.files if f["name"] in COLUMNS]
        same = all(filecmp.cmp(Path(first.run_dir) / n, Path(second.run_dir) / n, shallow=False) for n in names)
    return [Criterion("bit-identical CSVs across runs", same and bool(names), float(len(names)), None)]


_QUICK: List[Callable[[_Solutions], List[Criterion]]] = [_euclidean_identities, _cubic_lemma, _frechet_dipole]
_FULL: List[Callable[[_Solutions], List[Criterion]]] = [
    _oracle_equivalence, _fitted_c, _monotonicity, _mass_proportionality,
    _identities, _asymptotics, _linearization, _determinism,
]


def verify_suite(level: str = "quick", normalize_flux: bool = True,
                 spec: Optional[GridSpec] = None) -> VerifyReport:
    if level not in LEVELS:
        raise ValueError(f"level 은 quick | full: {level!r}")
    t0 = time.time()
    spec = spec or (QUICK_GRID if level == "quick" else GridSpec())
    sol = _Solutions(spec, SolverSettings(normalize_flux=normalize_flux))
    report = VerifyReport(level=level)
    checks = _QUICK + (_FULL if level == "full" else [])
    for check in checks:
        name = check.__name__.lstrip("_")
        try:
            report.criteria.extend(check(sol))
        except Exception as e:
            _log.warning("verify: %s raised", name, exc_info=True)
            report.criteria.append(Criterion(name, False, None, None, f"{type(e).__name__}: {e}"))
    report.elapsed_sec = time.time() - t0
    for c in report.criteria:
        _log.info("verify %-45s %s measured=%s tol=%s", c.name, "PASS" if c.passed else "FAIL",
                  c.measured, c.tolerance)
    return report
