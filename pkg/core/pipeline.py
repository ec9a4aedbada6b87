# core/pipeline.py
"""run 디렉터리 단위 파이프라인 + 파라미터 sweep.

stage 순서: solve → hypotheses → functionals → asymptotics.
각 stage 실패는 manifest 에 기록되고 뒤 stage 는 건너뛴다 (solve 실패 시).
"""
import hashlib
import json
import logging
import math
import queue
import threading
import time
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from core.analysis import failure_record
from core.asymptotic_expansion import (
    AnnulusLattice,
    admissible_radii,
    annulus_error,
    decreasing_trend,
    fit_expansion,
    harmonic_remainder,
    newtonian_potential,
)
from core.config import TOOL_VERSION, RunConfig, validate_config
from core.elliptic_green import (
    GreensSolution,
    build_grid,
    hypothesis_checks,
    oracle_error,
    radial_oracle,
    save_checkpoint,
    shell_fluxes,
    solve_green,
)
from core.errors import EXIT_NUMERICAL, EXIT_OK, ConfigError, LabError
from core.levelset_geometry import ac_gradient_check, curvature_terms
from core.mass_functionals import (
    E_of,
    F_series,
    aD_series,
    bump_profile,
    mass_calibration_constant,
    rigidity_diagnostic,
)
from core.metric_models import decay_report
from core.reports import file_inventory, write_csv, write_json
from core.run_index import list_runs, record_run_finish, record_run_start

_log = logging.getLogger(__name__)

STAGES = ("solve", "hypotheses", "functionals", "asymptotics")
COMMAND_STAGES = {
    "solve": ("solve", "hypotheses"),
    "functionals": ("solve", "functionals"),
    "asymptotics": ("solve", "asymptotics"),
    "run": STAGES,
}
SWEEP_AXES = ("m", "epsilon", "tau", "resolution")

# 고정 열 순서
COLUMNS = {
    "shell_fluxes.csv": ["radius", "flux"],
    "hypotheses.csv": ["R", "energy_product", "L1_X"],
    "decay.csv": ["radius", "sup_deviation", "scaled"],
    "F_series.csv": ["t", "F", "monotone_flag"],
    "curvature_terms.csv": ["t", "int_RSigma", "int_grad_log", "int_A_ring", "int_R",
                            "int_sphere_defect", "F_prime", "smear_width", "connected", "experimental"],
    "D_series.csv": ["a", "D", "aD", "monotone_flag"],
    "E_identity.csv": ["a", "s", "quadrature", "flux_form", "rel_err"],
    "ac_gradient.csv": ["t", "lhs", "rhs", "rel_err"],
    "expansion.csv": ["R", "c_R", "d_x", "d_y", "d_z", "L1", "L1.25", "W1p"],
    "annulus_error.csv": ["R", "q", "error"],
    "remainder.csv": ["R", "c_h", "mean_abs_remainder"],
}
REMAINDER_LATTICE = dict(n_r=12, n_theta=8, n_phi=16)


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat().replace("+00:00", "Z")


@dataclass
class RunManifest:
    run_id: str
    config_hash: str
    tool_version: str = TOOL_VERSION
    started_at: str = ""
    finished_at: str = ""
    stages: List[dict] = field(default_factory=list)
    files: List[dict] = field(default_factory=list)
    summary: Dict[str, dict] = field(default_factory=dict)
    run_dir: str = ""

    @property
    def failed(self) -> List[dict]:
        return [s for s in self.stages if s["status"] == "failed"]

    @property
    def status(self) -> str:
        return "failed" if self.failed else "completed"

    @property
    def exit_code(self) -> int:
        codes = [s.get("exit_code", EXIT_NUMERICAL) for s in self.failed]
        return max(codes) if codes else EXIT_OK

    def verdicts(self) -> dict:
        out = {}
        for stage in self.summary.values():
            out.update(stage.get("verdicts", {}))
        return out

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "status": self.status,
            "stages": self.stages,
            "files": self.files,
            "summary": self.summary,
            "verdicts": self.verdicts(),
        }


# ── stage 구현 ────────────────────────────────────────────

class _RunContext:
    def __init__(self, cfg: RunConfig, run_dir: Path):
        self.cfg = cfg
        self.run_dir = run_dir
        self.model = cfg.model.build()
        self.solution: Optional[GreensSolution] = None
        self.written: List[str] = []

    def csv(self, name: str, df: pd.DataFrame) -> None:
        write_csv(self.run_dir / name, df, COLUMNS[name])
        self.written.append(name)

    def json(self, name: str, obj) -> None:
        write_json(self.run_dir / name, obj)
        self.written.append(name)


def _stage_solve(ctx: _RunContext) -> dict:
    cfg = ctx.cfg
    grid = build_grid(cfg.grid.spec())
    if cfg.solver.oracle and ctx.model.is_radial:
        solution = radial_oracle(ctx.model, grid)
    else:
        if cfg.solver.oracle:
            _log.warning("solver.oracle 요청이지만 %s 는 radial 이 아니라 격자 풀이를 씁니다", ctx.model.label())
        solution = solve_green(grid, ctx.model, cfg.solver.settings())
        ctx.csv("shell_fluxes.csv", shell_fluxes(solution))
    ctx.solution = solution
    save_checkpoint(solution, ctx.run_dir / "solution.npz")
    ctx.written.append("solution.npz")

    summary = {
        "provenance": solution.provenance,
        "iterations": solution.iterations,
        "residual": solution.residual,
        "normalization": solution.normalization,
        "flux_constant": solution.flux_constant,
        "model": ctx.model.to_dict(),
    }
    if ctx.model.is_radial and not solution.is_oracle:
        summary["oracle_linf"] = oracle_error(solution)
    return summary


def _stage_hypotheses(ctx: _RunContext) -> dict:
    report = hypothesis_checks(ctx.solution)
    ctx.csv("hypotheses.csv", report.table)
    spec = ctx.cfg.grid.spec()
    radii = [2.0 ** k for k in range(0, int(math.log2(spec.r_max / 8.0)) + 1)]
    ctx.csv("decay.csv", decay_report(ctx.model, radii))
    return {
        **report.summary(),
        "ellipticity": ctx.model.ellipticity(spec.r_min),
        "hypothesis_failure_model": ctx.model.kind == "decay_perturbation",
    }


def _stage_functionals(ctx: _RunContext) -> dict:
    fcfg = ctx.cfg.functional
    solution = ctx.solution
    smear = fcfg.smear()
    psi = bump_profile(fcfg.s0)

    f_series = F_series(solution, fcfg.t_grid, smear, rel_tol=fcfg.monotone_rel_tol,
                        floor_rel_tol=fcfg.identity_rel_tol)
    ctx.csv("F_series.csv", f_series.f_table())
    terms = [curvature_terms(solution, t, smear) for t in fcfg.t_grid]
    ctx.csv("curvature_terms.csv", pd.DataFrame([asdict(t) for t in terms]))

    d_series = aD_series(solution, fcfg.a_grid, psi, smear, cross_check=fcfg.cross_check,
                         rel_tol=fcfg.monotone_rel_tol)
    ctx.csv("D_series.csv", d_series.d_table())

    a0 = float(fcfg.a_grid[0])
    e_rows = []
    for s in (0.25 * a0, 0.5 * a0, a0):
        rep = E_of(solution, a0, s, smear)
        scale = max(abs(rep.quadrature), abs(rep.flux_form), 1e-3 * 2.0 * math.pi / (a0 + s))
        e_rows.append({"a": a0, "s": s, "quadrature": rep.quadrature, "flux_form": rep.flux_form,
                       "rel_err": rep.discrepancy / scale})
    e_table = pd.DataFrame(e_rows)
    ctx.csv("E_identity.csv", e_table)

    ac = ac_gradient_check(solution, fcfg.t_grid, settings=smear)
    ctx.csv("ac_gradient.csv", ac)

    summary = {
        "psi": psi.to_dict(),
        "c_psi": psi.c_psi,
        "limit_aD": d_series.limit,
        "uncertainty": d_series.uncertainty,
        "E_identity_max_rel_err": float(e_table["rel_err"].max()),
        "ac_gradient_max_rel_err": float(ac["rel_err"].max()),
        "rigidity": rigidity_diagnostic(f_series, terms, fcfg.identity_rel_tol),
        "tolerance_note": "monotone/nonnegative verdicts use discrete tolerances, not exact inequalities",
        "monotone_tolerance": {"F": f_series.tolerance, "aD": d_series.tolerance},
        "verdicts": {
            "F_monotone": f_series.verdicts()["monotone"],
            "F_nonnegative": f_series.verdicts()["nonnegative"],
            "aD_monotone": d_series.verdicts()["monotone"],
            "D_nonnegative": d_series.verdicts()["nonnegative"],
        },
        "violations": [asdict(v) for v in f_series.violations + d_series.violations],
    }
    calibration = mass_calibration_constant(psi)
    summary["mass_calibration_constant"] = calibration
    summary["mass_estimate"] = d_series.limit / calibration
    mass = ctx.model.adm_mass_hint
    if mass:
        summary["mass_ratio"] = d_series.limit / mass
    return summary


def _stage_asymptotics(ctx: _RunContext) -> dict:
    acfg = ctx.cfg.asymptotics
    solution = ctx.solution
    radii = list(acfg.radii) or admissible_radii(solution)
    fit = fit_expansion(solution, radii, q_values=acfg.q_values, p=acfg.p)
    table = fit.table()
    ctx.csv("expansion.csv", table.reindex(columns=COLUMNS["expansion.csv"]))

    potential = newtonian_potential(solution)
    err_rows = []
    for q in acfg.q_values:
        err = annulus_error(potential, radii, q)
        err_rows += [{"R": r, "q": q, "error": e} for r, e in zip(err["R"], err["error"])]
    err_table = pd.DataFrame(err_rows)
    ctx.csv("annulus_error.csv", err_table)

    remainder = harmonic_remainder(solution, potential, radii,
                                   lattice=AnnulusLattice.build(**REMAINDER_LATTICE), dipole=fit.dipole)
    ctx.csv("remainder.csv", remainder.table)

    q0 = min(acfg.q_values)
    # τ > 0 인 모델에서만 감소를 기대한다
    expected = ctx.model.tau > 0
    decreasing = decreasing_trend(err_table[err_table["q"] == q0]["error"].tolist())
    summary = {
        "radii": radii,
        "c": fit.c,
        "dipole": fit.dipole,
        "xbar": potential.xbar,
        "b": remainder.b,
        "closure_defect": remainder.closure_defect,
        "cond": fit.cond,
        "verdicts": {
            "fitted_c": "PASS" if abs(fit.c - 1.0) <= 1e-2 else "FAIL",
            "annulus_error_decreasing": "PASS" if decreasing else ("FAIL" if expected else "NOT_EXPECTED"),
        },
    }
    ctx.json("asymptotics.json", summary)
    return summary


_STAGE_FUNCS = {
    "solve": _stage_solve,
    "hypotheses": _stage_hypotheses,
    "functionals": _stage_functionals,
    "asymptotics": _stage_asymptotics,
}


# ── run_pipeline ──────────────────────────────────────────

def run_pipeline(cfg: RunConfig, stages: Sequence[str] = STAGES, sweep_id: Optional[str] = None,
                 isolated: bool = False) -> RunManifest:
    """config 하나를 <out>/<run_id>/ 에서 실행. 단계 실패는 manifest 에 기록."""
    unknown = [s for s in stages if s not in _STAGE_FUNCS]
    if unknown:
        raise ConfigError("알 수 없는 stage", stages=unknown)
    if "solve" not in stages:
        raise ConfigError("solve stage 가 필요합니다", stages=list(stages))
    validate_config(cfg)
    if not cfg.asymptotics.enabled:
        stages = [s for s in stages if s != "asymptotics"]

    run_id = cfg.run_id()
    run_dir = Path(cfg.output.out_dir) / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    db_path = cfg.output.runs_db_path
    manifest = RunManifest(run_id=run_id, config_hash=cfg.config_hash(), started_at=_now_iso(),
                           run_dir=str(run_dir))
    record_run_start(db_path, run_id, manifest.config_hash, cfg.to_json(), sweep_id=sweep_id, isolated=isolated)
    write_json(run_dir / "config.json", cfg.to_dict())

    ctx = _RunContext(cfg, run_dir)
    ctx.written.append("config.json")
    blocked = False
    for stage in stages:
        if blocked:
            manifest.stages.append({"stage": stage, "status": "skipped"})
            continue
        t0 = time.time()
        _log.info("[%s] stage %s start", run_id, stage)
        try:
            summary = _STAGE_FUNCS[stage](ctx)
        except Exception as e:
            _log.warning("[%s] stage %s failed", run_id, stage, exc_info=True)
            rec = failure_record(stage, e, round(time.time() - t0, 3))
            rec["exit_code"] = e.exit_code if isinstance(e, LabError) else EXIT_NUMERICAL
            manifest.stages.append(rec)
            if stage == "solve":
                blocked = True
            continue
        manifest.summary[stage] = summary
        manifest.stages.append({"stage": stage, "status": "completed",
                                "elapsed_sec": round(time.time() - t0, 3)})
        _log.info("[%s] stage %s done (%.2fs)", run_id, stage, time.time() - t0)

    manifest.finished_at = _now_iso()
    manifest.files = file_inventory(run_dir, ctx.written)
    write_json(run_dir / "manifest.json", manifest.to_dict())
    record_run_finish(db_path, run_id, manifest.status, {
        "verdicts": manifest.verdicts(),
        "summary": manifest.summary,
        "exit_code": manifest.exit_code,
    }, isolated=isolated)
    return manifest


# ── sweep ─────────────────────────────────────────────────

def _apply_axis(cfg: RunConfig, axis: str, value: float) -> RunConfig:
    if axis == "resolution":
        factor = int(value)
        if factor < 1 or factor != value:
            raise ConfigError("resolution 값은 양의 정수 배율이어야 합니다", value=value)
        g = cfg.grid
        grid = replace(g, n_r=g.n_r * factor, n_theta=g.n_theta * factor, n_phi=g.n_phi * factor)
        return replace(cfg, grid=grid, name=f"{cfg.name or cfg.model.kind}-res{factor}")
    model = replace(cfg.model, **{axis: float(value)})
    return replace(cfg, model=model, name=f"{cfg.name or cfg.model.kind}-{axis}{value:g}")


def sweep_id_for(cfg: RunConfig, axis: str, values: Sequence[float]) -> str:
    raw = json.dumps({"base": cfg.config_hash(), "axis": axis, "values": list(values)}, sort_keys=True)
    return "sweep-" + hashlib.sha256(raw.encode("utf-8")).hexdigest()[:12]


def _sweep_row(axis: str, value: float, indexed: Optional[dict], error: Optional[str]) -> dict:
    """run index 의 한 행을 aggregate 행으로. 없으면 missing 으로 표시."""
    row = {"axis": axis, "value": value, "run_id": None, "status": "missing", "limit_aD": np.nan,
           "uncertainty": np.nan, "fitted_c": np.nan, "oracle_linf": np.nan, "exit_code": np.nan}
    if indexed is None:
        row["error"] = error
        return row
    payload = indexed.get("summary") or {}
    s = payload.get("summary") or {}

    def pick(stage, key):
        v = (s.get(stage) or {}).get(key)
        return np.nan if v is None else v

    row.update({
        "run_id": indexed["run_id"],
        "status": indexed["status"],
        "limit_aD": pick("functionals", "limit_aD"),
        "uncertainty": pick("functionals", "uncertainty"),
        "fitted_c": pick("asymptotics", "c"),
        "oracle_linf": pick("solve", "oracle_linf"),
        "exit_code": payload.get("exit_code", np.nan),
    })
    return row


def sweep(cfg: RunConfig, axis: str, values: Sequence[float], stages: Sequence[str] = STAGES,
          workers: Optional[int] = None) -> pd.DataFrame:
    """axis 값마다 run 하나. worker 스레드 + 결과 queue, 동시 실행 수는 semaphore 로 제한."""
    if axis not in SWEEP_AXES:
        raise ConfigError("sweep axis 는 m | epsilon | tau | resolution", axis=axis)
    values = [float(v) for v in values]
    if not values:
        raise ConfigError("sweep 값 목록이 비었습니다")
    members = [(v, _apply_axis(cfg, axis, v)) for v in values]
    for _, member in members:
        member.model.build()

    sid = sweep_id_for(cfg, axis, values)
    workers = max(1, int(workers or cfg.output.workers))
    gate = threading.BoundedSemaphore(workers)
    results_q: queue.Queue = queue.Queue()

    def _worker(idx: int, value: float, member: RunConfig):
        with gate:
            try:
                manifest = run_pipeline(member, stages, sweep_id=sid, isolated=True)
                results_q.put((idx, manifest.run_id, None))
            except Exception as e:
                _log.warning("sweep %s: %s=%g failed", sid, axis, value, exc_info=True)
                results_q.put((idx, None, f"{type(e).__name__}: {e}"))

    _log.info("sweep %s: %d runs on axis %s (workers=%d)", sid, len(members), axis, workers)
    threads = []
    for idx, (value, member) in enumerate(members):
        th = threading.Thread(target=_worker, args=(idx, value, member), daemon=True)
        th.start()
        threads.append(th)
    for th in threads:
        th.join()

    outcome: Dict[int, tuple] = {}
    while True:
        try:
            idx, run_id, error = results_q.get_nowait()
        except queue.Empty:
            break
        outcome[idx] = (run_id, error)

    indexed = {r["run_id"]: r for r in list_runs(cfg.output.runs_db_path, sweep_id=sid)}
    rows = []
    for idx, (value, _) in enumerate(members):
        run_id, error = outcome.get(idx, (None, "no result"))
        rows.append(_sweep_row(axis, value, indexed.get(run_id), error))

    table = pd.DataFrame(rows)
    if axis == "m":
        table["ratio"] = table["limit_aD"] / table["value"]
    columns = ["axis", "value", "run_id", "status", "exit_code", "limit_aD", "uncertainty",
               "fitted_c", "oracle_linf"] + (["ratio"] if axis == "m" else [])
    out = Path(cfg.output.out_dir) / f"{sid}.csv"
    write_csv(out, table, columns)
    _log.info("sweep %s aggregate → %s", sid, out)
    return table[columns]
