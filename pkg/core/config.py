# core/config.py
import configparser
import hashlib
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Tuple

from core.elliptic_green import GridSpec, SolverSettings
from core.errors import ConfigError, LabError
from core.levelset_geometry import SmearSettings
from core.metric_models import MODEL_KINDS, MetricModel, build_model

_log = logging.getLogger(__name__)

REQUIRED_SECTIONS = ("model", "grid", "functional")
DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent.parent / "configs" / "default.ini"
TOOL_VERSION = "0.3.0"


@dataclass(frozen=True)
class ModelSection:
    kind: str = "euclidean"
    profile: str = "schwarzschild"
    m: float = 1.0
    width: float = 0.5
    center: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    amplitude: float = 0.25
    epsilon: float = 0.2
    tau: float = 0.5
    pattern: str = "quadrupole"

    def params(self) -> dict:
        """kind 별로 build_model 에 넘길 인자."""
        if self.kind == "euclidean":
            return {}
        if self.kind == "conformal_radial":
            return {"profile": self.profile, "m": self.m, "width": self.width}
        if self.kind == "conformal_bump":
            return {"center": tuple(self.center), "amplitude": self.amplitude, "width": self.width}
        if self.kind == "decay_perturbation":
            return {"epsilon": self.epsilon, "tau": self.tau, "pattern": self.pattern}
        return {}

    def build(self) -> MetricModel:
        return build_model(self.kind, **self.params())


@dataclass(frozen=True)
class GridSection:
    r_min: float = 1.0 / 32.0
    r_max: float = 1024.0
    n_r: int = 64
    n_theta: int = 16
    n_phi: int = 32

    def spec(self) -> GridSpec:
        return GridSpec(r_min=self.r_min, r_max=self.r_max, n_r=self.n_r,
                        n_theta=self.n_theta, n_phi=self.n_phi)


@dataclass(frozen=True)
class SolverSection:
    rtol: float = 1e-12
    maxiter: int = 20000
    preconditioner: str = "jacobi"
    normalize_flux: bool = True
    oracle: bool = False

    def settings(self) -> SolverSettings:
        return SolverSettings(rtol=self.rtol, maxiter=self.maxiter,
                              preconditioner=self.preconditioner, normalize_flux=self.normalize_flux)


@dataclass(frozen=True)
class FunctionalSection:
    s0: float = 0.05
    a_grid: Tuple[float, ...] = (4.0, 8.0, 16.0, 32.0, 64.0)
    t_grid: Tuple[float, ...] = (2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0, 24.0, 32.0, 48.0, 64.0)
    smear_cells: float = 1.0
    n_sub: int = 16
    richardson: bool = False
    cross_check: bool = True
    monotone_rel_tol: float = 1e-3
    identity_rel_tol: float = 1e-2

    def smear(self) -> SmearSettings:
        return SmearSettings(smear_cells=self.smear_cells, n_sub=self.n_sub, richardson=self.richardson)


@dataclass(frozen=True)
class AsymptoticsSection:
    enabled: bool = True
    radii: Tuple[float, ...] = ()      # 비어 있으면 격자에서 자동 선택
    q_values: Tuple[float, ...] = (1.0, 1.25)
    p: float = 4.0


@dataclass(frozen=True)
class OutputSection:
    out_dir: str = "runs"
    workers: int = 2
    runs_db: str = ""                  # 비어 있으면 <out_dir>/runs.db
    log_level: str = "INFO"

    @property
    def runs_db_path(self) -> str:
        return self.runs_db or str(Path(self.out_dir) / "runs.db")


@dataclass(frozen=True)
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    grid: GridSection = field(default_factory=GridSection)
    solver: SolverSection = field(default_factory=SolverSection)
    functional: FunctionalSection = field(default_factory=FunctionalSection)
    asymptotics: AsymptoticsSection = field(default_factory=AsymptoticsSection)
    output: OutputSection = field(default_factory=OutputSection)
    name: str = ""

    # ── 직렬화 ──

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        def section(klass, key):
            data = dict(raw.get(key) or {})
            for k, v in list(data.items()):
                if isinstance(v, list):
                    data[k] = tuple(v)
            return klass(**data)

        return cls(
            model=section(ModelSection, "model"),
            grid=section(GridSection, "grid"),
            solver=section(SolverSection, "solver"),
            functional=section(FunctionalSection, "functional"),
            asymptotics=section(AsymptoticsSection, "asymptotics"),
            output=section(OutputSection, "output"),
            name=str(raw.get("name", "")),
        )

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    def config_hash(self) -> str:
        """출력 위치(output)는 계산 결과에 영향이 없으므로 해시에서 뺀다."""
        d = self.to_dict()
        d.pop("output", None)
        d.pop("name", None)
        canonical = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def run_id(self) -> str:
        label = self.name or self.model.kind
        return f"{label}-{self.config_hash()[:12]}"

    def with_output(self, **changes) -> "RunConfig":
        return replace(self, output=replace(self.output, **changes))


# ── env / 파싱 helpers ──

def _get_env(key: str, default: str = "") -> str:
    return (os.getenv(key, default) or "").strip()


def _parse_float_list(v: str) -> Tuple[float, ...]:
    return tuple(float(x) for x in (v or "").replace(";", ",").split(",") if x.strip())


def _parse_bool(v: str) -> bool:
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off", ""):
        return False
    raise ConfigError("bool 값을 해석할 수 없습니다", value=v)


_FIELD_PARSERS = {
    float: float,
    int: int,
    str: str,
    bool: _parse_bool,
}


def _coerce_section(klass, items: dict, section_name: str):
    defaults = klass()
    known = {f: getattr(defaults, f) for f in klass.__dataclass_fields__}
    out = {}
    for key, raw in items.items():
        if key not in known:
            raise ConfigError(f"[{section_name}] 알 수 없는 키입니다: {key}")
        default = known[key]
        try:
            if isinstance(default, tuple):
                out[key] = _parse_float_list(raw)
            elif isinstance(default, bool):
                out[key] = _parse_bool(raw)
            else:
                out[key] = _FIELD_PARSERS[type(default)](raw.strip())
        except (ValueError, KeyError) as e:
            raise ConfigError(f"[{section_name}] {key} 값을 해석할 수 없습니다", value=raw) from e
    return klass(**out)


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError("config 파일 형식 오류", source=source, error=str(e)) from e

    missing = [s for s in REQUIRED_SECTIONS if not parser.has_section(s)]
    if missing:
        raise ConfigError("필수 섹션이 없습니다", missing=missing, source=source)

    def items(name):
        return dict(parser.items(name)) if parser.has_section(name) else {}

    output_items = items("output")
    output = _coerce_section(OutputSection, output_items, "output")
    # 파일에 없는 항목만 env 로 채운다
    env_overrides = {}
    if "out_dir" not in output_items and _get_env("LAB_OUTPUT_DIR"):
        env_overrides["out_dir"] = _get_env("LAB_OUTPUT_DIR")
    if "workers" not in output_items and _get_env("LAB_WORKERS"):
        env_overrides["workers"] = int(_get_env("LAB_WORKERS"))
    if "runs_db" not in output_items and _get_env("LAB_RUNS_DB"):
        env_overrides["runs_db"] = _get_env("LAB_RUNS_DB")
    if "log_level" not in output_items and _get_env("LAB_LOG_LEVEL"):
        env_overrides["log_level"] = _get_env("LAB_LOG_LEVEL")
    if env_overrides:
        output = replace(output, **env_overrides)

    cfg = RunConfig(
        model=_coerce_section(ModelSection, items("model"), "model"),
        grid=_coerce_section(GridSection, items("grid"), "grid"),
        solver=_coerce_section(SolverSection, items("solver"), "solver"),
        functional=_coerce_section(FunctionalSection, items("functional"), "functional"),
        asymptotics=_coerce_section(AsymptoticsSection, items("asymptotics"), "asymptotics"),
        output=output,
    )
    validate_config(cfg)
    return cfg


def load_config(path: Optional[str] = None) -> RunConfig:
    """path 가 없으면 configs/default.ini, 명시한 파일이 없으면 ConfigError."""
    if path is None:
        p = DEFAULT_CONFIG_PATH
        if not p.exists():
            _log.warning("default config 가 없어 내장 기본값을 씁니다: %s", p)
            cfg = RunConfig()
            validate_config(cfg)
            return cfg
    else:
        p = Path(path)
        if not p.exists():
            raise ConfigError("config 파일이 없습니다", path=str(p))
    cfg = parse_config(p.read_text(encoding="utf-8"), source=str(p))
    cfg = replace(cfg, name=p.stem)
    _log.info("config loaded: %s (hash=%s)", p, cfg.config_hash()[:12])
    return cfg


# ── 검증 ──

def _check_geometric(values: List[float], name: str) -> None:
    if len(values) < 2:
        raise ConfigError(f"{name} 에는 값이 2개 이상 필요합니다", values=list(values))
    ratios = [b / a for a, b in zip(values, values[1:])] if all(v > 0 for v in values) else [0.0]
    if any(r <= 0 for r in ratios) or max(ratios) - min(ratios) > 1e-9 * max(ratios):
        raise ConfigError(f"{name} 는 등비수열이어야 합니다", values=list(values))
    if not (1.5 <= ratios[0] <= 4.0):
        raise ConfigError(f"{name} 의 공비는 [1.5, 4] 안이어야 합니다", ratio=ratios[0])


def validate_config(cfg: RunConfig) -> None:
    if cfg.model.kind not in MODEL_KINDS:
        raise ConfigError("지원하지 않는 model kind 입니다", kind=cfg.model.kind, allowed=list(MODEL_KINDS))
    try:
        cfg.grid.spec().validate()
        cfg.model.build()
    except LabError as e:
        raise ConfigError(f"config 검증 실패: {e}", **e.details) from e

    s = cfg.solver
    if not (s.rtol > 0 and s.maxiter > 0):
        raise ConfigError("solver 허용오차와 반복 횟수는 양수여야 합니다", rtol=s.rtol, maxiter=s.maxiter)
    if s.preconditioner not in ("jacobi", "ilu", "none"):
        raise ConfigError("preconditioner 는 jacobi | ilu | none", value=s.preconditioner)

    f = cfg.functional
    if not (0.0 < f.s0 < 0.5):
        raise ConfigError("s0 는 (0, 1/2) 안이어야 합니다", s0=f.s0)
    for name in ("smear_cells", "monotone_rel_tol", "identity_rel_tol"):
        if not getattr(f, name) > 0:
            raise ConfigError(f"{name} 는 양수여야 합니다", value=getattr(f, name))
    if f.n_sub < 2:
        raise ConfigError("n_sub 는 2 이상이어야 합니다", n_sub=f.n_sub)
    _check_geometric(list(f.a_grid), "a_grid")
    if sorted(f.t_grid) != list(f.t_grid) or len(set(f.t_grid)) != len(f.t_grid) or not f.t_grid or f.t_grid[0] <= 0:
        raise ConfigError("t_grid 는 양의 증가 수열이어야 합니다", t_grid=list(f.t_grid))

    a = cfg.asymptotics
    for q in a.q_values:
        if not (1.0 <= q < 1.5):
            raise ConfigError("q 는 [1, 3/2) 안이어야 합니다", q=q)
    if not a.p > 3:
        raise ConfigError("p 는 3 보다 커야 합니다", p=a.p)
    spec = cfg.grid.spec()
    for R in a.radii:
        if R < 8.0 * spec.r_min or 4.0 * R > spec.r_max / 2.0:
            raise ConfigError("asymptotics.radii 가 격자 밖입니다", R=R)
    if a.radii and len(a.radii) < 4:
        raise ConfigError("asymptotics.radii 는 4개 이상이어야 합니다", n=len(a.radii))

    if cfg.output.workers < 1:
        raise ConfigError("workers 는 1 이상이어야 합니다", workers=cfg.output.workers)
    if not math.isfinite(spec.r_max):
        raise ConfigError("r_max 는 유한해야 합니다")
