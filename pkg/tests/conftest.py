# tests/conftest.py
import pytest

from core.config import (
    AsymptoticsSection,
    FunctionalSection,
    GridSection,
    ModelSection,
    OutputSection,
    RunConfig,
    SolverSection,
)
from core.elliptic_green import GridSpec, SolverSettings, build_grid, radial_oracle, solve_green
from core.metric_models import ConformalBump, ConformalRadial, Euclidean

# 격자 풀이용 (CG 8192 셀)
SMALL_SPEC = GridSpec(r_min=1.0 / 32.0, r_max=1024.0, n_r=64, n_theta=8, n_phi=16)
# 오라클 전용: 반경 방향만 촘촘하게
ORACLE_SPEC = GridSpec(r_min=1.0 / 32.0, r_max=1024.0, n_r=128, n_theta=4, n_phi=8)

_LAB_ENV = ("LAB_OUTPUT_DIR", "LAB_WORKERS", "LAB_RUNS_DB", "LAB_LOG_LEVEL")


@pytest.fixture(autouse=True)
def _clean_lab_env(monkeypatch):
    for key in _LAB_ENV:
        monkeypatch.delenv(key, raising=False)


@pytest.fixture(scope="session")
def small_grid():
    return build_grid(SMALL_SPEC)


@pytest.fixture(scope="session")
def euclid_oracle():
    return radial_oracle(Euclidean(), build_grid(ORACLE_SPEC))


@pytest.fixture(scope="session")
def schw_oracle():
    return radial_oracle(ConformalRadial(profile="schwarzschild", m=1.0), build_grid(ORACLE_SPEC))


@pytest.fixture(scope="session")
def euclid_small_oracle(small_grid):
    return radial_oracle(Euclidean(), small_grid)


@pytest.fixture(scope="session")
def schw_solution(small_grid):
    return solve_green(small_grid, ConformalRadial(profile="schwarzschild", m=1.0), SolverSettings())


@pytest.fixture(scope="session")
def bump_solution(small_grid):
    return solve_green(small_grid, ConformalBump(center=(0.0, 0.0, 1.0), amplitude=0.25, width=0.5),
                       SolverSettings(preconditioner="ilu"))


def make_run_config(out_dir, kind="euclidean", oracle=True, name="", **model):
    """빠른 파이프라인 실행용 작은 config."""
    return RunConfig(
        model=ModelSection(kind=kind, **model),
        grid=GridSection(n_r=64, n_theta=4, n_phi=8),
        solver=SolverSection(oracle=oracle),
        functional=FunctionalSection(a_grid=(4.0, 8.0, 16.0), t_grid=(2.0, 4.0, 8.0), cross_check=False),
        asymptotics=AsymptoticsSection(),
        output=OutputSection(out_dir=str(out_dir), workers=2),
        name=name,
    )


ORACLE_INI = """\
[model]
kind = {kind}
m = 1.0

[grid]
r_min = 0.03125
r_max = 1024
n_r = 64
n_theta = 4
n_phi = 8

[solver]
oracle = true

[functional]
a_grid = 4, 8, 16
t_grid = 2, 4, 8
cross_check = false

[asymptotics]
enabled = {asymptotics}

[output]
out_dir = {out_dir}
workers = 1
"""


@pytest.fixture
def write_ini(tmp_path):
    def _write(name="lab", kind="euclidean", asymptotics="true", out_dir=None, text=None):
        path = tmp_path / f"{name}.ini"
        body = text if text is not None else ORACLE_INI.format(
            kind=kind, asymptotics=asymptotics, out_dir=out_dir or (tmp_path / "runs"))
        path.write_text(body, encoding="utf-8")
        return path
    return _write
