# core/analysis.py
from typing import Any, Dict, Optional

from core.errors import LabError


def _pack(summary, causes, fixes, checks):
    return {
        "summary": summary,
        "likely_causes": causes,
        "recommended_fixes": fixes,
        "next_checks": checks,
    }


# 예외 타입 이름 → (summary, causes, fixes, checks)
_RULES = {
    "ConfigError": (
        "설정 파일 검증에 실패했습니다.",
        ["필수 섹션 누락", "a_grid 공비가 [1.5, 4] 밖", "q/p 범위 위반"],
        ["configs/default.ini 와 섹션/키 이름 비교", "값의 범위 재확인"],
        ["오류 details 의 키/값 확인"],
    ),
    "InvalidSpec": (
        "격자 또는 입력 사양이 유효하지 않습니다.",
        ["r_min ≥ 1/16 또는 r_max/r_min < 2^10", "셀 개수 0", "n_phi 홀수"],
        ["[grid] 섹션 수정"],
        ["GridSpec.validate 메시지 확인"],
    ),
    "OutOfRange": (
        "요청한 반경/레벨이 격자 범위를 벗어났습니다.",
        ["asymptotics.radii 가 너무 큼", "r_max 가 작음"],
        ["R 목록 축소", "r_max 확대"],
        ["4R ≤ r_max/2, R ≥ 8 r_min 확인"],
    ),
    "UnboundedInput": (
        "선형화 입력의 노름이 상한을 넘었습니다.",
        ["k 또는 v 가 annulus 위에서 너무 큼"],
        ["입력 스케일 조정", "caps 재설정"],
        ["L^4 노름 직접 계산"],
    ),
    "NoConvergence": (
        "선형 솔버가 수렴하지 않았습니다.",
        ["maxiter 부족", "preconditioner 가 약함", "tolerance 가 너무 엄격"],
        ["preconditioner = ilu 로 재시도", "maxiter 증가", "rtol 완화"],
        ["로그의 iterations/residual 확인"],
    ),
    "NonPositiveDefinite": (
        "metric 이 양의 정부호가 아닙니다.",
        ["섭동 진폭 |ε| ≥ 1", "음의 질량 파라미터"],
        ["[model] 파라미터 수정"],
        ["eval_metric 으로 고유값 확인"],
    ),
    "UnsupportedModel": (
        "이 모델에는 해당 연산이 지원되지 않습니다.",
        ["radial oracle 을 비-radial 모델에 요청", "알 수 없는 kind"],
        ["solver.oracle = false 로 격자 풀이 사용", "kind 철자 확인"],
        ["metric_models.MODEL_KINDS 확인"],
    ),
    "DegenerateGradient": (
        "레벨셋 근처에서 ∇u 가 사라졌습니다.",
        ["임계점 근처 레벨", "해상도 부족"],
        ["다른 레벨 사용", "격자 세분화"],
        ["level_set_connected 확인"],
    ),
    "ShellUnresolved": (
        "레벨셋 smearing 창이 격자에서 해상되지 않습니다.",
        ["레벨이 격자 경계에 너무 가까움", "n_sub 또는 smear_cells 가 작음"],
        ["t_grid/a_grid 범위 축소", "n_r 또는 n_sub 증가"],
        ["details 의 rows/레벨 확인"],
    ),
    "InconsistentForms": (
        "D 의 두 계산 방식(부피형/ s-구적)이 일치하지 않습니다.",
        ["해의 정확도 부족", "smearing 편향"],
        ["격자 세분화", "richardson = true"],
        ["E flux-form 과 quadrature 비교"],
    ),
    "IllConditionedFit": (
        "점근 전개 최소제곱 행렬의 조건수가 너무 큽니다.",
        ["annulus 격자 설정 이상"],
        ["기본 AnnulusLattice 사용"],
        ["cond 값 확인"],
    ),
}


def diagnose_failure(stage: str, exc: BaseException) -> Dict[str, Any]:
    rule = _RULES.get(type(exc).__name__)
    if rule is None:
        return _pack(
            f"{stage} 단계에서 예상하지 못한 오류가 발생했습니다: {type(exc).__name__}",
            ["코드 결함 가능성", "입력 데이터 이상"],
            ["traceback 로그 확인"],
            ["같은 config 로 해당 단계만 재현"],
        )
    summary, causes, fixes, checks = rule
    return _pack(f"[{stage}] {summary}", list(causes), list(fixes), list(checks))


def failure_record(stage: str, exc: BaseException, elapsed_sec: Optional[float] = None) -> Dict[str, Any]:
    """manifest 에 남길 단계 실패 기록."""
    if isinstance(exc, LabError):
        error = exc.payload()
    else:
        error = {"type": type(exc).__name__, "message": str(exc), "details": {}}
    analysis = diagnose_failure(stage, exc)
    rec = {"stage": stage, "status": "failed", "error": error, "diagnosis": analysis}
    if elapsed_sec is not None:
        rec["elapsed_sec"] = elapsed_sec
    return rec
