# core/errors.py
"""연구실 파이프라인 공용 예외.

exit_code 규칙:
- 2: 입력/설정 검증 실패 (실행 전에 거절)
- 3: 수치 계산 실패 (수렴 실패, 해상도 부족 등)
"""
from __future__ import annotations

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


class LabError(RuntimeError):
    exit_code = EXIT_NUMERICAL

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = dict(details)

    def payload(self) -> dict:
        return {
            "type": type(self).__name__,
            "message": str(self),
            "details": self.details,
        }


# ── 검증 오류 (exit 2) ───────────────────────────────────

class ConfigError(LabError):
    exit_code = EXIT_VALIDATION


class InvalidSpec(LabError):
    exit_code = EXIT_VALIDATION


class OutOfRange(LabError):
    exit_code = EXIT_VALIDATION


class UnboundedInput(LabError):
    exit_code = EXIT_VALIDATION


# ── 수치 오류 (exit 3) ───────────────────────────────────

class NonPositiveDefinite(LabError):
    pass


class UnsupportedModel(LabError):
    pass


class NoConvergence(LabError):
    pass


class DegenerateGradient(LabError):
    pass


class ShellUnresolved(LabError):
    pass


class InconsistentForms(LabError):
    pass


class IllConditionedFit(LabError):
    pass
