# app.py
import argparse
import logging
import os
import sys
from dataclasses import replace
from typing import List, Optional

from core.config import load_config
from core.errors import EXIT_OK, EXIT_VALIDATION, LabError
from core.pipeline import COMMAND_STAGES, SWEEP_AXES, run_pipeline, sweep
from core.reports import json_dumps_safe
from core.verify import LEVELS, verify_suite

_log = logging.getLogger(__name__)


def _parse_values(raw: str) -> List[float]:
    try:
        return [float(x) for x in (raw or "").split(",") if x.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"숫자 목록이 아닙니다: {raw!r}") from e


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="greens-lab", description="Green 함수 mass functional 수치 실험")
    ap.add_argument("--log-level", default=None, help="로그 레벨 (기본: LAB_LOG_LEVEL 또는 INFO)")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_run_flags(p):
        p.add_argument("--config", default=None, help="INI 설정 파일 (기본: configs/default.ini)")
        p.add_argument("--out", default=None, help="출력 루트 디렉터리")
        p.add_argument("--no-normalize-flux", action="store_true", help="flux 4π 정규화 끄기 (대조 실험)")

    for name, helptext in (
        ("solve", "Green 함수 풀이 + 가설 점검"),
        ("functionals", "풀이 + F/E/D functional"),
        ("asymptotics", "풀이 + 점근 전개"),
        ("run", "전체 파이프라인"),
    ):
        add_run_flags(sub.add_parser(name, help=helptext))

    p = sub.add_parser("sweep", help="파라미터 축 하나를 훑는 실행 묶음")
    add_run_flags(p)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True, type=_parse_values, help="쉼표로 구분한 값 목록")
    p.add_argument("--workers", type=int, default=None, help="동시 실행 수 (기본: 설정 또는 LAB_WORKERS)")

    p = sub.add_parser("verify", help="수용 기준 점검")
    p.add_argument("--level", choices=LEVELS, default="quick")
    p.add_argument("--no-normalize-flux", action="store_true", help="flux 정규화를 끈 음성 대조")
    return ap


def _load(args):
    cfg = load_config(args.config)
    if args.out:
        cfg = cfg.with_output(out_dir=args.out)
    if getattr(args, "no_normalize_flux", False):
        cfg = replace(cfg, solver=replace(cfg.solver, normalize_flux=False))
    return cfg


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = (args.log_level or os.getenv("LAB_LOG_LEVEL") or "INFO").upper()
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        if args.command == "verify":
            report = verify_suite(args.level, normalize_flux=not args.no_normalize_flux)
            print(report.table().to_string(index=False))
            if not report.passed:
                print(f"FAIL: {', '.join(report.failures)}", file=sys.stderr)
            return report.exit_code

        cfg = _load(args)
        if args.command == "sweep":
            table = sweep(cfg, args.axis, args.values, workers=args.workers)
            print(table.to_string(index=False))
            return EXIT_OK if (table["status"] == "completed").all() else max(
                int(x) for x in table["exit_code"].fillna(3))

        manifest = run_pipeline(cfg, COMMAND_STAGES[args.command])
        print(json_dumps_safe({"run_dir": manifest.run_dir, "status": manifest.status,
                               "verdicts": manifest.verdicts()}))
        return manifest.exit_code
    except LabError as e:
        _log.error("%s: %s %s", type(e).__name__, e, e.details)
        return e.exit_code
    except argparse.ArgumentTypeError as e:
        _log.error("%s", e)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
