# scripts/calibrate_mass.py
"""Schwarzschild 1D radial oracle 의 aD(a)/m 를 닫힌 형태와 비교해 data/mass_calibration.json 에 기록.

상수 자체는 mass_calibration_constant 가 ψ 모멘트로 계산한다. 이 스크립트는 a 를 늘려 가며
오라클이 그 값으로 수렴하는 기록(provenance)을 남긴다.
"""
import argparse
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT))

from core.mass_functionals import (  # noqa: E402
    bump_profile,
    mass_calibration_constant,
    radial_aD_oracle,
    schwarzschild_aD,
)
from core.metric_models import ConformalRadial  # noqa: E402
from core.reports import write_json  # noqa: E402

_log = logging.getLogger("calibrate_mass")

DEFAULT_OUT = ROOT / "data" / "mass_calibration.json"


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--s0", type=float, default=0.05, help="bump profile 지지 여백")
    ap.add_argument("--a-max", type=float, default=4096.0)
    ap.add_argument("--nodes", type=int, default=800)
    ap.add_argument("--out", type=str, default=str(DEFAULT_OUT))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    psi = bump_profile(args.s0)
    ratio = mass_calibration_constant(psi)
    history = []
    a = 16.0
    while a <= args.a_max:
        per_m = {}
        for m in (0.5, 1.0, 2.0):
            oracle = radial_aD_oracle(ConformalRadial(profile="schwarzschild", m=m), a, psi, args.nodes)
            per_m[str(m)] = {"oracle": oracle / m, "closed_form": schwarzschild_aD(a, m, psi) / m}
        history.append({"a": a, "ratio_by_m": per_m})
        _log.info("a=%g ratios=%s", a, per_m)
        a *= 4.0

    write_json(args.out, {
        "s0": psi.s0,
        "c_psi": psi.c_psi,
        "ratio": ratio,
        "nodes": args.nodes,
        "history": history,
        "generated_at": datetime.now(timezone.utc).isoformat().replace("+00:00", "Z"),
        "script": "scripts/calibrate_mass.py",
    })
    _log.info("wrote %s (ratio=%.10g)", args.out, ratio)
    return 0


if __name__ == "__main__":
    sys.exit(main())
