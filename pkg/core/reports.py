# core/reports.py
"""실행 산출물 직렬화: JSON/CSV/npz, 모두 write-then-rename.

완료된 stage 파일은 이후 stage 실패로 깨지지 않는다 (임시 파일 → os.replace).
"""
from __future__ import annotations

import json
import logging
import math
import os
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

_log = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.12e"


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(x) for x in obj]
    if isinstance(obj, np.ndarray):
        return [_to_jsonable(x) for x in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        # JSON 표준에는 NaN/Inf 가 없다
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def json_dumps_safe(obj) -> str:
    try:
        return json.dumps(_to_jsonable(obj), ensure_ascii=False, indent=2, sort_keys=True)
    except Exception:
        try:
            return json.dumps(str(obj), ensure_ascii=False, indent=2)
        except Exception:
            return str(obj)


def _tmp_path(path: Path) -> Path:
    return path.with_name(f".{path.name}.{os.getpid()}.tmp")


def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = _tmp_path(path)
    try:
        with open(tmp, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            try:
                tmp.unlink()
            except OSError:
                pass
    return path


def write_json(path, obj) -> Path:
    return atomic_write_bytes(path, (json_dumps_safe(obj) + "\n").encode("utf-8"))


def write_csv(path, df: pd.DataFrame, columns: Optional[Sequence[str]] = None) -> Path:
    """고정 열 순서 + 고정 float 포맷 (같은 입력 ⇒ 같은 바이트)."""
    if columns is not None:
        df = df.reindex(columns=list(columns))
    text = df.to_csv(index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return atomic_write_bytes(path, text.encode("utf-8"))


def write_npz(path, header: dict, **arrays) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = _tmp_path(path)
    try:
        with open(tmp, "wb") as f:
            np.savez(f, header=np.array(json_dumps_safe(header)), **arrays)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            try:
                tmp.unlink()
            except OSError:
                pass
    return path


def read_npz(path):
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        arrays = {k: data[k] for k in data.files if k != "header"}
    return header, arrays


def file_inventory(root, names: Iterable[str]) -> list:
    root = Path(root)
    out = []
    for name in sorted(set(names)):
        p = root / name
        if p.exists():
            out.append({"name": name, "bytes": p.stat().st_size})
    return out
