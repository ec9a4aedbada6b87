# core/run_index.py
"""runs.db 의 lab_runs 테이블: run 시작/종료 기록과 sweep 집계 조회."""
import json
import logging
from datetime import datetime, timezone
from typing import List, Optional

from core.database import get_db, get_db_isolated
from core.reports import json_dumps_safe

_log = logging.getLogger(__name__)

_INITIALIZED = set()


def now_iso() -> str:
    return datetime.now(timezone.utc).isoformat().replace("+00:00", "Z")


def _safe_json_loads(val, default=None):
    if not val:
        return default
    try:
        return json.loads(val)
    except (json.JSONDecodeError, ValueError, TypeError):
        return default


def init_index(db_path: str) -> None:
    if db_path in _INITIALIZED:
        return
    conn = get_db(db_path)
    conn.execute("""
        CREATE TABLE IF NOT EXISTS lab_runs (
            run_id TEXT PRIMARY KEY,
            sweep_id TEXT,
            created_at TEXT NOT NULL,
            finished_at TEXT,
            config_hash TEXT NOT NULL,
            status TEXT NOT NULL,
            config_json TEXT NOT NULL,
            summary_json TEXT
        )
    """)
    conn.execute("CREATE INDEX IF NOT EXISTS idx_lab_runs_sweep ON lab_runs(sweep_id, created_at)")
    conn.commit()
    _INITIALIZED.add(db_path)


def record_run_start(db_path: str, run_id: str, config_hash: str, config_json: str,
                     sweep_id: Optional[str] = None, isolated: bool = False) -> None:
    init_index(db_path)
    conn = get_db_isolated(db_path) if isolated else get_db(db_path)
    try:
        conn.execute("""
            INSERT INTO lab_runs (run_id, sweep_id, created_at, config_hash, status, config_json)
            VALUES (?, ?, ?, ?, 'running', ?)
            ON CONFLICT(run_id) DO UPDATE SET
                sweep_id=excluded.sweep_id, created_at=excluded.created_at,
                status='running', finished_at=NULL, summary_json=NULL
        """, (run_id, sweep_id, now_iso(), config_hash, config_json))
        conn.commit()
    finally:
        conn.close()


def record_run_finish(db_path: str, run_id: str, status: str, summary: dict, isolated: bool = False) -> None:
    conn = get_db_isolated(db_path) if isolated else get_db(db_path)
    try:
        conn.execute(
            "UPDATE lab_runs SET status=?, finished_at=?, summary_json=? WHERE run_id=?",
            (status, now_iso(), json_dumps_safe(summary), run_id),
        )
        conn.commit()
    finally:
        conn.close()
    _log.info("run %s → %s", run_id, status)


def _decode(row: dict) -> dict:
    row = dict(row)
    row["config"] = _safe_json_loads(row.pop("config_json", None), {})
    row["summary"] = _safe_json_loads(row.pop("summary_json", None), {})
    return row


def get_run(db_path: str, run_id: str) -> Optional[dict]:
    init_index(db_path)
    row = get_db(db_path).execute("SELECT * FROM lab_runs WHERE run_id=?", (run_id,)).fetchone()
    return _decode(row) if row else None


def list_runs(db_path: str, sweep_id: Optional[str] = None, limit: int = 200) -> List[dict]:
    init_index(db_path)
    conn = get_db(db_path)
    if sweep_id is None:
        rows = conn.execute("SELECT * FROM lab_runs ORDER BY created_at DESC LIMIT ?", (limit,)).fetchall()
    else:
        rows = conn.execute(
            "SELECT * FROM lab_runs WHERE sweep_id=? ORDER BY created_at LIMIT ?", (sweep_id, limit)
        ).fetchall()
    return [_decode(r) for r in (rows or [])]
