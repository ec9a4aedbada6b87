# core/database.py
"""run index 용 sqlite 연결.

- DictCursor / DictConn: 조회 결과를 컬럼명 → 값 dict 로 돌려주는 얇은 래퍼
- get_db(): runs.db 경로별로 캐시한 연결 (SELECT 1 헬스체크 후 재사용)
- get_db_isolated(): sweep worker 스레드가 따로 여는 연결, 쓰고 나서 닫는다
"""
import logging
import sqlite3
import threading
from pathlib import Path
from typing import Dict, List, Optional

_log = logging.getLogger(__name__)


# ── dict-row wrapper ──────────────────────────────────────

class DictCursor:
    __slots__ = ("_cur",)

    def __init__(self, cur: sqlite3.Cursor):
        self._cur = cur

    def _columns(self) -> List[str]:
        return [d[0] for d in self._cur.description]

    def fetchone(self) -> Optional[dict]:
        row = self._cur.fetchone()
        if row is None or not self._cur.description:
            return row
        return dict(zip(self._columns(), row))

    def fetchall(self) -> List[dict]:
        rows = self._cur.fetchall()
        if not rows or not self._cur.description:
            return rows
        cols = self._columns()
        return [dict(zip(cols, r)) for r in rows]


class DictConn:
    """캐시된 sqlite3 연결. close() 는 아무것도 하지 않는다."""
    __slots__ = ("_conn",)

    def __init__(self, conn: sqlite3.Connection):
        self._conn = conn

    def execute(self, *a, **kw) -> DictCursor:
        return DictCursor(self._conn.execute(*a, **kw))

    def commit(self):
        self._conn.commit()

    def close(self):
        pass


class _IsolatedConn(DictConn):
    __slots__ = ()

    def close(self):
        self._conn.close()


# ── 경로별 커넥션 캐시 ────────────────────────────────────

_cached_conns: Dict[str, sqlite3.Connection] = {}
_cache_lock = threading.Lock()


def _connect(db_path: str, busy_timeout_ms: int) -> sqlite3.Connection:
    Path(db_path).parent.mkdir(parents=True, exist_ok=True)
    conn = sqlite3.connect(db_path, check_same_thread=False)
    try:
        conn.execute("PRAGMA journal_mode=WAL;")
        conn.execute("PRAGMA synchronous=NORMAL;")
        conn.execute(f"PRAGMA busy_timeout={int(busy_timeout_ms)};")
    except sqlite3.Error as exc:
        _log.warning("PRAGMA 설정 실패: %s", exc)
    return conn


def reset_cached_conns():
    """캐시된 연결 강제 초기화 (복구/테스트용)."""
    with _cache_lock:
        for conn in _cached_conns.values():
            try:
                conn.close()
            except sqlite3.Error:
                pass
        _cached_conns.clear()


def get_db(db_path: str) -> DictConn:
    """캐시된 sqlite3 커넥션 반환. 헬스체크(SELECT 1) 실패 시 재생성."""
    key = str(Path(db_path).resolve())
    with _cache_lock:
        conn = _cached_conns.get(key)
        if conn is not None:
            try:
                conn.execute("SELECT 1")
                return DictConn(conn)
            except sqlite3.Error:
                try:
                    conn.close()
                except sqlite3.Error:
                    pass
                _cached_conns.pop(key, None)
        conn = _connect(key, 5000)
        _cached_conns[key] = conn
        return DictConn(conn)


def get_db_isolated(db_path: str) -> DictConn:
    """스레드 안전한 개별 연결 반환. 사용 후 반드시 .close() 호출."""
    return _IsolatedConn(_connect(str(Path(db_path).resolve()), 10000))
