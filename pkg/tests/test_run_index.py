# tests/test_run_index.py
import threading

import pytest

from core.database import get_db, get_db_isolated, reset_cached_conns
from core.run_index import get_run, list_runs, record_run_finish, record_run_start


@pytest.fixture
def db_path(tmp_path):
    yield str(tmp_path / "index" / "runs.db")
    reset_cached_conns()


class TestDatabase:
    def test_dict_rows(self, db_path):
        conn = get_db(db_path)
        conn.execute("CREATE TABLE t (a INTEGER, b TEXT)")
        conn.execute("INSERT INTO t VALUES (?, ?)", [1, "x"])
        conn.commit()
        assert conn.execute("SELECT * FROM t").fetchall() == [{"a": 1, "b": "x"}]
        assert conn.execute("SELECT * FROM t WHERE a = 2").fetchone() is None

    def test_cached_connection_survives_close(self, db_path):
        conn = get_db(db_path)
        conn.close()
        assert get_db(db_path).execute("SELECT 1 AS one").fetchone() == {"one": 1}

    def test_isolated_connection_closes(self, db_path):
        conn = get_db_isolated(db_path)
        conn.execute("SELECT 1")
        conn.close()
        with pytest.raises(Exception):
            conn.execute("SELECT 1")


class TestRunIndex:
    def test_start_then_finish(self, db_path):
        record_run_start(db_path, "r1", "abc", '{"k": 1}')
        row = get_run(db_path, "r1")
        assert row["status"] == "running"
        assert row["config"] == {"k": 1}
        assert row["summary"] == {}

        record_run_finish(db_path, "r1", "completed", {"verdicts": {"F_monotone": "PASS"}})
        row = get_run(db_path, "r1")
        assert row["status"] == "completed"
        assert row["finished_at"]
        assert row["summary"]["verdicts"]["F_monotone"] == "PASS"

    def test_restart_resets_row(self, db_path):
        record_run_start(db_path, "r1", "abc", "{}")
        record_run_finish(db_path, "r1", "failed", {"exit_code": 3})
        record_run_start(db_path, "r1", "abc", "{}")
        row = get_run(db_path, "r1")
        assert row["status"] == "running"
        assert row["finished_at"] is None

    def test_missing_run(self, db_path):
        assert get_run(db_path, "nope") is None

    def test_list_by_sweep_from_threads(self, db_path):
        def worker(i):
            record_run_start(db_path, f"s-{i}", "h", "{}", sweep_id="sweep-1", isolated=True)
            record_run_finish(db_path, f"s-{i}", "completed", {"i": i}, isolated=True)

        record_run_start(db_path, "other", "h", "{}")
        threads = [threading.Thread(target=worker, args=(i,)) for i in range(4)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        rows = list_runs(db_path, sweep_id="sweep-1")
        assert sorted(r["run_id"] for r in rows) == ["s-0", "s-1", "s-2", "s-3"]
        assert all(r["status"] == "completed" for r in rows)
        assert len(list_runs(db_path)) == 5
