import asyncio
import aiosqlite
from datetime import datetime
from typing import Any, Dict, Iterable, Optional

DB_PATH = "fracdiff.db"


def now_iso() -> str:
    return datetime.now().isoformat(timespec="seconds")


async def _exec_retry(db: aiosqlite.Connection, sql: str, params=None, retries: int = 8):
    """
    用於不需要回傳資料的 SQL（DDL/DML/PRAGMA 等）。
    cursor 一定要 close；被其他 study 鎖住時退避重試。
    """
    if params is None:
        params = ()
    last_err = None

    for i in range(retries):
        cur = None
        try:
            cur = await db.execute(sql, params)
            await cur.close()
            return
        except aiosqlite.OperationalError as e:
            last_err = e
            msg = str(e).lower()
            if "locked" in msg or "busy" in msg:
                await asyncio.sleep(0.25 * (i + 1))
                continue
            raise
        finally:
            try:
                if cur is not None:
                    await cur.close()
            except Exception:
                pass

    raise last_err


async def _pragmas(db: aiosqlite.Connection):
    await _exec_retry(db, "PRAGMA busy_timeout=10000;")
    await _exec_retry(db, "PRAGMA journal_mode=WAL;")
    await _exec_retry(db, "PRAGMA synchronous=NORMAL;")


async def init_db(db_path: str = DB_PATH):
    async with aiosqlite.connect(db_path) as db:
        await _pragmas(db)

        # === 每次 study 執行一筆 ===
        await _exec_retry(db, """
        CREATE TABLE IF NOT EXISTS study_runs (
          run_id INTEGER PRIMARY KEY AUTOINCREMENT,
          name TEXT,
          method TEXT,
          s REAL,
          problem_json TEXT,
          spec_json TEXT,
          reference REAL,
          status TEXT,          -- running | ok | failed
          reason TEXT,          -- ok | reference_inconsistency | resource | accuracy | indefinite | spec | exception
          err TEXT,
          started_at TEXT,
          finished_at TEXT,
          elapsed_s REAL
        )
        """)

        # === 每個 level 一列（與 CSV 欄位相同）===
        await _exec_retry(db, """
        CREATE TABLE IF NOT EXISTS study_rows (
          run_id INTEGER NOT NULL,
          level INTEGER NOT NULL,
          h REAL,
          M INTEGER,
          q INTEGER,
          N_omega INTEGER,
          N_total INTEGER,
          energy_error REAL,
          eoc REAL,
          wall_ms REAL,
          PRIMARY KEY (run_id, level)
        )
        """)
        await _exec_retry(db, """
        CREATE INDEX IF NOT EXISTS idx_rows_run ON study_rows (run_id)
        """)

        # === fine_solve 參考值快取（key = problem JSON + 方法參數）===
        await _exec_retry(db, """
        CREATE TABLE IF NOT EXISTS reference_pairings (
          ref_key TEXT PRIMARY KEY,
          problem_json TEXT,
          method TEXT,
          level INTEGER,
          value REAL,
          self_error REAL,
          created_at TEXT
        )
        """)

        await db.commit()


async def insert_study_run(db_path: str, name: str, method: str, s: float,
                           problem_json: str, spec_json: str, reference: Optional[float]) -> int:
    async with aiosqlite.connect(db_path) as db:
        await _pragmas(db)
        cur = await db.execute(
            """
            INSERT INTO study_runs (name, method, s, problem_json, spec_json, reference, status, reason, started_at)
            VALUES (?,?,?,?,?,?, 'running', NULL, ?)
            """,
            (name, method, s, problem_json, spec_json, reference, now_iso()),
        )
        run_id = cur.lastrowid
        await cur.close()
        await db.commit()
        return int(run_id)


async def insert_study_rows(db_path: str, run_id: int, rows: Iterable[Dict[str, Any]]) -> int:
    n = 0
    async with aiosqlite.connect(db_path) as db:
        await _pragmas(db)
        for r in rows:
            await _exec_retry(
                db,
                """
                INSERT INTO study_rows (run_id, level, h, M, q, N_omega, N_total, energy_error, eoc, wall_ms)
                VALUES (?,?,?,?,?,?,?,?,?,?)
                ON CONFLICT(run_id, level) DO UPDATE SET
                  h=excluded.h, M=excluded.M, q=excluded.q,
                  N_omega=excluded.N_omega, N_total=excluded.N_total,
                  energy_error=excluded.energy_error, eoc=excluded.eoc, wall_ms=excluded.wall_ms
                """,
                (
                    run_id, int(r["level"]), r.get("h"), r.get("M"), r.get("q"),
                    r.get("N_omega"), r.get("N_total"), r.get("energy_error"), r.get("eoc"), r.get("wall_ms"),
                ),
            )
            n += 1
        await db.commit()
    return n


async def finish_study_run(db_path: str, run_id: int, ok: bool, reason: str,
                           err: Optional[str] = None, elapsed_s: Optional[float] = None):
    async with aiosqlite.connect(db_path) as db:
        await _pragmas(db)
        await _exec_retry(
            db,
            """
            UPDATE study_runs
            SET status=?, reason=?, err=?, finished_at=?, elapsed_s=?
            WHERE run_id=?
            """,
            ("ok" if ok else "failed", reason, err, now_iso(), elapsed_s, run_id),
        )
        await db.commit()


async def save_reference_pairing(db_path: str, ref_key: str, problem_json: str, method: str,
                                 level: int, value: float, self_error: float):
    async with aiosqlite.connect(db_path) as db:
        await _pragmas(db)
        await _exec_retry(
            db,
            """
            INSERT INTO reference_pairings (ref_key, problem_json, method, level, value, self_error, created_at)
            VALUES (?,?,?,?,?,?,?)
            ON CONFLICT(ref_key) DO UPDATE SET
              level=excluded.level,
              value=excluded.value,
              self_error=excluded.self_error,
              created_at=excluded.created_at
            """,
            (ref_key, problem_json, method, int(level), float(value), float(self_error), now_iso()),
        )
        await db.commit()
