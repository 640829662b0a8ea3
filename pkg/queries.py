import aiosqlite
from typing import Any, Dict, List, Optional
from db import DB_PATH

# ============================================================
# 基礎工具
# ============================================================
async def _table_exists(db: aiosqlite.Connection, table_name: str) -> bool:
    async with db.execute(
        "SELECT 1 FROM sqlite_master WHERE type='table' AND name=? LIMIT 1",
        (table_name,),
    ) as cur:
        return (await cur.fetchone()) is not None


# ============================================================
# study ledger
# ============================================================
async def list_runs(db_path: str = DB_PATH, name: Optional[str] = None, limit: int = 50) -> List[Dict[str, Any]]:
    async with aiosqlite.connect(db_path) as db:
        if not await _table_exists(db, "study_runs"):
            return []
        sql = """
        SELECT run_id, name, method, s, reference, status, reason, err, started_at, finished_at, elapsed_s
        FROM study_runs
        """
        params: tuple = ()
        if name:
            sql += " WHERE name = ?"
            params = (name,)
        sql += " ORDER BY run_id DESC LIMIT ?"
        params = params + (int(limit),)
        async with db.execute(sql, params) as cur:
            rows = await cur.fetchall()
    keys = ["run_id", "name", "method", "s", "reference", "status", "reason", "err",
            "started_at", "finished_at", "elapsed_s"]
    return [dict(zip(keys, r)) for r in rows]


async def get_run_rows(run_id: int, db_path: str = DB_PATH) -> List[Dict[str, Any]]:
    async with aiosqlite.connect(db_path) as db:
        if not await _table_exists(db, "study_rows"):
            return []
        async with db.execute("""
            SELECT level, h, M, q, N_omega, N_total, energy_error, eoc, wall_ms
            FROM study_rows
            WHERE run_id = ?
            ORDER BY level
        """, (int(run_id),)) as cur:
            rows = await cur.fetchall()
    keys = ["level", "h", "M", "q", "N_omega", "N_total", "energy_error", "eoc", "wall_ms"]
    return [dict(zip(keys, r)) for r in rows]


async def get_reference_pairing(ref_key: str, db_path: str = DB_PATH) -> Optional[Dict[str, Any]]:
    async with aiosqlite.connect(db_path) as db:
        if not await _table_exists(db, "reference_pairings"):
            return None
        async with db.execute("""
            SELECT value, self_error, level, method, created_at
            FROM reference_pairings
            WHERE ref_key = ?
        """, (ref_key,)) as cur:
            r = await cur.fetchone()
    if r is None:
        return None
    return {"value": r[0], "self_error": r[1], "level": r[2], "method": r[3], "created_at": r[4]}
