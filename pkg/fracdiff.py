import argparse
import asyncio
import sys
import traceback
from datetime import datetime
from typing import List, Optional

from db import DB_PATH
from errors import EXIT_NUMERICAL_ERROR, EXIT_OK, EXIT_SPEC_ERROR, FracDiffError, exit_code_for, reason_code
from problem import load_problem
from queries import get_run_rows, list_runs
from study import (
    METHODS,
    REFERENCE_MODES,
    boundary_profile,
    fit_loglog_slope,
    fmt,
    load_study_spec,
    run_study,
    solve_level,
)

PROBLEM_HELP = """\
problem JSON:
  {"s": 0.75,
   "domain": {"kind": "interval", "a": 0, "b": 1} | {"kind": "rectangle", ...}
           | {"kind": "polygon", "vertices": [[x, y], ...]} | {"kind": "l_shape"},
   "coefficients": {"diffusion": 1.0 | [[a11, a12], [a12, a22]], "reaction": 0.0},
   "forcing": {"kind": "constant", "value": 1.0}
            | {"kind": "eigenfunction", "modes": [1, 1], "scale": "auto" | number}
            | {"kind": "spectral", "coefficients": [f1, f2, ...]}}
"""


def parse_args(argv: Optional[List[str]] = None):
    p = argparse.ArgumentParser(
        prog="fracdiff",
        description="分數階擴散（spectral fractional Laplacian）的 extension 法收斂測試。",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=PROBLEM_HELP,
    )
    sub = p.add_subparsers(dest="cmd", required=True)

    ps = sub.add_parser("study", help="依 study JSON 跑 convergence study，輸出 CSV / .dat")
    ps.add_argument("spec", help="study JSON 路徑")
    ps.add_argument("--method", choices=METHODS, default=None, help="覆寫 method")
    ps.add_argument("--levels", default=None, help="覆寫 level 範圍，格式 a..b")
    ps.add_argument("--s", type=float, default=None, help="覆寫分數階 s")
    ps.add_argument("--out", default=None, help="CSV 輸出路徑（另寫同名 .dat）")
    ps.add_argument("--jobs", type=int, default=None, help="同一 level 內的並行 solve 數")
    ps.add_argument("--reference", default=None,
                    help=f"reference 模式：{' | '.join(REFERENCE_MODES)} 或直接給 pairing 數值")
    ps.add_argument("--db", default=DB_PATH, help=f"study ledger 路徑（預設：{DB_PATH}）")
    ps.add_argument("--no-db", action="store_true", help="不寫 ledger（fine_solve 也不讀快取）")
    ps.add_argument("--dump-matrices", default=None, metavar="DIR", help="每個 level 的 A_Ω, M_Ω, S_y, M_y 輸出成 .mtx（多邊形網格另存 .off）")
    ps.add_argument("--quiet", action="store_true", help="不輸出每個 level 的進度")

    pp = sub.add_parser("profile", help="一維解在端點附近的 boundary profile 與 log-log 斜率")
    pp.add_argument("problem", help="problem JSON 路徑")
    pp.add_argument("--method", choices=("p1_uniform", "hp_in_y", "hp_full_1d"), default="hp_full_1d")
    pp.add_argument("--level", type=int, default=8)
    pp.add_argument("--distances", default="1e-3,2e-3,5e-3,1e-2,2e-2,5e-2",
                    help="逗號分隔的距離列表")
    pp.add_argument("--jobs", type=int, default=1)

    pr = sub.add_parser("runs", help="列出 ledger 裡的 study 執行紀錄")
    pr.add_argument("--db", default=DB_PATH)
    pr.add_argument("--name", default=None)
    pr.add_argument("--limit", type=int, default=20)
    pr.add_argument("--run-id", type=int, default=None, help="列出單一 run 的每個 level")

    return p.parse_args(argv)


async def cmd_study(args) -> int:
    spec = load_study_spec(args.spec, method=args.method, levels=args.levels, s=args.s,
                           out=args.out, jobs=args.jobs, reference=args.reference)
    db_path = None if args.no_db else args.db
    df = await run_study(spec, db_path=db_path, dump_dir=args.dump_matrices, quiet=args.quiet)
    if not spec.out:
        print(df.to_csv(index=False, float_format="%.12g", na_rep=""), end="", flush=True)
    return EXIT_OK


async def cmd_profile(args) -> int:
    problem = load_problem(args.problem)
    try:
        distances = [float(x) for x in str(args.distances).split(",") if x.strip()]
    except ValueError:
        print(f"[{fmt(datetime.now())}] [ERROR] distances 格式錯誤：{args.distances}", flush=True)
        return EXIT_SPEC_ERROR
    res = await solve_level(problem, args.method, args.level, jobs=args.jobs)
    table = boundary_profile(problem, res.solution, distances)
    print(table.to_string(index=False, float_format=lambda v: f"{v:.10g}"), flush=True)
    if (table["value"].abs() > 0).all():
        slope = fit_loglog_slope(table["dist"], table["value"])
        print(f"log-log slope = {slope:.4f}（2s = {2 * problem.s:.4f}）", flush=True)
    return EXIT_OK


async def cmd_runs(args) -> int:
    if args.run_id is not None:
        rows = await get_run_rows(args.run_id, args.db)
        for r in rows:
            print(r, flush=True)
        return EXIT_OK
    for r in await list_runs(args.db, name=args.name, limit=args.limit):
        print(f"#{r['run_id']} {r['name']} {r['method']} s={r['s']} {r['status']}/{r['reason']} "
              f"{r['started_at']} {r['elapsed_s'] or 0:.1f}s", flush=True)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    handler = {"study": cmd_study, "profile": cmd_profile, "runs": cmd_runs}[args.cmd]
    try:
        return asyncio.run(handler(args))
    except FracDiffError as e:
        level = getattr(e, "level", None)
        where = f" level={level}" if level is not None else ""
        print(f"[{fmt(datetime.now())}] [ERROR] {reason_code(e)}{where}：{e}", file=sys.stderr, flush=True)
        return exit_code_for(e)
    except Exception:
        print(f"[{fmt(datetime.now())}] [ERROR] 發生例外：", file=sys.stderr, flush=True)
        traceback.print_exc()
        return EXIT_NUMERICAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
