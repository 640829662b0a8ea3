"""
convergence study 的執行層：
- StudySpec 的讀取與驗證（JSON + CLI flag 覆寫）
- 每個 level 的離散化建構與求解（solve_level）
- reference pairing（oracle / exact / fine_solve / 直接給值）
- CSV + gnuplot .dat 輸出、study ledger 寫入
- boundary_profile 與斜率 / 指數收斂率擬合
"""
from __future__ import annotations

import hashlib
import json
import math
import time
import traceback
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import quad

from db import DB_PATH, finish_study_run, init_db, insert_study_rows, insert_study_run, save_reference_pairing
from errors import (
    FracDiffError,
    ParameterError,
    ReferenceInconsistencyError,
    SpecError,
    reason_code,
)
from extension_solver import (
    ExtensionSolution,
    choose_truncation,
    diagonalize,
    energy_error_squared,
    solve_diagonalized_async,
    solve_sparse_combination_async,
)
from fem_omega import (
    P1Space,
    TriMesh,
    assemble_omega,
    coarse_triangulation,
    default_betas,
    export_off,
    graded_triangulation,
    hp_interval_space,
    refine_uniform,
    uniform_interval_space,
    uniform_triangulation,
)
from fem_y import YSpace, assemble_weighted, geometric_mesh, linear_degrees, radical_geometric_mesh, uniform_degrees
from linalg import export_matrix_market
from problem import DomainSpec, FractionalProblem, problem_from_json, problem_to_json
from queries import get_reference_pairing
from spectral_oracle import energy_pairing

METHODS = ("p1_uniform", "p1_graded", "sparse", "hp_in_y", "hp_full_1d")
REFERENCE_MODES = ("oracle", "exact", "fine_solve")
CSV_COLUMNS = ["level", "h", "M", "q", "N_omega", "N_total", "energy_error", "eoc", "wall_ms"]
OVERRIDE_KEYS = ("Y", "eta", "k", "sigma", "M", "slope", "q", "L", "beta", "sigma_x", "graded")

# sparse 的 y hierarchy：k_ℓ′ = 2^{−(ℓ′ + SPARSE_Y_SHIFT)}，也就是 P1 recipe 的 k = h_ℓ′/2
SPARSE_Y_SHIFT = 1

# fine_solve：比 study 最細層再多兩層；自身誤差需 ≤ 5% 的最粗層誤差平方
FINE_SOLVE_EXTRA_LEVELS = 2
FINE_SOLVE_MAX_RATIO = 0.05
# 多邊形上 eigenfunction ‖φ‖² 的積分網格：bisection 次數
NORM_REFINE_BISECTIONS = 12
CSV_FLOAT_FORMAT = "%.12g"


# -----------------------------
# helpers
# -----------------------------
def fmt(dt: datetime) -> str:
    return dt.strftime("%Y-%m-%d %H:%M:%S")


def log(msg: str):
    print(f"[{fmt(datetime.now())}] {msg}", flush=True)


def parse_levels(v) -> Tuple[int, int]:
    """'a..b' / [a, b] / 單一整數。"""
    try:
        if isinstance(v, str):
            if ".." in v:
                a, b = v.split("..", 1)
                lv = (int(a), int(b))
            else:
                lv = (int(v), int(v))
        elif isinstance(v, (list, tuple)) and len(v) == 2:
            lv = (int(v[0]), int(v[1]))
        elif isinstance(v, int) and not isinstance(v, bool):
            lv = (v, v)
        else:
            raise ValueError(v)
    except (TypeError, ValueError) as e:
        raise SpecError(f"levels 格式錯誤：{v!r}（需要 'a..b' 或 [a, b]）") from e
    if lv[0] < 0 or lv[1] < lv[0]:
        raise SpecError(f"levels 必須 0 ≤ a ≤ b：{lv}")
    return lv


# ============================================================
# StudySpec
# ============================================================
@dataclass(frozen=True)
class StudySpec:
    name: str
    problem: FractionalProblem
    problem_json: Dict[str, Any] = field(repr=False)
    method: str = "p1_uniform"
    levels: Tuple[int, int] = (2, 5)
    reference: Any = "oracle"
    overrides: Dict[str, Any] = field(default_factory=dict)
    out: Optional[str] = None
    jobs: int = 1
    record_timing: bool = True

    @property
    def level_list(self) -> List[int]:
        return list(range(self.levels[0], self.levels[1] + 1))

    def to_json(self) -> str:
        return json.dumps({
            "name": self.name,
            "problem": self.problem_json,
            "method": self.method,
            "levels": list(self.levels),
            "reference": self.reference,
            "overrides": self.overrides,
            "out": self.out,
            "jobs": self.jobs,
            "record_timing": self.record_timing,
        }, ensure_ascii=False, sort_keys=True)


def _oracle_available(problem: FractionalProblem) -> bool:
    return problem.domain.kind in ("interval", "rectangle") and problem.coefficients.constant_scalar() is not None


def sparse_y_step(level: int) -> float:
    """sparse 組合中與 Ω 第 level 層配對的 y 網格步長 k。"""
    return 2.0 ** (-(int(level) + SPARSE_Y_SHIFT))


def validate_spec(spec: StudySpec):
    if spec.method not in METHODS:
        raise SpecError(f"未知的 method：{spec.method}（可用：{', '.join(METHODS)}）")
    dom = spec.problem.domain
    if spec.method == "hp_full_1d":
        if dom.kind != "interval":
            raise SpecError("hp_full_1d 只支援 interval")
        if spec.levels[0] < 1:
            raise SpecError("hp_full_1d 的 level（= q = M）必須 ≥ 1")
    ref = spec.reference
    if isinstance(ref, dict):
        if "pairing" not in ref:
            raise SpecError("reference 物件需要 'pairing' 欄位")
    elif ref == "oracle":
        if not _oracle_available(spec.problem):
            raise SpecError("reference=oracle 需要 interval / rectangle 與常數等向係數")
    elif ref == "exact":
        if spec.problem.forcing.kind != "eigenfunction":
            raise SpecError("reference=exact 需要 eigenfunction forcing")
    elif ref == "fine_solve":
        pass
    else:
        raise SpecError(f"未知的 reference：{ref!r}")
    unknown = set(spec.overrides) - set(OVERRIDE_KEYS)
    if unknown:
        raise SpecError(f"未知的 overrides：{sorted(unknown)}")
    if not isinstance(spec.overrides.get("graded", False), bool):
        raise SpecError("overrides.graded 必須是 true / false")
    if spec.overrides.get("graded") and spec.method != "sparse":
        raise SpecError("overrides.graded 只用於 sparse（其他 method 用 p1_graded / p1_uniform 選擇）")
    if int(spec.jobs) < 1:
        raise SpecError(f"jobs 必須 ≥ 1：{spec.jobs}")


def _normalize_reference(ref):
    if isinstance(ref, (int, float)) and not isinstance(ref, bool):
        return {"pairing": float(ref)}
    if isinstance(ref, str):
        try:
            return {"pairing": float(ref)}
        except ValueError:
            return ref
    return ref


def load_study_spec(path, method: Optional[str] = None, levels=None, s: Optional[float] = None,
                    out: Optional[str] = None, jobs: Optional[int] = None, reference=None) -> StudySpec:
    """讀 JSON；有給的 flag 覆寫檔案值，檔案沒寫的用預設值。"""
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise SpecError(f"找不到 study 檔案：{p}") from e
    except json.JSONDecodeError as e:
        raise SpecError(f"study JSON 格式錯誤：{e}") from e
    if not isinstance(data, dict):
        raise SpecError("study JSON 必須是 object")
    return spec_from_dict(data, base_dir=p.parent, method=method, levels=levels, s=s, out=out,
                          jobs=jobs, reference=reference)


def spec_from_dict(data: Dict[str, Any], base_dir: Optional[Path] = None, method=None, levels=None, s=None,
                   out=None, jobs=None, reference=None) -> StudySpec:
    pj = data.get("problem")
    if isinstance(pj, str):
        ppath = Path(pj)
        if not ppath.is_absolute() and base_dir is not None:
            ppath = base_dir / ppath
        try:
            pj = json.loads(ppath.read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise SpecError(f"找不到 problem 檔案：{ppath}") from e
        except json.JSONDecodeError as e:
            raise SpecError(f"problem JSON 格式錯誤：{e}") from e
    if not isinstance(pj, dict):
        raise SpecError("study 缺少 problem")
    pj = dict(pj)
    if s is not None:
        pj["s"] = float(s)
    problem = problem_from_json(pj)

    overrides = data.get("overrides") or {}
    if not isinstance(overrides, dict):
        raise SpecError("overrides 必須是 object")
    spec = StudySpec(
        name=str(data.get("name") or "study"),
        problem=problem,
        problem_json=problem_to_json(problem),
        method=str(method or data.get("method") or "p1_uniform"),
        levels=parse_levels(levels if levels is not None else data.get("levels", [2, 5])),
        reference=_normalize_reference(reference if reference is not None else data.get("reference", "oracle")),
        overrides=dict(overrides),
        out=out if out is not None else data.get("out"),
        jobs=int(jobs if jobs is not None else data.get("jobs", 1)),
        record_timing=bool(data.get("record_timing", True)),
    )
    validate_spec(spec)
    return spec


# ============================================================
# 每個 level 的離散化
# ============================================================
@dataclass
class LevelResult:
    solution: Any                       # ExtensionSolution | SparseSolution
    h: float
    M: int
    q: int
    N_omega: int
    N_total: int
    matrices: Dict[str, Any] = field(default_factory=dict, repr=False)


def _betas_with_override(domain: DomainSpec, beta) -> Tuple[float, ...]:
    """override 的 β 套用到 re-entrant 角點（ω > π），其餘角點為 0。"""
    if beta is None:
        return default_betas(domain)
    angles = domain.as_polygon().angles
    return tuple(float(beta) if w > math.pi + 1e-12 else 0.0 for w in angles)


def _p1_omega_space(problem: FractionalProblem, h: float, graded: bool, overrides: dict, cache: dict):
    dom = problem.domain
    if dom.kind == "interval":
        a, b = dom.bounds
        return uniform_interval_space(dom, int(math.ceil((b - a) / h - 1e-9)), q=1)
    key = "graded" if graded else "uniform"
    start = cache.get(("mesh", key))
    if start is not None and start.h_target < h:
        start = None
    if graded:
        mesh = graded_triangulation(dom, h, _betas_with_override(dom, overrides.get("beta")), start=start)
    else:
        mesh = uniform_triangulation(dom, h, start=start)
    cache[("mesh", key)] = mesh
    return P1Space(mesh)


def _radical_y_space(problem: FractionalProblem, h: float, overrides: dict):
    choice = choose_truncation(h, "P1", problem.s, overrides=overrides)
    ymesh = radical_geometric_mesh(choice.eta, choice.k, choice.Y)
    return YSpace(ymesh, uniform_degrees(ymesh.n_elements, 1)), choice


def _hp_y_space(choice):
    ymesh = geometric_mesh(choice.sigma, choice.M, choice.Y)
    return YSpace(ymesh, linear_degrees(choice.M, choice.slope))


async def solve_level(problem: FractionalProblem, method: str, level: int, overrides: Optional[dict] = None,
                      jobs: int = 1, cache: Optional[dict] = None, keep_matrices: bool = False) -> LevelResult:
    overrides = overrides or {}
    cache = {} if cache is None else cache
    h = 2.0 ** (-int(level))

    if method in ("p1_uniform", "p1_graded"):
        omega = _p1_omega_space(problem, h, method == "p1_graded", overrides, cache)
        yspace, _ = _radical_y_space(problem, h, overrides)
        sol = await solve_diagonalized_async(problem, omega, yspace, jobs=jobs)
        res = LevelResult(sol, h=omega.h if problem.domain.dim == 1 else h, M=yspace.mesh.n_elements, q=1,
                          N_omega=omega.ndof, N_total=sol.n_total)

    elif method == "hp_in_y":
        omega = _p1_omega_space(problem, h, True, overrides, cache)
        choice = choose_truncation(h, "HPinY", problem.s, overrides=overrides)
        yspace = _hp_y_space(choice)
        sol = await solve_diagonalized_async(problem, omega, yspace, jobs=jobs)
        res = LevelResult(sol, h=omega.h if problem.domain.dim == 1 else h, M=choice.M, q=yspace.q_max,
                          N_omega=omega.ndof, N_total=sol.n_total)

    elif method == "hp_full_1d":
        if problem.domain.kind != "interval":
            raise SpecError("hp_full_1d 只支援 interval")
        choice = choose_truncation(h, "hp_full_1d", problem.s, level=level, overrides=overrides)
        yspace = _hp_y_space(choice)
        diag = diagonalize(yspace, problem.order.alpha)
        if overrides.get("L") is not None:
            eps = choice.sigma_x ** int(overrides["L"])
        else:
            # ε_min² = 𝒴(𝔰M)⁻²σ^M 是 a = 1 的尺度；常數 a 時乘上 √a
            pair = problem.coefficients.constant_scalar()
            a_min = pair[0] if pair else 1.0
            eps = min(1.0, choice.epsilon_min * math.sqrt(a_min))
        omega = hp_interval_space(problem.domain, eps, choice.q, choice.sigma_x)
        sol = await solve_diagonalized_async(problem, omega, yspace, jobs=jobs, diag=diag)
        res = LevelResult(sol, h=omega.h, M=choice.M, q=choice.q, N_omega=omega.ndof, N_total=sol.n_total)

    elif method == "sparse":
        L = int(level)
        graded = bool(overrides.get("graded", False))
        finest = choose_truncation(2.0 ** (-L), "P1", problem.s, overrides=overrides)
        omegas = []
        for l in range(L + 1):
            cached = cache.get(("sparse_omega", graded, l))
            if cached is None:
                cached = _p1_omega_space(problem, 2.0 ** (-l), graded, overrides, cache)
                cache[("sparse_omega", graded, l)] = cached
            omegas.append(cached)
        yspaces = []
        for l in range(L + 1):
            ym = radical_geometric_mesh(finest.eta, sparse_y_step(l), finest.Y)
            yspaces.append(YSpace(ym, uniform_degrees(ym.n_elements, 1)))
        sol = await solve_sparse_combination_async(problem, omegas, yspaces, L, jobs=jobs)
        omega, yspace = omegas[L], yspaces[L]
        res = LevelResult(sol, h=h, M=yspace.mesh.n_elements, q=1, N_omega=omega.ndof, N_total=sol.n_total)

    else:
        raise SpecError(f"未知的 method：{method}")

    if keep_matrices:
        A, Mo = assemble_omega(omega, problem.coefficients)
        S_y, M_y = assemble_weighted(yspace, problem.order.alpha)
        res.matrices = {"A_omega": A, "M_omega": Mo, "S_y": S_y, "M_y": M_y}
        if isinstance(omega, P1Space):
            res.matrices["mesh"] = omega.mesh
    return res


# ============================================================
# reference pairing
# ============================================================
def eigenfunction_norm_sq(problem: FractionalProblem) -> float:
    """‖Π sin(m_i π x_i)‖²_{L²(Ω)}。"""
    f = problem.forcing
    dom = problem.domain
    if dom.kind == "interval":
        a, b = dom.bounds
        m = f.modes[0]
        return quad(lambda x: math.sin(m * math.pi * x) ** 2, a, b, limit=200, epsabs=1e-14)[0]
    if dom.kind == "rectangle":
        ax, bx, ay, by = dom.bounds
        mx, my = f.modes
        ix = quad(lambda x: math.sin(mx * math.pi * x) ** 2, ax, bx, limit=200, epsabs=1e-14)[0]
        iy = quad(lambda y: math.sin(my * math.pi * y) ** 2, ay, by, limit=200, epsabs=1e-14)[0]
        return ix * iy
    mesh = refine_uniform(coarse_triangulation(dom), NORM_REFINE_BISECTIONS)
    return P1Space(mesh).integrate(lambda p: f.sine_product(p) ** 2)


def exact_pairing(problem: FractionalProblem) -> float:
    """eigenfunction forcing：u = λ^{−s} f，d_s⟨f,u⟩ = d_s λ^{−s} scale² ‖φ‖²。"""
    lam = problem.eigenvalue()
    scale = problem.forcing.scale
    return problem.order.d_s * lam ** (-problem.s) * scale * scale * eigenfunction_norm_sq(problem)


def reference_key(spec: StudySpec) -> str:
    top = spec.levels[1] + FINE_SOLVE_EXTRA_LEVELS
    raw = json.dumps({"problem": spec.problem_json, "method": "hp_in_y", "level": top,
                      "overrides": {k: v for k, v in spec.overrides.items() if k in ("beta",)}},
                     sort_keys=True, ensure_ascii=False)
    return hashlib.sha1(raw.encode("utf-8")).hexdigest()


async def fine_solve_reference(spec: StudySpec, jobs: int = 1) -> Tuple[float, float, int]:
    """hp_in_y 在最細 study level + 1、+ 2 各解一次；自身誤差估為 |p(L+2) − p(L+1)|/3。"""
    top = spec.levels[1] + FINE_SOLVE_EXTRA_LEVELS
    cache: dict = {}
    beta_only = {k: v for k, v in spec.overrides.items() if k == "beta"}
    lo = await solve_level(spec.problem, "hp_in_y", top - 1, beta_only, jobs=jobs, cache=cache)
    hi = await solve_level(spec.problem, "hp_in_y", top, beta_only, jobs=jobs, cache=cache)
    p1, p2 = lo.solution.pairing(), hi.solution.pairing()
    return p2, abs(p2 - p1) / 3.0, top


async def resolve_reference(spec: StudySpec, db_path: Optional[str], say: Callable[[str], None]) -> Tuple[float, float]:
    """回傳 (reference pairing, 自身誤差估計)。"""
    ref = spec.reference
    p = spec.problem
    if isinstance(ref, dict):
        return float(ref["pairing"]), 0.0
    if ref == "oracle":
        r = energy_pairing(p.domain, p.coefficients, p.forcing, p.order)
        return r.value, r.truncation_estimate
    if ref == "exact":
        return exact_pairing(p), 0.0
    key = reference_key(spec)
    if db_path:
        hit = await get_reference_pairing(key, db_path)
        if hit is not None:
            say(f"reference 使用 ledger 快取 level={hit['level']} value={hit['value']:.12g}")
            return float(hit["value"]), float(hit["self_error"])
    say("計算 fine_solve reference（hp_in_y，最細層 +1/+2）...")
    value, self_err, top = await fine_solve_reference(spec, jobs=spec.jobs)
    if db_path:
        await save_reference_pairing(db_path, key, json.dumps(spec.problem_json, sort_keys=True),
                                     "hp_in_y", top, value, self_err)
    return value, self_err


# ============================================================
# 輸出
# ============================================================
def add_eoc(rows: List[Dict[str, Any]], key: str = "energy_error") -> List[Dict[str, Any]]:
    """eoc = log₂(e_{i−1}/e_i)；第一列或誤差為 0 時為 NaN。"""
    prev = None
    for r in rows:
        e = r[key]
        if prev is None or not (prev > 0 and e > 0):
            r["eoc"] = float("nan")
        else:
            r["eoc"] = math.log2(prev / e)
        prev = e
    return rows


def rows_to_frame(rows: List[Dict[str, Any]]) -> pd.DataFrame:
    df = pd.DataFrame(rows, columns=CSV_COLUMNS)
    for c in ("level", "M", "q", "N_omega", "N_total"):
        df[c] = df[c].astype("int64")
    return df


def write_outputs(df: pd.DataFrame, out) -> Tuple[Path, Path]:
    p = Path(out)
    p.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(p, index=False, float_format=CSV_FLOAT_FORMAT, na_rep="", lineterminator="\n")
    dat = p.with_suffix(".dat")
    body = df.to_csv(sep=" ", index=False, header=False, float_format=CSV_FLOAT_FORMAT,
                     na_rep="NaN", lineterminator="\n")
    dat.write_text("# " + " ".join(CSV_COLUMNS) + "\n" + body, encoding="utf-8")
    return p, dat


def dump_matrices(dump_dir, level: int, matrices: Dict[str, Any]):
    d = Path(dump_dir)
    for name, A in matrices.items():
        if isinstance(A, TriMesh):
            export_off(A, d / f"level{level}_{name}.off")
            continue
        export_matrix_market(d / f"level{level}_{name}.mtx", A, comment=f"level {level} {name}")


# ============================================================
# run_study
# ============================================================
async def run_study(spec: StudySpec, db_path: Optional[str] = DB_PATH, dump_dir=None,
                    quiet: bool = False) -> pd.DataFrame:
    """
    依序跑每個 level（計時不含檔案輸出），回傳與 CSV 相同欄位的 DataFrame。
    失敗時例外帶 level（ReferenceInconsistencyError）並在 ledger 記錄 reason。
    """
    def say(msg: str):
        if not quiet:
            log(msg)

    t0 = time.perf_counter()
    if db_path:
        await init_db(db_path)
    print("=" * 72, flush=True)
    log(f"study={spec.name} method={spec.method} s={spec.problem.s} levels={spec.levels[0]}..{spec.levels[1]} "
        f"reference={spec.reference} jobs={spec.jobs}")

    run_id = None
    rows: List[Dict[str, Any]] = []
    current_level = None
    try:
        ref, ref_err = await resolve_reference(spec, db_path, say)
        say(f"reference pairing = {ref:.15g}（估計誤差 {ref_err:.3e}）")
        if db_path:
            run_id = await insert_study_run(db_path, spec.name, spec.method, spec.problem.s,
                                            json.dumps(spec.problem_json, sort_keys=True), spec.to_json(), ref)
        cache: dict = {}
        levels = spec.level_list
        for i, level in enumerate(levels, 1):
            current_level = level
            t_level = time.perf_counter()
            res = await solve_level(spec.problem, spec.method, level, spec.overrides, jobs=spec.jobs,
                                    cache=cache, keep_matrices=dump_dir is not None)
            e2 = energy_error_squared(spec.problem, ref, res.solution)
            wall_ms = (time.perf_counter() - t_level) * 1000.0 if spec.record_timing else 0.0
            if dump_dir is not None:
                dump_matrices(dump_dir, level, res.matrices)
            rows.append({
                "level": level, "h": res.h, "M": res.M, "q": res.q,
                "N_omega": res.N_omega, "N_total": res.N_total,
                "energy_error": math.sqrt(max(e2, 0.0)), "eoc": float("nan"), "wall_ms": wall_ms,
            })
            add_eoc(rows)
            r = rows[-1]
            eoc_s = "-" if math.isnan(r["eoc"]) else f"{r['eoc']:.3f}"
            say(f"level {i}/{len(levels)} (ℓ={level}) | N_omega={r['N_omega']} | N_total={r['N_total']} | "
                f"err={r['energy_error']:.4e} | eoc={eoc_s}")

        if spec.reference == "fine_solve" and rows:
            coarse_e2 = rows[0]["energy_error"] ** 2
            if ref_err > FINE_SOLVE_MAX_RATIO * coarse_e2:
                raise ReferenceInconsistencyError(
                    f"fine_solve reference 自身誤差 {ref_err:.3e} > {FINE_SOLVE_MAX_RATIO:.0%} 最粗層誤差平方 {coarse_e2:.3e}",
                    value=ref_err, level=rows[0]["level"])

    except FracDiffError as e:
        if getattr(e, "level", None) is None:
            e.level = current_level
        elapsed = time.perf_counter() - t0
        if db_path and run_id is not None:
            if rows:
                await insert_study_rows(db_path, run_id, rows)
            await finish_study_run(db_path, run_id, False, reason_code(e), repr(e), elapsed)
        log(f"study 失敗於 level={current_level}：{reason_code(e)} {e}")
        raise
    except Exception:
        if db_path and run_id is not None:
            await finish_study_run(db_path, run_id, False, "exception", traceback.format_exc(),
                                   time.perf_counter() - t0)
        raise

    df = rows_to_frame(rows)
    if spec.out:
        csv_path, dat_path = write_outputs(df, spec.out)
        say(f"輸出 {csv_path} / {dat_path}")
    elapsed = time.perf_counter() - t0
    if db_path and run_id is not None:
        await insert_study_rows(db_path, run_id, rows)
        await finish_study_run(db_path, run_id, True, "ok", None, elapsed)
    log(f"完成 study={spec.name}：{len(rows)} levels，耗時 {elapsed:.1f}s")
    return df


# ============================================================
# boundary profile 與擬合
# ============================================================
def boundary_profile(problem: FractionalProblem, sol, distances: Sequence[float]) -> pd.DataFrame:
    """在左端點 a 附近取 tr 𝒰(a + d)，回傳 (dist, value)。"""
    if problem.domain.kind != "interval":
        raise ParameterError("boundary_profile 只支援一維問題")
    if not isinstance(sol, ExtensionSolution):
        raise ParameterError("boundary_profile 需要單一 ExtensionSolution（不是 sparse 組合）")
    a, b = problem.domain.bounds
    d = np.asarray(list(distances), dtype=float)
    if np.any(d <= 0) or np.any(d >= b - a):
        raise ParameterError("distances 必須在 (0, b−a) 內")
    vals = sol.trace_at(a + d)
    return pd.DataFrame({"dist": d, "value": vals})


def fit_loglog_slope(xs, ys) -> float:
    x = np.log(np.asarray(xs, dtype=float))
    y = np.log(np.abs(np.asarray(ys, dtype=float)))
    return float(np.polyfit(x, y, 1)[0])


def fit_exponential_rate(ns, errs) -> Tuple[float, float]:
    """log(err) ≈ c − b·n；回傳 (b, R²)。"""
    n = np.asarray(ns, dtype=float)
    y = np.log(np.asarray(errs, dtype=float))
    slope, icpt = np.polyfit(n, y, 1)
    pred = slope * n + icpt
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(-slope), r2
