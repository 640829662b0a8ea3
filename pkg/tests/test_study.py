import asyncio
import json
import math
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

import study
from errors import ParameterError, ReferenceInconsistencyError, SpecError
from extension_solver import SparseSolution, choose_truncation
from fem_omega import boundary_layer_count, is_nested
from problem import problem_from_json
from queries import get_reference_pairing
from study import (
    CSV_COLUMNS,
    add_eoc,
    boundary_profile,
    exact_pairing,
    fit_exponential_rate,
    fit_loglog_slope,
    load_study_spec,
    parse_levels,
    reference_key,
    resolve_reference,
    rows_to_frame,
    run_study,
    solve_level,
    spec_from_dict,
    write_outputs,
)

INTERVAL_CONST = {
    "s": 0.5,
    "domain": {"kind": "interval", "a": 0, "b": 1},
    "forcing": {"kind": "constant", "value": 1.0},
}
LSHAPE_CONST = {"s": 0.75, "domain": {"kind": "l_shape"}, "forcing": {"kind": "constant", "value": 1.0}}


def interval_spec(**kw):
    data = {"name": "t", "problem": INTERVAL_CONST, "method": "p1_uniform", "levels": [2, 4]}
    data.update(kw)
    return spec_from_dict(data)


# ---------- levels ----------
@pytest.mark.parametrize("raw, expected", [("2..5", (2, 5)), ([3, 4], (3, 4)), (4, (4, 4)), ("6", (6, 6))])
def test_parse_levels(raw, expected):
    assert parse_levels(raw) == expected


@pytest.mark.parametrize("raw", ["a..b", "5..2", -1, True, [1, 2, 3], None, "1...3"])
def test_parse_levels_rejects(raw):
    with pytest.raises(SpecError):
        parse_levels(raw)


# ---------- StudySpec ----------
def test_spec_defaults_and_flags():
    spec = spec_from_dict({"problem": INTERVAL_CONST})
    assert spec.name == "study"
    assert spec.method == "p1_uniform" and spec.levels == (2, 5)
    assert spec.reference == "oracle" and spec.jobs == 1
    spec2 = spec_from_dict({"problem": INTERVAL_CONST, "method": "hp_in_y"}, method="sparse", levels="1..3",
                           s=0.25, jobs=2, reference="0.125")
    assert spec2.method == "sparse"
    assert spec2.level_list == [1, 2, 3]
    assert spec2.problem.s == 0.25
    assert spec2.reference == {"pairing": 0.125}
    assert json.loads(spec2.to_json())["problem"]["s"] == 0.25


@pytest.mark.parametrize("data", [
    {"problem": INTERVAL_CONST, "method": "fem"},
    {"problem": LSHAPE_CONST, "reference": "oracle"},
    {"problem": INTERVAL_CONST, "reference": "exact"},
    {"problem": INTERVAL_CONST, "reference": {"value": 1.0}},
    {"problem": INTERVAL_CONST, "reference": "guess"},
    {"problem": INTERVAL_CONST, "overrides": {"gamma": 1}},
    {"problem": INTERVAL_CONST, "overrides": [1, 2]},
    {"problem": INTERVAL_CONST, "jobs": 0},
    {"problem": LSHAPE_CONST, "method": "hp_full_1d", "reference": "fine_solve"},
    {"problem": INTERVAL_CONST, "method": "hp_full_1d", "levels": [0, 3]},
    {"problem": INTERVAL_CONST, "method": "sparse", "overrides": {"graded": "yes"}},
    {"problem": LSHAPE_CONST, "method": "p1_uniform", "overrides": {"graded": True}},
    {"name": "no problem"},
])
def test_spec_validation(data):
    with pytest.raises(SpecError):
        spec_from_dict(data)


def test_fine_solve_allowed_on_lshape():
    spec = spec_from_dict({"problem": LSHAPE_CONST, "reference": "fine_solve", "method": "p1_graded"})
    assert spec.reference == "fine_solve"


def test_load_study_spec_resolves_problem_path(tmp_path):
    (tmp_path / "p.json").write_text(json.dumps(INTERVAL_CONST), encoding="utf-8")
    sp = tmp_path / "study.json"
    sp.write_text(json.dumps({"name": "x", "problem": "p.json", "levels": "2..3"}), encoding="utf-8")
    spec = load_study_spec(sp, out=str(tmp_path / "o.csv"))
    assert spec.problem.domain.kind == "interval"
    assert spec.levels == (2, 3)
    assert spec.out.endswith("o.csv")


def test_load_study_spec_errors(tmp_path):
    with pytest.raises(SpecError):
        load_study_spec(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2", encoding="utf-8")
    with pytest.raises(SpecError):
        load_study_spec(bad)
    arr = tmp_path / "arr.json"
    arr.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(SpecError):
        load_study_spec(arr)
    ref = tmp_path / "ref.json"
    ref.write_text(json.dumps({"problem": "nowhere.json"}), encoding="utf-8")
    with pytest.raises(SpecError):
        load_study_spec(ref)


def test_bundled_study_files_parse():
    root = Path(__file__).resolve().parent.parent / "studies"
    for path in sorted(root.glob("*.json")):
        if path.name.endswith("_problem.json"):
            continue
        spec = load_study_spec(path)
        assert spec.out is not None


# ---------- reference ----------
def test_exact_pairing_interval():
    p = problem_from_json({"s": 0.5, "domain": {"kind": "interval", "a": 0, "b": 1},
                           "forcing": {"kind": "eigenfunction", "modes": [1], "scale": 1.0}})
    assert exact_pairing(p) == pytest.approx(0.5 / math.pi, rel=1e-12)


def test_exact_pairing_lshape_auto_scale():
    p = problem_from_json({"s": 0.3, "domain": {"kind": "l_shape"},
                           "forcing": {"kind": "eigenfunction", "modes": [1, 1], "scale": "auto"}})
    lam = 2 * math.pi ** 2
    expected = p.order.d_s * lam ** 0.3 * 0.75
    assert exact_pairing(p) == pytest.approx(expected, rel=1e-8)


def test_exact_and_oracle_agree_on_interval():
    data = {"s": 0.3, "domain": {"kind": "interval", "a": 0, "b": 1},
            "forcing": {"kind": "eigenfunction", "modes": [2], "scale": 1.0}}
    a = spec_from_dict({"problem": data, "reference": "exact"})
    b = spec_from_dict({"problem": data, "reference": "oracle"})
    ra, _ = asyncio.run(resolve_reference(a, None, lambda m: None))
    rb, est = asyncio.run(resolve_reference(b, None, lambda m: None))
    assert ra == pytest.approx(rb, rel=1e-10)
    assert est < 1e-10


def test_reference_key_depends_on_problem_and_top_level():
    a = interval_spec()
    b = interval_spec(method="hp_in_y", levels=[3, 4])
    c = interval_spec(levels=[2, 5])
    d = spec_from_dict({"problem": {**INTERVAL_CONST, "s": 0.25}, "levels": [2, 4]})
    assert reference_key(a) == reference_key(b)
    assert reference_key(a) != reference_key(c)
    assert reference_key(a) != reference_key(d)
    assert len(reference_key(a)) == 40


def test_fine_solve_reference_is_cached(tmp_path):
    db_path = str(tmp_path / "ledger.db")
    spec = interval_spec(reference="fine_solve", levels=[1, 2])
    asyncio.run(study.init_db(db_path))
    v1, e1 = asyncio.run(resolve_reference(spec, db_path, lambda m: None))
    hit = asyncio.run(get_reference_pairing(reference_key(spec), db_path))
    assert hit is not None and hit["level"] == 4 and hit["method"] == "hp_in_y"
    assert hit["value"] == pytest.approx(v1)
    said = []
    v2, e2 = asyncio.run(resolve_reference(spec, db_path, said.append))
    assert v2 == pytest.approx(v1) and e2 == pytest.approx(e1)
    assert any("快取" in m for m in said)
    oracle = asyncio.run(resolve_reference(interval_spec(), None, lambda m: None))[0]
    assert v1 <= oracle * (1 + 1e-12)
    assert abs(v1 - oracle) < 0.1 * oracle


# ---------- solve_level ----------
def test_solve_level_p1_interval():
    p = problem_from_json(INTERVAL_CONST)
    res = asyncio.run(solve_level(p, "p1_uniform", 3))
    assert res.h == pytest.approx(1 / 8)
    assert res.N_omega == 7 and res.q == 1
    assert res.N_total == res.N_omega * res.solution.diag.y_space.ndof


def test_solve_level_hp_full_1d():
    p = problem_from_json(INTERVAL_CONST)
    res = asyncio.run(solve_level(p, "hp_full_1d", 3))
    assert res.M == 3 and res.q == 3
    assert res.solution.omega_space.q == 3
    res_L = asyncio.run(solve_level(p, "hp_full_1d", 3, overrides={"L": 2}))
    assert res_L.solution.omega_space.layers == 2


def test_solve_level_sparse():
    p = problem_from_json(INTERVAL_CONST)
    res = asyncio.run(solve_level(p, "sparse", 2))
    assert isinstance(res.solution, SparseSolution)
    assert res.solution.n_solves == 5


def test_solve_level_hp_full_1d_layers_follow_truncation():
    p = problem_from_json({**INTERVAL_CONST, "s": 0.25})
    for level in (3, 6, 9):
        res = asyncio.run(solve_level(p, "hp_full_1d", level))
        choice = choose_truncation(0.5, "hp_full_1d", 0.25, level=level)
        assert res.solution.omega_space.layers == boundary_layer_count(choice.epsilon_min, choice.sigma_x)
        assert math.isfinite(res.solution.pairing())


def test_sparse_pairs_omega_and_y_levels():
    p = problem_from_json(INTERVAL_CONST)
    res = asyncio.run(solve_level(p, "sparse", 3))
    for c in res.solution.components:
        k = dict(c.solution.diag.y_space.mesh.params)["k"]
        assert k == pytest.approx(2.0 ** -(c.y_level + 1))
        assert c.solution.omega_space.h == pytest.approx(2.0 ** -c.omega_level)
        assert c.omega_level + c.y_level in (3, 2)


def test_sparse_graded_hierarchy_on_lshape():
    p = problem_from_json(LSHAPE_CONST)
    cache: dict = {}
    graded = asyncio.run(solve_level(p, "sparse", 3, overrides={"graded": True, "beta": 0.5}, cache=cache))
    uniform = asyncio.run(solve_level(p, "sparse", 3, cache=cache))
    meshes = {c.omega_level: c.solution.omega_space.mesh for c in graded.solution.components}
    assert max(meshes[3].betas) == pytest.approx(0.5)
    assert all(is_nested(meshes[l], meshes[l + 1]) for l in range(3))
    assert graded.N_omega > uniform.N_omega
    assert math.isfinite(graded.solution.pairing())


def test_solve_level_keeps_matrices(tmp_path):
    p = problem_from_json(LSHAPE_CONST)
    res = asyncio.run(solve_level(p, "p1_uniform", 1, keep_matrices=True))
    assert {"A_omega", "M_omega", "S_y", "M_y", "mesh"} <= set(res.matrices)
    study.dump_matrices(tmp_path, 1, res.matrices)
    names = sorted(f.name for f in tmp_path.iterdir())
    assert "level1_mesh.off" in names and "level1_A_omega.mtx" in names


def test_solve_level_rejects():
    with pytest.raises(SpecError):
        asyncio.run(solve_level(problem_from_json(INTERVAL_CONST), "fem", 2))
    with pytest.raises(SpecError):
        asyncio.run(solve_level(problem_from_json(LSHAPE_CONST), "hp_full_1d", 2))


def test_beta_override_hits_reentrant_corner_only(lshape):
    betas = study._betas_with_override(lshape, 0.3)
    assert sorted(betas) == [0.0] * 5 + [0.3]


# ---------- 輸出 ----------
def test_add_eoc():
    rows = add_eoc([{"energy_error": e} for e in (1.0, 0.5, 0.125, 0.0)])
    assert math.isnan(rows[0]["eoc"])
    assert rows[1]["eoc"] == pytest.approx(1.0)
    assert rows[2]["eoc"] == pytest.approx(2.0)
    assert math.isnan(rows[3]["eoc"])


def _rows():
    rows = [
        {"level": 2, "h": 0.25, "M": 5, "q": 1, "N_omega": 3, "N_total": 15, "energy_error": 0.1, "wall_ms": 1.5},
        {"level": 3, "h": 0.125, "M": 9, "q": 1, "N_omega": 7, "N_total": 63, "energy_error": 0.05, "wall_ms": 2.5},
    ]
    return add_eoc(rows)


def test_write_outputs(tmp_path):
    df = rows_to_frame(_rows())
    assert list(df.columns) == CSV_COLUMNS
    assert df["N_total"].dtype == np.int64
    csv_path, dat_path = write_outputs(df, tmp_path / "out" / "r.csv")
    lines = csv_path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert lines[1].split(",")[7] == ""
    assert lines[2].split(",")[7] == "1"
    dat = dat_path.read_text(encoding="utf-8").splitlines()
    assert dat[0] == "# " + " ".join(CSV_COLUMNS)
    assert dat[1].split()[7] == "NaN"
    assert len(dat) == 3
    back = pd.read_csv(csv_path)
    assert back["N_total"].tolist() == [15, 63]


# ---------- run_study ----------
def test_run_study_interval(tmp_path):
    spec = interval_spec(out=str(tmp_path / "res.csv"), record_timing=False)
    df = asyncio.run(run_study(spec, db_path=None, quiet=True))
    assert df["level"].tolist() == [2, 3, 4]
    err = df["energy_error"].to_numpy()
    assert np.all(np.diff(err) < 0)
    assert np.all(df["wall_ms"] == 0.0)
    assert (tmp_path / "res.csv").exists() and (tmp_path / "res.dat").exists()
    assert np.all(df["eoc"].iloc[1:] > 0.3)


def test_run_study_inconsistent_reference_reports_level():
    spec = interval_spec(reference={"pairing": 1e-6})
    with pytest.raises(ReferenceInconsistencyError) as ei:
        asyncio.run(run_study(spec, db_path=None, quiet=True))
    assert ei.value.level == 2


# ---------- boundary profile / 擬合 ----------
def test_boundary_profile():
    p = problem_from_json(INTERVAL_CONST)
    res = asyncio.run(solve_level(p, "p1_uniform", 5))
    table = boundary_profile(p, res.solution, [0.01, 0.1, 0.5])
    assert list(table.columns) == ["dist", "value"]
    assert np.all(np.diff(table["value"].to_numpy()) > 0)
    with pytest.raises(ParameterError):
        boundary_profile(p, res.solution, [0.0, 0.1])
    with pytest.raises(ParameterError):
        boundary_profile(p, res.solution, [1.0])
    sparse = asyncio.run(solve_level(p, "sparse", 1))
    with pytest.raises(ParameterError):
        boundary_profile(p, sparse.solution, [0.1])
    lp = problem_from_json(LSHAPE_CONST)
    with pytest.raises(ParameterError):
        boundary_profile(lp, res.solution, [0.1])


def test_fits():
    xs = np.array([1e-3, 1e-2, 1e-1])
    assert fit_loglog_slope(xs, 3 * xs ** 1.5) == pytest.approx(1.5)
    ns = np.arange(1, 7)
    b, r2 = fit_exponential_rate(ns, 2.0 * np.exp(-0.7 * ns))
    assert b == pytest.approx(0.7)
    assert r2 == pytest.approx(1.0)
