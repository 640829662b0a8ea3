import math

import numpy as np
import pytest

import extension_solver
from errors import DomainError, ParameterError, ReferenceInconsistencyError, ResourceError
from extension_solver import (
    SparseSolution,
    check_hierarchies,
    choose_truncation,
    combination_indices,
    diagonalize,
    eigenvalue_window,
    energy_error_squared,
    solve_diagonalized,
    solve_full_tensor_direct,
    solve_sparse_combination,
    sup_norm_eigvecs,
)
from fem_omega import P1Space, coarse_triangulation, hp_interval_space, refine_uniform, uniform_interval_space
from fem_y import YSpace, geometric_mesh, linear_degrees, radical_geometric_mesh, uniform_degrees
from problem import Coefficients, Forcing, FractionalProblem, make_order
from spectral_oracle import energy_pairing


def p1_y_space(s: float, k: float, Y: float) -> YSpace:
    mesh = radical_geometric_mesh(2.0 / s, k, Y)
    return YSpace(mesh, uniform_degrees(mesh.n_elements, 1))


def hp_y_space(M: int, Y: float, sigma: float = 0.2, slope: float = 1.0) -> YSpace:
    return YSpace(geometric_mesh(sigma, M, Y), linear_degrees(M, slope))


def interval_problem(unit_interval, s: float, forcing=None, coeff=None) -> FractionalProblem:
    return FractionalProblem(make_order(s), unit_interval, coeff or Coefficients(),
                             forcing or Forcing.constant(1.0))


# ---------- diagonalization ----------
@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_diagonalize_normalization(s):
    ys = hp_y_space(4, 2.0)
    diag = diagonalize(ys, make_order(s).alpha)
    V = diag.V
    assert np.allclose(V.T @ diag.S @ V, np.eye(diag.n_modes), atol=1e-9)
    assert np.allclose(V.T @ diag.M @ V, np.diag(diag.mu), atol=1e-9)
    assert np.all(diag.mu > 0)
    assert np.all(np.diff(diag.mu) >= 0)
    assert diag.mu[-1] <= diag.mu_upper_bound
    assert np.allclose(diag.trace, V[0])


def test_eigenvector_sup_norm_bound():
    s = 0.3
    alpha = make_order(s).alpha
    ys = p1_y_space(s, 0.25, 2.5)
    diag = diagonalize(ys, alpha)
    bound = diag.Y ** ((1 - alpha) / 2) / math.sqrt(1 - alpha)
    assert sup_norm_eigvecs(diag) <= bound * (1 + 1e-10)


def test_eigenvalue_window_keys():
    ys = hp_y_space(5, 2.0, sigma=0.05, slope=2.0)
    diag = diagonalize(ys, 0.0)
    w = eigenvalue_window(diag, 5, 0.05, 2.0)
    assert set(w) == {"mu_min", "mu_max", "mu_max_over_M2", "mu_min_scaled", "upper_bound", "inverse_estimate"}
    assert w["mu_max"] <= w["upper_bound"]
    assert w["mu_min"] >= 1e-4 * w["inverse_estimate"]
    assert w["mu_max_over_M2"] == pytest.approx(w["mu_max"] / 25)


# ---------- 單一 Galerkin 解 ----------
@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_diagonal_matches_full_tensor_interval(unit_interval, s):
    prob = interval_problem(unit_interval, s)
    omega = uniform_interval_space(unit_interval, 8, q=1)
    ys = p1_y_space(s, 0.25, 2.0)
    a = solve_diagonalized(prob, omega, ys)
    b = solve_full_tensor_direct(prob, omega, ys)
    assert np.allclose(a.U, b.U, rtol=1e-8, atol=1e-12)
    assert a.pairing() == pytest.approx(b.pairing(), rel=1e-9)


def test_diagonal_matches_full_tensor_lshape(lshape):
    prob = FractionalProblem(make_order(0.3), lshape, Coefficients(), Forcing.constant(1.0))
    omega = P1Space(refine_uniform(coarse_triangulation(lshape), 4))
    ys = p1_y_space(0.3, 0.25, 1.5)
    a = solve_diagonalized(prob, omega, ys)
    b = solve_full_tensor_direct(prob, omega, ys)
    assert a.pairing() == pytest.approx(b.pairing(), rel=1e-9)
    assert np.allclose(a.trace(), b.trace(), rtol=1e-8, atol=1e-12)


def test_energy_equals_pairing(unit_interval):
    prob = interval_problem(unit_interval, 0.4, coeff=Coefficients(1.0, 0.5))
    omega = uniform_interval_space(unit_interval, 6, q=2)
    sol = solve_diagonalized(prob, omega, hp_y_space(4, 2.0))
    p = sol.pairing()
    assert p > 0
    assert sol.energy() == pytest.approx(p, rel=1e-9)
    assert sol.tensor_energy() == pytest.approx(p, rel=1e-9)


def test_parallel_modes_are_reproducible(unit_interval):
    prob = interval_problem(unit_interval, 0.5)
    omega = uniform_interval_space(unit_interval, 10, q=1)
    ys = p1_y_space(0.5, 0.25, 2.0)
    a = solve_diagonalized(prob, omega, ys, jobs=1)
    b = solve_diagonalized(prob, omega, ys, jobs=4)
    assert np.array_equal(a.U, b.U)
    assert a.pairing() == b.pairing()


def test_evaluate_at_zero_is_trace(unit_interval):
    prob = interval_problem(unit_interval, 0.5)
    sol = solve_diagonalized(prob, uniform_interval_space(unit_interval, 8), p1_y_space(0.5, 0.25, 2.0))
    vals = sol.evaluate([0.0, sol.diag.Y])
    assert np.allclose(vals[:, 0], sol.trace())
    assert np.allclose(vals[:, 1], 0.0, atol=1e-14)


def test_trace_at_interval_and_rejects_p1(unit_interval, unit_square):
    prob = interval_problem(unit_interval, 0.5)
    sol = solve_diagonalized(prob, uniform_interval_space(unit_interval, 8), p1_y_space(0.5, 0.25, 2.0))
    vals = sol.trace_at(np.array([0.0, 0.5, 1.0]))
    assert vals[0] == pytest.approx(0.0, abs=1e-14) and vals[-1] == pytest.approx(0.0, abs=1e-14)
    assert vals[1] > 0

    prob2 = FractionalProblem(make_order(0.5), unit_square, Coefficients(), Forcing.constant(1.0))
    sol2 = solve_diagonalized(prob2, P1Space(refine_uniform(coarse_triangulation(unit_square), 2)),
                              p1_y_space(0.5, 0.5, 1.0))
    with pytest.raises(ParameterError):
        sol2.trace_at([[0.5, 0.5]])


def test_full_tensor_size_cap(unit_interval, monkeypatch):
    monkeypatch.setattr(extension_solver, "MAX_TENSOR_DOF", 10)
    prob = interval_problem(unit_interval, 0.5)
    with pytest.raises(ResourceError):
        solve_full_tensor_direct(prob, uniform_interval_space(unit_interval, 8), p1_y_space(0.5, 0.25, 2.0))


def test_eigenfunction_trace_approaches_solution(unit_interval):
    s = 0.5
    prob = interval_problem(unit_interval, s, forcing=Forcing.eigenfunction([1]))
    omega = uniform_interval_space(unit_interval, 64, q=2)
    sol = solve_diagonalized(prob, omega, hp_y_space(10, 6.0, sigma=0.15, slope=1.0))
    x = np.array([0.25, 0.5])
    exact = math.pi ** (-2 * s) * math.sqrt(2) * np.sin(math.pi * x)
    assert np.allclose(sol.trace_at(x), exact, rtol=1e-3)


# ---------- 誤差 ----------
def test_galerkin_energy_error_decreases(unit_interval):
    s = 0.5
    prob = interval_problem(unit_interval, s)
    ref = energy_pairing(unit_interval, prob.coefficients, prob.forcing, prob.order).value
    errors = []
    for n in (8, 16, 32):
        h = 1.0 / n
        t = choose_truncation(h, "P1", s)
        mesh = radical_geometric_mesh(t.eta, t.k, t.Y)
        ys = YSpace(mesh, uniform_degrees(mesh.n_elements, 1))
        sol = solve_diagonalized(prob, uniform_interval_space(unit_interval, n), ys)
        e2 = energy_error_squared(prob, ref, sol)
        assert e2 >= 0
        errors.append(math.sqrt(e2))
    assert errors[0] > errors[1] > errors[2]


def test_negative_error_is_rejected(unit_interval):
    prob = interval_problem(unit_interval, 0.5)
    sol = solve_diagonalized(prob, uniform_interval_space(unit_interval, 8), p1_y_space(0.5, 0.25, 2.0))
    p = sol.pairing()
    assert energy_error_squared(prob, p, sol) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ReferenceInconsistencyError):
        energy_error_squared(prob, 0.5 * p, sol)


# ---------- sparse combination ----------
def test_combination_indices():
    assert combination_indices(0) == [(1, 0, 0)]
    idx = combination_indices(2)
    assert idx == [(1, 0, 2), (1, 1, 1), (1, 2, 0), (-1, 0, 1), (-1, 1, 0)]
    for L in range(6):
        idx = combination_indices(L)
        assert len(idx) == 2 * L + 1
        assert sum(sign for sign, _, _ in idx) == 1


def _hierarchies(domain, L: int, s: float = 0.5):
    omegas = [uniform_interval_space(domain, 2 ** (l + 2)) for l in range(L + 1)]
    ys = [p1_y_space(s, 2.0 ** -(l + 1), 2.0) for l in range(L + 1)]
    return omegas, ys


def test_check_hierarchies_errors(unit_interval):
    omegas, ys = _hierarchies(unit_interval, 2)
    check_hierarchies(omegas, ys, 2)
    with pytest.raises(ParameterError):
        check_hierarchies(omegas, ys, -1)
    with pytest.raises(ParameterError):
        check_hierarchies(omegas, ys, 3)
    bad_omega = [omegas[0], uniform_interval_space(unit_interval, 7), omegas[2]]
    with pytest.raises(ParameterError):
        check_hierarchies(bad_omega, ys, 2)
    bad_y = [ys[0], p1_y_space(0.5, 0.25, 3.0), ys[2]]
    with pytest.raises(ParameterError):
        check_hierarchies(omegas, bad_y, 2)


def test_sparse_level_zero_is_single_solve(unit_interval):
    prob = interval_problem(unit_interval, 0.5)
    omegas, ys = _hierarchies(unit_interval, 0)
    sparse = solve_sparse_combination(prob, omegas, ys, 0)
    single = solve_diagonalized(prob, omegas[0], ys[0])
    assert sparse.n_solves == 1
    assert sparse.pairing() == pytest.approx(single.pairing(), rel=1e-13)


def test_sparse_pairing_is_signed_sum(unit_interval):
    prob = interval_problem(unit_interval, 0.5)
    omegas, ys = _hierarchies(unit_interval, 2)
    sparse = solve_sparse_combination(prob, omegas, ys, 2, jobs=2)
    assert isinstance(sparse, SparseSolution)
    assert sparse.n_solves == 5
    expected = 0.0
    for sign, lo, ly in combination_indices(2):
        expected += sign * solve_diagonalized(prob, omegas[lo], ys[ly]).pairing()
    assert sparse.pairing() == pytest.approx(expected, rel=1e-12)
    assert sparse.n_total == sum(c.solution.n_total for c in sparse.components)
    ref = energy_pairing(unit_interval, prob.coefficients, prob.forcing, prob.order).value
    assert energy_error_squared(prob, ref, sparse) == pytest.approx(abs(ref - sparse.pairing()))


# ---------- truncation recipe ----------
def test_choose_truncation_p1():
    t = choose_truncation(1 / 8, "P1", s=0.25)
    assert t.Y == pytest.approx(math.log(8))
    assert t.eta == pytest.approx(8.0)
    assert t.k == pytest.approx(1 / 16)
    assert choose_truncation(0.5, "P1", s=0.5).Y == 1.0


def test_choose_truncation_hp():
    t = choose_truncation(1 / 8, "HPinY")
    assert t.Y == pytest.approx(1.0)
    assert t.M == 4 and t.sigma == 0.05 and t.slope == 2.0
    t2 = choose_truncation(1 / 64, "HPinY")
    assert t2.Y == pytest.approx(2.0) and t2.M == 7


def test_choose_truncation_hp_full_1d():
    t = choose_truncation(1.0, "hp_full_1d", level=4)
    assert t.M == 4 and t.q == 4 and t.Y == 2.0
    assert t.sigma_x == 0.15
    assert t.epsilon_min == pytest.approx(math.sqrt(2 * 0.05 ** 4) / 8)
    with pytest.raises(ParameterError):
        choose_truncation(1.0, "hp_full_1d", level=None)
    with pytest.raises(ParameterError):
        choose_truncation(1.0, "hp_full_1d", level=0)


def test_choose_truncation_overrides_and_errors():
    t = choose_truncation(1 / 8, "HPinY", overrides={"Y": 3.0, "M": "6", "unknown": 1, "sigma": None})
    assert t.Y == 3.0 and t.M == 6 and t.sigma == 0.05
    with pytest.raises(DomainError):
        choose_truncation(1.0, "P1")
    with pytest.raises(DomainError):
        choose_truncation(0.0, "HPinY")
    with pytest.raises(ParameterError):
        choose_truncation(0.1, "bogus")


# ---------- 深層 geometric y-mesh：最小 μ 低於 double 的解析度 ----------
def test_deep_geometric_mesh_uses_zero_limit(unit_interval):
    s = 0.25
    choice = choose_truncation(0.5, "hp_full_1d", s, level=9)
    ys = YSpace(geometric_mesh(choice.sigma, choice.M, choice.Y), linear_degrees(choice.M, choice.slope))
    diag = diagonalize(ys, make_order(s).alpha)
    assert np.all(diag.mu >= 0)
    assert diag.n_unresolved >= 1
    assert diag.mu[-1] <= diag.mu_upper_bound * (1 + 1e-9)

    prob = interval_problem(unit_interval, s)
    omega = hp_interval_space(unit_interval, choice.epsilon_min, choice.q, choice.sigma_x)
    sol = solve_diagonalized(prob, omega, ys, diag=diag)
    assert np.all(np.isfinite(sol.U))
    ref = energy_pairing(unit_interval, prob.coefficients, prob.forcing, prob.order).value
    assert sol.pairing() == pytest.approx(ref, rel=1e-3)
    assert sol.pairing() <= ref * (1 + 1e-8)
