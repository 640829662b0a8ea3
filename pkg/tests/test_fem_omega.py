import math

import numpy as np
import pytest

from errors import DomainError, GeometryError, ParameterError
from fem_omega import (
    IntervalSpace,
    P1Space,
    TriMesh,
    assemble_omega,
    bisect,
    boundary_layer_count,
    check_conformity,
    coarse_triangulation,
    default_betas,
    export_off,
    graded_triangulation,
    hp_interval_space,
    interval_energy_error,
    intervals_nested,
    is_nested,
    load_vector,
    mesh_hierarchy,
    min_angle,
    reaction_diffusion_solve,
    refine_uniform,
    uniform_interval_space,
    uniform_triangulation,
)
from problem import Coefficients, Forcing, interval, l_shape
from study import fit_exponential_rate


# ---------- 粗網格與 bisection ----------
def test_coarse_lshape(lshape):
    mesh = coarse_triangulation(lshape)
    assert mesh.n_triangles == 4
    assert np.sum(mesh.areas) == pytest.approx(3.0)
    check_conformity(mesh)
    # 所有三角形都是等腰直角，最長邊是 refinement edge
    assert min_angle(mesh) == pytest.approx(math.pi / 4)
    p = mesh.points[mesh.triangles]
    ref_edge = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
    assert np.allclose(ref_edge, mesh.diameters)


def test_coarse_rejects_interval(unit_interval):
    with pytest.raises(ParameterError):
        coarse_triangulation(unit_interval)


def test_bisect_single_triangle_closes(unit_square):
    mesh = coarse_triangulation(unit_square)
    marked = np.zeros(mesh.n_triangles, dtype=bool)
    marked[0] = True
    fine = bisect(mesh, marked)
    # 共用對角線是兩邊的 refinement edge，closure 會一起二分
    assert fine.n_triangles == 4
    assert fine.n_points == 5
    assert np.allclose(fine.points[4], [0.5, 0.5])


def test_bisect_nothing_marked(unit_square):
    mesh = coarse_triangulation(unit_square)
    assert bisect(mesh, np.zeros(mesh.n_triangles, dtype=bool)) is mesh


def test_refine_uniform_square(unit_square):
    mesh = refine_uniform(coarse_triangulation(unit_square), 4)
    assert mesh.n_triangles == 32
    assert mesh.n_points == 25
    assert len(mesh.interior_nodes) == 9
    assert mesh.h == pytest.approx(math.sqrt(2) / 4)


def test_refinement_keeps_shape_regularity(lshape):
    mesh = refine_uniform(coarse_triangulation(lshape), 5)
    check_conformity(mesh)
    assert min_angle(mesh) == pytest.approx(math.pi / 4)
    assert np.sum(mesh.areas) == pytest.approx(3.0)


def test_conformity_detects_hanging_node(unit_square):
    points = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]], dtype=float)
    tris = np.array([[0, 1, 2], [4, 2, 3], [4, 3, 0]])
    mesh = TriMesh(domain=unit_square, points=points, triangles=tris, generation=np.zeros(3, dtype=int),
                   root=np.arange(3), code=np.ones(3, dtype=np.int64))
    with pytest.raises(GeometryError):
        check_conformity(mesh)


# ---------- grading ----------
def test_default_betas_lshape(lshape):
    betas = default_betas(lshape)
    assert betas[0] == pytest.approx(1 - 2 / 3 + 0.05)
    assert all(b == 0.0 for b in betas[1:])
    assert default_betas(interval(0, 1)) == ()


def test_uniform_triangulation_quasi_uniform(unit_square):
    mesh = uniform_triangulation(unit_square, 1 / 8)
    assert mesh.h <= 1 / 8 + 1e-12
    assert np.max(mesh.diameters) / np.min(mesh.diameters) <= 4.0


def test_graded_mesh_follows_corner_law(lshape):
    h, beta = 1 / 8, 0.4
    mesh = graded_triangulation(lshape, h, (beta, 0, 0, 0, 0, 0))
    check_conformity(mesh)
    at_corner = np.any(np.all(np.isclose(mesh.points[mesh.triangles], 0.0), axis=2), axis=1)
    ratio = np.min(mesh.diameters[at_corner]) / h
    expected = h ** (beta / (1 - beta))
    assert expected / 4 <= ratio <= 4 * expected
    assert mesh.betas == (beta, 0, 0, 0, 0, 0)
    assert mesh.h_target == h
    assert mesh.n_triangles > uniform_triangulation(lshape, h).n_triangles


@pytest.mark.parametrize("kwargs", [
    {"h": 0.0},
    {"h": 0.1, "beta_per_corner": (0.3,)},
    {"h": 0.1, "beta_per_corner": (1.0, 0, 0, 0, 0, 0)},
])
def test_graded_rejects_bad_parameters(lshape, kwargs):
    with pytest.raises(ParameterError):
        graded_triangulation(lshape, **kwargs)


def test_mesh_hierarchy_is_nested(lshape):
    meshes = mesh_hierarchy(lshape, [1, 2, 3])
    assert [m.h_target for m in meshes] == [0.5, 0.25, 0.125]
    for coarse, fine in zip(meshes[:-1], meshes[1:]):
        assert is_nested(coarse, fine)
        assert not is_nested(fine, coarse)
    assert is_nested(meshes[0], meshes[2])


def test_graded_continuation_is_nested(lshape):
    coarse = graded_triangulation(lshape, 0.25)
    fine = graded_triangulation(lshape, 0.125, start=coarse)
    assert is_nested(coarse, fine)


def test_export_off(tmp_path, unit_square):
    mesh = refine_uniform(coarse_triangulation(unit_square), 2)
    p = export_off(mesh, tmp_path / "m" / "square.off")
    lines = p.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "OFF"
    assert lines[1] == f"{mesh.n_points} {mesh.n_triangles} 0"
    assert len(lines) == 2 + mesh.n_points + mesh.n_triangles


# ---------- P1 ----------
def test_p1_mass_and_integrate(lshape):
    space = P1Space(refine_uniform(coarse_triangulation(lshape), 4))
    assert space.integrate(lambda p: p[:, 0] ** 2) == pytest.approx(1.0, rel=1e-12)
    _, M = assemble_omega(space, Coefficients())
    assert M.shape == (space.ndof, space.ndof)
    assert np.allclose((M - M.T).toarray(), 0.0)


def test_p1_load_of_constant(unit_square):
    mesh = refine_uniform(coarse_triangulation(unit_square), 4)
    space = P1Space(mesh)
    b = load_vector(space, Forcing.constant(1.0))
    patch = np.bincount(mesh.triangles.reshape(-1), weights=np.repeat(mesh.areas, 3), minlength=mesh.n_points)
    assert np.allclose(b, patch[space.free] / 3.0, rtol=1e-13)
    assert np.array_equal(load_vector(space, Forcing.constant(0.0)), np.zeros(space.ndof))


def test_p1_reaction_only_limit(unit_square):
    space = P1Space(refine_uniform(coarse_triangulation(unit_square), 4))
    K, C, M = space.assemble_parts(Coefficients(1.0, 1.0))
    assert np.allclose(C.toarray(), M.toarray())
    A, _ = space.assemble(Coefficients(1e-14, 1.0))
    assert np.allclose(A.toarray(), M.toarray(), atol=1e-12)


def test_p1_variable_coefficients_symmetric(unit_square):
    space = P1Space(refine_uniform(coarse_triangulation(unit_square), 4))
    coeff = Coefficients(lambda p: 1.0 + p[:, 0] ** 2, lambda p: p[:, 1] ** 2)
    A, M = space.assemble(coeff)
    dense = A.toarray()
    assert np.allclose(dense, dense.T)
    assert np.linalg.eigvalsh(dense)[0] > 0


def test_p1_solve_converges(unit_square):
    f = Forcing.closure(lambda p: (2 * math.pi ** 2 + 1) * np.sin(math.pi * p[:, 0]) * np.sin(math.pi * p[:, 1]))
    errs = []
    for times in (6, 8):
        space = P1Space(refine_uniform(coarse_triangulation(unit_square), times))
        U = reaction_diffusion_solve(space, Coefficients(), 1.0, 1.0, f)
        pts = space.mesh.points
        exact = np.sin(math.pi * pts[:, 0]) * np.sin(math.pi * pts[:, 1])
        errs.append(np.max(np.abs(space.nodal_values(U) - exact)))
    assert errs[1] < 0.02
    assert errs[0] / errs[1] > 3.0


# ---------- 一維空間 ----------
def test_interval_p1_stiffness():
    space = uniform_interval_space(interval(0, 1), 2, q=1)
    A, M = space.assemble(Coefficients())
    assert space.ndof == 1
    assert A.toarray()[0, 0] == pytest.approx(4.0)
    assert M.toarray()[0, 0] == pytest.approx(1.0 / 3.0)


def test_interval_dofs():
    space = uniform_interval_space(interval(0, 1), 4, q=3)
    assert space.ndof == 11
    assert list(space.element_dofs(0)) == [-1, 0, 3, 4]
    assert list(space.element_dofs(3)) == [2, -1, 9, 10]
    with pytest.raises(ParameterError):
        IntervalSpace(interval(0, 1), np.array([0.0, 0.5]), q=1)


def test_interval_load_of_first_mode():
    n = 8
    h = 1.0 / n
    space = uniform_interval_space(interval(0, 1), n, q=1)
    b = space.load(Forcing.spectral([1.0]))
    xj = np.arange(1, n) * h
    exact = math.sqrt(2) * 2 * np.sin(math.pi * xj) * (1 - math.cos(math.pi * h)) / (math.pi ** 2 * h)
    assert np.allclose(b, exact, rtol=1e-10)


def test_interval_solve_first_mode():
    mu = 0.3
    space = uniform_interval_space(interval(0, 1), 8, q=4)
    U = reaction_diffusion_solve(space, Coefficients(), mu, 1.0, Forcing.spectral([1.0]))
    x = np.array([0.3, 0.5])
    expected = math.sqrt(2) * np.sin(math.pi * x) / (mu * math.pi ** 2 + 1)
    assert np.allclose(space.evaluate(U, x), expected, rtol=1e-5)


def test_interval_solve_scaling_in_mu():
    space = uniform_interval_space(interval(0, 1), 16, q=1)
    f = Forcing.constant(1.0)
    small = reaction_diffusion_solve(space, Coefficients(), 100.0, 1.0, f)
    large = reaction_diffusion_solve(space, Coefficients(), 1000.0, 1.0, f)
    assert np.linalg.norm(large) <= 0.2 * np.linalg.norm(small)


def test_solve_zero_and_bad_mu():
    space = uniform_interval_space(interval(0, 1), 4, q=2)
    assert np.array_equal(reaction_diffusion_solve(space, Coefficients(), 1.0, 1.0, Forcing.constant(0.0)),
                          np.zeros(space.ndof))
    with pytest.raises(DomainError):
        reaction_diffusion_solve(space, Coefficients(), -1e-3, 1.0, Forcing.constant(1.0))


def test_solve_mu_zero_is_mass_projection():
    space = uniform_interval_space(interval(0, 1), 8, q=2)
    f = Forcing.constant(1.0)
    U = reaction_diffusion_solve(space, Coefficients(), 0.0, 2.0, f)
    _, M = assemble_omega(space, Coefficients())
    assert np.allclose(M @ U, 2.0 * load_vector(space, f), atol=1e-12)


def test_boundary_layer_count():
    assert boundary_layer_count(1.0, 0.5) == 0
    assert boundary_layer_count(2.0 ** -6, 0.5) == 6
    assert boundary_layer_count(0.25, 0.5) == 2


def test_hp_interval_space_layout():
    space = hp_interval_space(interval(0, 1), 2.0 ** -6, 2, sigma_x=0.5)
    assert space.layers == 6
    bp = space.breakpoints
    assert bp[1] == pytest.approx(0.5 * 0.5 ** 6)
    assert bp[-2] == pytest.approx(1 - 0.5 * 0.5 ** 6)
    assert np.allclose(bp, 1 - bp[::-1])
    assert space.ndof == space.n_elements * 2 - 1
    flat = hp_interval_space(interval(0, 1), 1.0, 3, sigma_x=0.5)
    assert np.allclose(flat.breakpoints, [0.0, 0.5, 1.0])


def test_hp_interval_space_nesting():
    coarse = hp_interval_space(interval(0, 1), 1e-2, 2, sigma_x=0.5)
    fine = hp_interval_space(interval(0, 1), 1e-3, 2, sigma_x=0.5)
    assert intervals_nested(coarse, fine)
    assert not intervals_nested(fine, coarse)


@pytest.mark.parametrize("eps", [0.0, 1.5])
def test_hp_interval_space_rejects(eps):
    with pytest.raises(DomainError):
        hp_interval_space(interval(0, 1), eps, 2)


def _layer_solution(eps):
    # −ε²u″ + u = 1 on (0,2)，u(0) = u(2) = 0
    scale = 1.0 + math.exp(-2.0 / eps)

    def u(x):
        return 1.0 - (np.exp((x - 2.0) / eps) + np.exp(-x / eps)) / scale

    def du(x):
        return -(np.exp((x - 2.0) / eps) - np.exp(-x / eps)) / (eps * scale)

    return u, du


@pytest.mark.parametrize("eps", [1.0, 1e-2, 1e-4, 1e-6])
def test_boundary_layer_hp_converges_exponentially(eps):
    dom = interval(0.0, 2.0)
    u, du = _layer_solution(eps)
    qs = [1, 2, 3, 4, 5, 6]
    errs = []
    for q in qs:
        space = hp_interval_space(dom, eps, q, sigma_x=0.5)
        U = reaction_diffusion_solve(space, Coefficients(), eps * eps, 1.0, Forcing.constant(1.0))
        errs.append(interval_energy_error(space, U, u, du, eps))
    assert all(e1 > e2 for e1, e2 in zip(errs[:-1], errs[1:]))
    assert errs[-1] < errs[0] / 20
    b, _ = fit_exponential_rate(qs, errs)
    assert b > 0


def test_assemble_accepts_array_diffusion():
    space = P1Space(uniform_triangulation(l_shape(), 0.5))
    A1, M1 = assemble_omega(space, Coefficients(diffusion=np.eye(2)))
    A2, _ = assemble_omega(space, Coefficients(diffusion=[[1.0, 0.0], [0.0, 1.0]]))
    A0, M0 = assemble_omega(space, Coefficients())
    assert np.allclose(A1.toarray(), A0.toarray()) and np.allclose(M1.toarray(), M0.toarray())
    assert np.allclose(A2.toarray(), A0.toarray())
