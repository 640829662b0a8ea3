"""
Ω 方向的離散化：
(a) 多邊形上的 P1 空間：耳切法 + Lawson flip 的粗網格，newest-vertex bisection 加密，
    依角點距離做 β-grading；
(b) 區間上的 hp 空間：往兩端幾何加密的邊界層網格，均勻次數 q。

兩種空間都提供 ndof / h / assemble / load / pairing，extension_solver 不需要分辨。
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.special import roots_legendre

from errors import DomainError, GeometryError, ParameterError
from fem_y import reference_shapes
from linalg import finalize_sym, spd_solve
from problem import Coefficients, DomainSpec, Forcing

# 可手動調整的參數
BETA_MARGIN = 0.05
MAX_REFINE_ROUNDS = 400
CONFORMITY_TOL = 1e-10
DELAUNAY_TOL = 1e-12

# 7 點 5 階三角形積分（重心座標, 權重/面積）
_SQ15 = math.sqrt(15.0)
_A1 = (6.0 - _SQ15) / 21.0
_A2 = (6.0 + _SQ15) / 21.0
_W1 = (155.0 - _SQ15) / 1200.0
_W2 = (155.0 + _SQ15) / 1200.0
LOAD_RULE_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _A1, 1 - 2 * _A1], [_A1, 1 - 2 * _A1, _A1], [1 - 2 * _A1, _A1, _A1],
    [_A2, _A2, 1 - 2 * _A2], [_A2, 1 - 2 * _A2, _A2], [1 - 2 * _A2, _A2, _A2],
])
LOAD_RULE_WEIGHTS = np.array([9 / 40, _W1, _W1, _W1, _W2, _W2, _W2])

# 3 點邊中點規則（2 階），變係數用
MIDPOINT_RULE_BARY = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
MIDPOINT_RULE_WEIGHTS = np.full(3, 1.0 / 3.0)


# ============================================================
# 三角網格
# ============================================================
@dataclass(frozen=True, eq=False)
class TriMesh:
    """
    triangles[k] = [p1, p2, p3]：p1 為 newest vertex，refinement edge 為 p2–p3。
    root / code 記錄 bisection tree：code 以 1 為 sentinel，每次二分左移一位。
    """
    domain: DomainSpec
    points: np.ndarray = field(repr=False)
    triangles: np.ndarray = field(repr=False)
    generation: np.ndarray = field(repr=False)
    root: np.ndarray = field(repr=False)
    code: np.ndarray = field(repr=False)
    betas: Tuple[float, ...] = ()
    h_target: float = math.inf

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.points[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def diameters(self) -> np.ndarray:
        p = self.points[self.triangles]
        e = np.stack([p[:, 1] - p[:, 2], p[:, 2] - p[:, 0], p[:, 0] - p[:, 1]], axis=1)
        return np.max(np.linalg.norm(e, axis=2), axis=1)

    @cached_property
    def edges(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(unique edges, triangle→edge ids (m,3), 每條 edge 的相鄰三角形數)。"""
        t = self.triangles
        local = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1)
        flat = np.sort(local.reshape(-1, 2), axis=1)
        E, inv, counts = np.unique(flat, axis=0, return_inverse=True, return_counts=True)
        return E, inv.reshape(-1, 3), counts

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        E, _, counts = self.edges
        return E[counts == 1]

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.boundary_edges.reshape(-1))

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        mask = np.ones(self.n_points, dtype=bool)
        mask[self.boundary_nodes] = False
        return np.nonzero(mask)[0]

    @property
    def h(self) -> float:
        return float(np.max(self.diameters))


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _point_in_triangle(p, a, b, c) -> bool:
    return _orient(a, b, p) >= 0 and _orient(b, c, p) >= 0 and _orient(c, a, p) >= 0


def _ear_clip(v: np.ndarray):
    idx = list(range(len(v)))
    tris = []
    guard = 0
    while len(idx) > 3:
        n = len(idx)
        for i in range(n):
            a, b, c = idx[i - 1], idx[i], idx[(i + 1) % n]
            if _orient(v[a], v[b], v[c]) <= 0:
                continue
            if any(_point_in_triangle(v[j], v[a], v[b], v[c]) for j in idx if j not in (a, b, c)):
                continue
            tris.append([a, b, c])
            idx.pop(i)
            break
        else:
            raise GeometryError("耳切法失敗（多邊形可能不是 simple）")
        guard += 1
        if guard > 10 * len(v):
            raise GeometryError("耳切法沒有收斂")
    tris.append(idx)
    return np.array(tris, dtype=int)


def _in_circle(a, b, c, d) -> float:
    m = np.array([
        [a[0] - d[0], a[1] - d[1], (a[0] - d[0]) ** 2 + (a[1] - d[1]) ** 2],
        [b[0] - d[0], b[1] - d[1], (b[0] - d[0]) ** 2 + (b[1] - d[1]) ** 2],
        [c[0] - d[0], c[1] - d[1], (c[0] - d[0]) ** 2 + (c[1] - d[1]) ** 2],
    ])
    return float(np.linalg.det(m))


def _lawson_flips(v: np.ndarray, tris: np.ndarray, boundary: set) -> np.ndarray:
    tris = [list(t) for t in tris]
    for _ in range(100 * max(1, len(tris))):
        flipped = False
        owner = {}
        for k, t in enumerate(tris):
            for i in range(3):
                e = tuple(sorted((t[(i + 1) % 3], t[(i + 2) % 3])))
                owner.setdefault(e, []).append((k, t[i]))
        for e, lst in sorted(owner.items()):
            if len(lst) != 2 or e in boundary:
                continue
            (k1, o1), (k2, o2) = lst
            t1 = tris[k1]
            # t1 以 (o1, e[?], e[?]) 逆時針排列
            i1 = t1.index(o1)
            p, q = t1[(i1 + 1) % 3], t1[(i1 + 2) % 3]
            if _in_circle(v[o1], v[p], v[q], v[o2]) <= DELAUNAY_TOL:
                continue
            # 四邊形 (o1, p, o2, q) 必須是凸的才能 flip
            if _orient(v[o1], v[p], v[o2]) <= 0 or _orient(v[o2], v[q], v[o1]) <= 0:
                continue
            tris[k1] = [o1, p, o2]
            tris[k2] = [o2, q, o1]
            flipped = True
            break
        if not flipped:
            return np.array(tris, dtype=int)
    raise GeometryError("Lawson flip 沒有收斂")


def _label_longest_edge(points: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """旋轉每個三角形，讓最長邊位於第一個頂點的對邊（初始 refinement edge）。"""
    out = tris.copy()
    p = points[tris]
    opp = np.stack([
        np.linalg.norm(p[:, 1] - p[:, 2], axis=1),
        np.linalg.norm(p[:, 2] - p[:, 0], axis=1),
        np.linalg.norm(p[:, 0] - p[:, 1], axis=1),
    ], axis=1)
    first = np.argmax(opp, axis=1)
    for k, f in enumerate(first):
        out[k] = np.roll(tris[k], -f)
    return out


def coarse_triangulation(domain: DomainSpec) -> TriMesh:
    if domain.dim != 2:
        raise ParameterError("coarse_triangulation 需要二維區域")
    poly = domain.as_polygon()
    v = poly.vertex_array
    n = len(v)
    tris = _ear_clip(v)
    boundary = {tuple(sorted((i, (i + 1) % n))) for i in range(n)}
    tris = _lawson_flips(v, tris, boundary)
    tris = _label_longest_edge(v, tris)
    m = len(tris)
    return TriMesh(
        domain=domain,
        points=v.copy(),
        triangles=tris,
        generation=np.zeros(m, dtype=int),
        root=np.arange(m),
        code=np.ones(m, dtype=np.int64),
    )


# ============================================================
# newest-vertex bisection
# ============================================================
def bisect(mesh: TriMesh, marked: np.ndarray) -> TriMesh:
    """
    將 marked 三角形二分，並做 closure 保持 conforming。
    [p1, p2, p3] → [m, p1, p2], [m, p3, p1]，m 為 p2–p3 中點。
    """
    marked = np.asarray(marked, dtype=bool)
    if not np.any(marked):
        return mesh
    E, t2e, _ = mesh.edges
    n_edges = len(E)
    edge_marked = np.zeros(n_edges, dtype=bool)
    edge_marked[t2e[marked, 0]] = True
    # closure：任何有 marked edge 的三角形，其 refinement edge 也要 marked
    while True:
        touched = np.any(edge_marked[t2e], axis=1)
        new = edge_marked.copy()
        new[t2e[touched, 0]] = True
        if np.array_equal(new, edge_marked):
            break
        edge_marked = new

    ids = np.nonzero(edge_marked)[0]
    mid_of_edge = np.full(n_edges, -1, dtype=np.int64)
    mid_of_edge[ids] = mesh.n_points + np.arange(len(ids))
    points = np.vstack([mesh.points, 0.5 * (mesh.points[E[ids, 0]] + mesh.points[E[ids, 1]])])

    big = np.int64(len(points))
    keys = E[:, 0].astype(np.int64) * big + E[:, 1].astype(np.int64)

    def lookup(i, j):
        lo, hi = np.minimum(i, j).astype(np.int64), np.maximum(i, j).astype(np.int64)
        q = lo * big + hi
        pos = np.clip(np.searchsorted(keys, q), 0, len(keys) - 1)
        ok = keys[pos] == q
        out = np.full(len(q), -1, dtype=np.int64)
        out[ok] = mid_of_edge[pos[ok]]
        return out

    tris, gen, root, code = mesh.triangles, mesh.generation, mesh.root, mesh.code
    while True:
        m = lookup(tris[:, 1], tris[:, 2])
        split = m >= 0
        if not np.any(split):
            break
        t = tris[split]
        mm = m[split]
        c1 = np.stack([mm, t[:, 0], t[:, 1]], axis=1)
        c2 = np.stack([mm, t[:, 2], t[:, 0]], axis=1)
        keep = ~split
        tris = np.vstack([tris[keep], c1, c2])
        g = gen[split] + 1
        gen = np.concatenate([gen[keep], g, g])
        root = np.concatenate([root[keep], root[split], root[split]])
        code = np.concatenate([code[keep], 2 * code[split], 2 * code[split] + 1])

    out = TriMesh(
        domain=mesh.domain, points=points, triangles=tris.astype(int), generation=gen,
        root=root, code=code, betas=mesh.betas, h_target=mesh.h_target,
    )
    check_conformity(out)
    return out


def refine_uniform(mesh: TriMesh, times: int = 1) -> TriMesh:
    for _ in range(int(times)):
        mesh = bisect(mesh, np.ones(mesh.n_triangles, dtype=bool))
    return mesh


def check_conformity(mesh: TriMesh):
    """每條內部邊剛好被兩個三角形共用，邊界邊剛好覆蓋 ∂Ω，且所有三角形正向。"""
    if np.any(mesh.areas <= 0):
        raise GeometryError("有三角形面積 ≤ 0（方向錯誤或退化）")
    E, _, counts = mesh.edges
    if np.any(counts > 2):
        raise GeometryError("有邊被超過兩個三角形共用")
    be = mesh.boundary_edges
    p = mesh.points
    length = float(np.sum(np.linalg.norm(p[be[:, 0]] - p[be[:, 1]], axis=1)))
    perim = mesh.domain.perimeter
    if abs(length - perim) > CONFORMITY_TOL * max(1.0, perim):
        raise GeometryError(f"邊界邊總長 {length} ≠ 周長 {perim}（有 hanging node）")
    mids = 0.5 * (p[be[:, 0]] + p[be[:, 1]])
    if not np.all(mesh.domain.on_boundary(mids, tol=1e-10)):
        raise GeometryError("邊界邊不在 ∂Ω 上")
    total = float(np.sum(mesh.areas))
    if abs(total - mesh.domain.area) > CONFORMITY_TOL * max(1.0, mesh.domain.area):
        raise GeometryError("三角形面積總和 ≠ 區域面積")


def min_angle(mesh: TriMesh) -> float:
    p = mesh.points[mesh.triangles]
    out = np.inf
    for i in range(3):
        a = p[:, (i + 1) % 3] - p[:, i]
        b = p[:, (i + 2) % 3] - p[:, i]
        cosv = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        out = min(out, float(np.min(np.arccos(np.clip(cosv, -1.0, 1.0)))))
    return out


# ============================================================
# grading
# ============================================================
def default_betas(domain: DomainSpec) -> Tuple[float, ...]:
    """β_c = max(0, 1 − π/ω_c + 0.05)。"""
    if domain.dim != 2:
        return ()
    return tuple(max(0.0, 1.0 - math.pi / w + BETA_MARGIN) for w in domain.as_polygon().angles)


def _grading_targets(mesh: TriMesh, h: float, betas: Sequence[float]) -> np.ndarray:
    corners = mesh.domain.as_polygon().vertex_array
    diam_omega = mesh.domain.diameter
    p = mesh.points[mesh.triangles]
    target = np.full(mesh.n_triangles, np.inf)
    for c, beta in zip(corners, betas):
        if beta == 0.0:
            target = np.minimum(target, h)
            continue
        dist = np.min(np.linalg.norm(p - c[None, None, :], axis=2), axis=1)
        floor = h ** (1.0 / (1.0 - beta))
        target = np.minimum(target, h * np.maximum(dist / diam_omega, floor) ** beta)
    return target


def graded_triangulation(domain: DomainSpec, h: float, beta_per_corner: Optional[Sequence[float]] = None,
                         start: Optional[TriMesh] = None) -> TriMesh:
    """
    重複 NVB 直到每個三角形 diam(K) ≤ h·max(dist(K,c)/diam Ω, h^{1/(1−β_c)})^{β_c}（對所有角點取最小）。
    start 給定時從該網格繼續加密，所得網格與 start 巢狀。
    """
    if domain.dim != 2:
        raise ParameterError("graded_triangulation 需要二維區域")
    if not h > 0:
        raise ParameterError(f"h 必須 > 0：{h}")
    n_corners = len(domain.as_polygon().vertices)
    betas = tuple(default_betas(domain) if beta_per_corner is None else (float(b) for b in beta_per_corner))
    if len(betas) != n_corners:
        raise ParameterError(f"beta 數量 {len(betas)} ≠ 角點數 {n_corners}")
    if any(not (0.0 <= b < 1.0) for b in betas):
        raise ParameterError(f"beta 必須在 [0,1)：{betas}")
    mesh = start if start is not None else coarse_triangulation(domain)
    for _ in range(MAX_REFINE_ROUNDS):
        marked = mesh.diameters > _grading_targets(mesh, h, betas) * (1.0 + 1e-12)
        if not np.any(marked):
            break
        mesh = bisect(mesh, marked)
    else:
        raise GeometryError("grading 加密沒有在上限內結束")
    return TriMesh(domain=mesh.domain, points=mesh.points, triangles=mesh.triangles,
                   generation=mesh.generation, root=mesh.root, code=mesh.code,
                   betas=betas, h_target=float(h))


def uniform_triangulation(domain: DomainSpec, h: float, start: Optional[TriMesh] = None) -> TriMesh:
    n = len(domain.as_polygon().vertices)
    return graded_triangulation(domain, h, (0.0,) * n, start=start)


def mesh_hierarchy(domain: DomainSpec, levels: Sequence[int], beta_per_corner: Optional[Sequence[float]] = None,
                   h0: float = 1.0):
    """h_ℓ = h0·2^{−ℓ}，每層由上一層繼續加密，彼此巢狀。"""
    meshes = []
    mesh = None
    for lv in sorted(levels):
        mesh = graded_triangulation(domain, h0 * 2.0 ** (-lv), beta_per_corner, start=mesh)
        meshes.append(mesh)
    return meshes


def is_nested(coarse: TriMesh, fine: TriMesh) -> bool:
    """fine 的每個三角形都是 coarse 某個三角形的後代（bisection tree 上的前綴關係）。"""
    nc = coarse.n_points
    if fine.n_points < nc or not np.array_equal(fine.points[:nc], coarse.points):
        return False
    if int(np.max(fine.generation)) > 40:
        raise ParameterError("bisection 深度超過 40，無法用整數編碼比對")
    shift = np.int64(42)
    ckeys = np.sort((coarse.root.astype(np.int64) << shift) | coarse.code)
    found = np.zeros(fine.n_triangles, dtype=bool)
    for j in range(int(np.max(fine.generation)) + 1):
        valid = fine.generation >= j
        anc = fine.code >> j
        keys = (fine.root.astype(np.int64) << shift) | anc
        found |= valid & np.isin(keys, ckeys)
    return bool(np.all(found))


def export_off(mesh: TriMesh, path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    lines = ["OFF", f"{mesh.n_points} {mesh.n_triangles} 0"]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in mesh.points]
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return p


# ============================================================
# P1 空間
# ============================================================
@dataclass(frozen=True, eq=False)
class P1Space:
    mesh: TriMesh

    @cached_property
    def free(self) -> np.ndarray:
        return self.mesh.interior_nodes

    @property
    def ndof(self) -> int:
        return len(self.free)

    @property
    def h(self) -> float:
        return self.mesh.h

    @cached_property
    def _grads(self) -> np.ndarray:
        """重心座標梯度，shape (m, 3, 2)。"""
        p = self.mesh.points[self.mesh.triangles]
        area2 = 2.0 * self.mesh.areas
        g = np.empty((self.mesh.n_triangles, 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            g[:, i, 0] = (p[:, j, 1] - p[:, k, 1]) / area2
            g[:, i, 1] = (p[:, k, 0] - p[:, j, 0]) / area2
        return g

    def _points_at(self, bary: np.ndarray) -> np.ndarray:
        p = self.mesh.points[self.mesh.triangles]
        return np.einsum("qi,mid->mqd", bary, p)

    def _scatter(self, local: np.ndarray) -> sp.csr_matrix:
        t = self.mesh.triangles
        rows = np.repeat(t, 3, axis=1).reshape(-1)
        cols = np.tile(t, (1, 3)).reshape(-1)
        n = self.mesh.n_points
        full = sp.coo_matrix((local.reshape(-1), (rows, cols)), shape=(n, n)).tocsr()
        f = self.free
        return finalize_sym(full[f][:, f])

    def assemble_parts(self, coeff: Coefficients):
        """(K, C, M)：A-梯度項、c-質量項、L² 質量。"""
        m = self.mesh.n_triangles
        area = self.mesh.areas
        G = self._grads
        qp = self._points_at(MIDPOINT_RULE_BARY)                    # (m, 3, 2)
        A, c = coeff.evaluate(qp.reshape(-1, 2), dim=2)
        A = A.reshape(m, 3, 2, 2)
        c = c.reshape(m, 3)
        Aavg = np.einsum("q,mqij->mij", MIDPOINT_RULE_WEIGHTS, A)   # 梯度為常數，A 取平均即可
        Ke = area[:, None, None] * np.einsum("mid,mde,mje->mij", G, Aavg, G)
        base = (np.ones((3, 3)) + np.eye(3)) / 12.0
        Me = area[:, None, None] * base[None, :, :]
        if coeff.is_constant:
            Ce = c[:, 0][:, None, None] * Me
        else:
            phi = MIDPOINT_RULE_BARY                                 # (q, 3)
            Ce = area[:, None, None] * np.einsum("q,mq,qi,qj->mij", MIDPOINT_RULE_WEIGHTS, c, phi, phi)
        return self._scatter(Ke), self._scatter(Ce), self._scatter(Me)

    def assemble(self, coeff: Coefficients):
        K, C, M = self.assemble_parts(coeff)
        return finalize_sym(K + C), M

    def load(self, forcing: Forcing) -> np.ndarray:
        if forcing.is_zero:
            return np.zeros(self.ndof)
        qp = self._points_at(LOAD_RULE_BARY)                        # (m, 7, 2)
        fv = forcing.evaluate(qp.reshape(-1, 2), self.mesh.domain).reshape(self.mesh.n_triangles, -1)
        local = self.mesh.areas[:, None] * np.einsum("q,mq,qi->mi", LOAD_RULE_WEIGHTS, fv, LOAD_RULE_BARY)
        b = np.bincount(self.mesh.triangles.reshape(-1), weights=local.reshape(-1), minlength=self.mesh.n_points)
        return b[self.free]

    def nodal_values(self, U) -> np.ndarray:
        full = np.zeros(self.mesh.n_points)
        full[self.free] = np.asarray(U).reshape(-1)
        return full

    def pairing(self, forcing: Forcing, U) -> float:
        return float(self.load(forcing) @ np.asarray(U).reshape(-1))

    def integrate(self, fn) -> float:
        """∫_Ω fn，用 7 點規則；fn 可對 (n,2) 陣列求值。"""
        qp = self._points_at(LOAD_RULE_BARY)
        v = np.asarray(fn(qp.reshape(-1, 2)), dtype=float).reshape(self.mesh.n_triangles, -1)
        return float(np.sum(self.mesh.areas * (v @ LOAD_RULE_WEIGHTS)))


# ============================================================
# 一維區間空間
# ============================================================
@dataclass(frozen=True, eq=False)
class IntervalSpace:
    domain: DomainSpec
    breakpoints: np.ndarray = field(repr=False)
    q: int = 1
    layers: int = 0

    def __post_init__(self):
        bp = self.breakpoints
        a, b = self.domain.bounds
        if abs(bp[0] - a) > 1e-14 or abs(bp[-1] - b) > 1e-14 or np.any(np.diff(bp) <= 0):
            raise ParameterError("breakpoints 必須覆蓋整個區間且嚴格遞增")
        if int(self.q) < 1:
            raise ParameterError(f"q 必須 ≥ 1：{self.q}")

    @property
    def n_elements(self) -> int:
        return len(self.breakpoints) - 1

    @property
    def ndof(self) -> int:
        return self.n_elements * self.q - 1

    @property
    def h(self) -> float:
        return float(np.max(np.diff(self.breakpoints)))

    def element_dofs(self, e: int) -> np.ndarray:
        n = self.n_elements
        left = e - 1 if e > 0 else -1
        right = e if e < n - 1 else -1
        start = (n - 1) + e * (self.q - 1)
        return np.concatenate([[left, right], np.arange(start, start + self.q - 1)]).astype(int)

    def _element_loop(self, n_quad: int):
        xg, wg = roots_legendre(n_quad)
        vals, ders = reference_shapes(self.q, xg)
        bp = self.breakpoints
        for e in range(self.n_elements):
            a, b = bp[e], bp[e + 1]
            x = 0.5 * (b - a) * xg + 0.5 * (a + b)
            yield e, x, 0.5 * (b - a) * wg, vals, ders * (2.0 / (b - a))

    def _scatter(self, blocks) -> sp.csr_matrix:
        rows, cols, data = [], [], []
        for e, Ae in blocks:
            dofs = self.element_dofs(e)
            keep = np.nonzero(dofs >= 0)[0]
            g = dofs[keep]
            rows.append(np.repeat(g, len(g)))
            cols.append(np.tile(g, len(g)))
            data.append(Ae[np.ix_(keep, keep)].reshape(-1))
        n = self.ndof
        return finalize_sym(sp.coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                                          shape=(n, n)))

    def assemble_parts(self, coeff: Coefficients):
        Kb, Cb, Mb = [], [], []
        for e, x, w, vals, ders in self._element_loop(self.q + 2):
            a, c = coeff.evaluate(x.reshape(-1, 1), dim=1)
            Kb.append((e, (ders * (w * a)) @ ders.T))
            Cb.append((e, (vals * (w * c)) @ vals.T))
            Mb.append((e, (vals * w) @ vals.T))
        return self._scatter(Kb), self._scatter(Cb), self._scatter(Mb)

    def assemble(self, coeff: Coefficients):
        K, C, M = self.assemble_parts(coeff)
        return finalize_sym(K + C), M

    def load(self, forcing: Forcing) -> np.ndarray:
        b = np.zeros(self.ndof)
        if forcing.is_zero:
            return b
        for e, x, w, vals, _ in self._element_loop(self.q + 3):
            fv = forcing.evaluate(x.reshape(-1, 1), self.domain)
            local = vals @ (w * fv)
            dofs = self.element_dofs(e)
            keep = dofs >= 0
            np.add.at(b, dofs[keep], local[keep])
        return b

    def evaluate(self, U, x, derivative: int = 0) -> np.ndarray:
        U = np.asarray(U, dtype=float).reshape(-1)
        x = np.atleast_1d(np.asarray(x, dtype=float)).reshape(-1)
        bp = self.breakpoints
        out = np.zeros(len(x))
        elem = np.clip(np.searchsorted(bp, x, side="right") - 1, 0, self.n_elements - 1)
        for e in np.unique(elem):
            sel = elem == e
            a, b = bp[e], bp[e + 1]
            xi = (2.0 * x[sel] - (a + b)) / (b - a)
            vals, ders = reference_shapes(self.q, xi)
            basis = vals if derivative == 0 else ders * (2.0 / (b - a))
            dofs = self.element_dofs(e)
            keep = dofs >= 0
            out[sel] = basis[keep].T @ U[dofs[keep]]
        return out

    def pairing(self, forcing: Forcing, U) -> float:
        return float(self.load(forcing) @ np.asarray(U).reshape(-1))

    def integrate(self, fn, extra: int = 10) -> float:
        total = 0.0
        for _, x, w, _, _ in self._element_loop(self.q + extra):
            total += float(np.sum(w * np.asarray(fn(x.reshape(-1, 1)), dtype=float).reshape(-1)))
        return total


def uniform_interval_space(domain: DomainSpec, n: int, q: int = 1) -> IntervalSpace:
    if domain.kind != "interval":
        raise ParameterError("uniform_interval_space 需要 interval")
    a, b = domain.bounds
    return IntervalSpace(domain=domain, breakpoints=np.linspace(a, b, int(n) + 1), q=int(q))


def boundary_layer_count(epsilon_min: float, sigma_x: float) -> int:
    """最小的 L 使 σ_x^L ≤ ε_min。"""
    if epsilon_min >= 1.0:
        return 0
    return max(0, int(math.ceil(math.log(epsilon_min) / math.log(sigma_x) - 1e-9)))


def hp_interval_space(domain: DomainSpec, epsilon_min: float, q: int, sigma_x: float = 0.5) -> IntervalSpace:
    """往兩端點幾何加密：a + Hσ_x^j（j = L..0）與 b − Hσ_x^j（j = 1..L），H = (b−a)/2。"""
    if domain.kind != "interval":
        raise ParameterError("hp_interval_space 需要 interval")
    if not (0.0 < epsilon_min <= 1.0):
        raise DomainError(f"epsilon_min 必須在 (0,1]：{epsilon_min}")
    if not (0.0 < sigma_x < 1.0):
        raise ParameterError(f"sigma_x 必須在 (0,1)：{sigma_x}")
    a, b = domain.bounds
    H = 0.5 * (b - a)
    L = boundary_layer_count(epsilon_min, sigma_x)
    left = a + H * sigma_x ** np.arange(L, -1, -1)
    right = b - H * sigma_x ** np.arange(1, L + 1)
    bp = np.concatenate([[a], left, right, [b]])
    return IntervalSpace(domain=domain, breakpoints=bp, q=int(q), layers=L)


def interval_energy_error(space: IntervalSpace, U, u, du, eps: float, extra: int = 20) -> float:
    """(ε²‖(u − u_h)′‖² + ‖u − u_h‖²)^{1/2}，逐元素 Gauss–Legendre。"""
    total = 0.0
    for _, x, w, vals, ders in space._element_loop(space.q + extra):
        xf = x.reshape(-1)
        e0 = u(xf) - space.evaluate(U, xf)
        e1 = du(xf) - space.evaluate(U, xf, derivative=1)
        total += float(np.sum(w * (eps * eps * e1 * e1 + e0 * e0)))
    return math.sqrt(total)


def intervals_nested(coarse: IntervalSpace, fine: IntervalSpace) -> bool:
    fb = fine.breakpoints
    return bool(np.all(np.min(np.abs(coarse.breakpoints[:, None] - fb[None, :]), axis=1) <= 1e-12))


# ============================================================
# 共用操作
# ============================================================
@lru_cache(maxsize=16)
def _assemble_cached(space, coeff: Coefficients):
    return space.assemble(coeff)


def assemble_omega(space, coeff: Coefficients):
    """回傳 (A_Ω, M_Ω)，A_Ω = K + C。"""
    return _assemble_cached(space, coeff)


def load_vector(space, f: Forcing) -> np.ndarray:
    return space.load(f)


def reaction_diffusion_solve(space, coeff: Coefficients, mu: float, rhs_scale: float, f: Forcing,
                             b: Optional[np.ndarray] = None) -> np.ndarray:
    """解 (μ A_Ω + M_Ω) U = rhs_scale·b；μ = 0 是無法解析的 y-mode，退化成 M_Ω U = rhs_scale·b。"""
    if not mu >= 0:
        raise DomainError(f"mu 必須 ≥ 0：{mu}")
    A, M = assemble_omega(space, coeff)
    if b is None:
        b = load_vector(space, f)
    if rhs_scale == 0.0 or not np.any(b):
        return np.zeros(space.ndof)
    return spd_solve((mu * A + M).tocsr(), rhs_scale * b)
