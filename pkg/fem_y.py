"""
延伸變數 y 方向的有限元素：
- radical-geometric / geometric 網格與 degree vector
- 在 y = 𝒴 為 0 的連續分段多項式空間（hat + integrated Legendre bubble）
- y^α 加權的 mass / stiffness 組裝
- 內插算子 π¹（線性）與 hp Gauss–Lobatto 內插
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Tuple

import numpy as np
from scipy.special import eval_legendre, roots_jacobi, roots_legendre

from errors import DomainError, ParameterError

# 可手動調整的參數
MAX_Y_DEGREE = 30
# 非第一個元素：切成端點比 ≤ 2 的幾何小段，每段 r + EXTRA_GL_NODES 個 Gauss–Legendre 點
EXTRA_GL_NODES = 13
SUBPIECE_RATIO = 2.0
# 誤差量測時第一個元素往 0 幾何細分的層數
ERROR_GRADING_LEVELS = 40
ERROR_EXTRA_NODES = 20


# ============================================================
# 網格
# ============================================================
@dataclass(frozen=True)
class YMesh:
    kind: str                                   # "radical_geometric" | "geometric" | "custom"
    params: Tuple[Tuple[str, float], ...]
    breakpoints: np.ndarray = field(repr=False)

    def __post_init__(self):
        b = self.breakpoints
        if b[0] != 0.0 or np.any(np.diff(b) <= 0):
            raise ParameterError("breakpoints 必須由 0 開始且嚴格遞增")

    @property
    def Y(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def n_elements(self) -> int:
        return len(self.breakpoints) - 1

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    def param(self, name: str) -> float:
        return dict(self.params)[name]


def radical_geometric_mesh(eta: float, k: float, Y: float) -> YMesh:
    if eta < 1:
        raise ParameterError(f"eta 必須 ≥ 1：{eta}")
    if not k > 0:
        raise ParameterError(f"k 必須 > 0：{k}")
    N = int(round(1.0 / k))
    if N < 1 or abs(N * k - 1.0) > 1e-12:
        raise ParameterError(f"k 必須是 1/N（N 為正整數）：k={k}")
    if not Y >= 1:
        raise ParameterError(f"𝒴 必須 ≥ 1：{Y}")
    inner = (np.arange(N + 1) / N) ** eta
    if Y > 1.0:
        n_outer = max(1, int(math.floor(N * math.log(Y) + 1e-12)))
        outer = np.exp(np.arange(1, n_outer + 1) / N)
        # 最後一個元素終點固定在 𝒴
        outer[-1] = Y
    else:
        outer = np.zeros(0)
    bp = np.concatenate([inner, outer])
    return YMesh(kind="radical_geometric", params=(("eta", float(eta)), ("k", 1.0 / N), ("Y", float(Y))), breakpoints=bp)


def geometric_mesh(sigma: float, M: int, Y: float) -> YMesh:
    if not (0.0 < sigma < 1.0):
        raise ParameterError(f"sigma 必須在 (0,1)：{sigma}")
    M = int(M)
    if M < 1:
        raise ParameterError(f"M 必須 ≥ 1：{M}")
    if not Y > 0:
        raise ParameterError(f"𝒴 必須 > 0：{Y}")
    bp = np.concatenate([[0.0], Y * sigma ** (M - np.arange(1, M + 1))])
    bp[-1] = Y
    return YMesh(kind="geometric", params=(("sigma", float(sigma)), ("M", float(M)), ("Y", float(Y))), breakpoints=bp)


def nested(coarse: YMesh, fine: YMesh, tol: float = 1e-12) -> bool:
    fb = fine.breakpoints
    for y in coarse.breakpoints:
        j = np.searchsorted(fb, y)
        cand = fb[max(j - 1, 0): j + 1]
        if not np.any(np.abs(cand - y) <= tol * max(1.0, abs(y))):
            return False
    return True


# ============================================================
# degree vector
# ============================================================
@dataclass(frozen=True)
class DegreeVector:
    degrees: Tuple[int, ...]

    def __post_init__(self):
        if not self.degrees or any(int(r) < 1 for r in self.degrees):
            raise ParameterError("每個元素的次數必須 ≥ 1")
        if max(self.degrees) > MAX_Y_DEGREE:
            raise ParameterError(f"次數上限為 {MAX_Y_DEGREE}")

    def __len__(self):
        return len(self.degrees)

    @property
    def max(self) -> int:
        return max(self.degrees)


def uniform_degrees(M: int, r: int) -> DegreeVector:
    return DegreeVector(tuple([int(r)] * int(M)))


def linear_degrees(M: int, slope: float) -> DegreeVector:
    """r_i = max{1, ⌈𝔰 i⌉}，i = 1..M（上限 MAX_Y_DEGREE）。"""
    return DegreeVector(tuple(
        min(MAX_Y_DEGREE, max(1, int(math.ceil(slope * i - 1e-12)))) for i in range(1, int(M) + 1)
    ))


# ============================================================
# 參考元素 [-1, 1] 上的 basis
# ============================================================
def reference_shapes(r: int, xi) -> Tuple[np.ndarray, np.ndarray]:
    """
    回傳 (values, d/dξ)，shape (r+1, n)；順序：左 hat、右 hat、N_2..N_r。
    N_j = (P_j − P_{j−2}) / √(2(2j−1))，N_j′ = √((2j−1)/2) P_{j−1}。
    """
    xi = np.asarray(xi, dtype=float)
    vals = np.empty((r + 1, xi.size))
    ders = np.empty((r + 1, xi.size))
    vals[0] = 0.5 * (1.0 - xi)
    vals[1] = 0.5 * (1.0 + xi)
    ders[0] = -0.5
    ders[1] = 0.5
    for j in range(2, r + 1):
        vals[j] = (eval_legendre(j, xi) - eval_legendre(j - 2, xi)) / math.sqrt(2.0 * (2 * j - 1))
        ders[j] = math.sqrt((2 * j - 1) / 2.0) * eval_legendre(j - 1, xi)
    return vals, ders


def gauss_lobatto_nodes(r: int) -> np.ndarray:
    """r+1 個 Gauss–Lobatto 點：±1 與 P_r′ 的根。"""
    if r == 1:
        return np.array([-1.0, 1.0])
    inner = np.sort(np.real(np.polynomial.legendre.Legendre.basis(r).deriv().roots()))
    return np.concatenate([[-1.0], inner, [1.0]])


# ============================================================
# 加權積分規則
# ============================================================
def weighted_element_rule(a: float, b: float, alpha: float, r: int):
    """
    ∫_a^b y^α g(y) dy ≈ Σ w_j g(y_j)；g 為次數 ≤ 2r 的多項式時到捨入誤差。
    a = 0：Gauss–Jacobi（權重 (1+ξ)^α），r+2 點。
    a > 0：切成端點比 ≤ 2 的幾何小段，各用 r+13 點 Gauss–Legendre。
    """
    if a == 0.0:
        xi, w = roots_jacobi(r + 2, 0.0, alpha)
        y = 0.5 * b * (1.0 + xi)
        return y, w * (0.5 * b) ** (alpha + 1.0)
    m = max(1, int(math.ceil(math.log(b / a) / math.log(SUBPIECE_RATIO) - 1e-12)))
    cuts = a * (b / a) ** (np.arange(m + 1) / m)
    cuts[-1] = b
    xg, wg = roots_legendre(r + EXTRA_GL_NODES)
    ys, ws = [], []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        y = 0.5 * (hi - lo) * xg + 0.5 * (hi + lo)
        ys.append(y)
        ws.append(0.5 * (hi - lo) * wg * y ** alpha)
    return np.concatenate(ys), np.concatenate(ws)


def _error_rule(a: float, b: float, alpha: float, n: int):
    """誤差量測用：非多項式被積函數（例如 y^{2s}）在 0 附近需要幾何細分。"""
    if a > 0.0:
        return weighted_element_rule(a, b, alpha, n)
    ys, ws = [], []
    xg, wg = roots_legendre(n + EXTRA_GL_NODES)
    hi = b
    for _ in range(ERROR_GRADING_LEVELS):
        lo = 0.5 * hi
        y = 0.5 * (hi - lo) * xg + 0.5 * (hi + lo)
        ys.append(y)
        ws.append(0.5 * (hi - lo) * wg * y ** alpha)
        hi = lo
    y0, w0 = weighted_element_rule(0.0, hi, alpha, n)
    ys.append(y0)
    ws.append(w0)
    return np.concatenate(ys), np.concatenate(ws)


# ============================================================
# 空間
# ============================================================
@dataclass(frozen=True)
class YSpace:
    mesh: YMesh
    degrees: DegreeVector
    pinned_end: bool = True      # True：y = 𝒴 的頂點被消去（S^r_{{𝒴}}）

    def __post_init__(self):
        if len(self.degrees) != self.mesh.n_elements:
            raise ParameterError(f"degree vector 長度 {len(self.degrees)} ≠ 元素數 {self.mesh.n_elements}")

    @property
    def n_vertex_dofs(self) -> int:
        return self.mesh.n_elements + (0 if self.pinned_end else 1)

    @property
    def ndof(self) -> int:
        return self.n_vertex_dofs + sum(r - 1 for r in self.degrees.degrees)

    @property
    def h_min(self) -> float:
        return float(np.min(self.mesh.lengths))

    @property
    def q_max(self) -> int:
        return self.degrees.max

    def element_dofs(self, e: int) -> np.ndarray:
        M = self.mesh.n_elements
        right = e + 1 if (e + 1 < M or not self.pinned_end) else -1
        start = self.n_vertex_dofs + sum(r - 1 for r in self.degrees.degrees[:e])
        bubbles = np.arange(start, start + self.degrees.degrees[e] - 1)
        return np.concatenate([[e, right], bubbles]).astype(int)

    def trace_row(self) -> np.ndarray:
        """basis 在 y = 0 的值；只有第 0 個頂點 hat 不為 0。"""
        row = np.zeros(self.ndof)
        row[0] = 1.0
        return row

    def evaluate(self, coeffs, y, derivative: int = 0) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=float)
        y = np.atleast_1d(np.asarray(y, dtype=float))
        bp = self.mesh.breakpoints
        if np.any(y < 0) or np.any(y > bp[-1] * (1 + 1e-14)):
            raise DomainError("y 超出 [0, 𝒴]")
        cols = coeffs.reshape(self.ndof, -1)
        out = np.zeros((len(y), cols.shape[1]))
        elem = np.clip(np.searchsorted(bp, y, side="right") - 1, 0, self.mesh.n_elements - 1)
        for e in np.unique(elem):
            sel = elem == e
            a, b = bp[e], bp[e + 1]
            xi = (2.0 * y[sel] - (a + b)) / (b - a)
            vals, ders = reference_shapes(self.degrees.degrees[e], xi)
            basis = vals if derivative == 0 else ders * (2.0 / (b - a))
            dofs = self.element_dofs(e)
            mask = dofs >= 0
            out[sel] = basis[mask].T @ cols[dofs[mask]]
        if coeffs.ndim == 1:
            return out[:, 0]
        return out


def assemble_weighted(space: YSpace, alpha: float):
    """回傳 dense (S_y, M_y)：S_y = ∫ y^α φ_i′φ_j′，M_y = ∫ y^α φ_iφ_j。"""
    if not (-1.0 < alpha < 1.0):
        raise DomainError(f"alpha 必須在 (-1,1)：{alpha}")
    n = space.ndof
    S = np.zeros((n, n))
    M = np.zeros((n, n))
    bp = space.mesh.breakpoints
    for e in range(space.mesh.n_elements):
        a, b = bp[e], bp[e + 1]
        r = space.degrees.degrees[e]
        y, w = weighted_element_rule(a, b, alpha, r)
        xi = (2.0 * y - (a + b)) / (b - a)
        vals, ders = reference_shapes(r, xi)
        ders = ders * (2.0 / (b - a))
        Se = (ders * w) @ ders.T
        Me = (vals * w) @ vals.T
        dofs = space.element_dofs(e)
        keep = np.nonzero(dofs >= 0)[0]
        g = dofs[keep]
        S[np.ix_(g, g)] += Se[np.ix_(keep, keep)]
        M[np.ix_(g, g)] += Me[np.ix_(keep, keep)]
    return 0.5 * (S + S.T), 0.5 * (M + M.T)


# ============================================================
# 內插
# ============================================================
@dataclass(frozen=True)
class YFunction:
    space: YSpace
    coeffs: np.ndarray = field(repr=False)

    def __call__(self, y, derivative: int = 0):
        return self.space.evaluate(self.coeffs, y, derivative)


def _first_element_values(mesh: YMesh, u: Callable) -> Tuple[float, float]:
    y1 = mesh.breakpoints[1]
    um, u1 = float(u(np.array([0.5 * y1]))[0]), float(u(np.array([y1]))[0])
    # 通過 (y1/2, u(y1/2)) 與 (y1, u(y1)) 的直線在 0 的值
    return 2.0 * um - u1, u1


def interp_pi1(mesh: YMesh, u: Callable, terminal: bool = False) -> YFunction:
    """
    分段線性內插；I₁ 上改用中點與右端點的線性內插。terminal=True 時在 𝒴 取 0。
    u 必須可對 numpy 陣列求值。
    """
    space = YSpace(mesh, uniform_degrees(mesh.n_elements, 1), pinned_end=terminal)
    bp = mesh.breakpoints
    values = np.empty(space.ndof)
    v0, _ = _first_element_values(mesh, u)
    values[0] = v0
    last = mesh.n_elements if not terminal else mesh.n_elements - 1
    if last >= 1:
        values[1:last + 1] = u(bp[1:last + 1])
    return YFunction(space, values)


def interp_hp(mesh: YMesh, degrees: DegreeVector, u: Callable, terminal: bool = True) -> YFunction:
    """
    元素 2..M 用次數 r_i 的 Gauss–Lobatto 內插（端點精確）；I₁ 上為中點/右端點線性內插；
    terminal=True 時 y = 𝒴 的值設為 0（π^r_{y,{𝒴}}）。
    """
    space = YSpace(mesh, degrees, pinned_end=terminal)
    bp = mesh.breakpoints
    coeffs = np.zeros(space.ndof)
    v0, _ = _first_element_values(mesh, u)
    coeffs[0] = v0
    nv = space.n_vertex_dofs
    if nv > 1:
        coeffs[1:nv] = u(bp[1:nv])
    for e in range(1, mesh.n_elements):
        r = degrees.degrees[e]
        if r < 2:
            continue
        a, b = bp[e], bp[e + 1]
        nodes = gauss_lobatto_nodes(r)[1:-1]
        vals, _ = reference_shapes(r, nodes)
        dofs = space.element_dofs(e)
        left = coeffs[dofs[0]]
        right = coeffs[dofs[1]] if dofs[1] >= 0 else 0.0
        if dofs[1] < 0:
            # 終端元素：endpoint 值取 u(𝒴) 做內插，之後再把 𝒴 的值歸零
            right_u = float(u(np.array([b]))[0])
        else:
            right_u = right
        ys = 0.5 * (b - a) * nodes + 0.5 * (a + b)
        rhs = u(ys) - left * vals[0] - right_u * vals[1]
        coeffs[dofs[2:]] = np.linalg.solve(vals[2:].T, rhs)
    return YFunction(space, coeffs)


# ============================================================
# 加權誤差
# ============================================================
def weighted_l2_norm(mesh: YMesh, fn: Callable, alpha: float, n: int = ERROR_EXTRA_NODES) -> float:
    """(∫_0^𝒴 y^α fn(y)² dy)^{1/2}，fn 可對陣列求值。"""
    total = 0.0
    bp = mesh.breakpoints
    for e in range(mesh.n_elements):
        y, w = _error_rule(bp[e], bp[e + 1], alpha, n)
        v = fn(y)
        total += float(np.sum(w * v * v))
    return math.sqrt(total)


def weighted_l2_error(fn_u: Callable, approx: YFunction, alpha: float) -> float:
    """‖u − Π u‖_{L²(y^α,(0,𝒴))}。"""
    n = approx.space.q_max + ERROR_EXTRA_NODES
    return weighted_l2_norm(approx.space.mesh, lambda y: fn_u(y) - approx(y), alpha, n)


def weighted_energy_error(du: Callable, approx: YFunction, alpha: float) -> float:
    """|u − Π u|_{H¹(y^α,(0,𝒴))}（只含導數項）。"""
    n = approx.space.q_max + ERROR_EXTRA_NODES
    return weighted_l2_norm(approx.space.mesh, lambda y: du(y) - approx(y, derivative=1), alpha, n)


