"""
分數階擴散問題 ℒˢu = f 的資料定義：階數 s、係數 (A, c)、區域 Ω、右手邊 f，
以及 y 方向的權重 ω_{β,γ}(y) = y^β e^{γy}。

所有型別建立後不可變（frozen dataclass），可以在多個 task 之間共享讀取。
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np
from scipy.special import gamma as gamma_fn

from errors import DomainError, GeometryError, ParameterError, SingularEvaluationError

# 邊界上檢查 eigenfunction forcing 是否為 0 的容許值
EIGENFUNCTION_BOUNDARY_TOL = 1e-12
ANGLE_TOL = 1e-12


# ============================================================
# 階數 s
# ============================================================
@dataclass(frozen=True)
class FractionalOrder:
    s: float
    alpha: float
    d_s: float

    def complement(self) -> "FractionalOrder":
        return make_order(1.0 - self.s)


def _as_real(v, what: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float, np.integer, np.floating)):
        raise DomainError(f"{what} 必須是實數：{v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise DomainError(f"{what} 必須是有限值：{v!r}")
    return v


def make_order(s) -> FractionalOrder:
    s = _as_real(s, "s")
    if not (0.0 < s < 1.0):
        raise DomainError(f"s 必須在 (0,1) 之間：s={s}")
    alpha = 1.0 - 2.0 * s
    if s == 0.5:
        return FractionalOrder(s=s, alpha=0.0, d_s=1.0)
    d_s = 2.0 ** alpha * float(gamma_fn(1.0 - s)) / float(gamma_fn(s))
    return FractionalOrder(s=s, alpha=alpha, d_s=d_s)


# ============================================================
# y 方向權重
# ============================================================
@dataclass(frozen=True)
class ExpWeight:
    beta: float
    gamma: float = 0.0

    def __post_init__(self):
        if self.gamma < 0:
            raise DomainError(f"gamma 必須 ≥ 0：{self.gamma}")


def weight_eval(w: ExpWeight, y):
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr < 0):
        raise DomainError("y 必須 ≥ 0")
    if w.beta < 0 and np.any(y_arr == 0):
        raise SingularEvaluationError(f"y=0 且 beta={w.beta} < 0")
    out = np.power(y_arr, w.beta) * np.exp(w.gamma * y_arr)
    if np.ndim(y) == 0:
        return float(out)
    return out


# ============================================================
# 區域
# ============================================================
def _signed_area(vertices: np.ndarray) -> float:
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _segments_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    def on_segment(a, b, c):
        return (min(a[0], b[0]) - 1e-14 <= c[0] <= max(a[0], b[0]) + 1e-14
                and min(a[1], b[1]) - 1e-14 <= c[1] <= max(a[1], b[1]) + 1e-14)

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != 0 and d2 != 0 and d3 != 0 and d4 != 0:
        return True
    if d1 == 0 and on_segment(q1, q2, p1):
        return True
    if d2 == 0 and on_segment(q1, q2, p2):
        return True
    if d3 == 0 and on_segment(p1, p2, q1):
        return True
    if d4 == 0 and on_segment(p1, p2, q2):
        return True
    return False


def _check_simple(vertices: np.ndarray):
    n = len(vertices)
    if n < 3:
        raise GeometryError("多邊形至少需要 3 個頂點")
    if len({(float(x), float(y)) for x, y in vertices}) != n:
        raise GeometryError("多邊形有重複頂點")
    for i in range(n):
        p1, p2 = vertices[i], vertices[(i + 1) % n]
        for j in range(i + 1, n):
            # 相鄰邊共用頂點，不算相交
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            q1, q2 = vertices[j], vertices[(j + 1) % n]
            if _segments_intersect(p1, p2, q1, q2):
                raise GeometryError(f"多邊形自我相交：邊 {i} 與邊 {j}")
    if abs(_signed_area(vertices)) <= 0:
        raise GeometryError("多邊形面積為 0")


def polygon_angles(vertices: np.ndarray) -> np.ndarray:
    """逆時針頂點序列的內角 ω_c。"""
    prev = np.roll(vertices, 1, axis=0)
    nxt = np.roll(vertices, -1, axis=0)
    e1 = vertices - prev
    e2 = nxt - vertices
    cross = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    dot = np.einsum("ij,ij->i", e1, e2)
    turning = np.arctan2(cross, dot)
    return math.pi - turning


@dataclass(frozen=True)
class DomainSpec:
    kind: str                               # "interval" | "rectangle" | "polygon"
    bounds: Tuple[float, ...] = ()          # interval (a,b)；rectangle (ax,bx,ay,by)
    vertices: Tuple[Tuple[float, float], ...] = ()
    angles: Tuple[float, ...] = ()
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("interval", "rectangle", "polygon"):
            raise ParameterError(f"未知的 domain kind：{self.kind}")
        if self.kind == "interval":
            a, b = self.bounds
            if not a < b:
                raise GeometryError(f"區間需要 a < b：({a}, {b})")
            return
        if self.kind == "rectangle":
            ax, bx, ay, by = self.bounds
            if not (ax < bx and ay < by):
                raise GeometryError(f"長方形邊界不合法：{self.bounds}")
        v = np.asarray(self.vertices, dtype=float)
        if len(self.angles) != len(v):
            raise GeometryError("角度數量與頂點數不符")
        got = polygon_angles(v)
        if np.max(np.abs(got - np.asarray(self.angles))) > ANGLE_TOL:
            raise GeometryError("儲存的角度與頂點計算結果不一致")

    # ---------- 基本幾何量 ----------
    @property
    def dim(self) -> int:
        return 1 if self.kind == "interval" else 2

    @property
    def vertex_array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float)

    @property
    def corners(self) -> np.ndarray:
        # 所有頂點都視為角點；grading exponent 在 fem_omega 決定
        if self.dim == 1:
            return np.array([[self.bounds[0]], [self.bounds[1]]])
        return self.vertex_array

    @property
    def diameter(self) -> float:
        if self.dim == 1:
            return float(self.bounds[1] - self.bounds[0])
        v = self.vertex_array
        d = v[:, None, :] - v[None, :, :]
        return float(np.sqrt(np.max(np.einsum("ijk,ijk->ij", d, d))))

    @property
    def area(self) -> float:
        if self.dim == 1:
            return self.diameter
        return _signed_area(self.vertex_array)

    @property
    def perimeter(self) -> float:
        if self.dim == 1:
            return 0.0
        v = self.vertex_array
        return float(np.sum(np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1)))

    @property
    def bounding_box(self) -> Tuple[float, ...]:
        if self.dim == 1:
            return tuple(self.bounds)
        v = self.vertex_array
        return (float(v[:, 0].min()), float(v[:, 0].max()), float(v[:, 1].min()), float(v[:, 1].max()))

    def edges(self):
        v = self.vertex_array
        return [(v[i], v[(i + 1) % len(v)]) for i in range(len(v))]

    def contains(self, points) -> np.ndarray:
        """閉區域 Ω̄ 的 membership（邊界上算在內）。"""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        if self.dim == 1:
            a, b = self.bounds
            x = p.reshape(-1)
            return (x >= a - 1e-14) & (x <= b + 1e-14)
        x, y = p[:, 0], p[:, 1]
        inside = np.zeros(len(p), dtype=bool)
        for (x1, y1), (x2, y2) in self.edges():
            cond = (y1 > y) != (y2 > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            inside ^= cond & (x < xc)
        return inside | self.on_boundary(p)

    def on_boundary(self, points, tol: float = 1e-12) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        if self.dim == 1:
            a, b = self.bounds
            x = p.reshape(-1)
            return (np.abs(x - a) <= tol) | (np.abs(x - b) <= tol)
        out = np.zeros(len(p), dtype=bool)
        for p1, p2 in self.edges():
            e = p2 - p1
            L2 = float(e @ e)
            t = np.clip(((p - p1) @ e) / L2, 0.0, 1.0)
            proj = p1 + t[:, None] * e
            out |= np.linalg.norm(p - proj, axis=1) <= tol * max(1.0, math.sqrt(L2))
        return out

    def as_polygon(self) -> "DomainSpec":
        if self.kind == "polygon":
            return self
        if self.kind == "rectangle":
            ax, bx, ay, by = self.bounds
            return polygon([(ax, ay), (bx, ay), (bx, by), (ax, by)], name=self.name or "rectangle")
        raise GeometryError("一維區間沒有多邊形表示")


def interval(a: float = 0.0, b: float = 1.0) -> DomainSpec:
    return DomainSpec(kind="interval", bounds=(float(a), float(b)))


def polygon(vertices, name: str = "") -> DomainSpec:
    v = np.asarray(vertices, dtype=float)
    if v.ndim != 2 or v.shape[1] != 2:
        raise GeometryError("vertices 必須是 [[x, y], ...]")
    _check_simple(v)
    if _signed_area(v) < 0:
        v = v[::-1].copy()
    ang = polygon_angles(v)
    return DomainSpec(
        kind="polygon",
        vertices=tuple((float(x), float(y)) for x, y in v),
        angles=tuple(float(a) for a in ang),
        name=name,
    )


def rectangle(ax: float = 0.0, bx: float = 1.0, ay: float = 0.0, by: float = 1.0) -> DomainSpec:
    if not (ax < bx and ay < by):
        raise GeometryError(f"長方形邊界不合法：{(ax, bx, ay, by)}")
    v = np.array([(ax, ay), (bx, ay), (bx, by), (ax, by)], dtype=float)
    return DomainSpec(
        kind="rectangle",
        bounds=(float(ax), float(bx), float(ay), float(by)),
        vertices=tuple((float(x), float(y)) for x, y in v),
        angles=tuple(float(a) for a in polygon_angles(v)),
    )


def l_shape() -> DomainSpec:
    return polygon([(0, 0), (1, 0), (1, 1), (-1, 1), (-1, -1), (0, -1)], name="l_shape")


# ============================================================
# 正弦模態（區間 / 長方形的 Dirichlet 特徵函數）
# ============================================================
def sine_mode_indices(domain: DomainSpec, a: float, c: float, K: int):
    """
    回傳 (lambdas, indices)：依 λ 由小到大排序的前 K 個模態。
    λ 相同時依 (k, l) 字典序，確保排序可重現。
    """
    K = int(K)
    if K < 1:
        raise ParameterError(f"K 必須 ≥ 1：{K}")
    if domain.kind == "interval":
        L = domain.bounds[1] - domain.bounds[0]
        k = np.arange(1, K + 1)
        lam = a * (k * math.pi / L) ** 2 + c
        return lam, k.reshape(-1, 1)
    if domain.kind != "rectangle":
        raise ParameterError(f"{domain.kind} 沒有正弦模態")
    ax, bx, ay, by = domain.bounds
    Lx, Ly = bx - ax, by - ay
    m = math.ceil(math.sqrt(K))
    nx = int(math.ceil(m * math.sqrt(1.0 + (Lx / Ly) ** 2))) + 1
    ny = int(math.ceil(m * math.sqrt(1.0 + (Ly / Lx) ** 2))) + 1
    kk, ll = np.meshgrid(np.arange(1, nx + 1), np.arange(1, ny + 1), indexing="ij")
    kk, ll = kk.reshape(-1), ll.reshape(-1)
    lam = a * math.pi ** 2 * (kk ** 2 / Lx ** 2 + ll ** 2 / Ly ** 2) + c
    order = np.lexsort((ll, kk, lam))[:K]
    return lam[order], np.stack([kk[order], ll[order]], axis=1)


def eval_sine_modes(domain: DomainSpec, indices: np.ndarray, points) -> np.ndarray:
    """L² 正規化的正弦模態在 points 上的值，shape (npoints, K)。"""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    if domain.kind == "interval":
        a, b = domain.bounds
        L = b - a
        x = p.reshape(-1, 1)
        k = np.asarray(indices).reshape(1, -1)
        return math.sqrt(2.0 / L) * np.sin(k * math.pi * (x - a) / L)
    ax, bx, ay, by = domain.bounds
    Lx, Ly = bx - ax, by - ay
    idx = np.asarray(indices)
    sx = math.sqrt(2.0 / Lx) * np.sin(np.outer(p[:, 0] - ax, idx[:, 0]) * math.pi / Lx)
    sy = math.sqrt(2.0 / Ly) * np.sin(np.outer(p[:, 1] - ay, idx[:, 1]) * math.pi / Ly)
    return sx * sy


# ============================================================
# 係數 A, c
# ============================================================
Evaluator = Callable[[np.ndarray], Any]


@dataclass(frozen=True)
class Coefficients:
    diffusion: Any = 1.0        # float | 2x2 | callable(points) -> (n,) 或 (n,2,2)
    reaction: Any = 0.0         # float | callable(points) -> (n,)

    def __post_init__(self):
        # 常數係數轉成 float / nested tuple，assemble_omega 的 cache 要能 hash
        if not callable(self.diffusion):
            A = np.asarray(self.diffusion, dtype=float)
            if A.ndim == 0:
                object.__setattr__(self, "diffusion", float(A))
            elif A.shape == (2, 2):
                object.__setattr__(self, "diffusion", tuple(tuple(float(v) for v in row) for row in A))
            else:
                raise ParameterError(f"diffusion 必須是純量或 2x2 矩陣：shape {A.shape}")
        if not callable(self.reaction):
            object.__setattr__(self, "reaction", float(self.reaction))

    @property
    def is_constant(self) -> bool:
        return not callable(self.diffusion) and not callable(self.reaction)

    def constant_scalar(self) -> Optional[Tuple[float, float]]:
        """A = aI 且 c 為常數時回傳 (a, c)，否則 None。"""
        if not self.is_constant:
            return None
        A = np.asarray(self.diffusion, dtype=float)
        if A.ndim == 0:
            return float(A), float(self.reaction)
        if A.shape == (2, 2) and A[0, 1] == 0 and A[1, 0] == 0 and A[0, 0] == A[1, 1]:
            return float(A[0, 0]), float(self.reaction)
        return None

    def evaluate(self, points: np.ndarray, dim: int):
        """
        在 quadrature 點上取值並檢查 ellipticity 與 c ≥ 0。
        dim=1 回傳 (a (n,), c (n,))；dim=2 回傳 (A (n,2,2), c (n,))。
        """
        p = np.atleast_2d(np.asarray(points, dtype=float))
        n = len(p)
        A = self.diffusion(p) if callable(self.diffusion) else self.diffusion
        A = np.asarray(A, dtype=float)
        c = self.reaction(p) if callable(self.reaction) else self.reaction
        c = np.broadcast_to(np.asarray(c, dtype=float), (n,)).copy()
        if dim == 1:
            if A.ndim not in (0, 1):
                raise ParameterError("一維問題的 diffusion 必須是純量")
            a = np.broadcast_to(A, (n,)).copy()
            lam_min = a
        else:
            if A.ndim == 0 or (A.ndim == 1 and A.shape[0] == n):
                A = A.reshape(-1, 1, 1) * np.eye(2)
            A = np.broadcast_to(A, (n, 2, 2)).copy()
            if np.max(np.abs(A - np.transpose(A, (0, 2, 1)))) > 1e-12 * max(1.0, np.max(np.abs(A))):
                raise ParameterError("diffusion 矩陣必須對稱")
            lam_min = np.linalg.eigvalsh(A)[:, 0]
            a = A
        if np.any(lam_min <= 0):
            raise ParameterError("diffusion 不是一致正定（ellipticity constant ≤ 0）")
        if np.any(c < 0):
            raise ParameterError("reaction c 必須 ≥ 0")
        return a, c


# ============================================================
# 右手邊 f
# ============================================================
@dataclass(frozen=True)
class Forcing:
    kind: str                                   # constant | closure | spectral | eigenfunction
    value: float = 0.0
    evaluator: Optional[Evaluator] = field(default=None, compare=False)
    coefficients: Tuple[float, ...] = ()
    modes: Tuple[int, ...] = ()
    scale: float = 1.0

    @classmethod
    def constant(cls, value: float) -> "Forcing":
        return cls(kind="constant", value=float(value))

    @classmethod
    def closure(cls, fn: Evaluator) -> "Forcing":
        if not callable(fn):
            raise ParameterError("closure forcing 需要 callable")
        return cls(kind="closure", evaluator=fn)

    @classmethod
    def spectral(cls, coefficients) -> "Forcing":
        coeffs = tuple(float(v) for v in np.asarray(coefficients, dtype=float).reshape(-1))
        if not coeffs:
            raise ParameterError("spectral forcing 至少需要一個係數")
        return cls(kind="spectral", coefficients=coeffs)

    @classmethod
    def eigenfunction(cls, modes, scale: float = 1.0) -> "Forcing":
        modes = tuple(int(m) for m in modes)
        if not modes or any(m < 1 for m in modes):
            raise ParameterError(f"modes 必須是正整數：{modes}")
        return cls(kind="eigenfunction", modes=modes, scale=float(scale))

    @property
    def is_zero(self) -> bool:
        if self.kind == "constant":
            return self.value == 0.0
        if self.kind == "spectral":
            return not any(self.coefficients)
        if self.kind == "eigenfunction":
            return self.scale == 0.0
        return False

    def sine_product(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.ones(len(p))
        for d, m in enumerate(self.modes):
            out *= np.sin(m * math.pi * p[:, d])
        return out

    def evaluate(self, points, domain: Optional[DomainSpec] = None) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        if domain is not None and domain.dim == 1 and p.shape[1] != 1:
            p = p.reshape(-1, 1)
        n = len(p)
        if self.kind == "constant":
            return np.full(n, self.value)
        if self.kind == "closure":
            out = np.asarray(self.evaluator(p), dtype=float)
            return np.broadcast_to(out, (n,)).copy()
        if self.kind == "eigenfunction":
            return self.scale * self.sine_product(p)
        # spectral：依 domain 的正弦模態展開
        if domain is None or domain.kind not in ("interval", "rectangle"):
            raise ParameterError("spectral forcing 只能在 interval / rectangle 上求值")
        _, idx = sine_mode_indices(domain, 1.0, 0.0, len(self.coefficients))
        return eval_sine_modes(domain, idx, p) @ np.asarray(self.coefficients)


# ============================================================
# 問題實例
# ============================================================
@dataclass(frozen=True)
class FractionalProblem:
    order: FractionalOrder
    domain: DomainSpec
    coefficients: Coefficients = field(default_factory=Coefficients)
    forcing: Forcing = field(default_factory=lambda: Forcing.constant(1.0))

    def __post_init__(self):
        if self.domain.dim == 1 and not callable(self.coefficients.diffusion):
            if np.asarray(self.coefficients.diffusion).ndim != 0:
                raise ParameterError("一維問題的 diffusion 必須是純量")
        f = self.forcing
        if f.kind == "eigenfunction":
            if len(f.modes) != self.domain.dim:
                raise ParameterError(f"modes 維度 {len(f.modes)} 與 domain 維度 {self.domain.dim} 不符")
            if self.coefficients.constant_scalar() is None:
                raise ParameterError("eigenfunction forcing 需要常數等向係數 A = aI、常數 c")
            _check_vanishes_on_boundary(self.domain, f)
        if f.kind == "spectral" and self.domain.kind not in ("interval", "rectangle"):
            raise ParameterError("spectral forcing 只支援 interval / rectangle")

    @property
    def s(self) -> float:
        return self.order.s

    def eigenvalue(self) -> float:
        """eigenfunction forcing 對應的 λ = aπ²Σm² + c。"""
        if self.forcing.kind != "eigenfunction":
            raise ParameterError("只有 eigenfunction forcing 有對應的特徵值")
        a, c = self.coefficients.constant_scalar()
        return a * math.pi ** 2 * sum(m * m for m in self.forcing.modes) + c

    def forcing_values(self, points) -> np.ndarray:
        return self.forcing.evaluate(points, self.domain)


def _check_vanishes_on_boundary(domain: DomainSpec, f: Forcing):
    if domain.dim == 1:
        pts = np.array([[domain.bounds[0]], [domain.bounds[1]]])
    else:
        t = np.linspace(0.0, 1.0, 7)
        pts = np.concatenate([p1 + np.outer(t, p2 - p1) for p1, p2 in domain.edges()])
    if np.max(np.abs(f.sine_product(pts))) > EIGENFUNCTION_BOUNDARY_TOL:
        raise ParameterError("正弦乘積在 ∂Ω 上不為 0，不是 Dirichlet 特徵函數")


# ============================================================
# JSON 讀寫
# ============================================================
def domain_to_json(domain: DomainSpec) -> Dict[str, Any]:
    if domain.kind == "interval":
        return {"kind": "interval", "a": domain.bounds[0], "b": domain.bounds[1]}
    if domain.kind == "rectangle":
        ax, bx, ay, by = domain.bounds
        return {"kind": "rectangle", "ax": ax, "bx": bx, "ay": ay, "by": by}
    if domain.name == "l_shape":
        return {"kind": "l_shape"}
    return {"kind": "polygon", "vertices": [list(v) for v in domain.vertices]}


def domain_from_json(d: Dict[str, Any]) -> DomainSpec:
    if not isinstance(d, dict):
        raise ParameterError("domain 必須是 JSON object")
    kind = d.get("kind")
    try:
        if kind == "interval":
            return interval(float(d.get("a", 0.0)), float(d.get("b", 1.0)))
        if kind == "rectangle":
            return rectangle(float(d.get("ax", 0.0)), float(d.get("bx", 1.0)),
                             float(d.get("ay", 0.0)), float(d.get("by", 1.0)))
        if kind == "l_shape":
            return l_shape()
        if kind == "polygon":
            return polygon(d["vertices"], name=str(d.get("name", "")))
    except (KeyError, TypeError) as e:
        raise ParameterError(f"domain 欄位不完整：{e!r}") from e
    raise ParameterError(f"未知的 domain kind：{kind!r}")


def problem_to_json(problem: FractionalProblem) -> Dict[str, Any]:
    coeff = problem.coefficients
    if coeff.is_constant is False:
        raise ParameterError("callable 係數無法序列化")
    diff = np.asarray(coeff.diffusion, dtype=float)
    f = problem.forcing
    if f.kind == "constant":
        fj = {"kind": "constant", "value": f.value}
    elif f.kind == "spectral":
        fj = {"kind": "spectral", "coefficients": list(f.coefficients)}
    elif f.kind == "eigenfunction":
        fj = {"kind": "eigenfunction", "modes": list(f.modes), "scale": f.scale}
    else:
        raise ParameterError("closure forcing 無法序列化")
    return {
        "s": problem.order.s,
        "domain": domain_to_json(problem.domain),
        "coefficients": {
            "diffusion": float(diff) if diff.ndim == 0 else diff.tolist(),
            "reaction": float(coeff.reaction),
        },
        "forcing": fj,
    }


def problem_from_json(d: Dict[str, Any]) -> FractionalProblem:
    if not isinstance(d, dict):
        raise ParameterError("problem 必須是 JSON object")
    for key in ("s", "domain", "forcing"):
        if key not in d:
            raise ParameterError(f"problem 缺少欄位 {key!r}")
    order = make_order(d["s"])
    domain = domain_from_json(d["domain"])
    cj = d.get("coefficients") or {}
    diffusion = cj.get("diffusion", 1.0)
    diffusion = float(diffusion) if np.ndim(diffusion) == 0 else tuple(map(tuple, np.asarray(diffusion, dtype=float).tolist()))
    coeff = Coefficients(diffusion=diffusion, reaction=float(cj.get("reaction", 0.0)))

    fj = d["forcing"]
    kind = (fj or {}).get("kind")
    if kind == "constant":
        forcing = Forcing.constant(float(fj.get("value", 1.0)))
    elif kind == "spectral":
        forcing = Forcing.spectral(fj.get("coefficients") or [])
    elif kind == "eigenfunction":
        modes = fj.get("modes") or [1] * domain.dim
        scale = fj.get("scale", "auto")
        forcing = Forcing.eigenfunction(modes)
        if scale == "auto":
            pair = coeff.constant_scalar()
            if pair is None:
                raise ParameterError("scale=auto 需要常數等向係數")
            a, c = pair
            lam = a * math.pi ** 2 * sum(m * m for m in forcing.modes) + c
            forcing = Forcing.eigenfunction(modes, scale=lam ** order.s)
        else:
            forcing = Forcing.eigenfunction(modes, scale=float(scale))
    else:
        raise ParameterError(f"未知的 forcing kind：{kind!r}")
    return FractionalProblem(order=order, domain=domain, coefficients=coeff, forcing=forcing)


def load_problem(path) -> FractionalProblem:
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ParameterError(f"找不到 problem 檔案：{p}") from e
    except json.JSONDecodeError as e:
        raise ParameterError(f"problem JSON 格式錯誤：{e}") from e
    return problem_from_json(data)


def save_problem(problem: FractionalProblem, path):
    Path(path).write_text(json.dumps(problem_to_json(problem), ensure_ascii=False, indent=2), encoding="utf-8")
