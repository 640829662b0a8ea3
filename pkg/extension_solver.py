"""
把各部分組成完整的解法：
- diagonalize：y 方向的 generalized eigenproblem，把 cylinder 問題拆成 𝓜 個 reaction–diffusion 問題
- solve_diagonalized：𝓜 個獨立 solve（asyncio.Semaphore 控制並行數）
- solve_full_tensor_direct：一次組完整個 Kronecker 系統直接解，做為 diagonalization 的 oracle
- solve_sparse_combination：combination formula 的 2L+1 個 anisotropic solve
- energy_error_squared / choose_truncation / eigenvalue 量測
"""
from __future__ import annotations

import asyncio
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from errors import DomainError, ParameterError, ReferenceInconsistencyError, ResourceError
from fem_omega import (
    IntervalSpace,
    P1Space,
    assemble_omega,
    intervals_nested,
    is_nested,
    reaction_diffusion_solve,
)
from fem_y import YSpace, assemble_weighted, nested, reference_shapes
from linalg import gen_sym_eig, spd_solve
from problem import FractionalOrder, FractionalProblem

# 可手動調整的參數
MAX_TENSOR_DOF = 500_000
NEGATIVE_ERROR_TOL = 1e-12
SUP_NORM_SAMPLES = 8

# 預設 truncation recipe
P1_ETA_FACTOR = 2.0             # η = 2/s
HP_SIGMA = 0.05
HP_SLOPE = 2.0
HP_SIGMA_X = 0.15


# ============================================================
# diagonalization
# ============================================================
@dataclass(frozen=True, eq=False)
class DiagonalizedSystem:
    y_space: YSpace
    alpha: float
    mu: np.ndarray = field(repr=False)          # 由小到大
    V: np.ndarray = field(repr=False)           # 各行 S_y-正規化
    trace: np.ndarray = field(repr=False)       # v_i(0)
    S: np.ndarray = field(repr=False)
    M: np.ndarray = field(repr=False)

    @property
    def n_modes(self) -> int:
        return len(self.mu)

    @property
    def Y(self) -> float:
        return self.y_space.mesh.Y

    @property
    def mu_upper_bound(self) -> float:
        """μ ≤ 𝒴²/(1−α²)。"""
        return self.Y ** 2 / (1.0 - self.alpha ** 2)

    @property
    def n_unresolved(self) -> int:
        """低於 noise floor、以 μ = 0 處理的 mode 數。"""
        return int(np.count_nonzero(self.mu == 0.0))


def diagonalize(y_space: YSpace, alpha: float) -> DiagonalizedSystem:
    S, M = assemble_weighted(y_space, alpha)
    mu, V = gen_sym_eig(M, S)
    trace = y_space.trace_row() @ V
    return DiagonalizedSystem(y_space=y_space, alpha=float(alpha), mu=mu, V=V, trace=trace, S=S, M=M)


# ============================================================
# 解
# ============================================================
@dataclass(frozen=True, eq=False)
class ExtensionSolution:
    """𝒰 = Σ_i U_i v_i；U 的第 i 行是 U_i（Ω 方向係數）。"""
    problem: FractionalProblem
    omega_space: object
    diag: DiagonalizedSystem
    U: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)

    @property
    def order(self) -> FractionalOrder:
        return self.problem.order

    @property
    def n_total(self) -> int:
        return self.omega_space.ndof * self.diag.y_space.ndof

    @property
    def X(self) -> np.ndarray:
        """y-basis 係數：X = U Vᵀ。"""
        return self.U @ self.diag.V.T

    def trace(self) -> np.ndarray:
        # i 由小到大累加，結果可重現
        out = np.zeros(self.U.shape[0])
        for i in range(self.U.shape[1]):
            out += self.diag.trace[i] * self.U[:, i]
        return out

    def energy(self) -> float:
        """Σ_i ‖U_i‖²_{μ_i,Ω} = Σ_i U_iᵀ(μ_i A + M)U_i。"""
        A, M = assemble_omega(self.omega_space, self.problem.coefficients)
        total = 0.0
        for i, mu in enumerate(self.diag.mu):
            u = self.U[:, i]
            total += float(mu * (u @ (A @ u)) + u @ (M @ u))
        return total

    def tensor_energy(self) -> float:
        """a_C(𝒰,𝒰) 直接用 tensor 形式 tr(XᵀAX M_y) + tr(XᵀMX S_y) 計算。"""
        A, M = assemble_omega(self.omega_space, self.problem.coefficients)
        X = self.X
        return float(np.sum((A @ X) * (X @ self.diag.M)) + np.sum((M @ X) * (X @ self.diag.S)))

    def pairing(self) -> float:
        """d_s⟨f, tr 𝒰⟩。"""
        return self.order.d_s * float(self.b @ self.trace())

    def evaluate(self, y) -> np.ndarray:
        """Ω 自由度在高度 y 的值，shape (ndof_Ω, len(y))。"""
        vy = self.diag.y_space.evaluate(self.diag.V, y)         # (len(y), 𝓜)
        return self.U @ vy.T

    def trace_at(self, x) -> np.ndarray:
        """一維時在任意點的 trace 值。"""
        if not isinstance(self.omega_space, IntervalSpace):
            raise ParameterError("trace_at 只支援區間上的解")
        return self.omega_space.evaluate(self.trace(), x)


def _omega_load(problem: FractionalProblem, omega_space) -> np.ndarray:
    return omega_space.load(problem.forcing)


async def solve_diagonalized_async(problem: FractionalProblem, omega_space, y_space: YSpace, jobs: int = 1,
                                   diag: Optional[DiagonalizedSystem] = None) -> ExtensionSolution:
    if diag is None:
        diag = diagonalize(y_space, problem.order.alpha)
    coeff = problem.coefficients
    if omega_space.ndof == 0:
        # 最粗層可能沒有內部節點（sparse hierarchy 從 h = 1 開始）
        return ExtensionSolution(problem=problem, omega_space=omega_space, diag=diag,
                                 U=np.zeros((0, diag.n_modes)), b=np.zeros(0))
    # 先組好並 cache，thread 之間只讀
    assemble_omega(omega_space, coeff)
    b = _omega_load(problem, omega_space)
    d_s = problem.order.d_s

    def one(i: int) -> np.ndarray:
        return reaction_diffusion_solve(omega_space, coeff, mu=float(diag.mu[i]),
                                        rhs_scale=d_s * float(diag.trace[i]), f=problem.forcing, b=b)

    n = diag.n_modes
    if jobs <= 1:
        cols = [one(i) for i in range(n)]
    else:
        sem = asyncio.Semaphore(int(jobs))

        async def run(i: int):
            async with sem:
                return await asyncio.to_thread(one, i)

        cols = await asyncio.gather(*(run(i) for i in range(n)))
    U = np.column_stack(cols) if cols else np.zeros((omega_space.ndof, 0))
    return ExtensionSolution(problem=problem, omega_space=omega_space, diag=diag, U=U, b=b)


def solve_diagonalized(problem: FractionalProblem, omega_space, y_space: YSpace, jobs: int = 1,
                       diag: Optional[DiagonalizedSystem] = None) -> ExtensionSolution:
    return asyncio.run(solve_diagonalized_async(problem, omega_space, y_space, jobs=jobs, diag=diag))


def solve_full_tensor_direct(problem: FractionalProblem, omega_space, y_space: YSpace,
                             diag: Optional[DiagonalizedSystem] = None) -> ExtensionSolution:
    """
    組 (M_y ⊗ A_Ω + S_y ⊗ M_Ω) x = d_s (t ⊗ b)，x = vec(X) column-major，一次直接解。
    結果轉回 eigen 座標 U = X S_y V，與 solve_diagonalized 用同一組查詢比較。
    """
    n_omega = omega_space.ndof
    n_y = y_space.ndof
    if n_omega * n_y > MAX_TENSOR_DOF:
        raise ResourceError(f"tensor 系統 {n_omega}×{n_y} = {n_omega * n_y} > {MAX_TENSOR_DOF}")
    if diag is None:
        diag = diagonalize(y_space, problem.order.alpha)
    A, M = assemble_omega(omega_space, problem.coefficients)
    b = _omega_load(problem, omega_space)
    big = sp.kron(sp.csr_matrix(diag.M), A) + sp.kron(sp.csr_matrix(diag.S), M)
    rhs = problem.order.d_s * np.kron(y_space.trace_row(), b)
    x = spd_solve(big.tocsr(), rhs)
    X = x.reshape((n_omega, n_y), order="F")
    U = X @ (diag.S @ diag.V)
    return ExtensionSolution(problem=problem, omega_space=omega_space, diag=diag, U=U, b=b)


# ============================================================
# sparse tensor combination
# ============================================================
@dataclass(frozen=True)
class SparseComponent:
    sign: int
    omega_level: int
    y_level: int
    solution: ExtensionSolution


@dataclass(frozen=True)
class SparseSolution:
    level: int
    components: Tuple[SparseComponent, ...]

    @property
    def n_solves(self) -> int:
        return len(self.components)

    @property
    def n_total(self) -> int:
        return sum(c.solution.n_total for c in self.components)

    def pairing(self) -> float:
        # ⟨f, tr û_L⟩ 是線性泛函，逐項計算即可，不需要跨網格內插
        return float(sum(c.sign * c.solution.pairing() for c in self.components))


def combination_indices(L: int) -> List[Tuple[int, int, int]]:
    """(sign, ℓ, ℓ′)：+u_{ℓ,L−ℓ}（ℓ=0..L）與 −u_{ℓ−1,L−ℓ}（ℓ=1..L）。"""
    L = int(L)
    out = [(1, l, L - l) for l in range(L + 1)]
    out += [(-1, l - 1, L - l) for l in range(1, L + 1)]
    return out


def _omega_nested(coarse, fine) -> bool:
    if isinstance(coarse, P1Space) and isinstance(fine, P1Space):
        return is_nested(coarse.mesh, fine.mesh)
    if isinstance(coarse, IntervalSpace) and isinstance(fine, IntervalSpace):
        return coarse.q == fine.q and intervals_nested(coarse, fine)
    return False


def check_hierarchies(omega_spaces: Sequence, y_spaces: Sequence[YSpace], L: int):
    if L < 0:
        raise ParameterError(f"L 必須 ≥ 0：{L}")
    if len(omega_spaces) < L + 1 or len(y_spaces) < L + 1:
        raise ParameterError(f"hierarchy 層數不足 L+1 = {L + 1}")
    for l in range(L):
        if not _omega_nested(omega_spaces[l], omega_spaces[l + 1]):
            raise ParameterError(f"Ω hierarchy 在第 {l} 層不巢狀")
        if not nested(y_spaces[l].mesh, y_spaces[l + 1].mesh):
            raise ParameterError(f"y hierarchy 在第 {l} 層不巢狀")


async def solve_sparse_combination_async(problem: FractionalProblem, omega_spaces: Sequence,
                                         y_spaces: Sequence[YSpace], L: int, jobs: int = 1) -> SparseSolution:
    check_hierarchies(omega_spaces, y_spaces, L)
    diags: Dict[int, DiagonalizedSystem] = {}
    for _, _, ly in combination_indices(L):
        if ly not in diags:
            diags[ly] = diagonalize(y_spaces[ly], problem.order.alpha)

    async def one(sign: int, lo: int, ly: int) -> SparseComponent:
        sol = await solve_diagonalized_async(problem, omega_spaces[lo], y_spaces[ly], jobs=1, diag=diags[ly])
        return SparseComponent(sign=sign, omega_level=lo, y_level=ly, solution=sol)

    idx = combination_indices(L)
    if jobs <= 1:
        comps = [await one(*t) for t in idx]
    else:
        sem = asyncio.Semaphore(int(jobs))

        async def run(t):
            async with sem:
                return await one(*t)

        comps = await asyncio.gather(*(run(t) for t in idx))
    return SparseSolution(level=int(L), components=tuple(comps))


def solve_sparse_combination(problem: FractionalProblem, omega_spaces: Sequence, y_spaces: Sequence[YSpace],
                             L: int, jobs: int = 1) -> SparseSolution:
    return asyncio.run(solve_sparse_combination_async(problem, omega_spaces, y_spaces, L, jobs=jobs))


# ============================================================
# 誤差
# ============================================================
def energy_error_squared(problem: FractionalProblem, reference_trace_pairing: float, sol) -> float:
    """
    Galerkin 解：‖𝒰 − 𝒰_h‖² = d_s⟨f,u⟩ − d_s⟨f, tr 𝒰_h⟩。
    SparseSolution 不是 Galerkin projection，回傳 |reference − pairing|。
    """
    ref = float(reference_trace_pairing)
    p = sol.pairing()
    if isinstance(sol, SparseSolution):
        return abs(ref - p)
    e2 = ref - p
    if e2 < -NEGATIVE_ERROR_TOL * abs(ref):
        raise ReferenceInconsistencyError(
            f"誤差平方為負：reference={ref:.15g}, pairing={p:.15g}", value=e2)
    return e2


# ============================================================
# truncation recipe
# ============================================================
@dataclass(frozen=True)
class TruncationChoice:
    mode: str
    Y: float
    eta: Optional[float] = None
    k: Optional[float] = None
    sigma: Optional[float] = None
    M: Optional[int] = None
    slope: Optional[float] = None
    q: Optional[int] = None
    sigma_x: Optional[float] = None
    epsilon_min: Optional[float] = None

    def with_overrides(self, overrides: Optional[dict]) -> "TruncationChoice":
        if not overrides:
            return self
        known = {k: v for k, v in overrides.items() if k in self.__dataclass_fields__ and v is not None}
        data = {**self.__dict__, **known}
        if data.get("M") is not None:
            data["M"] = int(data["M"])
        if data.get("q") is not None:
            data["q"] = int(data["q"])
        return TruncationChoice(**data)


def choose_truncation(h: float, mode: str, s: float = 0.5, level: Optional[int] = None,
                      overrides: Optional[dict] = None) -> TruncationChoice:
    """
    P1   : 𝒴 = max(1, |ln h|), η = 2/s, k = h/2（取成 1/N）
    HPinY: 𝒴 = max(1, |log₂ h|/3), M = |log₂(h/2)|, σ = 0.05, 𝔰 = 2
    hp_full_1d: q = M = level, 𝒴 = max(1, M/2), σ = 0.05, 𝔰 = 2, σ_x = 0.15
    """
    if mode == "hp_full_1d":
        if level is None or int(level) < 1:
            raise ParameterError("hp_full_1d 需要 level ≥ 1")
        M = int(level)
        Y = max(1.0, 0.5 * M)
        eps = min(1.0, math.sqrt(Y * HP_SIGMA ** M) / (HP_SLOPE * M))
        choice = TruncationChoice(mode=mode, Y=Y, sigma=HP_SIGMA, M=M, slope=HP_SLOPE, q=M,
                                  sigma_x=HP_SIGMA_X, epsilon_min=eps)
        return choice.with_overrides(overrides)
    if not (0.0 < h < 1.0):
        raise DomainError(f"h 必須在 (0,1)：{h}")
    if mode == "P1":
        if not (0.0 < s < 1.0):
            raise DomainError(f"s 必須在 (0,1)：{s}")
        Y = max(1.0, abs(math.log(h)))
        k = 1.0 / math.ceil(2.0 / h - 1e-9)
        choice = TruncationChoice(mode=mode, Y=Y, eta=P1_ETA_FACTOR / s, k=k)
    elif mode == "HPinY":
        Y = max(1.0, abs(math.log2(h)) / 3.0)
        M = max(1, int(math.ceil(abs(math.log2(h / 2.0)) - 1e-9)))
        choice = TruncationChoice(mode=mode, Y=Y, sigma=HP_SIGMA, M=M, slope=HP_SLOPE)
    else:
        raise ParameterError(f"未知的 truncation mode：{mode}")
    return choice.with_overrides(overrides)


# ============================================================
# eigenvalue / eigenvector 量測
# ============================================================
def eigenvalue_window(diag: DiagonalizedSystem, M: int, sigma: float, slope: float) -> Dict[str, float]:
    """μ_max/M² 與 μ_min·𝔰²·M·σ^{−M}，給 regression window 用。"""
    mu_min = float(diag.mu[0])
    mu_max = float(diag.mu[-1])
    return {
        "mu_min": mu_min,
        "mu_max": mu_max,
        "mu_max_over_M2": mu_max / (M * M),
        "mu_min_scaled": mu_min * slope * slope * M * sigma ** (-M),
        "upper_bound": diag.mu_upper_bound,
        "inverse_estimate": diag.y_space.h_min ** 2 / diag.y_space.q_max ** 4,
    }


def sup_norm_eigvecs(diag: DiagonalizedSystem, samples: int = SUP_NORM_SAMPLES) -> float:
    """max_i ‖v_i‖_∞，在每個元素上取 samples·r + 2 個點。"""
    space = diag.y_space
    best = 0.0
    for e in range(space.mesh.n_elements):
        r = space.degrees.degrees[e]
        xi = np.linspace(-1.0, 1.0, samples * r + 2)
        vals, _ = reference_shapes(r, xi)
        dofs = space.element_dofs(e)
        mask = dofs >= 0
        local = vals[mask].T @ diag.V[dofs[mask]]
        best = max(best, float(np.max(np.abs(local))))
    return best
