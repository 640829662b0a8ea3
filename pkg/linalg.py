"""
線性代數核心：稀疏 SPD 求解、dense generalized symmetric-definite eigenproblem、
Matrix Market 匯出。

SparseSym = scipy.sparse.csr_matrix（組裝時保證對稱）；DenseSym = numpy.ndarray。
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.io import mmwrite

from errors import AccuracyError, IndefiniteMatrixError, ResourceError

# 可手動調整的參數
DIRECT_SOLVE_MAX_N = 200_000
RESIDUAL_TOL = 1e-10
MAX_REFINEMENT_STEPS = 2
CG_MAX_ITER = 20_000
MAX_EIG_DIM = 2000
EIG_NOISE_FACTOR = 16.0       # noise floor = factor·eps·μ_max


def finalize_sym(A) -> sp.csr_matrix:
    """對稱化並移除顯式 0。"""
    A = sp.csr_matrix(A, dtype=float)
    A = ((A + A.T) * 0.5).tocsr()
    A.eliminate_zeros()
    A.sort_indices()
    return A


def symmetrize_dense(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    return 0.5 * (A + A.T)


def relative_residual(A, x, b) -> float:
    b = np.asarray(b, dtype=float)
    nb = float(np.linalg.norm(b))
    r = np.asarray(A @ x).reshape(-1) - b
    return float(np.linalg.norm(r)) / (nb if nb > 0 else 1.0)


def _direct_solve(A: sp.csc_matrix, b: np.ndarray) -> np.ndarray:
    try:
        lu = spla.splu(
            A,
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options=dict(SymmetricMode=True),
        )
    except RuntimeError as e:
        # SuperLU 對 singular factor 丟 RuntimeError
        raise IndefiniteMatrixError(f"factorization 失敗：{e}") from e

    # 對稱 pivoting 下，SPD ⟺ U 的對角線全為正
    if np.any(lu.U.diagonal() <= 0):
        raise IndefiniteMatrixError("factorization 出現非正 pivot，矩陣不是 SPD")

    x = lu.solve(b)
    res = relative_residual(A, x, b)
    for _ in range(MAX_REFINEMENT_STEPS):
        if res <= RESIDUAL_TOL:
            break
        x = x + lu.solve(b - A @ x)
        res = relative_residual(A, x, b)
    if res > RESIDUAL_TOL:
        raise AccuracyError(f"direct solve 殘差 {res:.3e} > {RESIDUAL_TOL}", estimate=res)
    return x


def _cg_solve(A: sp.csr_matrix, b: np.ndarray) -> np.ndarray:
    d = A.diagonal()
    if np.any(d <= 0):
        raise IndefiniteMatrixError("對角線有非正元素，矩陣不是 SPD")
    inv_d = 1.0 / d
    precond = spla.LinearOperator(A.shape, matvec=lambda v: inv_d * v, dtype=float)
    x, info = spla.cg(A, b, rtol=RESIDUAL_TOL * 0.5, atol=0.0, maxiter=CG_MAX_ITER, M=precond)
    res = relative_residual(A, x, b)
    if info != 0 or res > RESIDUAL_TOL:
        raise IndefiniteMatrixError(f"CG 停滯（info={info}, residual={res:.3e}）")
    return x


def spd_solve(A, b) -> np.ndarray:
    b = np.asarray(b, dtype=float).reshape(-1)
    n = A.shape[0]
    if A.shape != (n, n) or b.shape[0] != n:
        raise ValueError(f"維度不符：A {A.shape}, b {b.shape}")
    if not np.any(b):
        return np.zeros(n)
    if not sp.issparse(A):
        A = sp.csr_matrix(np.asarray(A, dtype=float))
    if n <= DIRECT_SOLVE_MAX_N:
        return _direct_solve(sp.csc_matrix(A), b)
    return _cg_solve(sp.csr_matrix(A), b)


def gen_sym_eig(M, S):
    """
    解 M v = μ S v，回傳 μ 由小到大、V 滿足 VᵀSV = I、VᵀMV = diag(μ)。
    特徵向量的正負號固定為「絕對值最大分量為正」，確保結果可重現。

    低於 noise floor（EIG_NOISE_FACTOR·eps·μ_max）的 μ 在 double 下無法解析，
    一律回傳 0.0，由呼叫端改用 μ → 0 的極限；比 −floor 更負則 raise AccuracyError。
    """
    M = symmetrize_dense(M)
    S = symmetrize_dense(S)
    n = S.shape[0]
    if M.shape != (n, n):
        raise ValueError(f"維度不符：M {M.shape}, S {S.shape}")
    if n > MAX_EIG_DIM:
        raise ResourceError(f"dense eigenproblem 維度 {n} > {MAX_EIG_DIM}")
    try:
        sla.cholesky(S, lower=True)
    except sla.LinAlgError as e:
        raise IndefiniteMatrixError(f"S 不是 SPD：{e}") from e

    mu, V = sla.eigh(M, S)
    floor = EIG_NOISE_FACTOR * np.finfo(float).eps * float(np.max(np.abs(mu))) if n else 0.0
    if n and mu[0] < -floor:
        raise AccuracyError(f"generalized eigenproblem 出現負的 μ：{mu[0]:.3e}（noise floor {floor:.3e}）",
                            estimate=float(mu[0]))
    mu = np.where(mu <= floor, 0.0, mu)
    # eigh 的 B-正規化已是 VᵀSV = I；再做一次以消除捨入
    norms = np.sqrt(np.einsum("ij,ij->j", V, S @ V))
    V = V / norms
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    V = V * signs
    return mu, V


def export_matrix_market(path, A, comment: str = ""):
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    mat = A if sp.issparse(A) else np.asarray(A, dtype=float)
    mmwrite(str(p), mat, comment=comment)
    return p
