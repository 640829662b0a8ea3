"""
修正 Bessel 函數 K_ν 與 extension profile ψ(z) = c_s z^s K_s(z)。

主要分支用 scipy.special.kv / kve；reflection series
K_ν = (π/2)(I_{−ν} − I_ν)/sin(νπ) 保留為第二個獨立分支，用來驗證 K_ν = K_{−ν}。
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import iv, kv, kve

from errors import DomainError, SingularEvaluationError, UnsupportedOrderError
from problem import FractionalOrder

MAX_NU = 1.5
MAX_PSI_DERIVATIVE = 12
# z 小於這個值時 z^{-ν} 會 overflow
SINGULAR_Z = 1e-300
HALF_GUARD = 1e-8


def _scalar_or_array(z, out):
    if np.ndim(z) == 0:
        return float(np.asarray(out).reshape(()))
    return out


def _check_z(z_arr: np.ndarray):
    if np.any(~np.isfinite(z_arr)) or np.any(z_arr <= 0):
        raise DomainError("bessel_k 需要 z > 0")
    if np.any(z_arr < SINGULAR_Z):
        raise SingularEvaluationError(f"z < {SINGULAR_Z} 時 K_ν overflow")


def bessel_k(nu: float, z):
    nu = float(nu)
    if abs(nu) > MAX_NU:
        raise DomainError(f"|ν| 必須 ≤ {MAX_NU}：ν={nu}")
    z_arr = np.asarray(z, dtype=float)
    _check_z(z_arr)
    # K_ν = K_{−ν}
    out = kv(abs(nu), z_arr)
    return _scalar_or_array(z, out)


def bessel_k_scaled(nu: float, z):
    """e^{z} K_ν(z)。"""
    nu = float(nu)
    if abs(nu) > MAX_NU:
        raise DomainError(f"|ν| 必須 ≤ {MAX_NU}：ν={nu}")
    z_arr = np.asarray(z, dtype=float)
    _check_z(z_arr)
    return _scalar_or_array(z, kve(abs(nu), z_arr))


def bessel_k_reflection(nu: float, z):
    """
    reflection series 分支，只適用於非整數 ν 且 z 不大（z ≲ 2 精度最好）。
    ν = ±1/2 直接走 closed form。
    """
    nu = float(nu)
    if abs(nu) > MAX_NU:
        raise DomainError(f"|ν| 必須 ≤ {MAX_NU}：ν={nu}")
    if abs(nu - round(nu)) < 1e-12:
        raise DomainError("reflection formula 不適用於整數 ν")
    z_arr = np.asarray(z, dtype=float)
    _check_z(z_arr)
    if abs(abs(nu) - 0.5) < HALF_GUARD:
        out = np.sqrt(math.pi / (2.0 * z_arr)) * np.exp(-z_arr)
    else:
        out = 0.5 * math.pi * (iv(-nu, z_arr) - iv(nu, z_arr)) / math.sin(nu * math.pi)
    return _scalar_or_array(z, out)


# ============================================================
# ψ profile
# ============================================================
def c_s(order: FractionalOrder) -> float:
    return 2.0 ** (1.0 - order.s) / float(gamma_fn(order.s))


@dataclass(frozen=True)
class PsiProfile:
    order: FractionalOrder
    c_s: float

    @classmethod
    def of(cls, order: FractionalOrder) -> "PsiProfile":
        return cls(order=order, c_s=c_s(order))

    def __call__(self, z):
        return psi(self.order, z)

    def derivative(self, ell: int, z):
        return psi_derivative(self.order, ell, z)


def psi(order: FractionalOrder, z):
    z_arr = np.asarray(z, dtype=float)
    if np.any(~np.isfinite(z_arr)) or np.any(z_arr < 0):
        raise DomainError("psi 需要 z ≥ 0")
    if order.s == 0.5:
        return _scalar_or_array(z, np.exp(-z_arr))
    out = np.ones_like(z_arr)
    pos = z_arr >= SINGULAR_Z
    zp = z_arr[pos]
    out[pos] = c_s(order) * np.power(zp, order.s) * kv(order.s, zp)
    return _scalar_or_array(z, out)


def psi_scaled(order: FractionalOrder, z):
    """e^{z}ψ(z)，大 z 時不會 underflow。"""
    z_arr = np.asarray(z, dtype=float)
    if np.any(~np.isfinite(z_arr)) or np.any(z_arr < 0):
        raise DomainError("psi_scaled 需要 z ≥ 0")
    if order.s == 0.5:
        return _scalar_or_array(z, np.ones_like(z_arr))
    out = np.ones_like(z_arr)
    pos = z_arr >= SINGULAR_Z
    zp = z_arr[pos]
    out[pos] = c_s(order) * np.power(zp, order.s) * kve(order.s, zp)
    return _scalar_or_array(z, out)


def psi_derivative_scaled(order: FractionalOrder, z):
    """e^{z}ψ′(z) = −c_s z^s e^{z}K_{1−s}(z)。"""
    z_arr = np.asarray(z, dtype=float)
    _check_z(z_arr)
    if order.s == 0.5:
        return _scalar_or_array(z, -np.ones_like(z_arr))
    return _scalar_or_array(z, -c_s(order) * np.power(z_arr, order.s) * kve(1.0 - order.s, z_arr))


@lru_cache(maxsize=None)
def _derivative_polynomials(alpha: float, ell: int):
    """
    ψ^{(ℓ)} = A_ℓ(1/z)ψ + B_ℓ(1/z)ψ′，A、B 以 1/z 的次方係數儲存。
    由 ψ″ = ψ − (α/z)ψ′ 得 A_{ℓ+1} = A′ + B，B_{ℓ+1} = A + B′ − (α/z)B。
    """
    A = np.zeros(2 * ell + 2)
    B = np.zeros(2 * ell + 2)
    A[0] = 1.0

    def d(P):
        # d/dz z^{−m} = −m z^{−m−1}
        out = np.zeros_like(P)
        m = np.arange(len(P) - 1)
        out[1:] = -m * P[:-1]
        return out

    def over_z(P):
        out = np.zeros_like(P)
        out[1:] = P[:-1]
        return out

    for _ in range(ell):
        A, B = d(A) + B, A + d(B) - alpha * over_z(B)
    return A, B


def psi_derivative(order: FractionalOrder, ell: int, z):
    ell = int(ell)
    if ell < 0:
        raise DomainError(f"ℓ 必須 ≥ 0：{ell}")
    if ell > MAX_PSI_DERIVATIVE:
        raise UnsupportedOrderError(f"ℓ > {MAX_PSI_DERIVATIVE} 的導數不支援（recurrence 條件數太差）")
    z_arr = np.asarray(z, dtype=float)
    _check_z(z_arr)
    if order.s == 0.5:
        sign = -1.0 if ell % 2 else 1.0
        return _scalar_or_array(z, sign * np.exp(-z_arr))
    cs = c_s(order)
    p0 = cs * np.power(z_arr, order.s) * kv(order.s, z_arr)
    if ell == 0:
        return _scalar_or_array(z, p0)
    p1 = -cs * np.power(z_arr, order.s) * kv(1.0 - order.s, z_arr)
    if ell == 1:
        return _scalar_or_array(z, p1)
    A, B = _derivative_polynomials(order.alpha, ell)
    w = 1.0 / z_arr
    Az = np.polynomial.polynomial.polyval(w, A)
    Bz = np.polynomial.polynomial.polyval(w, B)
    return _scalar_or_array(z, Az * p0 + Bz * p1)
