"""
區間 / 長方形上常係數算子的特徵展開（ground-truth oracle）：
精確分數階解、ℍ^σ norm、extension 𝒰(x, y) = Σ u_k φ_k(x) ψ(√λ_k y)、尾端能量、
以及 d_s⟨f, u⟩ 的 reference pairing。

L 形等一般多邊形不支援（UnsupportedDomainError），那邊的 reference 由 study.py
用細網格求解取得。
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.special import kve, roots_legendre

from bessel import c_s, psi, psi_derivative
from errors import AccuracyError, DomainError, ParameterError, UnsupportedDomainError
from problem import (
    Coefficients,
    DomainSpec,
    Forcing,
    FractionalOrder,
    eval_sine_modes,
    sine_mode_indices,
)

# 可手動調整的參數
DEFAULT_K_INTERVAL = 2000
DEFAULT_K_RECTANGLE = 64 * 64
LAGUERRE_NODES = 64
QUAD_EPSREL = 1e-12
# 常數 forcing 的閉式級數截斷
PAIRING_MODES_INTERVAL = 10_000_000
PAIRING_MODES_RECTANGLE = 2000
PAIRING_CHUNK = 1_000_000

_LAGUERRE = np.polynomial.laguerre.laggauss(LAGUERRE_NODES)


@dataclass(frozen=True)
class SpectralBasis:
    domain: DomainSpec
    diffusion: float
    reaction: float
    lambdas: np.ndarray = field(repr=False)
    indices: np.ndarray = field(repr=False)

    @property
    def K(self) -> int:
        return len(self.lambdas)

    def evaluate(self, points) -> np.ndarray:
        return eval_sine_modes(self.domain, self.indices, points)


@dataclass(frozen=True)
class SpectralFunction:
    basis: SpectralBasis
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        if len(self.coeffs) > self.basis.K:
            raise ParameterError(f"係數數量 {len(self.coeffs)} 超過 basis K={self.basis.K}")

    @property
    def padded(self) -> np.ndarray:
        out = np.zeros(self.basis.K)
        out[: len(self.coeffs)] = self.coeffs
        return out


@dataclass(frozen=True)
class PairingResult:
    value: float
    truncation_estimate: float


def build_basis(domain: DomainSpec, a: float, c: float, K: Optional[int] = None) -> SpectralBasis:
    if domain.kind not in ("interval", "rectangle"):
        raise UnsupportedDomainError(f"spectral oracle 不支援 {domain.kind}（只支援 interval / rectangle）")
    if not a > 0:
        raise ParameterError(f"diffusion a 必須 > 0：{a}")
    if c < 0:
        raise ParameterError(f"reaction c 必須 ≥ 0：{c}")
    if K is None:
        K = DEFAULT_K_INTERVAL if domain.kind == "interval" else DEFAULT_K_RECTANGLE
    lam, idx = sine_mode_indices(domain, float(a), float(c), int(K))
    return SpectralBasis(domain=domain, diffusion=float(a), reaction=float(c), lambdas=lam, indices=idx)


def basis_for(domain: DomainSpec, coefficients: Coefficients, K: Optional[int] = None) -> SpectralBasis:
    pair = coefficients.constant_scalar()
    if pair is None:
        raise ParameterError("spectral oracle 只適用於常數等向係數 A = aI")
    return build_basis(domain, pair[0], pair[1], K)


# ============================================================
# forcing 展開
# ============================================================
def _constant_coeffs_1d(k: np.ndarray, L: float) -> np.ndarray:
    return math.sqrt(2.0 * L) * (1.0 - (-1.0) ** k) / (k * math.pi)


def _gauss_grid(lo: float, hi: float, n: int):
    x, w = roots_legendre(n)
    return 0.5 * (hi - lo) * x + 0.5 * (hi + lo), 0.5 * (hi - lo) * w


def _projection_grids(basis: SpectralBasis):
    d = basis.domain
    kmax = np.max(basis.indices, axis=0)
    if d.kind == "interval":
        return [_gauss_grid(d.bounds[0], d.bounds[1], int(2 * kmax[0] + 64))]
    ax, bx, ay, by = d.bounds
    return [_gauss_grid(ax, bx, int(2 * kmax[0] + 64)), _gauss_grid(ay, by, int(2 * kmax[1] + 64))]


def _sines_1d(x: np.ndarray, k: np.ndarray, lo: float, hi: float) -> np.ndarray:
    L = hi - lo
    return math.sqrt(2.0 / L) * np.sin(np.outer(x - lo, k) * math.pi / L)


def expand_forcing(basis: SpectralBasis, forcing: Forcing) -> SpectralFunction:
    d = basis.domain
    if forcing.kind == "spectral":
        coeffs = np.asarray(forcing.coefficients, dtype=float)
        return SpectralFunction(basis, coeffs)
    if forcing.kind == "constant":
        if d.kind == "interval":
            k = basis.indices[:, 0].astype(float)
            coeffs = forcing.value * _constant_coeffs_1d(k, d.bounds[1] - d.bounds[0])
        else:
            ax, bx, ay, by = d.bounds
            k = basis.indices[:, 0].astype(float)
            l = basis.indices[:, 1].astype(float)
            coeffs = forcing.value * _constant_coeffs_1d(k, bx - ax) * _constant_coeffs_1d(l, by - ay)
        return SpectralFunction(basis, coeffs)

    # closure / eigenfunction：可分離的 Gauss–Legendre 投影
    grids = _projection_grids(basis)
    if d.kind == "interval":
        (x, w), = grids
        F = forcing.evaluate(x.reshape(-1, 1), d)
        S = _sines_1d(x, basis.indices[:, 0], d.bounds[0], d.bounds[1])
        return SpectralFunction(basis, S.T @ (w * F))
    (x, wx), (y, wy) = grids
    ax, bx, ay, by = d.bounds
    X, Y = np.meshgrid(x, y, indexing="ij")
    F = forcing.evaluate(np.stack([X.reshape(-1), Y.reshape(-1)], axis=1), d).reshape(len(x), len(y))
    kx = np.arange(1, int(np.max(basis.indices[:, 0])) + 1)
    ky = np.arange(1, int(np.max(basis.indices[:, 1])) + 1)
    Sx = _sines_1d(x, kx, ax, bx)
    Sy = _sines_1d(y, ky, ay, by)
    C = Sx.T @ (wx[:, None] * F * wy[None, :]) @ Sy
    coeffs = C[basis.indices[:, 0] - 1, basis.indices[:, 1] - 1]
    return SpectralFunction(basis, coeffs)


def forcing_l2_norm_sq(basis: SpectralBasis, forcing: Forcing) -> float:
    """‖f‖²_{L²(Ω)}，用與投影相同的 tensor Gauss 規則。"""
    d = basis.domain
    if forcing.kind == "constant":
        return forcing.value ** 2 * d.area
    if forcing.kind == "spectral":
        return float(np.sum(np.asarray(forcing.coefficients) ** 2))
    grids = _projection_grids(basis)
    if d.kind == "interval":
        (x, w), = grids
        F = forcing.evaluate(x.reshape(-1, 1), d)
        return float(np.sum(w * F * F))
    (x, wx), (y, wy) = grids
    X, Y = np.meshgrid(x, y, indexing="ij")
    F = forcing.evaluate(np.stack([X.reshape(-1), Y.reshape(-1)], axis=1), d).reshape(len(x), len(y))
    return float(wx @ (F * F) @ wy)


def project(basis: SpectralBasis, forcing: Forcing) -> SpectralFunction:
    return expand_forcing(basis, forcing)


# ============================================================
# 分數階解與 norm
# ============================================================
def solve_fractional(basis: SpectralBasis, f: SpectralFunction, order: FractionalOrder) -> SpectralFunction:
    lam = basis.lambdas[: len(f.coeffs)]
    return SpectralFunction(basis, np.asarray(f.coeffs) * lam ** (-order.s))


def hs_norm(w: SpectralFunction, sigma: float) -> float:
    if not (-1.0 <= sigma <= 2.0):
        raise DomainError(f"sigma 必須在 [-1, 2]：{sigma}")
    lam = w.basis.lambdas[: len(w.coeffs)]
    return float(math.sqrt(np.sum(lam ** sigma * np.asarray(w.coeffs) ** 2)))


def trace_eval(w: SpectralFunction, points) -> np.ndarray:
    phi = w.basis.evaluate(points)[:, : len(w.coeffs)]
    return phi @ np.asarray(w.coeffs)


def extension_eval(basis: SpectralBasis, f: SpectralFunction, order: FractionalOrder, x, y: float) -> float:
    if y < 0:
        raise DomainError(f"y 必須 ≥ 0：{y}")
    u = solve_fractional(basis, f, order)
    lam = basis.lambdas[: len(u.coeffs)]
    phi = basis.evaluate(np.asarray(x, dtype=float).reshape(1, -1))[0, : len(u.coeffs)]
    prof = psi(order, np.sqrt(lam) * y)
    # 由小到大的 k 依序相加，結果可重現
    return float(np.sum(u.coeffs * phi * prof))


# ============================================================
# 尾端能量 ∫_Y^∞
# ============================================================
def _profile_integral_laguerre(order: FractionalOrder, Z: np.ndarray) -> np.ndarray:
    """Z ≥ 1：I(Z) = e^{−2Z}/2 Σ w_j G(Z + τ_j/2)，G(z) = c_s² z (kve_s² + kve_{1−s}²)。"""
    tau, wts = _LAGUERRE
    z = Z[:, None] + 0.5 * tau[None, :]
    cs = c_s(order)
    G = cs * cs * z * (kve(order.s, z) ** 2 + kve(1.0 - order.s, z) ** 2)
    return 0.5 * np.exp(-2.0 * Z) * (G @ wts)


def _quad_checked(fn, lo, hi, **kw):
    out = quad(fn, lo, hi, epsabs=0.0, epsrel=QUAD_EPSREL, limit=200, full_output=1, **kw)
    val, err = out[0], out[1]
    if len(out) > 3 and err > 1e-9 * max(abs(val), 1e-300):
        raise AccuracyError(f"profile 積分未收斂：{out[3]}", estimate=val)
    return val


def _profile_integral_near(order: FractionalOrder, Z: float, I_one: float) -> float:
    """Z < 1：在 [Z, 1] 上用 adaptive quadrature，再加上 I(1)。"""
    s, alpha = order.s, order.alpha
    cs = c_s(order)
    if Z == 0.0:
        # z=0 的代數奇異性交給 QAWS（weight='alg'）
        psi_part = _quad_checked(lambda z: psi(order, z) ** 2, 0.0, 1.0, weight="alg", wvar=(alpha, 0.0))
        dpsi_part = _quad_checked(
            lambda z: cs * cs * z ** (2.0 - 2.0 * s) * float(kve(1.0 - s, z)) ** 2 * math.exp(-2.0 * z),
            0.0, 1.0, weight="alg", wvar=(2.0 * s - 1.0, 0.0),
        )
        return psi_part + dpsi_part + I_one

    def integrand(z):
        return z ** alpha * (psi(order, z) ** 2 + psi_derivative(order, 1, z) ** 2)

    return _quad_checked(integrand, Z, 1.0) + I_one


def profile_tail_integral(order: FractionalOrder, Z) -> np.ndarray:
    """I(Z) = ∫_Z^∞ z^α (ψ² + ψ′²) dz，I(0) = d_s。"""
    Z = np.atleast_1d(np.asarray(Z, dtype=float))
    out = np.empty_like(Z)
    far = Z >= 1.0
    if np.any(far):
        out[far] = _profile_integral_laguerre(order, Z[far])
    if np.any(~far):
        I_one = float(_profile_integral_laguerre(order, np.array([1.0]))[0])
        cache = {}
        for i in np.nonzero(~far)[0]:
            key = float(Z[i])
            if key not in cache:
                cache[key] = _profile_integral_near(order, key, I_one)
            out[i] = cache[key]
    return out


def tail_energy(basis: SpectralBasis, f: SpectralFunction, order: FractionalOrder, Y: float) -> float:
    """‖∇𝒰‖²_{L²(y^α, Ω×(Y,∞))} = Σ u_k² λ_k^s I(√λ_k Y)。"""
    if Y < 0:
        raise DomainError(f"Y 必須 ≥ 0：{Y}")
    u = solve_fractional(basis, f, order)
    lam = basis.lambdas[: len(u.coeffs)]
    active = np.abs(u.coeffs) > 0
    if not np.any(active):
        return 0.0
    I = profile_tail_integral(order, np.sqrt(lam[active]) * Y)
    return float(np.sum(u.coeffs[active] ** 2 * lam[active] ** order.s * I))


# ============================================================
# reference pairing d_s⟨f, u⟩
# ============================================================
def _constant_interval_pairing(value: float, L: float, a: float, c: float, order: FractionalOrder):
    s = order.s
    total = 0.0
    n_odd = PAIRING_MODES_INTERVAL // 2
    for start in range(0, n_odd, PAIRING_CHUNK):
        k = 2.0 * np.arange(start, min(start + PAIRING_CHUNK, n_odd)) + 1.0
        lam = a * (k * math.pi / L) ** 2 + c
        total += float(np.sum(8.0 * L / (k * math.pi) ** 2 * lam ** (-s)))
    # 奇數 k > K 的尾端以積分近似：Σ k^{−p} ≈ K^{1−p} / (2(p−1))
    K = 2.0 * n_odd + 1.0
    p = 2.0 + 2.0 * s
    tail = 8.0 * L / math.pi ** 2 * (a * math.pi ** 2 / L ** 2) ** (-s) * K ** (1.0 - p) / (2.0 * (p - 1.0))
    return order.d_s * value ** 2 * (total + tail), order.d_s * value ** 2 * tail


def _constant_rectangle_pairing(value: float, Lx: float, Ly: float, a: float, c: float, order: FractionalOrder):
    s = order.s
    n = PAIRING_MODES_RECTANGLE
    k = 2.0 * np.arange(n // 2) + 1.0
    fx = 8.0 * Lx / (k * math.pi) ** 2
    total = 0.0
    rows = max(1, PAIRING_CHUNK // len(k))
    for start in range(0, len(k), rows):
        kk = k[start:start + rows]
        lam = a * math.pi ** 2 * (kk[:, None] ** 2 / Lx ** 2 + k[None, :] ** 2 / Ly ** 2) + c
        fy = 8.0 * Ly / (k * math.pi) ** 2
        total += float(np.sum(fx[start:start + rows, None] * fy[None, :] * lam ** (-s)))
    # 至少一個指標 > n 的項：λ ≥ aπ²n²/max(L)²，Σ_{odd>n} 1/k² ≈ 1/(2n)
    lam_n = a * math.pi ** 2 * n ** 2 / max(Lx, Ly) ** 2
    bound = 2.0 * (8.0 * max(Lx, Ly) / math.pi ** 2) ** 2 * (math.pi ** 2 / 8.0) / (2.0 * n) * lam_n ** (-s)
    return order.d_s * value ** 2 * total, order.d_s * value ** 2 * bound


def truncation_estimate(f: SpectralFunction, order: FractionalOrder, f_norm_sq: float, sigma: float = 0.0) -> float:
    """
    Σ_{k>K} λ_k^{σ−2s} f_k² 的上界：λ_K^{σ−2s}·(‖f‖² − Σ_{k≤K} f_k²)，需 σ ≤ 2s。
    """
    expo = sigma - 2.0 * order.s
    if expo > 0:
        return math.inf
    lam_K = float(f.basis.lambdas[len(f.coeffs) - 1])
    missing = max(f_norm_sq - float(np.sum(np.asarray(f.coeffs) ** 2)), 0.0)
    return lam_K ** expo * missing


def energy_pairing(domain: DomainSpec, coefficients: Coefficients, forcing: Forcing, order: FractionalOrder,
                   K: Optional[int] = None) -> PairingResult:
    """d_s⟨f, u⟩ = d_s Σ f_k² λ_k^{−s}，附上截斷誤差估計。"""
    basis = basis_for(domain, coefficients, K)
    if forcing.kind == "constant" and K is None:
        if domain.kind == "interval":
            val, est = _constant_interval_pairing(forcing.value, domain.bounds[1] - domain.bounds[0],
                                                  basis.diffusion, basis.reaction, order)
        else:
            ax, bx, ay, by = domain.bounds
            val, est = _constant_rectangle_pairing(forcing.value, bx - ax, by - ay,
                                                   basis.diffusion, basis.reaction, order)
        return PairingResult(val, est)
    f = expand_forcing(basis, forcing)
    lam = basis.lambdas[: len(f.coeffs)]
    val = order.d_s * float(np.sum(np.asarray(f.coeffs) ** 2 * lam ** (-order.s)))
    if forcing.kind == "spectral":
        est = 0.0
    else:
        est = order.d_s * truncation_estimate(f, order, forcing_l2_norm_sq(basis, forcing), sigma=order.s)
    return PairingResult(val, est)


# ============================================================
# y 方向高階導數的加權 norm（正則性檢查）
# ============================================================
def weighted_derivative_norms(basis: SpectralBasis, f: SpectralFunction, order: FractionalOrder,
                              ells: Sequence[int], gamma: float, nu_tilde: float = 0.0) -> np.ndarray:
    """
    N_ℓ = ‖∂_y^{ℓ+1}𝒰‖²_{L²(ω_{α+2ℓ−2ν̃, γ}; Ω×(0,∞))}
        = Σ_k u_k² λ_k^{ℓ+1−(β+1)/2} ∫_0^∞ z^β e^{γz/√λ_k} ψ^{(ℓ+1)}(z)² dz，β = α+2ℓ−2ν̃。
    """
    u = solve_fractional(basis, f, order)
    lam = basis.lambdas[: len(u.coeffs)]
    coeffs = np.asarray(u.coeffs)
    if np.any(gamma >= 2.0 * np.sqrt(lam[np.abs(coeffs) > 0])):
        raise DomainError("gamma 必須 < 2√λ_k")
    scale = np.max(np.abs(coeffs)) if len(coeffs) else 0.0
    active = np.nonzero(np.abs(coeffs) > 1e-12 * scale)[0] if scale > 0 else []
    out = []
    for ell in ells:
        beta = order.alpha + 2.0 * ell - 2.0 * nu_tilde
        total = 0.0
        for k in active:
            g = gamma / math.sqrt(lam[k])

            def integrand(z, g=g, ell=ell, beta=beta):
                d = psi_derivative(order, ell + 1, z)
                if d == 0.0:
                    return 0.0
                # 在 log 空間合併，避免 e^{gz} 在大 z overflow
                return math.exp(g * z + 2.0 * math.log(abs(d)) + beta * math.log(z))

            val = _quad_checked(integrand, 0.0, 1.0) + _quad_checked(integrand, 1.0, math.inf)
            total += coeffs[k] ** 2 * lam[k] ** (ell + 1 - 0.5 * (beta + 1.0)) * val
        out.append(total)
    return np.asarray(out)
