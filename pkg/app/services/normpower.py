"""
Norm power functions a·‖·‖ʳ and the calculus built on them.

Covers evaluation, the normalized form (r·Φ)^{1/r}, Legendre–Fenchel
conjugates (closed form along the dual norm), Fenchel-Young losses, the
basis-vector equivalence constants against ‖·‖₂, and the scalar problem
min_x a·xʳ − b·x that fixes the optimal SGD step.

Functions accept a single vector (shape (m,)) or a stack of vectors
(shape (..., m)) and reduce over the last axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from app.services.errors import DomainError


class NormKind(str, Enum):
    L1 = "l1"
    L2 = "l2"
    LP = "lp"
    LINF = "linf"


# Dual table: L1 <-> Linf, L2 <-> L2, Lp <-> Lq with 1/p + 1/q = 1.
_DUAL_KIND = {
    NormKind.L1: NormKind.LINF,
    NormKind.LINF: NormKind.L1,
    NormKind.L2: NormKind.L2,
    NormKind.LP: NormKind.LP,
}


def conjugate_exponent(r: float) -> float:
    """r* with 1/r + 1/r* = 1."""
    if not r > 1:
        raise DomainError(f"exponent must be > 1, got {r}")
    return r / (r - 1.0)


@dataclass(frozen=True)
class NormPower:
    norm: NormKind
    order: float
    scale: float = 1.0
    p: float | None = None  # only for NormKind.LP

    def __post_init__(self):
        object.__setattr__(self, "norm", NormKind(self.norm))
        if not (math.isfinite(self.order) and self.order > 1):
            raise DomainError(f"norm power order must be finite and > 1, got {self.order}")
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise DomainError(f"norm power scale must be finite and > 0, got {self.scale}")
        if self.norm is NormKind.LP:
            if self.p is None or not (math.isfinite(self.p) and self.p > 1):
                raise DomainError(f"Lp norm needs a finite exponent p > 1, got {self.p}")
        elif self.p is not None:
            raise DomainError(f"exponent p only applies to Lp norms, not {self.norm.value}")

    @property
    def ord(self) -> float:
        """numpy `ord` for the underlying vector norm."""
        if self.norm is NormKind.L1:
            return 1.0
        if self.norm is NormKind.L2:
            return 2.0
        if self.norm is NormKind.LINF:
            return np.inf
        return float(self.p)

    @property
    def dual_ord(self) -> float:
        if self.norm is NormKind.LP:
            return conjugate_exponent(float(self.p))
        return {NormKind.L1: np.inf, NormKind.L2: 2.0, NormKind.LINF: 1.0}[self.norm]

    @property
    def conjugate_order(self) -> float:
        return conjugate_exponent(self.order)


@dataclass(frozen=True)
class RelaxedBound:
    """A norm power plus its relaxation constant (c_φ, c_Φ or c_Ω)."""

    power: NormPower
    relaxation: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.relaxation) and self.relaxation >= 0):
            raise DomainError(f"relaxation factor must be finite and >= 0, got {self.relaxation}")


def lp_power(p: float, order: float, scale: float = 1.0) -> NormPower:
    """Build a·‖·‖ₚʳ, mapping p ∈ {1, 2, inf} onto the named norms."""
    if p == 1:
        return NormPower(NormKind.L1, order, scale)
    if p == 2:
        return NormPower(NormKind.L2, order, scale)
    if math.isinf(p):
        return NormPower(NormKind.LINF, order, scale)
    return NormPower(NormKind.LP, order, scale, p=float(p))


def _as_vectors(mu) -> np.ndarray:
    arr = np.asarray(mu, dtype=np.float64)
    if arr.ndim == 0:
        raise DomainError("expected a vector, got a scalar")
    if not np.all(np.isfinite(arr)):
        raise DomainError("vector has non-finite components")
    return arr


def _scalar_or_array(value: np.ndarray):
    return float(value) if np.ndim(value) == 0 else value


def vector_norm(mu, ord: float) -> np.ndarray:
    return np.linalg.norm(_as_vectors(mu), ord=ord, axis=-1)


def evaluate(p: NormPower, mu):
    """Φ(μ) = a·‖μ‖ʳ."""
    norm = vector_norm(mu, p.ord)
    return _scalar_or_array(p.scale * norm**p.order)


def normalized(p: NormPower, mu):
    """Φ̄(μ) = (r·Φ(μ))^{1/r}; a norm."""
    norm = vector_norm(mu, p.ord)
    return _scalar_or_array((p.order * p.scale) ** (1.0 / p.order) * norm)


def conjugate(p: NormPower) -> NormPower:
    """Φ* for Φ = a‖·‖ʳ: (1/r*)·(r·a)^{1−r*}·‖·‖_*^{r*}."""
    if p.norm is NormKind.LINF:
        raise DomainError("conjugation of an Linf norm power is not supported")
    r_star = p.conjugate_order
    scale = (1.0 / r_star) * (p.order * p.scale) ** (1.0 - r_star)
    kind = _DUAL_KIND[p.norm]
    dual_p = conjugate_exponent(float(p.p)) if kind is NormKind.LP else None
    return NormPower(kind, r_star, scale, p=dual_p)


def fy_loss(omega: NormPower, mu, nu):
    """Fenchel-Young loss d_Ω(μ; ν) = Ω(μ) + Ω*(ν) − ⟨μ, ν⟩."""
    mu_arr = _as_vectors(mu)
    nu_arr = _as_vectors(nu)
    if mu_arr.shape != nu_arr.shape:
        raise DomainError(f"fy_loss dimension mismatch: {mu_arr.shape} vs {nu_arr.shape}")
    value = (
        np.asarray(evaluate(omega, mu_arr))
        + np.asarray(evaluate(conjugate(omega), nu_arr))
        - np.sum(mu_arr * nu_arr, axis=-1)
    )
    return _scalar_or_array(value)


def equivalence_constants(p: NormPower, m: int) -> tuple[float, float]:
    """(lo, hi) with lo·‖μ‖₂ ≤ Φ̄(μ) ≤ hi·‖μ‖₂ on ℝ^m."""
    if m < 1:
        raise DomainError(f"dimension must be >= 1, got {m}")
    # Every supported norm is permutation-invariant, so all m basis vectors
    # share e_1's value.
    e1 = np.zeros(m)
    e1[0] = 1.0
    dual_sq = m * normalized(conjugate(p), e1) ** 2
    primal_sq = m * normalized(p, e1) ** 2
    lo = m**-0.5 * dual_sq**-0.5
    hi = primal_sq**0.5
    return lo, hi


def minimize_power_linear(a: float, b: float, r: float) -> tuple[float, float]:
    """Minimizer and minimum of K(x) = a·xʳ − b·x over x ≥ 0."""
    if not a > 0 or not b > 0:
        raise DomainError(f"minimize_power_linear needs a, b > 0, got a={a}, b={b}")
    s = conjugate_exponent(r)
    x_star = (b / (r * a)) ** (s - 1.0)
    k_star = -(1.0 / s) * b**s * (r * a) ** (1.0 - s)
    return x_star, k_star


def omega_norm(omega: NormPower, x) -> float:
    """‖x‖_Ω = r*^{−1/r*}·‖x‖₂² / Ω̄(x); 0 at the origin."""
    x_arr = _as_vectors(x)
    sq = float(np.dot(x_arr, x_arr))
    if sq == 0.0:
        return 0.0
    r_star = omega.conjugate_order
    return r_star ** (-1.0 / r_star) * sq / float(normalized(omega, x_arr))
