"""
Loss registry: values, output gradients and smoothness profiles.

Every loss carries a SmoothnessProfile (φ, c_φ, Φ, c_Φ, ℓ*). mse and
softmax_ce have closed-form profiles; l1, smooth_l1 and ‖f − y‖ₖᵏ for k ≠ 2
get "empirical" profiles built from configured (a, r, c) triples.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from app.services.errors import DomainError, NumericError
from app.services.normpower import NormPower, NormKind, RelaxedBound, lp_power

logger = logging.getLogger("gensmooth.losses")

PINSKER_SCALE = 1.0 / (2.0 * math.log(2.0))


class LossKind(str, Enum):
    MSE = "mse"
    SOFTMAX_CE = "softmax_ce"
    L1 = "l1"
    SMOOTH_L1 = "smooth_l1"
    PNORM_POW = "pnorm_pow"


@dataclass(frozen=True)
class EmpiricalTriple:
    """(a, r, c) for a norm power bound; order None means "match the loss"."""

    scale: float = 1.0
    order: float | None = None
    relaxation: float = 0.0


@dataclass(frozen=True)
class LossSpec:
    kind: LossKind
    beta: float = 1.0  # smooth_l1 transition point
    k: int = 2  # pnorm_pow exponent
    convex: EmpiricalTriple = EmpiricalTriple()
    smooth: EmpiricalTriple = EmpiricalTriple()

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind(self.kind))
        if self.kind is LossKind.PNORM_POW and not (isinstance(self.k, int) and 1 <= self.k <= 6):
            raise DomainError(f"pnorm_pow exponent must be an integer in [1, 6], got {self.k}")
        if self.kind is LossKind.SMOOTH_L1 and not self.beta > 0:
            raise DomainError(f"smooth_l1 beta must be > 0, got {self.beta}")

    @property
    def label(self) -> str:
        if self.kind is LossKind.PNORM_POW:
            return f"pnorm_pow{self.k}"
        return self.kind.value

    @property
    def has_exact_profile(self) -> bool:
        return self.kind in {LossKind.MSE, LossKind.SOFTMAX_CE} or (
            self.kind is LossKind.PNORM_POW and self.k == 2
        )


@dataclass(frozen=True)
class SmoothnessProfile:
    convex_part: RelaxedBound
    smooth_part: RelaxedBound
    per_sample_optimum: float = 0.0
    data_dependent: bool = False
    empirical: bool = False
    q_min: float | None = None

    @property
    def phi(self) -> NormPower:
        return self.convex_part.power

    @property
    def big_phi(self) -> NormPower:
        return self.smooth_part.power

    @property
    def smooth_conjugate_order(self) -> float:
        """r_{Φ*}, the exponent both sides of the loss bounds use."""
        return self.big_phi.conjugate_order

    @property
    def convex_conjugate_order(self) -> float:
        return self.phi.conjugate_order


def _pair(f, y) -> tuple[np.ndarray, np.ndarray]:
    f = np.asarray(f, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if f.shape != y.shape or f.ndim != 1:
        raise DomainError(f"loss expects matching vectors, got {f.shape} and {y.shape}")
    return f, y


def _check_distribution(y: np.ndarray) -> None:
    if np.any(y < 0) or abs(float(np.sum(y)) - 1.0) > 1e-9:
        raise DomainError("softmax_ce target must be a one-hot or probability vector")


def log_softmax(f: np.ndarray) -> np.ndarray:
    shifted = f - np.max(f)
    return shifted - np.log(np.sum(np.exp(shifted)))


def loss_eval(spec: LossSpec, f, y) -> float:
    f, y = _pair(f, y)
    d = f - y
    kind = spec.kind
    if kind is LossKind.MSE:
        return 0.5 * float(np.dot(d, d))
    if kind is LossKind.SOFTMAX_CE:
        _check_distribution(y)
        return float(-np.dot(y, log_softmax(f)))
    if kind is LossKind.L1:
        return float(np.sum(np.abs(d)))
    if kind is LossKind.SMOOTH_L1:
        a = np.abs(d)
        return float(np.sum(np.where(a < spec.beta, 0.5 * d * d / spec.beta, a - 0.5 * spec.beta)))
    return float(np.sum(np.abs(d) ** spec.k))


def loss_grad_output(spec: LossSpec, f, y) -> np.ndarray:
    """∇_f ℓ; sign(0) = 0 at the kinks."""
    f, y = _pair(f, y)
    d = f - y
    kind = spec.kind
    if kind is LossKind.MSE:
        return d
    if kind is LossKind.SOFTMAX_CE:
        _check_distribution(y)
        return np.exp(log_softmax(f)) - y
    if kind is LossKind.L1:
        return np.sign(d)
    if kind is LossKind.SMOOTH_L1:
        return np.where(np.abs(d) < spec.beta, d / spec.beta, np.sign(d))
    k = spec.k
    if k == 1:
        return np.sign(d)
    return k * np.abs(d) ** (k - 1) * np.sign(d)


def batch_q_min(outputs) -> float:
    """inf over a batch of every softmax component."""
    logits = np.atleast_2d(np.asarray(outputs, dtype=np.float64))
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_q = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return float(np.exp(log_q.min()))


def _matched_power(spec: LossSpec) -> tuple[float, float]:
    """(norm exponent p, power r) matched to the loss."""
    if spec.kind is LossKind.L1:
        return 1.0, 2.0
    if spec.kind is LossKind.SMOOTH_L1:
        return 2.0, 2.0
    k = float(spec.k)
    return k, max(k, 2.0)


def _empirical_bound(spec: LossSpec, triple: EmpiricalTriple) -> RelaxedBound:
    p, r = _matched_power(spec)
    order = triple.order if triple.order is not None else r
    return RelaxedBound(lp_power(p, order, triple.scale), triple.relaxation)


def profile(spec: LossSpec, q_min: float | None = None) -> SmoothnessProfile:
    """Smoothness profile; softmax_ce needs the batch q_min."""
    kind = spec.kind
    if kind is LossKind.MSE:
        half_sq = RelaxedBound(NormPower(NormKind.L2, 2.0, 0.5))
        return SmoothnessProfile(half_sq, half_sq)
    if kind is LossKind.SOFTMAX_CE:
        if q_min is None:
            raise DomainError("softmax_ce profile needs the batch q_min")
        if not (math.isfinite(q_min) and q_min > 0):
            raise NumericError(f"softmax_ce q_min must be positive, got {q_min}")
        return SmoothnessProfile(
            convex_part=RelaxedBound(NormPower(NormKind.L1, 2.0, PINSKER_SCALE)),
            smooth_part=RelaxedBound(NormPower(NormKind.L2, 2.0, 1.0 / q_min)),
            data_dependent=True,
            q_min=q_min,
        )
    if kind is LossKind.PNORM_POW and spec.k == 2:
        sq = RelaxedBound(NormPower(NormKind.L2, 2.0, 1.0))
        return SmoothnessProfile(sq, sq)
    return SmoothnessProfile(
        convex_part=_empirical_bound(spec, spec.convex),
        smooth_part=_empirical_bound(spec, spec.smooth),
        empirical=True,
    )


def parse_loss_label(label: str) -> LossSpec:
    """'mse', 'softmax_ce', 'l1', 'smooth_l1', 'pnorm_pow3' -> LossSpec."""
    label = label.strip().lower()
    if label.startswith("pnorm_pow") and label != "pnorm_pow":
        return LossSpec(LossKind.PNORM_POW, k=int(label[len("pnorm_pow") :].lstrip(":")))
    return LossSpec(LossKind(label))
