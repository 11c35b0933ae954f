"""
Mini-batch SGD with momentum, the generalized-smoothness optimal step,
the gradient correlation factor estimator and the step budget.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from app.services.autodiff import forward
from app.services.errors import DomainError, NumericError
from app.services.losses import LossSpec, loss_eval, loss_grad_output
from app.services.network import DropoutEvaluator, ParamModel, predict
from app.services.normpower import NormPower, evaluate, omega_norm

logger = logging.getLogger("gensmooth.optim")


@dataclass(frozen=True)
class SgdState:
    theta: np.ndarray
    velocity: np.ndarray
    lr: float
    momentum: float = 0.0
    step: int = 0

    def __post_init__(self):
        if self.velocity.shape != self.theta.shape:
            raise DomainError("velocity and θ differ in shape")
        if not self.lr > 0:
            raise DomainError(f"learning rate must be > 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise DomainError(f"momentum must be in [0, 1), got {self.momentum}")

    @classmethod
    def start(cls, theta, lr: float, momentum: float = 0.0) -> "SgdState":
        theta = np.array(theta, dtype=np.float64)
        return cls(theta, np.zeros_like(theta), lr, momentum)


@dataclass(frozen=True)
class OmegaSpec:
    power: NormPower
    relaxation: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.relaxation) and self.relaxation >= 0):
            raise DomainError(f"c_Ω must be finite and >= 0, got {self.relaxation}")


def sgd_step(state: SgdState, grad, lr: float | None = None) -> SgdState:
    """v ← μv + g; θ ← θ − lr·v. `lr` overrides the state's rate for this step."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.theta.shape:
        raise DomainError(f"gradient has shape {grad.shape}, θ has {state.theta.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError(f"non-finite gradient at step {state.step}")
    velocity = state.momentum * state.velocity + grad
    rate = state.lr if lr is None else lr
    return replace(state, theta=state.theta - rate * velocity, velocity=velocity, step=state.step + 1)


def optimal_step(omega: OmegaSpec, grad) -> tuple[float, float]:
    """(α, predicted decrease) minimizing the H(Ω, c_Ω)-smoothness upper model."""
    g = np.asarray(grad, dtype=np.float64)
    sq = float(np.dot(g, g))
    if sq == 0.0:
        return 0.0, -omega.relaxation
    power = omega.power
    r_star = power.conjugate_order
    alpha = (sq / (power.order * float(evaluate(power, g)))) ** (r_star - 1.0)
    decrease = omega_norm(power, g) ** r_star - omega.relaxation
    return alpha, decrease


def mean_loss(spec: LossSpec, model: ParamModel, theta, inputs, targets) -> float:
    outputs = predict(model, theta, inputs)
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    return float(np.mean([loss_eval(spec, f, y) for f, y in zip(outputs, targets)]))


def batch_gradient(
    spec: LossSpec, model: ParamModel, theta, inputs, targets, dropout: DropoutEvaluator | None = None
) -> tuple[float, np.ndarray]:
    """Mean loss and ∇_θ of the mean loss over the rows, one tape per sample.

    With a dropout evaluator each sample draws a fresh mask; θ must be the
    evaluator's own.
    """
    xs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    ys = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if len(xs) == 0:
        raise DomainError("batch is empty")
    total = 0.0
    grad = np.zeros(model.parameter_count)
    for x, y in zip(xs, ys):
        output, tape = dropout.forward(x) if dropout is not None else forward(model, theta, x)
        total += loss_eval(spec, output, y)
        grad += tape.vjp(loss_grad_output(spec, output, y))
    return total / len(xs), grad / len(xs)


def estimate_M(
    spec: LossSpec,
    model: ParamModel,
    theta_before,
    theta_after,
    full_set: tuple,
    batch,
) -> float:
    """𝓛(θ_after, s∖s_k) − 𝓛(θ_before, s∖s_k); 0 when the complement is empty."""
    inputs, targets = full_set
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    batch = np.asarray(batch, dtype=np.int64)
    if batch.size and (batch.min() < 0 or batch.max() >= len(inputs)):
        raise DomainError("batch indices fall outside the full set")
    keep = np.ones(len(inputs), dtype=bool)
    keep[batch] = False
    if not keep.any():
        return 0.0
    if np.array_equal(np.asarray(theta_before), np.asarray(theta_after)):
        return 0.0
    after = mean_loss(spec, model, theta_after, inputs[keep], targets[keep])
    before = mean_loss(spec, model, theta_before, inputs[keep], targets[keep])
    return after - before


def steps_to_epsilon(epsilon: float, omega: OmegaSpec, n: int, m: int, initial_gap: float, M: float = 0.0) -> int:
    """⌈n·gap / (m·ε^{r_{Ω*}})⌉.

    M only enters the bound the budget guarantees, not the budget itself.
    """
    if not epsilon > 0:
        raise DomainError(f"epsilon must be > 0, got {epsilon}")
    if not 1 <= m <= n:
        raise DomainError(f"batch size must satisfy 1 <= m <= n, got m={m}, n={n}")
    if initial_gap < 0:
        raise DomainError(f"initial gap must be >= 0, got {initial_gap}")
    if initial_gap == 0:
        return 0
    r_star = omega.power.conjugate_order
    budget = n * initial_gap / (m * epsilon**r_star)
    # absorb one-ulp overshoot such as 1/0.1**2 = 100.00000000000001
    return math.ceil(budget * (1.0 - 1e-12))


def guaranteed_level(epsilon: float, omega: OmegaSpec, n: int, m: int, M: float) -> float:
    """ε^{r_{Ω*}} + ((n−m)/m)·M + c_Ω, the level the budget guarantees."""
    r_star = omega.power.conjugate_order
    return epsilon**r_star + (n - m) / m * M + omega.relaxation
