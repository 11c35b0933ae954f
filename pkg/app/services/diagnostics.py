"""
Structural-matrix diagnostics and empirical-risk sandwich bounds.

For a sample x the structural matrix is A_x = JᵀJ with J = ∇_θ f_θ(x)
(|θ| × m_f). Its spectrum gives U = −log λ_min, L = −log λ_max, D = U − L
and the weighted structural error S = αD + βU + γL. Together with the local
gradient norm ‖∇_θ ℓ‖₂ they bracket ℓ − ℓ* from both sides.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from app.config import get_settings
from app.services.autodiff import Tape, forward, jacobian_from_tape
from app.services.errors import DomainError, NumericError
from app.services.losses import LossSpec, SmoothnessProfile, batch_q_min, loss_eval, loss_grad_output, profile
from app.services.network import ParamModel
from app.services.normpower import conjugate, evaluate, normalized

logger = logging.getLogger("gensmooth.diagnostics")

DEFAULT_WEIGHTS = (1.0, 1.0, 1.0)
EIGEN_MAX_SWEEPS = 100


@dataclass(frozen=True)
class StructuralError:
    U: float
    L: float
    D: float
    S: float
    lambda_min: float
    lambda_max: float
    degenerate: bool


@dataclass(frozen=True)
class BoundConstants:
    C_Phi: float
    C_phi: float
    r_conj: float


@dataclass(frozen=True)
class StructuralReport:
    eigenvalues: np.ndarray
    lambda_min: float
    lambda_max: float
    U: float
    L: float
    D: float
    S: float
    local_grad_norm_r: float
    lower_bound: float
    upper_bound: float
    degenerate: bool
    loss: float = 0.0
    loss_gap: float = 0.0
    output_grad_sq: float = 0.0
    param_grad_sq: float = 0.0

    @property
    def sandwich_ok(self) -> bool:
        return self.lower_bound <= self.loss_gap <= self.upper_bound


@dataclass(frozen=True)
class DiagnosticPass:
    """One diagnostic evaluation over a sample set (dataset-wide bound)."""

    reports: list[StructuralReport]
    structure: StructuralError
    profile: SmoothnessProfile
    constants: BoundConstants
    mean_loss: float
    mean_loss_gap: float
    local_grad_norm: float
    global_grad_norm: float
    lower: float
    upper: float
    q_min: float | None = None
    extras: dict = field(default_factory=dict)

    @property
    def degenerate(self) -> bool:
        return self.structure.degenerate


# Linear algebra


def sym_eigenvalues(A, tol: float | None = None, max_sweeps: int = EIGEN_MAX_SWEEPS) -> np.ndarray:
    """Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations, ascending."""
    a = np.array(A, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if n == 0:
        raise DomainError("empty matrix")
    if not np.all(np.isfinite(a)):
        raise DomainError("matrix has non-finite entries")
    scale = float(np.linalg.norm(a))
    if float(np.max(np.abs(a - a.T))) > 1e-9 * max(1.0, scale):
        raise DomainError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    if tol is None:
        tol = 1e-10 * scale
    if n == 1 or scale == 0.0:
        return np.sort(np.diag(a))

    for _ in range(max_sweeps):
        off = math.sqrt(2.0 * float(np.sum(np.triu(a, 1) ** 2)))
        if off <= tol:
            return np.sort(np.diag(a))
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 if theta == 0.0 else math.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))
                c = 1.0 / math.hypot(t, 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
    raise NumericError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")


def gershgorin_bounds(A) -> list[tuple[float, float]]:
    """(center, radius) disc per row."""
    a = np.asarray(A, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {a.shape}")
    centers = np.diag(a)
    radii = np.sum(np.abs(a), axis=1) - np.abs(centers)
    return [(float(c), float(r)) for c, r in zip(centers, radii)]


def default_floor(lambda_max: float) -> float:
    return 1e-12 * max(lambda_max, 1.0)


def structural_error(
    eigs: Sequence[float],
    weights: tuple[float, float, float] = DEFAULT_WEIGHTS,
    floor: float | None = None,
    log_base: float = math.e,
) -> StructuralError:
    eigs = np.asarray(eigs, dtype=np.float64)
    if eigs.size == 0:
        raise DomainError("structural_error needs at least one eigenvalue")
    lam_min = float(eigs.min())
    lam_max = float(eigs.max())
    if floor is None:
        floor = default_floor(lam_max)
    log_scale = math.log(log_base)
    U = -math.log(max(lam_min, floor)) / log_scale
    L = -math.log(max(lam_max, floor)) / log_scale
    D = U - L
    alpha, beta, gamma = weights
    return StructuralError(
        U=U,
        L=L,
        D=D,
        S=alpha * D + beta * U + gamma * L,
        lambda_min=lam_min,
        lambda_max=lam_max,
        degenerate=lam_min < floor,
    )


# Structural matrices


def structural_matrix_from_jacobian(jac: np.ndarray) -> np.ndarray:
    a = jac.T @ jac
    return 0.5 * (a + a.T)


def structural_matrix(model: ParamModel, theta, x) -> np.ndarray:
    _, tape = forward(model, theta, x)
    return structural_matrix_from_jacobian(jacobian_from_tape(tape))


@dataclass(frozen=True)
class _SampleCore:
    output: np.ndarray
    tape: Tape
    eigenvalues: np.ndarray


def _sample_core(model: ParamModel, theta, x) -> _SampleCore:
    output, tape = forward(model, theta, x)
    eigs = sym_eigenvalues(structural_matrix_from_jacobian(jacobian_from_tape(tape)))
    return _SampleCore(output, tape, eigs)


def _map_samples(fn, items: Sequence) -> list:
    threads = max(1, get_settings().threads)
    if threads == 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def dataset_structural(
    model: ParamModel,
    theta,
    samples,
    weights: tuple[float, float, float] = DEFAULT_WEIGHTS,
    floor: float | None = None,
    log_base: float = math.e,
) -> StructuralError:
    """Aggregate spectrum over samples: min of λ_min, max of λ_max."""
    inputs = list(np.atleast_2d(np.asarray(samples, dtype=np.float64)))
    if not inputs:
        raise DomainError("dataset_structural needs at least one sample")
    cores = _map_samples(lambda x: _sample_core(model, theta, x), inputs)
    return _aggregate_structure([c.eigenvalues for c in cores], weights, floor, log_base)


def _aggregate_structure(eig_lists, weights, floor, log_base) -> StructuralError:
    lam_min = min(float(e.min()) for e in eig_lists)
    lam_max = max(float(e.max()) for e in eig_lists)
    return structural_error(np.array([lam_min, lam_max]), weights, floor, log_base)


# Bounds


def bound_constants(prof: SmoothnessProfile, m_f: int) -> BoundConstants:
    """C_Φ and C_φ from basis-vector sums of Φ̄ and φ̄*."""
    if m_f < 1:
        raise DomainError(f"output dimension must be >= 1, got {m_f}")
    r_conj = prof.smooth_conjugate_order
    basis = np.eye(m_f)
    smooth_sq = float(np.sum(np.asarray(normalized(prof.big_phi, basis)) ** 2))
    convex_sq = float(np.sum(np.asarray(normalized(conjugate(prof.phi), basis)) ** 2))
    c_big = (1.0 / r_conj) * m_f ** (-r_conj / 2.0) * smooth_sq ** (-r_conj / 2.0)
    c_small = (1.0 / r_conj) * convex_sq ** (r_conj / 2.0)
    return BoundConstants(C_Phi=c_big, C_phi=c_small, r_conj=r_conj)


def _bracket(constants: BoundConstants, prof: SmoothnessProfile, grad_power: float, structure: StructuralError, floor):
    r = constants.r_conj
    lam_floor = floor if floor is not None else default_floor(structure.lambda_max)
    lam_max = max(structure.lambda_max, lam_floor)
    lower = constants.C_Phi * grad_power / lam_max ** (r / 2.0) - prof.smooth_part.relaxation
    if structure.degenerate:
        upper = math.inf
    else:
        upper = constants.C_phi * grad_power / structure.lambda_min ** (r / 2.0) + prof.convex_part.relaxation
    return lower, upper


def output_space_bounds(prof: SmoothnessProfile, grad_f) -> tuple[float, float]:
    """(Φ*(∇_f ℓ) − c_Φ, φ*(∇_f ℓ) + c_φ)."""
    g = np.asarray(grad_f, dtype=np.float64)
    lower = float(evaluate(conjugate(prof.big_phi), g)) - prof.smooth_part.relaxation
    upper = float(evaluate(conjugate(prof.phi), g)) + prof.convex_part.relaxation
    return lower, upper


def _report(
    spec: LossSpec,
    core: _SampleCore,
    y: np.ndarray,
    prof: SmoothnessProfile,
    constants: BoundConstants,
    weights,
    floor,
    log_base,
) -> StructuralReport:
    loss = loss_eval(spec, core.output, y)
    grad_f = loss_grad_output(spec, core.output, y)
    grad_theta = core.tape.vjp(grad_f)
    param_sq = float(np.dot(grad_theta, grad_theta))
    grad_power = param_sq ** (constants.r_conj / 2.0)
    structure = structural_error(core.eigenvalues, weights, floor, log_base)
    lower, upper = _bracket(constants, prof, grad_power, structure, floor)
    return StructuralReport(
        eigenvalues=core.eigenvalues,
        lambda_min=structure.lambda_min,
        lambda_max=structure.lambda_max,
        U=structure.U,
        L=structure.L,
        D=structure.D,
        S=structure.S,
        local_grad_norm_r=grad_power,
        lower_bound=lower,
        upper_bound=upper,
        degenerate=structure.degenerate,
        loss=loss,
        loss_gap=loss - prof.per_sample_optimum,
        output_grad_sq=float(np.dot(grad_f, grad_f)),
        param_grad_sq=param_sq,
    )


def _profile_for(spec: LossSpec, outputs: list[np.ndarray], prof: SmoothnessProfile | None) -> SmoothnessProfile:
    if prof is not None:
        return prof
    q_min = batch_q_min(np.array(outputs)) if spec.kind.value == "softmax_ce" else None
    return profile(spec, q_min)


def loss_bounds(
    spec: LossSpec,
    model: ParamModel,
    theta,
    z: tuple,
    prof: SmoothnessProfile | None = None,
    weights: tuple[float, float, float] = DEFAULT_WEIGHTS,
    floor: float | None = None,
    log_base: float = math.e,
) -> tuple[float, float, StructuralReport]:
    """Individual-sample bound: lower ≤ ℓ − ℓ* ≤ upper."""
    x, y = z
    y = np.asarray(y, dtype=np.float64)
    core = _sample_core(model, theta, x)
    prof = _profile_for(spec, [core.output], prof)
    constants = bound_constants(prof, model.output_dim)
    report = _report(spec, core, y, prof, constants, weights, floor, log_base)
    return report.lower_bound, report.upper_bound, report


def diagnose(
    spec: LossSpec,
    model: ParamModel,
    theta,
    inputs,
    targets,
    prof: SmoothnessProfile | None = None,
    weights: tuple[float, float, float] = DEFAULT_WEIGHTS,
    floor: float | None = None,
    log_base: float = math.e,
) -> DiagnosticPass:
    """Per-sample reports plus the dataset-wide bound over (inputs, targets)."""
    xs = list(np.atleast_2d(np.asarray(inputs, dtype=np.float64)))
    ys = list(np.atleast_2d(np.asarray(targets, dtype=np.float64)))
    if not xs:
        raise DomainError("diagnostics need at least one sample")
    if len(xs) != len(ys):
        raise DomainError(f"{len(xs)} inputs but {len(ys)} targets")

    cores = _map_samples(lambda x: _sample_core(model, theta, x), xs)
    prof = _profile_for(spec, [c.output for c in cores], prof)
    constants = bound_constants(prof, model.output_dim)
    reports = [_report(spec, c, y, prof, constants, weights, floor, log_base) for c, y in zip(cores, ys)]

    structure = _aggregate_structure([c.eigenvalues for c in cores], weights, floor, log_base)
    local = float(np.mean([r.local_grad_norm_r for r in reports]))
    lower, upper = _bracket(constants, prof, local, structure, floor)

    global_grad = np.zeros(model.parameter_count)
    for c, y in zip(cores, ys):
        global_grad += c.tape.vjp(loss_grad_output(spec, c.output, y))
    global_grad /= len(cores)
    global_norm = float(np.dot(global_grad, global_grad)) ** (constants.r_conj / 2.0)

    mean_loss = float(np.mean([r.loss for r in reports]))
    if structure.degenerate:
        logger.info("diagnostics: degenerate spectrum, λ_min=%.3e", structure.lambda_min)
    if prof.q_min is not None:
        logger.debug("diagnostics: batch q_min=%.6g", prof.q_min)
    return DiagnosticPass(
        reports=reports,
        structure=structure,
        profile=prof,
        constants=constants,
        mean_loss=mean_loss,
        mean_loss_gap=mean_loss - prof.per_sample_optimum,
        local_grad_norm=local,
        global_grad_norm=global_norm,
        lower=lower,
        upper=upper,
        q_min=prof.q_min,
    )


def dataset_bounds(spec: LossSpec, model: ParamModel, theta, inputs, targets, **kwargs) -> tuple[float, float]:
    """Dataset-wide bound: lower ≤ 𝓛(θ, s) − 𝓛*(s) ≤ upper."""
    result = diagnose(spec, model, theta, inputs, targets, **kwargs)
    return result.lower, result.upper


def local_grad_norm(spec: LossSpec, model: ParamModel, theta, inputs, targets, r: float) -> float:
    """(1/n) Σ ‖∇_θ ℓ(f_θ(xᵢ), yᵢ)‖₂^r."""
    if not r > 1:
        raise DomainError(f"local gradient norm exponent must be > 1, got {r}")
    xs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    ys = np.atleast_2d(np.asarray(targets, dtype=np.float64))

    def one(pair) -> float:
        x, y = pair
        output, tape = forward(model, theta, x)
        g = tape.vjp(loss_grad_output(spec, output, y))
        return float(np.linalg.norm(g)) ** r

    return float(np.mean(_map_samples(one, list(zip(xs, ys)))))
