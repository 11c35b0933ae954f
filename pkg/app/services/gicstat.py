"""
Gradient-independence checks and the sliding-window Pearson statistic.

Jacobian columns are compared against uniform draws from an ε-ball: their
norms should concentrate near ε and their pairwise inner products near 0.
When they do, the spectrum of the structural matrix is pinned, which the
Z factor and the predicted (U, D) bounds express. All logs are natural.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from app.services.diagnostics import structural_error, sym_eigenvalues
from app.services.errors import DomainError
from app.services.seeding import derive_seeds

logger = logging.getLogger("gensmooth.gicstat")

DEFAULT_PASS_CONSTANT = 5.0
DEFAULT_MIN_PASS_FRACTION = 0.5


@dataclass(frozen=True)
class GicReport:
    n_columns: int
    dim: int
    epsilon: float
    fraction_norm_ok: float
    fraction_inner_ok: float
    max_abs_inner: float
    min_norm: float
    passes: bool

    def as_dict(self) -> dict:
        return {
            "n_columns": self.n_columns,
            "dim": self.dim,
            "epsilon": self.epsilon,
            "fraction_norm_ok": self.fraction_norm_ok,
            "fraction_inner_ok": self.fraction_inner_ok,
            "max_abs_inner": self.max_abs_inner,
            "min_norm": self.min_norm,
            "passes": self.passes,
        }


def sample_ball(dim: int, count: int, radius: float, seed: int) -> np.ndarray:
    """`count` points uniform in the `dim`-ball of the given radius, one per row."""
    if dim < 1 or count < 1:
        raise DomainError(f"sample_ball needs dim, count >= 1, got {dim}, {count}")
    if not radius > 0:
        raise DomainError(f"radius must be > 0, got {radius}")
    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((count, dim))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    # a zero Gaussian draw has probability 0; redraw direction e1 rather than divide by 0
    directions = np.where(norms > 0, directions / np.where(norms > 0, norms, 1.0), np.eye(1, dim))
    radii = radius * rng.random((count, 1)) ** (1.0 / dim)
    return directions * radii


def pass_threshold(n: int, pass_constant: float = DEFAULT_PASS_CONSTANT, min_fraction: float = DEFAULT_MIN_PASS_FRACTION) -> float:
    return max(1.0 - pass_constant / n, min_fraction)


def concentration_check(
    points,
    epsilon: float = 1.0,
    pass_constant: float = DEFAULT_PASS_CONSTANT,
    min_pass_fraction: float = DEFAULT_MIN_PASS_FRACTION,
) -> GicReport:
    """Norm and pairwise inner-product concentration of unit-ball points (rows)."""
    x = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n, m = x.shape
    if m < 2:
        raise DomainError("inner-product concentration is undefined for dimension 1")
    if n < 1:
        raise DomainError("concentration_check needs at least one point")
    log_n = math.log(n)

    norms = np.linalg.norm(x, axis=1)
    norm_ok = norms >= 1.0 - 2.0 * log_n / m

    gram = x @ x.T
    upper = np.abs(gram[np.triu_indices(n, k=1)])
    inner_bound = math.sqrt(6.0 * log_n) / math.sqrt(m - 1)
    fraction_inner = float(np.mean(upper <= inner_bound)) if upper.size else 1.0

    threshold = pass_threshold(n, pass_constant, min_pass_fraction)
    fraction_norm = float(np.mean(norm_ok))
    return GicReport(
        n_columns=n,
        dim=m,
        epsilon=epsilon,
        fraction_norm_ok=fraction_norm,
        fraction_inner_ok=fraction_inner,
        max_abs_inner=float(upper.max()) if upper.size else 0.0,
        min_norm=float(norms.min()),
        passes=fraction_norm >= threshold and fraction_inner >= threshold,
    )


def gic_check(jacobian, epsilon: float | None = None, **kwargs) -> GicReport:
    """concentration_check over the columns of a |θ| × m_f Jacobian."""
    jac = np.asarray(jacobian, dtype=np.float64)
    if jac.ndim != 2:
        raise DomainError(f"expected a |θ| x m_f matrix, got shape {jac.shape}")
    if epsilon is None:
        epsilon = float(np.linalg.norm(jac, axis=0).max()) or 1.0
    elif not epsilon > 0:
        raise DomainError(f"epsilon must be > 0, got {epsilon}")
    report = concentration_check(jac.T / epsilon, epsilon=epsilon, **kwargs)
    logger.info(
        "gicstat: n=%d m=%d norm_ok=%.3f inner_ok=%.3f passes=%s",
        report.n_columns,
        report.dim,
        report.fraction_norm_ok,
        report.fraction_inner_ok,
        report.passes,
    )
    return report


def _check_sizes(theta_count: int, mf: int) -> None:
    if mf < 2:
        raise DomainError(f"output dimension must be >= 2, got {mf}")
    if theta_count < mf + 1:
        raise DomainError(f"need |θ| >= m_f + 1, got |θ|={theta_count}, m_f={mf}")


def z_factor(theta_count: int, mf: int) -> float:
    _check_sizes(theta_count, mf)
    log_m = math.log(mf)
    return 2.0 * mf * math.sqrt(6.0 * log_m) / math.sqrt(theta_count - 1) * (1.0 - 2.0 * log_m / theta_count) ** 2


def predicted_structural_bounds(theta_count: int, mf: int, epsilon: float = 1.0) -> tuple[float, float]:
    """(U_max, D_max) as stated from the concentration events."""
    if not epsilon > 0:
        raise DomainError(f"epsilon must be > 0, got {epsilon}")
    z = z_factor(theta_count, mf)
    u_max = -math.log((1.0 - 2.0 * math.log(mf) / theta_count) ** 2) - math.log(epsilon**2)
    return u_max, math.log(z + 1.0)


def edge_structural_bounds(theta_count: int, mf: int, epsilon: float = 1.0) -> tuple[float, float]:
    """(U, D) bounds from the extreme singular values of a tall random matrix.

    With s_min ≥ 1 − √(m_f/|θ|) − t/√|θ| and s_max ≤ 1 + √(m_f/|θ|) + t/√|θ|
    at t = √(2 ln m_f) (failure probability ≤ 1/m_f), scaled by the column
    norm concentration 1 − 2 ln m_f/|θ|. Returns inf when the edge is ≤ 0.
    """
    _check_sizes(theta_count, mf)
    if not epsilon > 0:
        raise DomainError(f"epsilon must be > 0, got {epsilon}")
    spread = math.sqrt(mf / theta_count) + math.sqrt(2.0 * math.log(mf) / theta_count)
    low = 1.0 - spread
    if low <= 0:
        return math.inf, math.inf
    shrink = 1.0 - 2.0 * math.log(mf) / theta_count
    u_bound = -math.log((epsilon * shrink * low) ** 2)
    d_bound = 2.0 * math.log((1.0 + spread) / (shrink * low))
    return u_bound, d_bound


@dataclass(frozen=True)
class ContainmentReport:
    trials: int
    theta_count: int
    mf: int
    epsilon: float
    u_max: float
    d_max: float
    u_edge: float
    fraction_d_ok: float
    fraction_u_edge_ok: float
    fraction_u_printed_ok: float
    fraction_both_ok: float
    median_U: float
    median_D: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def monte_carlo_containment(
    theta_count: int,
    mf: int,
    epsilon: float = 1.0,
    trials: int = 200,
    seed: int = 0,
) -> ContainmentReport:
    """Draw Jacobians with ball-uniform columns and count how often (U, D) fall inside the bounds.

    `fraction_both_ok` pairs D ≤ D_max with the singular-value U bound; the
    as-stated U_max containment is reported separately.
    """
    if trials < 1:
        raise DomainError(f"trials must be >= 1, got {trials}")
    u_max, d_max = predicted_structural_bounds(theta_count, mf, epsilon)
    u_edge, _ = edge_structural_bounds(theta_count, mf, epsilon)
    us, ds = [], []
    d_ok = u_edge_ok = u_printed_ok = both_ok = 0
    for trial_seed in derive_seeds(seed, trials):
        columns = sample_ball(theta_count, mf, epsilon, trial_seed)
        structure = structural_error(sym_eigenvalues(columns @ columns.T))
        us.append(structure.U)
        ds.append(structure.D)
        d_in = structure.D <= d_max
        u_in = structure.U <= u_edge
        d_ok += d_in
        u_edge_ok += u_in
        u_printed_ok += structure.U <= u_max
        both_ok += d_in and u_in
    report = ContainmentReport(
        trials=trials,
        theta_count=theta_count,
        mf=mf,
        epsilon=epsilon,
        u_max=u_max,
        d_max=d_max,
        u_edge=u_edge,
        fraction_d_ok=d_ok / trials,
        fraction_u_edge_ok=u_edge_ok / trials,
        fraction_u_printed_ok=u_printed_ok / trials,
        fraction_both_ok=both_ok / trials,
        median_U=float(np.median(us)),
        median_D=float(np.median(ds)),
    )
    logger.info(
        "gicstat: containment over %d trials, both=%.3f D=%.3f U(stated)=%.3f",
        trials,
        report.fraction_both_ok,
        report.fraction_d_ok,
        report.fraction_u_printed_ok,
    )
    return report


class PearsonSeries(NamedTuple):
    values: np.ndarray
    zero_variance: np.ndarray


def sliding_pearson(x, y, window: int) -> PearsonSeries:
    """Pearson r over every length-`window` slice; zero-variance slices give 0 and are flagged."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DomainError(f"series must be 1-D and equally long, got {x.shape} and {y.shape}")
    if window < 2:
        raise DomainError(f"window must be >= 2, got {window}")
    if len(x) < window:
        raise DomainError(f"series of length {len(x)} is shorter than the window {window}")

    xw = sliding_window_view(x, window)
    yw = sliding_window_view(y, window)
    xc = xw - xw.mean(axis=1, keepdims=True)
    yc = yw - yw.mean(axis=1, keepdims=True)
    vx = np.sum(xc * xc, axis=1)
    vy = np.sum(yc * yc, axis=1)
    flat_x = vx <= window * (1e-12 * np.max(np.abs(xw), axis=1)) ** 2
    flat_y = vy <= window * (1e-12 * np.max(np.abs(yw), axis=1)) ** 2
    zero = flat_x | flat_y
    denom = np.sqrt(np.where(zero, 1.0, vx * vy))
    r = np.where(zero, 0.0, np.sum(xc * yc, axis=1) / denom)
    return PearsonSeries(np.clip(r, -1.0, 1.0), zero)


def median_correlation(series: PearsonSeries, mask=None) -> float:
    """Median over non-flagged windows (optionally restricted by `mask`); nan when none remain."""
    keep = ~series.zero_variance
    if mask is not None:
        keep &= np.asarray(mask, dtype=bool)
    if not keep.any():
        return math.nan
    return float(np.median(series.values[keep]))
