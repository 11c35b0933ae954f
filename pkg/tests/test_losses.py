import math

import numpy as np
import pytest

from app.services.errors import DomainError, NumericError
from app.services.losses import (
    EmpiricalTriple,
    LossKind,
    LossSpec,
    batch_q_min,
    loss_eval,
    loss_grad_output,
    parse_loss_label,
    profile,
)
from app.services.normpower import NormKind, conjugate, evaluate
from conftest import central_jacobian

ALL_LABELS = ["mse", "softmax_ce", "l1", "smooth_l1", "pnorm_pow1", "pnorm_pow2", "pnorm_pow3", "pnorm_pow6"]


def test_loss_values():
    assert loss_eval(LossSpec(LossKind.SOFTMAX_CE), [0.0, 0.0], [1.0, 0.0]) == pytest.approx(math.log(2))
    assert loss_eval(LossSpec(LossKind.MSE), [1.0, 2.0], [0.0, 0.0]) == pytest.approx(2.5)
    assert loss_eval(LossSpec(LossKind.L1), [1.0, -2.0], [0.0, 0.0]) == pytest.approx(3.0)
    smooth = LossSpec(LossKind.SMOOTH_L1, beta=1.0)
    assert loss_eval(smooth, [0.5, 2.0], [0.0, 0.0]) == pytest.approx(0.125 + 1.5)
    assert loss_eval(parse_loss_label("pnorm_pow3"), [1.0, -2.0], [0.0, 0.0]) == pytest.approx(9.0)


def test_softmax_ce_is_shift_invariant_and_stable():
    spec = LossSpec(LossKind.SOFTMAX_CE)
    y = np.array([0.0, 1.0, 0.0])
    f = np.array([1.0, 2.0, -1.0])
    assert loss_eval(spec, f + 1000.0, y) == pytest.approx(loss_eval(spec, f, y))
    assert math.isfinite(loss_eval(spec, [800.0, -800.0, 0.0], y))


@pytest.mark.parametrize("label", ALL_LABELS)
def test_output_gradient_matches_central_differences(label):
    spec = parse_loss_label(label)
    rng = np.random.default_rng(len(label))
    y = np.eye(4)[1]
    for _ in range(5):
        f = rng.normal(size=4)
        f[np.abs(f - y) < 0.05] += 0.2  # stay clear of kinks
        approx = central_jacobian(lambda v: [loss_eval(spec, v, y)], f)[:, 0]
        np.testing.assert_allclose(loss_grad_output(spec, f, y), approx, rtol=1e-5, atol=1e-5)


def test_subgradient_at_kink_is_zero():
    assert np.all(loss_grad_output(LossSpec(LossKind.L1), [1.0, 0.0], [1.0, 0.0]) == 0.0)


def test_softmax_ce_rejects_non_distribution_targets():
    with pytest.raises(DomainError):
        loss_eval(LossSpec(LossKind.SOFTMAX_CE), [0.0, 0.0], [1.0, 1.0])
    with pytest.raises(DomainError):
        loss_grad_output(LossSpec(LossKind.MSE), [0.0, 0.0], [1.0])


def test_mse_profile_and_quadratic_identity():
    prof = profile(LossSpec(LossKind.MSE))
    assert prof.phi.norm is NormKind.L2 and prof.phi.scale == 0.5 and prof.phi.order == 2
    assert prof.big_phi == prof.phi
    assert prof.smooth_conjugate_order == pytest.approx(2.0)
    assert not prof.empirical and not prof.data_dependent

    # loss = Φ*(∇_f ℓ) exactly for half squared error
    rng = np.random.default_rng(0)
    spec = LossSpec(LossKind.MSE)
    for _ in range(10):
        f, y = rng.normal(size=3), rng.normal(size=3)
        grad = loss_grad_output(spec, f, y)
        assert evaluate(conjugate(prof.big_phi), grad) == pytest.approx(loss_eval(spec, f, y))


def test_softmax_ce_profile_needs_q_min():
    spec = LossSpec(LossKind.SOFTMAX_CE)
    with pytest.raises(DomainError):
        profile(spec)
    with pytest.raises(NumericError):
        profile(spec, q_min=0.0)
    prof = profile(spec, q_min=0.25)
    assert prof.data_dependent and prof.q_min == 0.25
    assert prof.big_phi.scale == pytest.approx(4.0)
    assert prof.phi.norm is NormKind.L1


def test_empirical_profiles():
    prof = profile(LossSpec(LossKind.L1))
    assert prof.empirical
    assert prof.phi.norm is NormKind.L1 and prof.phi.order == 2.0

    spec = LossSpec(LossKind.PNORM_POW, k=3, smooth=EmpiricalTriple(scale=2.0, order=4.0, relaxation=0.5))
    prof = profile(spec)
    assert prof.big_phi.norm is NormKind.LP and prof.big_phi.p == 3.0
    assert prof.big_phi.order == 4.0 and prof.big_phi.scale == 2.0
    assert prof.smooth_part.relaxation == 0.5
    assert prof.phi.order == 3.0

    assert profile(parse_loss_label("pnorm_pow2")).big_phi.scale == 1.0


def test_batch_q_min():
    assert batch_q_min(np.zeros((2, 3))) == pytest.approx(1.0 / 3.0)
    outputs = np.array([[0.0, 0.0], [math.log(3.0), 0.0]])
    assert batch_q_min(outputs) == pytest.approx(0.25)


def test_parse_loss_label():
    assert parse_loss_label("MSE").kind is LossKind.MSE
    spec = parse_loss_label("pnorm_pow4")
    assert spec.k == 4 and spec.label == "pnorm_pow4"
    assert parse_loss_label("softmax_ce").has_exact_profile
    assert not parse_loss_label("smooth_l1").has_exact_profile
    with pytest.raises(DomainError):
        parse_loss_label("pnorm_pow7")
    with pytest.raises(ValueError):
        parse_loss_label("huber")
    with pytest.raises(DomainError):
        LossSpec(LossKind.SMOOTH_L1, beta=0.0)
