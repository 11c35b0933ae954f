import math

import numpy as np
import pytest
from scipy.linalg import eigvalsh

from app.services.autodiff import jacobian_params
from app.services.diagnostics import (
    bound_constants,
    dataset_bounds,
    dataset_structural,
    diagnose,
    gershgorin_bounds,
    local_grad_norm,
    loss_bounds,
    output_space_bounds,
    structural_error,
    structural_matrix,
    sym_eigenvalues,
)
from app.services.errors import DomainError
from app.services.losses import LossKind, LossSpec, batch_q_min, loss_eval, loss_grad_output, profile
from app.services.network import (
    Activation,
    ActivationLayer,
    InitScheme,
    ModelConfig,
    ParamModel,
    ShiftLayer,
    Stage,
    build,
    init,
    predict,
)

MSE = LossSpec(LossKind.MSE)
CE = LossSpec(LossKind.SOFTMAX_CE)


def _linear_model(input_dim: int = 4, output_dim: int = 3):
    return build(ModelConfig(input_dim=input_dim, output_dim=output_dim, block_count=0))


def _small_net(activation: str = "tanh"):
    model = build(ModelConfig(input_dim=3, output_dim=3, block_count=1, hidden_width=6, activation=activation))
    return model, init(model, InitScheme("he", seed=11))


def test_jacobi_matches_lapack():
    rng = np.random.default_rng(0)
    for n in (1, 2, 5, 12):
        b = rng.normal(size=(n, n))
        a = b + b.T
        np.testing.assert_allclose(sym_eigenvalues(a), eigvalsh(a), atol=1e-9 * max(1.0, np.linalg.norm(a)))


def test_gram_spectrum_is_squared_singular_values():
    jac = np.random.default_rng(1).normal(size=(20, 4))
    s = np.linalg.svd(jac, compute_uv=False)
    np.testing.assert_allclose(sym_eigenvalues(jac.T @ jac), np.sort(s**2), rtol=1e-9)


def test_sym_eigenvalues_rejects_bad_input():
    with pytest.raises(DomainError):
        sym_eigenvalues(np.ones((2, 3)))
    with pytest.raises(DomainError):
        sym_eigenvalues(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(DomainError):
        sym_eigenvalues(np.array([[np.nan]]))
    with pytest.raises(DomainError):
        sym_eigenvalues(np.zeros((0, 0)))


def test_gershgorin_discs_contain_spectrum():
    b = np.random.default_rng(2).normal(size=(6, 6))
    a = b @ b.T
    discs = gershgorin_bounds(a)
    for lam in sym_eigenvalues(a):
        assert any(abs(lam - c) <= r + 1e-9 for c, r in discs)


def test_structural_error_examples():
    s = structural_error([1.0, 4.0])
    assert s.U == pytest.approx(0.0)
    assert s.L == pytest.approx(-math.log(4.0))
    assert s.D == pytest.approx(math.log(4.0))
    assert s.S == pytest.approx(0.0)
    assert not s.degenerate

    base2 = structural_error([0.5, 4.0], weights=(2.0, 0.0, 1.0), log_base=2.0)
    assert (base2.U, base2.L, base2.D) == pytest.approx((1.0, -2.0, 3.0))
    assert base2.S == pytest.approx(4.0)


def test_structural_error_degenerate_uses_floor():
    s = structural_error([0.0, 2.0])
    assert s.degenerate
    assert s.U == pytest.approx(-math.log(2e-12))
    assert math.isfinite(s.S)
    with pytest.raises(DomainError):
        structural_error([])


def test_linear_model_structural_matrix_is_scaled_identity():
    model = _linear_model()
    x = np.array([1.0, 2.0, 0.0, -1.0])
    a = structural_matrix(model, np.zeros(model.parameter_count), x)
    np.testing.assert_allclose(a, (x @ x + 1.0) * np.eye(3))


def test_bound_constants():
    c = bound_constants(profile(MSE), 3)
    assert c.C_Phi == pytest.approx(1.0 / 18.0)
    assert c.C_phi == pytest.approx(1.5)
    assert c.r_conj == pytest.approx(2.0)

    q = 0.2
    assert bound_constants(profile(CE, q_min=q), 4).C_Phi == pytest.approx(q / 64.0)
    with pytest.raises(DomainError):
        bound_constants(profile(MSE), 0)


def test_mse_sandwich_on_random_linear_models():
    model = _linear_model()
    rng = np.random.default_rng(42)
    for _ in range(1000):
        theta = rng.normal(size=model.parameter_count)
        x = rng.normal(size=4)
        y = rng.normal(size=3)
        lower, upper, report = loss_bounds(MSE, model, theta, (x, y))
        assert lower <= report.loss_gap + 1e-12
        assert report.loss_gap <= upper + 1e-12

        # ‖∇_θ ℓ‖² = dᵀ A d with d = ∇_f ℓ
        d = loss_grad_output(MSE, predict(model, theta, x)[0], y)
        a = structural_matrix(model, theta, x)
        assert report.param_grad_sq == pytest.approx(d @ a @ d, rel=1e-10)


def test_bounds_collapse_at_the_optimum():
    model = _linear_model()
    theta = np.random.default_rng(3).normal(size=model.parameter_count)
    x = np.array([0.5, -1.0, 2.0, 0.0])
    y = predict(model, theta, x)[0]
    lower, upper, report = loss_bounds(MSE, model, theta, (x, y))
    assert report.loss_gap == 0.0
    assert lower == pytest.approx(0.0, abs=1e-15)
    assert upper == pytest.approx(0.0, abs=1e-15)


def test_degenerate_spectrum_gives_infinite_upper_bound():
    model = ParamModel(3, 3, (Stage("dead", (ShiftLayer(3), ActivationLayer(Activation.RELU))),))
    theta = np.full(3, -10.0)
    lower, upper, report = loss_bounds(MSE, model, theta, (np.zeros(3), np.array([1.0, 0.0, 0.0])))
    assert report.degenerate
    assert upper == math.inf
    assert lower == 0.0
    assert report.loss_gap == pytest.approx(0.5)

    result = diagnose(MSE, model, theta, np.zeros((2, 3)), np.eye(3)[:2])
    assert result.degenerate and result.upper == math.inf


def test_dataset_bounds_bracket_mean_loss():
    model, theta = _small_net()
    rng = np.random.default_rng(5)
    inputs = rng.normal(size=(8, 3))
    targets = rng.normal(size=(8, 3))
    result = diagnose(MSE, model, theta, inputs, targets)
    assert not result.degenerate
    assert result.lower <= result.mean_loss_gap <= result.upper
    assert len(result.reports) == 8
    assert all(r.sandwich_ok for r in result.reports)
    assert (result.lower, result.upper) == dataset_bounds(MSE, model, theta, inputs, targets)
    assert result.local_grad_norm == pytest.approx(local_grad_norm(MSE, model, theta, inputs, targets, 2.0))

    structure = dataset_structural(model, theta, inputs)
    assert structure.lambda_min == pytest.approx(min(r.lambda_min for r in result.reports))
    assert structure.lambda_max == pytest.approx(max(r.lambda_max for r in result.reports))


def test_softmax_ce_lower_bound_and_indicator_sandwich():
    model, theta = _small_net("sigmoid")
    rng = np.random.default_rng(6)
    inputs = rng.normal(size=(10, 3))
    targets = np.eye(3)[rng.integers(0, 3, size=10)]
    result = diagnose(CE, model, theta, inputs, targets)
    assert result.q_min is not None and 0 < result.q_min < 1 / 3 + 1e-12
    assert result.lower <= result.mean_loss_gap
    for r in result.reports:
        assert r.lower_bound <= r.loss_gap
        assert r.output_grad_sq * r.lambda_min <= r.param_grad_sq * (1 + 1e-9) + 1e-15
        assert r.param_grad_sq <= r.output_grad_sq * r.lambda_max * (1 + 1e-9) + 1e-15


def test_output_space_bounds_for_mse_are_tight_below():
    prof = profile(MSE)
    lower, upper = output_space_bounds(prof, [3.0, 4.0])
    assert lower == pytest.approx(12.5)
    assert upper == pytest.approx(12.5)


def test_output_space_lower_bound_for_softmax_ce():
    # f = 0, two classes: q_min = 1/2, ∇_f ℓ = (−1/2, 1/2)
    prof = profile(CE, q_min=0.5)
    lower, upper = output_space_bounds(prof, [-0.5, 0.5])
    assert lower == pytest.approx(0.0625)
    assert upper == pytest.approx(math.log(2.0) / 8)
    # the upper side falls below ℓ = ln 2 here; only the lower side is a guarantee
    assert upper < math.log(2.0)

    rng = np.random.default_rng(17)
    for _ in range(200):
        batch = rng.normal(scale=rng.uniform(0.1, 4.0), size=(8, 5))
        labels = rng.integers(0, 5, size=8)
        prof = profile(CE, q_min=batch_q_min(batch))
        for f, label in zip(batch, labels):
            y = np.eye(5)[label]
            lower, _ = output_space_bounds(prof, loss_grad_output(CE, f, y))
            assert 0.0 <= lower <= loss_eval(CE, f, y) + 1e-9


def test_jacobian_matches_structural_matrix():
    model, theta = _small_net()
    x = np.array([0.1, 0.2, -0.3])
    jac = jacobian_params(model, theta, x)
    np.testing.assert_allclose(structural_matrix(model, theta, x), jac.T @ jac, rtol=1e-12)


def test_threaded_diagnostics_are_deterministic(monkeypatch):
    import app.config as config

    model, theta = _small_net()
    rng = np.random.default_rng(7)
    inputs = rng.normal(size=(6, 3))
    targets = rng.normal(size=(6, 3))

    monkeypatch.setenv("GENSMOOTH_THREADS", "1")
    config.get_settings.cache_clear()
    serial = diagnose(MSE, model, theta, inputs, targets)

    monkeypatch.setenv("GENSMOOTH_THREADS", "4")
    config.get_settings.cache_clear()
    threaded = diagnose(MSE, model, theta, inputs, targets)

    assert serial.lower == threaded.lower and serial.upper == threaded.upper
    for a, b in zip(serial.reports, threaded.reports):
        np.testing.assert_array_equal(a.eigenvalues, b.eigenvalues)


def test_diagnose_validates_sample_counts():
    model, theta = _small_net()
    with pytest.raises(DomainError):
        diagnose(MSE, model, theta, np.zeros((3, 3)), np.zeros((2, 3)))
    with pytest.raises(DomainError):
        local_grad_norm(MSE, model, theta, np.zeros((1, 3)), np.zeros((1, 3)), 1.0)
