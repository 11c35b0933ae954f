import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from app.services.errors import DomainError, NumericError
from app.services.losses import LossKind, LossSpec
from app.services.network import InitScheme, ModelConfig, ParamModel, ShiftLayer, Stage, build, init
from app.services.normpower import NormKind, NormPower, minimize_power_linear, omega_norm
from app.services.optim import (
    OmegaSpec,
    SgdState,
    batch_gradient,
    estimate_M,
    guaranteed_level,
    mean_loss,
    optimal_step,
    sgd_step,
    steps_to_epsilon,
)
from conftest import central_jacobian

MSE = LossSpec(LossKind.MSE)


def _quadratic_omega(L: float, relaxation: float = 0.0) -> OmegaSpec:
    return OmegaSpec(NormPower(NormKind.L2, 2.0, L / 2.0), relaxation)


def _random_quadratic(rng, dim: int = 5):
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    eigs = rng.uniform(0.1, 10.0, size=dim)
    return (q * eigs) @ q.T, float(eigs.max())


def test_sgd_step_without_momentum():
    state = sgd_step(SgdState.start([1.0], lr=0.1), [2.0])
    np.testing.assert_allclose(state.theta, [0.8])
    assert state.step == 1


def test_sgd_zero_gradient_keeps_theta():
    state = sgd_step(SgdState.start([1.0, -2.0], lr=0.5, momentum=0.9), [0.0, 0.0])
    np.testing.assert_array_equal(state.theta, [1.0, -2.0])


def test_sgd_momentum_two_steps():
    state = SgdState.start([1.0], lr=0.1, momentum=0.9)
    state = sgd_step(state, [2.0])
    state = sgd_step(state, [1.0])
    # v1 = 2, θ1 = 0.8; v2 = 0.9·2 + 1 = 2.8, θ2 = 0.8 − 0.28
    np.testing.assert_allclose(state.velocity, [2.8])
    np.testing.assert_allclose(state.theta, [0.52])
    assert state.step == 2


def test_sgd_step_errors():
    state = SgdState.start([1.0], lr=0.1)
    with pytest.raises(NumericError):
        sgd_step(state, [np.nan])
    with pytest.raises(DomainError):
        sgd_step(state, [1.0, 2.0])
    with pytest.raises(DomainError):
        SgdState.start([1.0], lr=0.0)
    with pytest.raises(DomainError):
        SgdState.start([1.0], lr=0.1, momentum=1.0)


def test_sgd_step_learning_rate_override():
    state = sgd_step(SgdState.start([1.0], lr=0.1), [1.0], lr=0.5)
    np.testing.assert_allclose(state.theta, [0.5])
    assert state.lr == 0.1


def test_optimal_step_quadratic_omega():
    rng = np.random.default_rng(0)
    omega = _quadratic_omega(10.0)
    for _ in range(5):
        g = rng.normal(size=4)
        alpha, decrease = optimal_step(omega, g)
        assert alpha == pytest.approx(0.1, abs=1e-12)
        assert decrease == pytest.approx(g @ g / 20.0)
        _, k_star = minimize_power_linear(float(omega.power.scale * (g @ g)), float(g @ g), 2.0)
        assert decrease == pytest.approx(-k_star)

    alpha, _ = optimal_step(_quadratic_omega(1.0), [3.0, -1.0])
    assert alpha == pytest.approx(1.0)


def test_optimal_step_quartic_matches_line_search():
    omega = OmegaSpec(NormPower(NormKind.L2, 4.0, 1.0))
    g = np.array([1.0, 0.0])
    alpha, decrease = optimal_step(omega, g)
    assert alpha == pytest.approx(0.25 ** (1.0 / 3.0))

    # upper model K(α) = Ω(αg) − α‖g‖²
    result = minimize_scalar(lambda a: a**4 - a, bounds=(0.0, 2.0), method="bounded", options={"xatol": 1e-12})
    assert alpha == pytest.approx(result.x, rel=1e-6)
    assert decrease == pytest.approx(-result.fun, rel=1e-9)


def test_optimal_step_zero_gradient_and_relaxation():
    omega = _quadratic_omega(2.0, relaxation=0.3)
    assert optimal_step(omega, np.zeros(3)) == (0.0, -0.3)
    _, decrease = optimal_step(omega, [0.1, 0.0])
    assert decrease < 0
    with pytest.raises(DomainError):
        OmegaSpec(NormPower(NormKind.L2, 2.0), relaxation=-1.0)


def test_optimal_step_descent_on_quadratics():
    rng = np.random.default_rng(1)
    for _ in range(100):
        H, L = _random_quadratic(rng)
        omega = _quadratic_omega(L)
        theta = rng.normal(size=5) * 3.0
        g = H @ theta
        alpha, _ = optimal_step(omega, g)
        assert alpha == pytest.approx(1.0 / L, abs=1e-12)
        after = theta - alpha * g
        decrease = 0.5 * theta @ H @ theta - 0.5 * after @ H @ after
        assert decrease >= omega_norm(omega.power, g) ** 2 - 1e-9


def test_budget_reaches_epsilon_on_quadratics():
    rng = np.random.default_rng(2)
    epsilon = 0.1
    for _ in range(100):
        H, L = _random_quadratic(rng)
        omega = _quadratic_omega(L)
        theta = rng.normal(size=5)
        gap = 0.5 * theta @ H @ theta
        budget = steps_to_epsilon(epsilon, omega, n=1, m=1, initial_gap=gap)
        best = np.inf
        for _ in range(budget):
            g = H @ theta
            best = min(best, omega_norm(omega.power, g) ** 2)
            alpha, _ = optimal_step(omega, g)
            theta = theta - alpha * g
        assert best <= epsilon**2 + 1e-9


def test_steps_to_epsilon_examples():
    omega = _quadratic_omega(2.0)
    assert steps_to_epsilon(0.1, omega, n=1, m=1, initial_gap=1.0) == 100
    assert steps_to_epsilon(0.1, omega, n=5, m=5, initial_gap=0.0) == 0
    assert steps_to_epsilon(0.1, omega, n=2, m=1, initial_gap=1.0) == 200
    assert steps_to_epsilon(0.1, omega, n=4, m=1, initial_gap=1.0) == 400
    with pytest.raises(DomainError):
        steps_to_epsilon(0.0, omega, n=1, m=1, initial_gap=1.0)
    with pytest.raises(DomainError):
        steps_to_epsilon(0.1, omega, n=1, m=2, initial_gap=1.0)
    with pytest.raises(DomainError):
        steps_to_epsilon(0.1, omega, n=1, m=1, initial_gap=-1.0)


def test_guaranteed_level():
    omega = _quadratic_omega(2.0, relaxation=0.1)
    assert guaranteed_level(0.1, omega, n=4, m=2, M=0.5) == pytest.approx(0.61)


def _shift_model() -> ParamModel:
    return ParamModel(1, 1, (Stage("shift", (ShiftLayer(1),)),))


def test_estimate_M_on_a_shift_model():
    model = _shift_model()
    inputs = np.array([[0.0], [1.0], [2.0]])
    targets = np.zeros((3, 1))
    # complement {1, 2}: mean ½(1+θ)², ½(2+θ)² goes from 1.25 at θ=0 to 0.5 at θ=−1
    m = estimate_M(MSE, model, np.array([0.0]), np.array([-1.0]), (inputs, targets), [0])
    assert m == pytest.approx(-0.75)


def test_estimate_M_conventions():
    model = _shift_model()
    inputs = np.array([[0.0], [1.0]])
    targets = np.zeros((2, 1))
    assert estimate_M(MSE, model, np.array([0.0]), np.array([1.0]), (inputs, targets), [0, 1]) == 0.0
    assert estimate_M(MSE, model, np.array([0.5]), np.array([0.5]), (inputs, targets), [0]) == 0.0
    with pytest.raises(DomainError):
        estimate_M(MSE, model, np.array([0.0]), np.array([1.0]), (inputs, targets), [2])


def test_batch_gradient_matches_mean_loss_differences():
    model = build(ModelConfig(input_dim=3, output_dim=2, block_count=1, hidden_width=4, activation="tanh"))
    theta = init(model, InitScheme("he", seed=4))
    rng = np.random.default_rng(4)
    inputs = rng.normal(size=(5, 3))
    targets = rng.normal(size=(5, 2))
    loss, grad = batch_gradient(MSE, model, theta, inputs, targets)
    assert loss == pytest.approx(mean_loss(MSE, model, theta, inputs, targets))
    approx = central_jacobian(lambda t: [mean_loss(MSE, model, t, inputs, targets)], theta)[:, 0]
    np.testing.assert_allclose(grad, approx, rtol=1e-5, atol=1e-8)
    with pytest.raises(DomainError):
        batch_gradient(MSE, model, theta, np.zeros((0, 3)), np.zeros((0, 2)))
