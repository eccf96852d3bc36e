"""Objective, gradient, and optimizer tests for model calibration."""

import numpy as np
import pytest

from rndkit.arbitrage import audit_surface, build_synthetic_grid, total_penalty
from rndkit.calibration import (
    CONVERGENCE_WINDOW,
    AdamState,
    CalibrationConfig,
    CalibrationDivergence,
    adam_step,
    calibrate,
    mse,
    objective_and_gradient,
    params_from_jsonable,
    params_to_vector,
    relative_mse,
    vector_to_params,
)
from rndkit.data_io import OptionQuote
from rndkit.heston import generate_simulated_chain
from rndkit.models import (
    RnQParams,
    init_rndmlp,
    init_rnmlp,
    rnq_mu_from_constraint,
)
from rndkit.pricing import price_chain
from rndkit.sampling import draw_standard_normal

SPOT = 1000.0


@pytest.fixture(scope="module")
def call_chain():
    chain = generate_simulated_chain("left-skew")
    quotes = [q for q in chain.quotes if 700 <= q.strike <= 1300][::4]
    return chain.with_quotes(quotes)


@pytest.fixture(scope="module")
def mixed_chain(call_chain):
    # flip alternating quotes to puts with parity-consistent mids so both
    # payoff branches of the objective carry weight
    chain = call_chain
    quotes = []
    for i, q in enumerate(chain.quotes):
        if i % 2 == 0:
            quotes.append(q)
        else:
            tau = q.tau
            put = q.mid - chain.spot + q.strike * np.exp(-chain.rate(tau) * tau)
            quotes.append(OptionQuote("put", q.strike, q.days_to_maturity, put, put))
    return chain.with_quotes(quotes)


def grid_for(chain):
    return build_synthetic_grid([q.tau for q in chain.quotes],
                                [q.strike for q in chain.quotes])


# ----------------------------------------------------------------------
# loss functions


def test_mse_averages_sides_separately():
    # calls contribute (1 + 9)/2, the put 4/1
    assert mse([10, 10, 10], [11, 13, 12], ["call", "call", "put"]) == 9.0


def test_mse_single_side_is_plain_mean():
    assert mse([1.0, 2.0], [2.0, 4.0], ["call", "call"]) == pytest.approx(2.5)


def test_mse_input_validation():
    with pytest.raises(ValueError):
        mse([], [], [])
    with pytest.raises(ValueError):
        mse([1.0], [1.0, 2.0], ["call", "call"])
    with pytest.raises(ValueError):
        mse([1.0], [1.0], ["straddle"])


def test_relative_mse_floor_excludes_and_counts():
    value, n_excluded = relative_mse([10.0, 0.01, 20.0], [11.0, 5.0, 22.0],
                                     ["call", "call", "put"])
    assert n_excluded == 1
    assert value == pytest.approx(0.01 + 0.01)


def test_relative_mse_keeps_prices_at_the_floor():
    value, n_excluded = relative_mse([0.05], [0.1], ["call"], floor=0.05)
    assert n_excluded == 0
    assert value == pytest.approx(1.0)


# ----------------------------------------------------------------------
# Adam


def test_adam_drives_quadratic_to_zero():
    state = AdamState.zeros(1)
    x = np.array([1.0])
    for _ in range(500):
        x = adam_step(state, x, 2.0 * x, 0.01)
    assert abs(x[0]) < 0.05
    assert abs(x[0]) < 1e-6


def test_adam_zero_gradient_leaves_params():
    state = AdamState.zeros(3)
    x = np.array([1.0, -2.0, 0.5])
    out = adam_step(state, x, np.zeros(3), 0.01)
    assert np.array_equal(out, x)


def test_adam_first_step_is_learning_rate_sized():
    # with constant gradient the bias-corrected step is lr * sign(g)
    state = AdamState.zeros(2)
    x = np.zeros(2)
    g = np.array([3.0, -0.25])
    out = adam_step(state, x, g, 0.01)
    np.testing.assert_allclose(out, [-0.01, 0.01], rtol=1e-6)


def test_adam_shape_mismatch_raises():
    state = AdamState.zeros(2)
    with pytest.raises(ValueError):
        adam_step(state, np.zeros(2), np.zeros(3), 0.01)


# ----------------------------------------------------------------------
# parameter flattening


def test_vector_round_trip_rnq():
    model = RnQParams(mu=0.01, sigma=0.3, u=1.2, v=1.4)
    vec = params_to_vector(model)
    back = vector_to_params(model, vec)
    assert np.array_equal(params_to_vector(back), vec)
    assert back.mu == model.mu and back.a_const == model.a_const
    with pytest.raises(ValueError):
        vector_to_params(model, np.zeros(4))


def test_vector_round_trip_networks():
    for model in (init_rnmlp(3, hidden=(4, 4)), init_rndmlp(3, hidden=(4, 4))):
        vec = params_to_vector(model)
        back = vector_to_params(model, vec + 0.5)
        assert np.array_equal(params_to_vector(back), vec + 0.5)
    mlp = init_rnmlp(3, hidden=(4, 4))
    with pytest.raises(ValueError):
        vector_to_params(mlp, np.zeros(params_to_vector(mlp).size + 1))


def test_params_jsonable_round_trip(call_chain):
    cfg = CalibrationConfig(n_samples=2000, seed=5, iterations=0)
    for kind in ("rn-q", "rn-mlp", "rn-dmlp"):
        res = calibrate(kind, call_chain, cfg)
        doc = res.to_jsonable()
        back = params_from_jsonable(doc["params"])
        assert np.array_equal(params_to_vector(back), params_to_vector(res.params))


def test_params_from_jsonable_rejects_unknown_kind():
    with pytest.raises(ValueError):
        params_from_jsonable({"kind": "rn-cnn"})


# ----------------------------------------------------------------------
# gradients vs finite differences


def fd_worst_error(model, chain, cfg, h=1e-5):
    samples = draw_standard_normal(cfg.n_samples, cfg.seed)
    grid = grid_for(chain)
    _, grad = objective_and_gradient(model, chain, grid, cfg, samples)
    vec = params_to_vector(model)
    worst = 0.0
    for i in range(vec.size):
        vp, vm = vec.copy(), vec.copy()
        vp[i] += h
        vm[i] -= h
        lp, _ = objective_and_gradient(vector_to_params(model, vp), chain, grid, cfg, samples)
        lm, _ = objective_and_gradient(vector_to_params(model, vm), chain, grid, cfg, samples)
        fd = (lp - lm) / (2 * h)
        scale = max(abs(fd), abs(grad[i]), 1e-8)
        worst = max(worst, abs(fd - grad[i]) / scale)
    return worst


@pytest.mark.parametrize("loss_kind", ["absolute-MSE", "relative-MSE"])
def test_gradient_matches_fd_rnq(mixed_chain, loss_kind):
    cfg = CalibrationConfig(n_samples=4000, seed=3, loss_kind=loss_kind)
    model = RnQParams(mu=0.0, sigma=0.25, u=1.05, v=1.2)
    assert fd_worst_error(model, mixed_chain, cfg) < 1e-4


@pytest.mark.parametrize("loss_kind", ["absolute-MSE", "relative-MSE"])
def test_gradient_matches_fd_rnmlp(mixed_chain, loss_kind):
    cfg = CalibrationConfig(n_samples=4000, seed=3, loss_kind=loss_kind)
    assert fd_worst_error(init_rnmlp(11, hidden=(4, 4)), mixed_chain, cfg) < 1e-4


def test_gradient_matches_fd_rndmlp(mixed_chain):
    cfg = CalibrationConfig(n_samples=2000, seed=3)
    assert fd_worst_error(init_rndmlp(5, hidden=(4, 4)), mixed_chain, cfg) < 1e-4


def test_penalty_scales_linearly_in_lambda(call_chain):
    model = init_rndmlp(5, hidden=(4, 4))
    samples = draw_standard_normal(4000, 3)
    grid = grid_for(call_chain)
    losses = []
    for lam in (0.0, 1.0, 2.0):
        cfg = CalibrationConfig(n_samples=4000, seed=3, lam=lam)
        loss, _ = objective_and_gradient(model, call_chain, grid, cfg, samples)
        losses.append(loss)
    assert losses[1] > losses[0]
    assert losses[2] - losses[0] == pytest.approx(2.0 * (losses[1] - losses[0]), rel=1e-12)


def test_perfect_fit_has_negligible_loss_and_gradient(call_chain):
    # quotes priced by the model itself, penalty off: the optimum
    cfg = CalibrationConfig(n_samples=20_000, seed=8, lam=0.0)
    samples = draw_standard_normal(cfg.n_samples, cfg.seed)
    tau = call_chain.quotes[0].tau
    rate = call_chain.rate(tau)
    mu = rnq_mu_from_constraint(0.25, 1.05, 1.2, 4.0, samples, rate, tau)
    model = RnQParams(mu=mu, sigma=0.25, u=1.05, v=1.2)
    fitted = price_chain(model, call_chain, samples)
    quotes = [OptionQuote(q.side, q.strike, q.days_to_maturity, float(p), float(p))
              for q, p in zip(call_chain.quotes, fitted)]
    chain = call_chain.with_quotes(quotes)
    loss, grad = objective_and_gradient(model, chain, grid_for(chain), cfg, samples)
    assert loss < 1e-12
    assert np.linalg.norm(grad) < 1e-4


# ----------------------------------------------------------------------
# the optimization loop


def test_calibrate_rejects_bad_inputs(call_chain):
    with pytest.raises(ValueError):
        calibrate("rn-tree", call_chain, CalibrationConfig(n_samples=100))
    multi = generate_simulated_chain("left-skew", days=[91, 182])
    with pytest.raises(ValueError):
        calibrate("rn-q", multi, CalibrationConfig(n_samples=100))
    with pytest.raises(ValueError):
        calibrate("rn-q", call_chain, CalibrationConfig(n_samples=100),
                  init_model=init_rnmlp(1, hidden=(4, 4)))


def test_config_validation():
    with pytest.raises(ValueError):
        CalibrationConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        CalibrationConfig(lam=-0.5)
    with pytest.raises(ValueError):
        CalibrationConfig(n_samples=0)
    with pytest.raises(ValueError):
        CalibrationConfig(iterations=-1)
    with pytest.raises(ValueError):
        CalibrationConfig(loss_kind="huber")
    with pytest.raises(ValueError):
        CalibrationConfig(seed=-1)


def test_zero_iterations_returns_initialization(call_chain):
    cfg = CalibrationConfig(n_samples=2000, seed=6, iterations=0)
    res = calibrate("rn-mlp", call_chain, cfg)
    assert res.iterations_run == 0
    assert res.loss_trajectory.size == 0
    assert not res.converged
    assert np.array_equal(params_to_vector(res.params),
                          params_to_vector(init_rnmlp(6)))
    assert np.isfinite(res.final_train_mse)
    assert np.isfinite(res.final_penalty.total)


def test_calibrate_is_deterministic(call_chain):
    cfg = CalibrationConfig(n_samples=10_000, seed=9, iterations=25)
    r1 = calibrate("rn-mlp", call_chain, cfg)
    r2 = calibrate("rn-mlp", call_chain, cfg)
    assert np.array_equal(r1.loss_trajectory, r2.loss_trajectory)
    assert np.array_equal(params_to_vector(r1.params), params_to_vector(r2.params))


def test_objective_at_returned_params_equals_last_trajectory_entry(call_chain):
    cfg = CalibrationConfig(n_samples=10_000, seed=9, iterations=25)
    res = calibrate("rn-mlp", call_chain, cfg)
    samples = draw_standard_normal(cfg.n_samples, cfg.seed)
    loss, _ = objective_and_gradient(res.params, call_chain, grid_for(call_chain),
                                     cfg, samples)
    assert loss == res.loss_trajectory[-1]


def test_divergence_raises_with_iteration_index(call_chain):
    cfg = CalibrationConfig(n_samples=2000, seed=1, iterations=20, learning_rate=1e6)
    with pytest.raises(CalibrationDivergence) as err:
        calibrate("rn-mlp", call_chain, cfg)
    assert err.value.iteration >= 1
    assert "iteration" in str(err.value)


def test_convergence_window_stops_early(call_chain):
    cfg = CalibrationConfig(n_samples=2000, seed=2, iterations=500,
                            convergence_tol=1e12)
    res = calibrate("rn-mlp", call_chain, cfg)
    assert res.converged
    assert res.iterations_run == CONVERGENCE_WINDOW + 1


def test_rnq_final_location_satisfies_martingale(call_chain):
    cfg = CalibrationConfig(n_samples=5000, seed=4, iterations=3)
    res = calibrate("rn-q", call_chain, cfg)
    samples = draw_standard_normal(cfg.n_samples, cfg.seed)
    tau = call_chain.quotes[0].tau
    p = res.params
    expected = rnq_mu_from_constraint(p.sigma, p.u, p.v, p.a_const, samples,
                                      call_chain.rate(tau), tau)
    assert p.mu == expected


def test_penalty_decreases_from_initialization(call_chain):
    cfg = CalibrationConfig(n_samples=10_000, seed=4, iterations=150)
    res = calibrate("rn-dmlp", call_chain, cfg)
    init = init_rndmlp(cfg.seed)
    samples = draw_standard_normal(cfg.n_samples, cfg.seed)
    grid = grid_for(call_chain)
    report_init = total_penalty(init, grid, call_chain.spot, call_chain.rate, samples)
    assert res.final_penalty.total < report_init.total
    assert res.loss_trajectory[-1] < 0.2 * res.loss_trajectory[0]
    taus = sorted({q.tau for q in call_chain.quotes})
    strikes = sorted({q.strike for q in call_chain.quotes})
    audit_init = audit_surface(init, taus, strikes, call_chain.spot, call_chain.rate, samples)
    audit_fit = audit_surface(res.params, taus, strikes, call_chain.spot,
                              call_chain.rate, samples)
    before = audit_init["checks"]["calendar_in_tau"]["n_violations"]
    after = audit_fit["checks"]["calendar_in_tau"]["n_violations"]
    assert after <= before


def test_rnq_recovers_its_own_chain(call_chain):
    # quotes generated by a known quantile model are refit nearly exactly
    samples = draw_standard_normal(50_000, 42)
    tau = call_chain.quotes[0].tau
    rate = call_chain.rate(tau)
    mu = rnq_mu_from_constraint(0.25, 1.05, 1.2, 4.0, samples, rate, tau)
    true = RnQParams(mu=mu, sigma=0.25, u=1.05, v=1.2)
    strikes = np.linspace(600, 1400, 40)
    proto = call_chain.with_quotes(
        [OptionQuote("call", float(k), 91, 1.0, 1.0) for k in strikes])
    prices = price_chain(true, proto, samples)
    chain = call_chain.with_quotes(
        [OptionQuote("call", float(k), 91, float(p), float(p))
         for k, p in zip(strikes, prices)])
    cfg = CalibrationConfig(n_samples=50_000, seed=42, iterations=600)
    res = calibrate("rn-q", chain, cfg)
    assert res.final_train_mse < 1.0
