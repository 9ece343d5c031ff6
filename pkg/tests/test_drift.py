import numpy as np
import pytest

from robust_hjm.drift import (MarketPrices, apply_market_prices, check_drift_condition, classical_reduction_check,
                              generate_risk_neutral)
from robust_hjm.hjm import HjmCoefficients, ho_lee_beta, hull_white_beta
from robust_hjm.scenarios import TimeGrid, VolatilityBand

K = 101


def _tt(grid):
    t = grid.times
    return np.triu(t[None, :] - t[:, None])


def test_ho_lee_gamma_is_time_to_maturity(grid):
    coeffs = generate_risk_neutral(ho_lee_beta(grid), grid)
    assert np.max(np.abs(coeffs.gamma[..., 0, 0] - _tt(grid))) <= 1e-15
    assert not np.any(coeffs.alpha)


@pytest.mark.parametrize("theta", [0.25, 0.5, 1.0])
def test_hull_white_gamma_closed_form(grid, theta):
    coeffs = generate_risk_neutral(hull_white_beta(grid, theta), grid)
    x = _tt(grid)
    exact = np.triu(np.exp(-theta * x) * (1 - np.exp(-theta * x)) / theta)
    # trapezoid b: error <= theta^2 T dt^2 / 12
    assert np.max(np.abs(coeffs.gamma[..., 0, 0] - exact)) <= theta ** 2 * grid.dt ** 2 / 12 + 1e-15


def test_zero_beta_gives_zero_drift(grid):
    coeffs = generate_risk_neutral(np.zeros((K, K)), grid)
    assert not np.any(coeffs.alpha) and not np.any(coeffs.gamma)


def test_zero_shift_is_identity(grid):
    coeffs = generate_risk_neutral(hull_white_beta(grid, 0.5), grid)
    shifted = apply_market_prices(coeffs, MarketPrices.zeros(K))
    assert np.array_equal(shifted.alpha, coeffs.alpha) and np.array_equal(shifted.gamma, coeffs.gamma)


def test_shift_removes_constant_drift(grid):
    coeffs = HjmCoefficients(grid, np.triu(np.full((K, K), -0.1)), ho_lee_beta(grid), _tt(grid))
    shifted = apply_market_prices(coeffs, MarketPrices.constant(K, 0.1))
    assert np.max(np.abs(shifted.alpha)) <= 1e-16


def test_shift_unshift(grid):
    coeffs = generate_risk_neutral(ho_lee_beta(grid), grid)
    rng = np.random.default_rng(1)
    prices = MarketPrices(rng.uniform(-1, 1, (K, 1)), rng.uniform(-1, 1, (K, 1, 1, 1)))
    back = apply_market_prices(apply_market_prices(coeffs, prices), -prices)
    assert np.max(np.abs(back.alpha - coeffs.alpha)) <= 1e-12
    assert np.max(np.abs(back.gamma - coeffs.gamma)) <= 1e-12


def test_round_trip_certifies_with_zero_prices(grid):
    for beta in (ho_lee_beta(grid), hull_white_beta(grid, 0.5)):
        prices, report = check_drift_condition(generate_risk_neutral(beta, grid))
        assert report.certificate and report.max_abs <= 1e-12
        assert prices.max_norm == 0.0


def test_constant_market_price_recovered(grid):
    coeffs = HjmCoefficients(grid, np.triu(np.full((K, K), -0.1)), ho_lee_beta(grid), _tt(grid))
    prices, report = check_drift_condition(coeffs)
    assert report.certificate
    assert np.allclose(prices.kappa, 0.1, atol=1e-14, rtol=0)
    assert np.max(np.abs(prices.lam)) <= 1e-14


def test_maturity_dependent_drift_not_certified(grid):
    t = grid.times
    alpha = np.triu(np.broadcast_to(t, (K, K)))
    prices, report = check_drift_condition(HjmCoefficients(grid, alpha, ho_lee_beta(grid), _tt(grid)))
    assert not report.certificate
    assert report.max_abs > 0.1  # least-squares misfit of a constant to a linear target
    assert "NOT certified" in report.summary()


def test_degenerate_node(grid):
    beta = ho_lee_beta(grid).copy()
    beta[3, :] = 0.0
    alpha = np.zeros((K, K))
    alpha[3, 10] = 0.5
    _, report = check_drift_condition(HjmCoefficients(grid, alpha, beta, np.zeros((K, K))))
    assert not report.certificate
    assert report.degenerate_nodes[3].startswith("no market price exists at node t")


def test_certificate_soundness(grid):
    # certified prices, applied, leave alpha and gamma - beta b below tolerance
    coeffs = generate_risk_neutral(hull_white_beta(grid, 0.5), grid)
    coeffs = apply_market_prices(coeffs, MarketPrices.constant(K, -0.3, 0.7))
    prices, report = check_drift_condition(coeffs)
    assert report.certificate
    fixed = apply_market_prices(coeffs, prices)
    sym = fixed.beta[..., 0] * fixed.b[..., 0]
    assert np.max(np.abs(fixed.alpha)) <= report.tolerance
    assert np.max(np.abs(fixed.gamma[..., 0, 0] - sym)) <= report.tolerance


def test_two_factor_round_trip():
    grid = TimeGrid(1.0, 20)
    n = grid.n_steps + 1
    beta = np.stack([ho_lee_beta(grid), hull_white_beta(grid, 1.0)], axis=-1)
    coeffs = generate_risk_neutral(beta, grid)
    assert coeffs.d == 2
    assert np.array_equal(coeffs.gamma, np.swapaxes(coeffs.gamma, 2, 3))
    prices, report = check_drift_condition(coeffs)
    assert report.certificate and report.max_abs <= 1e-12 and prices.max_norm <= 1e-12
    shifted = apply_market_prices(coeffs, MarketPrices(np.full((n, 2), 0.2), np.zeros((n, 2, 2, 2))))
    prices, report = check_drift_condition(shifted)
    assert report.certificate
    assert np.allclose(prices.kappa[:-1], -0.2, atol=1e-10)


def test_classical_reduction(grid):
    singleton = VolatilityBand(1.0, 1.0)
    coeffs = generate_risk_neutral(ho_lee_beta(grid), grid)
    res = classical_reduction_check(coeffs, MarketPrices.zeros(K), singleton)
    assert np.max(np.abs(res)) <= 1e-12
    with pytest.raises(ValueError):
        classical_reduction_check(coeffs, MarketPrices.zeros(K), VolatilityBand(0.1, 0.2))


def test_classical_reduction_is_sum_of_residuals(grid):
    t = grid.times
    alpha = np.triu(np.broadcast_to(t ** 2, (K, K)))
    coeffs = HjmCoefficients(grid, alpha, hull_white_beta(grid, 0.5), np.triu(np.full((K, K), 0.3)))
    prices, report = check_drift_condition(coeffs)
    res = classical_reduction_check(coeffs, prices)
    assert np.allclose(res, report.residual_alpha + report.residual_gamma[..., 0, 0], atol=1e-15, rtol=0)


def test_market_prices_validation():
    with pytest.raises(ValueError):
        MarketPrices(np.zeros((3, 1)), np.zeros((2, 1, 1, 1)))
    with pytest.raises(ValueError):
        MarketPrices.constant(3, np.nan)
