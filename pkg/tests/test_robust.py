import numpy as np
import pytest
from scipy.integrate import quad

from robust_hjm.drift import MarketPrices, apply_market_prices, generate_risk_neutral
from robust_hjm.hjm import HjmCoefficients, InitialCurve, ho_lee_beta, hull_white_beta
from robust_hjm.robust import (LOWER_BOUND_NOTE, NonFinitePayoffError, NovikovParams, UncertifiedCoefficientsError,
                               martingale_check, novikov_bound_check, robust_expect, terminal_b,
                               terminal_b_squared, terminal_qv)
from robust_hjm.scenarios import TimeGrid, VolatilityBand, VolatilityScenario, scenario_family

CHECKPOINTS = [0.25, 0.5, 0.75, 1.0]


@pytest.fixture
def grid200():
    return TimeGrid(1.0, 200)


def test_qv_extremes_are_deterministic(band, grid):
    fam = [VolatilityScenario.constant_low(band), VolatilityScenario.constant_high(band)]
    est = robust_expect(terminal_qv, fam, grid, 50, seed=0)
    assert est.sup == pytest.approx(0.04, abs=1e-16) and est.inf == pytest.approx(0.01, abs=1e-16)
    assert all(e.stderr == 0.0 for e in est.estimates)
    assert est.note == LOWER_BOUND_NOTE


def test_centered_driver(band, grid):
    est = robust_expect(terminal_b, scenario_family(band, grid, 7), grid, 20_000, seed=1)
    for e in est.estimates:
        assert abs(e.mean) <= 3 * e.stderr


def test_b_squared_bracket(band, grid):
    est = robust_expect(terminal_b_squared, scenario_family(band, grid, 5), grid, 20_000, seed=2)
    hi, lo = est["constant_high"], est["constant_low"]
    assert est.argsup == "constant_high" and est.arginf == "constant_low"
    assert abs(hi.mean - 0.04) <= 3 * hi.stderr and abs(lo.mean - 0.01) <= 3 * lo.stderr


def test_family_monotonicity(band, grid):
    big = robust_expect(terminal_b_squared, scenario_family(band, grid, 9), grid, 500, seed=3)
    for size in range(1, 9):
        small = big.restrict(big.family[:size])
        assert small.sup <= big.sup and small.inf >= big.inf
    # running the smaller family on its own gives identical per-scenario numbers
    alone = robust_expect(terminal_b_squared, scenario_family(band, grid, 3), grid, 500, seed=3)
    for e in alone.estimates:
        assert e == big[e.scenario]


def test_chunking_does_not_change_results(band, grid):
    fam = scenario_family(band, grid, 3)
    a = robust_expect(terminal_b_squared, fam, grid, 1000, seed=4, chunk_size=1000)
    b = robust_expect(terminal_b_squared, fam, grid, 1000, seed=4, chunk_size=137)
    for x, y in zip(a.estimates, b.estimates):
        assert x.mean == pytest.approx(y.mean, rel=1e-13) and x.stderr == pytest.approx(y.stderr, rel=1e-10)


def test_sub_additivity(band, grid):
    fam = scenario_family(band, grid, 7)
    both = robust_expect(lambda p: terminal_b_squared(p) + terminal_qv(p), fam, grid, 5000, seed=5)
    x = robust_expect(terminal_b_squared, fam, grid, 5000, seed=5)
    y = robust_expect(terminal_qv, fam, grid, 5000, seed=5)
    se = max(e.stderr for e in both.estimates) + max(e.stderr for e in x.estimates)
    assert both.sup <= x.sup + y.sup + 3 * se


def test_errors(band, grid):
    fam = scenario_family(band, grid, 2)
    with pytest.raises(NonFinitePayoffError, match="constant_low"), np.errstate(divide="ignore"):
        robust_expect(lambda p: np.log(p.b_path[:, -1] * 0), fam, grid, 10)
    with pytest.raises(ValueError):
        robust_expect(terminal_b, [], grid, 10)
    with pytest.raises(ValueError):
        robust_expect(terminal_b, fam, grid, 1)


def test_martingale_zero_coefficients(band, grid200):
    rep = martingale_check(HjmCoefficients.zeros(grid200), InitialCurve.flat(0.02), 1.0,
                           scenario_family(band, grid200, 5), 100, CHECKPOINTS)
    assert rep.passed
    assert all(r.deviation <= 1e-15 and r.stderr <= 1e-15 for r in rep.rows)


@pytest.mark.parametrize("beta", ["ho_lee", "hull_white"])
def test_martingale_risk_neutral(beta, band, grid200):
    b = ho_lee_beta(grid200) if beta == "ho_lee" else hull_white_beta(grid200, 0.5)
    coeffs = generate_risk_neutral(b, grid200)
    rep = martingale_check(coeffs, InitialCurve.linear(0.02, 0.01), 1.0, scenario_family(band, grid200, 6),
                           20_000, CHECKPOINTS, seed=11)
    assert rep.passed, rep.failures()
    assert len(rep.rows) == 6 * 4


def test_martingale_refuses_uncertified(band, grid200):
    coeffs = apply_market_prices(generate_risk_neutral(ho_lee_beta(grid200), grid200),
                                 MarketPrices.constant(201, 0.05))
    with pytest.raises(UncertifiedCoefficientsError):
        martingale_check(coeffs, InitialCurve.flat(0.02), 1.0, scenario_family(band, grid200, 2), 100, CHECKPOINTS)


def test_martingale_detects_perturbed_drift(band, grid200):
    coeffs = apply_market_prices(generate_risk_neutral(ho_lee_beta(grid200), grid200),
                                 MarketPrices.constant(201, 0.05))
    rep = martingale_check(coeffs, InitialCurve.flat(0.02), 1.0, scenario_family(band, grid200, 5), 20_000,
                           CHECKPOINTS, seed=0, require_risk_neutral=False)
    assert not rep.passed
    # oracle: E[P~_1(1)] - P~_0(1) is about -0.05 * int_0^1 (1 - u) du * P~_0 = -0.025 P~_0
    at_one = [r for r in rep.rows if r.t == 1.0]
    for r in at_one:
        assert not r.passed
        assert (r.mean - r.initial) / r.initial == pytest.approx(-0.025, abs=0.003)


def test_martingale_explicit_allowance(band, grid):
    coeffs = generate_risk_neutral(ho_lee_beta(grid), grid)
    rep = martingale_check(coeffs, InitialCurve.flat(0.02), 1.0, scenario_family(band, grid, 2), 2000,
                           [0.25, 0.5], allowance_c=0.0)
    assert rep.c == 0.0 and all(r.allowance < 1e-13 for r in rep.rows)


def test_novikov_params():
    p = NovikovParams()
    assert p.p_star == 12 and p.drift_exponent == 39 and p.diffusion_exponent == 760.5
    with pytest.raises(ValueError):
        NovikovParams(p_prime=12)
    with pytest.raises(ValueError):
        NovikovParams(q_prime=2)
    with pytest.raises(ValueError):
        NovikovParams(p=1.5, q=2.0)


def test_novikov_zero_b(band, grid):
    rep = novikov_bound_check(HjmCoefficients.zeros(grid), 1.0, scenario_family(band, grid, 5), 100)
    assert rep.passed
    for entry in (rep.drift_term, rep.diffusion_term):
        assert all(e.mean == 1.0 and e.stderr == 0 for e in entry.estimate.estimates)
        assert entry.bound == 1.0


SIX = NovikovParams(p=20.0, q=1.05, p_prime=2.4, q_prime=2.5)  # p'q' = 6


def test_novikov_six_example(band, grid):
    assert SIX.p_prime * SIX.q_prime == pytest.approx(6.0)
    coeffs = generate_risk_neutral(ho_lee_beta(grid), grid)
    rep = novikov_bound_check(coeffs, 1.0, scenario_family(band, grid, 7), 5000, params=SIX)
    assert rep.diffusion_term.bound == pytest.approx(np.exp(0.72), rel=1e-12)
    assert rep.diffusion_term.bound == pytest.approx(2.054, abs=1e-3)
    assert rep.passed


def test_novikov_singleton_closed_form():
    # constant sigma: both expectations are deterministic integrals of known exponents
    sigma, T = 0.15, 1.0
    k1, k2 = SIX.drift_exponent, SIX.diffusion_exponent
    e1 = quad(lambda t: np.exp(k1 * sigma ** 2 * (T ** 3 - (T - t) ** 3) / 6), 0, T)[0]
    e2 = quad(lambda t: np.exp(k2 * sigma ** 2 * (T ** 3 - (T - t) ** 3) / 3), 0, T)[0]
    errs = []
    for n in (100, 200):
        grid = TimeGrid(T, n)
        coeffs = generate_risk_neutral(ho_lee_beta(grid), grid)
        fam = [VolatilityScenario.constant_low(VolatilityBand(sigma, sigma))]
        rep = novikov_bound_check(coeffs, T, fam, 10, params=SIX)
        d, g = rep.drift_term.estimate.estimates[0], rep.diffusion_term.estimate.estimates[0]
        assert d.stderr <= 1e-15 and g.stderr <= 1e-15  # deterministic up to BLAS rounding
        errs.append((abs(d.mean - e1), abs(g.mean - e2)))
    assert errs[1][0] <= 1e-3 * e1 and errs[1][1] <= 1e-3 * e2
    assert 1.7 <= errs[0][1] / errs[1][1] <= 2.3  # left-point Euler in time: first order


def test_novikov_unverifiable(band, grid):
    big = np.triu(np.full((101, 101), 1e6))
    coeffs = HjmCoefficients(grid, np.zeros((101, 101)), big, np.zeros((101, 101)))
    rep = novikov_bound_check(coeffs, 1.0, scenario_family(band, grid, 2), 10)
    assert not rep.verifiable and not rep.passed
    assert "condition not verifiable by this method" in rep.message
