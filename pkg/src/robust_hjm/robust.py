"""Scenario-family estimates of the sublinear expectation and the checks built on it.

``E^[xi] = sup_P E_P[xi]`` is approximated by the maximum over a finite
scenario family of Monte Carlo means.  That maximum is a lower bound for the
true sublinear expectation, and every report says so.

All scenarios are run on the same driver increments (same seed, same path
indices).  Per-scenario means therefore do not depend on which other
scenarios are in the family.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .drift import DEFAULT_TOLERANCE, check_drift_condition
from .hjm import HjmCoefficients, InitialCurve, discounted_bond_samples, trapezoid_weights
from .scenarios import (GPath, TimeGrid, VolatilityScenario, coarsen_increments, driver_increments,
                        path_from_increments)

__all__ = [
    "NonFinitePayoffError",
    "UncertifiedCoefficientsError",
    "ScenarioEstimate",
    "RobustEstimate",
    "robust_expect",
    "MartingaleReport",
    "martingale_check",
    "NovikovParams",
    "NovikovReport",
    "novikov_bound_check",
    "LOWER_BOUND_NOTE",
    "terminal_b",
    "terminal_b_squared",
    "terminal_qv",
]

LOWER_BOUND_NOTE = "sup over a finite scenario family: a lower bound for the sublinear expectation"

DEFAULT_CHUNK = 20_000

_ROUNDING_ULPS = 64


class NonFinitePayoffError(ArithmeticError):
    pass


class UncertifiedCoefficientsError(ValueError):
    """Coefficients are not risk-neutral (drift condition with zero prices fails)."""


class _Moments:
    """Running mean and sum of squared deviations (pairwise merge of chunks)."""

    def __init__(self, shape=()):
        self.n = 0
        self.mean = np.zeros(shape)
        self.m2 = np.zeros(shape)

    def add(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=float)
        nb = x.shape[0]
        if nb == 0:
            return
        # identical samples give an exact mean (and zero spread) rather than a rounded one
        mb = np.where(np.all(x == x[0], axis=0), x[0], x.mean(axis=0))
        m2b = ((x - mb) ** 2).sum(axis=0)
        n = self.n + nb
        delta = mb - self.mean
        self.mean = self.mean + delta * nb / n
        self.m2 = self.m2 + m2b + delta ** 2 * self.n * nb / n
        self.n = n

    @property
    def stderr(self) -> np.ndarray:
        if self.n < 2:
            return np.full(np.shape(self.mean), np.nan)
        return np.sqrt(self.m2 / (self.n - 1) / self.n)


def _chunks(n_paths: int, chunk_size: int):
    start = 0
    while start < n_paths:
        size = min(chunk_size, n_paths - start)
        yield start, size
        start += size


@dataclass(frozen=True)
class ScenarioEstimate:
    scenario: str
    mean: float
    stderr: float
    n_paths: int


@dataclass(frozen=True)
class RobustEstimate:
    estimates: tuple[ScenarioEstimate, ...]
    family: tuple[str, ...]
    note: str = LOWER_BOUND_NOTE

    @property
    def sup(self) -> float:
        return max(e.mean for e in self.estimates)

    @property
    def inf(self) -> float:
        return min(e.mean for e in self.estimates)

    @property
    def argsup(self) -> str:
        return max(self.estimates, key=lambda e: e.mean).scenario

    @property
    def arginf(self) -> str:
        return min(self.estimates, key=lambda e: e.mean).scenario

    def __getitem__(self, name: str) -> ScenarioEstimate:
        for e in self.estimates:
            if e.scenario == name:
                return e
        raise KeyError(name)

    def restrict(self, names: Sequence[str]) -> "RobustEstimate":
        """Sub-family estimate (reuses the per-scenario numbers)."""
        keep = tuple(e for e in self.estimates if e.scenario in set(names))
        return RobustEstimate(keep, tuple(e.scenario for e in keep), self.note)


def robust_expect(payoff: Callable[[GPath], np.ndarray], family: Sequence[VolatilityScenario],
                  grid: TimeGrid, n_paths: int, seed: int = 0,
                  chunk_size: int = DEFAULT_CHUNK) -> RobustEstimate:
    """Per-scenario Monte Carlo means of ``payoff`` and their sup/inf over ``family``.

    ``payoff`` maps a batch :class:`GPath` to one value per path.
    """
    if not family:
        raise ValueError("family must be nonempty")
    if n_paths < 2:
        raise ValueError("need at least 2 paths per scenario")
    acc = [_Moments() for _ in family]
    for start, size in _chunks(n_paths, chunk_size):
        w = driver_increments(grid, seed, size, start=start)
        for mom, scen in zip(acc, family):
            vals = np.asarray(payoff(path_from_increments(scen, grid, w, seed=seed)), dtype=float)
            if vals.shape != (size,):
                raise ValueError(f"payoff returned shape {vals.shape}, expected ({size},)")
            if not np.all(np.isfinite(vals)):
                raise NonFinitePayoffError(f"non-finite payoff under scenario {scen.name}")
            mom.add(vals)
    est = tuple(ScenarioEstimate(s.name, float(m.mean), float(m.stderr), m.n) for s, m in zip(family, acc))
    return RobustEstimate(est, tuple(s.name for s in family))


# payoffs used throughout the checks and the CLI
def terminal_b(paths: GPath) -> np.ndarray:
    return paths.b_path[..., -1]


def terminal_b_squared(paths: GPath) -> np.ndarray:
    return paths.b_path[..., -1] ** 2


def terminal_qv(paths: GPath) -> np.ndarray:
    return paths.qv_path[..., -1]


@dataclass(frozen=True)
class MartingaleRow:
    scenario: str
    t: float
    mean: float
    initial: float
    stderr: float
    allowance: float
    passed: bool

    @property
    def deviation(self) -> float:
        return abs(self.mean - self.initial)

    @property
    def se_ratio(self) -> float:
        return self.deviation / self.stderr if self.stderr > 0 else (0.0 if self.deviation == 0 else np.inf)


@dataclass(frozen=True)
class MartingaleReport:
    """``|E_P[P~_t(T)] - P~_0(T)|`` against ``n_se`` standard errors plus ``c dt``.

    Each row's ``allowance`` is ``c dt`` plus a floor of 64 ulps of ``P~_0(T)``.
    """

    maturity: float
    rows: tuple[MartingaleRow, ...]
    c: float
    dt: float
    n_se: float
    note: str = LOWER_BOUND_NOTE

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def failures(self) -> list[MartingaleRow]:
        return [r for r in self.rows if not r.passed]


def martingale_check(coeffs: HjmCoefficients, curve: InitialCurve, T: float,
                     family: Sequence[VolatilityScenario], n_paths: int,
                     checkpoints: Sequence[float], seed: int = 0, *,
                     n_se: float = 3.0, allowance_c: float | None = None,
                     require_risk_neutral: bool = True, drift_tolerance: float = DEFAULT_TOLERANCE,
                     chunk_size: int = DEFAULT_CHUNK) -> MartingaleReport:
    """Check ``E_P[P~_t(T)] = P~_0(T)`` per scenario at each checkpoint.

    The discretization allowance is ``c * dt``.  Unless ``allowance_c`` is
    given, ``c`` comes from a refinement study on the same paths: the grid
    with twice the step estimates the first-order bias as
    ``(mean_2dt - P~_0^{2dt}) - (mean_dt - P~_0^{dt})``, and ``c`` is the
    largest such bias over scenarios and checkpoints, divided by ``dt``.

    With ``require_risk_neutral`` the coefficients must pass the drift
    condition with zero market prices; otherwise the check refuses to run.
    """
    if require_risk_neutral:
        prices, report = check_drift_condition(coeffs, drift_tolerance)
        if not report.certificate or prices.max_norm > report.tolerance:
            raise UncertifiedCoefficientsError(
                "coefficients are not risk-neutral (drift condition with kappa = lambda = 0 fails: "
                f"max residual {report.max_abs:.3e}, max |price| {prices.max_norm:.3e})"
            )
    grid = coeffs.grid
    m = grid.index_of(T)
    nodes = [grid.index_of(t) for t in checkpoints]
    f0 = curve(grid.times)
    p0 = float(np.exp(-np.dot(f0[: m + 1], trapezoid_weights(grid, 0, m))))
    estimate_c = allowance_c is None
    if estimate_c:
        if grid.n_steps % 2 or m % 2 or any(k % 2 for k in nodes):
            raise ValueError("estimating c needs an even step count and checkpoints on the coarse grid")
        coarse = coeffs.subsample(2)
        cgrid = coarse.grid
        cnodes = [k // 2 for k in nodes]
        p0_coarse = float(np.exp(-np.dot(curve(cgrid.times)[: m // 2 + 1], trapezoid_weights(cgrid, 0, m // 2))))
    fine_acc = [_Moments(len(nodes)) for _ in family]
    coarse_acc = [_Moments(len(nodes)) for _ in family]
    for start, size in _chunks(n_paths, chunk_size):
        w = driver_increments(grid, seed, size, start=start)
        for i, scen in enumerate(family):
            paths = path_from_increments(scen, grid, w, seed=seed)
            fine_acc[i].add(discounted_bond_samples(coeffs, curve, paths, T, nodes))
            if estimate_c:
                cpaths = path_from_increments(scen, cgrid, coarsen_increments(w, 2), seed=seed)
                coarse_acc[i].add(discounted_bond_samples(coarse, curve, cpaths, T, cnodes))
    dt = grid.dt
    if estimate_c:
        bias = [np.abs((c.mean - p0_coarse) - (f.mean - p0)) for f, c in zip(fine_acc, coarse_acc)]
        c_value = float(np.max(bias)) / dt
    else:
        c_value = float(allowance_c)
    # floating-point floor: exactly driftless cases still round differently along two routes
    allowance = c_value * dt + _ROUNDING_ULPS * np.finfo(float).eps * p0
    rows = []
    for scen, acc in zip(family, fine_acc):
        se = acc.stderr
        for j, k in enumerate(nodes):
            dev = abs(acc.mean[j] - p0)
            ok = bool(dev <= n_se * se[j] + allowance)
            rows.append(MartingaleRow(scen.name, float(grid.times[k]), float(acc.mean[j]), p0,
                                      float(se[j]), allowance, ok))
    return MartingaleReport(float(T), tuple(rows), c_value, dt, n_se)


@dataclass(frozen=True)
class NovikovParams:
    """Integrability exponents: ``1 < q < p``, ``p* = 2pq/(p-q)``, ``p' > p*``, ``q' > 2``."""

    p: float = 2.0
    q: float = 1.5
    p_prime: float = 13.0
    q_prime: float = 3.0

    def __post_init__(self):
        if not 1 < self.q < self.p:
            raise ValueError(f"need 1 < q < p, got p={self.p}, q={self.q}")
        if not self.p_prime > self.p_star:
            raise ValueError(f"need p' > p* = {self.p_star:g}, got p'={self.p_prime}")
        if not self.q_prime > 2:
            raise ValueError(f"need q' > 2, got q'={self.q_prime}")

    @property
    def p_star(self) -> float:
        return 2 * self.p * self.q / (self.p - self.q)

    @property
    def drift_exponent(self) -> float:
        """``p'q' / (q' - 2)``."""
        return self.p_prime * self.q_prime / (self.q_prime - 2)

    @property
    def diffusion_exponent(self) -> float:
        """``(p'q')^2 / 2``."""
        return 0.5 * (self.p_prime * self.q_prime) ** 2


@dataclass(frozen=True)
class NovikovEntry:
    name: str
    estimate: RobustEstimate | None
    bound: float

    @property
    def passed(self) -> bool:
        return self.estimate is not None and np.isfinite(self.bound) and self.estimate.sup <= self.bound


@dataclass(frozen=True)
class NovikovReport:
    params: NovikovParams
    maturity: float
    drift_term: NovikovEntry
    diffusion_term: NovikovEntry
    verifiable: bool = True
    message: str = ""

    @property
    def passed(self) -> bool:
        return self.verifiable and self.drift_term.passed and self.diffusion_term.passed


# exp() overflows beyond this exponent
_MAX_EXPONENT = 700.0


def novikov_bound_check(coeffs: HjmCoefficients, T: float, family: Sequence[VolatilityScenario],
                        n_paths: int, seed: int = 0, params: NovikovParams | None = None,
                        chunk_size: int = DEFAULT_CHUNK) -> NovikovReport:
    """Estimate both integrability expectations and compare with analytic bounds.

    ``drift``:     ``E^[int_0^T exp(p'q'/(q'-2) (int_0^t a_u du + int_0^t c_u d<B>_u)) dt]``
    ``diffusion``: ``E^[int_0^T exp((p'q')^2/2 int_0^t b_u^2 d<B>_u) dt]``

    with ``a, b, c`` evaluated at maturity ``T``.  Since ``d<B> <= sigma_high^2 dt``,
    the bounds are ``T exp(p'q'/(q'-2) T (max a+ + max c+ sigma_high^2))`` and
    ``T exp((p'q')^2/2 max b^2 sigma_high^2 T)``.
    """
    params = params or NovikovParams()
    grid = coeffs.grid
    m = grid.index_of(T)
    if coeffs.d != 1:
        raise ValueError("the path-based check supports d = 1 only")
    a = coeffs.a[: m + 1, m]
    b = coeffs.b[: m + 1, m, 0]
    c = coeffs.c[: m + 1, m, 0, 0]
    band = family[0].band
    s2 = band.sigma_high ** 2
    k1, k2 = params.drift_exponent, params.diffusion_exponent
    exp1 = k1 * T * (max(np.max(a), 0.0) + max(np.max(c), 0.0) * s2)
    exp2 = k2 * float(np.max(b ** 2)) * s2 * T
    if not (np.isfinite(exp1) and np.isfinite(exp2)) or max(exp1, exp2) > _MAX_EXPONENT:
        msg = "condition not verifiable by this method (coefficient field unbounded on the grid)"
        return NovikovReport(params, float(T), NovikovEntry("drift", None, np.inf),
                             NovikovEntry("diffusion", None, np.inf), False, msg)
    h = grid.steps[:m]
    w_out = trapezoid_weights(grid, 0, m)

    def _drift(paths):
        x = np.cumsum(a[:m] * h + c[:m] * paths.dqv[..., :m], axis=-1)
        x = np.concatenate([np.zeros(x.shape[:-1] + (1,)), x], axis=-1)
        return np.exp(k1 * x) @ w_out

    def _diffusion(paths):
        y = np.cumsum(b[:m] ** 2 * paths.dqv[..., :m], axis=-1)
        y = np.concatenate([np.zeros(y.shape[:-1] + (1,)), y], axis=-1)
        return np.exp(k2 * y) @ w_out

    e1 = robust_expect(_drift, family, grid, n_paths, seed, chunk_size)
    e2 = robust_expect(_diffusion, family, grid, n_paths, seed, chunk_size)
    return NovikovReport(params, float(T), NovikovEntry("drift", e1, float(T * np.exp(exp1))),
                         NovikovEntry("diffusion", e2, float(T * np.exp(exp2))))
