"""Robust Ho-Lee and Hull-White term structures.

With ``beta_t(T) = 1`` (Ho-Lee) or ``beta_t(T) = exp(-theta (T - t))``
(Hull-White) and zero market prices, the short rate follows

    Ho-Lee:     dr = (f0'(t) + q_t) dt + dB
    Hull-White: dr = (f0'(t) + theta f0(t) + q_t - theta r) dt + dB

with the uncertain factor ``q_t = <B>_t`` resp.
``q_t = int_0^t exp(-2 theta (t - u)) d<B>_u``.  Bond prices are affine:

    P_t(T) = exp(A(t,T) - 1/2 B(t,T)^2 q_t - B(t,T) r_t),
    A(t,T) = -int_t^T f0(s) ds + B(t,T) f0(t).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .drift import generate_risk_neutral
from .hjm import (InitialCurve, bond_ladder, evolve_surface, ho_lee_beta, hull_white_beta,
                  maturity_integral)
from .scenarios import (GPath, ScenarioKind, TimeGrid, VolatilityScenario, driver_increments,
                        path_from_increments)

__all__ = [
    "AffineTermStructure",
    "ShortRateState",
    "simulate_short_rate",
    "affine_bond_price",
    "affine_price_table",
    "CrosscheckTable",
    "affine_vs_hjm_crosscheck",
    "VasicekReport",
    "vasicek_impossibility",
]


@dataclass(frozen=True)
class AffineTermStructure:
    """``model`` is ``"ho_lee"`` or ``"hull_white"`` (then ``theta > 0`` is required)."""

    model: str
    curve: InitialCurve
    theta: float | None = None

    def __post_init__(self):
        if self.model not in ("ho_lee", "hull_white"):
            raise ValueError(f"unknown affine model {self.model!r}")
        if self.model == "hull_white" and not (self.theta is not None and self.theta > 0):
            raise ValueError(f"Hull-White needs theta > 0, got {self.theta!r}")

    @classmethod
    def ho_lee(cls, curve: InitialCurve) -> "AffineTermStructure":
        return cls("ho_lee", curve)

    @classmethod
    def hull_white(cls, curve: InitialCurve, theta: float) -> "AffineTermStructure":
        return cls("hull_white", curve, float(theta))

    @property
    def name(self) -> str:
        return "ho_lee" if self.model == "ho_lee" else f"hull_white(theta={self.theta:g})"

    def B(self, t, T):
        tau = np.asarray(T, dtype=float) - np.asarray(t, dtype=float)
        if self.model == "ho_lee":
            return tau
        return -np.expm1(-self.theta * tau) / self.theta

    def beta_field(self, grid: TimeGrid) -> np.ndarray:
        return ho_lee_beta(grid) if self.model == "ho_lee" else hull_white_beta(grid, self.theta)

    def A_table(self, grid: TimeGrid) -> np.ndarray:
        """``A(t_k, T_m)`` with the trapezoid rule for ``int f0``; zero for ``m < k``."""
        t = grid.times
        n = t.size
        f0 = self.curve(t)
        integral = maturity_integral(np.broadcast_to(f0, (n, n)), grid)
        B = self.B(t[:, None], t[None, :])
        return np.triu(-integral + B * f0[:, None])


@dataclass(frozen=True, eq=False)
class ShortRateState:
    """Short rate ``r`` and uncertain factor ``q`` on the grid (shape ``(..., N+1)``)."""

    r: np.ndarray
    q: np.ndarray
    path: GPath = field(repr=False)


def simulate_short_rate(model: AffineTermStructure, path: GPath) -> ShortRateState:
    """Euler scheme for the risk-neutral short rate (``kappa = lambda = 0``, so ``B~ = B``)."""
    grid = path.grid
    t = grid.times
    h = grid.steps
    curve = model.curve
    f0 = curve(t)
    df0 = curve.derivative(t, step=grid.dt)
    db = path.db
    dq = path.dqv
    if model.model == "ho_lee":
        q = np.array(path.qv_path, copy=True)
    else:
        decay = np.exp(-2.0 * model.theta * h)
        q = np.zeros(path.qv_path.shape)
        for k in range(grid.n_steps):
            q[..., k + 1] = decay[k] * q[..., k] + dq[..., k]
    r = np.empty(path.b_path.shape)
    r[..., 0] = f0[0]
    for k in range(grid.n_steps):
        drift = df0[k] + q[..., k]
        if model.model == "hull_white":
            drift = drift + model.theta * (f0[k] - r[..., k])
        r[..., k + 1] = r[..., k] + drift * h[k] + db[..., k]
    return ShortRateState(r, q, path)


def affine_bond_price(model: AffineTermStructure, state: ShortRateState, k: int, T: float):
    """``exp(A(t_k,T) - 1/2 B(t_k,T)^2 q_k - B(t_k,T) r_k)``; ``T`` must be a grid node."""
    grid = state.path.grid
    m = grid.index_of(T)
    if m < k:
        raise ValueError(f"maturity index {m} precedes time index {k}")
    t = grid.times
    w_f0 = model.curve(t[k: m + 1])
    h = grid.steps[k:m]
    A = -np.sum(0.5 * (w_f0[1:] + w_f0[:-1]) * h) + model.B(t[k], t[m]) * w_f0[0]
    B = model.B(t[k], t[m])
    return np.exp(A - 0.5 * B * B * state.q[..., k] - B * state.r[..., k])


def affine_price_table(model: AffineTermStructure, state: ShortRateState) -> np.ndarray:
    """Affine prices for all ``(t_k, T_m)`` of a single path; NaN for ``m < k``."""
    grid = state.path.grid
    t = grid.times
    B = model.B(t[:, None], t[None, :])
    logp = model.A_table(grid) - 0.5 * B * B * state.q[:, None] - B * state.r[:, None]
    n = t.size
    return np.where(np.triu(np.ones((n, n), dtype=bool)), np.exp(logp), np.nan)


@dataclass(frozen=True)
class CrosscheckTable:
    """Max affine-vs-HJM price discrepancy per refinement level."""

    model: str
    scenario: str
    levels: tuple[int, ...]
    errors: tuple[float, ...]

    @property
    def ratios(self) -> tuple[float, ...]:
        return tuple(a / b if b > 0 else np.inf for a, b in zip(self.errors, self.errors[1:]))

    @property
    def constant(self) -> float:
        """``c`` in ``error <= c * dt``, read off the finest level."""
        return self.errors[-1] * self.levels[-1]

    def rows(self):
        for i, (n, e) in enumerate(zip(self.levels, self.errors)):
            yield n, e, (self.ratios[i - 1] if i else np.nan)


def affine_vs_hjm_crosscheck(model: AffineTermStructure, scenario: VolatilityScenario, tau: float,
                             levels: Sequence[int] = (100, 200, 400), seed: int = 0,
                             return_tables: bool = False):
    """Drive the affine short rate and the full HJM surface with the same path.

    The coarse paths sum the increments of the finest one, so every level
    sees the same Brownian driver.  Returns a :class:`CrosscheckTable`, and
    optionally the per-level ``(affine, hjm)`` price tables.
    """
    levels = tuple(sorted(int(n) for n in levels))
    finest = TimeGrid(tau, levels[-1])
    w = driver_increments(finest, seed, 1)[0]
    errors, tables = [], {}
    for n in levels:
        grid = TimeGrid(tau, n)
        factor = levels[-1] // n
        if factor * n != levels[-1]:
            raise ValueError(f"level {n} does not divide {levels[-1]}")
        path = path_from_increments(scenario, grid, w.reshape(n, factor).sum(axis=1), seed=seed)
        coeffs = generate_risk_neutral(model.beta_field(grid), grid, label=model.name)
        hjm = bond_ladder(evolve_surface(coeffs, model.curve, path)).bond
        affine = affine_price_table(model, simulate_short_rate(model, path))
        errors.append(float(np.nanmax(np.abs(affine - hjm))))
        tables[n] = (affine, hjm)
    table = CrosscheckTable(model.name, scenario.name, levels, tuple(errors))
    return (table, tables) if return_tables else table


@dataclass(frozen=True, eq=False)
class VasicekReport:
    """Residuals ``f0'(t) + theta f0(t) + q_t - mu`` per scenario and their spread."""

    times: np.ndarray
    scenarios: tuple[str, ...]
    residuals: np.ndarray  # (S, K)
    spread: np.ndarray
    lower_bound: np.ndarray
    allowance: float

    @property
    def classical_fit_possible(self) -> bool:
        return bool(np.max(self.spread) <= 1e-12)

    @property
    def consistent(self) -> bool:
        """Spread stays above the analytic bound up to the Euler allowance."""
        return bool(np.all(self.spread >= self.lower_bound - self.allowance))

    def spread_at(self, t: float) -> float:
        k = int(np.argmin(np.abs(self.times - t)))
        return float(self.spread[k])


def vasicek_impossibility(theta: float, mu: float, curve: InitialCurve,
                          family: Sequence[VolatilityScenario], grid: TimeGrid,
                          seed: int = 0) -> VasicekReport:
    """Quantify why no initial curve fits a Vasicek short rate under uncertainty.

    A Vasicek fit needs ``f0'(t) + theta f0(t) + q_t = mu`` for every
    scenario; the left side differs across scenarios only through ``q``.  The
    report's lower bound is the spread between the two constant extremes in
    continuous time, ``(sigma_high^2 - sigma_low^2)(1 - exp(-2 theta t)) / (2 theta)``.
    """
    kinds = {s.kind for s in family}
    if not {ScenarioKind.CONSTANT_LOW, ScenarioKind.CONSTANT_HIGH} <= kinds:
        raise ValueError("family must contain the constant-low and constant-high scenarios")
    model = AffineTermStructure.hull_white(curve, theta)
    t = grid.times
    base = curve.derivative(t, step=grid.dt) + theta * curve(t) - mu
    w = driver_increments(grid, seed, 1)[0]
    residuals = []
    for scen in family:
        state = simulate_short_rate(model, path_from_increments(scen, grid, w, seed=seed))
        residuals.append(base + state.q)
    residuals = np.array(residuals)
    spread = residuals.max(axis=0) - residuals.min(axis=0)
    band = family[0].band
    dsig2 = band.sigma_high ** 2 - band.sigma_low ** 2
    bound = dsig2 * -np.expm1(-2.0 * theta * t) / (2.0 * theta)
    return VasicekReport(t, tuple(s.name for s in family), residuals, spread, bound, dsig2 * grid.dt)
