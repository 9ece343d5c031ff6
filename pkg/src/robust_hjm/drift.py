"""Drift condition under volatility uncertainty.

For every maturity ``T`` the forward-rate coefficients must admit bounded
market prices ``kappa`` (risk) and ``lambda^{ij}`` (uncertainty) with

    alpha(T) + beta(T) kappa' = 0
    gamma^{ij}(T) - 1/2 (beta^i(T) b^j(T) + b^i(T) beta^j(T)) + beta(T) (lambda^{ij})' = 0.

On the grid the condition is imposed at every maturity node ``T_m >= t_k``;
at each time node the prices are the minimal-norm least-squares solutions of
the resulting maturity-indexed linear systems.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hjm import HjmCoefficients
from .scenarios import TimeGrid

__all__ = [
    "MarketPrices",
    "DriftResidualReport",
    "generate_risk_neutral",
    "apply_market_prices",
    "check_drift_condition",
    "classical_reduction_check",
    "DEFAULT_TOLERANCE",
]

DEFAULT_TOLERANCE = 1e-8


@dataclass(frozen=True, eq=False)
class MarketPrices:
    """``kappa[k, l]`` and ``lam[k, i, j, l]`` per time node ``k`` (``l`` = component)."""

    kappa: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        kappa = np.asarray(self.kappa, dtype=float)
        lam = np.asarray(self.lam, dtype=float)
        if kappa.ndim == 1:
            kappa = kappa[:, None]
        if lam.ndim == 1:
            lam = lam[:, None, None, None]
        n, d = kappa.shape
        if lam.shape != (n, d, d, d):
            raise ValueError(f"lambda has shape {lam.shape}, expected {(n, d, d, d)}")
        if not (np.all(np.isfinite(kappa)) and np.all(np.isfinite(lam))):
            raise ValueError("market prices must be finite")
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "lam", lam)

    @classmethod
    def zeros(cls, n_nodes: int, d: int = 1) -> "MarketPrices":
        return cls(np.zeros((n_nodes, d)), np.zeros((n_nodes, d, d, d)))

    @classmethod
    def constant(cls, n_nodes: int, kappa: float, lam: float = 0.0) -> "MarketPrices":
        """Scalar (``d = 1``) prices constant in time."""
        return cls(np.full((n_nodes, 1), float(kappa)), np.full((n_nodes, 1, 1, 1), float(lam)))

    @property
    def d(self) -> int:
        return self.kappa.shape[1]

    @property
    def max_norm(self) -> float:
        """Bound ``max_k max(|kappa_k|, |lambda_k|)`` (sup norms)."""
        return float(max(np.max(np.abs(self.kappa), initial=0.0), np.max(np.abs(self.lam), initial=0.0)))

    def __neg__(self) -> "MarketPrices":
        return MarketPrices(-self.kappa, -self.lam)


@dataclass(frozen=True, eq=False)
class DriftResidualReport:
    grid: TimeGrid
    residual_alpha: np.ndarray  # (K, K)
    residual_gamma: np.ndarray  # (K, K, d, d)
    tolerance: float
    degenerate_nodes: dict = field(default_factory=dict)

    @property
    def max_abs(self) -> float:
        return float(max(np.max(np.abs(self.residual_alpha)), np.max(np.abs(self.residual_gamma))))

    @property
    def rms(self) -> float:
        n = self.grid.n_steps + 1
        upper = np.triu(np.ones((n, n), dtype=bool))
        vals = np.concatenate([self.residual_alpha[upper].ravel(), self.residual_gamma[upper].ravel()])
        return float(np.sqrt(np.mean(vals ** 2)))

    @property
    def certificate(self) -> bool:
        return not self.degenerate_nodes and self.max_abs <= self.tolerance

    def summary(self) -> str:
        status = "certified" if self.certificate else "NOT certified"
        line = f"drift condition {status}: max|residual|={self.max_abs:.3e} rms={self.rms:.3e} tol={self.tolerance:.1e}"
        for k, msg in sorted(self.degenerate_nodes.items()):
            line += f"\n  node {k} (t={self.grid.times[k]:g}): {msg}"
        return line


def _symmetric_product(beta: np.ndarray, b: np.ndarray) -> np.ndarray:
    # 1/2 (beta^i b^j + b^i beta^j), shape (K, K, d, d)
    return 0.5 * (beta[..., :, None] * b[..., None, :] + b[..., :, None] * beta[..., None, :])


def generate_risk_neutral(beta, grid: TimeGrid, label: str = "risk-neutral") -> HjmCoefficients:
    """Arbitrage-free coefficients with zero market prices:
    ``alpha = 0`` and ``gamma^{ij} = 1/2 (beta^i b^j + b^i beta^j)``."""
    n = grid.n_steps + 1
    beta = np.asarray(beta, dtype=float)
    if beta.shape == (n, n):
        beta = beta[..., None]
    if not np.all(np.isfinite(np.triu(beta[..., 0]))):
        raise ValueError("beta must be finite on the grid")
    proto = HjmCoefficients(grid, np.zeros((n, n)), beta, np.zeros((n, n) + (beta.shape[2],) * 2))
    gamma = _symmetric_product(proto.beta, proto.b)
    return proto.with_fields(gamma=gamma, label=label)


def apply_market_prices(coeffs: HjmCoefficients, prices: MarketPrices) -> HjmCoefficients:
    """Rewrite the dynamics in terms of the shifted driver
    ``B~ = B - int kappa du - sum int lambda^{ij} d<B^i,B^j>``:
    ``alpha += beta kappa'`` and ``gamma^{ij} += beta (lambda^{ij})'``."""
    n = coeffs.grid.n_steps + 1
    if prices.kappa.shape[0] != n or prices.d != coeffs.d:
        raise ValueError(f"prices for {prices.kappa.shape[0]} nodes / d={prices.d} do not match "
                         f"coefficients with {n} nodes / d={coeffs.d}")
    alpha = coeffs.alpha + np.einsum("kml,kl->km", coeffs.beta, prices.kappa)
    gamma = coeffs.gamma + np.einsum("kml,kijl->kmij", coeffs.beta, prices.lam)
    return coeffs.with_fields(alpha=alpha, gamma=gamma)


def _solve_node(beta_k: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Minimal-norm least-squares ``x`` with ``beta_k x = -target``.

    ``beta_k`` is ``(M, d)``, ``target`` is ``(M, r)``; returns ``(d, r)``.
    """
    sol, *_ = np.linalg.lstsq(beta_k, -target, rcond=None)
    return sol


def check_drift_condition(coeffs: HjmCoefficients, tolerance: float = DEFAULT_TOLERANCE):
    """Fit market prices node by node and report the drift-condition residuals.

    The effective tolerance is ``tolerance * max(1, coefficient scale)`` where the
    scale is the largest absolute entry of ``alpha``, ``gamma`` and the
    symmetric ``beta b`` product.  Returns ``(MarketPrices, DriftResidualReport)``.
    """
    grid = coeffs.grid
    n, d = grid.n_steps + 1, coeffs.d
    sym = _symmetric_product(coeffs.beta, coeffs.b)
    target_gamma = coeffs.gamma - sym
    kappa = np.zeros((n, d))
    lam = np.zeros((n, d, d, d))
    degenerate = {}
    for k in range(n):
        beta_k = coeffs.beta[k, k:]  # (M, d)
        alpha_k = coeffs.alpha[k, k:]
        tg_k = target_gamma[k, k:].reshape(n - k, d * d)
        if not np.any(beta_k):
            if np.any(alpha_k) or np.any(tg_k):
                degenerate[k] = "no market price exists at node t (beta vanishes, drift does not)"
            continue
        kappa[k] = _solve_node(beta_k, alpha_k[:, None])[:, 0]
        lam[k] = _solve_node(beta_k, tg_k).T.reshape(d, d, d)
    prices = MarketPrices(kappa, lam)
    res_alpha = coeffs.alpha + np.einsum("kml,kl->km", coeffs.beta, kappa)
    res_gamma = target_gamma + np.einsum("kml,kijl->kmij", coeffs.beta, lam)
    upper = np.triu(np.ones((n, n), dtype=bool))
    res_alpha = np.where(upper, res_alpha, 0.0)
    res_gamma = np.where(upper[..., None, None], res_gamma, 0.0)
    scale = max(1.0, float(np.max(np.abs(coeffs.alpha))), float(np.max(np.abs(coeffs.gamma))),
                float(np.max(np.abs(sym))))
    report = DriftResidualReport(grid, res_alpha, res_gamma, tolerance * scale, degenerate)
    return prices, report


def classical_reduction_check(coeffs: HjmCoefficients, prices: MarketPrices, band=None) -> np.ndarray:
    """Residual of the classical HJM drift condition obtained without uncertainty:

    ``(alpha + sum_i gamma^{ii}) - beta b' + beta (kappa + sum_i lambda^{ii})'``

    on the grid (``(K, K)``, zero below the diagonal).  It equals
    ``residual_alpha + sum_i residual_gamma^{ii}``.
    """
    if band is not None and not band.is_singleton:
        raise ValueError("the classical reduction needs a singleton volatility band")
    n = coeffs.grid.n_steps + 1
    combined = coeffs.alpha + np.einsum("kmii->km", coeffs.gamma)
    beta_b = np.einsum("kml,kml->km", coeffs.beta, coeffs.b)
    price = prices.kappa + np.einsum("kiil->kl", prices.lam)
    res = combined - beta_b + np.einsum("kml,kl->km", coeffs.beta, price)
    return np.where(np.triu(np.ones((n, n), dtype=bool)), res, 0.0)
