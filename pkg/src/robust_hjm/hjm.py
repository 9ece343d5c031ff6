"""Forward-rate surfaces driven by a G-Brownian path.

Everything lives on the uniform time grid, and the maturity grid is the same
grid (``T_m = t_m``).  Fields indexed by ``(t_k, T_m)`` are ``(N+1, N+1)``
arrays whose entries are meaningful for ``m >= k``.  Coefficient fields keep
the strict lower triangle at zero.  Surfaces and prices put NaN there.

Discretization:

* stochastic and ``d<B>`` integrals in time: left-point Euler sums;
* integrals over maturity: trapezoid rule on the maturity grid;
* money-market account: left-point sum of short rates.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .scenarios import GPath, TimeGrid

__all__ = [
    "InitialCurve",
    "HjmCoefficients",
    "ForwardSurface",
    "BondLadder",
    "maturity_integral",
    "trapezoid_weights",
    "ho_lee_beta",
    "hull_white_beta",
    "evolve_surface",
    "bond_ladder",
    "log_discounted_bond_two_ways",
    "discounted_bond_samples",
    "FubiniResult",
    "fubini_check",
    "product_rule_check",
    "product_rule_tolerance",
    "read_coefficients_csv",
    "write_coefficients_csv",
]


@dataclass(frozen=True)
class InitialCurve:
    """Initial forward curve ``f_0`` on ``[0, tau]``.

    ``kind`` is ``"flat"`` (``level``), ``"linear"`` (``intercept + slope*T``) or
    ``"tabulated"`` (linear interpolation of ``maturities -> rates``, flat
    beyond the table).  Tabulated derivatives are central differences with
    step ``fd_step`` unless a step is passed.
    """

    kind: str
    level: float = 0.0
    intercept: float = 0.0
    slope: float = 0.0
    maturities: tuple[float, ...] = ()
    rates: tuple[float, ...] = ()
    fd_step: float = 1e-3

    def __post_init__(self):
        if self.kind not in ("flat", "linear", "tabulated"):
            raise ValueError(f"unknown curve kind {self.kind!r}")
        if self.kind == "tabulated":
            mats = np.asarray(self.maturities, dtype=float)
            rates = np.asarray(self.rates, dtype=float)
            if mats.ndim != 1 or mats.size < 2 or mats.shape != rates.shape:
                raise ValueError("tabulated curve needs >= 2 matching maturities and rates")
            if np.any(np.diff(mats) <= 0):
                raise ValueError("tabulated maturities must be strictly increasing")
            if not np.all(np.isfinite(rates)):
                raise ValueError("tabulated rates must be finite")
            object.__setattr__(self, "maturities", tuple(mats))
            object.__setattr__(self, "rates", tuple(rates))
        for name in ("level", "intercept", "slope"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"curve {name} must be finite")

    @classmethod
    def flat(cls, level: float) -> "InitialCurve":
        return cls("flat", level=float(level))

    @classmethod
    def linear(cls, intercept: float, slope: float) -> "InitialCurve":
        return cls("linear", intercept=float(intercept), slope=float(slope))

    @classmethod
    def tabulated(cls, maturities, rates, fd_step: float = 1e-3) -> "InitialCurve":
        return cls("tabulated", maturities=tuple(maturities), rates=tuple(rates), fd_step=fd_step)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "flat":
            return np.full_like(t, self.level)
        if self.kind == "linear":
            return self.intercept + self.slope * t
        return np.interp(t, self.maturities, self.rates)

    def derivative(self, t, step: float | None = None):
        t = np.asarray(t, dtype=float)
        if self.kind == "flat":
            return np.zeros_like(t)
        if self.kind == "linear":
            return np.full_like(t, self.slope)
        h = self.fd_step if step is None else step
        lo, hi = self.maturities[0], self.maturities[-1]
        up = np.minimum(t + h, hi)
        down = np.maximum(t - h, lo)
        width = np.where(up > down, up - down, 1.0)
        return np.where(up > down, (self(up) - self(down)) / width, 0.0)

    def to_dict(self) -> dict:
        if self.kind == "flat":
            return {"kind": "flat", "level": self.level}
        if self.kind == "linear":
            return {"kind": "linear", "intercept": self.intercept, "slope": self.slope}
        return {"kind": "tabulated", "maturities": list(self.maturities), "rates": list(self.rates)}


def trapezoid_weights(grid: TimeGrid, k: int, m: int) -> np.ndarray:
    """Weights of the trapezoid rule over nodes ``k..m`` (length ``m-k+1``)."""
    w = np.zeros(m - k + 1)
    if m > k:
        h = grid.steps[k:m]
        w[:-1] += 0.5 * h
        w[1:] += 0.5 * h
    return w


def maturity_integral(field: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """``I[k, m] = int_{t_k}^{T_m} field[k, s] ds`` by the trapezoid rule.

    ``field`` has shape ``(N+1, N+1, ...)``; entries with ``m < k`` are zero.
    """
    field = np.asarray(field, dtype=float)
    h = grid.steps.reshape((1, -1) + (1,) * (field.ndim - 2))
    pieces = 0.5 * (field[:, 1:] + field[:, :-1]) * h
    cum = np.concatenate([np.zeros_like(field[:, :1]), np.cumsum(pieces, axis=1)], axis=1)
    n = field.shape[0]
    diag = cum[np.arange(n), np.arange(n)]
    out = cum - diag[:, None]
    return _upper(out)


def _upper(arr: np.ndarray) -> np.ndarray:
    n = arr.shape[0]
    mask = np.triu(np.ones((n, n), dtype=bool))
    return np.where(mask.reshape(mask.shape + (1,) * (arr.ndim - 2)), arr, 0.0)


def _promote(arr, n, d, name):
    arr = np.asarray(arr, dtype=float)
    if arr.shape == (n, n) and d == 1 and name != "alpha":
        arr = arr.reshape((n, n) + (1,) * (1 if name == "beta" else 2))
    want = {"alpha": (n, n), "beta": (n, n, d), "gamma": (n, n, d, d)}[name]
    if arr.shape != want:
        raise ValueError(f"{name} has shape {arr.shape}, expected {want}")
    return arr


@dataclass(frozen=True, eq=False)
class HjmCoefficients:
    """Drift ``alpha``, volatility ``beta`` and uncertain drift ``gamma`` on the grid.

    Shapes: ``alpha (K, K)``, ``beta (K, K, d)``, ``gamma (K, K, d, d)`` with
    ``K = N + 1``; axis 0 is time ``t_k``, axis 1 maturity ``T_m``.  For
    ``d = 1`` plain ``(K, K)`` arrays are accepted for ``beta`` and ``gamma``.
    """

    grid: TimeGrid
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    label: str = field(default="custom", compare=False)

    def __post_init__(self):
        n = self.grid.n_steps + 1
        beta = np.asarray(self.beta, dtype=float)
        d = 1 if beta.shape == (n, n) else (beta.shape[2] if beta.ndim == 3 else -1)
        if d < 1:
            raise ValueError(f"beta has shape {beta.shape}, expected ({n}, {n}[, d])")
        for name in ("alpha", "beta", "gamma"):
            arr = _upper(_promote(getattr(self, name), n, d, name))
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite {name} coefficient on the grid")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def zeros(cls, grid: TimeGrid, d: int = 1) -> "HjmCoefficients":
        n = grid.n_steps + 1
        return cls(grid, np.zeros((n, n)), np.zeros((n, n, d)), np.zeros((n, n, d, d)), label="zero")

    @property
    def d(self) -> int:
        return self.beta.shape[2]

    @cached_property
    def a(self) -> np.ndarray:
        return maturity_integral(self.alpha, self.grid)

    @cached_property
    def b(self) -> np.ndarray:
        return maturity_integral(self.beta, self.grid)

    @cached_property
    def c(self) -> np.ndarray:
        return maturity_integral(self.gamma, self.grid)

    def scalar_fields(self):
        """``(alpha, beta, gamma)`` as ``(K, K)`` arrays; only for ``d = 1``."""
        if self.d != 1:
            raise ValueError(f"path simulation supports d = 1 only, coefficients have d = {self.d}")
        return self.alpha, self.beta[..., 0], self.gamma[..., 0, 0]

    def subsample(self, factor: int) -> "HjmCoefficients":
        """Restrict the fields to a grid ``factor`` times coarser."""
        grid = self.grid.coarsen(factor)
        s = slice(None, None, factor)
        return HjmCoefficients(grid, self.alpha[s, s], self.beta[s, s], self.gamma[s, s], label=self.label)

    def with_fields(self, alpha=None, gamma=None, label=None) -> "HjmCoefficients":
        return HjmCoefficients(self.grid,
                               self.alpha if alpha is None else alpha,
                               self.beta,
                               self.gamma if gamma is None else gamma,
                               label=self.label if label is None else label)


def ho_lee_beta(grid: TimeGrid) -> np.ndarray:
    """``beta_t(T) = 1``."""
    n = grid.n_steps + 1
    return _upper(np.ones((n, n)))


def hull_white_beta(grid: TimeGrid, theta: float) -> np.ndarray:
    """``beta_t(T) = exp(-theta (T - t))``."""
    if not theta > 0:
        raise ValueError(f"theta must be positive, got {theta!r}")
    t = grid.times
    return _upper(np.exp(-theta * (t[None, :] - t[:, None])))


def _lower_nan(arr: np.ndarray) -> np.ndarray:
    n = arr.shape[0]
    return np.where(np.triu(np.ones((n, n), dtype=bool)), arr, np.nan)


@dataclass(frozen=True, eq=False)
class ForwardSurface:
    """``values[k, m] = f_{t_k}(T_m)``, NaN for ``m < k``."""

    grid: TimeGrid
    values: np.ndarray
    path: GPath = field(repr=False)
    curve: InitialCurve | None = None

    @property
    def short_rate(self) -> np.ndarray:
        return np.diag(self.values).copy()


@dataclass(frozen=True, eq=False)
class BondLadder:
    grid: TimeGrid
    short_rate: np.ndarray
    money_market: np.ndarray
    bond: np.ndarray
    discounted: np.ndarray


def evolve_surface(coeffs: HjmCoefficients, curve: InitialCurve, path: GPath) -> ForwardSurface:
    """Left-point Euler scheme for

    ``f_t(T) = f_0(T) + int alpha_u(T) du + int beta_u(T) dB_u + int gamma_u(T) d<B>_u``.
    """
    if coeffs.grid != path.grid:
        raise ValueError(f"grid mismatch: coefficients on {coeffs.grid}, path on {path.grid}")
    if path.is_batch:
        raise ValueError("evolve_surface takes a single path; use discounted_bond_samples for batches")
    alpha, beta, gamma = coeffs.scalar_fields()
    grid = coeffs.grid
    dt = grid.steps[:, None]
    incr = alpha[:-1] * dt + beta[:-1] * path.db[:, None] + gamma[:-1] * path.dqv[:, None]
    f0 = curve(grid.times)
    f = np.vstack([f0[None, :], f0[None, :] + np.cumsum(incr, axis=0)])
    if not np.all(np.isfinite(np.triu(f))):
        raise ValueError("non-finite forward rate encountered")
    return ForwardSurface(grid, _lower_nan(f), path, curve)


def bond_ladder(surface: ForwardSurface) -> BondLadder:
    grid = surface.grid
    f = np.nan_to_num(surface.values, nan=0.0)
    r = np.diag(f).copy()
    integral = maturity_integral(f, grid)
    bond = _lower_nan(np.exp(-integral))
    log_m = np.concatenate([[0.0], np.cumsum(r[:-1] * grid.steps)])
    money = np.exp(log_m)
    disc = bond / money[:, None]
    return BondLadder(grid, r, money, bond, disc)


def log_discounted_bond_two_ways(coeffs: HjmCoefficients, curve: InitialCurve, path: GPath, T: float):
    """``log P~_t(T)`` from the evolved surface and from the integrated dynamics.

    The second route is
    ``log P~_0(T) - sum a_u(T) du - sum b_u(T) dB_u - sum c_u(T) d<B>_u``.
    Both are returned for nodes ``t_k <= T``.
    """
    grid = coeffs.grid
    m = grid.index_of(T)
    ladder = bond_ladder(evolve_surface(coeffs, curve, path))
    direct = np.log(ladder.discounted[: m + 1, m])
    a = coeffs.a[:m, m]
    b = coeffs.b[:m, m, 0]
    c = coeffs.c[:m, m, 0, 0]
    incr = a * grid.steps[:m] + b * path.db[:m] + c * path.dqv[:m]
    integrated = direct[0] - np.concatenate([[0.0], np.cumsum(incr)])
    return direct, integrated


def discounted_bond_samples(coeffs: HjmCoefficients, curve: InitialCurve, paths: GPath, T: float,
                            nodes) -> np.ndarray:
    """``P~_{t_k}(T)`` for every path of a batch at the given node indices.

    Same scheme as :func:`evolve_surface` followed by :func:`bond_ladder`,
    organised as matrix products so that only the needed entries are formed.
    Returns shape ``(n_paths, len(nodes))``.
    """
    if coeffs.grid != paths.grid:
        raise ValueError(f"grid mismatch: coefficients on {coeffs.grid}, paths on {paths.grid}")
    grid = coeffs.grid
    m = grid.index_of(T)
    nodes = [int(k) for k in nodes]
    if any(k < 0 or k > m for k in nodes):
        raise ValueError(f"nodes must lie in [0, {m}]")
    alpha, beta, gamma = coeffs.scalar_fields()
    db = np.atleast_2d(paths.db)
    dq = np.atleast_2d(paths.dqv)
    h = grid.steps
    f0 = curve(grid.times)
    n = grid.n_steps
    strict = np.triu(np.ones((n, n + 1), dtype=bool), 1)
    # short rates r_i = f_{t_i}(t_i) for i = 0..N
    drift_r = np.concatenate([[0.0], [np.dot(alpha[:i, i], h[:i]) for i in range(1, n + 1)]])
    r = f0 + drift_r + db @ np.where(strict, beta[:-1], 0.0) + dq @ np.where(strict, gamma[:-1], 0.0)
    log_m = np.concatenate([np.zeros((r.shape[0], 1)), np.cumsum(r[:, :-1] * h, axis=1)], axis=1)
    out = np.empty((db.shape[0], len(nodes)))
    for col, k in enumerate(nodes):
        w = trapezoid_weights(grid, k, m)
        base = np.dot(f0[k: m + 1], w) + np.dot(alpha[:k, k: m + 1] @ w, h[:k])
        integral = base + db[:, :k] @ (beta[:k, k: m + 1] @ w) + dq[:, :k] @ (gamma[:k, k: m + 1] @ w)
        out[:, col] = np.exp(-integral - log_m[:, k])
    return out


@dataclass(frozen=True)
class FubiniResult:
    """Two summation orders for each integrator: keys ``"du"``, ``"dB"``, ``"dQ"``."""

    pairs: dict

    def max_discrepancy(self) -> float:
        return max(abs(l - r) / (1.0 + abs(l)) for l, r in self.pairs.values())


def fubini_check(phi: np.ndarray, path: GPath, t: float, T: float) -> FubiniResult:
    """Interchange of the ``ds`` integral with ``du``, ``dB`` and ``d<B>``.

    Left: ``int_t^T (sum_{u<t} phi(u,s) dX_u) ds + int_0^t (sum_{u<s} phi(u,s) dX_u) ds``,
    with the trapezoid rule on ``[t, T]`` and the left-point rule on ``[0, t]``
    (the rules used for bond prices and the money-market account).
    Right: ``sum_{u<t} (int phi(u, s) ds) dX_u`` with the same weights.
    """
    grid = path.grid
    if path.is_batch:
        raise ValueError("fubini_check takes a single path")
    k = grid.index_of(t)
    m = grid.index_of(T)
    if k > m:
        raise ValueError("need t <= T")
    phi = np.asarray(phi, dtype=float)
    h = grid.steps
    w = trapezoid_weights(grid, k, m)
    pairs = {}
    for key, dx in (("du", h), ("dB", path.db), ("dQ", path.dqv)):
        # s-outer order
        outer_late = sum(w[i] * np.dot(phi[:k, k + i], dx[:k]) for i in range(m - k + 1))
        outer_early = sum(h[s] * np.dot(phi[:s, s], dx[:s]) for s in range(k))
        lhs = outer_late + outer_early
        # u-outer order
        rhs = 0.0
        for u in range(k):
            inner = np.dot(phi[u, k: m + 1], w) + np.dot(phi[u, u + 1: k], h[u + 1: k])
            rhs += inner * dx[u]
        pairs[key] = (float(lhs), float(rhs))
    return FubiniResult(pairs)


def product_rule_check(beta: np.ndarray, grid: TimeGrid, t: float, T: float) -> tuple[float, float]:
    """``(int_t^T 2 beta(t,s) b(t,s) ds, b(t,T)^2)`` with ``b`` the trapezoid integral of ``beta``."""
    k = grid.index_of(t)
    m = grid.index_of(T)
    if k > m:
        raise ValueError("need t <= T")
    row = np.asarray(beta, dtype=float)[k, k: m + 1]
    w = trapezoid_weights(grid, k, m)
    b_row = np.concatenate([[0.0], np.cumsum(0.5 * (row[1:] + row[:-1]) * grid.steps[k:m])])
    # compensated summation keeps exactly-integrable cases (Ho-Lee) exact
    lhs = math.fsum(2.0 * row * b_row * w)
    return lhs, float(b_row[-1] ** 2)


def product_rule_tolerance(beta: np.ndarray, grid: TimeGrid, t: float, T: float,
                           safety: float = 2.0) -> float:
    """Second-order trapezoid error bound for :func:`product_rule_check`.

    ``safety * (T - t) dt^2 / 12 * max|g''|`` with ``g = 2 beta b`` and ``g''``
    from second differences, plus a rounding floor.
    """
    k = grid.index_of(t)
    m = grid.index_of(T)
    row = np.asarray(beta, dtype=float)[k: k + 1, k: m + 1][0]
    h = grid.dt
    b_row = np.concatenate([[0.0], np.cumsum(0.5 * (row[1:] + row[:-1]) * h)])
    g = 2.0 * row * b_row
    curvature = float(np.max(np.abs(np.diff(g, 2)))) / h ** 2 if g.size > 2 else 0.0
    return safety * (T - t) * h ** 2 / 12.0 * curvature + 1e-14 * (1.0 + float(b_row[-1] ** 2))


def write_coefficients_csv(coeffs: HjmCoefficients, path, comment: str | None = None) -> None:
    """Long format ``t,T,alpha,beta,gamma`` for ``t <= T`` (``d = 1``), optional ``# comment`` first line."""
    alpha, beta, gamma = coeffs.scalar_fields()
    t = coeffs.grid.times
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        fh.write("t,T,alpha,beta,gamma\n")
        for k in range(t.size):
            for m in range(k, t.size):
                fh.write(f"{t[k]:.17g},{t[m]:.17g},{alpha[k, m]:.17g},{beta[k, m]:.17g},{gamma[k, m]:.17g}\n")


def read_coefficients_csv(path, grid: TimeGrid) -> HjmCoefficients:
    """Inverse of :func:`write_coefficients_csv`; every pair ``t_k <= T_m`` must be present.

    Lines starting with ``#`` are ignored.
    """
    required = ("t", "T", "alpha", "beta", "gamma")
    with open(path, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.lstrip().startswith("#"))
        if reader.fieldnames is None or not set(required) <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected columns {list(required)}")
        n = grid.n_steps + 1
        fields = {name: np.full((n, n), np.nan) for name in required[2:]}
        for lineno, row in enumerate(reader, start=2):
            try:
                values = {name: float(row[name]) for name in required}
                k, m = grid.index_of(values["t"]), grid.index_of(values["T"])
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}: data row {lineno}: {exc}") from None
            if m < k:
                raise ValueError(f"{path}: data row {lineno} has T < t")
            for name in fields:
                fields[name][k, m] = values[name]
    upper = np.triu(np.ones((n, n), dtype=bool))
    for name, arr in fields.items():
        if np.any(np.isnan(arr[upper])):
            raise ValueError(f"{path}: missing or non-finite {name} entries for the grid {grid}")
        arr[~upper] = 0.0
    return HjmCoefficients(grid, fields["alpha"], fields["beta"], fields["gamma"], label=str(path))
