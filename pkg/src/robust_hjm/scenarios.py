"""Volatility beliefs and G-Brownian motion paths.

A G-Brownian motion is simulated scenario by scenario: a classical Brownian
driver ``W`` is modulated by an adapted volatility path ``sigma`` valued in the
band ``[sigma_low, sigma_high]``, giving ``B = int sigma dW`` and the quadratic
variation ``<B> = int sigma^2 dt``.

The set of all adapted scenarios is replaced by a finite family.  Suprema over
that family are lower bounds for the true sublinear expectation.

Randomness: path ``i`` of a run seeded with ``seed`` draws its increments from a
Philox generator keyed by ``(i, seed)``.  Every path is therefore reproducible
on its own, and scenarios evaluated with the same seed share their driver
(common random numbers).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

__all__ = [
    "ScenarioError",
    "VolatilityBand",
    "ScenarioKind",
    "VolatilityScenario",
    "TimeGrid",
    "GPath",
    "driver_increments",
    "coarsen_increments",
    "path_from_increments",
    "generate_path",
    "generate_paths",
    "refinement_paths",
    "scenario_family",
    "STATE_FEEDBACK_RULES",
]

# Relative slack used when comparing switch times to grid nodes.
_TIME_EPS = 1e-12


class ScenarioError(ValueError):
    """Ill-formed belief: bad band, out-of-band level, unknown rule."""


@dataclass(frozen=True)
class VolatilityBand:
    """State space ``[sigma_low, sigma_high]`` of the volatility."""

    sigma_low: float
    sigma_high: float

    def __post_init__(self):
        lo, hi = float(self.sigma_low), float(self.sigma_high)
        if not np.isfinite(lo) or lo <= 0.0:
            raise ScenarioError(f"sigma_low must be a positive real, got {self.sigma_low!r}")
        if not np.isfinite(hi) or hi < lo:
            raise ScenarioError(
                f"sigma_high must satisfy sigma_high >= sigma_low, got "
                f"sigma_low={lo}, sigma_high={self.sigma_high!r}"
            )
        object.__setattr__(self, "sigma_low", lo)
        object.__setattr__(self, "sigma_high", hi)

    @property
    def is_singleton(self) -> bool:
        return self.sigma_low == self.sigma_high

    @property
    def mid(self) -> float:
        return 0.5 * (self.sigma_low + self.sigma_high)

    def contains(self, level: float) -> bool:
        return self.sigma_low <= level <= self.sigma_high


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``0 = t_0 < ... < t_N = tau``."""

    tau: float
    n_steps: int

    def __post_init__(self):
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ValueError(f"tau must be a positive real, got {self.tau!r}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps!r}")
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self) -> float:
        return self.tau / self.n_steps

    @cached_property
    def times(self) -> np.ndarray:
        t = np.linspace(0.0, self.tau, self.n_steps + 1)
        t.setflags(write=False)
        return t

    @cached_property
    def steps(self) -> np.ndarray:
        h = np.diff(self.times)
        h.setflags(write=False)
        return h

    def index_of(self, t: float) -> int:
        """Node index of time ``t``; raises if ``t`` is not a grid node."""
        k = int(round(t / self.dt))
        if k < 0 or k > self.n_steps or abs(self.times[k] - t) > 1e-9 * max(1.0, self.tau):
            raise ValueError(f"time {t!r} is not a node of {self}")
        return k

    def coarsen(self, factor: int) -> "TimeGrid":
        if self.n_steps % factor:
            raise ValueError(f"n_steps={self.n_steps} not divisible by {factor}")
        return TimeGrid(self.tau, self.n_steps // factor)


class ScenarioKind(str, enum.Enum):
    CONSTANT_LOW = "constant_low"
    CONSTANT_HIGH = "constant_high"
    CONSTANT_MID = "constant_mid"
    BANG_BANG = "bang_bang"
    STATE_FEEDBACK = "state_feedback"


def _sign_rule(b_now: np.ndarray, band: VolatilityBand) -> np.ndarray:
    return np.where(b_now >= 0.0, band.sigma_high, band.sigma_low)


def _reverse_sign_rule(b_now: np.ndarray, band: VolatilityBand) -> np.ndarray:
    return np.where(b_now >= 0.0, band.sigma_low, band.sigma_high)


# rule_id -> sigma as a function of the current level of B (left node).
STATE_FEEDBACK_RULES = {
    "sign": _sign_rule,
    "reverse_sign": _reverse_sign_rule,
}


@dataclass(frozen=True)
class VolatilityScenario:
    """One adapted volatility scenario inside ``band``.

    ``BANG_BANG`` starts at ``start_level`` and jumps to the mirrored level
    ``sigma_low + sigma_high - start_level`` at every switch time, toggling back
    and forth.  ``STATE_FEEDBACK`` chooses sigma at each step from ``B`` at the
    left node, see :data:`STATE_FEEDBACK_RULES`.
    """

    kind: ScenarioKind
    band: VolatilityBand
    level: float | None = None
    switch_times: tuple[float, ...] = ()
    start_level: float | None = None
    rule_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ScenarioKind(self.kind))
        object.__setattr__(self, "switch_times", tuple(float(s) for s in self.switch_times))
        self.validate()

    # constructors ---------------------------------------------------------
    @classmethod
    def constant_low(cls, band):
        return cls(ScenarioKind.CONSTANT_LOW, band)

    @classmethod
    def constant_high(cls, band):
        return cls(ScenarioKind.CONSTANT_HIGH, band)

    @classmethod
    def constant_mid(cls, band, level=None):
        return cls(ScenarioKind.CONSTANT_MID, band, level=band.mid if level is None else level)

    @classmethod
    def bang_bang(cls, band, switch_times, start_level=None):
        start = band.sigma_low if start_level is None else start_level
        return cls(ScenarioKind.BANG_BANG, band, switch_times=tuple(switch_times), start_level=start)

    @classmethod
    def state_feedback(cls, band, rule_id="sign"):
        return cls(ScenarioKind.STATE_FEEDBACK, band, rule_id=rule_id)

    def validate(self) -> None:
        band = self.band
        if self.kind is ScenarioKind.CONSTANT_MID:
            if self.level is None or not band.contains(self.level):
                raise ScenarioError(f"level {self.level!r} outside band [{band.sigma_low}, {band.sigma_high}]")
        elif self.kind is ScenarioKind.BANG_BANG:
            if self.start_level is None or not band.contains(self.start_level):
                raise ScenarioError(
                    f"start_level {self.start_level!r} outside band [{band.sigma_low}, {band.sigma_high}]"
                )
            if any(b <= a for a, b in zip(self.switch_times, self.switch_times[1:])):
                raise ScenarioError(f"switch_times must be strictly increasing, got {self.switch_times}")
        elif self.kind is ScenarioKind.STATE_FEEDBACK:
            if self.rule_id not in STATE_FEEDBACK_RULES:
                raise ScenarioError(
                    f"unknown state-feedback rule {self.rule_id!r}; known: {sorted(STATE_FEEDBACK_RULES)}"
                )

    @property
    def name(self) -> str:
        if self.kind is ScenarioKind.CONSTANT_MID:
            return f"constant_mid({self.level:g})"
        if self.kind is ScenarioKind.BANG_BANG:
            times = ",".join(f"{s:g}" for s in self.switch_times)
            return f"bang_bang({self.start_level:g}@[{times}])"
        if self.kind is ScenarioKind.STATE_FEEDBACK:
            return f"state_feedback({self.rule_id})"
        return self.kind.value

    @property
    def is_deterministic(self) -> bool:
        return self.kind is not ScenarioKind.STATE_FEEDBACK

    def sigma(self, grid: TimeGrid, w: np.ndarray) -> np.ndarray:
        """Realized per-step volatility for driver increments ``w`` (shape ``(..., N)``).

        Step ``k`` only looks at ``w[..., :k]``.
        """
        band = self.band
        w = np.asarray(w, dtype=float)
        shape = w.shape
        if self.kind is ScenarioKind.CONSTANT_LOW:
            return np.full(shape, band.sigma_low)
        if self.kind is ScenarioKind.CONSTANT_HIGH:
            return np.full(shape, band.sigma_high)
        if self.kind is ScenarioKind.CONSTANT_MID:
            return np.full(shape, float(self.level))
        if self.kind is ScenarioKind.BANG_BANG:
            t = grid.times[:-1]
            switches = np.asarray(self.switch_times, dtype=float)
            n_passed = np.searchsorted(switches, t + _TIME_EPS * grid.tau, side="right")
            other = band.sigma_low + band.sigma_high - self.start_level
            row = np.where(n_passed % 2 == 0, self.start_level, other)
            # clip: mirrored level can leave the band by rounding only
            row = np.clip(row, band.sigma_low, band.sigma_high)
            return np.broadcast_to(row, shape).copy()
        rule = STATE_FEEDBACK_RULES[self.rule_id]
        sig = np.empty(shape)
        b_now = np.zeros(shape[:-1])
        for k in range(shape[-1]):
            sig[..., k] = rule(b_now, band)
            b_now = b_now + sig[..., k] * w[..., k]
        return sig

    # serialization --------------------------------------------------------
    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind.value}
        if self.kind is ScenarioKind.CONSTANT_MID:
            out["level"] = self.level
        elif self.kind is ScenarioKind.BANG_BANG:
            out["switch_times"] = list(self.switch_times)
            out["start_level"] = self.start_level
        elif self.kind is ScenarioKind.STATE_FEEDBACK:
            out["rule_id"] = self.rule_id
        return out

    @classmethod
    def from_dict(cls, data: dict, band: VolatilityBand) -> "VolatilityScenario":
        data = dict(data)
        try:
            kind = ScenarioKind(data.pop("kind"))
        except (KeyError, ValueError) as exc:
            raise ScenarioError(f"bad scenario kind in {data!r}: {exc}") from None
        if kind is ScenarioKind.CONSTANT_MID and "level" not in data:
            data["level"] = band.mid
        if kind is ScenarioKind.BANG_BANG:
            data.setdefault("start_level", band.sigma_low)
        if kind is ScenarioKind.STATE_FEEDBACK:
            data.setdefault("rule_id", "sign")
        unknown = set(data) - {"level", "switch_times", "start_level", "rule_id"}
        if unknown:
            raise ScenarioError(f"unknown scenario fields {sorted(unknown)}")
        return cls(kind, band, **data)


@dataclass(frozen=True, eq=False)
class GPath:
    """Simulated G-Brownian path(s).

    Arrays carry an optional leading batch axis: ``w_increments`` and
    ``sigma_real`` have shape ``(..., N)``, ``b_path`` and ``qv_path`` shape
    ``(..., N + 1)``.
    """

    grid: TimeGrid
    w_increments: np.ndarray
    sigma_real: np.ndarray
    b_path: np.ndarray
    qv_path: np.ndarray
    scenario: VolatilityScenario | None = field(default=None, repr=False)
    seed: int | None = None

    def __post_init__(self):
        for name in ("w_increments", "sigma_real", "b_path", "qv_path"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def is_batch(self) -> bool:
        return self.w_increments.ndim == 2

    @property
    def n_paths(self) -> int:
        return self.w_increments.shape[0] if self.is_batch else 1

    @property
    def db(self) -> np.ndarray:
        """Increments of ``B``."""
        return np.diff(self.b_path, axis=-1)

    @property
    def dqv(self) -> np.ndarray:
        """Increments of ``<B>``."""
        return np.diff(self.qv_path, axis=-1)

    def path(self, i: int) -> "GPath":
        if not self.is_batch:
            raise IndexError("not a batch")
        return GPath(self.grid, self.w_increments[i], self.sigma_real[i], self.b_path[i],
                     self.qv_path[i], self.scenario, self.seed)

    def coarsen(self, factor: int) -> "GPath":
        """Same Brownian driver on a grid ``factor`` times coarser."""
        if self.scenario is None:
            raise ValueError("coarsening needs the generating scenario")
        grid = self.grid.coarsen(factor)
        return path_from_increments(self.scenario, grid, coarsen_increments(self.w_increments, factor),
                                    seed=self.seed)


def _quadratic_variation(sig: np.ndarray, times: np.ndarray) -> np.ndarray:
    # Accumulate by constant-sigma runs: inside a run qv = base + sigma^2 (t - t_run).
    # Constant scenarios then give qv[k] == sigma**2 * t_k exactly.
    shape = sig.shape
    n = shape[-1]
    qv = np.zeros(shape[:-1] + (n + 1,))
    base = np.zeros(shape[:-1])
    t_run = np.zeros(shape[:-1])
    prev = np.full(shape[:-1], np.nan)
    for k in range(n):
        s = sig[..., k]
        new_run = s != prev
        base = np.where(new_run, qv[..., k], base)
        t_run = np.where(new_run, times[k], t_run)
        qv[..., k + 1] = base + s * s * (times[k + 1] - t_run)
        prev = s
    return qv


def driver_increments(grid: TimeGrid, seed: int, n_paths: int = 1, start: int = 0) -> np.ndarray:
    """Standard normal increments scaled by ``sqrt(dt)``, shape ``(n_paths, N)``.

    Row ``i`` comes from its own counter-based generator keyed by ``(start + i, seed)``,
    so any slice of paths can be produced independently.
    """
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be a 64-bit non-negative integer, got {seed}")
    scale = np.sqrt(grid.dt)
    out = np.empty((n_paths, grid.n_steps))
    for i in range(n_paths):
        gen = np.random.Generator(np.random.Philox(key=((start + i) << 64) | seed))
        out[i] = gen.standard_normal(grid.n_steps)
    out *= scale
    return out


def coarsen_increments(w: np.ndarray, factor: int) -> np.ndarray:
    w = np.asarray(w)
    n = w.shape[-1]
    if n % factor:
        raise ValueError(f"{n} increments not divisible by {factor}")
    return w.reshape(w.shape[:-1] + (n // factor, factor)).sum(axis=-1)


def path_from_increments(scenario: VolatilityScenario, grid: TimeGrid, w: np.ndarray,
                         seed: int | None = None) -> GPath:
    """Build a path from given driver increments ``w`` of shape ``(..., N)``."""
    scenario.validate()
    w = np.asarray(w, dtype=float)
    if w.shape[-1] != grid.n_steps:
        raise ValueError(f"expected {grid.n_steps} increments, got {w.shape[-1]}")
    sig = scenario.sigma(grid, w)
    band = scenario.band
    if np.any(sig < band.sigma_low) or np.any(sig > band.sigma_high):
        raise ScenarioError(f"scenario {scenario.name} realized sigma outside the band")
    zero = np.zeros(w.shape[:-1] + (1,))
    b_path = np.concatenate([zero, np.cumsum(sig * w, axis=-1)], axis=-1)
    qv_path = _quadratic_variation(sig, grid.times)
    return GPath(grid, w, sig, b_path, qv_path, scenario, seed)


def generate_path(scenario: VolatilityScenario, grid: TimeGrid, seed: int) -> GPath:
    """One path; identical to row 0 of :func:`generate_paths` with the same seed."""
    w = driver_increments(grid, seed, 1)[0]
    return path_from_increments(scenario, grid, w, seed=seed)


def generate_paths(scenario: VolatilityScenario, grid: TimeGrid, seed: int, n_paths: int,
                   start: int = 0) -> GPath:
    w = driver_increments(grid, seed, n_paths, start=start)
    return path_from_increments(scenario, grid, w, seed=seed)


def refinement_paths(scenario: VolatilityScenario, tau: float, levels: Sequence[int],
                     seed: int) -> dict[int, GPath]:
    """Paths on several resolutions sharing one Brownian driver.

    The finest level is drawn; coarser levels sum its increments.
    """
    levels = sorted(set(int(n) for n in levels))
    finest = levels[-1]
    w = driver_increments(TimeGrid(tau, finest), seed, 1)[0]
    out = {}
    for n in levels:
        if finest % n:
            raise ValueError(f"level {n} does not divide finest level {finest}")
        out[n] = path_from_increments(scenario, TimeGrid(tau, n), coarsen_increments(w, finest // n),
                                      seed=seed)
    return out


def scenario_family(band: VolatilityBand, grid: TimeGrid, family_size: int) -> list[VolatilityScenario]:
    """Documented finite approximation of the set of beliefs.

    Members in order: constant low, constant high, constant mid, bang-bang
    low->high at tau/2, bang-bang high->low at tau/2, state feedback
    (``sign``), state feedback (``reverse_sign``).  Larger families add
    bang-bang scenarios with ``j`` equally spaced switches, ``j = 2, 3, ...``,
    alternating the starting level.
    """
    if family_size < 2:
        raise ValueError(f"family_size must be >= 2, got {family_size}")
    lo, hi = band.sigma_low, band.sigma_high
    half = grid.tau / 2
    members = [
        VolatilityScenario.constant_low(band),
        VolatilityScenario.constant_high(band),
        VolatilityScenario.constant_mid(band),
        VolatilityScenario.bang_bang(band, (half,), start_level=lo),
        VolatilityScenario.bang_bang(band, (half,), start_level=hi),
        VolatilityScenario.state_feedback(band, "sign"),
        VolatilityScenario.state_feedback(band, "reverse_sign"),
    ]
    j = 2
    while len(members) < family_size:
        switches = tuple(grid.tau * i / (j + 1) for i in range(1, j + 1))
        start = lo if j % 2 == 0 else hi
        members.append(VolatilityScenario.bang_bang(band, switches, start_level=start))
        j += 1
    return members[:family_size]
