"""YAML experiment configuration.

Every validation failure raises :class:`ConfigError` naming the offending
field as a dotted path (``band.sigma_low``), with the YAML line when known.
See the README for the full schema.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .drift import DEFAULT_TOLERANCE, MarketPrices, apply_market_prices, generate_risk_neutral
from .hjm import HjmCoefficients, InitialCurve, read_coefficients_csv
from .affine import AffineTermStructure
from .robust import NovikovParams
from .scenarios import ScenarioError, TimeGrid, VolatilityBand, VolatilityScenario, scenario_family

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "KNOWN_CHECKS"]

KNOWN_CHECKS = ("drift", "martingale", "fubini", "product_rule", "novikov", "vasicek")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str, line: int | None = None):
        self.path = path
        self.line = line
        where = f"{path} (line {line})" if line else path
        super().__init__(f"{where}: {message}")


def _line_index(text: str) -> dict[str, int]:
    """Map dotted field paths to 1-based YAML line numbers."""
    index: dict[str, int] = {}

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for key, value in node.value:
                path = f"{prefix}.{key.value}" if prefix else str(key.value)
                index[path] = key.start_mark.line + 1
                walk(value, path)
        elif isinstance(node, yaml.SequenceNode):
            for i, item in enumerate(node.value):
                path = f"{prefix}[{i}]"
                index[path] = item.start_mark.line + 1
                walk(item, path)

    try:
        walk(yaml.compose(text), "")
    except yaml.YAMLError:
        pass
    return index


class _Reader:
    """Typed access to nested mappings with path-aware errors."""

    def __init__(self, data: dict, lines: dict[str, int], base: Path):
        self.data = data
        self.lines = lines
        self.base = base

    def fail(self, path: str, message: str):
        raise ConfigError(path, message, self.lines.get(path))

    def section(self, path: str, required: bool = True) -> dict:
        node = self.get(path, None if not required else ...)
        if node is None:
            return {}
        if not isinstance(node, dict):
            self.fail(path, "expected a mapping")
        return node

    def get(self, path: str, default: Any = ...):
        node: Any = self.data
        for part in path.split("."):
            if not isinstance(node, dict) or part not in node:
                if default is ...:
                    self.fail(path, "missing required field")
                return default
            node = node[part]
        return node

    def number(self, path: str, default: Any = ..., *, positive=False, nonnegative=False) -> float:
        value = self.get(path, default)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(path, f"expected a number, got {value!r}")
        value = float(value)
        if not np.isfinite(value):
            self.fail(path, "must be finite")
        if positive and value <= 0:
            self.fail(path, f"must be > 0, got {value:g}")
        if nonnegative and value < 0:
            self.fail(path, f"must be >= 0, got {value:g}")
        return value

    def integer(self, path: str, default: Any = ..., *, minimum: int | None = None) -> int:
        value = self.get(path, default)
        if isinstance(value, bool) or not isinstance(value, int):
            self.fail(path, f"expected an integer, got {value!r}")
        if minimum is not None and value < minimum:
            self.fail(path, f"must be >= {minimum}, got {value}")
        return value

    def file(self, path: str) -> Path:
        value = self.get(path)
        if not isinstance(value, str):
            self.fail(path, "expected a file path")
        resolved = (self.base / value).resolve()
        if not resolved.is_file():
            self.fail(path, f"file not found: {resolved}")
        return resolved


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    band: VolatilityBand
    grid: TimeGrid
    curve: InitialCurve
    model_kind: str
    theta: float | None
    coefficients_file: Path | None
    kappa: float
    lam: float
    family: tuple[VolatilityScenario, ...]
    paths: int
    seed: int
    chunk_size: int
    maturity: float
    checkpoints: tuple[float, ...]
    checks: tuple[str, ...]
    drift_tolerance: float
    n_se: float
    allowance_c: float | None
    require_risk_neutral: bool
    novikov: NovikovParams
    vasicek_theta: float
    vasicek_mu: float
    out_dir: Path
    source: Path | None = None
    raw: dict = field(default_factory=dict, repr=False)

    def with_overrides(self, *, seed: int | None = None, paths: int | None = None,
                       out_dir: Path | None = None) -> "ExperimentConfig":
        from dataclasses import replace

        changes = {}
        if seed is not None:
            if seed < 0:
                raise ConfigError("--seed", "must be >= 0")
            changes["seed"] = seed
        if paths is not None:
            if paths < 2:
                raise ConfigError("--paths", "must be >= 2")
            changes["paths"] = paths
        if out_dir is not None:
            changes["out_dir"] = Path(out_dir)
        return replace(self, **changes) if changes else self

    @property
    def affine_model(self) -> AffineTermStructure | None:
        if self.model_kind == "ho_lee":
            return AffineTermStructure.ho_lee(self.curve)
        if self.model_kind == "hull_white":
            return AffineTermStructure.hull_white(self.curve, self.theta)
        return None

    @property
    def market_prices(self) -> MarketPrices:
        return MarketPrices.constant(self.grid.n_steps + 1, self.kappa, self.lam)

    def base_coefficients(self) -> HjmCoefficients:
        """Coefficients before the market-price shift."""
        if self.coefficients_file is not None:
            try:
                return read_coefficients_csv(self.coefficients_file, self.grid)
            except ValueError as exc:
                raise ConfigError("model.file", str(exc)) from exc
        model = self.affine_model
        return generate_risk_neutral(model.beta_field(self.grid), self.grid, label=model.name)

    def coefficients(self) -> HjmCoefficients:
        """Model coefficients, with ``alpha += beta kappa`` and ``gamma += beta lambda`` applied."""
        base = self.base_coefficients()
        if self.kappa == 0 and self.lam == 0:
            return base
        return apply_market_prices(base, self.market_prices)


def _curve(r: _Reader) -> InitialCurve:
    kind = r.get("curve.kind")
    if kind == "flat":
        return InitialCurve.flat(r.number("curve.level"))
    if kind == "linear":
        return InitialCurve.linear(r.number("curve.intercept"), r.number("curve.slope"))
    if kind == "tabulated":
        if "file" in r.section("curve"):
            try:
                with open(r.file("curve.file"), newline="") as fh:
                    rows = list(csv.DictReader(ln for ln in fh if not ln.lstrip().startswith("#")))
                mats = [float(row["maturity"]) for row in rows]
                rates = [float(row["rate"]) for row in rows]
            except (ValueError, KeyError, TypeError) as exc:
                r.fail("curve.file", f"expected CSV columns maturity,rate ({exc})")
        else:
            mats, rates = r.get("curve.maturities"), r.get("curve.rates")
        try:
            return InitialCurve.tabulated(np.asarray(mats, dtype=float), np.asarray(rates, dtype=float))
        except (ValueError, TypeError) as exc:
            r.fail("curve", str(exc))
    r.fail("curve.kind", f"expected flat, linear or tabulated, got {kind!r}")


def _family(r: _Reader, band: VolatilityBand, grid: TimeGrid) -> tuple[VolatilityScenario, ...]:
    spec = r.section("family", required=False)
    if "scenarios" in spec:
        items = spec["scenarios"]
        if not isinstance(items, list) or not items:
            r.fail("family.scenarios", "expected a nonempty list")
        out = []
        for i, item in enumerate(items):
            path = f"family.scenarios[{i}]"
            if not isinstance(item, dict):
                r.fail(path, "expected a mapping")
            try:
                scen = VolatilityScenario.from_dict(item, band)
                scen.validate()
            except (ScenarioError, ValueError, TypeError, KeyError) as exc:
                r.fail(path, str(exc))
            out.append(scen)
        return tuple(out)
    size = r.integer("family.size", 5, minimum=1)
    try:
        return tuple(scenario_family(band, grid, size))
    except (ScenarioError, ValueError) as exc:
        r.fail("family.size", str(exc))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError("<yaml>", f"parse error: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None) from exc
    if not isinstance(data, dict):
        raise ConfigError("<root>", "expected a mapping at the top level")
    return parse_config(data, _line_index(text), path.parent, source=path)


def parse_config(data: dict, lines: dict | None = None, base: Path | None = None,
                 source: Path | None = None) -> ExperimentConfig:
    r = _Reader(data, lines or {}, base or Path.cwd())

    lo, hi = r.number("band.sigma_low", positive=True), r.number("band.sigma_high", positive=True)
    if lo > hi:
        r.fail("band.sigma_low", f"sigma_low={lo:g} exceeds sigma_high={hi:g}")
    band = VolatilityBand(lo, hi)

    grid = TimeGrid(r.number("grid.tau", positive=True), r.integer("grid.n_steps", minimum=1))
    curve = _curve(r)

    kind = r.get("model.kind")
    theta = coeff_file = None
    if kind == "hull_white":
        theta = r.number("model.theta", positive=True)
    elif kind == "custom":
        coeff_file = r.file("model.file")
    elif kind != "ho_lee":
        r.fail("model.kind", f"expected ho_lee, hull_white or custom, got {kind!r}")

    kappa = r.number("market_prices.kappa", 0.0)
    lam = r.number("market_prices.lambda", 0.0)
    family = _family(r, band, grid)

    paths = r.integer("monte_carlo.paths", 10_000, minimum=2)
    seed = r.integer("monte_carlo.seed", 0, minimum=0)
    chunk = r.integer("monte_carlo.chunk_size", 20_000, minimum=1)

    maturity = r.number("checks_setup.maturity", grid.tau, positive=True)
    try:
        grid.index_of(maturity)
    except ValueError as exc:
        r.fail("checks_setup.maturity", str(exc))
    raw_cp = r.get("checks_setup.checkpoints", [maturity / 4, maturity / 2, 3 * maturity / 4, maturity])
    if not isinstance(raw_cp, list) or not raw_cp:
        r.fail("checks_setup.checkpoints", "expected a nonempty list")
    checkpoints = [_checkpoint(r, raw_cp, i, grid, maturity) for i in range(len(raw_cp))]
    checks = r.get("checks_setup.run", list(KNOWN_CHECKS[:-1]))
    if not isinstance(checks, list) or any(c not in KNOWN_CHECKS for c in checks):
        r.fail("checks_setup.run", f"expected a list drawn from {list(KNOWN_CHECKS)}, got {checks!r}")

    tol = r.number("tolerances.drift", DEFAULT_TOLERANCE, positive=True)
    n_se = r.number("tolerances.n_se", 3.0, positive=True)
    c_raw = r.get("tolerances.allowance_c", None)
    allowance_c = None if c_raw is None else r.number("tolerances.allowance_c", nonnegative=True)
    require_rn = r.get("martingale.require_risk_neutral", True)
    if not isinstance(require_rn, bool):
        r.fail("martingale.require_risk_neutral", "expected true or false")

    try:
        nov = NovikovParams(**{k: r.number(f"novikov.{k}", v) for k, v in
                               (("p", 2.0), ("q", 1.5), ("p_prime", 13.0), ("q_prime", 3.0))})
    except ValueError as exc:
        r.fail("novikov", str(exc))

    v_theta = r.number("vasicek.theta", 0.5, positive=True)
    v_mu = r.number("vasicek.mu", 0.0)

    out = r.get("output.dir", "out")
    if not isinstance(out, str):
        r.fail("output.dir", "expected a directory path")

    return ExperimentConfig(band, grid, curve, kind, theta, coeff_file, kappa, lam, family, paths, seed,
                            chunk, maturity, tuple(checkpoints), tuple(checks), tol, n_se, allowance_c,
                            require_rn, nov, v_theta, v_mu, (r.base / out), source, data)


def _checkpoint(r: _Reader, raw: list, i: int, grid: TimeGrid, maturity: float) -> float:
    path = f"checks_setup.checkpoints[{i}]"
    value = raw[i]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        r.fail(path, f"expected a number, got {value!r}")
    if not 0 <= value <= maturity:
        r.fail(path, f"must lie in [0, maturity={maturity:g}]")
    try:
        grid.index_of(float(value))
    except ValueError as exc:
        r.fail(path, str(exc))
    return float(value)
