"""Command-line front end: ``robust-hjm {simulate,check,price,drift,vasicek}``.

Exit status: 0 when every requested check passes, 1 on a check failure,
2 on a configuration error.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .affine import affine_price_table, simulate_short_rate, vasicek_impossibility
from .config import ConfigError, ExperimentConfig, load_config
from .drift import check_drift_condition
from .hjm import (bond_ladder, evolve_surface, fubini_check, product_rule_check, product_rule_tolerance,
                  write_coefficients_csv)
from .robust import UncertifiedCoefficientsError, martingale_check, novikov_bound_check
from .scenarios import generate_path

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

FUBINI_TOLERANCE = 1e-12


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "" if math.isnan(value) else f"{float(value):.17g}"
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence], seed: int) -> Path:
    """Header row after a ``# seed=N`` comment; 17 significant digits; NaN as blank."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# seed={seed}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


class _Run:
    """Collects summary lines and pass flags for one invocation."""

    def __init__(self, cfg: ExperimentConfig, quiet: bool):
        self.cfg = cfg
        self.quiet = quiet
        self.lines: list[str] = []
        self.failed = False

    def say(self, line: str) -> None:
        self.lines.append(line)
        if not self.quiet:
            print(line)

    def verdict(self, name: str, passed: bool, detail: str) -> None:
        self.failed |= not passed
        self.say(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")

    def csv(self, name: str, header, rows) -> Path:
        return write_csv(self.cfg.out_dir / name, header, rows, self.cfg.seed)

    def finish(self, name: str = "summary.txt") -> int:
        self.cfg.out_dir.mkdir(parents=True, exist_ok=True)
        (self.cfg.out_dir / name).write_text(f"# seed={self.cfg.seed}\n" + "\n".join(self.lines) + "\n")
        return EXIT_FAIL if self.failed else EXIT_OK


# subcommands -----------------------------------------------------------------

def cmd_simulate(run: _Run) -> int:
    cfg = run.cfg
    coeffs = cfg.coefficients()
    t = cfg.grid.times
    path_rows, surface_rows, bond_rows = [], [], []
    for scen in cfg.family:
        path = generate_path(scen, cfg.grid, cfg.seed)
        sig = np.append(path.sigma_real, np.nan)
        path_rows += [(scen.name, t[k], sig[k], path.b_path[k], path.qv_path[k]) for k in range(t.size)]
        surface = evolve_surface(coeffs, cfg.curve, path)
        ladder = bond_ladder(surface)
        for k in range(t.size):
            for m in range(k, t.size):
                surface_rows.append((scen.name, t[k], t[m], surface.values[k, m]))
                bond_rows.append((scen.name, t[k], t[m], ladder.short_rate[k], ladder.money_market[k],
                                  ladder.bond[k, m], ladder.discounted[k, m]))
    run.csv("paths.csv", ("scenario", "t", "sigma", "B", "QV"), path_rows)
    run.csv("surface.csv", ("scenario", "t", "T", "forward"), surface_rows)
    run.csv("bonds.csv", ("scenario", "t", "T", "short_rate", "money_market", "bond", "discounted_bond"),
            bond_rows)
    run.say(f"simulated {len(cfg.family)} scenario(s) on {cfg.grid.n_steps} steps, seed={cfg.seed}; "
            f"wrote paths.csv, surface.csv, bonds.csv to {cfg.out_dir}")
    return run.finish()


def _check_drift(run: _Run, coeffs) -> None:
    prices, report = check_drift_condition(coeffs, run.cfg.drift_tolerance)
    t = run.cfg.grid.times
    run.csv("residuals.csv", ("t", "T", "residual_alpha", "residual_gamma"),
            ((t[k], t[m], report.residual_alpha[k, m], report.residual_gamma[k, m, 0, 0])
             for k in range(t.size) for m in range(k, t.size)))
    run.csv("market_prices.csv", ("t", "kappa", "lambda"),
            ((t[k], prices.kappa[k, 0], prices.lam[k, 0, 0, 0]) for k in range(t.size)))
    run.verdict("drift", report.certificate,
                f"{report.summary()}; max|kappa, lambda|={prices.max_norm:.3e}")


def _check_martingale(run: _Run, coeffs) -> None:
    cfg = run.cfg
    try:
        rep = martingale_check(coeffs, cfg.curve, cfg.maturity, cfg.family, cfg.paths, cfg.checkpoints,
                               cfg.seed, n_se=cfg.n_se, allowance_c=cfg.allowance_c,
                               require_risk_neutral=cfg.require_risk_neutral,
                               drift_tolerance=cfg.drift_tolerance, chunk_size=cfg.chunk_size)
    except UncertifiedCoefficientsError as exc:
        run.verdict("martingale", False, f"refused: {exc}")
        return
    run.csv("martingale.csv", ("scenario", "t", "T", "mean", "initial", "deviation", "stderr", "se_ratio",
                               "allowance", "passed"),
            ((r.scenario, r.t, rep.maturity, r.mean, r.initial, r.deviation, r.stderr, r.se_ratio,
              r.allowance, r.passed) for r in rep.rows))
    worst = max(rep.rows, key=lambda r: r.deviation - rep.n_se * r.stderr - r.allowance)
    run.verdict("martingale", rep.passed,
                f"{len(rep.failures())}/{len(rep.rows)} failing; c={rep.c:.3e} dt={rep.dt:g}; worst "
                f"{worst.scenario} t={worst.t:g} |dev|={worst.deviation:.3e} ({worst.se_ratio:.2f} SE)")


def _check_fubini(run: _Run, coeffs) -> None:
    cfg = run.cfg
    path = generate_path(cfg.family[0], cfg.grid, cfg.seed)
    t_mid = cfg.grid.times[cfg.grid.index_of(cfg.maturity) // 2]
    alpha, beta, gamma = coeffs.scalar_fields()
    rows, worst = [], 0.0
    for name, phi in (("alpha", alpha), ("beta", beta), ("gamma", gamma)):
        res = fubini_check(phi, path, t_mid, cfg.maturity)
        for key, (lhs, rhs) in res.pairs.items():
            rows.append((name, key, t_mid, cfg.maturity, lhs, rhs, abs(lhs - rhs)))
        worst = max(worst, res.max_discrepancy())
    run.csv("fubini.csv", ("integrand", "integrator", "t", "T", "s_outer", "u_outer", "abs_diff"), rows)
    run.verdict("fubini", worst <= FUBINI_TOLERANCE,
                f"max |diff|/(1+|value|) = {worst:.3e} (tol {FUBINI_TOLERANCE:.0e})")


def _check_product_rule(run: _Run, coeffs) -> None:
    cfg = run.cfg
    beta = coeffs.scalar_fields()[1]
    lhs, rhs = product_rule_check(beta, cfg.grid, 0.0, cfg.maturity)
    tol = product_rule_tolerance(beta, cfg.grid, 0.0, cfg.maturity)
    run.csv("product_rule.csv", ("t", "T", "quadrature", "b_squared", "abs_diff", "tolerance"),
            [(0.0, cfg.maturity, lhs, rhs, abs(lhs - rhs), tol)])
    run.verdict("product_rule", abs(lhs - rhs) <= tol,
                f"int 2 beta b = {lhs:.17g}, b^2 = {rhs:.17g} (tol {tol:.2e})")


def _check_novikov(run: _Run, coeffs) -> None:
    cfg = run.cfg
    rep = novikov_bound_check(coeffs, cfg.maturity, cfg.family, cfg.paths, cfg.seed, cfg.novikov,
                              cfg.chunk_size)
    if not rep.verifiable:
        run.verdict("novikov", False, rep.message)
        return
    rows = []
    for entry in (rep.drift_term, rep.diffusion_term):
        for e in entry.estimate.estimates:
            rows.append((entry.name, e.scenario, e.mean, e.stderr, entry.bound, e.mean <= entry.bound))
    run.csv("novikov.csv", ("expectation", "scenario", "estimate", "stderr", "bound", "below_bound"), rows)
    p = rep.params
    run.verdict("novikov", rep.passed,
                f"p={p.p:g} q={p.q:g} p'={p.p_prime:g} q'={p.q_prime:g}; drift sup {rep.drift_term.estimate.sup:.4g}"
                f" <= {rep.drift_term.bound:.4g}, diffusion sup {rep.diffusion_term.estimate.sup:.4g}"
                f" <= {rep.diffusion_term.bound:.4g} (family estimates are lower bounds)")


def _check_vasicek(run: _Run) -> None:
    cfg = run.cfg
    try:
        rep = vasicek_impossibility(cfg.vasicek_theta, cfg.vasicek_mu, cfg.curve, cfg.family, cfg.grid, cfg.seed)
    except ValueError as exc:
        raise ConfigError("family", str(exc)) from exc
    header = ("t", "spread", "analytic_lower_bound") + tuple(f"residual[{s}]" for s in rep.scenarios)
    run.csv("vasicek.csv", header,
            ((rep.times[k], rep.spread[k], rep.lower_bound[k], *rep.residuals[:, k]) for k in range(rep.times.size)))
    fit = "classical fit possible" if rep.classical_fit_possible else "classical fit impossible"
    t_end = rep.times[-1]
    run.verdict("vasicek", rep.consistent,
                f"{fit}; spread at t={t_end:g}: {rep.spread[-1]:.6g}, analytic lower bound "
                f"{rep.lower_bound[-1]:.6g}, Euler allowance {rep.allowance:.2e}")


_COEFFICIENT_CHECKS = {
    "drift": _check_drift,
    "martingale": _check_martingale,
    "fubini": _check_fubini,
    "product_rule": _check_product_rule,
    "novikov": _check_novikov,
}


def cmd_check(run: _Run) -> int:
    cfg = run.cfg
    coeffs = cfg.coefficients() if set(cfg.checks) - {"vasicek"} else None
    for name in cfg.checks:
        if name == "vasicek":
            _check_vasicek(run)
        else:
            _COEFFICIENT_CHECKS[name](run, coeffs)
    return run.finish()


def cmd_price(run: _Run) -> int:
    cfg = run.cfg
    model = cfg.affine_model
    if model is None:
        raise ConfigError("model.kind", "price needs an affine model (ho_lee or hull_white)")
    coeffs = cfg.coefficients()
    if cfg.kappa or cfg.lam:
        raise ConfigError("market_prices", "affine prices assume zero market prices")
    t = cfg.grid.times
    price_rows, rate_rows = [], []
    for scen in cfg.family:
        path = generate_path(scen, cfg.grid, cfg.seed)
        state = simulate_short_rate(model, path)
        affine = affine_price_table(model, state)
        hjm = bond_ladder(evolve_surface(coeffs, cfg.curve, path)).bond
        for k in range(t.size):
            rate_rows.append((scen.name, t[k], state.r[k], state.q[k]))
            for m in range(k, t.size):
                price_rows.append((scen.name, t[k], t[m], affine[k, m], hjm[k, m], abs(affine[k, m] - hjm[k, m])))
        run.say(f"{model.name} / {scen.name}: max |affine - hjm| = {np.nanmax(np.abs(affine - hjm)):.3e}")
    run.csv("prices.csv", ("scenario", "t", "T", "affine", "hjm", "abs_error"), price_rows)
    run.csv("short_rate.csv", ("scenario", "t", "r", "q"), rate_rows)
    return run.finish()


def cmd_drift(run: _Run, action: str) -> int:
    cfg = run.cfg
    coeffs = cfg.coefficients()
    if action == "generate":
        out = cfg.out_dir / "coefficients.csv"
        out.parent.mkdir(parents=True, exist_ok=True)
        write_coefficients_csv(coeffs, out, comment=f"seed={cfg.seed}")
        run.say(f"wrote {coeffs.label} coefficients (kappa={cfg.kappa:g}, lambda={cfg.lam:g}) to {out}")
        return run.finish()
    _check_drift(run, coeffs)
    return run.finish()


def cmd_vasicek(run: _Run) -> int:
    _check_vasicek(run)
    return run.finish()


# entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="YAML experiment file")
    common.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
    common.add_argument("--seed", type=int, help="master seed (overrides monte_carlo.seed)")
    common.add_argument("--paths", type=int, help="paths per scenario (overrides monte_carlo.paths)")
    common.add_argument("--quiet", action="store_true", help="suppress the summary on stdout")

    parser = argparse.ArgumentParser(prog="robust-hjm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="write paths, forward surfaces and bond ladders")
    sub.add_parser("check", parents=[common], help="run the configured checks")
    sub.add_parser("price", parents=[common], help="affine vs HJM bond prices")
    drift = sub.add_parser("drift", help="generate or check drift-consistent coefficients")
    drift_sub = drift.add_subparsers(dest="action", required=True)
    drift_sub.add_parser("generate", parents=[common])
    drift_sub.add_parser("check", parents=[common])
    sub.add_parser("vasicek", parents=[common], help="Vasicek residual spread across scenarios")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config).with_overrides(seed=args.seed, paths=args.paths, out_dir=args.out)
        run = _Run(cfg, args.quiet)
        if args.command == "drift":
            return cmd_drift(run, args.action)
        return {"simulate": cmd_simulate, "check": cmd_check, "price": cmd_price,
                "vasicek": cmd_vasicek}[args.command](run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
