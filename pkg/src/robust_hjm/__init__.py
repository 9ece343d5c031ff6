"""HJM forward-rate models under volatility uncertainty (G-Brownian motion)."""

from .affine import (AffineTermStructure, affine_bond_price, affine_price_table, affine_vs_hjm_crosscheck,
                     simulate_short_rate, vasicek_impossibility)
from .drift import (MarketPrices, apply_market_prices, check_drift_condition, classical_reduction_check,
                    generate_risk_neutral)
from .hjm import (HjmCoefficients, InitialCurve, bond_ladder, discounted_bond_samples, evolve_surface,
                  fubini_check, ho_lee_beta, hull_white_beta, log_discounted_bond_two_ways,
                  product_rule_check)
from .robust import NovikovParams, martingale_check, novikov_bound_check, robust_expect
from .scenarios import (GPath, TimeGrid, VolatilityBand, VolatilityScenario, generate_path, generate_paths,
                        scenario_family)

__version__ = "0.1.0"

__all__ = [
    "AffineTermStructure", "affine_bond_price", "affine_price_table", "affine_vs_hjm_crosscheck",
    "simulate_short_rate", "vasicek_impossibility",
    "MarketPrices", "apply_market_prices", "check_drift_condition", "classical_reduction_check",
    "generate_risk_neutral",
    "HjmCoefficients", "InitialCurve", "bond_ladder", "discounted_bond_samples", "evolve_surface",
    "fubini_check", "ho_lee_beta", "hull_white_beta", "log_discounted_bond_two_ways", "product_rule_check",
    "NovikovParams", "martingale_check", "novikov_bound_check", "robust_expect",
    "GPath", "TimeGrid", "VolatilityBand", "VolatilityScenario", "generate_path", "generate_paths",
    "scenario_family",
]
