"""Nested and multilevel Monte Carlo risk estimation toolkit."""

from .core import (
    CdfQuantileResult,
    EstimateResult,
    LevelStats,
    NestedProblem,
    PayoffTransform,
    estimate,
    estimate_cdf_and_quantile,
    evaluate_cdf,
    sample_inner_mean,
    sample_level_antithetic,
    sample_level_standard,
)
from .errors import (
    BudgetInfeasibleError,
    ConfigError,
    InfeasiblePlanError,
    NestmcError,
    NonFiniteSampleError,
)
from .plans import (
    MlmcPlan,
    ProxyEvaluation,
    StructuralConstants,
    approx_total_cost,
    cost_per_outer,
    epsilon_for_budget,
    gamma_tau,
    mse_proxy,
    mu_tilde,
    nested_K_cardano,
    optimal_J,
    optimal_q,
    phi_bar,
    phi_bar_star,
    plan_for_epsilon,
    plan_table1,
    plan_table2,
    proxy_evaluation,
    v_bar,
)
from .weights import WeightTable, compute_weights

__version__ = "0.1.0"

__all__ = [
    "BudgetInfeasibleError",
    "CdfQuantileResult",
    "ConfigError",
    "EstimateResult",
    "InfeasiblePlanError",
    "LevelStats",
    "MlmcPlan",
    "NestedProblem",
    "NestmcError",
    "NonFiniteSampleError",
    "PayoffTransform",
    "ProxyEvaluation",
    "StructuralConstants",
    "WeightTable",
    "approx_total_cost",
    "compute_weights",
    "cost_per_outer",
    "epsilon_for_budget",
    "estimate",
    "estimate_cdf_and_quantile",
    "evaluate_cdf",
    "gamma_tau",
    "mse_proxy",
    "mu_tilde",
    "nested_K_cardano",
    "optimal_J",
    "optimal_q",
    "phi_bar",
    "phi_bar_star",
    "plan_for_epsilon",
    "plan_table1",
    "plan_table2",
    "proxy_evaluation",
    "sample_inner_mean",
    "sample_level_antithetic",
    "sample_level_standard",
    "v_bar",
    "__version__",
]
