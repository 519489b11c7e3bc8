"""BSDEs driven by a Brownian motion and default martingales: simulation,
regression solver, linear pricing, comparison checks and zero-sum games."""

from __future__ import annotations

from .comparison import (
    ComparisonReport,
    check_condition_c,
    compare_solutions,
    counterexample_drivers,
    counterexample_suite,
    random_compliant_pair,
    run_comparison_trials,
)
from .engine import (
    BsdeSolution,
    DriverSpec,
    NodeState,
    RegressionBasis,
    SolverConfig,
    apriori_estimate,
    beta_norm,
    condition_expectation,
    export_csv,
    extract_martingale_coeffs,
    picard_diagnostics,
    solve,
    solve_frozen,
)
from .errors import ConfigError, NumericalError
from .game import (
    GameSpec,
    SaddleResult,
    ThetaSet,
    evaluate_cost,
    girsanov_weights,
    hamiltonian,
    robust_price,
    saddle_search,
    separable_game,
    solve_game_bsde,
    verify_saddle,
    weighted_default_intensity,
)
from .jump_ito import (
    ExponentialSpec,
    ForwardSdeSpec,
    ito_convergence,
    ito_residual,
    simulate_forward,
    stochastic_exponential,
)
from .kernel import (
    DefaultModel,
    PathBundle,
    TimeGrid,
    build_grid,
    load_bundle,
    martingale_check,
    save_bundle,
    simulate_bundle,
    simulate_defaults,
)
from .linear import (
    LinearBsdeSpec,
    MarketSpec,
    adjoint_price,
    analytic_linear_price,
    linear_driver,
    market_linear_coefficients,
    replication_strategy,
)
from .rng import PathRNG, philox4x32
from .terminal import TerminalSpec

__version__ = "0.1.0"
