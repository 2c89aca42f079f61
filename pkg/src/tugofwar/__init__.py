"""Tug-of-war with noise and gradient drift for the weighted p-Laplacian."""

from .params import (
    GameParams,
    MoveDistribution,
    WeightBoundError,
    WeightField,
    drift_target,
    gamma,
    make_params,
    make_weight,
    move_distribution,
)
from .grid import (
    BoundaryData,
    GridDomain,
    ValueField,
    ball_nodes,
    build_grid,
    extend_boundary,
    make_boundary,
    make_domain,
    value_at,
)
from .solver import SolveReport, apply_T, residual, solve_fixed_point
from .problem import Problem
from .simulator import (
    MCEstimate,
    Strategy,
    Trajectory,
    estimate_value,
    greedy_strategies,
    play_game,
    step,
    supermartingale_check,
)
from .analysis import (
    StudyResult,
    SmoothTestFunction,
    epsilon_study,
    make_test_function,
    moment_check,
    p_limit_study,
    predicted_generator,
    taylor_consistency,
    weighted_p_harmonic_1d,
)

__version__ = "0.1.0"
