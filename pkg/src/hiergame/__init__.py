"""Variance-reduced solvers for stochastic hierarchical (leader-follower) games.

Modules
-------
geometry
    Projectable convex sets (box, ball, simplex, products).
game
    Game model, stochastic oracles and the benchmark instances.
lower_level
    Follower VI solvers, exact and certified-inexact.
smoothing
    Zeroth-order estimators of smoothed implicit-cost gradients.
solver
    Forward-backward-forward inner loop, outer loop and schedules.
metrics
    Gap function, deterministic MVI solves and least-norm points.
cli
    Experiment harness and report writers.
"""

from . import geometry, lower_level, game, smoothing, metrics, kernels, solver  # noqa: F401
from .errors import (  # noqa: F401
    ConfigError,
    ConvergenceError,
    DomainError,
    HierGameError,
    InputError,
    NumericError,
)
from .game import BENCHMARKS, HierarchicalGame, make_benchmark  # noqa: F401
from .solver import (  # noqa: F401
    RunReport,
    Schedule,
    as_convergence_schedule,
    check_schedule_conditions,
    inexact_gap_schedule,
    theorem_gap_schedule,
    vrhgs,
)

__version__ = "0.1.0"
