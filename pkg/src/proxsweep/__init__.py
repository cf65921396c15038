"""Sweeping processes with smooth level-set constraints."""

from .constraint import (
    ConstantsBundle,
    LevelSetConstraint,
    distance_to_boundary,
    distance_to_set,
    hausdorff_estimate,
    normal_ray,
    project_to_set,
    project_with_info,
    prox_inequality_residual,
)
from .errors import (
    ConfigError,
    MaxIterExceeded,
    NoConvergence,
    NotAContraction,
    NotOnBoundary,
    OutsideProxTube,
    ProxSweepError,
    SweepGateViolated,
)
from .library import (
    make_constraint,
    make_moving_ball,
    make_scalar_play,
    make_star_set,
    make_state_map,
    play_oracle,
)
from .paths import PLPath, TimeGrid, offset_grid, uniform_grid, w11_distance
from .sweep_explicit import SweepProblem, Trajectory, solve, solve_boundary_ode, solve_catching_up
from .sweep_implicit import ImplicitProblem, StateMap, check_contraction, solve_picard

__version__ = "0.1.0"
