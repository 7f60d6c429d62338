"""Finite-horizon mean field game solver suite.

Tabular solvers (fixed point, fictitious play, policy iteration, mirror
descent, Munchausen mirror descent, Boltzmann iteration) and their deep
model-free counterparts, evaluated by exact exploitability on a set of
benchmark games.
"""

from .core import (
    Distribution,
    EnvironmentModel,
    HorizonSpec,
    MeanFieldFlow,
    NegativeMass,
    NonFiniteGradient,
    NotNormalized,
    Policy,
    QTable,
    ShapeMismatch,
    SolverParams,
    ZeroSupportReference,
    stable_softmax,
    validate_distribution,
)
from .dynamics import (
    evaluate_policy,
    exploitability,
    forward_distribution,
    greedy_policy,
    optimal_q,
    total_reward,
)
from .exact_solvers import (
    SolverTrace,
    banach_picard,
    boltzmann_iteration,
    fictitious_play,
    momd,
    omd,
    policy_iteration,
)
from .environments import (
    GridSpec,
    LqParams,
    MultiPopParams,
    SisParams,
    four_rooms_env,
    grid_spec_from_map,
    lq_env,
    maze_env,
    multipop_env,
    parse_map,
    sis_env,
    toy_env,
)

__version__ = "0.1.0"
