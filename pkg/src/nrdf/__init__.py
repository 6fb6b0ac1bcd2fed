"""Belief-space dynamic programming for zero-delay lossy-compression bounds.

Computes a non-asymptotic lower bound on the per-stage rate of zero-delay
variable-rate lossy compression of finite-alphabet Markov sources: a
backward sweep over a quantized belief space solves every dynamic-programming
cell with an alternating-minimization scheme, and a forward pass extracts
the belief trajectory, policies, and per-stage rate/distortion.
"""

from .am import (
    AmResult,
    AmTrace,
    ExponentWeights,
    StoppingBounds,
    exponent_weights,
    output_update,
    policy_update,
    run_branch_am,
    stopping_gap,
)
from .backend import active_name, compiled_available
from .backward import BackwardTables, StageTables, backward_pass, load_tables, save_tables
from .errors import (
    ConsistencyError,
    ConvergenceError,
    GridTooLargeError,
    NrdfError,
    ShapeError,
    SupportViolationError,
    TableIOError,
    TableSizeError,
    ValidationError,
)
from .forward import StageRecord, Trajectory, best_next_belief, forward_pass, init_stage0
from .grid import BeliefGrid, generate_grid, project, projection_distance
from .model import (
    Belief,
    DistortionModel,
    LagrangeSchedule,
    MarkovSource,
    OutputKernel,
    Policy,
    PredictiveBelief,
    StageAlphabets,
    StagePoint,
    bayes_belief_update,
    output_marginal_step,
    predictive_belief,
    prob_vector,
    stage_distortion,
    stage_objective,
)

__version__ = "0.1.0"
