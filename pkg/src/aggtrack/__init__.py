"""Distributed online aggregative optimization with Projected Aggregative Tracking."""

from .errors import AggTrackError, InvariantViolation
from .graph import Network, build_metropolis, consensus_contraction, from_weights, load_graph_spec
from .metrics import RoundTrace, average_regret, dynamic_regret, lemma_monitors, violation_profile
from .oracle import OracleSolution, solve_instant, solve_stream
from .pat import AgentState, AlgorithmParams, SimulationRun, init, run_horizon, simulate, step
from .problem import (
    ProblemConstants,
    ProblemInstant,
    ProblemStream,
    VariationBounds,
    aggregate,
    global_cost,
    global_grad,
    measure_variations,
)
from .projection import Box, Halfspace, Intersection, WholeSpace, contains, project
from .stability import StabilityModel, build_model, find_delta, is_schur, spectral_radius, theoretical_bounds

__version__ = "0.1.0"
