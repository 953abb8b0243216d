"""Stochastic high-index saddle search with stochastic eigenvector refinement."""

from .eigensearch import (
    EigenSearchConfig,
    EigenSearchReport,
    UnstableFrame,
    eigen_residual,
    exact_smallest_eigvecs,
    oja_step,
    projection_distance,
    projector_error_bound,
    search_unstable_directions,
)
from .landscapes import build_landscape
from .oracles import NoiseModel, OraclePair, RngStreams, StepSchedule, build_oracles, step_size
from .saddlesearch import (
    KnownSpaceSpec,
    SaddleSearchConfig,
    integrate_saddle_dynamics,
    interpolate_trace,
    reflect,
    run_deterministic_hisd,
    run_known_space,
    run_known_space_batch,
    run_saddle_search,
    run_saddle_search_batch,
    saddle_step,
)
from .trace import Trace

__version__ = "0.1.0"
