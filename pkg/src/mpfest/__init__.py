"""Measurement-based modal participation factors.

Participation factors of a linear system estimated from ringdown
trajectories alone, with the model-based quantities available as an oracle.
"""

__version__ = "0.1.0"

from .errors import MPFError, PipelineError
from .linmodel import (
    LinearSystem,
    ModalDecomposition,
    PFMatrix,
    modal_decompose,
    normalize_pf_column,
    participation_factor,
    participation_matrix,
)
from .simgen import MeasurementSet, Trajectory, generate_scenarios
from .symmetry import SymmetryConfig, select_pair_set
from .transform import assemble_vertex_set, build_transformation
from .estimator import (
    EstimatorConfig,
    PFReport,
    compute_epf,
    estimate_mpf_blackbox,
    estimate_mpf_full,
    estimate_mpf_partial,
    estimate_mpf_subspace,
)
from .diagnostics import attach_diagnostics, condition_bound, error_e1, error_e2

__all__ = [
    "EstimatorConfig",
    "LinearSystem",
    "MPFError",
    "MeasurementSet",
    "ModalDecomposition",
    "PFMatrix",
    "PFReport",
    "PipelineError",
    "SymmetryConfig",
    "Trajectory",
    "assemble_vertex_set",
    "attach_diagnostics",
    "build_transformation",
    "compute_epf",
    "condition_bound",
    "error_e1",
    "error_e2",
    "estimate_mpf_blackbox",
    "estimate_mpf_full",
    "estimate_mpf_partial",
    "estimate_mpf_subspace",
    "generate_scenarios",
    "modal_decompose",
    "normalize_pf_column",
    "participation_factor",
    "participation_matrix",
    "select_pair_set",
]
