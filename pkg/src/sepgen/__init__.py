"""Separating-set estimation and experiment-to-population generalization.

Workflow: load stacked experiment/population data, estimate a mixed Markov
random field on the experimental rows, solve a constrained minimum set cover
over simple paths to find a separating set, then estimate the population
average treatment effect by weighting, outcome modeling, or augmented
weighting, with cluster-bootstrap uncertainty.
"""

from .data import (
    DatasetSchema,
    StackedDataset,
    StandardizationRecord,
    VariableSpec,
    load_csv,
    standardize,
    unstandardize,
)
from .estimators import (
    PateEstimate,
    SamplingModel,
    aipw_pate,
    compute_weights,
    fit_sampling_model,
    ipw_pate,
    outcome_model_pate,
    sate_dim,
    treatment_probabilities,
)
from .glm import GlmFamily, LassoPath, fit_path, kkt_violation, select_ebic
from .mgm import MarkovGraph, MgmConfig, fit_mgm, is_separated, remove_node
from .pipeline import PipelineConfig, PipelineResult, run_pipeline
from .resample import BootstrapReport, cluster_bootstrap, run_bootstrap
from .sepset import (
    PathMatrix,
    SeparatingSetSolution,
    enumerate_simple_paths,
    estimate_exact_sepset,
    estimate_marginal_sepset,
    solve_min_cover,
)
from .simulate import SimConfig, SimResult, run_simulation

__version__ = "0.1.0"

__all__ = [
    "DatasetSchema",
    "StackedDataset",
    "StandardizationRecord",
    "VariableSpec",
    "load_csv",
    "standardize",
    "unstandardize",
    "GlmFamily",
    "LassoPath",
    "fit_path",
    "select_ebic",
    "kkt_violation",
    "MarkovGraph",
    "MgmConfig",
    "fit_mgm",
    "remove_node",
    "is_separated",
    "PathMatrix",
    "SeparatingSetSolution",
    "enumerate_simple_paths",
    "solve_min_cover",
    "estimate_marginal_sepset",
    "estimate_exact_sepset",
    "PateEstimate",
    "SamplingModel",
    "fit_sampling_model",
    "compute_weights",
    "treatment_probabilities",
    "ipw_pate",
    "outcome_model_pate",
    "aipw_pate",
    "sate_dim",
    "PipelineConfig",
    "PipelineResult",
    "run_pipeline",
    "BootstrapReport",
    "cluster_bootstrap",
    "run_bootstrap",
    "SimConfig",
    "SimResult",
    "run_simulation",
]
