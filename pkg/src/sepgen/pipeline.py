"""One pass of the full procedure: select a separating set, then estimate.

Used by the bootstrap (once per replicate) and by the CLI (full sample).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import StackedDataset
from .estimators import (
    aipw_pate,
    compute_weights,
    fit_sampling_model,
    ipw_pate,
    outcome_model_pate,
    sate_dim,
    treatment_probabilities,
    PateEstimate,
)
from .mgm import MgmConfig
from .sepset import (
    DEFAULT_PATH_CAP,
    EXACT,
    INFEASIBLE,
    MARGINAL,
    SeparatingSetSolution,
    estimate_exact_sepset,
    estimate_marginal_sepset,
)

ESTIMATOR_NAMES = ("ipw", "outcome_model", "aipw", "naive")


@dataclass(frozen=True)
class PipelineConfig:
    """Everything the per-replicate procedure needs besides the data."""

    mode: str = MARGINAL
    sampling_set: tuple[str, ...] = ()
    heterogeneity_set: tuple[str, ...] = ()
    unmeasured: tuple[str, ...] = ()
    estimators: tuple[str, ...] = ("ipw",)
    mgm: MgmConfig = field(default_factory=MgmConfig)
    path_cap: int = DEFAULT_PATH_CAP
    p_treat: float | None = None
    weight_cap: float | None = None
    freeze_population: bool = False

    def __post_init__(self):
        object.__setattr__(self, "sampling_set", tuple(self.sampling_set))
        object.__setattr__(self, "heterogeneity_set", tuple(self.heterogeneity_set))
        object.__setattr__(self, "unmeasured", tuple(self.unmeasured))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if self.mode not in (MARGINAL, EXACT):
            raise ValueError(f"mode must be marginal or exact, got {self.mode!r}")
        if not self.sampling_set:
            raise ValueError("sampling_set must not be empty")
        if self.mode == EXACT and not self.heterogeneity_set:
            raise ValueError("exact mode requires a nonempty heterogeneity_set")
        if not self.estimators:
            raise ValueError("at least one estimator is required")
        unknown = [e for e in self.estimators if e not in ESTIMATOR_NAMES]
        if unknown:
            raise ValueError(f"unknown estimators: {unknown}")


@dataclass(frozen=True)
class PipelineResult:
    solution: SeparatingSetSolution
    estimates: dict[str, PateEstimate]


def run_pipeline(dataset: StackedDataset, config: PipelineConfig, p=None) -> PipelineResult:
    """Select the separating set on this dataset and compute the estimators.

    Returns empty estimates when the cover program is infeasible.
    """
    if p is None:
        p = treatment_probabilities(dataset, config.p_treat)
    else:
        p = np.asarray(p, dtype=np.float64)
    if config.mode == MARGINAL:
        solution = estimate_marginal_sepset(
            dataset, config.sampling_set, config.unmeasured, config.mgm, config.path_cap
        )
    else:
        solution = estimate_exact_sepset(
            dataset,
            config.sampling_set,
            config.heterogeneity_set,
            config.unmeasured,
            config.mgm,
            config.path_cap,
        )
    if solution.status == INFEASIBLE:
        return PipelineResult(solution, {})
    w = solution.selected
    estimates: dict[str, PateEstimate] = {}
    pi = None
    for kind in config.estimators:
        if kind == "naive":
            estimates[kind] = sate_dim(dataset)
            continue
        if kind in ("ipw", "aipw") and pi is None:
            model = fit_sampling_model(dataset, w)
            pi = compute_weights(model, cap=config.weight_cap)
        if kind == "ipw":
            est = ipw_pate(dataset, pi, p)
        elif kind == "outcome_model":
            est = outcome_model_pate(dataset, w)
        else:
            est = aipw_pate(dataset, w, pi, p)
        estimates[kind] = replace(est, set_used=w)
    return PipelineResult(solution, estimates)
