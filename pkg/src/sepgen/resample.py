"""Cluster (block) bootstrap over the whole selection-plus-estimation pipeline.

Each replicate resamples experiment clusters with replacement (keeping the
cluster count) and population rows with replacement (keeping m, unless the
population is frozen), then re-runs graph fitting, set selection, weighting,
and estimation from scratch. Replicates draw from RNG streams keyed by
(master seed, replicate index), so reports are bitwise identical for any
worker count. Infeasible replicates are excluded from SE/CI and reported as
a proportion instead.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from ._parallel import run_indexed
from .data import StackedDataset
from .errors import DataError, TotalInfeasibilityError
from .estimators import treatment_probabilities
from .pipeline import PipelineConfig, PipelineResult, run_pipeline
from .sepset import INFEASIBLE


@dataclass(frozen=True)
class BootstrapReport:
    """Bootstrap summary for one estimator."""

    estimator: str
    b_replicates: int
    point: float | None
    se: float | None
    ci_low: float | None
    ci_high: float | None
    infeasible_proportion: float
    selection_frequency: dict[str, float]
    set_size_distribution: dict[int, int]
    n_feasible: int

    def to_json_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "B": self.b_replicates,
            "point": self.point,
            "se": self.se,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "infeasible_proportion": self.infeasible_proportion,
            "n_feasible": self.n_feasible,
            "selection_frequency": self.selection_frequency,
            "set_size_distribution": {str(k): v for k, v in self.set_size_distribution.items()},
        }


def _experiment_clusters(dataset: StackedDataset):
    if dataset.cluster is None:
        raise DataError("cluster bootstrap requires a cluster column on experiment rows")
    labels = np.asarray(dataset.cluster)[dataset.experiment_rows]
    if any(lab is None for lab in labels.tolist()):
        raise DataError("cluster bootstrap requires a cluster label on every experiment row")
    order = list(dict.fromkeys(labels.tolist()))
    return [np.flatnonzero(labels == lab) for lab in order]


def _bootstrap_replicate(rep, dataset, config, p_full, cluster_rows, master_seed):
    rng = np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(rep,)))
    k = len(cluster_rows)
    choice = rng.integers(0, k, size=k)
    exp_pos = np.concatenate([cluster_rows[c] for c in choice])
    m = dataset.m_population
    pop_pos = np.arange(m) if config.freeze_population else rng.integers(0, m, size=m)
    replicate = dataset.take(exp_pos, pop_pos)
    result = run_pipeline(replicate, config, p=p_full[exp_pos])
    points = {kind: est.point for kind, est in result.estimates.items()}
    return result.solution.status, result.solution.selected, points


def run_bootstrap(
    dataset: StackedDataset,
    pipeline_config: PipelineConfig,
    b_replicates: int,
    master_seed: int,
    threads: int = 1,
) -> tuple[dict[str, BootstrapReport], PipelineResult]:
    """Full-sample pipeline plus B replicates; one report per estimator."""
    if b_replicates < 2:
        raise ValueError("need at least 2 bootstrap replicates")
    cluster_rows = _experiment_clusters(dataset)
    p_full = treatment_probabilities(dataset, pipeline_config.p_treat)
    full = run_pipeline(dataset, pipeline_config, p=p_full)

    draws = run_indexed(
        _bootstrap_replicate,
        b_replicates,
        threads=threads,
        args=(dataset, pipeline_config, p_full, cluster_rows, master_seed),
    )

    feasible = [(sel, pts) for status, sel, pts in draws if status != INFEASIBLE]
    n_inf = b_replicates - len(feasible)
    if not feasible:
        raise TotalInfeasibilityError(
            "every bootstrap replicate produced an infeasible separating-set program"
        )
    size_hist = Counter(len(sel) for sel, _ in feasible)
    counts = Counter()
    for sel, _ in feasible:
        counts.update(sel)
    n_feasible = len(feasible)
    selection_frequency = {
        name: counts.get(name, 0) / n_feasible for name in dataset.covariate_names
    }

    reports = {}
    for kind in pipeline_config.estimators:
        values = np.array([pts[kind] for _, pts in feasible], dtype=np.float64)
        se = float(values.std(ddof=1)) if len(values) >= 2 else None
        ci_low, ci_high = (np.percentile(values, [2.5, 97.5]) if len(values) else (None, None))
        point = full.estimates[kind].point if kind in full.estimates else None
        reports[kind] = BootstrapReport(
            estimator=kind,
            b_replicates=b_replicates,
            point=point,
            se=se,
            ci_low=float(ci_low),
            ci_high=float(ci_high),
            infeasible_proportion=n_inf / b_replicates,
            selection_frequency=selection_frequency,
            set_size_distribution=dict(sorted(size_hist.items())),
            n_feasible=n_feasible,
        )
    return reports, full


def cluster_bootstrap(
    dataset: StackedDataset,
    pipeline_config: PipelineConfig,
    b_replicates: int,
    master_seed: int,
    threads: int = 1,
) -> BootstrapReport:
    """Bootstrap report for the first configured estimator."""
    reports, _ = run_bootstrap(dataset, pipeline_config, b_replicates, master_seed, threads)
    return reports[pipeline_config.estimators[0]]
