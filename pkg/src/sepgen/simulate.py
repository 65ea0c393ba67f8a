"""Synthetic study of the full procedure on a known nine-covariate design.

Covariates share one latent driver (X1) with loadings chosen to reproduce a
fixed target correlation matrix; sampling into the experiment follows a
logistic model in X4 and X5; outcomes carry treatment-effect heterogeneity
in X2 and X3 with a true population effect of exactly 5. The runner draws
data, estimates marginal and exact separating sets, computes the requested
estimators for oracle and estimated sets plus a naive difference in means,
and classifies every estimated set against the known structure.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from ._parallel import run_indexed
from .data import StackedDataset, VariableSpec
from .errors import DegenerateVariableError, PoolTooSmallError
from .estimators import (
    aipw_pate,
    compute_weights,
    fit_sampling_model,
    ipw_pate,
    outcome_model_pate,
    sate_dim,
)
from .mgm import MarkovGraph, MgmConfig, fit_mgm, is_separated, remove_node
from .sepset import (
    DEFAULT_PATH_CAP,
    INFEASIBLE,
    exact_solution_from_graph,
    marginal_solution_from_graph,
)

COVARIATES = ("X1", "X2", "X3", "X4", "X5", "X6", "X7", "X8", "X9")
ORACLE_SAMPLING_SET = ("X4", "X5")
ORACLE_HETEROGENEITY_SET = ("X2", "X3")
ORACLE_MIN_SEPSET = ("X1",)
TRUE_PATE = 5.0
TREATMENT_SHARE = 0.5

BUCKETS = (
    "min_sepset",
    "similar_sampling",
    "similar_heterogeneity",
    "other_appropriate",
    "inappropriate",
)

_TRUE_EDGES = (
    ("X1", "X2"),
    ("X1", "X3"),
    ("X1", "X4"),
    ("X1", "X9"),
    ("X9", "X5"),
    ("X2", "X8"),
    ("Y", "X2"),
    ("Y", "X3"),
    ("Y", "X6"),
    ("Y", "X8"),
)

# Target correlation matrix of X1..X9 implied by the loadings below.
TARGET_CORRELATION = np.array(
    [
        [1.00, -0.70, 0.70, 0.70, -0.21, 0.00, 0.00, 0.49, -0.70],
        [-0.70, 1.00, -0.49, -0.49, 0.147, 0.00, 0.00, -0.70, 0.49],
        [0.70, -0.49, 1.00, 0.49, -0.147, 0.00, 0.00, 0.343, -0.49],
        [0.70, -0.49, 0.49, 1.00, -0.147, 0.00, 0.00, 0.343, -0.49],
        [-0.21, 0.147, -0.147, -0.147, 1.00, 0.00, 0.00, -0.1029, 0.30],
        [0.00, 0.00, 0.00, 0.00, 0.00, 1.00, 0.00, 0.00, 0.00],
        [0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 1.00, 0.00, 0.00],
        [0.49, -0.70, 0.343, 0.343, -0.1029, 0.00, 0.00, 1.00, -0.343],
        [-0.70, 0.49, -0.49, -0.49, 0.30, 0.00, 0.00, -0.343, 1.00],
    ]
)


def true_structure_graph() -> MarkovGraph:
    """Fixed reference graph used to judge whether an estimated set separates."""
    nodes = COVARIATES + ("Y",)
    q = len(nodes)
    adj = np.zeros((q, q), dtype=bool)
    for a, b in _TRUE_EDGES:
        i, j = nodes.index(a), nodes.index(b)
        adj[i, j] = adj[j, i] = True
    weight = adj.astype(np.float64)
    return MarkovGraph(nodes, adj, weight)


def gen_covariates(rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw the nine covariates; every marginal variance is 1 by construction."""
    if size < 1:
        raise ValueError("size must be positive")
    eps = rng.standard_normal((size, 9))
    r7 = np.sqrt(1.0 - 0.7**2)
    x1 = eps[:, 0]
    x2 = -0.7 * x1 + r7 * eps[:, 1]
    x3 = 0.7 * x1 + r7 * eps[:, 2]
    x4 = 0.7 * x1 + r7 * eps[:, 3]
    x9 = -0.7 * x1 + r7 * eps[:, 8]
    x5 = 0.3 * x9 + np.sqrt(1.0 - 0.3**2) * eps[:, 4]
    x6 = eps[:, 5]
    x7 = eps[:, 6]
    x8 = -0.7 * x2 + r7 * eps[:, 7]
    return np.column_stack([x1, x2, x3, x4, x5, x6, x7, x8, x9])


def gen_outcomes(rng: np.random.Generator, x: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Observed outcomes under assignment t; heterogeneity loads on X2 and X3."""
    t = np.asarray(t, dtype=np.float64)
    if not np.isin(t, (0.0, 1.0)).all():
        raise ValueError("treatment must be 0/1")
    eps = rng.standard_normal(len(x))
    return 5.0 * t + 10.0 * x[:, 2] * t - 10.0 * x[:, 1] * t + x[:, 5] - 3.0 * x[:, 7] + eps


def gen_potential_outcomes(rng: np.random.Generator, x: np.ndarray):
    """Both potential outcomes per unit, sharing one noise draw."""
    eps = rng.standard_normal(len(x))
    y0 = x[:, 5] - 3.0 * x[:, 7] + eps
    y1 = 5.0 + 10.0 * x[:, 2] - 10.0 * x[:, 1] + y0
    return y0, y1


def gen_sampling(rng: np.random.Generator, x: np.ndarray, n: int):
    """Logistic selection on X4 and X5 over a finite pool.

    The raw score is standardized over the pool and scaled by 0.25, keeping
    selection probabilities bounded away from 0 and 1; the first n Bernoulli
    successes form the experiment.
    """
    raw = -20.0 * x[:, 3] + 20.0 * x[:, 4]
    sd = raw.std(ddof=1)
    if not np.isfinite(sd) or sd < 1e-12:
        raise DegenerateVariableError("sampling score has zero variance over the pool")
    z = 0.25 * (raw - raw.mean()) / sd
    prob = 1.0 / (1.0 + np.exp(-z))
    selected = np.flatnonzero(rng.random(len(x)) < prob)
    if selected.size < n:
        raise PoolTooSmallError(
            f"pool produced only {selected.size} members for n={n}; raise pool_factor"
        )
    return selected[:n], prob


_SPECS = tuple(VariableSpec(name) for name in COVARIATES)


def simulate_dataset(rng: np.random.Generator, n: int, m: int, pool_factor: int = 8) -> StackedDataset:
    """One draw of experiment (size n) plus population sample (size m)."""
    pool = gen_covariates(rng, pool_factor * n)
    chosen, _ = gen_sampling(rng, pool, n)
    x_exp = pool[chosen]
    t = (rng.random(n) < TREATMENT_SHARE).astype(np.float64)
    y = gen_outcomes(rng, x_exp, t)
    x_pop = gen_covariates(rng, m)
    cluster = np.concatenate(
        [np.array([str(i) for i in range(n)], dtype=object), np.full(m, None, dtype=object)]
    )
    return StackedDataset(
        specs=_SPECS,
        x=np.vstack([x_exp, x_pop]),
        s=np.concatenate([np.ones(n, dtype=np.int8), np.zeros(m, dtype=np.int8)]),
        t=np.concatenate([t, np.full(m, np.nan)]),
        y=np.concatenate([y, np.full(m, np.nan)]),
        cluster=cluster,
    )


@dataclass(frozen=True)
class SimConfig:
    """Parameters of one simulation cell (a single experiment size)."""

    n: int
    m: int = 10_000
    pool_factor: int = 8
    reps: int = 500
    seed: int = 0
    constraint_x1_unmeasured: bool = False
    estimators: tuple[str, ...] = ("ipw",)
    estimate_sets: bool = True
    mgm: MgmConfig = field(default_factory=MgmConfig)
    path_cap: int = DEFAULT_PATH_CAP

    def __post_init__(self):
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if self.n < 100:
            raise ValueError("n must be at least 100")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.m < 1 or self.pool_factor < 1:
            raise ValueError("m and pool_factor must be positive")
        unknown = [e for e in self.estimators if e not in ("ipw", "outcome_model", "aipw", "naive")]
        if unknown:
            raise ValueError(f"unknown estimators: {unknown}")


@dataclass(frozen=True)
class BiasRow:
    n: int
    estimator: str
    set_kind: str
    bias: float
    se: float
    rmse: float
    reps_used: int


@dataclass(frozen=True)
class TypeRow:
    n: int
    set_kind: str
    bucket: str
    frequency: float


@dataclass(frozen=True)
class SetRecord:
    """Per-replicate record of one estimated set and a reference estimate.

    ``estimate`` is the value of the first non-naive configured estimator
    computed with this set (None when the program was infeasible).
    """

    status: str
    selected: tuple[str, ...]
    estimate: float | None = None


@dataclass(frozen=True)
class SimResult:
    config: SimConfig
    bias_rows: tuple[BiasRow, ...]
    type_rows: tuple[TypeRow, ...]
    # set_kind -> per-replicate SetRecord
    details: dict[str, tuple]


def classify_set(selected, true_graph: MarkovGraph | None = None) -> str:
    """Bucket an estimated set by whether and how it separates in the truth."""
    graph = true_graph if true_graph is not None else _TRUE_GRAPH
    w = set(selected)
    targets = set(ORACLE_SAMPLING_SET) - w
    if not is_separated(graph, {"Y"}, targets, w):
        return "inappropriate"
    if set(ORACLE_MIN_SEPSET) <= w:
        return "min_sepset"
    if set(ORACLE_SAMPLING_SET) <= w:
        return "similar_sampling"
    if set(ORACLE_HETEROGENEITY_SET) <= w:
        return "similar_heterogeneity"
    return "other_appropriate"


_TRUE_GRAPH = true_structure_graph()


def _replicate(rep: int, config: SimConfig):
    rng = np.random.default_rng(
        np.random.SeedSequence((config.seed, config.n), spawn_key=(rep,))
    )
    ds = simulate_dataset(rng, config.n, config.m, config.pool_factor)

    sets: dict[str, tuple[str, tuple[str, ...]]] = {}
    targets: dict[str, tuple[str, ...]] = {
        "oracle_sampling": ORACLE_SAMPLING_SET,
        "oracle_heterogeneity": ORACLE_HETEROGENEITY_SET,
        "oracle_min_sepset": ORACLE_MIN_SEPSET,
    }
    if config.estimate_sets:
        cfg = config.mgm
        marginal_graph = remove_node(
            fit_mgm(ds, include_y=True, rule=cfg.rule, gamma=cfg.gamma, edge_threshold=cfg.edge_threshold),
            "T",
        )
        sol = marginal_solution_from_graph(marginal_graph, ORACLE_SAMPLING_SET, (), config.path_cap)
        sets["est_marginal"] = (sol.status, sol.selected)
        if config.constraint_x1_unmeasured:
            constrained = marginal_solution_from_graph(
                marginal_graph, ORACLE_SAMPLING_SET, ("X1",), config.path_cap
            )
            sets["est_marginal_constrained"] = (constrained.status, constrained.selected)
        exact_graph = remove_node(
            fit_mgm(ds, include_y=False, rule=cfg.rule, gamma=cfg.gamma, edge_threshold=cfg.edge_threshold),
            "T",
        )
        exact = exact_solution_from_graph(
            exact_graph, ORACLE_SAMPLING_SET, ORACLE_HETEROGENEITY_SET, (), config.path_cap
        )
        sets["est_exact"] = (exact.status, exact.selected)
        for kind, (status, selected) in sets.items():
            if status != INFEASIBLE:
                targets[kind] = selected

    estimates: dict[tuple[str, str], float] = {}
    p = TREATMENT_SHARE
    for set_kind, w in targets.items():
        pi = None
        for estimator in config.estimators:
            if estimator == "naive":
                continue
            if estimator in ("ipw", "aipw") and pi is None:
                pi = compute_weights(fit_sampling_model(ds, w))
            if estimator == "ipw":
                value = ipw_pate(ds, pi, p).point
            elif estimator == "outcome_model":
                value = outcome_model_pate(ds, w).point
            else:
                value = aipw_pate(ds, w, pi, p).point
            estimates[(set_kind, estimator)] = value
    if "naive" in config.estimators:
        estimates[("none", "naive")] = sate_dim(ds).point
    return estimates, sets


def run_simulation(config: SimConfig, threads: int = 1) -> SimResult:
    """Replicate the draw/estimate/classify loop and aggregate tables."""
    draws = run_indexed(_replicate, config.reps, threads=threads, args=(config,))

    set_kinds = ["oracle_sampling", "oracle_heterogeneity", "oracle_min_sepset"]
    if config.estimate_sets:
        set_kinds.append("est_marginal")
        if config.constraint_x1_unmeasured:
            set_kinds.append("est_marginal_constrained")
        set_kinds.append("est_exact")

    bias_rows: list[BiasRow] = []
    for set_kind in set_kinds:
        for estimator in config.estimators:
            if estimator == "naive":
                continue
            values = np.array(
                [est[(set_kind, estimator)] for est, _ in draws if (set_kind, estimator) in est]
            )
            if values.size == 0:
                continue
            err = values - TRUE_PATE
            bias_rows.append(
                BiasRow(
                    n=config.n,
                    estimator=estimator,
                    set_kind=set_kind,
                    bias=float(err.mean()),
                    se=float(values.std(ddof=1)) if values.size > 1 else 0.0,
                    rmse=float(np.sqrt((err**2).mean())),
                    reps_used=int(values.size),
                )
            )
    if "naive" in config.estimators:
        values = np.array([est[("none", "naive")] for est, _ in draws])
        err = values - TRUE_PATE
        bias_rows.append(
            BiasRow(
                n=config.n,
                estimator="naive",
                set_kind="none",
                bias=float(err.mean()),
                se=float(values.std(ddof=1)) if values.size > 1 else 0.0,
                rmse=float(np.sqrt((err**2).mean())),
                reps_used=int(values.size),
            )
        )

    type_rows: list[TypeRow] = []
    details: dict[str, tuple] = {}
    reference = next((e for e in config.estimators if e != "naive"), None)
    estimated_kinds = [k for k in set_kinds if k.startswith("est_")]
    for set_kind in estimated_kinds:
        records = []
        for estimates, sets in draws:
            status, selected = sets[set_kind]
            value = estimates.get((set_kind, reference)) if reference else None
            records.append(SetRecord(status, selected, value))
        records = tuple(records)
        details[set_kind] = records
        tally = {bucket: 0 for bucket in BUCKETS}
        for record in records:
            if record.status == INFEASIBLE:
                tally["inappropriate"] += 1
            else:
                tally[classify_set(record.selected)] += 1
        for bucket in BUCKETS:
            type_rows.append(
                TypeRow(config.n, set_kind, bucket, tally[bucket] / config.reps)
            )

    return SimResult(config, tuple(bias_rows), tuple(type_rows), details)


def bias_table_csv(results) -> str:
    """Concatenate bias rows from one or more runs into CSV text."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["n", "estimator", "set_kind", "bias", "se", "rmse", "reps_used"])
    for result in results:
        for row in result.bias_rows:
            writer.writerow(
                [row.n, row.estimator, row.set_kind, f"{row.bias:.10g}", f"{row.se:.10g}", f"{row.rmse:.10g}", row.reps_used]
            )
    return buf.getvalue()


def type_table_csv(results) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["n", "set_kind", "bucket", "frequency"])
    for result in results:
        for row in result.type_rows:
            writer.writerow([row.n, row.set_kind, row.bucket, f"{row.frequency:.10g}"])
    return buf.getvalue()
