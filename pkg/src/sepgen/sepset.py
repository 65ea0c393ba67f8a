"""Separating-set estimation: simple paths plus an exact minimum set cover.

A candidate set must intersect every simple path between the outcome and the
sampling set (marginal mode) or between the heterogeneity set and the
sampling set (exact mode) in the estimated Markov graph with the treatment
node removed. Paths are stacked as binary incidence rows and the smallest
blocking set is found by an exact combinatorial branch-and-bound:
a greedy cover caps the size from above, a packing of pairwise-disjoint rows
bounds it from below, and the depth-first search visits candidate sets in
lexicographic column order so the reported minimum cover is the
lexicographically smallest one. Infeasibility under user constraints is a
status, not an error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .data import StackedDataset
from .errors import PathExplosionError
from .mgm import (
    MarkovGraph,
    MgmConfig,
    OUTCOME_NODE,
    TREATMENT_NODE,
    fit_mgm,
    remove_node,
)

DEFAULT_PATH_CAP = 1_000_000

FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
EMPTY_SET_SUFFICIENT = "empty_set_sufficient"

MARGINAL = "marginal"
EXACT = "exact"


@dataclass(frozen=True)
class PathMatrix:
    """Binary path-incidence rows over the candidate variable columns."""

    columns: tuple[str, ...]
    rows: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        rows = np.asarray(self.rows, dtype=bool)
        if rows.ndim != 2 or rows.shape[1] != len(self.columns):
            rows = rows.reshape(-1, len(self.columns))
        object.__setattr__(self, "rows", rows)
        if rows.shape[0] and (rows.sum(axis=1) < 2).any():
            raise ValueError("every path row must contain at least its two endpoints")

    @property
    def n_paths(self) -> int:
        return int(self.rows.shape[0])


@dataclass(frozen=True)
class SeparatingSetSolution:
    """Outcome of the constrained minimum-cover program."""

    status: str
    selected: tuple[str, ...]
    mode: str
    constraints_applied: tuple[str, ...] = ()
    forced_included: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "selected", tuple(self.selected))
        object.__setattr__(self, "constraints_applied", tuple(self.constraints_applied))
        object.__setattr__(self, "forced_included", tuple(self.forced_included))
        if self.status not in (FEASIBLE, INFEASIBLE, EMPTY_SET_SUFFICIENT):
            raise ValueError(f"unknown status {self.status!r}")
        if self.mode not in (MARGINAL, EXACT):
            raise ValueError(f"unknown mode {self.mode!r}")
        if set(self.selected) & set(self.constraints_applied):
            raise ValueError("selected variables overlap the exclusion constraints")
        if self.status == FEASIBLE and not (self.selected or self.forced_included):
            raise ValueError("a feasible solution must select at least one variable")
        if self.status == EMPTY_SET_SUFFICIENT and self.selected != self.forced_included:
            raise ValueError("with no paths to block, only forced variables may be selected")

    def to_json_dict(self) -> dict:
        return {
            "status": self.status,
            "mode": self.mode,
            "selected": list(self.selected),
            "forced": list(self.forced_included),
            "excluded": list(self.constraints_applied),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)


def enumerate_simple_paths(graph: MarkovGraph, source: str, target: str, path_cap: int = DEFAULT_PATH_CAP):
    """All simple paths between two nodes, as lists of node names.

    Depth-first with visited-set backtracking; neighbors are explored in node
    order, so the output order is deterministic. Raises
    :class:`PathExplosionError` when more than ``path_cap`` paths exist.
    """
    if source == target:
        raise ValueError("source and target must differ")
    src = graph.index(source)
    tgt = graph.index(target)
    adjacency = graph.adjacency
    neighbor_lists = [np.flatnonzero(adjacency[i]) for i in range(len(graph.node_names))]
    paths: list[list[str]] = []
    visited = np.zeros(len(graph.node_names), dtype=bool)
    stack_path = [src]
    visited[src] = True

    def visit(node: int):
        if node == tgt:
            if len(paths) >= path_cap:
                raise PathExplosionError(path_cap, len(paths) + 1)
            paths.append([graph.node_names[i] for i in stack_path])
            return
        for nxt in neighbor_lists[node]:
            if not visited[nxt]:
                visited[nxt] = True
                stack_path.append(int(nxt))
                visit(int(nxt))
                stack_path.pop()
                visited[nxt] = False

    visit(src)
    return paths


def build_path_matrix(graph: MarkovGraph, pairs, path_cap: int = DEFAULT_PATH_CAP) -> PathMatrix:
    """Stack path-incidence rows for every (source, target) pair, in order.

    Pairs whose endpoints coincide contribute nothing (a node has no simple
    path to itself). The cap applies to the total number of rows.
    """
    columns = graph.node_names
    col_index = {name: i for i, name in enumerate(columns)}
    rows: list[np.ndarray] = []
    for source, target in pairs:
        if source == target:
            continue
        for path in enumerate_simple_paths(graph, source, target, path_cap):
            if len(rows) >= path_cap:
                raise PathExplosionError(path_cap, len(rows) + 1)
            row = np.zeros(len(columns), dtype=bool)
            for name in path:
                row[col_index[name]] = True
            rows.append(row)
    matrix = np.array(rows, dtype=bool) if rows else np.zeros((0, len(columns)), dtype=bool)
    return PathMatrix(columns, matrix)


def _greedy_cover(row_masks, col_rowcov, selectable_cols):
    uncovered = (1 << len(row_masks)) - 1
    chosen = []
    while uncovered:
        best, best_gain = -1, 0
        for j in selectable_cols:
            gain = bin(col_rowcov[j] & uncovered).count("1")
            if gain > best_gain:
                best, best_gain = j, gain
        if best < 0:
            return None
        chosen.append(best)
        uncovered &= ~col_rowcov[best]
    return chosen


def _disjoint_rows_bound(row_order, row_masks, uncovered):
    taken_cols = 0
    count = 0
    for r in row_order:
        if not (uncovered >> r) & 1:
            continue
        if row_masks[r] & taken_cols:
            continue
        taken_cols |= row_masks[r]
        count += 1
    return count


def solve_min_cover(
    P: PathMatrix,
    excluded=(),
    always_excluded_endpoint: str | None = None,
    mode: str = MARGINAL,
) -> SeparatingSetSolution:
    """Exact minimum-cardinality blocking set subject to exclusion constraints.

    Excluded variables (and the always-excluded endpoint, the outcome in
    marginal mode) can never be selected. With no rows the empty set already
    separates; when an uncoverable row exists the program is infeasible.
    Among all minimum covers the one with the lexicographically smallest
    column-index vector is returned.
    """
    columns = P.columns
    excluded = tuple(excluded)
    unknown = [v for v in excluded if v not in columns]
    if unknown:
        raise ValueError(f"excluded variables not among candidates: {unknown}")
    blocked = set(excluded)
    if always_excluded_endpoint is not None:
        if always_excluded_endpoint not in columns:
            raise ValueError(f"unknown endpoint column {always_excluded_endpoint!r}")
        blocked.add(always_excluded_endpoint)

    if P.n_paths == 0:
        return SeparatingSetSolution(EMPTY_SET_SUFFICIENT, (), mode, excluded)

    selectable = np.array([name not in blocked for name in columns])
    effective = P.rows & selectable
    if (~effective.any(axis=1)).any():
        return SeparatingSetSolution(INFEASIBLE, (), mode, excluded)

    q = len(columns)
    masks = sorted({int(sum(1 << j for j in np.flatnonzero(row))) for row in effective})
    # A row that is a superset of another is covered whenever the subset is.
    masks.sort(key=lambda m: bin(m).count("1"))
    kept: list[int] = []
    for m in masks:
        if not any((k & m) == k for k in kept):
            kept.append(m)
    row_masks = kept
    n_rows = len(row_masks)
    col_rowcov = [0] * q
    for r, m in enumerate(row_masks):
        for j in range(q):
            if (m >> j) & 1:
                col_rowcov[j] |= 1 << r
    selectable_cols = [j for j in range(q) if selectable[j]]
    row_order = list(range(n_rows))

    greedy = _greedy_cover(row_masks, col_rowcov, selectable_cols)
    upper = len(greedy)
    all_rows = (1 << n_rows) - 1
    lower = _disjoint_rows_bound(row_order, row_masks, all_rows)

    def search(uncovered: int, start: int, budget: int):
        if uncovered == 0:
            return []
        if budget == 0:
            return None
        if _disjoint_rows_bound(row_order, row_masks, uncovered) > budget:
            return None
        for j in range(start, q):
            if not selectable[j]:
                continue
            gain = col_rowcov[j] & uncovered
            if not gain:
                continue
            rest = search(uncovered & ~col_rowcov[j], j + 1, budget - 1)
            if rest is not None:
                return [j] + rest
        return None

    solution = None
    for size in range(max(lower, 1), upper + 1):
        solution = search(all_rows, 0, size)
        if solution is not None:
            break
    assert solution is not None  # greedy cover certifies feasibility
    selected = tuple(columns[j] for j in solution)
    return SeparatingSetSolution(FEASIBLE, selected, mode, excluded)


def _check_subset(names, universe, label):
    names = tuple(names)
    missing = [v for v in names if v not in universe]
    if missing:
        raise ValueError(f"{label} contains unknown covariates: {missing}")
    return names


def marginal_solution_from_graph(
    graph_without_t: MarkovGraph,
    sampling_set,
    unmeasured=(),
    path_cap: int = DEFAULT_PATH_CAP,
) -> SeparatingSetSolution:
    """Solve marginal mode on an already-fitted graph (treatment removed)."""
    pairs = [(OUTCOME_NODE, name) for name in sampling_set]
    P = build_path_matrix(graph_without_t, pairs, path_cap)
    return solve_min_cover(P, excluded=unmeasured, always_excluded_endpoint=OUTCOME_NODE, mode=MARGINAL)


def exact_solution_from_graph(
    graph_without_t: MarkovGraph,
    sampling_set,
    heterogeneity_set,
    unmeasured=(),
    path_cap: int = DEFAULT_PATH_CAP,
) -> SeparatingSetSolution:
    """Solve exact mode on an already-fitted graph (treatment removed).

    Variables in both the sampling and heterogeneity sets are always part of
    the answer; they are unioned into the selection after the cover solve.
    """
    forced = tuple(v for v in heterogeneity_set if v in set(sampling_set))
    clash = sorted(set(forced) & set(unmeasured))
    if clash:
        raise ValueError(
            f"variables {clash} sit in both the sampling and heterogeneity sets, so they "
            "must be in the separating set, but they are marked unmeasured"
        )
    pairs = [(h, s) for h in heterogeneity_set for s in sampling_set]
    P = build_path_matrix(graph_without_t, pairs, path_cap)
    raw = solve_min_cover(P, excluded=unmeasured, always_excluded_endpoint=None, mode=EXACT)
    if raw.status == INFEASIBLE:
        return replace(raw, forced_included=forced)
    union = set(raw.selected) | set(forced)
    selected = tuple(name for name in graph_without_t.node_names if name in union)
    return SeparatingSetSolution(raw.status, selected, EXACT, raw.constraints_applied, forced)


def estimate_marginal_sepset(
    dataset: StackedDataset,
    sampling_set,
    unmeasured=(),
    mgm_config: MgmConfig | None = None,
    path_cap: int = DEFAULT_PATH_CAP,
) -> SeparatingSetSolution:
    """Fit the MRF over {Y, T, covariates} and solve for a marginal separating set."""
    cfg = mgm_config or MgmConfig()
    names = dataset.covariate_names
    sampling_set = _check_subset(sampling_set, names, "sampling_set")
    unmeasured = _check_subset(unmeasured, names, "unmeasured")
    if not sampling_set:
        raise ValueError("sampling_set must not be empty")
    graph = fit_mgm(
        dataset, include_y=True, rule=cfg.rule, gamma=cfg.gamma, edge_threshold=cfg.edge_threshold
    )
    return marginal_solution_from_graph(
        remove_node(graph, TREATMENT_NODE), sampling_set, unmeasured, path_cap
    )


def estimate_exact_sepset(
    dataset: StackedDataset,
    sampling_set,
    heterogeneity_set,
    unmeasured=(),
    mgm_config: MgmConfig | None = None,
    path_cap: int = DEFAULT_PATH_CAP,
) -> SeparatingSetSolution:
    """Fit the MRF over {T, covariates} and solve for an exact separating set."""
    cfg = mgm_config or MgmConfig()
    names = dataset.covariate_names
    sampling_set = _check_subset(sampling_set, names, "sampling_set")
    heterogeneity_set = _check_subset(heterogeneity_set, names, "heterogeneity_set")
    unmeasured = _check_subset(unmeasured, names, "unmeasured")
    if not sampling_set:
        raise ValueError("sampling_set must not be empty")
    if not heterogeneity_set:
        raise ValueError("heterogeneity_set must not be empty in exact mode")
    graph = fit_mgm(
        dataset, include_y=False, rule=cfg.rule, gamma=cfg.gamma, edge_threshold=cfg.edge_threshold
    )
    return exact_solution_from_graph(
        remove_node(graph, TREATMENT_NODE), sampling_set, heterogeneity_set, unmeasured, path_cap
    )
