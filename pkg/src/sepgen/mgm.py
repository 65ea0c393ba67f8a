"""Mixed Markov random field structure estimation on experimental rows.

Each node (outcome, treatment, covariates) is regressed on every other node
with an L1 penalty and EBIC model selection; an edge survives under the AND
rule when both directed fits are nonzero, under the OR rule when either is.
Edge weights aggregate absolute coefficients: the maximum over a categorical
dummy block (and over multinomial classes), then the mean of the two
directions.

Graph queries implement the global Markov reading of separation: two node
sets are conditionally independent when removing the conditioning set leaves
no connecting path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import StackedDataset
from .errors import NumericalError, SampleSizeError
from .glm import EBIC_GAMMA, GlmFamily, fit_path, select_ebic

AND_RULE = "AND"
OR_RULE = "OR"

OUTCOME_NODE = "Y"
TREATMENT_NODE = "T"

MIN_EXPERIMENT_ROWS = 20


AUTO_THRESHOLD = "auto"


@dataclass(frozen=True)
class MgmConfig:
    """Knobs for nodewise fitting and edge assembly.

    ``edge_threshold`` prunes small aggregated coefficients after each
    nodewise fit: "auto" applies sqrt(df * log(p) / n) per node (a
    Loh-Wainwright-style scaling), a float applies that absolute value,
    and 0 disables pruning.
    """

    rule: str = AND_RULE
    gamma: float = EBIC_GAMMA
    edge_threshold: float | str = AUTO_THRESHOLD

    def __post_init__(self):
        if self.rule not in (AND_RULE, OR_RULE):
            raise ValueError(f"rule must be AND or OR, got {self.rule!r}")
        if isinstance(self.edge_threshold, str):
            if self.edge_threshold != AUTO_THRESHOLD:
                raise ValueError(f"edge_threshold must be a number or 'auto', got {self.edge_threshold!r}")
        elif self.edge_threshold < 0:
            raise ValueError("edge_threshold must be nonnegative")


@dataclass(frozen=True)
class MarkovGraph:
    """Weighted undirected graph over named nodes; immutable."""

    node_names: tuple[str, ...]
    adjacency: np.ndarray
    edge_weight: np.ndarray
    rule_used: str = AND_RULE

    def __post_init__(self):
        object.__setattr__(self, "node_names", tuple(self.node_names))
        adj = np.asarray(self.adjacency, dtype=bool)
        wt = np.asarray(self.edge_weight, dtype=np.float64)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "edge_weight", wt)
        q = len(self.node_names)
        if adj.shape != (q, q) or wt.shape != (q, q):
            raise ValueError("adjacency and edge_weight must be square over the nodes")
        if (adj != adj.T).any() or (wt != wt.T).any():
            raise ValueError("graph matrices must be symmetric")
        if adj.trace() != 0:
            raise ValueError("self-edges are not allowed")
        if (adj & ~(wt > 0)).any():
            raise ValueError("present edges must carry positive weight")

    def index(self, name: str) -> int:
        try:
            return self.node_names.index(name)
        except ValueError:
            raise ValueError(f"unknown node {name!r}") from None

    def has_edge(self, a: str, b: str) -> bool:
        return bool(self.adjacency[self.index(a), self.index(b)])

    def edges(self):
        q = len(self.node_names)
        for i in range(q):
            for j in range(i + 1, q):
                if self.adjacency[i, j]:
                    yield self.node_names[i], self.node_names[j], float(self.edge_weight[i, j])

    def neighbors(self, name: str) -> tuple[str, ...]:
        i = self.index(name)
        return tuple(self.node_names[j] for j in np.flatnonzero(self.adjacency[i]))

    def to_edge_list(self) -> list[dict]:
        return [{"from": a, "to": b, "weight": w} for a, b, w in self.edges()]

    def to_json(self) -> str:
        return json.dumps({"nodes": list(self.node_names), "edges": self.to_edge_list()}, indent=2)

    def to_dot(self, name: str = "mrf") -> str:
        lines = [f"graph {name} {{"]
        for node in self.node_names:
            lines.append(f'  "{node}";')
        for a, b, w in self.edges():
            lines.append(f'  "{a}" -- "{b}" [weight={w:.6g}];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def _node_family(dataset: StackedDataset, name: str) -> GlmFamily:
    if name == OUTCOME_NODE:
        return GlmFamily.gaussian()
    if name == TREATMENT_NODE:
        return GlmFamily.binomial()
    spec = dataset.spec_of(name)
    if not spec.is_categorical:
        return GlmFamily.gaussian()
    if spec.level_count == 2:
        return GlmFamily.binomial()
    return GlmFamily.multinomial(spec.level_count)


def _raw_node_columns(dataset: StackedDataset, name: str, rows: np.ndarray):
    """Column block and dummy flag for one node, before standardization."""
    if name == OUTCOME_NODE:
        return dataset.y[rows][:, None], False
    if name == TREATMENT_NODE:
        return dataset.t[rows][:, None], False
    spec = dataset.spec_of(name)
    col = dataset.column(name)[rows]
    if spec.is_categorical:
        block = np.column_stack(
            [(col == level).astype(np.float64) for level in range(1, spec.level_count)]
        )
        return block, True
    return col[:, None], False


def _standardize_block(block: np.ndarray) -> np.ndarray:
    """Zero out constant columns instead of dividing by a zero SD."""
    out = np.empty_like(block)
    for j in range(block.shape[1]):
        col = block[:, j]
        sd = col.std(ddof=1)
        if sd <= 1e-12:
            out[:, j] = 0.0
        else:
            out[:, j] = (col - col.mean()) / sd
    return out


def fit_mgm(
    dataset: StackedDataset,
    include_y: bool = True,
    rule: str = AND_RULE,
    gamma: float = EBIC_GAMMA,
    edge_threshold: float | str = AUTO_THRESHOLD,
) -> MarkovGraph:
    """Estimate the mixed MRF over covariates, treatment, and optionally outcome.

    Fits use experiment rows only. Node order is the covariate order,
    then Y (when included), then T; this order also fixes neighbor order for
    downstream path enumeration.
    """
    MgmConfig(rule=rule, gamma=gamma, edge_threshold=edge_threshold)
    rows = dataset.experiment_rows
    n = len(rows)
    if n < MIN_EXPERIMENT_ROWS:
        raise SampleSizeError(
            f"need at least {MIN_EXPERIMENT_ROWS} experiment rows to fit the graph (got {n})"
        )
    nodes = list(dataset.covariate_names)
    if include_y:
        nodes.append(OUTCOME_NODE)
    nodes.append(TREATMENT_NODE)
    q = len(nodes)

    raw_blocks = {}
    std_blocks = {}
    for name in nodes:
        block, _ = _raw_node_columns(dataset, name, rows)
        raw_blocks[name] = block
        std_blocks[name] = _standardize_block(block)

    # theta_agg[r, h]: largest |coefficient| of node h's block in node r's fit
    theta_agg = np.zeros((q, q))
    for r, name in enumerate(nodes):
        others = [h for h in nodes if h != name]
        design_parts = [std_blocks[h] for h in others]
        design = np.hstack(design_parts)
        family = _node_family(dataset, name)
        if family.tag == "gaussian":
            resp_raw = raw_blocks[name][:, 0]
            sd = resp_raw.std(ddof=1)
            if sd <= 1e-12:
                raise NumericalError(
                    f"nodewise fit failed for node {name!r}: response has zero variance"
                )
            resp = (resp_raw - resp_raw.mean()) / sd
        elif family.tag == "binomial":
            resp = raw_blocks[name][:, 0] if name == TREATMENT_NODE else dataset.column(name)[rows]
            if len(np.unique(resp)) < 2:
                raise NumericalError(
                    f"nodewise fit failed for node {name!r}: response has a single class"
                )
        else:
            resp = dataset.column(name)[rows]
            if len(np.unique(resp)) < 2:
                raise NumericalError(
                    f"nodewise fit failed for node {name!r}: response has a single class"
                )
        try:
            path = fit_path(design, resp, family)
            chosen = select_ebic(path, n=n, p=design.shape[1], gamma=gamma)
        except Exception as exc:
            raise NumericalError(f"nodewise fit failed for node {name!r}: {exc}") from exc
        # Magnitudes come from the unpenalized refit on the selected support:
        # the EBIC pick sits at the top of its support's lambda segment, where
        # the newest coefficients are maximally shrunk.
        coefs = path.refit_coefficients[chosen]
        if coefs.ndim == 1:
            coefs = coefs[:, None]
        if edge_threshold == AUTO_THRESHOLD:
            degree = max(int(path.df[chosen]), 1)
            tau = np.sqrt(degree * np.log(max(design.shape[1], 2)) / n)
        else:
            tau = float(edge_threshold)
        col = 0
        for h in others:
            width = std_blocks[h].shape[1]
            block_coefs = coefs[col : col + width, :]
            magnitude = float(np.abs(block_coefs).max(initial=0.0))
            theta_agg[r, nodes.index(h)] = magnitude if magnitude > tau else 0.0
            col += width

    present = theta_agg > 0
    if rule == AND_RULE:
        adjacency = present & present.T
    else:
        adjacency = present | present.T
    np.fill_diagonal(adjacency, False)
    weight = np.where(adjacency, (theta_agg + theta_agg.T) / 2.0, 0.0)
    return MarkovGraph(tuple(nodes), adjacency, weight, rule_used=rule)


def remove_node(graph: MarkovGraph, node_name: str) -> MarkovGraph:
    """Copy of the graph without the node and its incident edges."""
    i = graph.index(node_name)
    keep = [j for j in range(len(graph.node_names)) if j != i]
    names = tuple(graph.node_names[j] for j in keep)
    sub = np.ix_(keep, keep)
    return MarkovGraph(names, graph.adjacency[sub], graph.edge_weight[sub], graph.rule_used)


def is_separated(graph: MarkovGraph, set_a, set_b, conditioning_set=()) -> bool:
    """True when no path joins ``set_a`` to ``set_b`` once the conditioning
    nodes are deleted (breadth-first reachability).

    The conditioning set must be disjoint from both endpoint sets. Empty
    endpoint sets are vacuously separated; endpoint sets that share a node
    are trivially connected.
    """
    idx_a = {graph.index(v) for v in set_a}
    idx_b = {graph.index(v) for v in set_b}
    idx_c = {graph.index(v) for v in conditioning_set}
    overlap = (idx_a | idx_b) & idx_c
    if overlap:
        names = sorted(graph.node_names[i] for i in overlap)
        raise ValueError(f"conditioning set overlaps the endpoint sets: {names}")
    if not idx_a or not idx_b:
        return True
    if idx_a & idx_b:
        return False
    blocked = np.zeros(len(graph.node_names), dtype=bool)
    for i in idx_c:
        blocked[i] = True
    seen = blocked.copy()
    frontier = sorted(idx_a)
    for i in frontier:
        seen[i] = True
    while frontier:
        nxt = []
        for i in frontier:
            for j in np.flatnonzero(graph.adjacency[i]):
                if not seen[j]:
                    if j in idx_b:
                        return False
                    seen[j] = True
                    nxt.append(int(j))
        frontier = nxt
    return True
