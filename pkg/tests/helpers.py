"""Shared independent oracles and fixture builders for the test suite.

Everything here is deliberately written without reusing the package's
algorithms: separation is checked by enumerating paths recursively, minimum
covers by trying all variable subsets, and the logistic reference by a
textbook IRLS on the raw design.
"""

import itertools

import numpy as np

from sepgen.data import StackedDataset, VariableSpec
from sepgen.mgm import MarkovGraph


def graph_from_edges(nodes, edges) -> MarkovGraph:
    nodes = tuple(nodes)
    q = len(nodes)
    adj = np.zeros((q, q), dtype=bool)
    for a, b in edges:
        i, j = nodes.index(a), nodes.index(b)
        adj[i, j] = adj[j, i] = True
    return MarkovGraph(nodes, adj, adj.astype(float))


def random_graph(rng, n_nodes, edge_prob) -> MarkovGraph:
    nodes = tuple(f"V{i}" for i in range(n_nodes))
    adj = np.zeros((n_nodes, n_nodes), dtype=bool)
    for i in range(n_nodes):
        for j in range(i + 1, n_nodes):
            if rng.random() < edge_prob:
                adj[i, j] = adj[j, i] = True
    weight = np.where(adj, rng.random((n_nodes, n_nodes)) + 0.05, 0.0)
    weight = np.triu(weight, 1)
    weight = weight + weight.T
    weight[~adj] = 0.0
    return MarkovGraph(nodes, adj, weight)


def brute_force_separated(graph: MarkovGraph, set_a, set_b, conditioning) -> bool:
    """Recursive enumeration of all simple paths avoiding the conditioning set."""
    idx = {name: i for i, name in enumerate(graph.node_names)}
    banned = {idx[v] for v in conditioning}
    targets = {idx[v] for v in set_b}

    def reaches(node, visited):
        if node in targets:
            return True
        for nxt in np.flatnonzero(graph.adjacency[node]):
            nxt = int(nxt)
            if nxt not in visited and nxt not in banned:
                if reaches(nxt, visited | {nxt}):
                    return True
        return False

    for start_name in set_a:
        start = idx[start_name]
        if start in banned:
            continue
        if reaches(start, {start}):
            return False
    return True


def brute_force_simple_paths(graph: MarkovGraph, source, target):
    """All simple paths by trying every ordered arrangement of inner nodes."""
    idx = {name: i for i, name in enumerate(graph.node_names)}
    src, tgt = idx[source], idx[target]
    inner = [i for i in range(len(graph.node_names)) if i not in (src, tgt)]
    adj = graph.adjacency
    found = []
    for k in range(len(inner) + 1):
        for mid in itertools.permutations(inner, k):
            seq = (src, *mid, tgt)
            if all(adj[a, b] for a, b in zip(seq, seq[1:])):
                found.append([graph.node_names[i] for i in seq])
    return found


def brute_force_min_cover(rows: np.ndarray, selectable: np.ndarray):
    """Smallest covering subset by exhaustive search; None when infeasible.

    rows: boolean (r, q) incidence; selectable: boolean (q,). Returns a set
    of column indices of minimum size (any one of them) or None.
    """
    r, q = rows.shape
    if r == 0:
        return set()
    effective = rows & selectable
    if (~effective.any(axis=1)).any():
        return None
    cols = [j for j in range(q) if selectable[j]]
    for size in range(1, len(cols) + 1):
        for combo in itertools.combinations(cols, size):
            picked = np.zeros(q, dtype=bool)
            picked[list(combo)] = True
            if ((rows & picked).any(axis=1)).all():
                return set(combo)
    return None


def reference_logistic_irls(X, y, weights, max_iter=200, tol=1e-12):
    """Plain weighted logistic IRLS on [1, X]; returns fitted probabilities."""
    A = np.column_stack([np.ones(len(y)), X])
    beta = np.zeros(A.shape[1])
    for _ in range(max_iter):
        eta = A @ beta
        mu = 1.0 / (1.0 + np.exp(-np.clip(eta, -30, 30)))
        grad = A.T @ (weights * (y - mu))
        hess = A.T @ ((weights * mu * (1 - mu))[:, None] * A)
        step = np.linalg.solve(hess, grad)
        beta = beta + step
        if np.abs(step).max() < tol:
            break
    eta = A @ beta
    return 1.0 / (1.0 + np.exp(-np.clip(eta, -30, 30)))


def make_dataset(
    x_exp,
    t,
    y,
    x_pop,
    names=None,
    cluster=None,
    strata=None,
    measured=None,
    population_size_n=None,
):
    """Assemble a StackedDataset from plain experiment/population arrays."""
    x_exp = np.asarray(x_exp, dtype=float)
    x_pop = np.asarray(x_pop, dtype=float)
    n, p = x_exp.shape
    m = x_pop.shape[0]
    names = names or [f"Z{j}" for j in range(p)]
    measured = measured or {}
    specs = tuple(
        VariableSpec(name, measured_in_population=measured.get(name, True)) for name in names
    )
    x_pop = x_pop.copy()
    for j, spec in enumerate(specs):
        if not spec.measured_in_population:
            x_pop[:, j] = np.nan
    cluster_col = None
    if cluster is not None:
        cluster_col = np.concatenate(
            [np.asarray(cluster, dtype=object), np.full(m, None, dtype=object)]
        )
    strata_col = None
    if strata is not None:
        strata_col = np.concatenate(
            [np.asarray(strata, dtype=object), np.full(m, None, dtype=object)]
        )
    return StackedDataset(
        specs=specs,
        x=np.vstack([x_exp, x_pop]),
        s=np.concatenate([np.ones(n, dtype=np.int8), np.zeros(m, dtype=np.int8)]),
        t=np.concatenate([np.asarray(t, dtype=float), np.full(m, np.nan)]),
        y=np.concatenate([np.asarray(y, dtype=float), np.full(m, np.nan)]),
        cluster=cluster_col,
        strata=strata_col,
        population_size_n=population_size_n,
    )


class ZeroNoise:
    """Stands in for a Generator when a test needs epsilon identically zero."""

    def standard_normal(self, size=None):
        return np.zeros(size if size is not None else ())
