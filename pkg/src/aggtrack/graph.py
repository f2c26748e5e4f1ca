"""Communication graphs and doubly stochastic consensus weights."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import DisconnectedGraph, InvalidConfig, InvalidNetwork

STOCHASTIC_TOL = 1e-12


def _normalize_edges(edges, n_agents):
    out = set()
    for e in edges:
        if len(e) != 2:
            raise InvalidNetwork(f"edge {e!r} is not a pair")
        i, j = int(e[0]), int(e[1])
        if not (0 <= i < n_agents and 0 <= j < n_agents):
            raise InvalidNetwork(f"edge ({i}, {j}) out of range for {n_agents} agents")
        if i == j:
            raise InvalidNetwork(f"self-loop ({i}, {i}) in edge list; self weights are implicit")
        out.add((min(i, j), max(i, j)))
    return frozenset(out)


def _components(edges, n_agents):
    if n_agents == 1:
        return [[0]]
    rows = [i for i, j in edges] + [j for i, j in edges]
    cols = [j for i, j in edges] + [i for i, j in edges]
    adj = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_agents, n_agents))
    n_comp, labels = connected_components(adj, directed=False)
    return [np.flatnonzero(labels == c).tolist() for c in range(n_comp)]


def consensus_contraction(net_or_weights, tol=1e-12, max_iter=10_000):
    """Spectral norm of ``A - 11^T/N`` by power iteration.

    Iterates on ``B^T B`` with ``B = A - 11^T/N`` so that eigenvalues of
    opposite sign (e.g. bipartite-like weightings) do not stall the
    iteration. The start vector is fixed, which makes the result
    deterministic.
    """
    weights = net_or_weights.weights if isinstance(net_or_weights, Network) else net_or_weights
    a = np.asarray(weights, dtype=float)
    n = a.shape[0]
    if n == 1:
        return 0.0
    b = a - np.full((n, n), 1.0 / n)
    gram = b.T @ b
    v = np.arange(1, n + 1, dtype=float) + np.random.default_rng(0).uniform(0.0, 0.5, n)
    v -= v.mean()
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = gram @ v
        lam = float(v @ w)
        res = np.linalg.norm(w - lam * v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        if res <= tol:
            break
        v = w / nw
    return float(np.sqrt(max(lam, 0.0)))


@dataclass(frozen=True)
class Network:
    """Undirected connected graph with a symmetric doubly stochastic weight matrix.

    Use :func:`build_metropolis` or :func:`from_weights` rather than the
    constructor; both validate the invariants and cache ``rho``.
    """

    n_agents: int
    weights: np.ndarray
    edges: frozenset
    rho: float
    _neighbors: tuple = field(repr=False, compare=False, default=())

    def neighbors(self, i):
        """Agents j != i with a_ij > 0."""
        return self._neighbors[i]

    def degree(self, i):
        return len(self._neighbors[i])

    def to_spec(self):
        return {
            "n_agents": self.n_agents,
            "edges": [list(e) for e in sorted(self.edges)],
            "weighting": "explicit",
            "weights": self.weights.tolist(),
        }


def _finalize(weights, edges, n_agents):
    comps = _components(edges, n_agents)
    if len(comps) > 1:
        raise DisconnectedGraph(comps)
    w = np.array(weights, dtype=float)
    w.setflags(write=False)
    if w.shape != (n_agents, n_agents):
        raise InvalidNetwork(f"weights shape {w.shape} != ({n_agents}, {n_agents})")
    if np.any(w < 0):
        raise InvalidNetwork("weights must be nonnegative")
    if not np.allclose(w, w.T, atol=STOCHASTIC_TOL, rtol=0):
        raise InvalidNetwork("weights must be symmetric")
    if np.max(np.abs(w.sum(axis=1) - 1.0)) > STOCHASTIC_TOL:
        raise InvalidNetwork("rows of the weight matrix must sum to 1")
    if np.max(np.abs(w.sum(axis=0) - 1.0)) > STOCHASTIC_TOL:
        raise InvalidNetwork("columns of the weight matrix must sum to 1")
    for i, j in zip(*np.nonzero(w)):
        if i != j and (min(i, j), max(i, j)) not in edges:
            raise InvalidNetwork(f"a[{i},{j}] > 0 but ({i}, {j}) is not an edge")
    rho = consensus_contraction(w)
    if not rho < 1.0:
        raise InvalidNetwork(f"consensus contraction rho={rho} is not < 1")
    nbrs = tuple(
        tuple(int(j) for j in np.flatnonzero(w[i]) if j != i) for i in range(n_agents)
    )
    return Network(n_agents=n_agents, weights=w, edges=edges, rho=rho, _neighbors=nbrs)


def build_metropolis(edges, n_agents):
    """Metropolis-Hastings weights ``a_ij = 1/(1 + max(deg_i, deg_j))``."""
    if n_agents < 1:
        raise InvalidNetwork("need at least one agent")
    edges = _normalize_edges(edges, n_agents)
    deg = np.zeros(n_agents, dtype=int)
    for i, j in edges:
        deg[i] += 1
        deg[j] += 1
    w = np.zeros((n_agents, n_agents))
    for i, j in edges:
        w[i, j] = w[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    w[np.diag_indices(n_agents)] = 1.0 - w.sum(axis=1)
    return _finalize(w, edges, n_agents)


def from_weights(weights, edges=None):
    """Validate an explicit weight matrix; edges default to its support."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise InvalidNetwork(f"weights must be square, got shape {w.shape}")
    n = w.shape[0]
    if edges is None:
        edges = [(i, j) for i, j in zip(*np.nonzero(w)) if i < j]
    return _finalize(w, _normalize_edges(edges, n), n)


def complete_graph(n_agents, uniform=False):
    edges = [(i, j) for i in range(n_agents) for j in range(i + 1, n_agents)]
    if uniform:
        return from_weights(np.full((n_agents, n_agents), 1.0 / n_agents), edges)
    return build_metropolis(edges, n_agents)


def path_graph(n_agents):
    return build_metropolis([(i, i + 1) for i in range(n_agents - 1)], n_agents)


def ring_graph(n_agents):
    if n_agents < 3:
        return path_graph(n_agents)
    return build_metropolis([(i, (i + 1) % n_agents) for i in range(n_agents)], n_agents)


def star_graph(n_agents):
    return build_metropolis([(0, j) for j in range(1, n_agents)], n_agents)


def erdos_renyi(n_agents, p, seed=0, max_tries=1000):
    """Connected Erdos-Renyi graph with Metropolis weights (resampled until connected)."""
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n_agents, k=1)
    for _ in range(max_tries):
        mask = rng.random(len(iu[0])) < p
        edges = list(zip(iu[0][mask].tolist(), iu[1][mask].tolist()))
        if len(_components(frozenset(edges), n_agents)) == 1:
            return build_metropolis(edges, n_agents)
    raise InvalidNetwork(f"no connected G({n_agents}, {p}) found in {max_tries} draws")


_GENERATORS = {
    "complete": lambda spec: complete_graph(spec["n_agents"], spec.get("uniform", False)),
    "path": lambda spec: path_graph(spec["n_agents"]),
    "ring": lambda spec: ring_graph(spec["n_agents"]),
    "star": lambda spec: star_graph(spec["n_agents"]),
    "erdos_renyi": lambda spec: erdos_renyi(spec["n_agents"], spec["p"], spec.get("seed", 0)),
}


def load_graph_spec(spec):
    """Build a Network from a graph spec (dict, JSON string path, or Path).

    File form: ``{n_agents, edges: [[i, j], ...], weighting: "metropolis" |
    "explicit", weights?: [[...]]}`` with 0-based indices. A ``generator``
    key (complete, path, ring, star, erdos_renyi) is accepted as shorthand.
    """
    if isinstance(spec, (str, Path)):
        with open(spec) as fh:
            spec = json.load(fh)
    if not isinstance(spec, dict) or "n_agents" not in spec:
        raise InvalidConfig("graph spec must be an object with 'n_agents'")
    if "generator" in spec:
        gen = spec["generator"]
        if gen not in _GENERATORS:
            raise InvalidConfig(f"unknown graph generator {gen!r}")
        return _GENERATORS[gen](spec)
    weighting = spec.get("weighting", "metropolis")
    edges = spec.get("edges", [])
    if weighting == "metropolis":
        return build_metropolis(edges, int(spec["n_agents"]))
    if weighting == "explicit":
        if "weights" not in spec:
            raise InvalidConfig("explicit weighting requires 'weights'")
        net = from_weights(spec["weights"], edges or None)
        if net.n_agents != int(spec["n_agents"]):
            raise InvalidConfig("n_agents does not match weights")
        return net
    raise InvalidConfig(f"unknown weighting {weighting!r}")
