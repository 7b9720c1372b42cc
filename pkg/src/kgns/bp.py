"""Sum-product belief propagation on tree-structured discrete factor graphs.

On a tree (forest) the two-pass schedule gives exact marginals. Pairwise
factors may hold a ``scipy.sparse`` matrix so large sign-by-value tables
never need to be dense.
"""
from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class InferenceError(ValueError):
    pass


@dataclass
class Factor:
    variables: tuple[str, ...]
    table: object  # ndarray with one axis per variable, or sparse matrix for two variables

    def __post_init__(self) -> None:
        if sp.issparse(self.table):
            if len(self.variables) != 2:
                raise InferenceError("sparse tables must be pairwise")
            self.table = sp.csr_matrix(self.table)
        else:
            self.table = np.asarray(self.table, dtype=float)
            if self.table.ndim != len(self.variables):
                raise InferenceError(f"factor over {self.variables} has a {self.table.ndim}-d table")
        if len(set(self.variables)) != len(self.variables):
            raise InferenceError(f"repeated variable in factor {self.variables}")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.table.shape)

    def message_to(self, target: int, incoming: dict[int, np.ndarray]) -> np.ndarray:
        """Sum out every variable except axis ``target``, weighting by ``incoming``."""
        if sp.issparse(self.table):
            other = 1 - target
            vec = incoming.get(other, np.ones(self.table.shape[other]))
            return np.asarray(self.table @ vec if target == 0 else self.table.T @ vec).ravel()
        t = self.table
        for axis, msg in incoming.items():
            shape = [1] * t.ndim
            shape[axis] = -1
            t = t * msg.reshape(shape)
        axes = tuple(a for a in range(t.ndim) if a != target)
        return t.sum(axis=axes) if axes else t


@dataclass
class DiscreteFactorGraph:
    cardinality: dict[str, int] = field(default_factory=dict)
    factors: list[Factor] = field(default_factory=list)

    def add_variable(self, name: str, states: int) -> None:
        if states < 1:
            raise InferenceError(f"variable {name} needs at least one state")
        self.cardinality[name] = states

    def add_factor(self, variables, table) -> Factor:
        f = Factor(tuple(variables), table)
        for v, n in zip(f.variables, f.shape):
            if v not in self.cardinality:
                raise InferenceError(f"unknown variable {v}")
            if self.cardinality[v] != n:
                raise InferenceError(f"factor axis for {v} has {n} states, variable has {self.cardinality[v]}")
        self.factors.append(f)
        return f

    def check_tree(self) -> None:
        """Raise unless the variable/factor bipartite graph is acyclic."""
        nodes = len(self.cardinality) + len(self.factors)
        edges = sum(len(f.variables) for f in self.factors)
        parent = {v: v for v in self.cardinality}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        components = len(self.cardinality)
        for i, f in enumerate(self.factors):
            key = ("factor", i)
            parent[key] = key
            components += 1
            for v in f.variables:
                a, b = find(key), find(v)
                if a == b:
                    raise InferenceError("factor graph has a cycle; tree BP would not be exact")
                parent[a] = b
                components -= 1
        assert nodes - edges == components


def belief_propagation(graph: DiscreteFactorGraph) -> dict[str, np.ndarray]:
    """Exact normalized marginals of every variable by two-pass message passing."""
    graph.check_tree()
    var_factors: dict[str, list[int]] = defaultdict(list)
    for i, f in enumerate(graph.factors):
        for v in f.variables:
            var_factors[v].append(i)

    # messages keyed by (sender, receiver); variables are strings, factors ints
    msgs: dict[tuple, np.ndarray] = {}
    marginals: dict[str, np.ndarray] = {}
    visited: set[str] = set()

    def var_to_factor(v: str, fi: int) -> np.ndarray:
        out = np.ones(graph.cardinality[v])
        for other in var_factors[v]:
            if other != fi:
                out = out * msgs[(other, v)]
        return _normalize(out)

    def factor_to_var(fi: int, v: str) -> np.ndarray:
        f = graph.factors[fi]
        target = f.variables.index(v)
        incoming = {a: msgs[(u, fi)] for a, u in enumerate(f.variables) if u != v}
        return _normalize(f.message_to(target, incoming))

    for root in graph.cardinality:
        if root in visited:
            continue
        # BFS over the bipartite tree from this root
        order: list[tuple[object, object]] = []  # (node, parent)
        queue = deque([(root, None)])
        seen = {root}
        while queue:
            node, par = queue.popleft()
            order.append((node, par))
            nbrs = var_factors[node] if isinstance(node, str) else graph.factors[node].variables
            for nb in nbrs:
                if nb not in seen:
                    seen.add(nb)
                    queue.append((nb, node))
        for node, par in reversed(order):
            if par is None:
                continue
            msgs[(node, par)] = var_to_factor(node, par) if isinstance(node, str) else factor_to_var(node, par)
        for node, par in order:
            nbrs = var_factors[node] if isinstance(node, str) else graph.factors[node].variables
            for nb in nbrs:
                if nb == par:
                    continue
                msgs[(node, nb)] = var_to_factor(node, nb) if isinstance(node, str) else factor_to_var(node, nb)
        for node, _ in order:
            if isinstance(node, str):
                visited.add(node)
                belief = np.ones(graph.cardinality[node])
                for fi in var_factors[node]:
                    belief = belief * msgs[(fi, node)]
                total = belief.sum()
                if not total > 0:
                    raise InferenceError(f"all-zero belief for {node}: evidence is impossible under the model")
                marginals[node] = belief / total
    return marginals


def _normalize(v: np.ndarray) -> np.ndarray:
    total = v.sum()
    return v / total if total > 0 else v
