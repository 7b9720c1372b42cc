"""Independent brute-force references for exact-inference tests."""
from __future__ import annotations

import itertools
import math

import numpy as np
import scipy.sparse as sp

from kgns.bp import DiscreteFactorGraph
from kgns.grounding import PhonemeObservation
from kgns.kg import EntityId, KnowledgeGraph
from kgns.phonology import FeatureSchema


def random_tree_graph(rng: np.random.Generator, max_vars: int = 4, max_states: int = 6) -> DiscreteFactorGraph:
    """Random forest-structured factor graph with unary, pairwise and occasional ternary factors."""
    n = int(rng.integers(1, max_vars + 1))
    g = DiscreteFactorGraph()
    names = [f"x{i}" for i in range(n)]
    for v in names:
        g.add_variable(v, int(rng.integers(1, max_states + 1)))
    card = g.cardinality
    i = 1
    while i < n:
        if i + 1 < n and rng.random() < 0.3:
            # one factor joining an earlier variable to two new ones
            parent = names[int(rng.integers(i))]
            vs = [parent, names[i], names[i + 1]]
            g.add_factor(vs, rng.random(tuple(card[v] for v in vs)) + 0.01)
            i += 2
            continue
        if rng.random() < 0.85:
            parent = names[int(rng.integers(i))]
            table = rng.random((card[parent], card[names[i]])) + 0.01
            if rng.random() < 0.3:
                table[rng.random(table.shape) < 0.3] = 0.0
                table[:, 0] += 0.5  # keep every row reachable
                table = sp.csr_matrix(table)
            g.add_factor([parent, names[i]], table)
        i += 1
    for v in names:
        for _ in range(int(rng.integers(0, 3))):
            g.add_factor([v], rng.random(card[v]) + 0.01)
    return g


def brute_force_marginals(g: DiscreteFactorGraph) -> dict[str, np.ndarray]:
    names = list(g.cardinality)
    joint = np.zeros(tuple(g.cardinality[v] for v in names))
    tables = [(f.variables, f.table.toarray() if sp.issparse(f.table) else f.table) for f in g.factors]
    for state in itertools.product(*(range(g.cardinality[v]) for v in names)):
        at = dict(zip(names, state))
        w = 1.0
        for vs, table in tables:
            w *= table[tuple(at[v] for v in vs)]
        joint[state] = w
    joint /= joint.sum()
    return {v: joint.sum(axis=tuple(j for j in range(len(names)) if j != i)) for i, v in enumerate(names)}


def laplace_posterior(
    graph: KnowledgeGraph,
    signs: list[EntityId],
    schema: FeatureSchema,
    obs: PhonemeObservation,
    alpha: float | None,
    prior: np.ndarray | None = None,
) -> np.ndarray:
    """p(sign | obs) by enumerating every joint phoneme assignment.

    Each sign's group table is (count + alpha) / (1 + alpha * |cells|), with
    an unannotated feature counting 1/|values| towards each of its values.
    ``alpha=None`` uses 1/|cells| per group (one pseudo-count in total).
    """
    gold = {}
    for s in signs:
        vals = {}
        for f in graph.facts_with_head(s):
            if f.rel_type == "phonological" and f.relation.name in schema.vocab:
                vals[f.relation.name] = min(vals.get(f.relation.name, f.tail.label), f.tail.label)
        gold[s] = vals
    fts = list(schema.feature_types)
    prior = np.full(len(signs), 1.0 / len(signs)) if prior is None else prior
    cells = {g: math.prod(len(schema.vocab[ft]) for ft in members) for g, members in schema.groups.items()}
    post = np.zeros(len(signs))
    for assignment in itertools.product(*(schema.vocab[ft] for ft in fts)):
        at = dict(zip(fts, assignment))
        evidence = math.prod(obs.prob(ft, at[ft]) for ft in fts)
        if evidence == 0.0:
            continue
        for i, s in enumerate(signs):
            p = prior[i]
            for g, members in schema.groups.items():
                count = 1.0
                for ft in members:
                    if ft in gold[s]:
                        count *= float(gold[s][ft] == at[ft])
                    else:
                        count /= len(schema.vocab[ft])
                a = 1.0 / cells[g] if alpha is None else alpha
                p *= (count + a) / (1.0 + a * cells[g])
            post[i] += p * evidence
    return post / post.sum()
