from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from kgns.bp import DiscreteFactorGraph, InferenceError, belief_propagation

from oracles import brute_force_marginals, random_tree_graph


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bp_matches_enumeration(seed):
    g = random_tree_graph(np.random.default_rng(seed))
    bp = belief_propagation(g)
    ref = brute_force_marginals(g)
    for v in g.cardinality:
        np.testing.assert_allclose(bp[v], ref[v], rtol=0, atol=1e-9)
        assert bp[v].sum() == pytest.approx(1.0, abs=1e-9)


def test_sparse_and_dense_tables_agree():
    rng = np.random.default_rng(0)
    table = rng.random((5, 7)) * (rng.random((5, 7)) < 0.5) + 1e-3
    unary = rng.random(7)
    out = []
    for t in (table, sp.csr_matrix(table)):
        g = DiscreteFactorGraph()
        g.add_variable("a", 5)
        g.add_variable("b", 7)
        g.add_factor(["a", "b"], t)
        g.add_factor(["b"], unary)
        out.append(belief_propagation(g))
    for v in ("a", "b"):
        np.testing.assert_allclose(out[0][v], out[1][v], atol=1e-12)


def test_cycle_rejected():
    g = DiscreteFactorGraph()
    for v in "abc":
        g.add_variable(v, 2)
    g.add_factor(["a", "b"], np.ones((2, 2)))
    g.add_factor(["b", "c"], np.ones((2, 2)))
    g.add_factor(["c", "a"], np.ones((2, 2)))
    with pytest.raises(InferenceError, match="cycle"):
        belief_propagation(g)


def test_factor_shape_errors():
    g = DiscreteFactorGraph()
    g.add_variable("a", 2)
    with pytest.raises(InferenceError):
        g.add_factor(["a"], np.ones(3))
    with pytest.raises(InferenceError):
        g.add_factor(["zzz"], np.ones(2))
    with pytest.raises(InferenceError):
        g.add_variable("b", 0)


def test_impossible_evidence_raises():
    g = DiscreteFactorGraph()
    g.add_variable("a", 2)
    g.add_factor(["a"], np.array([1.0, 0.0]))
    g.add_factor(["a"], np.array([0.0, 1.0]))
    with pytest.raises(InferenceError, match="impossible"):
        belief_propagation(g)


def test_isolated_variable_uniform():
    g = DiscreteFactorGraph()
    g.add_variable("a", 4)
    np.testing.assert_allclose(belief_propagation(g)["a"], np.full(4, 0.25))
