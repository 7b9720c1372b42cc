from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from kgns.embeddings import (
    EmbeddingError,
    EmbeddingSpace,
    NegativeSamplingError,
    TrainConfig,
    auc,
    load_space,
    logistic,
    node_embedding,
    sample_negative,
    save_space,
    score,
    score_arrays,
    score_grads,
    train,
    verify,
)
from kgns.kg import EntityId, Fact, KnowledgeGraph, RelationId

from conftest import ph, sign


def numeric_grads(scorer, h, r, t, step=1e-5):
    out = []
    for which in range(3):
        args = [h.copy(), r.copy(), t.copy()]
        g = np.zeros_like(args[which])
        for i in range(len(g)):
            up = [a.copy() for a in args]
            down = [a.copy() for a in args]
            up[which][i] += step
            down[which][i] -= step
            g[i] = (score_arrays(scorer, *up) - score_arrays(scorer, *down)) / (2 * step)
        out.append(g)
    return out


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def gradient_check(scorer, rng, n_points=100, dim=8):
    worst = 0.0
    for _ in range(n_points):
        h, r, t = rng.standard_normal((3, dim))
        _, gh, gr, gt = score_grads(scorer, h, r, t)
        for a, n in zip((gh, gr, gt), numeric_grads(scorer, h, r, t)):
            worst = max(worst, rel_err(a, n))
    return worst


@pytest.mark.parametrize("scorer", ["TransE", "DistMult"])
def test_scorer_gradients(scorer):
    assert gradient_check(scorer, np.random.default_rng(1), n_points=20) <= 1e-4


vec = arrays(np.float64, 6, elements=st.floats(-5, 5, allow_nan=False))


@settings(max_examples=80, deadline=None)
@given(vec, vec, vec, vec)
def test_transe_translation_identity(h, r, t, c):
    a = score_arrays("TransE", h, r, t)
    b = score_arrays("TransE", h + c, r, t + c)
    assert a == pytest.approx(b, abs=1e-9)


@settings(max_examples=80, deadline=None)
@given(vec, vec, vec)
def test_distmult_symmetry(h, r, t):
    assert score_arrays("DistMult", h, r, t) == pytest.approx(score_arrays("DistMult", t, r, h), abs=1e-9)


def space_of(scorer, entities, relations):
    return EmbeddingSpace(len(next(iter(entities.values()))), scorer,
                          {k: np.asarray(v, float) for k, v in entities.items()},
                          {k: np.asarray(v, float) for k, v in relations.items()})


def fact(h, r, t):
    return Fact(EntityId.parse(h), RelationId(r, "semantic"), EntityId.parse(t))


def test_score_examples():
    s = space_of("TransE", {"asl:h": [1, 0], "asl:t": [1, 1], "asl:z": [0, 0]}, {"r": [0, 1]})
    assert score(s, fact("asl:h", "r", "asl:t")) == 0.0
    assert score(s, fact("asl:h", "r", "asl:z")) == pytest.approx(-math.sqrt(2))
    d = space_of("DistMult", {"asl:h": [1, 0], "asl:t": [0, 3]}, {"r": [1, 1]})
    assert score(d, fact("asl:h", "r", "asl:t")) == 0.0
    assert verify(d, fact("asl:h", "r", "asl:t")) == 0.5


def test_verify_is_monotone_and_saturates():
    xs = np.linspace(-50, 50, 101)
    p = logistic(xs)
    assert np.all(np.diff(p) >= 0) and p[-1] == pytest.approx(1.0) and p[0] == pytest.approx(0.0)
    assert logistic(0.0) == 0.5
    assert logistic(1e6) == 1.0


def test_unknown_entity_or_scorer():
    s = space_of("TransE", {"asl:h": [1, 0]}, {"r": [0, 1]})
    with pytest.raises(EmbeddingError, match="asl:nope"):
        s.entity("asl:nope")
    with pytest.raises(EmbeddingError):
        EmbeddingSpace(2, "RotatE", {}, {})
    with pytest.raises(EmbeddingError):
        space_of("TransE", {"asl:h": [np.nan, 0]}, {"r": [0, 1]})


@pytest.mark.parametrize("kwargs", [{"epochs": 0}, {"margin": 0}, {"learning_rate": -1}, {"dim": 0}])
def test_config_preconditions(kwargs):
    with pytest.raises(EmbeddingError):
        TrainConfig(**kwargs)


# -- negatives -----------------------------------------------------------------

def test_negative_differs_in_one_slot_and_stays_in_namespace():
    g = KnowledgeGraph()
    g.add(sign("a"), "variant_of", sign("b"), "morphological")
    g.add_entity(sign("c"))
    f = g.facts[0]
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = sample_negative(g, f, rng)
        assert (n.head != f.head) + (n.tail != f.tail) == 1
        assert n.head.namespace == "asl" and n.tail.namespace == "asl"
        assert n not in g


def test_negative_sequence_deterministic():
    g = KnowledgeGraph()
    for i in range(5):
        g.add(sign(f"s{i}"), "handshape", ph(f"h{i}"), "phonological")
    f = g.facts[0]
    a = [sample_negative(g, f, np.random.default_rng(7)) for _ in range(3)]
    b = [sample_negative(g, f, np.random.default_rng(7)) for _ in range(3)]
    assert a == b


def test_saturated_relation_errors():
    g = KnowledgeGraph()
    names = ["a", "b", "c"]
    for x in names:
        for y in names:
            g.add(sign(x), "related", sign(y), "semantic")
    with pytest.raises(NegativeSamplingError):
        sample_negative(g, g.facts[0], np.random.default_rng(0))


# -- training ---------------------------------------------------------------------

def toy_graph() -> KnowledgeGraph:
    g = KnowledgeGraph()
    for i in range(3):
        g.add(sign(f"s{i}"), "handshape", ph(f"h{i}"), "phonological")
        g.add(sign(f"s{i}"), "has_translation", EntityId("en", f"w{i}"), "translation")
    return g


@pytest.mark.parametrize("scorer", ["TransE", "DistMult"])
def test_training_separates_true_facts(scorer):
    g = toy_graph()
    space = train(g, TrainConfig(epochs=200, dim=16, scorer=scorer, seed=0, negatives_per_positive=4))
    rng = np.random.default_rng(0)
    pos = [score(space, f) for f in g.facts]
    neg = [score(space, sample_negative(g, f, rng)) for f in g.facts for _ in range(5)]
    assert np.mean(pos) > np.mean(neg)


def test_training_deterministic_bitwise():
    cfg = TrainConfig(epochs=20, dim=8, seed=3)
    a, b = train(toy_graph(), cfg), train(toy_graph(), cfg)
    for k in a.entity_vectors:
        assert np.array_equal(a.entity_vectors[k], b.entity_vectors[k])
    for k in a.relation_vectors:
        assert np.array_equal(a.relation_vectors[k], b.relation_vectors[k])


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("scorer", ["TransE", "DistMult"])
def test_loss_mostly_non_increasing(scorer, seed):
    # sampled negatives make the epoch loss noisy; 80% of steps must still not rise
    space = train(toy_graph(), TrainConfig(epochs=200, dim=16, scorer=scorer, seed=seed, learning_rate=0.1))
    hist = np.array(space.loss_history)
    assert np.mean(np.diff(hist) <= 1e-12) >= 0.8
    assert hist[-1] < hist[0]


def test_node_embedding_shape_and_finiteness():
    space = train(toy_graph(), TrainConfig(epochs=5, dim=12))
    v = node_embedding(space, ph("h0"))
    assert v.shape == (12,) and np.all(np.isfinite(v))
    v[:] = 0  # a copy, not a view
    assert np.any(space.entity(ph("h0")) != 0)


def test_shared_context_phonemes_embed_close():
    # p and q attach to exactly the same signs; the others each to one sign
    g = KnowledgeGraph()
    for i in range(6):
        s = sign(f"s{i}")
        g.add(s, "handshape", ph("p"), "phonological")
        g.add(s, "handshape", ph("q"), "phonological")
        g.add(s, "location", ph(f"loc{i}"), "phonological")
    space = train(g, TrainConfig(epochs=200, dim=16, seed=0))

    def cos(a, b):
        x, y = space.entity(ph(a)), space.entity(ph(b))
        return float(x @ y / np.linalg.norm(x) / np.linalg.norm(y))

    names = ["p", "q"] + [f"loc{i}" for i in range(6)]
    pairs = [(a, b) for i, a in enumerate(names) for b in names[i + 1:]]
    assert cos("p", "q") > np.mean([cos(a, b) for a, b in pairs])


def test_auc():
    assert auc([1, 2], [0, 0]) == 1.0
    assert auc([0], [0]) == 0.5
    with pytest.raises(EmbeddingError):
        auc([], [1])


def test_space_file_round_trip(tmp_path):
    space = train(toy_graph(), TrainConfig(epochs=3, dim=4, scorer="DistMult"))
    save_space(space, tmp_path / "e.txt")
    back = load_space(tmp_path / "e.txt")
    assert back.scorer == "DistMult" and back.dim == 4
    for k, v in space.entity_vectors.items():
        np.testing.assert_allclose(back.entity_vectors[k], v, rtol=1e-8)
