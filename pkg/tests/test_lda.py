from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kgns.lda import TopicError, generate_topics, idf_weights


def two_cluster_captions(n=10, seed=0):
    rng = np.random.default_rng(seed)
    food = ["bread", "soup", "apple", "cook", "eat", "kitchen"]
    sport = ["ball", "run", "team", "score", "goal", "coach"]
    docs, truth = {}, {}
    for i in range(n):
        words = food if i % 2 else sport
        docs[f"d{i:02d}"] = list(rng.choice(words, size=8))
        truth[f"d{i:02d}"] = i % 2
    return docs, truth


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_distributions_normalized_after_every_sweep(seed, tfidf):
    docs, _ = two_cluster_captions(6, seed % 100)
    sweeps = []

    def check(sweep, topic_word, doc_topic):
        sweeps.append(sweep)
        assert np.all(topic_word >= 0) and np.all(doc_topic >= 0)
        np.testing.assert_allclose(topic_word.sum(axis=1), 1.0, atol=1e-9)
        np.testing.assert_allclose(doc_topic.sum(axis=1), 1.0, atol=1e-9)

    generate_topics(docs, n_topics=3, seed=seed, sweeps=5, tfidf=tfidf, callback=check)
    assert sweeps == list(range(5))


def test_disjoint_clusters_are_pure():
    docs, truth = two_cluster_captions(20)
    labels = generate_topics(docs, n_topics=2, seed=0, sweeps=100).labels
    for cluster in (0, 1):
        assert len({labels[d] for d in docs if truth[d] == cluster}) == 1
    assert len(set(labels.values())) == 2


def test_identical_documents_share_a_label():
    docs, _ = two_cluster_captions(10)
    docs["copy"] = list(docs["d03"])
    labels = generate_topics(docs, n_topics=3, seed=1, sweeps=30).labels
    assert labels["copy"] == labels["d03"]


def test_seeded_runs_identical():
    docs, _ = two_cluster_captions(10)
    a = generate_topics(docs, n_topics=3, seed=7, sweeps=20)
    b = generate_topics(docs, n_topics=3, seed=7, sweeps=20)
    assert np.array_equal(a.topic_word, b.topic_word) and a.labels == b.labels


def test_infer_ignores_unknown_words():
    docs, _ = two_cluster_captions(10)
    model = generate_topics(docs, n_topics=2, seed=0, sweeps=50)
    np.testing.assert_allclose(model.infer(["zebra"]), [0.5, 0.5])
    theta = model.infer(["ball", "goal", "zebra"])
    assert theta.sum() == pytest.approx(1.0) and model.label(["ball", "goal"]) == model.labels["d00"]
    assert set(model.top_words(model.labels["d00"], 6)) == {"ball", "run", "team", "score", "goal", "coach"}


def test_idf_weights_match_formula():
    docs = [["a", "b"], ["a"], ["a", "c", "c"]]
    vocab = ["a", "b", "c"]
    raw = {w: math.log(4 / (1 + df)) + 1 for w, df in (("a", 3), ("b", 1), ("c", 1))}
    tokens = [w for d in docs for w in d]
    mean = sum(raw[w] for w in tokens) / len(tokens)
    np.testing.assert_allclose(idf_weights(docs, vocab), [raw[w] / mean for w in vocab], rtol=1e-12)


def test_errors():
    with pytest.raises(TopicError, match="cannot support"):
        generate_topics({"a": ["x"]}, n_topics=2)
    with pytest.raises(TopicError, match="empty"):
        generate_topics({"a": [], "b": []}, n_topics=2)
    with pytest.raises(TopicError, match="sweep"):
        generate_topics({"a": ["x"], "b": ["y"]}, n_topics=2, sweeps=0)
