from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kgns.grounding import one_hot_from_gold
from kgns.isr import knn_fit
from kgns.kg import EntityId, KnowledgeGraph
from kgns.pipeline import (
    PipelineError,
    WindowSpec,
    accuracy,
    baselines,
    embed_sequence,
    embed_sign,
    format_report,
    gloss,
    gloss_predictions,
    lemmatize,
    load_captions,
    load_word_vectors,
    mean_encoder,
    run_pipeline,
    run_video,
    save_captions,
    save_word_vectors,
    split_videos,
    topic_train,
    translation_weights,
    windows,
    write_report,
)

from conftest import ph, sign


def en(word):
    return EntityId("en", word)


# -- windows ---------------------------------------------------------------------

def test_window_examples():
    assert windows(100, WindowSpec(60, 30)) == [(0, 60), (30, 90)]
    assert windows(60, WindowSpec(60, 15)) == [(0, 60)]
    assert windows(20, WindowSpec(60, 15)) == [(0, 20)]
    with pytest.raises(ValueError):
        windows(0, WindowSpec(60, 15))
    with pytest.raises(ValueError):
        WindowSpec(0, 15)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 400), st.integers(1, 80), st.integers(1, 40))
def test_window_invariants(length, width, step):
    ws = windows(length, WindowSpec(width, step))
    assert ws and all(0 <= a < b <= length for a, b in ws)
    if width > length:
        assert ws == [(0, length)]
    else:
        assert all(b - a == width for a, b in ws)
        assert [a for a, _ in ws] == list(range(0, length - width + 1, step))
        assert len(ws) == (length - width) // step + 1


# -- glossing --------------------------------------------------------------------

def test_gloss_examples():
    a, b = sign("a"), sign("b")
    seq = gloss_predictions([(a, 0.5), (a, 0.9), (b, 0.05), (a, 0.3), (b, 0.1), (b, 0.7)])
    assert seq.signs == [(a, 0.9), (b, 0.7)]
    assert gloss_predictions([(a, 0.1)]).signs == []


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("abc"), st.floats(0, 1)), max_size=20), st.floats(0, 1))
def test_gloss_invariants(raw, threshold):
    preds = [(sign(s), p) for s, p in raw]
    out = gloss_predictions(preds, threshold=threshold).signs
    assert all(p > threshold for _, p in out)
    assert all(x[0] != y[0] for x, y in zip(out, out[1:]))
    # every kept entry is the most confident of its run of surviving windows
    kept = [(s, p) for s, p in preds if p > threshold]
    runs = []
    for s, p in kept:
        if runs and runs[-1][0] == s:
            runs[-1][1].append(p)
        else:
            runs.append((s, [p]))
    assert out == [(s, max(ps)) for s, ps in runs]


def test_gloss_from_model(lexicon_graph):
    signs = lexicon_graph.entities_in("asl")
    index = knn_fit(lexicon_graph, signs, k=1)
    obs = [one_hot_from_gold(lexicon_graph, s, window_id=f"w{i}") for i, s in enumerate([signs[0], signs[0], signs[1]])]
    assert [s for s, _ in gloss(obs, index).signs] == [signs[0], signs[1]]


# -- embeddings -------------------------------------------------------------------

def test_embed_sign_renormalizes_weights():
    wv = {"x": np.array([1.0, 0.0]), "y": np.array([0.0, 1.0])}
    out = embed_sign(KnowledgeGraph(), wv, sign("a"), {en("x"): 0.5, en("y"): 0.25})
    np.testing.assert_allclose(out, [2 / 3, 1 / 3], atol=1e-12)


def test_single_translation_is_its_word_vector():
    g = KnowledgeGraph()
    g.add(sign("a"), "has_translation", en("cat"), "translation", "src")
    wv = {"cat": np.array([0.3, -2.0, 5.0])}
    np.testing.assert_array_equal(embed_sign(g, wv, sign("a")), wv["cat"])


def test_translation_weights_count_sources():
    g = KnowledgeGraph()
    g.add(sign("a"), "has_translation", en("x"), "translation", "s1")
    g.add(sign("a"), "has_translation", en("x"), "translation", "s2")
    g.add(sign("a"), "has_translation", en("y"), "translation", "s1")
    assert translation_weights(g, sign("a")) == {en("x"): 2, en("y"): 1}
    np.testing.assert_allclose(embed_sign(g, {"x": np.ones(2), "y": np.zeros(2)}, sign("a")), [2 / 3, 2 / 3])
    with pytest.raises(ValueError):
        embed_sign(g, {}, sign("zzz"))
    with pytest.raises(KeyError):
        embed_sign(g, {"x": np.ones(2)}, sign("a"))


vec3 = st.lists(st.floats(-10, 10), min_size=3, max_size=3).map(np.array)


@settings(max_examples=100, deadline=None)
@given(vec3, vec3, vec3, vec3, st.floats(0.01, 5), st.floats(0.01, 5), st.floats(-3, 3), st.floats(-3, 3))
def test_embed_sign_is_linear_in_word_vectors(u1, u2, v1, v2, w1, w2, a, b):
    weights = {en("x"): w1, en("y"): w2}
    g = KnowledgeGraph()

    def emb(x, y):
        return embed_sign(g, {"x": x, "y": y}, sign("s"), weights)

    np.testing.assert_allclose(emb(a * u1 + b * v1, a * u2 + b * v2), a * emb(u1, u2) + b * emb(v1, v2), atol=1e-9)


def test_embed_sequence_examples():
    vs = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
    np.testing.assert_allclose(embed_sequence(vs), [0.5, 0.5])
    np.testing.assert_allclose(embed_sequence(vs, [3, 1]), [0.75, 0.25])
    np.testing.assert_allclose(embed_sequence(vs[:1], [0.2]), [1.0, 0.0])
    np.testing.assert_allclose(mean_encoder(np.eye(3), np.ones(3)), np.full(3, 1 / 3))
    with pytest.raises(ValueError):
        embed_sequence([])
    np.testing.assert_allclose(embed_sequence(vs, encoder=lambda V, c: V.max(axis=0)), [1.0, 1.0])


# -- topic classifiers ----------------------------------------------------------

def separable(n=40, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = rng.normal(size=(n, 4)) * 0.1 + np.where(y[:, None] == 1, 2.0, -2.0)
    return X, ["sports" if t else "food" for t in y]


def test_mlp_topic_classifier_separates():
    X, y = separable()
    clf = topic_train(X, y, "mlp_t", seed=0, epochs=200)
    assert accuracy(clf.predict(X), y) == 1.0
    assert clf.predict_proba(X).shape == (len(X), 2)


def test_knn_topic_classifier_memorizes():
    X, y = separable()
    assert accuracy(topic_train(X, y, "knn_t", k=1).predict(X), y) == 1.0


def test_knn_topic_tie_goes_to_nearest():
    X = np.array([[0.0], [1.0], [-3.0]])
    clf = topic_train(X, ["a", "b", "b"], "knn_t", k=2)
    assert clf.predict([[0.2]]) == ["a"]
    assert clf.predict([[0.8]]) == ["b"]


def test_topic_training_deterministic_and_validated():
    X, y = separable()
    a = topic_train(X, y, seed=3, epochs=5)
    b = topic_train(X, y, seed=3, epochs=5)
    assert np.array_equal(a.predict_proba(X), b.predict_proba(X))
    with pytest.raises(ValueError):
        topic_train(X, ["one"] * len(X))
    with pytest.raises(ValueError):
        topic_train(X, y, kind="svm")


def test_baselines_and_accuracy():
    assert baselines(["a", "a", "b", "c"]) == (1 / 3, 0.5)
    assert accuracy(["a", "b"], ["a", "a"]) == 0.5
    with pytest.raises(ValueError):
        baselines([])
    with pytest.raises(ValueError):
        accuracy([], [])


def test_split_is_seeded_partition():
    names = [f"v{i}" for i in range(50)]
    tr, va, te = split_videos(names, seed=1)
    assert (len(tr), len(va), len(te)) == (40, 5, 5)
    assert sorted(tr + va + te) == sorted(names)
    assert split_videos(names, seed=1) == (tr, va, te)
    assert split_videos(names, seed=2) != (tr, va, te)


# -- end to end -------------------------------------------------------------------

def topic_world():
    """Sign a (translation 'apple') always means topic food, sign b ('ball') topic sports."""
    g = KnowledgeGraph()
    for s, shape, loc, word in (("a", "claw", "chin", "apple"), ("b", "B", "chest", "ball")):
        g.add(sign(s), "handshape", ph(shape), "phonological")
        g.add(sign(s), "major_location", ph(loc), "phonological")
        g.add(sign(s), "has_translation", en(word), "translation", "src")
    wv = {"apple": np.array([1.0, 0.0]), "ball": np.array([0.0, 1.0])}
    videos, labels = {}, {}
    for i in range(20):
        s = sign("a" if i % 2 else "b")
        videos[f"vid{i:02d}"] = [one_hot_from_gold(g, s, window_id=f"vid{i:02d}@{f}") for f in range(90)]
        labels[f"vid{i:02d}"] = "food" if i % 2 else "sports"
    return g, wv, videos, labels


def test_pipeline_maps_sign_to_topic(tmp_path):
    g, wv, videos, labels = topic_world()
    index = knn_fit(g, g.entities_in("asl"), k=1)
    out = run_pipeline(videos, index, g, wv, labels, WindowSpec(60, 30), kind="knn_t", k=1, seed=0)
    assert out["accuracy"] == 1.0 and len(out["test"]) == 2
    assert set(out["train"]) | set(out["test"]) == set(videos)
    r = out["results"][0]
    assert [s for s, _ in r.sequence.signs] == [sign("a" if labels[r.video] == "food" else "b")]
    assert ("windows", "count", "2") in r.trace
    write_report(out["results"], tmp_path / "a.tsv")
    again = run_pipeline(videos, index, g, wv, labels, WindowSpec(60, 30), kind="knn_t", k=1, seed=0)
    write_report(again["results"], tmp_path / "b.tsv")
    assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()
    assert "-> food" in format_report(out["results"]) or "-> sports" in format_report(out["results"])


def test_empty_gloss_fails_at_gloss_stage():
    g, wv, videos, _ = topic_world()
    index = knn_fit(g, g.entities_in("asl"), k=1)
    with pytest.raises(PipelineError) as err:
        run_video("vid00", videos["vid00"], index, g, wv, WindowSpec(60, 30), threshold=1.0)
    assert err.value.stage == "gloss"


def test_missing_word_vector_fails_at_embed_stage():
    g, _, videos, _ = topic_world()
    index = knn_fit(g, g.entities_in("asl"), k=1)
    with pytest.raises(PipelineError) as err:
        run_video("vid00", videos["vid00"], index, g, {}, WindowSpec(60, 30))
    assert err.value.stage == "embed"


# -- text helpers -------------------------------------------------------------------

@pytest.mark.parametrize("word,lemma", [("Cats", "cat"), ("running", "run"), ("cities", "city"), ("boxes", "box"),
                                        ("makes", "make"), ("walked", "walk"), ("class", "class"), ("is", "is")])
def test_lemmatize(word, lemma):
    assert lemmatize(word) == lemma


def test_caption_and_vector_files(tmp_path):
    caps = {"v1": ["apple", "eat"], "v0": ["ball"]}
    save_captions(caps, tmp_path / "c.tsv")
    assert load_captions(tmp_path / "c.tsv") == caps
    assert load_captions(tmp_path / "c.tsv", lemmatize)["v1"] == ["apple", "eat"]
    wv = {"a": np.array([0.1, 2.5]), "b": np.array([-1.0, 3.0])}
    save_word_vectors(wv, tmp_path / "w.tsv")
    back = load_word_vectors(tmp_path / "w.tsv")
    for k in wv:
        np.testing.assert_allclose(back[k], wv[k])
    (tmp_path / "bad.tsv").write_text("a\t1 2\nb\t1\n", encoding="utf-8")
    with pytest.raises(ValueError, match="length"):
        load_word_vectors(tmp_path / "bad.tsv")
