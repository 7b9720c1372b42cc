from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kgns.grounding import (
    ObservationError,
    ObservationSet,
    PhonemeObservation,
    from_values,
    group_frames,
    load_observations,
    one_hot_from_gold,
    pool,
    save_observations,
)
from kgns.kg import GraphError, KnowledgeGraph
from kgns.phonology import FeatureSchema

from conftest import ph, sign


@st.composite
def observation_sets(draw):
    n = draw(st.integers(1, 5))
    out = []
    for w in range(n):
        dists = {}
        for ft in draw(st.lists(st.sampled_from(["handshape", "location", "movement"]), min_size=1, unique=True)):
            k = draw(st.integers(1, 4))
            raw = np.array(draw(st.lists(st.floats(0.01, 1.0), min_size=k, max_size=k)))
            dists[ft] = {f"{ft}_{i}": float(p) for i, p in enumerate(raw / raw.sum())}
        out.append(PhonemeObservation(f"v{draw(st.integers(0, 3))}@{w}", dists))
    return out


@settings(max_examples=80, deadline=None)
@given(observation_sets())
def test_file_round_trip(tmp_path_factory, observations):
    path = tmp_path_factory.mktemp("obs") / "obs.txt"
    save_observations(observations, path)
    back = load_observations(path)
    assert [o.window_id for o in back] == [o.window_id for o in observations]
    for a, b in zip(observations, back):
        assert list(a.distributions) == list(b.distributions)
        for ft in a.distributions:
            assert list(a.distributions[ft]) == list(b.distributions[ft])
            np.testing.assert_allclose(list(b.distributions[ft].values()), list(a.distributions[ft].values()),
                                       rtol=1e-8)
        b.validate()


def test_sum_off_by_a_tenth_rejected(tmp_path):
    path = tmp_path / "obs.txt"
    path.write_text("window w0\ndist handshape a:0.5 b:0.4\n", encoding="utf-8")
    with pytest.raises(ObservationError, match="sums to 0.9"):
        load_observations(path)


@pytest.mark.parametrize("text,match", [
    ("dist handshape a:1\n", "before any window"),
    ("window w\nwindow w\n", "duplicate"),
    ("window w\ndist handshape a:x\n", "bad probability"),
    ("window w\ndist handshape a\n", "bad value"),
    ("window w\ndist handshape a:1.5 b:-0.5\n", "outside"),
    ("window w\ndist handshape a:1\ndist handshape a:1\n", "repeated"),
    ("window w\nframe 3\n", "unknown directive"),
])
def test_malformed_files(tmp_path, text, match):
    path = tmp_path / "obs.txt"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(ObservationError, match=match):
        load_observations(path)


def test_unknown_phoneme_against_graph(tmp_path, lexicon_graph):
    path = tmp_path / "obs.txt"
    path.write_text("window w\ndist handshape nonsense_shape:1\n", encoding="utf-8")
    with pytest.raises(ObservationError, match="nonsense_shape"):
        load_observations(path, lexicon_graph)


def test_file_order_preserved(tmp_path):
    ids = ["z", "a", "m", "b"]
    save_observations([from_values(i, {"handshape": "V"}) for i in ids], tmp_path / "o.txt")
    assert [o.window_id for o in load_observations(tmp_path / "o.txt")] == ids


def test_one_hot_from_gold(lexicon_graph):
    schema = FeatureSchema.from_graph(lexicon_graph)
    for s in lexicon_graph.entities_in("asl"):
        obs = one_hot_from_gold(lexicon_graph, s, schema)
        obs.validate({e.label for e in lexicon_graph.entities_in("phoneme")})
        for f in lexicon_graph.facts_with_head(s):
            if f.rel_type == "phonological":
                assert obs.distributions[f.relation.name] == {f.tail.label: 1.0}


def test_missing_annotation_gives_uniform():
    g = KnowledgeGraph()
    g.add(sign("a"), "handshape", ph("V"), "phonological")
    g.add(sign("b"), "handshape", ph("B"), "phonological")
    g.add(sign("b"), "major_location", ph("chin"), "phonological")
    g.add(sign("c"), "major_location", ph("chest"), "phonological")
    obs = one_hot_from_gold(g, sign("a"))
    assert obs.distributions["major_location"] == {"chest": 0.5, "chin": 0.5}
    obs.validate()


def test_identical_signs_identical_observations():
    g = KnowledgeGraph()
    for s in ("a", "b"):
        g.add(sign(s), "handshape", ph("V"), "phonological")
        g.add(sign(s), "major_location", ph("chin"), "phonological")
    a, b = one_hot_from_gold(g, sign("a"), window_id="w"), one_hot_from_gold(g, sign("b"), window_id="w")
    assert a == b


def test_sign_without_phonology_rejected():
    g = KnowledgeGraph()
    g.add(sign("a"), "handshape", ph("V"), "phonological")
    g.add_entity(sign("bare"))
    with pytest.raises(GraphError):
        one_hot_from_gold(g, sign("bare"))


def test_argmax_breaks_ties_by_name():
    obs = PhonemeObservation("w", {"handshape": {"b": 0.5, "a": 0.5}})
    assert obs.argmax("handshape") == "a"
    assert obs.is_argmax("handshape", "b") and not obs.is_argmax("handshape", "c")


def test_pool_averages_frames():
    frames = [PhonemeObservation("v@0", {"hs": {"a": 1.0}}), PhonemeObservation("v@1", {"hs": {"a": 0.5, "b": 0.5}})]
    pooled = pool(frames, "v:0")
    assert pooled.window_id == "v:0" and pooled.distributions == {"hs": {"a": 0.75, "b": 0.25}}
    with pytest.raises(ObservationError):
        pool([], "empty")


def test_group_frames_by_video():
    obs = [from_values(i, {"hs": "a"}) for i in ("v2@0", "v1@0", "v2@1", "a@b@2")]
    grouped = group_frames(obs)
    assert list(grouped) == ["v2", "v1", "a@b"]
    assert [o.window_id for o in grouped["v2"]] == ["v2@0", "v2@1"]
    with pytest.raises(ObservationError, match="lacks"):
        group_frames([from_values("noframe", {"hs": "a"})])


def test_duplicate_ids_in_set():
    with pytest.raises(ObservationError):
        ObservationSet([from_values("w", {"hs": "a"}), from_values("w", {"hs": "b"})])
