"""Seeded synthetic lexicons, observations and corpora for tests and demos.

Phoneme labels are ``<feature>_<j>``. Within each feature the values come
in confusable pairs (0,1), (2,3), ...; a sign family picks one pair per
feature and its signs use either member, so pair members share contexts in
the graph the way allophones do.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grounding import PhonemeObservation
from .kg import EntityId, KnowledgeGraph
from .phonology import DEFAULT_FEATURE_TYPES, FeatureSchema


def phoneme_label(feature: str, j: int) -> str:
    return f"{feature}_{j}"


def sibling(label: str) -> str:
    """The confusable partner of a phoneme label."""
    feature, _, j = label.rpartition("_")
    return phoneme_label(feature, int(j) ^ 1)


@dataclass
class Lexicon:
    graph: KnowledgeGraph
    signs: list[EntityId]
    phonology: dict[EntityId, dict[str, str]]
    family: dict[EntityId, int]
    schema: FeatureSchema


def make_lexicon(
    n_signs: int = 100,
    seed: int = 0,
    n_families: int = 10,
    values_per_feature: int = 6,
    feature_types: tuple[str, ...] = DEFAULT_FEATURE_TYPES,
    family_rate: float = 0.8,
    family_semantics: int = 0,
) -> Lexicon:
    """Phonologically unique signs whose values cluster by family.

    With ``family_semantics`` > 0 every sign also gets that many semantic
    feature facts shared by its family.
    """
    if values_per_feature % 2:
        raise ValueError("values_per_feature must be even (values come in pairs)")
    rng = np.random.default_rng(seed)
    n_pairs = values_per_feature // 2
    pair_of = rng.integers(0, n_pairs, size=(n_families, len(feature_types)))
    g = KnowledgeGraph()
    signs, phonology, family = [], {}, {}
    seen: set[tuple] = set()
    while len(signs) < n_signs:
        fam = int(rng.integers(n_families))
        values = []
        for i in range(len(feature_types)):
            if rng.random() < family_rate:
                j = 2 * int(pair_of[fam, i]) + int(rng.integers(2))
            else:
                j = int(rng.integers(values_per_feature))
            values.append(j)
        key = tuple(values)
        if key in seen:
            continue
        seen.add(key)
        sign = EntityId("asl", f"sign{len(signs):03d}")
        signs.append(sign)
        family[sign] = fam
        phonology[sign] = {ft: phoneme_label(ft, j) for ft, j in zip(feature_types, values)}
        for ft, label in phonology[sign].items():
            g.add(sign, ft, EntityId("phoneme", label), "phonological", "synthetic")
        for k in range(family_semantics):
            g.add(sign, "has_semantic_feature", EntityId("semfeat", f"family{fam}_{k}"), "semantic", "synthetic")
    # vocabularies hold observed values only, exactly what a saved fact file reproduces
    return Lexicon(g, signs, phonology, family, FeatureSchema.from_graph(g))


def noisy_observation(
    gold: dict[str, str],
    schema: FeatureSchema,
    rng: np.random.Generator,
    window_id: str,
    swap_rate: float = 0.0,
    confidence: float = 1.0,
) -> PhonemeObservation:
    """Soft observation peaked on the gold value, or on its confusable sibling with ``swap_rate``.

    A sibling outside the vocabulary is never chosen.
    """
    dists = {}
    for ft in schema.feature_types:
        vocab = schema.vocab[ft]
        peak = gold[ft]
        if rng.random() < swap_rate and sibling(peak) in vocab:
            peak = sibling(peak)
        rest = (1.0 - confidence) / (len(vocab) - 1) if len(vocab) > 1 else 0.0
        dists[ft] = {ph: (confidence if ph == peak else rest) for ph in vocab}
    return PhonemeObservation(window_id, dists)


def observations_for(
    lexicon: Lexicon,
    per_sign: int,
    rng: np.random.Generator,
    swap_rate: float = 0.0,
    confidence: float = 1.0,
    prefix: str = "w",
) -> tuple[list[PhonemeObservation], list[EntityId]]:
    obs, labels = [], []
    for sign in lexicon.signs:
        for i in range(per_sign):
            wid = f"{prefix}_{sign.label}_{i}"
            obs.append(noisy_observation(lexicon.phonology[sign], lexicon.schema, rng, wid, swap_rate, confidence))
            labels.append(sign)
    return obs, labels


# -- planted form -> meaning rule --------------------------------------------

def planted_rule_lexicon(
    n_signs: int = 120,
    seed: int = 0,
    label_noise: float = 0.0,
    feature_types: tuple[str, ...] = DEFAULT_FEATURE_TYPES,
    values_per_feature: int = 4,
    rule_feature: str = "handshape",
) -> tuple[KnowledgeGraph, dict[EntityId, set[EntityId]]]:
    """Random phonology; the semantic feature ``rule_<j>`` holds iff ``rule_feature`` takes value j.

    With ``label_noise`` the label stored in the graph is replaced by a
    random one with that probability. The second return value holds the
    noise-free labels implied by the rule.
    """
    rng = np.random.default_rng(seed)
    g = KnowledgeGraph()
    truth: dict[EntityId, set[EntityId]] = {}
    for i in range(n_signs):
        sign = EntityId("asl", f"sign{i:03d}")
        values = rng.integers(values_per_feature, size=len(feature_types))
        for ft, j in zip(feature_types, values):
            g.add(sign, ft, EntityId("phoneme", phoneme_label(ft, int(j))), "phonological", "synthetic")
        j = int(values[feature_types.index(rule_feature)])
        truth[sign] = {EntityId("semfeat", f"rule_{j}")}
        if rng.random() < label_noise:
            j = int(rng.integers(values_per_feature))
        g.add(sign, "has_semantic_feature", EntityId("semfeat", f"rule_{j}"), "semantic", "synthetic")
    return g, truth


# -- link prediction ---------------------------------------------------------

PLANTED_RELATIONS = (("r1", "a", "b"), ("r2", "b", "c"), ("r3", "c", "d"), ("r4", "a", "c"), ("r5", "b", "d"))
PLANTED_HOLDOUT = (("r4", 0), ("r4", 1), ("r5", 2), ("r5", 3), ("r1", 4))


def planted_link_graph() -> tuple[KnowledgeGraph, KnowledgeGraph, list]:
    """20 entities in four groups of five chained by relations, with composed shortcuts.

    Returns (full graph, training graph, held-out facts). Each relation maps
    entity i of one group to entity i of the next, so the held-out shortcut
    facts follow from the retained chain facts.
    """
    full = KnowledgeGraph()
    for rel, src, dst in PLANTED_RELATIONS:
        for i in range(5):
            full.add(EntityId("asl", f"{src}{i}"), rel, EntityId("asl", f"{dst}{i}"), "semantic", "planted")
    held = []
    train = KnowledgeGraph()
    holdout = set(PLANTED_HOLDOUT)
    for f in full.facts:
        idx = int(f.head.label[1:])
        if (f.relation.name, idx) in holdout:
            held.append(f)
        else:
            train.add_fact(f)
    for e in full.entities:
        train.add_entity(e)
    return full, train, sorted(held, key=lambda f: str(f))


# -- topic corpus ------------------------------------------------------------

@dataclass
class TopicCorpus:
    graph: KnowledgeGraph
    word_vectors: dict[str, np.ndarray]
    videos: dict[str, list[PhonemeObservation]]  # frame-level observations per video
    labels: dict[str, int]
    captions: dict[str, list[str]]
    lexicon: Lexicon


def make_topic_corpus(
    n_videos: int = 90,
    n_topics: int = 3,
    signs_per_topic: int = 8,
    seed: int = 0,
    frames_per_sign: int = 30,
    signs_per_video: tuple[int, int] = (3, 6),
    word_dim: int = 16,
    confidence: float = 0.9,
    majority_share: float = 0.5,
) -> TopicCorpus:
    """Videos whose topic is determined by which signs they contain.

    Topic 0 holds ``majority_share`` of the videos; the rest split evenly.
    Each sign translates to two English words whose vectors cluster by topic.
    """
    rng = np.random.default_rng(seed)
    lex = make_lexicon(n_signs=n_topics * signs_per_topic, seed=seed, n_families=n_topics * 2)
    g = lex.graph.copy()
    centers = rng.standard_normal((n_topics, word_dim)) * 2.0
    topic_signs = {t: lex.signs[t * signs_per_topic:(t + 1) * signs_per_topic] for t in range(n_topics)}
    word_vectors: dict[str, np.ndarray] = {}
    for t, signs in topic_signs.items():
        for s in signs:
            for k in range(2):
                word = f"{s.label}w{k}"
                word_vectors[word] = centers[t] + 0.5 * rng.standard_normal(word_dim)
                g.add(s, "has_translation", EntityId("en", word), "translation", "synthetic")
    shares = np.array([majority_share] + [(1 - majority_share) / (n_topics - 1)] * (n_topics - 1))
    videos, labels, captions = {}, {}, {}
    for v in range(n_videos):
        vid = f"vid{v:03d}"
        t = int(rng.choice(n_topics, p=shares))
        n = int(rng.integers(signs_per_video[0], signs_per_video[1] + 1))
        chosen = [topic_signs[t][int(i)] for i in rng.integers(signs_per_topic, size=n)]
        frames = []
        for s in chosen:
            for _ in range(frames_per_sign):
                frames.append(noisy_observation(lex.phonology[s], lex.schema, rng, f"{vid}@{len(frames)}", 0.0, confidence))
        videos[vid] = frames
        labels[vid] = t
        captions[vid] = [w for s in chosen for w in (f"{s.label}w0", f"topic{t}")]
    return TopicCorpus(g, word_vectors, videos, labels, captions, lex)


# -- demo files --------------------------------------------------------------

def write_demo(outdir, seed: int = 0) -> dict[str, str]:
    """Write a small self-consistent set of input files for every CLI command."""
    import json
    from pathlib import Path

    from .grounding import save_observations
    from .kg import save_facts
    from .pipeline import save_captions, save_word_vectors

    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    lex = make_lexicon(n_signs=60, seed=seed, family_semantics=2)
    g = lex.graph.copy()
    obs = []
    for s in lex.signs:
        g.add(s, "frequency", EntityId.literal(float(rng.integers(1, 8))), "statistical", "synthetic")
        g.add(s, "has_translation", EntityId("en", f"{s.label}_word"), "translation", "synthetic")
        for i in range(5):
            video = EntityId("video", f"{s.label}_v{i}")
            g.add(video, "example_of", s, "meta", "synthetic")
            obs.append(noisy_observation(lex.phonology[s], lex.schema, rng, video.label, 0.1, 0.8))
    save_facts(g, out / "lexicon.tsv")
    save_observations(obs, out / "observations.txt")

    corpus = make_topic_corpus(n_videos=60, seed=seed)
    save_facts(corpus.graph, out / "topic_graph.tsv")
    save_observations([o for frames in corpus.videos.values() for o in frames], out / "frames.txt")
    save_captions(corpus.captions, out / "captions.tsv")
    save_word_vectors(corpus.word_vectors, out / "words.tsv")

    (out / "signs.csv").write_text(
        "Gloss,Handshape,Translation,Frequency\n"
        "happy,open_b,glad,5.500\nhappyy,open_b,happy,4.0\nread,v,read,6\nred,v,,nan\n"
        "right_1,v,correct,3\nright_2,v,right,abc\n",
        encoding="utf-8",
    )
    (out / "norms.csv").write_text(
        "Word,Interoceptive.mean\nglad,4.053\nhappy,3.5\nzyzzyva,1.0\n", encoding="utf-8"
    )
    manifest = {
        "tables": [
            {"name": "signs", "path": "signs.csv", "subject": "Gloss",
             "columns": {"Handshape": "phonological", "Translation": "translation", "Frequency": "statistical"}},
            {"name": "norms", "path": "norms.csv", "subject": "Word", "subject_namespace": "en",
             "columns": {"Interoceptive.mean": {"rel_type": "semantic", "namespace": "literal"}}},
        ],
        "value_renames": {"open_b": "B"},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return {p.name: str(p) for p in sorted(out.iterdir())}


if __name__ == "__main__":
    import sys

    for name in write_demo(sys.argv[1] if len(sys.argv) > 1 else "demo", int(sys.argv[2]) if len(sys.argv) > 2 else 0):
        print(name)
