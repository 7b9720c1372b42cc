"""Semantic feature recognition for unseen signs, in both directions.

``phi_to_sigma`` maps a sign's phonemes to independent probabilities over
semantic features; ``sigma_to_phi`` maps a set of semantic features to one
distribution per phonological feature type. Training only ever sees a copy
of the graph from which every held-out sign (and its videos) was removed.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .embeddings import EmbeddingError, EmbeddingSpace, read_sections, write_section
from .grounding import PhonemeObservation, one_hot_from_gold
from .isr import UNK, check_space, phoneme_table
from .kg import EntityId, KnowledgeGraph
from .nn import Network
from .phonology import FeatureSchema, sign_phonology

DIRECTIONS = ("phi_to_sigma", "sigma_to_phi")
KINDS = ("mlp", "linear")
HIDDEN = (64, 128, 256)
THRESHOLD = 0.5


class SfrError(ValueError):
    pass


# -- semantic vectors --------------------------------------------------------

def literal_midpoints(graph: KnowledgeGraph) -> dict[str, float]:
    """Midpoint of the observed range of every numeric semantic relation."""
    lo: dict[str, float] = {}
    hi: dict[str, float] = {}
    for f in graph.facts_of_type("semantic"):
        if f.tail.is_literal and np.isfinite(f.tail.value):
            name = f.relation.name
            lo[name] = min(lo.get(name, f.tail.value), f.tail.value)
            hi[name] = max(hi.get(name, f.tail.value), f.tail.value)
    return {name: (lo[name] + hi[name]) / 2.0 for name in lo}


def semantic_features(
    graph: KnowledgeGraph, sign: EntityId, midpoints: Mapping[str, float] | None = None
) -> set[EntityId]:
    """Semantic features holding for ``sign``.

    Symbolic facts contribute their semfeat tail. With ``midpoints`` a
    numeric fact contributes ``semfeat:<relation>`` when its value is at or
    above that relation's midpoint.
    """
    out = set()
    for f in graph.facts_with_head(sign):
        if f.rel_type != "semantic":
            continue
        if f.tail.namespace == "semfeat":
            out.add(f.tail)
        elif midpoints is not None and f.tail.is_literal and f.relation.name in midpoints:
            if f.tail.value >= midpoints[f.relation.name]:
                out.add(EntityId("semfeat", f.relation.name))
    return out


def save_semantic_vectors(vectors: Mapping[EntityId, Iterable[EntityId]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sign in sorted(vectors):
            for feat in sorted(vectors[sign]):
                fh.write(f"{sign}\t{feat}\n")


def load_semantic_vectors(path: str | Path) -> dict[EntityId, set[EntityId]]:
    out: dict[EntityId, set[EntityId]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip() or line.startswith("#"):
                continue
            sign, feat = line.rstrip("\n").split("\t")
            out.setdefault(EntityId.parse(sign), set()).add(EntityId.parse(feat))
    return out


# -- model -------------------------------------------------------------------

@dataclass
class SfrModel:
    direction: str
    kind: str
    network: Network
    schema: FeatureSchema
    features: list[EntityId]  # semantic feature vocabulary
    tokens: list[str]  # phoneme tokens (phi_to_sigma input)
    threshold: float = THRESHOLD

    # input encoding
    def encode_phonemes(self, inputs: Sequence[PhonemeObservation]) -> np.ndarray:
        index = {tok: i for i, tok in enumerate(self.tokens)}
        X = np.zeros((len(inputs), len(self.schema)), dtype=np.int64)
        for r, obs in enumerate(inputs):
            for c, ft in enumerate(self.schema.feature_types):
                if ft in obs.distributions:
                    X[r, c] = index.get(obs.argmax(ft), 0)
        return X

    def encode_features(self, inputs: Sequence[Iterable[EntityId]]) -> np.ndarray:
        index = {f: i for i, f in enumerate(self.features)}
        X = np.zeros((len(inputs), len(self.features)))
        for r, feats in enumerate(inputs):
            for f in feats:
                if f in index:
                    X[r, index[f]] = 1.0
        return X

    def encode(self, inputs) -> np.ndarray:
        if self.direction == "phi_to_sigma":
            if not all(isinstance(x, PhonemeObservation) for x in inputs):
                raise SfrError("phi_to_sigma input must be phoneme observations")
            return self.encode_phonemes(inputs)
        if any(isinstance(x, PhonemeObservation) for x in inputs):
            raise SfrError("sigma_to_phi input must be sets of semantic features")
        return self.encode_features(inputs)

    def proba_matrix(self, inputs) -> np.ndarray:
        return self.network.predict_proba(self.encode(inputs))

    def predict_proba(self, item):
        """Per-feature probabilities: {semfeat: p} or {feature type: {phoneme: p}}."""
        row = self.proba_matrix([item])[0]
        if self.direction == "phi_to_sigma":
            return dict(zip(self.features, row.tolist()))
        out = {}
        for ft, off in self.schema.offsets().items():
            out[ft] = dict(zip(self.schema.vocab[ft], row[off:off + len(self.schema.vocab[ft])].tolist()))
        return out

    def decide(self, P: np.ndarray, threshold: float | None = None) -> list[set]:
        """Set-valued outputs: thresholded features, or the argmax phoneme per type."""
        sets = []
        if self.direction == "phi_to_sigma":
            t = self.threshold if threshold is None else threshold
            for row in P:
                sets.append({self.features[j] for j in np.flatnonzero(row > t)})
            return sets
        offsets = self.schema.offsets()
        for row in P:
            chosen = set()
            for ft, off in offsets.items():
                vocab = self.schema.vocab[ft]
                chosen.add(EntityId("phoneme", vocab[int(np.argmax(row[off:off + len(vocab)]))]))
            sets.append(chosen)
        return sets

    def predict(self, item, threshold: float | None = None) -> set:
        return self.decide(self.proba_matrix([item]), threshold)[0]

    # files
    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            self.network.write(fh)
            meta = {"dim": 1, "vocab": "meta", "direction": self.direction, "kind": self.kind, "threshold": repr(self.threshold)}
            write_section(fh, meta, [])
            write_section(fh, {"dim": 1, "vocab": "features"}, [("feature", str(f), [i]) for i, f in enumerate(self.features)])
            write_section(fh, {"dim": 1, "vocab": "tokens"}, [("token", t, [i]) for i, t in enumerate(self.tokens)])
            rows = [("phoneme", f"{ft}|{ph}", [i]) for i, (ft, ph) in enumerate(
                (ft, ph) for ft, vocab in self.schema.vocab.items() for ph in vocab)]
            write_section(fh, {"dim": 1, "vocab": "schema"}, rows)
            groups = [("group", f"{g}|{ft}", [i]) for i, (g, ft) in enumerate(
                (g, ft) for g, members in self.schema.groups.items() for ft in members)]
            write_section(fh, {"dim": 1, "vocab": "groups"}, groups)

    @classmethod
    def load(cls, path: str | Path) -> "SfrModel":
        sections = read_sections(path)
        net = Network.from_sections(sections)
        by = {h["vocab"]: (h, rows) for h, rows in sections if "vocab" in h}
        meta = by["meta"][0]
        vocab: dict[str, list[str]] = {}
        for _, key, _ in by["schema"][1]:
            ft, _, ph = key.partition("|")
            vocab.setdefault(ft, []).append(ph)
        groups: dict[str, list[str]] = {}
        for _, key, _ in by["groups"][1]:
            g, _, ft = key.partition("|")
            groups.setdefault(g, []).append(ft)
        schema = FeatureSchema({ft: tuple(v) for ft, v in vocab.items()}, {g: tuple(m) for g, m in groups.items()})
        return cls(
            meta["direction"], meta["kind"], net, schema,
            [EntityId.parse(k) for _, k, _ in by["features"][1]],
            [k for _, k, _ in by["tokens"][1]],
            float(meta["threshold"]),
        )


# -- training ----------------------------------------------------------------

def held_out_signs(graph: KnowledgeGraph, train_folds: Sequence[int]) -> set[EntityId]:
    if graph.folds is None:
        raise SfrError("graph has no fold assignment; run assign_folds first")
    keep = set(train_folds)
    return {s for s, f in graph.folds.sign_folds.items() if f not in keep}


def _feature_table(
    features: Sequence[EntityId], dim: int, init: str, rng: np.random.Generator, space: EmbeddingSpace | None
) -> np.ndarray:
    if init == "random":
        return rng.standard_normal((len(features), dim))
    check_space(init, space, dim)
    rows = np.empty((len(features), dim))
    for i, f in enumerate(features):
        try:
            rows[i] = space.entity(f)
        except EmbeddingError:
            # binarized numeric features are not graph entities
            rows[i] = rng.standard_normal(dim) / np.sqrt(dim)
    return rows


def sfr_train(
    graph: KnowledgeGraph,
    direction: str,
    train_folds: Sequence[int] | None = None,
    kind: str = "mlp",
    init: str = "random",
    space: EmbeddingSpace | None = None,
    epochs: int = 100,
    seed: int = 0,
    held_out: Iterable[EntityId] | None = None,
    schema: FeatureSchema | None = None,
    binarize: bool = True,
    embed_dim: int = 32,
    lr: float = 1e-3,
    batch_size: int = 32,
    threshold: float = THRESHOLD,
) -> SfrModel:
    """Fit on signs outside the held-out set, after deleting the held-out signs' facts.

    Held-out signs are either given directly or are the signs whose sign
    fold is not in ``train_folds``.
    """
    if direction not in DIRECTIONS:
        raise SfrError(f"direction must be one of {DIRECTIONS}")
    if kind not in KINDS:
        raise SfrError(f"kind must be one of {KINDS}")
    if held_out is None:
        if train_folds is None:
            raise SfrError("give train_folds or an explicit held-out sign set")
        held_out = held_out_signs(graph, train_folds)
    held_out = set(held_out)
    if space is not None and init != "random":
        leaked = sorted(str(s) for s in held_out if s in space)
        if leaked:
            raise SfrError(f"embedding space was trained with held-out signs (e.g. {leaked[0]})")

    view = graph.without_signs(held_out)
    return _fit(view, direction, kind, init, space, epochs, seed, schema, binarize, embed_dim, lr, batch_size, threshold)


def _fit(view, direction, kind, init, space, epochs, seed, schema, binarize, embed_dim, lr, batch_size, threshold):
    schema = schema or FeatureSchema.from_graph(view)
    if not schema.groups:
        schema = FeatureSchema(schema.vocab, {ft: (ft,) for ft in schema.feature_types})
    midpoints = literal_midpoints(view) if binarize else None
    signs = sorted(s for s in view.entities_in("asl") if any(v is not None for v in sign_phonology(view, s, schema).values()))
    sem = {s: semantic_features(view, s, midpoints) for s in signs}
    if not any(sem.values()):
        raise SfrError("no training sign has semantic annotations")
    signs = [s for s in signs if sem[s]]
    features = sorted(set().union(*sem.values()))
    tokens = [UNK] + sorted({ph for vocab in schema.vocab.values() for ph in vocab})
    rng = np.random.default_rng(seed)
    hidden = HIDDEN if kind == "mlp" else ()

    if direction == "phi_to_sigma":
        table = phoneme_table(tokens, embed_dim, init, rng, space)
        net = Network.build(len(tokens), hidden, len(features), rng, input_mode="concat", head="sigmoid",
                            embedding=table, n_slots=len(schema))
    else:
        table = _feature_table(features, embed_dim, init, rng, space)
        offsets = schema.offsets()
        groups = [(offsets[ft], len(schema.vocab[ft])) for ft in schema.feature_types]
        net = Network.build(len(features), hidden, schema.n_values, rng, input_mode="bag", head="grouped",
                            embedding=table, groups=groups)
    model = SfrModel(direction, kind, net, schema, features, tokens, threshold)

    gold_obs = [one_hot_from_gold(view, s, schema) for s in signs]
    if direction == "phi_to_sigma":
        X = model.encode_phonemes(gold_obs)
        Y = model.encode_features([sem[s] for s in signs])
    else:
        X = model.encode_features([sem[s] for s in signs])
        Y = np.full((len(signs), len(schema)), -1, dtype=np.int64)
        for r, s in enumerate(signs):
            for c, (ft, value) in enumerate(sign_phonology(view, s, schema).items()):
                if value is not None:
                    Y[r, c] = schema.vocab[ft].index(value)
    net.fit(X, Y, epochs, rng, batch_size=batch_size, lr=lr)
    return model


# -- evaluation --------------------------------------------------------------

def sfr_test_set(
    graph: KnowledgeGraph, model: SfrModel, signs: Iterable[EntityId], binarize: bool = True
) -> tuple[list, list[set]]:
    """Gold (input, expected set) pairs for held-out signs, read from the full graph."""
    midpoints = literal_midpoints(graph) if binarize else None
    inputs, gold = [], []
    for s in sorted(signs):
        phon = sign_phonology(graph, s, model.schema)
        sem = semantic_features(graph, s, midpoints)
        if all(v is None for v in phon.values()) or not sem:
            continue
        if model.direction == "phi_to_sigma":
            inputs.append(one_hot_from_gold(graph, s, model.schema))
            gold.append(sem)
        else:
            inputs.append(sem)
            gold.append({EntityId("phoneme", v) for v in phon.values() if v is not None})
    return inputs, gold


def set_scores(predicted: Sequence[set], gold: Sequence[set]) -> tuple[float, float]:
    """(micro-F1 over feature decisions, exact-match rate)."""
    if not gold:
        raise SfrError("empty test set")
    if len(predicted) != len(gold):
        raise SfrError("prediction and gold counts differ")
    tp = sum(len(p & g) for p, g in zip(predicted, gold))
    fp = sum(len(p - g) for p, g in zip(predicted, gold))
    fn = sum(len(g - p) for p, g in zip(predicted, gold))
    f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    exact = sum(p == g for p, g in zip(predicted, gold)) / len(gold)
    return f1, exact


def sfr_predict(model: SfrModel, item):
    return model.predict_proba(item)


def sfr_evaluate(model: SfrModel, inputs: Sequence, gold: Sequence[set]) -> tuple[float, float]:
    """Micro-F1 and exact-match accuracy of thresholded (or argmax) predictions.

    For ``sigma_to_phi`` the gold sets list only annotated feature types, so
    predictions for unannotated types are dropped before scoring.
    """
    if not inputs:
        raise SfrError("empty test set")
    predicted = model.decide(model.proba_matrix(list(inputs)))
    if model.direction == "sigma_to_phi":
        owner = {ph: ft for ft, vocab in model.schema.vocab.items() for ph in vocab}
        predicted = [
            {ph for ph in p if owner[ph.label] in {owner.get(x.label) for x in g}}
            for p, g in zip(predicted, gold)
        ]
    return set_scores(predicted, gold)
