"""Isolated sign recognition from phoneme observations.

Three interchangeable engines share ``predict``/``predict_proba``:

* ``FactorGraphModel`` - exact posterior over signs from per-group
  conditional tables and a sign prior, computed by tree belief propagation
  with soft evidence entering as likelihood factors;
* ``KnnIndex`` - majority vote among the nearest gold phoneme vectors under
  a confidence-weighted overlap distance;
* ``IsrMlp`` - embedded argmax phonemes fed to a ReLU MLP.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .bp import DiscreteFactorGraph, InferenceError, belief_propagation
from .embeddings import EmbeddingError, EmbeddingSpace, read_sections, write_section
from .grounding import PhonemeObservation
from .kg import EntityId, GraphError, KnowledgeGraph
from .nn import Network
from .phonology import FeatureSchema, sign_phonology

DEFAULT_K = 5
INITS = ("random", "transe_nodes", "distmult_nodes")
_INIT_SCORER = {"transe_nodes": "TransE", "distmult_nodes": "DistMult"}
WILDCARD = "*"


class IsrError(ValueError):
    pass


def _top(proba: Mapping[EntityId, float]) -> EntityId:
    best = max(proba.values())
    return min(s for s, p in proba.items() if p == best)


# -- factor graph model ---------------------------------------------------

@dataclass
class FactorGraphModel:
    """Sign prior plus one conditional table p(group values | sign) per group.

    Each group's table is sparse: one column per joint value combination
    seen in training (``None`` marks an unannotated feature, spread
    uniformly over its values) and a final column holding the smoothing
    mass that is spread uniformly over the whole cross-product.
    """

    schema: FeatureSchema
    signs: list[EntityId]
    prior: np.ndarray
    combos: dict[str, list[tuple[str | None, ...]]]
    tables: dict[str, sp.csr_matrix]
    smoothing: float | None  # None: one pseudo-count spread over each group's cross-product

    def _group_evidence(self, group: str, obs: PhonemeObservation) -> np.ndarray:
        members = self.schema.groups[group]
        lik = {}
        mean_lik = {}
        for ft in members:
            if ft not in obs.distributions:
                raise IsrError(f"observation {obs.window_id} lacks feature type {ft}")
            vocab = self.schema.vocab[ft]
            lik[ft] = {x: obs.prob(ft, x) for x in vocab}
            mean_lik[ft] = sum(lik[ft].values()) / len(vocab)
        ev = np.empty(len(self.combos[group]) + 1)
        for j, combo in enumerate(self.combos[group]):
            ev[j] = math.prod(mean_lik[ft] if x is None else lik[ft].get(x, 0.0) for ft, x in zip(members, combo))
        ev[-1] = math.prod(mean_lik.values())
        return ev

    def compile(self, obs: PhonemeObservation) -> DiscreteFactorGraph:
        """The tree: sign variable, one variable per group, evidence leaves."""
        g = DiscreteFactorGraph()
        g.add_variable("sign", len(self.signs))
        g.add_factor(["sign"], self.prior)
        for group, table in self.tables.items():
            var = f"group:{group}"
            g.add_variable(var, table.shape[1])
            g.add_factor(["sign", var], table)
            g.add_factor([var], self._group_evidence(group, obs))
        return g

    def posterior(self, obs: PhonemeObservation) -> np.ndarray:
        try:
            return belief_propagation(self.compile(obs))["sign"]
        except InferenceError:
            raise IsrError(
                f"observation {obs.window_id} has zero probability under every sign; "
                "refit with smoothing > 0"
            ) from None

    def predict_proba(self, obs: PhonemeObservation) -> dict[EntityId, float]:
        return dict(zip(self.signs, self.posterior(obs).tolist()))

    def predict(self, obs: PhonemeObservation) -> EntityId:
        return _top(self.predict_proba(obs))

    def dense_table(self, group: str) -> np.ndarray:
        """Full p(joint value | sign) over the group's cross-product, rows = signs."""
        members = self.schema.groups[group]
        vocabs = [self.schema.vocab[ft] for ft in members]
        shape = tuple(len(v) for v in vocabs)
        size = math.prod(shape)
        table = self.tables[group].toarray()
        out = np.repeat(table[:, -1:] / size, size, axis=1).reshape(len(self.signs), *shape)
        for j, combo in enumerate(self.combos[group]):
            index = []
            spread = 1
            for x, vocab in zip(combo, vocabs):
                if x is None:
                    index.append(slice(None))
                    spread *= len(vocab)
                else:
                    index.append(vocab.index(x))
            out[(slice(None), *index)] += (table[:, j] / spread).reshape((-1,) + (1,) * sum(x is None for x in combo))
        return out

    # -- files ---------------------------------------------------------
    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# smoothing\t{None if self.smoothing is None else float(self.smoothing)!r}\n")
            for ft, vocab in self.schema.vocab.items():
                fh.write("# feature\t" + "\t".join((ft, *vocab)) + "\n")
            for group, members in self.schema.groups.items():
                fh.write("# group\t" + "\t".join((group, *members)) + "\n")
            fh.write("# group\tsign\tjoint_value\tprobability\n")
            for sign, p in zip(self.signs, self.prior):
                fh.write(f"prior\t{sign}\t-\t{float(p)!r}\n")
            for group, table in self.tables.items():
                labels = ["|".join(WILDCARD if x is None else x for x in c) for c in self.combos[group]] + ["~"]
                coo = table.tocoo()
                for i, j, v in sorted(zip(coo.row, coo.col, coo.data)):
                    fh.write(f"{group}\t{self.signs[i]}\t{labels[j]}\t{float(v)!r}\n")

    @classmethod
    def load(cls, path: str | Path) -> "FactorGraphModel":
        vocab, groups, smoothing = {}, {}, None
        prior: dict[EntityId, float] = {}
        entries: list[tuple[str, EntityId, str, float]] = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                cols = line.rstrip("\n").split("\t")
                if cols[0] == "# smoothing":
                    smoothing = None if cols[1] == "None" else float(cols[1])
                elif cols[0] == "# feature":
                    vocab[cols[1]] = tuple(cols[2:])
                elif cols[0] == "# group" and cols[1] != "sign":
                    groups[cols[1]] = tuple(cols[2:])
                elif cols[0].startswith("#") or not line.strip():
                    continue
                elif cols[0] == "prior":
                    prior[EntityId.parse(cols[1])] = float(cols[3])
                else:
                    entries.append((cols[0], EntityId.parse(cols[1]), cols[2], float(cols[3])))
        signs = list(prior)
        sidx = {s: i for i, s in enumerate(signs)}
        combos: dict[str, list] = {g: [] for g in groups}
        cidx: dict[str, dict[str, int]] = {g: {} for g in groups}
        for group, _, label, _ in entries:
            if label != "~" and label not in cidx[group]:
                cidx[group][label] = len(combos[group])
                combos[group].append(tuple(None if x == WILDCARD else x for x in label.split("|")))
        tables = {}
        for group in groups:
            rows, cols_, vals = [], [], []
            for g, sign, label, p in entries:
                if g == group:
                    rows.append(sidx[sign])
                    cols_.append(len(combos[group]) if label == "~" else cidx[group][label])
                    vals.append(p)
            tables[group] = sp.csr_matrix((vals, (rows, cols_)), shape=(len(signs), len(combos[group]) + 1))
        schema = FeatureSchema(vocab, groups)
        return cls(schema, signs, np.array([prior[s] for s in signs]), combos, tables, smoothing)


def fgm_fit(
    graph: KnowledgeGraph,
    train_signs: Sequence[EntityId],
    smoothing: float | None = None,
    schema: FeatureSchema | None = None,
    frequency_relation: str | None = "frequency",
) -> FactorGraphModel:
    """Laplace-smoothed group conditionals from each training sign's gold phonology.

    ``smoothing`` is the pseudo-count added to every cell of a group's
    value cross-product. The default (``None``) adds 1/|cross-product| per
    cell, one pseudo-observation per group, because those products run to
    millions of cells and a per-cell count of 1 would flatten the posterior.
    """
    if not train_signs:
        raise IsrError("empty training set")
    if smoothing is not None and smoothing < 0:
        raise IsrError("smoothing must be >= 0")
    schema = schema or FeatureSchema.from_graph(graph)
    schema.check_groups()
    signs = sorted(set(train_signs))
    phon = {}
    for s in signs:
        values = sign_phonology(graph, s, schema)
        if all(v is None for v in values.values()):
            raise GraphError(f"training sign {s} has no phonological facts")
        phon[s] = values

    combos: dict[str, list] = {}
    tables: dict[str, sp.csr_matrix] = {}
    for group, members in schema.groups.items():
        size = math.prod(len(schema.vocab[ft]) for ft in members)
        index: dict[tuple, int] = {}
        rows, cols, counts = [], [], []
        for i, s in enumerate(signs):
            combo = tuple(phon[s][ft] for ft in members)
            j = index.setdefault(combo, len(index))
            rows.append(i)
            cols.append(j)
            counts.append(1.0)
        order = sorted(index, key=lambda c: tuple("" if x is None else x for x in c))
        remap = {index[c]: k for k, c in enumerate(order)}
        n_obs = np.bincount(rows, weights=counts, minlength=len(signs))
        pseudo = 1.0 if smoothing is None else smoothing * size
        denom = n_obs + pseudo
        data = [c / denom[r] for r, c in zip(rows, counts)]
        cols = [remap[c] for c in cols]
        smooth_col = pseudo / denom
        rows += list(range(len(signs)))
        cols += [len(order)] * len(signs)
        data += list(smooth_col)
        table = sp.csr_matrix((data, (rows, cols)), shape=(len(signs), len(order) + 1))
        table.eliminate_zeros()
        combos[group] = order
        tables[group] = table

    prior = np.full(len(signs), 1.0 / len(signs))
    if frequency_relation:
        freq = {}
        for s in signs:
            for f in graph.facts_with_head(s):
                if f.relation.name == frequency_relation and f.tail.is_literal and f.tail.value > 0:
                    freq[s] = f.tail.value
        if freq:
            fill = float(np.mean(list(freq.values())))
            prior = np.array([freq.get(s, fill) for s in signs])
            prior /= prior.sum()
    return FactorGraphModel(schema, signs, prior, combos, tables, smoothing)


def fgm_infer(model, obs: PhonemeObservation | None = None):
    """Exact posterior p(sign | observation).

    Given a bare ``DiscreteFactorGraph`` (evidence already attached as
    factors) the exact marginals of every variable are returned instead.
    """
    if isinstance(model, DiscreteFactorGraph):
        return belief_propagation(model)
    if obs is None:
        raise IsrError("an observation is required")
    return model.predict_proba(obs)


# -- k nearest neighbours --------------------------------------------------

def knn_distance(gold: Mapping[str, str | None], obs: PhonemeObservation) -> float:
    """1 - mean over feature types of [gold value is the observed argmax] * its probability."""
    if set(gold) != set(obs.feature_types):
        raise IsrError(
            f"feature types differ: {sorted(set(gold) ^ set(obs.feature_types))}"
        )
    total = 0.0
    for ft, value in gold.items():
        if value is not None and obs.is_argmax(ft, value):
            total += obs.prob(ft, value)
    return 1.0 - total / len(gold)


@dataclass
class KnnIndex:
    entries: list[tuple[EntityId, dict[str, str | None]]]
    k: int = DEFAULT_K

    def __post_init__(self) -> None:
        if self.k < 1:
            raise IsrError("k must be positive")

    def neighbours(self, obs: PhonemeObservation) -> list[tuple[float, int]]:
        if not self.entries:
            raise IsrError("empty kNN index")
        dists = [(knn_distance(vec, obs), i) for i, (_, vec) in enumerate(self.entries)]
        return sorted(dists)[: self.k]

    def _vote(self, obs: PhonemeObservation) -> tuple[EntityId, Counter]:
        near = self.neighbours(obs)
        votes = Counter(self.entries[i][0] for _, i in near)
        top = max(votes.values())
        tied = {s for s, n in votes.items() if n == top}
        # tie: the class holding the single closest neighbour wins
        winner = next(self.entries[i][0] for _, i in near if self.entries[i][0] in tied)
        return winner, votes

    def predict(self, obs: PhonemeObservation) -> EntityId:
        return self._vote(obs)[0]

    def predict_proba(self, obs: PhonemeObservation) -> dict[EntityId, float]:
        _, votes = self._vote(obs)
        n = sum(votes.values())
        return {s: c / n for s, c in votes.items()}

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# k\t{self.k}\n# entry\tsign\tfeature\tvalue\n")
            for i, (sign, vec) in enumerate(self.entries):
                for ft, value in vec.items():
                    fh.write(f"{i}\t{sign}\t{ft}\t{'' if value is None else value}\n")

    @classmethod
    def load(cls, path: str | Path) -> "KnnIndex":
        k = DEFAULT_K
        rows: dict[int, tuple[EntityId, dict]] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                cols = line.rstrip("\n").split("\t")
                if cols[0] == "# k":
                    k = int(cols[1])
                elif cols[0].startswith("#") or not line.strip():
                    continue
                else:
                    i = int(cols[0])
                    entry = rows.setdefault(i, (EntityId.parse(cols[1]), {}))
                    entry[1][cols[2]] = cols[3] or None
        return cls([rows[i] for i in sorted(rows)], k)


def knn_fit(graph: KnowledgeGraph, signs: Sequence[EntityId], k: int = DEFAULT_K, schema: FeatureSchema | None = None) -> KnnIndex:
    """Index each sign by its gold phoneme vector."""
    schema = schema or FeatureSchema.from_graph(graph)
    return KnnIndex([(s, sign_phonology(graph, s, schema)) for s in sorted(set(signs))], k)


def knn_predict(index: KnnIndex, obs: PhonemeObservation) -> EntityId:
    return index.predict(obs)


# -- MLP ---------------------------------------------------------------------

UNK = "<unk>"


def phoneme_table(
    tokens: Sequence[str], dim: int, init: str, rng: np.random.Generator, space: EmbeddingSpace | None
) -> np.ndarray:
    """Embedding rows for ``tokens`` (row 0 is the unknown token)."""
    if init not in INITS:
        raise IsrError(f"unknown init {init!r}; expected one of {INITS}")
    if init == "random":
        table = rng.standard_normal((len(tokens), dim))
        table[0] = 0.0
        return table
    check_space(init, space, dim)
    table = np.zeros((len(tokens), dim))
    for i, tok in enumerate(tokens[1:], 1):
        try:
            table[i] = space.entity(EntityId("phoneme", tok))
        except EmbeddingError:
            raise IsrError(f"embedding space has no vector for phoneme:{tok}") from None
    return table


def check_space(init: str, space: EmbeddingSpace | None, dim: int) -> None:
    """Raise unless ``space`` can initialize a ``dim``-wide input table for ``init``."""
    if init not in _INIT_SCORER:
        raise IsrError(f"unknown init {init!r}; expected one of {INITS}")
    if space is None:
        raise IsrError(f"init={init} needs an embedding space")
    if space.scorer != _INIT_SCORER[init]:
        raise IsrError(f"init={init} needs a {_INIT_SCORER[init]} space, got {space.scorer}")
    if space.dim != dim:
        raise IsrError(f"embedding space has dim {space.dim}, the input layer needs {dim}")


@dataclass
class IsrMlp:
    network: Network
    feature_types: tuple[str, ...]
    tokens: list[str]
    signs: list[EntityId]

    def encode(self, observations: Sequence[PhonemeObservation]) -> np.ndarray:
        index = {tok: i for i, tok in enumerate(self.tokens)}
        out = np.zeros((len(observations), len(self.feature_types)), dtype=np.int64)
        for r, obs in enumerate(observations):
            for c, ft in enumerate(self.feature_types):
                if ft not in obs.distributions:
                    raise IsrError(f"observation {obs.window_id} lacks feature type {ft}")
                out[r, c] = index.get(obs.argmax(ft), 0)
        return out

    def proba_matrix(self, observations: Sequence[PhonemeObservation]) -> np.ndarray:
        return self.network.predict_proba(self.encode(observations))

    def predict_proba(self, obs: PhonemeObservation) -> dict[EntityId, float]:
        return dict(zip(self.signs, self.proba_matrix([obs])[0].tolist()))

    def predict(self, obs: PhonemeObservation) -> EntityId:
        return self.signs[int(np.argmax(self.proba_matrix([obs])[0]))]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            self.network.write(fh)
            write_section(fh, {"dim": 1, "vocab": "features"}, [("feature", ft, [i]) for i, ft in enumerate(self.feature_types)])
            write_section(fh, {"dim": 1, "vocab": "tokens"}, [("token", t, [i]) for i, t in enumerate(self.tokens)])
            write_section(fh, {"dim": 1, "vocab": "signs"}, [("sign", str(s), [i]) for i, s in enumerate(self.signs)])

    @classmethod
    def load(cls, path: str | Path) -> "IsrMlp":
        sections = read_sections(path)
        net = Network.from_sections([s for s in sections if "layer" in s[0]])
        vocab = {h["vocab"]: [key for _, key, _ in rows] for h, rows in sections if "vocab" in h}
        return cls(net, tuple(vocab["features"]), vocab["tokens"], [EntityId.parse(s) for s in vocab["signs"]])


def mlp_isr_train(
    graph: KnowledgeGraph,
    observations: Sequence[PhonemeObservation],
    labels: Sequence[EntityId],
    init: str = "random",
    space: EmbeddingSpace | None = None,
    epochs: int = 100,
    seed: int = 0,
    schema: FeatureSchema | None = None,
    signs: Sequence[EntityId] | None = None,
    hidden: Sequence[int] = (64, 128, 256),
    embed_dim: int = 32,
    lr: float = 1e-3,
    batch_size: int = 32,
) -> IsrMlp:
    """Adam + cross-entropy on embedded argmax phonemes."""
    if len(observations) != len(labels) or not observations:
        raise IsrError("need equally many (non-zero) observations and labels")
    schema = schema or FeatureSchema.from_graph(graph)
    vocab = sorted(set(signs) if signs is not None else set(labels))
    sidx = {s: i for i, s in enumerate(vocab)}
    missing = [s for s in labels if s not in sidx]
    if missing:
        raise IsrError(f"label {missing[0]} outside the sign vocabulary")
    tokens = [UNK] + sorted({ph for values in schema.vocab.values() for ph in values})
    rng = np.random.default_rng(seed)
    table = phoneme_table(tokens, embed_dim, init, rng, space)
    net = Network.build(len(tokens), hidden, len(vocab), rng, input_mode="concat", embedding=table, n_slots=len(schema))
    model = IsrMlp(net, schema.feature_types, tokens, vocab)
    X = model.encode(observations)
    y = np.array([sidx[s] for s in labels])
    net.fit(X, y, epochs, rng, batch_size=batch_size, lr=lr)
    return model


def isr_evaluate(model, observations: Sequence[PhonemeObservation], labels: Sequence[EntityId]) -> float:
    """Top-1 accuracy."""
    if not observations:
        raise IsrError("empty evaluation set: accuracy undefined")
    if len(observations) != len(labels):
        raise IsrError("observations and labels differ in length")
    if isinstance(model, IsrMlp):
        idx = np.argmax(model.proba_matrix(observations), axis=1)
        preds = [model.signs[i] for i in idx]
    else:
        preds = [model.predict(o) for o in observations]
    return sum(p == y for p, y in zip(preds, labels)) / len(labels)
