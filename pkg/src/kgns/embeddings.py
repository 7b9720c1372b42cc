"""Fact-verification embeddings (TransE and DistMult) trained by margin ranking.

Positives come from the embeddable subgraph; negatives corrupt the head or
tail with an entity of the same namespace until the triple is unseen.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

from .kg import EntityId, Fact, KnowledgeGraph, subgraph_for_embedding

log = logging.getLogger(__name__)

SCORERS = ("TransE", "DistMult")
MAX_REJECTIONS = 1000


class EmbeddingError(ValueError):
    pass


class NegativeSamplingError(RuntimeError):
    pass


class TrainingDiverged(RuntimeError):
    pass


# -- scoring -------------------------------------------------------------

def score_arrays(scorer: str, h: np.ndarray, r: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Plausibility along the last axis; higher is more plausible."""
    if scorer == "TransE":
        return -np.linalg.norm(h + r - t, axis=-1)
    if scorer == "DistMult":
        return np.sum(h * r * t, axis=-1)
    raise EmbeddingError(f"unknown scorer {scorer!r}")


def score_grads(scorer: str, h: np.ndarray, r: np.ndarray, t: np.ndarray):
    """Score and its gradients with respect to h, r and t."""
    if scorer == "TransE":
        d = h + r - t
        norm = np.linalg.norm(d, axis=-1, keepdims=True)
        # subgradient 0 at the optimum d = 0
        unit = np.divide(d, norm, out=np.zeros_like(d), where=norm > 0)
        return -norm[..., 0], -unit, -unit, unit
    if scorer == "DistMult":
        return np.sum(h * r * t, axis=-1), r * t, h * t, h * r
    raise EmbeddingError(f"unknown scorer {scorer!r}")


def logistic(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


@dataclass
class EmbeddingSpace:
    dim: int
    scorer: str
    entity_vectors: dict[str, np.ndarray]
    relation_vectors: dict[str, np.ndarray]
    loss_history: list[float] = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.scorer not in SCORERS:
            raise EmbeddingError(f"unknown scorer {self.scorer!r}")
        if self.dim < 1:
            raise EmbeddingError("dim must be positive")
        for kind, table in (("entity", self.entity_vectors), ("relation", self.relation_vectors)):
            for key, vec in table.items():
                if vec.shape != (self.dim,) or not np.all(np.isfinite(vec)):
                    raise EmbeddingError(f"{kind} {key}: expected {self.dim} finite components")

    def entity(self, e: EntityId | str) -> np.ndarray:
        key = str(e)
        try:
            return self.entity_vectors[key]
        except KeyError:
            raise EmbeddingError(f"no vector for entity {key}") from None

    def relation(self, name: str) -> np.ndarray:
        try:
            return self.relation_vectors[name]
        except KeyError:
            raise EmbeddingError(f"no vector for relation {name}") from None

    def __contains__(self, e) -> bool:
        return str(e) in self.entity_vectors


def score(space: EmbeddingSpace, fact: Fact) -> float:
    h = space.entity(fact.head)
    r = space.relation(fact.relation.name)
    t = space.entity(fact.tail)
    return float(score_arrays(space.scorer, h, r, t))


def verify(space: EmbeddingSpace, fact: Fact) -> float:
    """Probability that ``fact`` holds: the logistic of its score."""
    return float(logistic(score(space, fact)))


def node_embedding(space: EmbeddingSpace, entity: EntityId | str) -> np.ndarray:
    return space.entity(entity).copy()


# -- negative sampling ---------------------------------------------------

class NegativeSampler:
    """Corrupts index triples within namespaces, rejecting known facts."""

    def __init__(self, entity_namespaces: Sequence[str], known: Iterable[tuple[int, int, int]]) -> None:
        self.known = set(known)
        ns = np.asarray(entity_namespaces)
        self.pool = {name: np.flatnonzero(ns == name) for name in np.unique(ns)}
        self.ns = list(entity_namespaces)

    def sample(self, h: int, r: int, t: int, rng: np.random.Generator) -> tuple[int, int, int]:
        return tuple(int(x) for x in self.sample_batch(np.array([[h, r, t]]), rng)[0])

    def sample_batch(self, positives: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One corruption per row of an (n, 3) index array."""
        out = positives.copy()
        pending = np.arange(len(positives))
        for _ in range(MAX_REJECTIONS):
            draws = rng.random((len(pending), 2))
            still = []
            for row, (coin, u) in zip(pending, draws):
                h, r, t = (int(x) for x in positives[row])
                slot = 0 if coin < 0.5 else 2
                pool = self.pool[self.ns[h if slot == 0 else t]]
                cand = [h, r, t]
                cand[slot] = int(pool[int(u * len(pool))])
                if tuple(cand) in self.known:
                    still.append(row)
                else:
                    out[row] = cand
            if not still:
                return out
            pending = np.array(still)
        h, r, t = positives[pending[0]]
        if len(self.pool[self.ns[h]]) < 2 and len(self.pool[self.ns[t]]) < 2:
            raise NegativeSamplingError("no corruptible entity: each namespace has a single member")
        raise NegativeSamplingError(
            f"{MAX_REJECTIONS} consecutive rejections corrupting ({h}, {r}, {t}); graph too dense to corrupt"
        )


def sample_negative(graph: KnowledgeGraph, fact: Fact, rng: np.random.Generator) -> Fact:
    """Corrupt the head or tail of ``fact`` into a triple absent from the graph."""
    entities = sorted(graph.entities)
    index = {e: i for i, e in enumerate(entities)}
    relations = sorted({f.relation.name for f in graph} | {fact.relation.name})
    rindex = {name: i for i, name in enumerate(relations)}
    known = {(index[f.head], rindex[f.relation.name], index[f.tail]) for f in graph}
    sampler = NegativeSampler([e.namespace for e in entities], known)
    h, _, t = sampler.sample(index[fact.head], rindex[fact.relation.name], index[fact.tail], rng)
    return Fact(entities[h], fact.relation, entities[t], fact.source)


# -- training ------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    dim: int = 32
    margin: float = 1.0
    learning_rate: float = 0.01
    negatives_per_positive: int = 1
    seed: int = 0
    scorer: str = "TransE"
    batch_size: int = 16

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise EmbeddingError("epochs must be >= 1")
        if self.margin <= 0:
            raise EmbeddingError("margin must be > 0")
        if self.learning_rate <= 0:
            raise EmbeddingError("learning_rate must be > 0")
        if self.dim < 1 or self.negatives_per_positive < 1 or self.batch_size < 1:
            raise EmbeddingError("dim, negatives_per_positive and batch_size must be >= 1")
        if self.scorer not in SCORERS:
            raise EmbeddingError(f"unknown scorer {self.scorer!r}")


def _normalize_rows(m: np.ndarray) -> None:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    np.divide(m, norms, out=m, where=norms > 0)


def train(graph: KnowledgeGraph, config: TrainConfig = TrainConfig(), facts: Sequence[Fact] | None = None) -> EmbeddingSpace:
    """Fit embeddings by SGD on the margin ranking loss.

    ``facts`` defaults to the embeddable subgraph; negatives are filtered
    against every fact of ``graph`` as well as the positives.
    """
    if facts is None:
        facts = subgraph_for_embedding(graph)
    facts = sorted(facts, key=lambda f: (str(f.head), f.relation.name, str(f.tail)))
    if not facts:
        raise EmbeddingError("nothing to train on: the embedding subgraph is empty")

    entities = sorted(
        {f.head for f in facts} | {f.tail for f in facts} | {e for e in graph.entities if not e.is_literal}
    )
    eidx = {e: i for i, e in enumerate(entities)}
    relations = sorted({f.relation.name for f in facts})
    ridx = {name: i for i, name in enumerate(relations)}
    triples = np.array([(eidx[f.head], ridx[f.relation.name], eidx[f.tail]) for f in facts], dtype=np.int64)
    known = {tuple(map(int, row)) for row in triples}
    for f in graph:
        if f.head in eidx and f.tail in eidx and f.relation.name in ridx:
            known.add((eidx[f.head], ridx[f.relation.name], eidx[f.tail]))
    sampler = NegativeSampler([e.namespace for e in entities], known)

    cfg = config
    rng = np.random.default_rng(cfg.seed)
    bound = 6.0 / math.sqrt(cfg.dim)
    E = rng.uniform(-bound, bound, size=(len(entities), cfg.dim))
    R = rng.uniform(-bound, bound, size=(len(relations), cfg.dim))
    transe = cfg.scorer == "TransE"
    if transe:
        _normalize_rows(E)

    history: list[float] = []
    k = cfg.negatives_per_positive
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(triples))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            pos = np.repeat(triples[order[start:start + cfg.batch_size]], k, axis=0)
            neg = sampler.sample_batch(pos, rng)
            sp, gph, gpr, gpt = score_grads(cfg.scorer, E[pos[:, 0]], R[pos[:, 1]], E[pos[:, 2]])
            sn, gnh, gnr, gnt = score_grads(cfg.scorer, E[neg[:, 0]], R[neg[:, 1]], E[neg[:, 2]])
            losses = np.maximum(0.0, cfg.margin + sn - sp)
            batch_loss = float(losses.sum())
            if not math.isfinite(batch_loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} (lr={cfg.learning_rate}, scorer={cfg.scorer}); "
                    "lower the learning rate"
                )
            epoch_loss += batch_loss
            active = (losses > 0)[:, None]
            gE = np.zeros_like(E)
            gR = np.zeros_like(R)
            # d loss = d s(neg) - d s(pos) on active pairs
            np.add.at(gE, neg[:, 0], gnh * active)
            np.add.at(gE, neg[:, 2], gnt * active)
            np.add.at(gR, neg[:, 1], gnr * active)
            np.add.at(gE, pos[:, 0], -gph * active)
            np.add.at(gE, pos[:, 2], -gpt * active)
            np.add.at(gR, pos[:, 1], -gpr * active)
            E -= cfg.learning_rate * gE
            R -= cfg.learning_rate * gR
            if transe:
                _normalize_rows(E)
        if not (np.all(np.isfinite(E)) and np.all(np.isfinite(R))):
            raise TrainingDiverged(f"non-finite parameters after epoch {epoch}; lower the learning rate")
        history.append(epoch_loss)
        log.debug("epoch %d loss %.6f", epoch, epoch_loss)

    return EmbeddingSpace(
        cfg.dim,
        cfg.scorer,
        {str(e): E[i].copy() for i, e in enumerate(entities)},
        {name: R[i].copy() for i, name in enumerate(relations)},
        history,
    )


def auc(pos_scores: Sequence[float], neg_scores: Sequence[float]) -> float:
    """Probability a random positive outscores a random negative (ties count half)."""
    pos = np.asarray(pos_scores, dtype=float)[:, None]
    neg = np.asarray(neg_scores, dtype=float)[None, :]
    if pos.size == 0 or neg.size == 0:
        raise EmbeddingError("AUC needs at least one positive and one negative")
    return float(np.mean((pos > neg) + 0.5 * (pos == neg)))


# -- files ---------------------------------------------------------------

def write_section(fh: TextIO, header: dict[str, object], rows: Iterable[tuple[str, str, np.ndarray]]) -> None:
    """One vector-file section: a ``key=value`` header then ``kind<TAB>id<TAB>v1 ... vn`` rows."""
    fh.write(" ".join(f"{k}={v}" for k, v in header.items()) + "\n")
    for kind, key, vec in rows:
        fh.write(f"{kind}\t{key}\t" + " ".join(f"{x:.9g}" for x in np.ravel(vec)) + "\n")


def read_sections(path: str | Path) -> list[tuple[dict[str, str], list[tuple[str, str, np.ndarray]]]]:
    sections: list[tuple[dict[str, str], list]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("dim="):
                header = dict(item.split("=", 1) for item in line.split())
                sections.append((header, []))
                continue
            if not sections:
                raise EmbeddingError(f"{path}:{lineno}: row before header")
            cols = line.split("\t")
            if len(cols) != 3:
                raise EmbeddingError(f"{path}:{lineno}: expected kind<TAB>id<TAB>values")
            kind, key, values = cols
            vec = np.array([float(x) for x in values.split()], dtype=float)
            dim = int(sections[-1][0]["dim"])
            if vec.shape != (dim,):
                raise EmbeddingError(f"{path}:{lineno}: expected {dim} values, got {vec.size}")
            sections[-1][1].append((kind, key, vec))
    return sections


def save_space(space: EmbeddingSpace, path: str | Path) -> None:
    rows = [("entity", k, v) for k, v in sorted(space.entity_vectors.items())]
    rows += [("relation", k, v) for k, v in sorted(space.relation_vectors.items())]
    with open(path, "w", encoding="utf-8") as fh:
        write_section(fh, {"dim": space.dim, "scorer": space.scorer}, rows)


def load_space(path: str | Path) -> EmbeddingSpace:
    sections = read_sections(path)
    if len(sections) != 1:
        raise EmbeddingError(f"{path}: expected a single embedding section")
    header, rows = sections[0]
    ents = {key: vec for kind, key, vec in rows if kind == "entity"}
    rels = {key: vec for kind, key, vec in rows if kind == "relation"}
    return EmbeddingSpace(int(header["dim"]), header.get("scorer", "TransE"), ents, rels)
