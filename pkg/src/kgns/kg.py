"""Typed triple store for sign-lexicon facts.

Entities live in a small closed set of namespaces (signs, English words,
phonemes, semantic features, video examples and numeric literals). Every
relation carries exactly one knowledge type, so facts partition cleanly by
type. Graphs are built single-writer and can be frozen for shared reads.
"""
from __future__ import annotations

import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

NAMESPACES = ("asl", "en", "phoneme", "semfeat", "video", "literal")
LEXICAL_NAMESPACES = frozenset({"asl", "en"})
HEAD_NAMESPACES = frozenset({"asl", "en", "video"})
EMBEDDABLE_TAILS = frozenset({"asl", "en", "phoneme", "semfeat"})

REL_TYPES = (
    "phonetic",
    "phonological",
    "morphological",
    "syntactic",
    "semantic",
    "translation",
    "systematicity",
    "statistical",
    "cognitive",
    "meta",
)

# relation types whose tails may never be numeric literals
_SYMBOLIC_ONLY = frozenset({"translation"})

N_SIGN_FOLDS = 10
N_INSTANCE_FOLDS = 5

# file prefix for each namespace; literals are written `lit:<decimal>`
_PREFIX = {ns: ns for ns in NAMESPACES}
_PREFIX["literal"] = "lit"
_FROM_PREFIX = {v: k for k, v in _PREFIX.items()}

_NUMBER = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)$")


class GraphError(ValueError):
    """Raised for malformed entities, facts, or graph-level preconditions."""


def parse_number(text: str) -> float | None:
    """Parse an integer or plain decimal; ``nan`` is accepted, exponents are not."""
    text = text.strip()
    if text.lower() == "nan":
        return math.nan
    if _NUMBER.match(text):
        return float(text)
    return None


@dataclass(frozen=True, order=True)
class EntityId:
    namespace: str
    label: str
    value: float | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.namespace not in NAMESPACES:
            raise GraphError(f"unknown namespace {self.namespace!r}")
        if not isinstance(self.label, str) or not self.label.strip():
            raise GraphError(f"empty label in namespace {self.namespace!r}")
        if any(c in self.label for c in "\t\n\r"):
            raise GraphError(f"label {self.label!r} contains tab or newline")
        if self.namespace == "literal":
            if self.value is None:
                value = parse_number(self.label)
                if value is None:
                    raise GraphError(f"literal {self.label!r} is not a number")
                object.__setattr__(self, "value", value)
        elif self.value is not None:
            raise GraphError(f"{self.namespace}:{self.label} cannot carry a numeric value")

    @classmethod
    def literal(cls, value: float | str) -> "EntityId":
        if isinstance(value, str):
            return cls("literal", value.strip())
        return cls("literal", format_number(value))

    @classmethod
    def parse(cls, text: str) -> "EntityId":
        prefix, sep, label = text.partition(":")
        if not sep or prefix not in _FROM_PREFIX:
            raise GraphError(f"cannot parse entity {text!r}; expected <namespace>:<label>")
        return cls(_FROM_PREFIX[prefix], label)

    @property
    def is_literal(self) -> bool:
        return self.namespace == "literal"

    def __str__(self) -> str:
        return f"{_PREFIX[self.namespace]}:{self.label}"


def format_number(value: float) -> str:
    """Canonical decimal text: no exponent, no trailing zeros."""
    if math.isnan(value):
        return "nan"
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    text = np.format_float_positional(value, trim="-")
    return "0" if text in ("-0", "-0.") else text


def normalize_relation_name(name: str) -> str:
    name = name.strip().lower()
    return re.sub(r"[\s\-]+", "_", name)


@dataclass(frozen=True, order=True)
class RelationId:
    name: str
    rel_type: str

    def __post_init__(self) -> None:
        if self.rel_type not in REL_TYPES:
            raise GraphError(f"unknown relation type {self.rel_type!r}")
        name = normalize_relation_name(self.name)
        if not name:
            raise GraphError("empty relation name")
        object.__setattr__(self, "name", name)

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Fact:
    head: EntityId
    relation: RelationId
    tail: EntityId
    source: str = ""

    @property
    def key(self) -> tuple[EntityId, str, EntityId]:
        return (self.head, self.relation.name, self.tail)

    @property
    def rel_type(self) -> str:
        return self.relation.rel_type

    def __str__(self) -> str:
        return f"({self.head}, {self.relation}, {self.tail})"


def merge_sources(a: str, b: str) -> str:
    names = {s for s in a.split(",") if s} | {s for s in b.split(",") if s}
    return ",".join(sorted(names))


@dataclass
class Folds:
    sign_folds: dict[EntityId, int]
    instance_folds: dict[EntityId, int]

    def signs_in(self, fold: int) -> set[EntityId]:
        return {s for s, f in self.sign_folds.items() if f == fold}

    def videos_in(self, fold: int) -> set[EntityId]:
        return {v for v, f in self.instance_folds.items() if f == fold}


class KnowledgeGraph:
    """Entities, typed relations and deduplicated facts.

    Duplicate (head, relation, tail) insertions do not add a fact; when the
    duplicate comes from another source the source label becomes the sorted
    comma-joined union.
    """

    def __init__(self, facts: Iterable[Fact] = ()) -> None:
        self._entities: dict[EntityId, None] = {}
        self._relations: dict[str, RelationId] = {}
        self._facts: dict[tuple[EntityId, str, EntityId], Fact] = {}
        self._by_head: dict[EntityId, list[tuple]] = defaultdict(list)
        self._by_tail: dict[EntityId, list[tuple]] = defaultdict(list)
        self._frozen = False
        self.folds: Folds | None = None
        for f in facts:
            self.add_fact(f)

    # -- construction -------------------------------------------------
    def add_entity(self, entity: EntityId) -> None:
        self._check_writable()
        self._entities.setdefault(entity, None)

    def add_relation(self, relation: RelationId) -> RelationId:
        self._check_writable()
        known = self._relations.get(relation.name)
        if known is None:
            self._relations[relation.name] = relation
            return relation
        if known.rel_type != relation.rel_type:
            raise GraphError(
                f"relation {relation.name!r} already typed {known.rel_type!r}, got {relation.rel_type!r}"
            )
        return known

    def add_fact(self, fact: Fact) -> bool:
        """Insert ``fact``; returns True when the triple was new."""
        self._check_writable()
        if fact.head.namespace not in HEAD_NAMESPACES:
            raise GraphError(f"{fact}: head namespace {fact.head.namespace!r} cannot be a subject")
        if fact.tail.is_literal and fact.rel_type in _SYMBOLIC_ONLY:
            raise GraphError(f"{fact}: {fact.rel_type} relations need a symbolic tail")
        relation = self.add_relation(fact.relation)
        key = fact.key
        existing = self._facts.get(key)
        if existing is not None:
            if fact.source and fact.source != existing.source:
                merged = merge_sources(existing.source, fact.source)
                self._facts[key] = Fact(existing.head, existing.relation, existing.tail, merged)
            return False
        if relation is not fact.relation:
            fact = Fact(fact.head, relation, fact.tail, fact.source)
        self.add_entity(fact.head)
        self.add_entity(fact.tail)
        self._facts[key] = fact
        self._by_head[fact.head].append(key)
        self._by_tail[fact.tail].append(key)
        return True

    def add(self, head: EntityId | str, relation: str, tail: EntityId | str, rel_type: str, source: str = "") -> bool:
        if isinstance(head, str):
            head = EntityId.parse(head)
        if isinstance(tail, str):
            tail = EntityId.parse(tail)
        return self.add_fact(Fact(head, RelationId(relation, rel_type), tail, source))

    def freeze(self) -> "KnowledgeGraph":
        self._frozen = True
        return self

    @property
    def frozen(self) -> bool:
        return self._frozen

    def _check_writable(self) -> None:
        if self._frozen:
            raise GraphError("graph is frozen")

    # -- queries -----------------------------------------------------
    @property
    def facts(self) -> tuple[Fact, ...]:
        return tuple(self._facts.values())

    @property
    def entities(self) -> tuple[EntityId, ...]:
        return tuple(self._entities)

    @property
    def relations(self) -> tuple[RelationId, ...]:
        return tuple(self._relations.values())

    def relation(self, name: str) -> RelationId:
        return self._relations[normalize_relation_name(name)]

    def __len__(self) -> int:
        return len(self._facts)

    def __iter__(self) -> Iterator[Fact]:
        return iter(self._facts.values())

    def __contains__(self, item) -> bool:
        if isinstance(item, Fact):
            return item.key in self._facts
        if isinstance(item, EntityId):
            return item in self._entities
        return tuple(item) in self._facts

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return self._facts == other._facts and set(self._entities) == set(other._entities)

    def has_triple(self, head: EntityId, relation: str, tail: EntityId) -> bool:
        return (head, relation, tail) in self._facts

    def entities_in(self, namespace: str) -> list[EntityId]:
        return sorted(e for e in self._entities if e.namespace == namespace)

    def facts_with_head(self, entity: EntityId) -> list[Fact]:
        return [self._facts[k] for k in self._by_head.get(entity, ())]

    def facts_with_tail(self, entity: EntityId) -> list[Fact]:
        return [self._facts[k] for k in self._by_tail.get(entity, ())]

    def facts_of_type(self, rel_type: str) -> set[Fact]:
        if rel_type not in REL_TYPES:
            raise GraphError(f"unknown relation type {rel_type!r}")
        return {f for f in self._facts.values() if f.rel_type == rel_type}

    def relations_of_type(self, rel_type: str) -> list[RelationId]:
        return sorted(r for r in self._relations.values() if r.rel_type == rel_type)

    def video_sign(self, video: EntityId) -> EntityId:
        """The single sign a video example demonstrates."""
        signs = {f.tail for f in self.facts_with_head(video) if f.tail.namespace == "asl"}
        signs |= {f.head for f in self.facts_with_tail(video) if f.head.namespace == "asl"}
        if len(signs) != 1:
            what = "no sign link" if not signs else f"{len(signs)} sign links"
            raise GraphError(f"video {video} has {what}")
        return next(iter(signs))

    # -- derived graphs ----------------------------------------------
    def copy(self) -> "KnowledgeGraph":
        g = KnowledgeGraph()
        for e in self._entities:
            g.add_entity(e)
        for f in self._facts.values():
            g.add_fact(f)
        g.folds = self.folds
        return g

    def without_signs(self, signs: Iterable[EntityId]) -> "KnowledgeGraph":
        """Copy with every fact touching ``signs`` or their video examples removed."""
        drop = set(signs)
        for e in self._entities:
            if e.namespace != "video":
                continue
            linked = {self._facts[k].tail for k in self._by_head.get(e, ())}
            linked |= {self._facts[k].head for k in self._by_tail.get(e, ())}
            if linked & drop:
                drop.add(e)
        g = KnowledgeGraph()
        for e in self._entities:
            if e not in drop:
                g.add_entity(e)
        for f in self._facts.values():
            if f.head not in drop and f.tail not in drop:
                g.add_fact(f)
        return g


# -- statistics ---------------------------------------------------------

@dataclass(frozen=True)
class DegreeStats:
    avg_in: float
    sd_in: float
    avg_out: float
    sd_out: float


def degree_stats(graph: KnowledgeGraph, language: str) -> DegreeStats:
    """Mean and population standard deviation of in/out degree per entity."""
    if language not in LEXICAL_NAMESPACES:
        raise GraphError(f"language must be one of {sorted(LEXICAL_NAMESPACES)}")
    population = graph.entities_in(language)
    if not population:
        raise GraphError(f"no {language} entities in graph")
    ins = np.array([len(graph.facts_with_tail(e)) for e in population], dtype=float)
    outs = np.array([len(graph.facts_with_head(e)) for e in population], dtype=float)
    return DegreeStats(float(ins.mean()), float(ins.std()), float(outs.mean()), float(outs.std()))


def subgraph_for_embedding(graph: KnowledgeGraph) -> list[Fact]:
    """Facts whose tail is a lexical item, phoneme or semantic feature."""
    return [f for f in graph if f.tail.namespace in EMBEDDABLE_TAILS]


# -- folds --------------------------------------------------------------

def assign_folds(graph: KnowledgeGraph, seed: int) -> Folds:
    """Reproducible sign folds (10, equal size) and per-sign stratified instance folds (5)."""
    rng = np.random.default_rng(seed)
    signs = graph.entities_in("asl")
    order = rng.permutation(len(signs))
    sign_folds = {signs[i]: rank % N_SIGN_FOLDS for rank, i in enumerate(order)}

    videos_of: dict[EntityId, list[EntityId]] = defaultdict(list)
    for v in graph.entities_in("video"):
        videos_of[graph.video_sign(v)].append(v)

    sizes = [0] * N_INSTANCE_FOLDS
    instance_folds: dict[EntityId, int] = {}
    for i in order:
        vids = videos_of.get(signs[i])
        if not vids:
            continue
        # cycle this sign's videos through folds, emptiest (then lowest index) first
        cycle = sorted(range(N_INSTANCE_FOLDS), key=lambda k: (sizes[k], k))
        for j, vi in enumerate(rng.permutation(len(vids))):
            fold = cycle[j % N_INSTANCE_FOLDS]
            instance_folds[vids[vi]] = fold
            sizes[fold] += 1
    return Folds(sign_folds, instance_folds)


# -- files --------------------------------------------------------------

def load_facts(path: str | Path) -> KnowledgeGraph:
    """Read the 5-column TSV fact format."""
    graph = KnowledgeGraph()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 5:
                raise GraphError(f"{path}:{lineno}: expected 5 tab-separated columns, got {len(cols)}")
            head, rel, tail, rel_type, source = cols
            try:
                graph.add(head, rel, tail, rel_type, source)
            except GraphError as exc:
                raise GraphError(f"{path}:{lineno}: {exc}") from None
    return graph


def save_facts(graph: KnowledgeGraph | Iterable[Fact], path: str | Path) -> None:
    facts = sorted(graph, key=lambda f: (str(f.head), f.relation.name, str(f.tail)))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# head\trelation\ttail\trel_type\tsource\n")
        for f in facts:
            fh.write(f"{f.head}\t{f.relation.name}\t{f.tail}\t{f.rel_type}\t{f.source}\n")


def save_fold_map(folds: dict[EntityId, int], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entity, fold in sorted(folds.items(), key=lambda kv: str(kv[0])):
            fh.write(f"{entity}\t{fold}\n")


def load_fold_map(path: str | Path) -> dict[EntityId, int]:
    folds = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip() or line.startswith("#"):
                continue
            entity, fold = line.rstrip("\n").split("\t")
            folds[EntityId.parse(entity)] = int(fold)
    return folds
