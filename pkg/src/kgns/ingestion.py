"""Tabular sources to facts, plus ontology refinement.

Refinement merges translation-like relations, unifies phoneme spellings,
merges sign entities that look like spelling variants of one another,
prunes English words that no sign translates to, and normalizes literals.
Every step returns a new graph and reports what it changed.
"""
from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .kg import EntityId, Fact, GraphError, KnowledgeGraph, RelationId, format_number, parse_number

log = logging.getLogger(__name__)

TRANSLATION_RELATION = "has_translation"
HANDSHAPE = "handshape"
_VARIANT_SUFFIX = re.compile(r"_\d+$")

# namespace a column's cells fall into when the manifest does not say
DEFAULT_NAMESPACE = {
    "phonological": "phoneme",
    "translation": "en",
    "semantic": "semfeat",
    "phonetic": "literal",
    "statistical": "literal",
    "cognitive": "literal",
    "morphological": "asl",
    "syntactic": "semfeat",
    "systematicity": "semfeat",
    "meta": "semfeat",
}


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class Column:
    name: str
    rel_type: str
    namespace: str = ""  # "" -> DEFAULT_NAMESPACE[rel_type]; "literal" means numeric

    @property
    def target(self) -> str:
        return self.namespace or DEFAULT_NAMESPACE[self.rel_type]


@dataclass
class SourceTable:
    name: str
    columns: list[Column]
    rows: list[list[str]]
    subject_column: int = 0
    subject_namespace: str = "asl"

    def __post_init__(self) -> None:
        if not 0 <= self.subject_column < len(self.columns):
            raise IngestError(f"{self.name}: subject column {self.subject_column} out of range")
        for i, row in enumerate(self.rows):
            if len(row) != len(self.columns):
                raise IngestError(f"{self.name}: row {i + 1} has {len(row)} cells, expected {len(self.columns)}")


@dataclass
class Report:
    """Human-readable log of what a refinement step did."""

    lines: list[str] = field(default_factory=list)
    conflicts: list[str] = field(default_factory=list)

    def add(self, line: str) -> None:
        self.lines.append(line)

    def extend(self, other: "Report") -> None:
        self.lines += other.lines
        self.conflicts += other.conflicts

    def text(self) -> str:
        out = list(self.lines)
        if self.conflicts:
            out.append(f"conflicts: {len(self.conflicts)}")
            out += ["  " + c for c in self.conflicts]
        return "\n".join(out) + "\n"


@dataclass
class MergePlan:
    relation_renames: dict[str, str] = field(default_factory=dict)
    value_renames: dict[str, str] = field(default_factory=dict)
    entity_merges: set[frozenset] = field(default_factory=set)


# -- tables ----------------------------------------------------------------

def rows_to_facts(table: SourceTable, diagnostics: list[str] | None = None) -> list[Fact]:
    """One fact per non-empty, non-subject cell; rows with an unparseable numeric cell are skipped."""
    facts: list[Fact] = []
    relations = [RelationId(c.name, c.rel_type) for c in table.columns]
    for lineno, row in enumerate(table.rows, 1):
        subject = row[table.subject_column].strip()
        if not subject:
            _diag(diagnostics, f"{table.name}: row {lineno} has an empty subject; skipped")
            continue
        head = EntityId(table.subject_namespace, subject)
        row_facts = []
        bad = None
        for i, (col, cell) in enumerate(zip(table.columns, row)):
            cell = cell.strip()
            if i == table.subject_column or not cell:
                continue
            if col.target == "literal":
                if parse_number(cell) is None:
                    bad = f"{table.name}: row {lineno} column {col.name!r}: {cell!r} is not a number; row skipped"
                    break
                tail = EntityId("literal", cell)
            else:
                tail = EntityId(col.target, cell)
            row_facts.append(Fact(head, relations[i], tail, table.name))
        if bad:
            _diag(diagnostics, bad)
            continue
        facts += row_facts
    return facts


def _diag(diagnostics: list[str] | None, message: str) -> None:
    log.warning(message)
    if diagnostics is not None:
        diagnostics.append(message)


def read_csv_table(path: str | Path, name: str, columns: Mapping[str, Column], subject: str,
                   subject_namespace: str = "asl") -> SourceTable:
    """Load a header-row CSV keeping the subject column and the declared columns."""
    path = Path(path)
    if not path.exists():
        raise IngestError(f"table {name}: no such file {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file (no header row)") from None
        raw = list(reader)
    wanted = [subject] + [c for c in columns if c != subject]
    missing = [c for c in wanted if c not in header]
    if missing:
        raise IngestError(f"{path}: missing columns {missing}")
    idx = [header.index(c) for c in wanted]
    rows = []
    for r in raw:
        if not any(cell.strip() for cell in r):
            continue
        r = r + [""] * (len(header) - len(r))
        rows.append([r[i] for i in idx])
    cols = [Column(subject, "meta", subject_namespace)] + [columns[c] for c in wanted[1:]]
    return SourceTable(name, cols, rows, 0, subject_namespace)


# -- string similarity -----------------------------------------------------

def levenshtein(a: str, b: str) -> int:
    """Edit distance with unit insert, delete and substitute costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def normalize_gloss(gloss: str) -> str:
    """Lowercase and drop a trailing variant id such as ``_1``."""
    return _VARIANT_SUFFIX.sub("", gloss.strip().lower())


def gloss_distance(a: str, b: str) -> int:
    return levenshtein(normalize_gloss(a), normalize_gloss(b))


def within_one(a: str, b: str) -> bool:
    """levenshtein(a, b) <= 1 without filling the whole table."""
    if a == b:
        return True
    if abs(len(a) - len(b)) > 1:
        return False
    if len(a) == len(b):
        return sum(x != y for x, y in zip(a, b)) == 1
    if len(a) > len(b):
        a, b = b, a
    i = 0
    while i < len(a) and a[i] == b[i]:
        i += 1
    return a[i:] == b[i + 1:]


def handshapes(graph: KnowledgeGraph, sign: EntityId) -> set[str]:
    return {f.tail.label for f in graph.facts_with_head(sign)
            if f.relation.name == HANDSHAPE and f.tail.namespace == "phoneme"}


def entity_equal(graph: KnowledgeGraph, a: EntityId, b: EntityId) -> tuple[bool, bool]:
    """(equal, has_evidence): same handshape and glosses within edit distance 1.

    Without a handshape on both sides the answer is (False, False): merging
    needs positive support.
    """
    ha, hb = handshapes(graph, a), handshapes(graph, b)
    if not ha or not hb:
        return False, False
    return ha == hb and gloss_distance(a.label, b.label) <= 1, True


# -- refinement ------------------------------------------------------------

def _resolve_renames(renames: Mapping[str, str], what: str) -> dict[str, str]:
    """Follow rename chains to their end; a cycle is an error."""
    out = {}
    for start in renames:
        seen = [start]
        cur = renames[start]
        while cur in renames and cur != seen[-1]:
            if cur in seen:
                raise IngestError(f"{what} rename cycle: {' -> '.join(seen + [cur])}")
            seen.append(cur)
            cur = renames[cur]
        if cur != start:
            out[start] = cur
    return out


def _rebuild(graph: KnowledgeGraph, facts) -> KnowledgeGraph:
    g = KnowledgeGraph()
    for e in graph.entities:
        g.add_entity(e)
    for f in facts:
        g.add_fact(f)
    g.folds = graph.folds
    return g


def merge_relations(
    graph: KnowledgeGraph,
    value_renames: Mapping[str, str] | None = None,
    translation_relation: str = TRANSLATION_RELATION,
) -> tuple[KnowledgeGraph, MergePlan, Report]:
    """Rename every translation-type relation to one name and apply phoneme value renames."""
    plan = MergePlan()
    for r in graph.relations_of_type("translation"):
        if r.name != translation_relation:
            plan.relation_renames[r.name] = translation_relation
    plan.value_renames = _resolve_renames(dict(value_renames or {}), "phoneme value")
    target = RelationId(translation_relation, "translation")
    out = []
    for f in graph.facts:
        rel = target if f.relation.name in plan.relation_renames else f.relation
        tail = f.tail
        if tail.namespace == "phoneme" and tail.label in plan.value_renames:
            tail = EntityId("phoneme", plan.value_renames[tail.label])
        out.append(Fact(f.head, rel, tail, f.source))
    g = _rebuild(graph, out)
    # drop renamed phoneme entities that no longer occur anywhere
    drop = {EntityId("phoneme", old) for old in plan.value_renames}
    g = _without_entities(g, drop)
    report = Report()
    for old, new in sorted(plan.relation_renames.items()):
        report.add(f"relation {old} -> {new}")
    for old, new in sorted(plan.value_renames.items()):
        report.add(f"phoneme {old} -> {new}")
    return g, plan, report


def _without_entities(graph: KnowledgeGraph, drop: set[EntityId]) -> KnowledgeGraph:
    g = KnowledgeGraph()
    for e in graph.entities:
        if e not in drop:
            g.add_entity(e)
    for f in graph.facts:
        if f.head not in drop and f.tail not in drop:
            g.add_fact(f)
    g.folds = graph.folds
    return g


def merge_entities(graph: KnowledgeGraph) -> tuple[KnowledgeGraph, MergePlan, Report]:
    """Merge connected components of signs under ``entity_equal``; the smallest label wins."""
    signs = graph.entities_in("asl")
    parent = {s: s for s in signs}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    plan = MergePlan()
    by_shape: dict[frozenset, list[EntityId]] = {}
    for s in signs:
        hs = handshapes(graph, s)
        if hs:
            by_shape.setdefault(frozenset(hs), []).append(s)
    for group in by_shape.values():
        norm = [normalize_gloss(s.label) for s in group]
        for i in range(len(group)):
            for j in range(i + 1, len(group)):
                if within_one(norm[i], norm[j]):
                    plan.entity_merges.add(frozenset((group[i], group[j])))
                    a, b = find(group[i]), find(group[j])
                    if a != b:
                        parent[max(a, b)] = min(a, b)
    # union-by-min keeps every root the smallest member of its component
    canon = {s: find(s) for s in signs}
    out = []
    for f in graph.facts:
        head = canon.get(f.head, f.head)
        tail = canon.get(f.tail, f.tail)
        out.append(Fact(head, f.relation, tail, f.source))
    g = KnowledgeGraph()
    for e in graph.entities:
        g.add_entity(canon.get(e, e))
    for f in out:
        g.add_fact(f)
    report = Report()
    components: dict[EntityId, list[EntityId]] = {}
    for s, c in canon.items():
        if s != c:
            components.setdefault(c, []).append(s)
    for c in sorted(components):
        report.add(f"merged {', '.join(str(m) for m in sorted(components[c]))} into {c}")
        # numeric conflicts: one relation, several literal values on the merged entity
        values: dict[str, set[str]] = {}
        for f in g.facts_with_head(c):
            if f.tail.is_literal and f.tail.value == f.tail.value:
                values.setdefault(f.relation.name, set()).add(f.tail.label)
        for rel, vals in sorted(values.items()):
            if len(vals) > 1:
                report.conflicts.append(f"{c} {rel}: {', '.join(sorted(vals))}")
    return g, plan, report


def merge_english(graph: KnowledgeGraph) -> tuple[KnowledgeGraph, Report]:
    """Move translation targets into ``en`` and drop English words no translation comes near."""
    out = []
    for f in graph.facts:
        tail = f.tail
        if f.rel_type == "translation" and tail.namespace not in ("en", "literal"):
            tail = EntityId("en", tail.label)
        out.append(Fact(f.head, f.relation, tail, f.source))
    g = _rebuild(graph, out)
    translations = {f.tail.label for f in g.facts if f.rel_type == "translation" and f.head.namespace == "asl"}
    by_len: dict[int, list[str]] = {}
    for t in translations:
        by_len.setdefault(len(t), []).append(t)

    def near(word: str) -> bool:
        if word in translations:
            return True
        return any(within_one(word, t) for n in (len(word) - 1, len(word), len(word) + 1) for t in by_len.get(n, ()))

    drop = {e for e in g.entities_in("en") if not near(e.label)}
    report = Report()
    if drop:
        report.add(f"removed {len(drop)} English words without a near translation")
    return _without_entities(g, drop), report


def clean(graph: KnowledgeGraph) -> tuple[KnowledgeGraph, Report]:
    """Drop NaN literals, canonicalize numbers, collapse duplicates."""
    out = []
    dropped = renamed = 0
    for f in graph.facts:
        tail = f.tail
        if tail.is_literal:
            if tail.value != tail.value:  # NaN
                dropped += 1
                continue
            canonical = format_number(tail.value)
            if canonical != tail.label:
                tail = EntityId("literal", canonical)
                renamed += 1
        out.append(Fact(f.head, f.relation, tail, f.source))
    g = KnowledgeGraph()
    for e in graph.entities:
        if not e.is_literal:
            g.add_entity(e)
    for f in out:
        g.add_fact(f)
    g.folds = graph.folds
    report = Report()
    if dropped:
        report.add(f"dropped {dropped} NaN facts")
    if renamed:
        report.add(f"normalized {renamed} numeric literals")
    if len(g) < len(out):
        report.add(f"collapsed {len(out) - len(g)} duplicate facts")
    return g, report


def refine(graph: KnowledgeGraph, value_renames: Mapping[str, str] | None = None) -> tuple[KnowledgeGraph, Report]:
    """All refinement steps in order; cleaning first keeps conflict reports canonical."""
    report = Report()
    g, r = clean(graph)
    report.extend(r)
    g, _, r = merge_relations(g, value_renames)
    report.extend(r)
    g, _, r = merge_entities(g)
    report.extend(r)
    if any(True for _ in g.relations_of_type("translation")):
        g, r = merge_english(g)
        report.extend(r)
    g, r = clean(g)
    report.extend(r)
    return g, report


# -- manifests ---------------------------------------------------------------

@dataclass
class Manifest:
    tables: list[dict]
    value_renames: dict[str, str]
    base: Path


def load_manifest(path: str | Path) -> Manifest:
    """JSON: {"tables": [{"name", "path", "subject", "subject_namespace",
    "columns": {col: rel_type | {"rel_type", "namespace"}}}], "value_renames": {...}}.
    Relative table paths resolve against the manifest's directory."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise IngestError(f"no such manifest {path}") from None
    except json.JSONDecodeError as exc:
        raise IngestError(f"{path}: invalid JSON ({exc})") from None
    tables = data.get("tables")
    if not isinstance(tables, list) or not tables:
        raise IngestError(f"{path}: manifest lists no tables")
    for t in tables:
        for key in ("name", "path", "subject", "columns"):
            if key not in t:
                raise IngestError(f"{path}: table entry missing {key!r}")
    return Manifest(tables, dict(data.get("value_renames", {})), path.parent)


def load_tables(manifest: Manifest, diagnostics: list[str] | None = None) -> KnowledgeGraph:
    g = KnowledgeGraph()
    for t in manifest.tables:
        cols = {}
        for name, spec in t["columns"].items():
            if isinstance(spec, str):
                cols[name] = Column(name, spec)
            else:
                cols[name] = Column(name, spec["rel_type"], spec.get("namespace", ""))
        table = read_csv_table(manifest.base / t["path"], t["name"], cols, t["subject"], t.get("subject_namespace", "asl"))
        for f in rows_to_facts(table, diagnostics):
            try:
                g.add_fact(f)
            except GraphError as exc:
                raise IngestError(f"table {t['name']}: {exc}") from None
    return g
