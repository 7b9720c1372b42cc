"""Phonological feature types, their value vocabularies, and factor groups."""
from __future__ import annotations

from dataclasses import dataclass, field

from .kg import EntityId, GraphError, KnowledgeGraph

# Sixteen phonological feature types in three factor groups.
ARTICULATORS = (
    "handshape",
    "selected_fingers",
    "flexion",
    "spread",
    "thumb_position",
    "thumb_contact",
    "nondominant_handshape",
    "sign_type",
)
PLACE = ("major_location", "minor_location", "second_minor_location", "contact")
PROSODIC = ("path_movement", "repeated_movement", "wrist_twist", "spread_change")

DEFAULT_GROUPS = {"articulators": ARTICULATORS, "place": PLACE, "prosodic": PROSODIC}
DEFAULT_FEATURE_TYPES = ARTICULATORS + PLACE + PROSODIC
N_FEATURE_TYPES = len(DEFAULT_FEATURE_TYPES)


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature types, each with a sorted tuple of phoneme labels."""

    vocab: dict[str, tuple[str, ...]]
    groups: dict[str, tuple[str, ...]] = field(default_factory=dict)

    @property
    def feature_types(self) -> tuple[str, ...]:
        return tuple(self.vocab)

    def __len__(self) -> int:
        return len(self.vocab)

    @property
    def n_values(self) -> int:
        return sum(len(v) for v in self.vocab.values())

    def offsets(self) -> dict[str, int]:
        """Start index of each feature's block in a flattened value vector."""
        out, pos = {}, 0
        for ft, values in self.vocab.items():
            out[ft] = pos
            pos += len(values)
        return out

    def check_groups(self) -> None:
        seen: list[str] = [ft for members in self.groups.values() for ft in members]
        if sorted(seen) != sorted(self.vocab):
            missing = set(self.vocab) - set(seen)
            extra = set(seen) - set(self.vocab)
            dup = {ft for ft in seen if seen.count(ft) > 1}
            raise GraphError(
                f"feature groups must partition the feature types (missing={sorted(missing)}, "
                f"unknown={sorted(extra)}, repeated={sorted(dup)})"
            )

    @classmethod
    def from_graph(
        cls,
        graph: KnowledgeGraph,
        feature_types: tuple[str, ...] | None = None,
        groups: dict[str, tuple[str, ...]] | None = None,
    ) -> "FeatureSchema":
        """Read value vocabularies off the graph's phonological facts.

        With no explicit ``feature_types`` the default sixteen are used when
        the graph has any of them, otherwise every phonological relation with
        phoneme tails. Feature types with no observed values are dropped.
        """
        values: dict[str, set[str]] = {}
        for f in graph.facts_of_type("phonological"):
            if f.tail.namespace == "phoneme":
                values.setdefault(f.relation.name, set()).add(f.tail.label)
        if feature_types is None:
            feature_types = tuple(ft for ft in DEFAULT_FEATURE_TYPES if ft in values)
            if not feature_types:
                feature_types = tuple(sorted(values))
        vocab = {ft: tuple(sorted(values[ft])) for ft in feature_types if values.get(ft)}
        if groups is None:
            groups = {}
            for name, members in DEFAULT_GROUPS.items():
                kept = tuple(ft for ft in members if ft in vocab)
                if kept:
                    groups[name] = kept
            leftover = tuple(ft for ft in vocab if not any(ft in m for m in groups.values()))
            if leftover:
                # unknown feature names: caller must group them before building factors
                groups = {}
        else:
            groups = {name: tuple(ft for ft in members if ft in vocab) for name, members in groups.items()}
            groups = {k: v for k, v in groups.items() if v}
        return cls(vocab, groups)


def sign_phonology(graph: KnowledgeGraph, sign: EntityId, schema: FeatureSchema) -> dict[str, str | None]:
    """Gold phoneme label per feature type, ``None`` where unannotated.

    A sign annotated with several values for one type (sequential handshapes,
    say) is represented by the lexicographically smallest.
    """
    found: dict[str, list[str]] = {}
    for f in graph.facts_with_head(sign):
        if f.rel_type == "phonological" and f.tail.namespace == "phoneme" and f.relation.name in schema.vocab:
            found.setdefault(f.relation.name, []).append(f.tail.label)
    return {ft: (min(found[ft]) if ft in found else None) for ft in schema.feature_types}
