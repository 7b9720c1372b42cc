"""Grounding contract: per-window phoneme distributions p(phoneme | video).

Observations arrive from files produced by an external phonologizer (or are
synthesized from gold annotations); nothing here looks at video.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .kg import EntityId, GraphError, KnowledgeGraph
from .phonology import FeatureSchema, sign_phonology

NORMALIZATION_TOL = 1e-6
FRAME_SEPARATOR = "@"


class ObservationError(ValueError):
    pass


@dataclass
class PhonemeObservation:
    window_id: str
    distributions: dict[str, dict[str, float]]

    @property
    def feature_types(self) -> tuple[str, ...]:
        return tuple(self.distributions)

    def prob(self, feature_type: str, phoneme: str) -> float:
        return self.distributions[feature_type].get(phoneme, 0.0)

    def argmax(self, feature_type: str) -> str:
        dist = self.distributions[feature_type]
        best = max(dist.values())
        return min(p for p, v in dist.items() if v == best)

    def is_argmax(self, feature_type: str, phoneme: str) -> bool:
        dist = self.distributions[feature_type]
        return phoneme in dist and dist[phoneme] == max(dist.values())

    def validate(self, phonemes: set[str] | None = None) -> None:
        for ft, dist in self.distributions.items():
            if not dist:
                raise ObservationError(f"window {self.window_id}: empty distribution for {ft}")
            for ph, p in dist.items():
                if not 0.0 <= p <= 1.0:
                    raise ObservationError(f"window {self.window_id}: p({ft}={ph}) = {p} outside [0, 1]")
                if phonemes is not None and ph not in phonemes:
                    raise ObservationError(f"window {self.window_id}: unknown phoneme {ph!r} for {ft}")
            total = sum(dist.values())
            if abs(total - 1.0) > NORMALIZATION_TOL:
                raise ObservationError(f"window {self.window_id}: {ft} sums to {total:.9g}, not 1")


@dataclass
class ObservationSet:
    observations: list[PhonemeObservation]
    provenance: str = ""

    def __post_init__(self) -> None:
        ids = [o.window_id for o in self.observations]
        if len(set(ids)) != len(ids):
            raise ObservationError("duplicate window ids")

    def __len__(self) -> int:
        return len(self.observations)

    def __iter__(self):
        return iter(self.observations)

    def __getitem__(self, i):
        return self.observations[i]

    def by_id(self) -> dict[str, PhonemeObservation]:
        return {o.window_id: o for o in self.observations}


def _graph_phonemes(graph: KnowledgeGraph | None) -> set[str] | None:
    if graph is None:
        return None
    return {e.label for e in graph.entities_in("phoneme")}


def load_observations(path: str | Path, graph: KnowledgeGraph | None = None) -> ObservationSet:
    """Parse the line format (``window <id>`` / ``dist <type> <ph>:<p> ...``)."""
    phonemes = _graph_phonemes(graph)
    observations: list[PhonemeObservation] = []
    current: PhonemeObservation | None = None
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            kind, _, rest = line.partition(" ")
            where = f"{path}:{lineno}"
            if kind == "window":
                wid = rest.strip()
                if not wid or wid in seen:
                    raise ObservationError(f"{where}: missing or duplicate window id {wid!r}")
                seen.add(wid)
                current = PhonemeObservation(wid, {})
                observations.append(current)
            elif kind == "dist":
                if current is None:
                    raise ObservationError(f"{where}: dist before any window")
                parts = rest.split()
                if len(parts) < 2:
                    raise ObservationError(f"{where}: dist needs a feature type and at least one value")
                ft, pairs = parts[0], parts[1:]
                if ft in current.distributions:
                    raise ObservationError(f"{where}: repeated feature type {ft}")
                dist: dict[str, float] = {}
                for pair in pairs:
                    ph, sep, p = pair.rpartition(":")
                    if not sep or not ph:
                        raise ObservationError(f"{where}: bad value {pair!r}, expected <phoneme>:<p>")
                    if phonemes is not None and ph not in phonemes:
                        raise ObservationError(f"{where}: unknown phoneme {ph!r}")
                    try:
                        dist[ph] = float(p)
                    except ValueError:
                        raise ObservationError(f"{where}: bad probability {p!r}") from None
                current.distributions[ft] = dist
                try:
                    PhonemeObservation(current.window_id, {ft: dist}).validate()
                except ObservationError as exc:
                    raise ObservationError(f"{where}: {exc}") from None
            else:
                raise ObservationError(f"{where}: unknown directive {kind!r}")
    return ObservationSet(observations, str(path))


def save_observations(observations: ObservationSet | Iterable[PhonemeObservation], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for obs in observations:
            fh.write(f"window {obs.window_id}\n")
            for ft, dist in obs.distributions.items():
                values = " ".join(f"{ph}:{p:.9g}" for ph, p in dist.items())
                fh.write(f"dist {ft} {values}\n")


def one_hot_from_gold(
    graph: KnowledgeGraph, sign: EntityId, schema: FeatureSchema | None = None, window_id: str | None = None
) -> PhonemeObservation:
    """Certain evidence on the sign's annotated phonemes, uniform elsewhere."""
    schema = schema or FeatureSchema.from_graph(graph)
    gold = sign_phonology(graph, sign, schema)
    if all(v is None for v in gold.values()):
        raise GraphError(f"{sign} has no phonological facts")
    dists = {}
    for ft, value in gold.items():
        vocab = schema.vocab[ft]
        if value is None:
            dists[ft] = {ph: 1.0 / len(vocab) for ph in vocab}
        else:
            dists[ft] = {value: 1.0}
    return PhonemeObservation(window_id or sign.label, dists)


def from_values(window_id: str, values: Mapping[str, str]) -> PhonemeObservation:
    """One-hot observation from a feature -> phoneme mapping."""
    return PhonemeObservation(window_id, {ft: {ph: 1.0} for ft, ph in values.items()})


def pool(frames: list[PhonemeObservation], window_id: str) -> PhonemeObservation:
    """Average frame-level distributions over a window."""
    if not frames:
        raise ObservationError(f"window {window_id} has no frames")
    dists: dict[str, dict[str, float]] = {}
    for ft in frames[0].feature_types:
        acc: dict[str, float] = {}
        for fr in frames:
            for ph, p in fr.distributions[ft].items():
                acc[ph] = acc.get(ph, 0.0) + p
        dists[ft] = {ph: p / len(frames) for ph, p in sorted(acc.items())}
    return PhonemeObservation(window_id, dists)


def group_frames(observations: Iterable[PhonemeObservation]) -> "OrderedDict[str, list[PhonemeObservation]]":
    """Split ``<video>@<frame>`` window ids into per-video frame lists, in file order."""
    videos: OrderedDict[str, list[PhonemeObservation]] = OrderedDict()
    for obs in observations:
        video, sep, _ = obs.window_id.rpartition(FRAME_SEPARATOR)
        if not sep:
            raise ObservationError(f"frame id {obs.window_id!r} lacks '{FRAME_SEPARATOR}<frame>'")
        videos.setdefault(video, []).append(obs)
    return videos
