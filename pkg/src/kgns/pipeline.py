"""Sentence-level topic classification from continuous signing.

Frames are pooled into sliding windows, each window is recognized as a
sign, low-confidence windows and adjacent repeats are dropped, the surviving
signs are embedded through their English translations, and the sequence
embedding is classified into a caption-derived topic.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .grounding import PhonemeObservation, pool
from .kg import EntityId, KnowledgeGraph
from .nn import Network

GLOSS_THRESHOLD = 0.1
WIDTHS = (60, 30, 15)
STEPS = (15, 30)
TOPIC_HIDDEN = 100
TOPIC_EPOCHS = 50
TOPIC_KINDS = ("mlp_t", "knn_t")
SPLIT = (0.8, 0.1, 0.1)


class PipelineError(RuntimeError):
    """A failure tagged with the pipeline stage that raised it."""

    def __init__(self, stage: str, message: str) -> None:
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True)
class WindowSpec:
    width: int
    step: int

    def __post_init__(self) -> None:
        if self.width <= 0 or self.step <= 0:
            raise ValueError("window width and step must be positive")


def windows(video_length: int, spec: WindowSpec) -> list[tuple[int, int]]:
    """Half-open frame intervals; one truncated window when none fits."""
    if video_length < 1:
        raise ValueError("video must have at least one frame")
    if spec.width > video_length:
        return [(0, video_length)]
    return [(s, s + spec.width) for s in range(0, video_length - spec.width + 1, spec.step)]


# -- glossing ----------------------------------------------------------------

@dataclass
class GlossSequence:
    signs: list[tuple[EntityId, float]]
    video: str = ""

    def __len__(self) -> int:
        return len(self.signs)


def gloss_predictions(predictions: Sequence[tuple[EntityId, float]], video: str = "",
                      threshold: float = GLOSS_THRESHOLD) -> GlossSequence:
    """Drop windows at or below ``threshold``, then merge adjacent repeats keeping the most confident."""
    out: list[tuple[EntityId, float]] = []
    for sign, p in predictions:
        if p <= threshold:
            continue
        if out and out[-1][0] == sign:
            if p > out[-1][1]:
                out[-1] = (sign, p)
            continue
        out.append((sign, p))
    return GlossSequence(out, video)


def top_prediction(model, obs: PhonemeObservation) -> tuple[EntityId, float]:
    proba = model.predict_proba(obs)
    best = max(proba.values())
    return min(s for s, p in proba.items() if p == best), best


def gloss(observations: Sequence[PhonemeObservation], model, video: str = "",
          threshold: float = GLOSS_THRESHOLD) -> GlossSequence:
    """Recognize each window with ``model`` and clean the resulting sign sequence."""
    return gloss_predictions([top_prediction(model, o) for o in observations], video, threshold)


# -- embeddings --------------------------------------------------------------

def translation_weights(graph: KnowledgeGraph, sign: EntityId) -> dict[EntityId, float]:
    """p(word | sign) proportional to the number of sources asserting each translation."""
    counts = {}
    for f in graph.facts_with_head(sign):
        if f.rel_type == "translation" and f.tail.namespace == "en":
            counts[f.tail] = counts.get(f.tail, 0) + max(1, len([s for s in f.source.split(",") if s]))
    return counts


def embed_sign(
    graph: KnowledgeGraph,
    word_vectors: Mapping[str, np.ndarray],
    sign: EntityId,
    weights: Mapping[EntityId, float] | None = None,
) -> np.ndarray:
    """Translation-weighted sum of word vectors, weights renormalized to sum to 1."""
    weights = dict(weights) if weights is not None else translation_weights(graph, sign)
    if not weights:
        raise ValueError(f"{sign} has no translation")
    total = sum(weights.values())
    if not total > 0:
        raise ValueError(f"translation weights of {sign} sum to {total}")
    out = None
    for word in sorted(weights):
        if word.label not in word_vectors:
            raise KeyError(f"no word vector for {word.label!r}")
        term = np.asarray(word_vectors[word.label], dtype=float) * (weights[word] / total)
        out = term if out is None else out + term
    return out


def mean_encoder(vectors: np.ndarray, confidences: np.ndarray) -> np.ndarray:
    """Confidence-weighted mean of the sign vectors."""
    w = confidences / confidences.sum()
    return w @ vectors


Encoder = Callable[[np.ndarray, np.ndarray], np.ndarray]


def embed_sequence(vectors: Sequence[np.ndarray], confidences: Sequence[float] | None = None,
                   encoder: Encoder = mean_encoder) -> np.ndarray:
    if not len(vectors):
        raise ValueError("cannot embed an empty gloss sequence")
    V = np.stack([np.asarray(v, dtype=float) for v in vectors])
    c = np.ones(len(V)) if confidences is None else np.asarray(confidences, dtype=float)
    out = encoder(V, c)
    if not np.all(np.isfinite(out)):
        raise ValueError("sequence embedding is not finite")
    return out


# -- topic classifiers -------------------------------------------------------

@dataclass
class TopicClassifier:
    kind: str
    classes: list
    network: Network | None = None
    points: np.ndarray | None = None
    point_labels: np.ndarray | None = None
    k: int = 5

    def predict_proba(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == "mlp_t":
            return self.network.predict_proba(X)
        out = np.zeros((len(X), len(self.classes)))
        for r, x in enumerate(X):
            d = np.linalg.norm(self.points - x, axis=1)
            near = np.argsort(d, kind="stable")[: self.k]
            for i in near:
                out[r, self.point_labels[i]] += 1.0 / len(near)
        return out

    def predict(self, X) -> list:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == "mlp_t":
            return [self.classes[i] for i in np.argmax(self.predict_proba(X), axis=1)]
        preds = []
        for x in X:
            d = np.linalg.norm(self.points - x, axis=1)
            near = np.argsort(d, kind="stable")[: self.k]
            votes = Counter(self.point_labels[near].tolist())
            top = max(votes.values())
            # tie: the class with the single nearest point wins
            winner = next(int(self.point_labels[i]) for i in near if votes[int(self.point_labels[i])] == top)
            preds.append(self.classes[winner])
        return preds


def topic_train(
    embeddings,
    labels: Sequence,
    kind: str = "mlp_t",
    seed: int = 0,
    k: int = 5,
    epochs: int = TOPIC_EPOCHS,
    hidden: int = TOPIC_HIDDEN,
    lr: float = 1e-3,
    batch_size: int = 32,
) -> TopicClassifier:
    if kind not in TOPIC_KINDS:
        raise ValueError(f"kind must be one of {TOPIC_KINDS}")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ValueError("topic training needs at least two classes")
    X = np.asarray(embeddings, dtype=float)
    y = np.array([classes.index(t) for t in labels])
    if kind == "knn_t":
        return TopicClassifier(kind, classes, points=X, point_labels=y, k=k)
    rng = np.random.default_rng(seed)
    net = Network.build(X.shape[1], (hidden,), len(classes), rng)
    net.fit(X, y, epochs, rng, batch_size=batch_size, lr=lr)
    return TopicClassifier(kind, classes, network=net)


def baselines(labels: Sequence) -> tuple[float, float]:
    """(random-guess accuracy, majority-class accuracy)."""
    if not labels:
        raise ValueError("no labels")
    counts = Counter(labels)
    return 1.0 / len(counts), max(counts.values()) / len(labels)


def accuracy(predicted: Sequence, gold: Sequence) -> float:
    if not gold:
        raise ValueError("empty evaluation set")
    return sum(p == g for p, g in zip(predicted, gold)) / len(gold)


def split_videos(videos: Sequence[str], seed: int = 0, fractions=SPLIT) -> tuple[list[str], list[str], list[str]]:
    """Seeded train/validation/test split by video."""
    names = sorted(videos)
    order = np.random.default_rng(seed).permutation(len(names))
    n_train = int(round(fractions[0] * len(names)))
    n_val = int(round(fractions[1] * len(names)))
    picked = [names[i] for i in order]
    return picked[:n_train], picked[n_train:n_train + n_val], picked[n_train + n_val:]


# -- end to end --------------------------------------------------------------

@dataclass
class PipelineResult:
    video: str
    sequence: GlossSequence
    embedding: np.ndarray
    prediction: object = None
    trace: list[tuple[str, str, str]] = field(default_factory=list)  # (stage, key, value)


def window_observations(frames: Sequence[PhonemeObservation], spec: WindowSpec, video: str) -> list[PhonemeObservation]:
    return [pool(list(frames[a:b]), f"{video}[{a}:{b})") for a, b in windows(len(frames), spec)]


def run_video(
    video: str,
    frames: Sequence[PhonemeObservation],
    isr_model,
    graph: KnowledgeGraph,
    word_vectors: Mapping[str, np.ndarray],
    spec: WindowSpec,
    classifier: TopicClassifier | None = None,
    encoder: Encoder = mean_encoder,
    threshold: float = GLOSS_THRESHOLD,
) -> PipelineResult:
    """windows -> gloss -> embed -> classify for one video, recording a trace."""
    trace: list[tuple[str, str, str]] = []
    try:
        obs = window_observations(frames, spec, video)
    except Exception as exc:
        raise PipelineError("windows", str(exc)) from exc
    trace.append(("windows", "count", str(len(obs))))
    try:
        preds = [top_prediction(isr_model, o) for o in obs]
    except Exception as exc:
        raise PipelineError("gloss", str(exc)) from exc
    kept = sum(p > threshold for _, p in preds)
    trace.append(("gloss", "windows_kept", str(kept)))
    seq = gloss_predictions(preds, video, threshold)
    if not seq.signs:
        raise PipelineError("gloss", f"empty gloss for {video}: no window has p(sign) > {threshold}")
    trace.append(("gloss", "signs", " ".join(str(s) for s, _ in seq.signs)))
    trace.append(("gloss", "confidences", " ".join(f"{p:.6f}" for _, p in seq.signs)))
    try:
        vecs = [embed_sign(graph, word_vectors, s) for s, _ in seq.signs]
        emb = embed_sequence(vecs, [p for _, p in seq.signs], encoder)
    except Exception as exc:
        raise PipelineError("embed", str(exc)) from exc
    trace.append(("embed", "dim", str(len(emb))))
    result = PipelineResult(video, seq, emb, trace=trace)
    if classifier is not None:
        try:
            result.prediction = classifier.predict(emb[None, :])[0]
        except Exception as exc:
            raise PipelineError("classify", str(exc)) from exc
        trace.append(("classify", "topic", str(result.prediction)))
    return result


def run_pipeline(
    videos: Mapping[str, Sequence[PhonemeObservation]],
    isr_model,
    graph: KnowledgeGraph,
    word_vectors: Mapping[str, np.ndarray],
    labels: Mapping[str, object],
    spec: WindowSpec = WindowSpec(60, 30),
    kind: str = "mlp_t",
    seed: int = 0,
    k: int = 5,
    encoder: Encoder = mean_encoder,
) -> dict:
    """Train a topic classifier on the training split and score the test split.

    Returns accuracy, both baselines (from the test labels), and the
    per-video results of the test split.
    """
    train, val, test = split_videos(list(videos), seed)
    if not test:
        raise PipelineError("split", "no test videos")
    train = train + val  # no hyperparameters are tuned, so validation joins training
    runs = {v: run_video(v, videos[v], isr_model, graph, word_vectors, spec, encoder=encoder) for v in sorted(videos)}
    try:
        clf = topic_train([runs[v].embedding for v in train], [labels[v] for v in train], kind, seed, k)
    except Exception as exc:
        raise PipelineError("classify", str(exc)) from exc
    for v in test:
        runs[v].prediction = clf.predict(runs[v].embedding[None, :])[0]
        runs[v].trace.append(("classify", "topic", str(runs[v].prediction)))
    gold = [labels[v] for v in test]
    rand, major = baselines(gold)
    return {
        "accuracy": accuracy([runs[v].prediction for v in test], gold),
        "random": rand,
        "majority": major,
        "train": train,
        "test": test,
        "results": [runs[v] for v in test],
        "classifier": clf,
    }


def write_report(results: Sequence[PipelineResult], path: str | Path) -> None:
    """Machine-readable (video, stage, key, value) rows."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("video\tstage\tkey\tvalue\n")
        for r in results:
            for stage, key, value in r.trace:
                fh.write(f"{r.video}\t{stage}\t{key}\t{value}\n")


def format_report(results: Sequence[PipelineResult]) -> str:
    lines = []
    for r in results:
        glosses = ", ".join(f"{s.label} ({p:.2f})" for s, p in r.sequence.signs)
        lines.append(f"{r.video}: {glosses} -> {r.prediction}")
    return "\n".join(lines) + ("\n" if lines else "")


# -- files -------------------------------------------------------------------

def load_captions(path: str | Path, lemmatizer: Callable[[str], str] | None = None) -> dict[str, list[str]]:
    """``video_id<TAB>lemma lemma ...`` per line."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            vid, sep, text = line.rstrip("\n").partition("\t")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected video_id<TAB>tokens")
            tokens = text.split()
            out[vid] = [lemmatizer(t) for t in tokens] if lemmatizer else tokens
    return out


def save_captions(captions: Mapping[str, Sequence[str]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for vid in sorted(captions):
            fh.write(f"{vid}\t{' '.join(captions[vid])}\n")


def load_word_vectors(path: str | Path) -> dict[str, np.ndarray]:
    """``word<TAB>v1 v2 ... vd`` per line; every vector must have the same length."""
    out: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            word, _, values = line.rstrip("\n").partition("\t")
            vec = np.array([float(x) for x in values.split()])
            if dim is None:
                dim = len(vec)
            if len(vec) != dim or not dim:
                raise ValueError(f"{path}:{lineno}: vector length {len(vec)}, expected {dim}")
            out[word] = vec
    return out


def save_word_vectors(vectors: Mapping[str, np.ndarray], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for word in sorted(vectors):
            fh.write(word + "\t" + " ".join(f"{x:.9g}" for x in vectors[word]) + "\n")


def lemmatize(token: str) -> str:
    """Lowercase and strip common English plural and verb endings."""
    t = token.lower()
    for suffix, repl, min_stem in (("ies", "y", 2), ("sses", "ss", 1), ("ing", "", 3), ("ed", "", 3), ("es", "", 3), ("s", "", 3)):
        if t.endswith(suffix) and len(t) - len(suffix) >= min_stem:
            if suffix == "s" and t.endswith("ss"):
                continue
            if suffix == "es" and not t[:-2].endswith(("s", "x", "z", "ch", "sh")):
                continue  # makes -> make via the plain "s" rule
            stem = t[: len(t) - len(suffix)] + repl
            if suffix in ("ing", "ed") and len(stem) > 2 and stem[-1] == stem[-2] and stem[-1] not in "lsz":
                stem = stem[:-1]  # running -> run
            return stem
    return t
