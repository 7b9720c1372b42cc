"""Latent Dirichlet allocation by collapsed Gibbs sampling with TF-IDF token weights.

Each token adds its word's (smoothed) inverse document frequency to the
count tables instead of 1, so ubiquitous words barely move topics. Weights
are rescaled to average 1 so the priors keep their usual scale.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

ALPHA = 0.1
BETA = 0.01
SWEEPS = 500
N_TOPICS = 10


class TopicError(ValueError):
    pass


@dataclass
class TopicModel:
    n_topics: int
    vocab: list[str]
    topic_word: np.ndarray  # (K, V), rows sum to 1
    doc_topic: np.ndarray  # (D, K), rows sum to 1
    documents: list[str]
    weights: np.ndarray | None = None  # per-word token weight
    alpha: float = ALPHA
    assigned: dict[str, int] | None = None

    @property
    def labels(self) -> dict[str, int]:
        """Most probable topic of every training document."""
        return dict(self.assigned or {})

    def infer(self, tokens: Sequence[str], iterations: int = 50) -> np.ndarray:
        """Topic mixture of a document under the fixed topics (EM from a uniform start).

        Unknown words are ignored; a document with none gets the uniform mixture.
        """
        index = {w: i for i, w in enumerate(self.vocab)}
        ws = np.array([index[w] for w in tokens if w in index], dtype=np.int64)
        theta = np.full(self.n_topics, 1.0 / self.n_topics)
        if not len(ws):
            return theta
        c = self.weights[ws] if self.weights is not None else np.ones(len(ws))
        phi = self.topic_word[:, ws]  # (K, n)
        for _ in range(iterations):
            r = theta[:, None] * phi
            r /= r.sum(axis=0, keepdims=True)
            theta = (r @ c + self.alpha) / (c.sum() + self.n_topics * self.alpha)
        return theta

    def label(self, tokens: Sequence[str]) -> int:
        return int(np.argmax(self.infer(tokens)))

    def top_words(self, topic: int, n: int = 10) -> list[str]:
        order = np.argsort(-self.topic_word[topic], kind="stable")[:n]
        return [self.vocab[i] for i in order]


def idf_weights(docs: Sequence[Sequence[str]], vocab: Sequence[str]) -> np.ndarray:
    """Smoothed idf, log((1 + D) / (1 + df)) + 1, rescaled to mean 1 over tokens."""
    index = {w: i for i, w in enumerate(vocab)}
    df = np.zeros(len(vocab))
    for doc in docs:
        for w in set(doc):
            df[index[w]] += 1
    idf = np.log((1 + len(docs)) / (1 + df)) + 1.0
    tokens = np.array([index[w] for doc in docs for w in doc], dtype=np.int64)
    return idf / idf[tokens].mean() if len(tokens) else idf


def generate_topics(
    captions: Mapping[str, Sequence[str]],
    n_topics: int = N_TOPICS,
    seed: int = 0,
    sweeps: int = SWEEPS,
    alpha: float = ALPHA,
    beta: float = BETA,
    tfidf: bool = True,
    callback: Callable[[int, np.ndarray, np.ndarray], None] | None = None,
) -> TopicModel:
    """Fit LDA to lemma-token documents and label each by its most probable topic.

    ``callback(sweep, topic_word, doc_topic)`` runs after every sweep.
    """
    names = sorted(captions)
    docs = [list(captions[n]) for n in names]
    if len(docs) < n_topics:
        raise TopicError(f"{len(docs)} documents cannot support {n_topics} topics")
    if sweeps < 1:
        raise TopicError("need at least one Gibbs sweep")
    vocab = sorted({w for doc in docs for w in doc})
    if not vocab:
        raise TopicError("all documents are empty")
    index = {w: i for i, w in enumerate(vocab)}
    V, K = len(vocab), n_topics
    weight = idf_weights(docs, vocab) if tfidf else np.ones(V)

    rng = np.random.default_rng(seed)
    words = [np.array([index[w] for w in doc], dtype=np.int64) for doc in docs]
    assign = [rng.integers(K, size=len(w)) for w in words]
    nd = np.zeros((len(docs), K))
    nw = np.zeros((K, V))
    for d, (ws, zs) in enumerate(zip(words, assign)):
        np.add.at(nd[d], zs, weight[ws])
        np.add.at(nw, (zs, ws), weight[ws])
    nk = nw.sum(axis=1)

    for sweep in range(sweeps):
        uniforms = rng.random(sum(len(w) for w in words))
        u = 0
        for d, (ws, zs) in enumerate(zip(words, assign)):
            for i, w in enumerate(ws):
                k, c = zs[i], weight[w]
                nd[d, k] -= c
                nw[k, w] -= c
                nk[k] -= c
                p = (nd[d] + alpha) * (nw[:, w] + beta) / (nk + V * beta)
                cdf = np.cumsum(p)
                k = min(int(np.searchsorted(cdf, uniforms[u] * cdf[-1], side="right")), K - 1)
                u += 1
                zs[i] = k
                nd[d, k] += c
                nw[k, w] += c
                nk[k] += c
        if callback is not None:
            callback(sweep, *_distributions(nd, nw, alpha, beta))
    topic_word, doc_topic = _distributions(nd, nw, alpha, beta)
    model = TopicModel(K, vocab, topic_word, doc_topic, names, weight, alpha)
    # label by re-inference so identical captions always share a label
    model.assigned = {n: model.label(doc) for n, doc in zip(names, docs)}
    return model


def _distributions(nd, nw, alpha, beta):
    # clip the tiny negatives float subtraction can leave behind
    nw = np.maximum(nw, 0.0)
    nd = np.maximum(nd, 0.0)
    topic_word = (nw + beta) / (nw + beta).sum(axis=1, keepdims=True)
    doc_topic = (nd + alpha) / (nd + alpha).sum(axis=1, keepdims=True)
    return topic_word, doc_topic
