"""Small numpy MLP with manual backprop and Adam.

Inputs are either token indices looked up in an embedding table and
concatenated (``concat``), indicator rows multiplied into an embedding
table (``bag``), or plain dense vectors (``dense``). Outputs are a single
softmax, independent sigmoids, or one softmax per group of columns.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numpy as np

from .embeddings import read_sections, write_section

INPUT_MODES = ("concat", "bag", "dense")
HEADS = ("softmax", "sigmoid", "grouped")


def relu(x):
    return np.maximum(x, 0.0)


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class Network:
    params: dict[str, np.ndarray]
    input_mode: str
    head: str
    n_layers: int
    groups: list[tuple[int, int]] = field(default_factory=list)
    # Adam state
    _m: dict = field(default_factory=dict, repr=False)
    _v: dict = field(default_factory=dict, repr=False)
    _t: int = 0

    @classmethod
    def build(
        cls,
        n_in: int,
        hidden: Sequence[int],
        n_out: int,
        rng: np.random.Generator,
        input_mode: str = "dense",
        head: str = "softmax",
        embedding: np.ndarray | None = None,
        n_slots: int = 1,
        groups: Sequence[tuple[int, int]] = (),
    ) -> "Network":
        """``n_in`` is the token count for embedding inputs, else the input width."""
        if input_mode not in INPUT_MODES or head not in HEADS:
            raise ValueError(f"bad input mode {input_mode!r} or head {head!r}")
        params: dict[str, np.ndarray] = {}
        if input_mode == "dense":
            width = n_in
        else:
            if embedding is None:
                raise ValueError("embedding inputs need an initial table")
            if embedding.shape[0] != n_in:
                raise ValueError(f"embedding has {embedding.shape[0]} rows, expected {n_in}")
            params["embed"] = np.array(embedding, dtype=float)
            width = embedding.shape[1] * (n_slots if input_mode == "concat" else 1)
        sizes = [width, *hidden, n_out]
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            limit = np.sqrt(6.0 / (a + b)) if last else np.sqrt(6.0 / a)
            params[f"W{i}"] = rng.uniform(-limit, limit, size=(a, b))
            params[f"b{i}"] = np.zeros(b)
        if head == "grouped":
            if not groups or sum(size for _, size in groups) != n_out:
                raise ValueError("grouped head needs (offset, size) groups covering the output")
        return cls(params, input_mode, head, len(sizes) - 1, list(groups))

    # -- forward / backward ------------------------------------------
    def _embed(self, X):
        if self.input_mode == "concat":
            emb = self.params["embed"][X]
            return emb.reshape(len(X), -1)
        if self.input_mode == "bag":
            return np.asarray(X, dtype=float) @ self.params["embed"]
        return np.asarray(X, dtype=float)

    def forward(self, X):
        acts = [self._embed(X)]
        for i in range(self.n_layers):
            z = acts[-1] @ self.params[f"W{i}"] + self.params[f"b{i}"]
            acts.append(relu(z) if i < self.n_layers - 1 else z)
        return acts

    def logits(self, X) -> np.ndarray:
        return self.forward(X)[-1]

    def predict_proba(self, X) -> np.ndarray:
        z = self.logits(X)
        if self.head == "softmax":
            return softmax(z)
        if self.head == "sigmoid":
            return sigmoid(z)
        out = np.empty_like(z)
        for off, size in self.groups:
            out[:, off:off + size] = softmax(z[:, off:off + size])
        return out

    def loss_and_grads(self, X, y) -> tuple[float, dict[str, np.ndarray]]:
        """Mean loss over the batch and its gradient for every parameter.

        ``y`` holds class indices (softmax), 0/1 targets (sigmoid), or one
        class index per group (grouped, -1 for a missing label).
        """
        acts = self.forward(X)
        z = acts[-1]
        n = len(z)
        if self.head == "softmax":
            p = softmax(z)
            y = np.asarray(y, dtype=int)
            loss = -np.mean(np.log(p[np.arange(n), y] + 1e-300))
            dz = p
            dz[np.arange(n), y] -= 1.0
        elif self.head == "sigmoid":
            y = np.asarray(y, dtype=float)
            # stable binary cross-entropy from logits
            loss = np.mean(np.sum(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z))), axis=1))
            dz = sigmoid(z) - y
        else:
            y = np.asarray(y, dtype=int)
            loss = 0.0
            dz = np.empty_like(z)
            for g, (off, size) in enumerate(self.groups):
                # negative targets mark missing labels and contribute nothing
                rows = np.flatnonzero(y[:, g] >= 0)
                p = softmax(z[:, off:off + size])
                loss -= np.sum(np.log(p[rows, y[rows, g]] + 1e-300)) / n
                p[rows, y[rows, g]] -= 1.0
                mask = np.zeros((n, 1))
                mask[rows] = 1.0
                dz[:, off:off + size] = p * mask
        dz = dz / n

        grads: dict[str, np.ndarray] = {}
        for i in reversed(range(self.n_layers)):
            grads[f"W{i}"] = acts[i].T @ dz
            grads[f"b{i}"] = dz.sum(axis=0)
            da = dz @ self.params[f"W{i}"].T
            if i > 0:
                dz = da * (acts[i] > 0)
        if self.input_mode == "concat":
            d = self.params["embed"].shape[1]
            g = np.zeros_like(self.params["embed"])
            np.add.at(g, np.asarray(X), da.reshape(n, -1, d))
            grads["embed"] = g
        elif self.input_mode == "bag":
            grads["embed"] = np.asarray(X, dtype=float).T @ da
        return float(loss), grads

    # -- training ----------------------------------------------------
    def adam_step(self, grads, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> None:
        self._t += 1
        for name, g in grads.items():
            m = self._m.setdefault(name, np.zeros_like(g))
            v = self._v.setdefault(name, np.zeros_like(g))
            m *= beta1
            m += (1 - beta1) * g
            v *= beta2
            v += (1 - beta2) * g * g
            mhat = m / (1 - beta1 ** self._t)
            vhat = v / (1 - beta2 ** self._t)
            self.params[name] -= lr * mhat / (np.sqrt(vhat) + eps)

    def fit(self, X, y, epochs: int, rng: np.random.Generator, batch_size: int = 32, lr: float = 1e-3) -> list[float]:
        X = np.asarray(X)
        y = np.asarray(y)
        history = []
        for _ in range(epochs):
            order = rng.permutation(len(X))
            total = 0.0
            for start in range(0, len(order), batch_size):
                idx = order[start:start + batch_size]
                loss, grads = self.loss_and_grads(X[idx], y[idx])
                if not np.isfinite(loss):
                    raise FloatingPointError("non-finite training loss; lower the learning rate")
                self.adam_step(grads, lr=lr)
                total += loss * len(idx)
            history.append(total / len(X))
        return history

    # -- files -------------------------------------------------------
    def write(self, fh: TextIO) -> None:
        arch = {"input": self.input_mode, "head": self.head, "layers": self.n_layers,
                "groups": ",".join(f"{o}+{s}" for o, s in self.groups) or "-"}
        first = True
        for name, value in self.params.items():
            mat = np.atleast_2d(value) if value.ndim == 1 else value
            header = {"dim": mat.shape[1], "layer": name, "rows": mat.shape[0]}
            if first:
                header.update(arch)
                first = False
            write_section(fh, header, [("param", str(i), row) for i, row in enumerate(mat)])

    @classmethod
    def from_sections(cls, sections) -> "Network":
        params = {}
        arch = None
        for header, rows in sections:
            if "layer" not in header:
                continue
            if arch is None:
                arch = header
            mat = np.stack([vec for _, _, vec in rows])
            name = header["layer"]
            params[name] = mat[0] if name.startswith("b") else mat
        groups = []
        if arch["groups"] != "-":
            groups = [tuple(int(x) for x in item.split("+")) for item in arch["groups"].split(",")]
        return cls(params, arch["input"], arch["head"], int(arch["layers"]), groups)

    @classmethod
    def read(cls, path) -> "Network":
        return cls.from_sections(read_sections(path))
