from __future__ import annotations

import numpy as np
import pytest

from kgns.kg import EntityId, KnowledgeGraph
from kgns.phonology import DEFAULT_FEATURE_TYPES

# acceptance outcomes, printed as a block at the end of the session
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


def sign(label: str) -> EntityId:
    return EntityId("asl", label)


def ph(label: str) -> EntityId:
    return EntityId("phoneme", label)


def toy_lexicon(n_signs: int = 10, seed: int = 0, values: int = 3) -> KnowledgeGraph:
    """Signs with random but pairwise distinct 16-feature phonology."""
    rng = np.random.default_rng(seed)
    g = KnowledgeGraph()
    seen = set()
    while len(seen) < n_signs:
        key = tuple(int(x) for x in rng.integers(values, size=len(DEFAULT_FEATURE_TYPES)))
        if key in seen:
            continue
        s = sign(f"s{len(seen):02d}")
        seen.add(key)
        for ft, j in zip(DEFAULT_FEATURE_TYPES, key):
            g.add(s, ft, ph(f"{ft}_{j}"), "phonological", "toy")
    return g


@pytest.fixture
def lexicon_graph() -> KnowledgeGraph:
    return toy_lexicon()
