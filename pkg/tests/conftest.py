from __future__ import annotations

import numpy as np
import pytest
from hypothesis import strategies as st

from speclab.models import ModelPair, ScriptedModel, Vocab

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def peaked(size: int, index: int, mass: float = 0.7) -> list[float]:
    """``mass`` on one token, the rest spread evenly."""
    rest = (1.0 - mass) / (size - 1)
    return [mass if i == index else rest for i in range(size)]


CYCLE_VOCAB = Vocab(("</s>", "a", "b", "c", "d"), "</s>")
A, B, C, D = 1, 2, 3, 4


def cycle_pair(draft_after_c: int = A) -> ModelPair:
    """Target cycles a->b->c->d->a. The draft agrees except after 'c', so a
    continuation of 'd' matches 3 tokens, misses 1, and repeats."""
    V = len(CYCLE_VOCAB)
    nxt = {A: B, B: C, C: D, D: A}
    target = ScriptedModel(CYCLE_VOCAB, {(k,): peaked(V, v) for k, v in nxt.items()})
    dnxt = dict(nxt)
    dnxt[C] = draft_after_c
    draft = ScriptedModel(CYCLE_VOCAB, {(k,): peaked(V, v) for k, v in dnxt.items()})
    return ModelPair(target, draft)


@pytest.fixture
def cyc_pair() -> ModelPair:
    return cycle_pair()


def random_scripted_pair(seed: int, n_tokens: int = 6, disagree: float = 0.3,
                         with_eos: bool = False) -> ModelPair:
    """Two-token-context tables with random peaked target rows; the draft
    copies the target except on a random subset of contexts, where its
    argmax moves elsewhere."""
    rng = np.random.default_rng(seed)
    toks = tuple("abcdefghij"[:n_tokens])
    vocab = Vocab(("</s>", *toks), "</s>") if with_eos else Vocab(toks)
    V = len(vocab)
    first = 1 if with_eos else 0
    t_table, d_table = {}, {}
    for x in range(V):
        for y in range(V):
            row = rng.dirichlet(np.full(V, 0.3))
            if with_eos:
                row[0] *= 0.05
                row /= row.sum()
            t_table[(x, y)] = row
            if rng.random() < disagree:
                drow = rng.dirichlet(np.full(V, 0.3))
                best = int(np.argmax(row))
                alt = (best + 1 + rng.integers(V - 1 - first)) % V
                alt = max(alt, first)
                if alt == best:
                    alt = first if best != first else first + 1
                drow[alt] = drow.max() + 0.5
                d_table[(x, y)] = drow / drow.sum()
            else:
                d_table[(x, y)] = row
    return ModelPair(ScriptedModel(vocab, t_table), ScriptedModel(vocab, d_table))


@st.composite
def prob_dists(draw, size: int | None = None, min_size: int = 1, max_size: int = 12):
    n = size if size is not None else draw(st.integers(min_size, max_size))
    w = draw(st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=n, max_size=n))
    if sum(w) <= 1e-6:
        w = [1.0] + [0.0] * (n - 1)
    arr = np.asarray(w) / sum(w)
    return arr
