"""Toy language models used as target and draft.

Both model kinds expose ``vocab`` and ``next_dist(context)``; that is the whole
"forward pass" interface the decoding engine relies on.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .core import ProbDist, apply_temperature

MODEL_FORMAT_VERSION = 1
BOS = -1  # context padding only; never emitted
EOS_MARKER = "</s>"


class LanguageModel(Protocol):
    vocab: Vocab

    def next_dist(self, context: Sequence[int]) -> ProbDist: ...


@dataclass(frozen=True)
class Vocab:
    """Ordered token list. Tokens are single characters plus an optional
    end-of-sequence marker, which always sits at index 0 when present."""

    tokens: tuple[str, ...]
    eos: str | None = None

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate vocabulary tokens")
        if self.eos is not None and self.eos not in self.tokens:
            raise ValueError("eos marker missing from tokens")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @classmethod
    def from_texts(cls, texts: Iterable[str], eos: bool = True) -> Vocab:
        chars = sorted({ch for text in texts for ch in text})
        if eos:
            return cls((EOS_MARKER, *chars), EOS_MARKER)
        return cls(tuple(chars))

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def eos_id(self) -> int | None:
        return None if self.eos is None else self._index[self.eos]

    def encode(self, text: str, skip_unknown: bool = False) -> list[int]:
        if skip_unknown:
            return [self._index[ch] for ch in text if ch in self._index]
        try:
            return [self._index[ch] for ch in text]
        except KeyError as exc:
            raise KeyError(f"character {exc.args[0]!r} not in vocabulary") from None

    def decode(self, ids: Iterable[int], strip_eos: bool = True) -> str:
        eos_id = self.eos_id
        return "".join(self.tokens[i] for i in ids if not (strip_eos and i == eos_id))

    def to_json(self) -> dict:
        return {"tokens": list(self.tokens), "eos": self.eos}

    @classmethod
    def from_json(cls, obj: Mapping) -> Vocab:
        return cls(tuple(obj["tokens"]), obj.get("eos"))


class NGramModel:
    """Laplace-smoothed character n-gram model with stupid backoff.

    Counts are kept for every context length 0..order-1 so an unseen context
    can back off to shorter ones, ending at the smoothed unigram.
    """

    def __init__(self, order: int, vocab: Vocab, alpha: float,
                 counts: Mapping[tuple[int, ...], Mapping[int, int]]):
        if order < 1:
            raise ValueError("order must be >= 1")
        if alpha <= 0:
            raise ValueError("alpha must be > 0")
        self.order = order
        self.vocab = vocab
        self.alpha = float(alpha)
        self.counts = {ctx: dict(c) for ctx, c in counts.items()}
        self._cache: dict[tuple[int, ...], ProbDist] = {}

    def _dist_for(self, ctx: tuple[int, ...]) -> ProbDist:
        V = len(self.vocab)
        # stupid backoff: drop the oldest token until the context was seen
        while ctx and ctx not in self.counts:
            ctx = ctx[1:]
        arr = np.full(V, self.alpha)
        for tok, n in self.counts.get(ctx, {}).items():
            arr[tok] += n
        return ProbDist(arr / arr.sum())

    def next_dist(self, context: Sequence[int]) -> ProbDist:
        n = self.order - 1
        if n == 0:
            key: tuple[int, ...] = ()
        else:
            tail = tuple(context[-n:])
            key = (BOS,) * (n - len(tail)) + tail
        d = self._cache.get(key)
        if d is None:
            d = self._cache[key] = self._dist_for(key)
        return d

    def to_json(self) -> dict:
        return {
            "kind": "ngram",
            "format_version": MODEL_FORMAT_VERSION,
            "order": self.order,
            "alpha": self.alpha,
            "vocab": self.vocab.to_json(),
            "counts": [
                [list(ctx), [[t, c] for t, c in sorted(cnt.items())]]
                for ctx, cnt in sorted(self.counts.items())
            ],
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> NGramModel:
        counts = {tuple(ctx): {int(t): int(c) for t, c in cnt} for ctx, cnt in obj["counts"]}
        return cls(obj["order"], Vocab.from_json(obj["vocab"]), obj["alpha"], counts)


def train_ngram(corpus: Sequence[str | Sequence[int]], order: int, alpha: float,
                vocab: Vocab | None = None) -> NGramModel:
    """Count every (context, next token) pair in the corpus.

    Items may be strings (encoded with ``vocab``) or pre-encoded id lists.
    When the vocabulary has an end marker it is appended to every sequence.
    """
    if not corpus:
        raise ValueError("empty corpus")
    if vocab is None:
        vocab = Vocab.from_texts([s for s in corpus if isinstance(s, str)])
    counts: dict[tuple[int, ...], dict[int, int]] = defaultdict(lambda: defaultdict(int))
    n = order - 1
    eos_id = vocab.eos_id
    for item in corpus:
        ids = vocab.encode(item) if isinstance(item, str) else list(item)
        if eos_id is not None:
            ids.append(eos_id)
        padded = [BOS] * n + ids
        for i in range(n, len(padded)):
            tok = padded[i]
            for j in range(n + 1):
                counts[tuple(padded[i - j:i])][tok] += 1
    return NGramModel(order, vocab, alpha, counts)


class ScriptedModel:
    """Model defined by an explicit table from context suffix to distribution.

    Lookup uses the longest table key that is a suffix of the context, so a
    one-token key acts like a bigram rule and the empty key like a unigram.
    """

    def __init__(self, vocab: Vocab, table: Mapping[tuple[int, ...], ProbDist | Sequence[float]],
                 default: ProbDist | Sequence[float] | None = None):
        self.vocab = vocab
        V = len(vocab)

        def _dist(d):
            d = d if isinstance(d, ProbDist) else ProbDist(d)
            if len(d) != V:
                raise ValueError(f"scripted distribution has {len(d)} entries, vocab has {V}")
            return d

        self.table = {tuple(k): _dist(v) for k, v in table.items()}
        self.default = _dist(default) if default is not None else ProbDist.uniform(V)
        self.max_key = max((len(k) for k in self.table), default=0)

    def next_dist(self, context: Sequence[int]) -> ProbDist:
        ctx = tuple(context[-self.max_key:]) if self.max_key else ()
        for start in range(len(ctx) + 1):
            d = self.table.get(ctx[start:])
            if d is not None:
                return d
        return self.default

    def to_json(self) -> dict:
        return {
            "kind": "scripted",
            "format_version": MODEL_FORMAT_VERSION,
            "vocab": self.vocab.to_json(),
            "default": self.default.probs.tolist(),
            "table": [[list(k), v.probs.tolist()] for k, v in sorted(self.table.items())],
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> ScriptedModel:
        table = {tuple(k): v for k, v in obj["table"]}
        return cls(Vocab.from_json(obj["vocab"]), table, obj["default"])


@dataclass(frozen=True)
class ModelPair:
    target: LanguageModel
    draft: LanguageModel

    def __post_init__(self):
        if self.target.vocab != self.draft.vocab:
            raise ValueError("target and draft must share one vocabulary")

    @property
    def vocab(self) -> Vocab:
        return self.target.vocab


def next_dist(model: LanguageModel, context: Sequence[int]) -> ProbDist:
    return model.next_dist(context)


def sample_from(d: ProbDist, temperature: float, rng: np.random.Generator) -> int:
    """Argmax at temperature 0, otherwise an inverse-CDF draw from the
    tempered distribution using one uniform from ``rng``."""
    if temperature == 0:
        return d.argmax
    p = apply_temperature(d, temperature).probs
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(p), u, side="right"))
    if idx >= len(p):  # u above the float-rounded total
        idx = int(np.flatnonzero(p)[-1])
    return idx


def sample_next(model: LanguageModel, context: Sequence[int], temperature: float,
                rng: np.random.Generator) -> int:
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    return sample_from(model.next_dist(context), temperature, rng)


def model_from_json(obj: Mapping) -> NGramModel | ScriptedModel:
    version = obj.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {version!r}")
    kind = obj.get("kind")
    if kind == "ngram":
        return NGramModel.from_json(obj)
    if kind == "scripted":
        return ScriptedModel.from_json(obj)
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(model: NGramModel | ScriptedModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_json(), separators=(",", ":")) + "\n",
                          encoding="utf-8")


def load_model(path: str | Path) -> NGramModel | ScriptedModel:
    return model_from_json(json.loads(Path(path).read_text(encoding="utf-8")))
