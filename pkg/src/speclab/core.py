"""Probability distributions over a token vocabulary and the scalar
functions the rest of the package is built from."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

SUM_TOLERANCE = 1e-9
RENORMALIZE_TOLERANCE = 1e-6
DEFAULT_TOP_K = 10


class ProbDist:
    """Immutable probability vector, one entry per vocabulary token.

    Inputs whose sum is within 1e-6 of one are renormalized; anything further
    off (or with a negative / non-finite entry) is rejected.
    """

    def __init__(self, probs: Sequence[float] | np.ndarray):
        arr = np.array(probs, dtype=np.float64).reshape(-1)
        if arr.size == 0:
            raise ValueError("empty distribution")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0.0):
            raise ValueError("distribution entries must be finite and non-negative")
        total = float(arr.sum())
        if abs(total - 1.0) > RENORMALIZE_TOLERANCE:
            raise ValueError(f"distribution sums to {total!r}, not 1")
        if total != 1.0:
            arr = arr / total
        arr.flags.writeable = False
        self.probs = arr

    def __len__(self) -> int:
        return self.probs.shape[0]

    def __getitem__(self, token: int) -> float:
        return float(self.probs[token])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ProbDist):
            return NotImplemented
        return np.array_equal(self.probs, other.probs)

    def __hash__(self) -> int:
        return hash(self.probs.tobytes())

    def __repr__(self) -> str:
        return f"ProbDist({np.array2string(self.probs, precision=4)})"

    @classmethod
    def one_hot(cls, index: int, size: int) -> ProbDist:
        arr = np.zeros(size)
        arr[index] = 1.0
        return cls(arr)

    @classmethod
    def uniform(cls, size: int) -> ProbDist:
        return cls(np.full(size, 1.0 / size))

    @property
    def argmax(self) -> int:
        # np.argmax returns the first maximal index: lowest-index tie-break
        return int(np.argmax(self.probs))

    # Features are cached per instance; models hand out shared instances for
    # repeated contexts, so policies and feature extraction hit the cache.
    @cached_property
    def entropy(self) -> float:
        return entropy(self)

    @cached_property
    def _sorted_desc(self) -> np.ndarray:
        return np.sort(self.probs)[::-1]

    def top_k(self, k: int) -> np.ndarray:
        return top_k(self, k)


def entropy(d: ProbDist) -> float:
    """Shannon entropy in nats, with 0 * ln 0 taken as 0."""
    p = d.probs[d.probs > 0.0]
    h = -float(np.sum(p * np.log(p)))
    return max(h, 0.0)


def top_k(d: ProbDist, k: int) -> np.ndarray:
    """The k largest probabilities, descending, zero-padded to length k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ordered = d._sorted_desc
    out = np.zeros(k)
    n = min(k, ordered.shape[0])
    out[:n] = ordered[:n]
    return out


def _check_same_vocab(p: ProbDist, q: ProbDist) -> None:
    if len(p) != len(q):
        raise ValueError(f"vocabulary mismatch: {len(p)} vs {len(q)}")


def tv_distance(p: ProbDist, q: ProbDist) -> float:
    """Total variation distance, half the L1 distance."""
    _check_same_vocab(p, q)
    return min(0.5 * float(np.abs(p.probs - q.probs).sum()), 1.0)


def residual_dist(p: ProbDist, q: ProbDist) -> ProbDist:
    """Normalized positive part of p - q: the resampling distribution used
    after a draft token is rejected."""
    _check_same_vocab(p, q)
    diff = np.maximum(p.probs - q.probs, 0.0)
    mass = float(diff.sum())
    if mass <= 0.0:
        raise ValueError("residual has zero mass (p == q); rejection was impossible")
    return ProbDist(diff / mass)


def apply_temperature(d: ProbDist, temperature: float) -> ProbDist:
    """Rescale probs by exponent 1/t and renormalize.

    Temperature 0 is the greedy path and handled by callers via argmax; here it
    returns the input unchanged, as does t == 1.
    """
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    if temperature == 0.0 or temperature == 1.0:
        return d
    with np.errstate(divide="ignore"):
        logp = np.log(d.probs) / temperature
    logp -= logp.max()
    w = np.exp(logp)
    return ProbDist(w / w.sum())


@dataclass(frozen=True)
class FeatureVector:
    """Halting-classifier input built from one draft distribution."""

    top_probs: tuple[float, ...]
    entropy_nats: float
    position: float

    def __post_init__(self):
        tp = self.top_probs
        if any(not (0.0 <= v <= 1.0) for v in tp):
            raise ValueError("top_probs entries must lie in [0, 1]")
        if any(tp[i] < tp[i + 1] for i in range(len(tp) - 1)):
            raise ValueError("top_probs must be non-increasing")
        if self.entropy_nats < 0 or self.position < 0:
            raise ValueError("entropy and position must be >= 0")

    @property
    def k(self) -> int:
        return len(self.top_probs)

    @classmethod
    def from_dist(cls, d: ProbDist, position: float, k: int = DEFAULT_TOP_K) -> FeatureVector:
        return cls(tuple(float(v) for v in top_k(d, k)), d.entropy, float(position))

    def as_array(self, position_scale: float = 1.0) -> np.ndarray:
        return np.concatenate(
            [np.asarray(self.top_probs), [self.entropy_nats, self.position / position_scale]]
        )


def max_entropy(vocab_size: int) -> float:
    return math.log(vocab_size)
