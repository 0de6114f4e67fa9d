"""Speculation-lookahead policies.

A policy is asked after every drafted token whether the draft model should
keep going. The engine drafts the first token of each iteration
unconditionally and enforces ``sl_max`` itself.
"""

from __future__ import annotations

import math

import numpy as np

from .classifier import FfnParams, ffn_forward_array
from .core import DEFAULT_TOP_K, top_k
from .engine import DraftObservation, SpeculationPolicy, oracle_generate  # noqa: F401

POSITION_MODES = ("iteration", "global")


class StaticPolicy:
    """Same lookahead every iteration."""

    def __init__(self, gamma: int):
        if gamma < 1:
            raise ValueError("gamma must be >= 1")
        self.gamma = gamma

    def begin_iteration(self) -> None:
        pass

    def should_continue(self, obs: DraftObservation) -> bool:
        return obs.position_in_iteration < self.gamma

    def end_iteration(self, accepted: int, sl_used: int) -> None:
        pass


class HeuristicPolicy:
    """Grow the lookahead after a fully accepted round, shrink it otherwise."""

    def __init__(self, init: int = 5, step_up: int = 2, step_down: int = 1, min_sl: int = 1):
        if not init >= min_sl >= 1:
            raise ValueError("need init >= min_sl >= 1")
        self.gamma = init
        self.step_up = step_up
        self.step_down = step_down
        self.min_sl = min_sl

    def begin_iteration(self) -> None:
        pass

    def should_continue(self, obs: DraftObservation) -> bool:
        return obs.position_in_iteration < self.gamma

    def end_iteration(self, accepted: int, sl_used: int) -> None:
        if accepted == sl_used:
            self.gamma += self.step_up
        else:
            self.gamma = max(self.min_sl, self.gamma - self.step_down)


class PerplexityPolicy:
    """Halt once the perplexity of this round's drafted tokens exceeds a threshold."""

    def __init__(self, tau_ppl: float):
        if not tau_ppl > 1:
            raise ValueError("tau_ppl must be > 1")
        self.tau_ppl = tau_ppl
        self._nll = 0.0
        self._n = 0

    @property
    def perplexity(self) -> float:
        return math.exp(self._nll / self._n) if self._n else 1.0

    def begin_iteration(self) -> None:
        self._nll = 0.0
        self._n = 0

    def should_continue(self, obs: DraftObservation) -> bool:
        p = obs.drafted_token_prob
        self._n += 1
        if p <= 0.0:
            self._nll = math.inf
            return False
        self._nll -= math.log(p)
        return self.perplexity <= self.tau_ppl

    def end_iteration(self, accepted: int, sl_used: int) -> None:
        pass


class DiscoPolicy:
    """Classifier-driven halting: continue while the predicted acceptance
    confidence of the token just drafted stays at or above ``tau``."""

    def __init__(self, classifier: FfnParams, tau: float, sl_max: int,
                 k: int = DEFAULT_TOP_K, position_mode: str = "iteration"):
        if classifier.input_dim != k + 2:
            raise ValueError(f"classifier expects {classifier.input_dim} inputs, features give {k + 2}")
        if position_mode not in POSITION_MODES:
            raise ValueError(f"position_mode must be one of {POSITION_MODES}")
        if sl_max < 1:
            raise ValueError("sl_max must be >= 1")
        self.classifier = classifier
        self.tau = tau
        self.sl_max = sl_max
        self.k = k
        self.position_mode = position_mode
        self.last_confidence: float | None = None

    def begin_iteration(self) -> None:
        pass

    def confidence(self, obs: DraftObservation) -> float:
        pos = (obs.position_in_iteration if self.position_mode == "iteration"
               else obs.global_position)
        d = obs.draft_dist
        x = np.empty(self.k + 2)
        x[: self.k] = top_k(d, self.k)
        x[self.k] = d.entropy
        x[self.k + 1] = pos / self.classifier.position_scale
        return ffn_forward_array(self.classifier, x)

    def should_continue(self, obs: DraftObservation) -> bool:
        if obs.position_in_iteration >= self.sl_max:
            self.last_confidence = None
            return False
        self.last_confidence = self.confidence(obs)
        return self.last_confidence >= self.tau

    def end_iteration(self, accepted: int, sl_used: int) -> None:
        pass


def static_policy(gamma: int) -> StaticPolicy:
    return StaticPolicy(gamma)


def heuristic_policy(init: int = 5, step_up: int = 2, step_down: int = 1,
                     min_sl: int = 1) -> HeuristicPolicy:
    return HeuristicPolicy(init, step_up, step_down, min_sl)


def perplexity_policy(tau_ppl: float) -> PerplexityPolicy:
    return PerplexityPolicy(tau_ppl)


def disco_policy(classifier: FfnParams, tau: float, sl_max: int, k: int = DEFAULT_TOP_K,
                 position_mode: str = "iteration") -> DiscoPolicy:
    return DiscoPolicy(classifier, tau, sl_max, k, position_mode)
