"""Speculative decoding loop with exact forward-pass accounting.

Forward passes are counted, not timed: one draft forward per drafted token and
one target forward per verification call. ``analytics`` turns the counts into
modeled latency.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .core import ProbDist, apply_temperature, residual_dist
from .models import LanguageModel, ModelPair, sample_from

TRACE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class GenerationConfig:
    max_new_tokens: int = 64
    temperature: float = 0.0
    seed: int = 0
    sl_max: int = 10

    def __post_init__(self):
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.sl_max < 1:
            raise ValueError("sl_max must be >= 1")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


@dataclass
class IterationRecord:
    """One draft-then-verify round.

    ``emitted`` holds the tokens actually appended to the output. It is
    ``accepted + 1`` long unless the run ended inside this iteration
    (``truncated``), in which case the tail past EOS / the token budget is cut.
    """

    sl_used: int
    accepted: int
    draft_forwards: int
    target_forwards: int
    emitted: list[int]
    truncated: bool = False


@dataclass
class RunTrace:
    iterations: list[IterationRecord]
    prompt_len: int
    output: list[int]

    @property
    def target_forwards(self) -> int:
        return sum(it.target_forwards for it in self.iterations)

    @property
    def draft_forwards(self) -> int:
        return sum(it.draft_forwards for it in self.iterations)

    @property
    def drafted(self) -> int:
        return sum(it.sl_used for it in self.iterations)

    @property
    def accepted(self) -> int:
        return sum(it.accepted for it in self.iterations)

    def to_records(self) -> list[dict]:
        head = {"type": "trace", "format_version": TRACE_FORMAT_VERSION,
                "prompt_len": self.prompt_len, "output": list(self.output),
                "n_iterations": len(self.iterations)}
        return [head] + [{"type": "iteration", **asdict(it)} for it in self.iterations]


@dataclass(frozen=True)
class DraftObservation:
    """What a policy sees right after a token was drafted.

    ``global_position`` is the 1-based index of the drafted token within the
    generated continuation; ``position_in_iteration`` restarts at 1 each round.
    """

    draft_dist: ProbDist
    drafted_token_prob: float
    position_in_iteration: int
    tokens_drafted_total: int
    global_position: int = 0


class SpeculationPolicy(Protocol):
    def begin_iteration(self) -> None: ...

    def should_continue(self, obs: DraftObservation) -> bool: ...

    def end_iteration(self, accepted: int, sl_used: int) -> None: ...


def verify(draft_tokens: Sequence[int], draft_dists: Sequence[ProbDist],
           target_dists: Sequence[ProbDist], temperature: float,
           rng: np.random.Generator | None = None) -> tuple[int, int]:
    """Rejection-sample the drafted tokens against the target.

    Returns ``(accepted, next_token)``. ``target_dists`` carries one extra
    entry for the position after the last draft, which supplies the bonus
    token when every draft is accepted. Both models' distributions are
    tempered before the test; at temperature 0 this is greedy prefix matching.
    """
    n = len(draft_tokens)
    if n < 1 or len(draft_dists) != n or len(target_dists) != n + 1:
        raise ValueError(
            f"length mismatch: {n} tokens, {len(draft_dists)} draft dists, "
            f"{len(target_dists)} target dists (need n >= 1, n, n + 1)")
    if temperature == 0:
        for i, tok in enumerate(draft_tokens):
            best = target_dists[i].argmax
            if tok != best:
                return i, best
        return n, target_dists[n].argmax

    if rng is None:
        raise ValueError("sampling verification needs an rng")
    for i, tok in enumerate(draft_tokens):
        p = apply_temperature(target_dists[i], temperature)
        q = apply_temperature(draft_dists[i], temperature)
        px, qx = p.probs[tok], q.probs[tok]
        if qx <= 0.0:
            raise ValueError(f"drafted token {tok} has zero draft probability")
        if px < qx and rng.random() >= px / qx:
            return i, sample_from(residual_dist(p, q), 1.0, rng)
    return n, sample_from(apply_temperature(target_dists[n], temperature), 1.0, rng)


def _draft_cap(cfg: GenerationConfig, produced: int) -> int:
    # the verify step always adds one token, so never draft past budget - 1
    return max(1, min(cfg.sl_max, cfg.max_new_tokens - produced - 1))


def _finish(output: list[int], emitted: list[int], cfg: GenerationConfig,
            eos_id: int | None) -> tuple[list[int], bool]:
    """Clip an iteration's tokens at EOS and at the token budget."""
    keep = list(emitted)
    if eos_id is not None and eos_id in keep:
        keep = keep[: keep.index(eos_id) + 1]
    keep = keep[: cfg.max_new_tokens - len(output)]
    done = len(output) + len(keep) >= cfg.max_new_tokens or (
        eos_id is not None and bool(keep) and keep[-1] == eos_id)
    return keep, done


def speculative_generate(pair: ModelPair, prompt: Sequence[int], policy: SpeculationPolicy,
                         cfg: GenerationConfig,
                         rng: np.random.Generator | None = None) -> RunTrace:
    """Generate with the draft proposing and the target verifying.

    Each iteration drafts one token unconditionally, then keeps drafting while
    the policy says so, never past ``cfg.sl_max`` or an EOS token.
    """
    if not prompt:
        raise ValueError("prompt must be non-empty")
    rng = rng if rng is not None else cfg.rng()
    t = cfg.temperature
    eos_id = pair.vocab.eos_id
    context = list(prompt)
    output: list[int] = []
    iterations: list[IterationRecord] = []
    drafted_total = 0

    while True:
        policy.begin_iteration()
        cap = _draft_cap(cfg, len(output))
        tokens: list[int] = []
        qdists: list[ProbDist] = []
        while True:
            q = pair.draft.next_dist(context + tokens)
            tok = sample_from(q, t, rng)
            tokens.append(tok)
            qdists.append(q)
            drafted_total += 1
            obs = DraftObservation(
                draft_dist=q,
                drafted_token_prob=float(q.probs[tok]),
                position_in_iteration=len(tokens),
                tokens_drafted_total=drafted_total,
                global_position=len(output) + len(tokens),
            )
            go_on = policy.should_continue(obs)
            if not isinstance(go_on, (bool, np.bool_)):
                raise TypeError("policy.should_continue must return a bool")
            if not go_on or len(tokens) >= cap or tok == eos_id:
                break

        pdists = [pair.target.next_dist(context + tokens[:i]) for i in range(len(tokens) + 1)]
        accepted, nxt = verify(tokens, qdists, pdists, t, rng)
        policy.end_iteration(accepted, len(tokens))

        emitted = tokens[:accepted] + [nxt]
        keep, done = _finish(output, emitted, cfg, eos_id)
        iterations.append(IterationRecord(
            sl_used=len(tokens), accepted=accepted, draft_forwards=len(tokens),
            target_forwards=1, emitted=keep, truncated=len(keep) != len(emitted)))
        output += keep
        context += keep
        if done:
            break
    return RunTrace(iterations, len(prompt), output)


def autoregressive_generate(model: LanguageModel, prompt: Sequence[int], cfg: GenerationConfig,
                            rng: np.random.Generator | None = None) -> RunTrace:
    """Target-only decoding: one forward per emitted token."""
    if not prompt:
        raise ValueError("prompt must be non-empty")
    rng = rng if rng is not None else cfg.rng()
    eos_id = model.vocab.eos_id
    context = list(prompt)
    output: list[int] = []
    iterations: list[IterationRecord] = []
    while len(output) < cfg.max_new_tokens:
        tok = sample_from(model.next_dist(context), cfg.temperature, rng)
        iterations.append(IterationRecord(0, 0, 0, 1, [tok]))
        output.append(tok)
        context.append(tok)
        if tok == eos_id:
            break
    return RunTrace(iterations, len(prompt), output)


def oracle_generate(pair: ModelPair, prompt: Sequence[int], cfg: GenerationConfig) -> RunTrace:
    """Greedy decoding where every iteration drafts until the first token
    the target disagrees with, which is the largest acceptable lookahead.

    The mismatching draft token still counts as drafted
    (``sl_used = accepted + 1``); an iteration that reaches the cap without a
    mismatch has ``sl_used = accepted`` and emits the bonus token. Each
    iteration is charged a single target forward.
    """
    if cfg.temperature != 0:
        raise ValueError("the oracle is defined for temperature 0 only")
    if not prompt:
        raise ValueError("prompt must be non-empty")
    eos_id = pair.vocab.eos_id
    context = list(prompt)
    output: list[int] = []
    iterations: list[IterationRecord] = []
    while True:
        cap = _draft_cap(cfg, len(output))
        matched: list[int] = []
        sl_used = 0
        nxt = None
        while sl_used < cap:
            d_tok = pair.draft.next_dist(context + matched).argmax
            t_tok = pair.target.next_dist(context + matched).argmax
            sl_used += 1
            if d_tok != t_tok:
                nxt = t_tok
                break
            matched.append(d_tok)
            if d_tok == eos_id:
                break
        if nxt is None:
            nxt = pair.target.next_dist(context + matched).argmax
        emitted = matched + [nxt]
        keep, done = _finish(output, emitted, cfg, eos_id)
        iterations.append(IterationRecord(
            sl_used=sl_used, accepted=len(matched), draft_forwards=sl_used,
            target_forwards=1, emitted=keep, truncated=len(keep) != len(emitted)))
        output += keep
        context += keep
        if done:
            break
    return RunTrace(iterations, len(prompt), output)


def dump_traces(traces: Iterable[RunTrace], path: str | Path) -> None:
    """Write traces as JSON lines: a ``trace`` header then one line per iteration."""
    with open(path, "w", encoding="utf-8") as fh:
        for tr in traces:
            for rec in tr.to_records():
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def load_traces(path: str | Path) -> list[RunTrace]:
    traces: list[RunTrace] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            if rec["type"] == "trace":
                if rec.get("format_version") != TRACE_FORMAT_VERSION:
                    raise ValueError(f"unsupported trace format {rec.get('format_version')!r}")
                traces.append(RunTrace([], rec["prompt_len"], list(rec["output"])))
            else:
                rec.pop("type")
                traces[-1].iterations.append(IterationRecord(**rec))
    return traces
