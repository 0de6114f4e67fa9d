"""Cost model, acceptance statistics and oracle-lookahead summaries."""

from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .engine import RunTrace


@dataclass(frozen=True)
class CostModel:
    """``c`` is draft forward time over target forward time. Latency is
    expressed in target-forward units unless ``target_unit_ms`` is set."""

    c: float = 0.1
    target_unit_ms: float | None = None

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("cost coefficient must be >= 0")
        if self.target_unit_ms is not None and self.target_unit_ms <= 0:
            raise ValueError("target_unit_ms must be > 0")


def improvement_factor(alpha: float, gamma: int, c: float) -> float:
    """Expected speedup of speculative over plain decoding for i.i.d.
    acceptance rate ``alpha``, lookahead ``gamma`` and cost ratio ``c``.

    (1 - a^(g+1)) / (1 - a) is summed as the geometric series 1 + a + ... + a^g,
    which stays accurate as alpha approaches 1.
    """
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    if c < 0:
        raise ValueError("c must be >= 0")
    expected_tokens = math.fsum(alpha ** j for j in range(gamma + 1))
    return expected_tokens / (gamma * c + 1.0)


def estimate_alpha(traces: RunTrace | Sequence[RunTrace]) -> float:
    """Accepted drafts over drafted tokens."""
    if isinstance(traces, RunTrace):
        traces = [traces]
    drafted = sum(t.drafted for t in traces)
    if drafted == 0:
        raise ValueError("trace contains no drafted tokens")
    return sum(t.accepted for t in traces) / drafted


def cost_latency(trace: RunTrace, cm: CostModel) -> float:
    """Modeled latency of a run: target forwards + c * draft forwards."""
    units = trace.target_forwards + cm.c * trace.draft_forwards
    return units * cm.target_unit_ms if cm.target_unit_ms is not None else units


def per_token_latency(trace: RunTrace, cm: CostModel) -> float:
    n = len(trace.output)
    if n == 0:
        raise ValueError("trace emitted no tokens")
    return cost_latency(trace, cm) / n


def speedup(trace: RunTrace, cm: CostModel) -> float:
    """Speedup against target-only decoding of the same output length."""
    baseline = float(len(trace.output))
    if cm.target_unit_ms is not None:
        baseline *= cm.target_unit_ms
    return baseline / cost_latency(trace, cm)


def relative_improvement(latency: float, baseline_latency: float) -> float:
    """Percent latency reduction of ``latency`` against a baseline."""
    return 100.0 * (1.0 - latency / baseline_latency)


def normalized_indices(length: int) -> list[float]:
    """Iteration index mapped onto [0, 1]; a single iteration maps to 0."""
    if length < 1:
        raise ValueError("length must be >= 1")
    if length == 1:
        return [0.0]
    return [i / (length - 1) for i in range(length)]


@dataclass
class OracleStats:
    mean_sl: float
    std_sl: float
    histogram: dict[int, int]
    bucket_means: dict[float, float]
    normalized_indices: list[list[float]]

    @property
    def n_iterations(self) -> int:
        return sum(self.histogram.values())


def _bucket(index: float, bucket_size: float) -> float:
    b = math.floor(index / bucket_size + 1e-9)
    return round(b * bucket_size, 12)


def oracle_stats_from_sequences(sequences: Sequence[Sequence[int]],
                                bucket_size: float = 0.0001) -> OracleStats:
    """Pool per-iteration lookaheads across prompts.

    Reports mean and population std, a histogram, and the mean lookahead per
    bucket of the normalized iteration index.
    """
    seqs = [list(s) for s in sequences if len(s) > 0]
    if not seqs:
        raise ValueError("no oracle iterations to summarize")
    if bucket_size <= 0:
        raise ValueError("bucket_size must be > 0")
    pooled = [v for s in seqs for v in s]
    mean = math.fsum(pooled) / len(pooled)
    std = math.sqrt(math.fsum((v - mean) ** 2 for v in pooled) / len(pooled))
    indices = [normalized_indices(len(s)) for s in seqs]
    sums: dict[float, list[float]] = defaultdict(list)
    for s, idx in zip(seqs, indices):
        for v, i in zip(s, idx):
            sums[_bucket(i, bucket_size)].append(v)
    buckets = {b: math.fsum(vs) / len(vs) for b, vs in sorted(sums.items())}
    hist = dict(sorted(Counter(pooled).items()))
    return OracleStats(mean, std, hist, buckets, indices)


def oracle_stats(traces: Sequence[RunTrace], bucket_size: float = 0.0001) -> OracleStats:
    """Summaries of the accepted-draft counts of oracle-mode traces."""
    if not traces:
        raise ValueError("no traces")
    return oracle_stats_from_sequences(
        [[it.accepted for it in t.iterations] for t in traces], bucket_size)


def write_histogram_csv(stats: OracleStats, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["oracle_sl", "count", "probability"])
        total = stats.n_iterations
        for sl, n in stats.histogram.items():
            w.writerow([sl, n, repr(n / total)])


def write_bucket_csv(stats: OracleStats, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["normalized_index", "mean_oracle_sl"])
        for b, m in stats.bucket_means.items():
            w.writerow([repr(b), repr(m)])
