"""Experiment pipeline: splits, model and classifier training, validation
tuning, and the policy comparison report."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import analytics
from .analytics import CostModel, cost_latency, estimate_alpha, oracle_stats
from .classifier import (FfnParams, LabeledFeature, TrainConfig, disco_predictions,
                         f1_eval, static_predictions, train)
from .corpus import read_corpus
from .engine import (GenerationConfig, RunTrace, SpeculationPolicy, autoregressive_generate,
                     oracle_generate, speculative_generate)
from .models import ModelPair, Vocab, train_ngram
from .policies import DiscoPolicy, HeuristicPolicy, PerplexityPolicy, StaticPolicy

log = logging.getLogger(__name__)

REPORT_FORMAT_VERSION = 1
OUTPUT_DIR_ENV = "SPECLAB_OUTPUT_DIR"


@dataclass(frozen=True)
class ExperimentConfig:
    corpus_path: str | None = None  # None: bundled code_tasks.txt
    n_train: int = 500
    n_valid: int = 80
    n_test: int = 80
    prompt_chars: int = 12
    max_new_tokens: int = 64
    target_order: int = 6
    draft_order: int = 4
    ngram_alpha: float = 0.01
    k: int = 10
    position_mode: str = "iteration"
    sl_max_grid: tuple[int, ...] = (4, 6, 8, 10, 12)
    tau_grid: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    static_grid: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8, 9, 10)
    ppl_grid: tuple[float, ...] = (1.05, 1.1, 1.25, 1.5, 2.0, 3.0, 5.0)
    temperature: float = 0.0
    seed: int = 0
    cost_c: float = 0.1
    target_unit_ms: float | None = None
    heuristic: tuple[int, int, int, int] = (5, 2, 1, 1)  # init, step_up, step_down, min_sl
    learning_rate: float = 0.05
    epochs: int = 200
    batch_size: int = 64
    hidden_dim: int = 32
    label: str = "soft"
    position_scale: float | None = None  # None: max(sl_max_grid); 1.0 feeds the raw position
    classifier_path: str | None = None  # pre-trained classifier (transfer runs)
    bucket_size: float = 0.0001
    output_dir: str | None = None

    def __post_init__(self):
        for name in ("sl_max_grid", "tau_grid", "static_grid", "ppl_grid"):
            if not getattr(self, name):
                raise ValueError(f"{name} must be non-empty")
        if min(self.sl_max_grid) < 1 or min(self.static_grid) < 1:
            raise ValueError("lookahead grids must hold values >= 1")
        if not all(0.0 < t < 1.0 for t in self.tau_grid):
            raise ValueError("tau values must lie in (0, 1)")
        if not all(t > 1.0 for t in self.ppl_grid):
            raise ValueError("perplexity thresholds must be > 1")
        if min(self.n_train, self.n_valid, self.n_test) < 1:
            raise ValueError("split sizes must be >= 1")
        if self.position_scale is not None and self.position_scale <= 0:
            raise ValueError("position_scale must be > 0")
        if self.position_mode not in ("iteration", "global"):
            raise ValueError("position_mode must be 'iteration' or 'global'")

    @classmethod
    def from_dict(cls, obj: dict) -> ExperimentConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        tuples = {f.name for f in dataclasses.fields(cls) if str(f.type).startswith("tuple")}
        return cls(**{k: tuple(v) if k in tuples else v for k, v in obj.items()})

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v
                for k, v in dataclasses.asdict(self).items()}

    @property
    def cost_model(self) -> CostModel:
        return CostModel(self.cost_c, self.target_unit_ms)

    @property
    def sl_cap(self) -> int:
        """Engine cap for policies without a tuned cap (heuristic, perplexity)
        and for the oracle."""
        return max(max(self.sl_max_grid), max(self.static_grid))

    def gen_config(self, sl_max: int | None = None) -> GenerationConfig:
        return GenerationConfig(self.max_new_tokens, self.temperature, self.seed,
                                sl_max if sl_max is not None else self.sl_cap)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.epochs, self.batch_size, self.seed,
                           self.hidden_dim, self.label,
                           float(self.position_scale or max(self.sl_max_grid)))


def resolve_output_dir(cfg: ExperimentConfig, override: str | None = None) -> Path:
    """Command-line override, then the environment variable, then the config."""
    out = override or os.environ.get(OUTPUT_DIR_ENV) or cfg.output_dir or "speclab-out"
    return Path(out)


@dataclass
class Splits:
    train: list[str]
    valid: list[str]
    test: list[str]


def split_corpus(corpus: Sequence[str], cfg: ExperimentConfig) -> Splits:
    """Seeded, disjoint train / validation / test selection."""
    need = cfg.n_train + cfg.n_valid + cfg.n_test
    if len(corpus) < need:
        raise ValueError(f"corpus has {len(corpus)} prompts, splits need {need}")
    order = np.random.default_rng(cfg.seed).permutation(len(corpus))
    pick = lambda a, b: [corpus[i] for i in order[a:b]]  # noqa: E731
    a, b = cfg.n_train, cfg.n_train + cfg.n_valid
    return Splits(pick(0, a), pick(a, b), pick(b, need))


def train_pair(train_lines: Sequence[str], cfg: ExperimentConfig) -> ModelPair:
    vocab = Vocab.from_texts(train_lines)
    target = train_ngram(train_lines, cfg.target_order, cfg.ngram_alpha, vocab)
    draft = train_ngram(train_lines, cfg.draft_order, cfg.ngram_alpha, vocab)
    return ModelPair(target, draft)


def make_prompts(lines: Sequence[str], vocab: Vocab, cfg: ExperimentConfig) -> list[list[int]]:
    prompts = []
    for line in lines:
        ids = vocab.encode(line[: cfg.prompt_chars], skip_unknown=True)
        if ids:
            prompts.append(ids)
    return prompts


def prompt_rng(seed: int, index: int) -> np.random.Generator:
    """Per-prompt stream derived from the master seed, so results never
    depend on processing order."""
    return np.random.default_rng([seed, index])


PolicyFactory = Callable[[], SpeculationPolicy]


def run_policy(pair: ModelPair, prompts: Sequence[Sequence[int]], make_policy: PolicyFactory,
               gen: GenerationConfig) -> list[RunTrace]:
    return [speculative_generate(pair, p, make_policy(), gen, prompt_rng(gen.seed, i))
            for i, p in enumerate(prompts)]


def run_target(pair: ModelPair, prompts: Sequence[Sequence[int]],
               gen: GenerationConfig) -> list[RunTrace]:
    return [autoregressive_generate(pair.target, p, gen, prompt_rng(gen.seed, i))
            for i, p in enumerate(prompts)]


def run_oracle(pair: ModelPair, prompts: Sequence[Sequence[int]],
               gen: GenerationConfig) -> list[RunTrace]:
    return [oracle_generate(pair, p, gen) for p in prompts]


def total_cost(traces: Sequence[RunTrace], cm: CostModel) -> float:
    return sum(cost_latency(t, cm) for t in traces)


@dataclass
class Tuned:
    tau: float
    sl_max: int
    gamma_static: int
    tau_ppl: float
    validation_costs: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> Tuned:
        return cls(obj["tau"], obj["sl_max"], obj["gamma_static"], obj["tau_ppl"],
                   obj.get("validation_costs", {}))


def _argmin(costs: dict) -> object:
    # keys arrive in ascending grid order; strict < keeps the earliest on ties
    best_key, best = None, None
    for key, c in costs.items():
        if best is None or c < best:
            best_key, best = key, c
    return best_key


def tune(valid_prompts: Sequence[Sequence[int]], pair: ModelPair, classifier: FfnParams,
         cfg: ExperimentConfig) -> Tuned:
    """Exhaustive grid search minimizing total modeled latency on the
    validation prompts, separately for each policy family.

    Ties go to the smaller tau, then the smaller sl_max (DISCO), the smaller
    gamma (static) and the smaller perplexity threshold.
    """
    cm = cfg.cost_model
    static_costs = {
        g: total_cost(run_policy(pair, valid_prompts, lambda g=g: StaticPolicy(g),
                                 cfg.gen_config(g)), cm)
        for g in sorted(cfg.static_grid)
    }
    disco_costs = {}
    for tau in sorted(cfg.tau_grid):
        for s in sorted(cfg.sl_max_grid):
            make = lambda tau=tau, s=s: DiscoPolicy(classifier, tau, s, cfg.k, cfg.position_mode)  # noqa: E731
            disco_costs[(tau, s)] = total_cost(
                run_policy(pair, valid_prompts, make, cfg.gen_config(s)), cm)
    ppl_costs = {
        t: total_cost(run_policy(pair, valid_prompts, lambda t=t: PerplexityPolicy(t),
                                 cfg.gen_config()), cm)
        for t in sorted(cfg.ppl_grid)
    }
    tau, sl_max = _argmin(disco_costs)
    tuned = Tuned(tau, sl_max, _argmin(static_costs), _argmin(ppl_costs), {
        "static": {str(g): c for g, c in static_costs.items()},
        "disco": {f"{t}|{s}": c for (t, s), c in disco_costs.items()},
        "perplexity": {str(t): c for t, c in ppl_costs.items()},
    })
    log.info("tuned: tau=%s sl_max=%s gamma=%s tau_ppl=%s", tuned.tau, tuned.sl_max,
             tuned.gamma_static, tuned.tau_ppl)
    return tuned


def _row(name: str, params: dict, traces: Sequence[RunTrace], cm: CostModel,
         target_cost: float, reference: Sequence[RunTrace] | None) -> dict:
    cost = total_cost(traces, cm)
    tokens = sum(len(t.output) for t in traces)
    drafted = sum(t.drafted for t in traces)
    n_iter = sum(len(t.iterations) for t in traces)
    row = {
        "policy": name,
        "params": params,
        "total_cost": cost,
        "per_token_latency": cost / tokens,
        "speedup": target_cost / cost,
        "alpha": estimate_alpha(traces) if drafted else None,
        "mean_sl": drafted / n_iter if drafted else None,
        "target_forwards": sum(t.target_forwards for t in traces),
        "draft_forwards": sum(t.draft_forwards for t in traces),
        "tokens": tokens,
    }
    if reference is not None:
        row["identical_to_target"] = all(a.output == b.output for a, b in zip(traces, reference))
    return row


def policy_runs(test_prompts: Sequence[Sequence[int]], pair: ModelPair, tuned: Tuned,
                classifier: FfnParams, cfg: ExperimentConfig) -> dict[str, tuple[dict, list[RunTrace]]]:
    """Traces for every compared method, on identical prompts and seeds."""
    h_init, h_up, h_down, h_min = cfg.heuristic
    runs: dict[str, tuple[dict, list[RunTrace]]] = {}
    runs["target"] = ({}, run_target(pair, test_prompts, cfg.gen_config()))
    runs["dynHeur"] = (
        {"init": h_init, "step_up": h_up, "step_down": h_down, "min_sl": h_min},
        run_policy(pair, test_prompts, lambda: HeuristicPolicy(h_init, h_up, h_down, h_min),
                   cfg.gen_config()))
    runs["static-5"] = ({"gamma": 5}, run_policy(pair, test_prompts, lambda: StaticPolicy(5),
                                                 cfg.gen_config(5)))
    g = tuned.gamma_static
    runs["static-opt"] = ({"gamma": g}, run_policy(pair, test_prompts, lambda: StaticPolicy(g),
                                                   cfg.gen_config(g)))
    runs["ppl-opt"] = ({"tau_ppl": tuned.tau_ppl},
                       run_policy(pair, test_prompts, lambda: PerplexityPolicy(tuned.tau_ppl),
                                  cfg.gen_config()))
    runs["disco"] = (
        {"tau": tuned.tau, "sl_max": tuned.sl_max},
        run_policy(pair, test_prompts,
                   lambda: DiscoPolicy(classifier, tuned.tau, tuned.sl_max, cfg.k, cfg.position_mode),
                   cfg.gen_config(tuned.sl_max)))
    if cfg.temperature == 0:
        runs["oracle"] = ({"sl_max": cfg.sl_cap},
                          run_oracle(pair, test_prompts, cfg.gen_config()))
    return runs


def build_report(runs: dict[str, tuple[dict, list[RunTrace]]], cfg: ExperimentConfig,
                 tuned: Tuned, classifier: FfnParams | None = None,
                 valid_features: Sequence[LabeledFeature] | None = None) -> dict:
    cm = cfg.cost_model
    target_traces = runs["target"][1]
    target_cost = total_cost(target_traces, cm)
    greedy_ref = target_traces if cfg.temperature == 0 else None
    rows = [_row(name, params, traces, cm, target_cost, greedy_ref)
            for name, (params, traces) in runs.items()]
    by_name = {r["policy"]: r for r in rows}
    disco_cost = by_name["disco"]["total_cost"]
    improvement = [
        {"baseline": name, "improvement_pct": analytics.relative_improvement(
            disco_cost, by_name[name]["total_cost"])}
        for name in ("static-opt", "dynHeur", "static-5", "ppl-opt")
    ]
    report = {
        "format_version": REPORT_FORMAT_VERSION,
        "cost_model": {"c": cm.c, "target_unit_ms": cm.target_unit_ms},
        "tuned": {k: v for k, v in tuned.to_dict().items() if k != "validation_costs"},
        "rows": rows,
        "improvement": improvement,
        "disco_over_static_opt": disco_cost / by_name["static-opt"]["total_cost"],
    }
    if cm.target_unit_ms is not None:
        for r in rows:
            r["latency_ms_per_token"] = r["per_token_latency"]
    if classifier is not None and valid_features:
        labels = [f.accept_label for f in valid_features]
        p_d, r_d, f_d = f1_eval(disco_predictions(classifier, valid_features, tuned.tau,
                                                  tuned.sl_max), labels)
        p_s, r_s, f_s = f1_eval(static_predictions(valid_features, tuned.gamma_static), labels)
        report["f1"] = [
            {"method": "static-opt", "precision": p_s, "recall": r_s, "f1": f_s},
            {"method": "disco", "precision": p_d, "recall": r_d, "f1": f_d},
        ]
    if "oracle" in runs:
        st = oracle_stats(runs["oracle"][1], cfg.bucket_size)
        report["oracle_stats"] = {"mean_sl": st.mean_sl, "std_sl": st.std_sl,
                                  "n_iterations": st.n_iterations,
                                  "histogram": {str(k): v for k, v in st.histogram.items()}}
    return report


def run_comparison(test_prompts: Sequence[Sequence[int]], pair: ModelPair, tuned: Tuned,
                   cfg: ExperimentConfig, classifier: FfnParams,
                   valid_features: Sequence[LabeledFeature] | None = None) -> dict:
    runs = policy_runs(test_prompts, pair, tuned, classifier, cfg)
    return build_report(runs, cfg, tuned, classifier, valid_features)


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def format_report(report: dict) -> str:
    """Plain-text latency table for terminals."""
    unit = "ms" if report["cost_model"]["target_unit_ms"] else "units"
    lines = [f"{'method':<12} {'latency/token':>14} {'speedup':>8} {'alpha':>6} {'mean SL':>8} "
             f"{'T fwd':>6} {'D fwd':>6}"]
    for r in report["rows"]:
        alpha = "-" if r["alpha"] is None else f"{r['alpha']:.3f}"
        msl = "-" if r["mean_sl"] is None else f"{r['mean_sl']:.2f}"
        lines.append(f"{r['policy']:<12} {r['per_token_latency']:>11.4f} {unit:<2} "
                     f"{r['speedup']:>7.2f}x {alpha:>6} {msl:>8} {r['target_forwards']:>6} "
                     f"{r['draft_forwards']:>6}")
    lines.append(f"DISCO / static-opt latency ratio: {report['disco_over_static_opt']:.4f}")
    for imp in report["improvement"]:
        lines.append(f"improvement over {imp['baseline']}: {imp['improvement_pct']:.1f}%")
    for f in report.get("f1", []):
        lines.append(f"F1 {f['method']}: {f['f1']:.3f} (P {f['precision']:.3f}, R {f['recall']:.3f})")
    return "\n".join(lines)


def load_corpus(cfg: ExperimentConfig) -> list[str]:
    return read_corpus(cfg.corpus_path)


def default_train_classifier(features: Sequence[LabeledFeature], cfg: ExperimentConfig) -> FfnParams:
    return train(features, cfg.train_config())

