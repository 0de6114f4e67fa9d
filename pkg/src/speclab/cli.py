"""Command-line driver.

Every subcommand reads one JSON config (all fields optional, see
``ExperimentConfig``) and reads/writes versioned artifacts in an output
directory: ``--out``, else ``$SPECLAB_OUTPUT_DIR``, else ``output_dir`` from
the config, else ``./speclab-out``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import harness
from .analytics import oracle_stats, write_bucket_csv, write_histogram_csv
from .classifier import (extract_features, load_classifier, load_features, save_classifier,
                         save_features)
from .engine import dump_traces, load_traces
from .harness import ExperimentConfig, Tuned
from .models import ModelPair, load_model, save_model

log = logging.getLogger("speclab")

SPLITS_FORMAT_VERSION = 1
TUNED_FORMAT_VERSION = 1


class Workspace:
    """Artifact paths inside one output directory."""

    def __init__(self, cfg: ExperimentConfig, out: Path):
        self.cfg = cfg
        self.out = out
        out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.out / name

    def write_json(self, name: str, obj) -> None:
        self.path(name).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n",
                                   encoding="utf-8")

    def read_json(self, name: str):
        p = self.path(name)
        if not p.exists():
            raise FileNotFoundError(f"{p} missing; run the earlier pipeline steps first")
        return json.loads(p.read_text(encoding="utf-8"))

    def splits(self) -> harness.Splits:
        obj = self.read_json("splits.json")
        if obj.get("format_version") != SPLITS_FORMAT_VERSION:
            raise ValueError("unsupported splits.json version")
        return harness.Splits(obj["train"], obj["valid"], obj["test"])

    def pair(self) -> ModelPair:
        for name in ("target.model.json", "draft.model.json"):
            if not self.path(name).exists():
                raise FileNotFoundError(f"{self.path(name)} missing; run train-models first")
        return ModelPair(load_model(self.path("target.model.json")),
                         load_model(self.path("draft.model.json")))

    def classifier(self):
        p = Path(self.cfg.classifier_path) if self.cfg.classifier_path else self.path("classifier.txt")
        if not p.exists():
            raise FileNotFoundError(f"{p} missing; run train-classifier first")
        return load_classifier(p)

    def tuned(self) -> Tuned:
        obj = self.read_json("tuned.json")
        if obj.get("format_version") != TUNED_FORMAT_VERSION:
            raise ValueError("unsupported tuned.json version")
        return Tuned.from_dict(obj)

    def prompts(self, split: str, pair: ModelPair) -> list[list[int]]:
        return harness.make_prompts(getattr(self.splits(), split), pair.vocab, self.cfg)


def cmd_train_models(ws: Workspace) -> None:
    cfg = ws.cfg
    splits = harness.split_corpus(harness.load_corpus(cfg), cfg)
    ws.write_json("splits.json", {"format_version": SPLITS_FORMAT_VERSION, "train": splits.train,
                                  "valid": splits.valid, "test": splits.test})
    pair = harness.train_pair(splits.train, cfg)
    save_model(pair.target, ws.path("target.model.json"))
    save_model(pair.draft, ws.path("draft.model.json"))
    ws.write_json("config.json", cfg.to_dict())
    log.info("trained order-%d target and order-%d draft on %d lines (vocab %d)",
             cfg.target_order, cfg.draft_order, len(splits.train), len(pair.vocab))


def cmd_extract_features(ws: Workspace) -> None:
    cfg = ws.cfg
    pair = ws.pair()
    gen = cfg.gen_config(max(cfg.sl_max_grid))
    for split in ("train", "valid"):
        feats = extract_features(pair, ws.prompts(split, pair), gen, cfg.k, cfg.position_mode)
        save_features(feats, ws.path(f"features_{split}.jsonl"), cfg.k, cfg.position_mode)
        log.info("%s: %d labeled tokens", split, len(feats))


def cmd_train_classifier(ws: Workspace) -> None:
    feats = load_features(ws.path("features_train.jsonl"))
    params = harness.default_train_classifier(feats, ws.cfg)
    save_classifier(params, ws.path("classifier.txt"))
    log.info("classifier trained on %d examples", len(feats))


def cmd_tune(ws: Workspace) -> None:
    pair = ws.pair()
    tuned = harness.tune(ws.prompts("valid", pair), pair, ws.classifier(), ws.cfg)
    ws.write_json("tuned.json", {"format_version": TUNED_FORMAT_VERSION, **tuned.to_dict()})


def cmd_run(ws: Workspace) -> None:
    cfg = ws.cfg
    pair = ws.pair()
    clf = ws.classifier()
    tuned = ws.tuned()
    valid_path = ws.path("features_valid.jsonl")
    valid_feats = load_features(valid_path) if valid_path.exists() else None
    runs = harness.policy_runs(ws.prompts("test", pair), pair, tuned, clf, cfg)
    trace_dir = ws.path("traces")
    trace_dir.mkdir(exist_ok=True)
    for name, (_, traces) in runs.items():
        dump_traces(traces, trace_dir / f"{name}.jsonl")
    report = harness.build_report(runs, cfg, tuned, clf, valid_feats)
    ws.path("report.json").write_text(harness.dumps_report(report), encoding="utf-8")
    print(harness.format_report(report))


def cmd_oracle_stats(ws: Workspace) -> None:
    cfg = ws.cfg
    trace_path = ws.path("traces") / "oracle.jsonl"
    if trace_path.exists():
        traces = load_traces(trace_path)
    else:
        pair = ws.pair()
        traces = harness.run_oracle(pair, ws.prompts("test", pair), cfg.gen_config())
    st = oracle_stats(traces, cfg.bucket_size)
    write_histogram_csv(st, ws.path("oracle_histogram.csv"))
    write_bucket_csv(st, ws.path("oracle_buckets.csv"))
    ws.write_json("oracle_stats.json", {"format_version": 1, "mean_sl": st.mean_sl,
                                        "std_sl": st.std_sl, "n_iterations": st.n_iterations})
    print(f"oracle SL mean {st.mean_sl:.2f} (std {st.std_sl:.2f}) over {st.n_iterations} iterations")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_report(ws: Workspace) -> None:
    report = ws.read_json("report.json")
    _write_csv(ws.path("latency.csv"),
               ["method", "total_cost", "per_token_latency", "speedup", "alpha", "mean_sl",
                "target_forwards", "draft_forwards", "tokens"],
               [[r["policy"], r["total_cost"], r["per_token_latency"], r["speedup"],
                 "" if r["alpha"] is None else r["alpha"],
                 "" if r["mean_sl"] is None else r["mean_sl"],
                 r["target_forwards"], r["draft_forwards"], r["tokens"]] for r in report["rows"]])
    _write_csv(ws.path("improvement.csv"), ["baseline", "disco_improvement_pct"],
               [[i["baseline"], i["improvement_pct"]] for i in report["improvement"]])
    if "f1" in report:
        _write_csv(ws.path("f1.csv"), ["method", "precision", "recall", "f1"],
                   [[f["method"], f["precision"], f["recall"], f["f1"]] for f in report["f1"]])
    print(harness.format_report(report))


def cmd_pipeline(ws: Workspace) -> None:
    for step in (cmd_train_models, cmd_extract_features, cmd_train_classifier, cmd_tune,
                 cmd_run, cmd_oracle_stats, cmd_report):
        log.info("== %s", step.__name__[4:].replace("_", "-"))
        step(ws)


COMMANDS = {
    "train-models": cmd_train_models,
    "extract-features": cmd_extract_features,
    "train-classifier": cmd_train_classifier,
    "tune": cmd_tune,
    "run": cmd_run,
    "oracle-stats": cmd_oracle_stats,
    "report": cmd_report,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", help="JSON experiment config (defaults if omitted)")
    common.add_argument("--out", "-o", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")
    parser = argparse.ArgumentParser(prog="speclab",
                                     description="Speculative decoding lookahead experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        ws = Workspace(cfg, harness.resolve_output_dir(cfg, args.out))
        COMMANDS[args.command](ws)
    except Exception as exc:  # one diagnostic line, nonzero exit
        print(f"speclab: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
