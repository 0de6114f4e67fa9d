import json

import pytest

from speclab import cli
from speclab.analytics import relative_improvement
from speclab.classifier import FfnParams
from speclab.harness import (ExperimentConfig, Tuned, load_corpus, make_prompts, resolve_output_dir,
                             run_comparison, split_corpus, tune)

from .conftest import A, B, C, D

SMALL = dict(n_train=150, n_valid=12, n_test=12, max_new_tokens=24, epochs=15, hidden_dim=8,
             sl_max_grid=[4, 8], tau_grid=[0.3, 0.6], static_grid=[1, 3, 5], ppl_grid=[1.5, 3.0])


def const_clf(b2=0.0):
    p = FfnParams.zeros(12, 2, position_scale=10.0)
    p.b2 = b2
    return p


class TestConfig:
    def test_roundtrip(self):
        cfg = ExperimentConfig.from_dict(SMALL)
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
        assert cfg.sl_max_grid == (4, 8)

    def test_unknown_field(self):
        with pytest.raises(ValueError):
            ExperimentConfig.from_dict({"n_trian": 3})

    @pytest.mark.parametrize("bad", [{"tau_grid": [1.0]}, {"ppl_grid": [1.0]}, {"static_grid": []},
                                     {"sl_max_grid": [0]}, {"position_mode": "x"}])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            ExperimentConfig.from_dict(bad)

    def test_output_dir_precedence(self, monkeypatch, tmp_path):
        cfg = ExperimentConfig(output_dir=str(tmp_path / "cfg"))
        monkeypatch.delenv("SPECLAB_OUTPUT_DIR", raising=False)
        assert resolve_output_dir(cfg) == tmp_path / "cfg"
        monkeypatch.setenv("SPECLAB_OUTPUT_DIR", str(tmp_path / "env"))
        assert resolve_output_dir(cfg) == tmp_path / "env"
        assert resolve_output_dir(cfg, str(tmp_path / "cli")) == tmp_path / "cli"


class TestSplits:
    def test_sizes_and_disjoint(self):
        corpus = [f"line {i}" for i in range(660)]
        s = split_corpus(corpus, ExperimentConfig())
        assert (len(s.train), len(s.valid), len(s.test)) == (500, 80, 80)
        assert len(set(s.train) | set(s.valid) | set(s.test)) == 660

    def test_deterministic(self):
        corpus = [f"line {i}" for i in range(700)]
        assert split_corpus(corpus, ExperimentConfig()) == split_corpus(corpus, ExperimentConfig())
        assert split_corpus(corpus, ExperimentConfig(seed=1)) != split_corpus(corpus, ExperimentConfig())

    def test_too_small(self):
        with pytest.raises(ValueError):
            split_corpus(["a"] * 10, ExperimentConfig())

    def test_bundled_corpus_is_large_enough(self):
        assert len(load_corpus(ExperimentConfig())) >= 660

    def test_prompts_truncated(self, cyc_pair):
        p = make_prompts(["abcdabcd", "ddz"], cyc_pair.vocab, ExperimentConfig(prompt_chars=3))
        assert p == [[A, B, C], [D, D]]


class TestTune:
    def cfg(self, **kw):
        base = dict(max_new_tokens=40, static_grid=tuple(range(1, 11)), tau_grid=(0.5,),
                    sl_max_grid=(4,), ppl_grid=(2.0,))
        base.update(kw)
        return ExperimentConfig(**base)

    def test_static_optimum_on_cycle(self, cyc_pair):
        # match, match, match, miss: three drafts per round get the 4th token as bonus
        t = tune([[D], [A], [B]], cyc_pair, const_clf(), self.cfg())
        costs = {int(g): c for g, c in t.validation_costs["static"].items()}
        assert t.gamma_static == 3 == min(costs, key=costs.get)

    def test_single_candidate(self, cyc_pair):
        t = tune([[D]], cyc_pair, const_clf(), self.cfg(static_grid=(7,)))
        assert (t.gamma_static, t.tau, t.sl_max, t.tau_ppl) == (7, 0.5, 4, 2.0)

    def test_ties_go_to_smaller(self, cyc_pair):
        # C is constant 0.5 > every tau, so all taus behave the same
        t = tune([[D]], cyc_pair, const_clf(5.0), self.cfg(tau_grid=(0.2, 0.4), sl_max_grid=(3, 4)))
        assert t.tau == 0.2
        assert t.sl_max == 3

    def test_tuned_roundtrip(self):
        t = Tuned(0.3, 6, 4, 1.5, {"static": {"4": 1.0}})
        assert Tuned.from_dict(t.to_dict()) == t


class TestComparison:
    def test_report(self, cyc_pair):
        cfg = ExperimentConfig(max_new_tokens=30, sl_max_grid=(4, 10), static_grid=(1, 3, 5))
        tuned = Tuned(0.5, 4, 3, 2.0, {})
        report = run_comparison([[D], [A], [C]], cyc_pair, tuned, cfg, const_clf(2.0))
        rows = {r["policy"]: r for r in report["rows"]}
        assert set(rows) == {"target", "dynHeur", "static-5", "static-opt", "ppl-opt", "disco", "oracle"}
        assert rows["target"]["speedup"] == 1.0
        assert all(r["identical_to_target"] for r in rows.values())
        for name in ("static-5", "static-opt", "dynHeur", "ppl-opt", "disco"):
            assert rows["oracle"]["target_forwards"] <= rows[name]["target_forwards"]
        for imp in report["improvement"]:
            expect = relative_improvement(rows["disco"]["total_cost"],
                                          rows[imp["baseline"]]["total_cost"])
            assert imp["improvement_pct"] == expect
        assert report["disco_over_static_opt"] == pytest.approx(
            rows["disco"]["total_cost"] / rows["static-opt"]["total_cost"])


def write_cfg(tmp_path, **extra):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({**SMALL, **extra}))
    return str(path)


class TestCli:
    def test_pipeline_and_artifacts(self, tmp_path, capsys):
        out = tmp_path / "out"
        assert cli.main(["pipeline", "-c", write_cfg(tmp_path), "-o", str(out)]) == 0
        for name in ("splits.json", "target.model.json", "draft.model.json", "features_train.jsonl",
                     "classifier.txt", "tuned.json", "report.json", "latency.csv",
                     "oracle_histogram.csv", "oracle_buckets.csv", "f1.csv", "improvement.csv"):
            assert (out / name).exists(), name
        assert (out / "traces" / "oracle.jsonl").exists()
        assert "DISCO / static-opt latency ratio" in capsys.readouterr().out
        # re-running a step overwrites its artifact with identical content
        before = (out / "report.json").read_bytes()
        assert cli.main(["run", "-c", write_cfg(tmp_path), "-o", str(out)]) == 0
        assert (out / "report.json").read_bytes() == before

    def test_env_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SPECLAB_OUTPUT_DIR", str(tmp_path / "env"))
        assert cli.main(["train-models", "-c", write_cfg(tmp_path)]) == 0
        assert (tmp_path / "env" / "target.model.json").exists()

    def test_missing_artifacts_error(self, tmp_path, capsys):
        assert cli.main(["tune", "-c", write_cfg(tmp_path), "-o", str(tmp_path / "empty")]) == 1
        assert "speclab: error:" in capsys.readouterr().err

    def test_bad_config(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"bogus": 1}')
        assert cli.main(["train-models", "-c", str(p), "-o", str(tmp_path)]) == 1

    def test_transfer_classifier(self, tmp_path):
        src = tmp_path / "src"
        assert cli.main(["pipeline", "-c", write_cfg(tmp_path), "-o", str(src)]) == 0
        cfg = write_cfg(tmp_path, seed=1, classifier_path=str(src / "classifier.txt"))
        dst = tmp_path / "dst"
        for step in ("train-models", "extract-features", "tune", "run"):
            assert cli.main([step, "-c", cfg, "-o", str(dst)]) == 0
        assert not (dst / "classifier.txt").exists()
        assert (dst / "report.json").exists()
