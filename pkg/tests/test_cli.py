import json
import time

import numpy as np
import pytest
import yaml

from hybridav.cli import build_parser, resolve_config, run
from hybridav.model import TrainConfig

TINY = ["--d-feat", "512", "--d-emb", "16", "--d-lev", "8", "--d-bfs", "4", "--d-ual", "4",
        "--d-h1", "8", "--d-h2", "4", "--epochs", "2", "--o2d2-epochs", "2",
        "--train-passes", "1", "--calib-passes", "1"]


def jsonl(path):
    return [json.loads(l) for l in path.read_text().splitlines() if l.strip()]


def write_jsonl(path, recs):
    path.write_text("".join(json.dumps(r) + "\n" for r in recs))


class TestExitCodes:
    def test_unknown_flag(self, capsys):
        assert run(["evaluate", "--no-such-flag"]) == 1

    def test_missing_subcommand(self):
        assert run([]) == 1

    def test_help(self, capsys):
        assert run(["--help"]) == 0

    def test_missing_file(self, tmp_path):
        assert run(["evaluate", "--answers", str(tmp_path / "a"), "--truth", str(tmp_path / "t")]) == 2

    def test_even_members(self, tmp_path):
        assert run(["synth", "--out", str(tmp_path / "c.jsonl"), "--n-authors", "20"]) == 0
        assert run(["train", "--corpus", str(tmp_path / "c.jsonl"), "--out", str(tmp_path / "m"),
                    "--members", "2"] + TINY) == 1

    def test_bad_config_value(self, tmp_path):
        assert run(["synth", "--out", str(tmp_path / "c.jsonl"), "--n-authors", "20"]) == 0
        assert run(["train", "--corpus", str(tmp_path / "c.jsonl"), "--out", str(tmp_path / "m"),
                    "--batch-size", "0"] + TINY) == 1

    def test_grad_check(self, capsys):
        assert run(["grad-check", "--n-cases", "3", "--components", "ual", "o2d2"]) == 0
        assert "o2d2" in capsys.readouterr().out


class TestEvaluate:
    def test_perfect_answers(self, tmp_path, capsys):
        truth = [{"id": f"t{k}", "same": bool(k % 2)} for k in range(20)]
        answers = [{"id": f"t{k}", "value": 1.0 if k % 2 else 0.0, "config_hash": "abc"} for k in range(20)]
        write_jsonl(tmp_path / "truth.jsonl", truth)
        write_jsonl(tmp_path / "answers.jsonl", answers)
        code = run(["evaluate", "--answers", str(tmp_path / "answers.jsonl"),
                    "--truth", str(tmp_path / "truth.jsonl"), "--out-dir", str(tmp_path / "ev")])
        assert code == 0
        out = capsys.readouterr().out
        for name in ("auc", "c@1", "f_05_u", "F1", "brier", "overall"):
            line = next(l for l in out.splitlines() if l.split() and l.split()[0] == name)
            assert float(line.split()[1]) == 1.0
        recs = {r["metric"]: r for r in jsonl(tmp_path / "ev" / "metrics.jsonl")}
        assert recs["overall"]["value"] == 1.0 and recs["overall"]["config_hash"] == "abc"
        rel = json.loads((tmp_path / "ev" / "reliability.json").read_text())
        assert sum(rel["counts"]) == 20 and rel["config_hash"] == "abc"


class TestConfigPrecedence:
    def test_flags_over_file_over_defaults(self, tmp_path):
        (tmp_path / "c.yaml").write_text(yaml.safe_dump({"lr": 0.005, "epochs": 7}))
        args = build_parser().parse_args(["probe-fandom", "--corpus", "x", "--config",
                                          str(tmp_path / "c.yaml"), "--epochs", "3"])
        cfg = resolve_config(args)
        assert (cfg.lr, cfg.epochs, cfg.batch_size) == (0.005, 3, TrainConfig().batch_size)

    def test_json_file_and_unknown_key(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"nope": 1}))
        assert run(["probe-fandom", "--corpus", "x", "--config", str(tmp_path / "c.json")]) == 1


def test_full_pipeline_smoke(tmp_path, capsys):
    t0 = time.perf_counter()
    p = lambda name: str(tmp_path / name)
    assert run(["synth", "--out", p("corpus.jsonl"), "--n-authors", "120", "--seed", "1"]) == 0
    assert run(["split", "--corpus", p("corpus.jsonl"), "--out-dir", p("split"), "--seed", "0"]) == 0
    split = json.loads((tmp_path / "split" / "split.json").read_text())
    assert "config_hash" in split
    for name, seed in (("validation", 1), ("calibration", 2)):
        assert run(["sample-pairs", "--corpus", p(f"split/{name}.jsonl"), "--out-pairs", p(f"{name}_pairs.jsonl"),
                    "--out-truth", p(f"{name}_truth.jsonl"), "--seed", str(seed), "--id-prefix", name[:3]]) == 0
    assert run(["train", "--corpus", p("split/training.jsonl"), "--out", p("model"), "--members", "3",
                "--dev-pairs", p("calibration_pairs.jsonl"), "--dev-truth", p("calibration_truth.jsonl")]
               + TINY) == 0
    manifest = json.loads((tmp_path / "model" / "manifest.json").read_text())
    assert [m["seed"] for m in manifest["members"]] == [0, 1, 2]
    chash = manifest["config_hash"]
    assert all(r["config_hash"] == chash for r in jsonl(tmp_path / "model" / "train_log.jsonl"))
    assert run(["train-o2d2", "--model", p("model"), "--corpus", p("split/calibration.jsonl")]) == 0
    assert run(["tune-epsilon", "--model", p("model"), "--corpus", p("split/calibration.jsonl"),
                "--pairs", p("validation_pairs.jsonl"), "--truth", p("validation_truth.jsonl"),
                "--eps-grid", "0.05", "0.1"]) == 0
    table = jsonl(tmp_path / "model" / "epsilon_table.jsonl")
    assert len(table) == 6 and sum(r["selected"] for r in table) == 3
    assert run(["predict", "--model", p("model"), "--pairs", p("validation_pairs.jsonl"),
                "--out", p("answers.jsonl")]) == 0
    answers = jsonl(tmp_path / "answers.jsonl")
    assert answers and all(r["config_hash"] == chash and 0.0 <= r["value"] <= 1.0 for r in answers)
    assert run(["evaluate", "--answers", p("answers.jsonl"), "--truth", p("validation_truth.jsonl"),
                "--out-dir", p("eval")]) == 0
    assert "overall" in capsys.readouterr().out
    assert run(["probe-fandom", "--corpus", p("split/training.jsonl"), "--out", p("probe.jsonl")] + TINY) == 0
    assert len(jsonl(tmp_path / "probe.jsonl")) == 2
    assert time.perf_counter() - t0 < 60
