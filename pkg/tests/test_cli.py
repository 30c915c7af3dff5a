"""End-to-end tests for the command line interface."""

import json
from pathlib import Path

import pytest

from visrel import io as vio
from visrel.cli import main


def run(*argv) -> int:
    return main([str(a) for a in argv])


def tree_bytes(root: Path) -> dict:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*")) if p.is_file()
    }


ALL_COMMANDS = (
    "synth", "fit-gmm", "fit-pca", "featurize", "train-full",
    "train-weak", "train-noisy", "tune-weights", "score",
    "eval-recall", "eval-retrieval",
)


class TestParsing:
    def test_no_command_prints_help_and_fails(self, capsys):
        assert main([]) == 1
        assert "usage" in capsys.readouterr().out.lower()

    def test_root_help_exits_zero(self):
        with pytest.raises(SystemExit) as exc:
            run("--help")
        assert exc.value.code == 0

    @pytest.mark.parametrize("command", ALL_COMMANDS)
    def test_subcommand_help_exits_zero(self, command):
        with pytest.raises(SystemExit) as exc:
            run(command, "--help")
        assert exc.value.code == 0

    def test_unknown_command_exits_one(self):
        with pytest.raises(SystemExit) as exc:
            run("frobnicate")
        assert exc.value.code == 1

    def test_missing_required_flag_exits_one(self):
        with pytest.raises(SystemExit) as exc:
            run("synth")
        assert exc.value.code == 1

    def test_data_error_exits_two(self, tmp_path, capsys):
        assert run("synth", "--preset", "tiny", "--out", tmp_path) == 0
        manifest = tmp_path / "manifest.json"
        blob = json.loads(manifest.read_text())
        blob["format_version"] = 9
        manifest.write_text(json.dumps(blob))
        code = run("fit-pca", "--data", manifest, "--p", "2",
                   "--out", tmp_path / "pca.bin")
        assert code == 2
        assert capsys.readouterr().err.startswith("error:")


class TestConfigFile:
    def test_config_requires_subcommand(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{}")
        with pytest.raises(SystemExit) as exc:
            run("--config", cfg)
        assert exc.value.code == 1

    def test_config_bad_json_exits_two(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{not json")
        assert run("--config", cfg, "synth", "--out", tmp_path / "d") == 2
        assert "error:" in capsys.readouterr().err

    def test_config_must_be_an_object(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("[1, 2]")
        assert run("--config", cfg, "synth", "--out", tmp_path / "d") == 2

    def test_config_unknown_key_exits_one(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"bogus": 1}))
        with pytest.raises(SystemExit) as exc:
            run("--config", cfg, "synth", "--out", tmp_path / "d")
        assert exc.value.code == 1

    def test_config_supplies_defaults(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "num_train": 3, "num_val": 1, "num_test": 1,
            "feature_dim": 8, "seed": 5,
        }))
        assert run("--config", cfg, "synth", "--out", tmp_path / "a") == 0
        assert run("synth", "--num-train", 3, "--num-val", 1,
                   "--num-test", 1, "--feature-dim", 8, "--seed", 5,
                   "--out", tmp_path / "b") == 0
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    def test_explicit_flag_beats_config(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "num_train": 3, "num_val": 1, "num_test": 1, "feature_dim": 8,
        }))
        assert run("--config", cfg, "synth", "--num-train", 4,
                   "--out", tmp_path / "d") == 0
        ds = vio.load_dataset(tmp_path / "d" / "manifest.json")
        assert len(ds.splits["train"]) == 4
        assert len(ds.splits["val"]) == 1


class TestSynthCommand:
    def test_same_seed_writes_identical_bytes(self, tmp_path):
        args = ("synth", "--num-train", 4, "--num-val", 2, "--num-test", 2,
                "--feature-dim", 8, "--seed", 3)
        assert run(*args, "--out", tmp_path / "a") == 0
        assert run(*args, "--out", tmp_path / "b") == 0
        trees = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
        assert sorted(trees[0]) == [
            "annotations_test.jsonl", "annotations_train.jsonl",
            "annotations_val.jsonl", "detections.jsonl", "features.bin",
            "manifest.json", "planted.jsonl", "vocabulary.json",
        ]
        assert trees[0] == trees[1]

    def test_seed_flag_position_does_not_matter(self, tmp_path):
        base = ("--num-train", 4, "--num-val", 1, "--num-test", 1,
                "--feature-dim", 8)
        assert run("--seed", 9, "synth", *base, "--out", tmp_path / "a") == 0
        assert run("synth", *base, "--seed", 9, "--out", tmp_path / "b") == 0
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    def test_tiny_preset_loads_back(self, tmp_path):
        assert run("synth", "--preset", "tiny", "--out", tmp_path) == 0
        ds = vio.load_dataset(tmp_path / "manifest.json")
        assert ds.vocabulary.num_predicates == 5
        assert {len(ids) for ids in ds.splits.values()} == {1}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One full training and evaluation pass over a planted dataset."""
    root = tmp_path_factory.mktemp("pipeline")
    data = root / "data" / "manifest.json"
    assert run("synth", "--preset", "planted-bags", "--seed", 7,
               "--out", root / "data") == 0
    assert run("fit-gmm", "--data", data, "--k", 48, "--annotated-only",
               "--out", root / "gmm.bin") == 0
    assert run("fit-pca", "--data", data, "--p", 16,
               "--out", root / "pca.bin") == 0
    for split in ("train", "test"):
        assert run("featurize", "--data", data, "--gmm", root / "gmm.bin",
                   "--pca", root / "pca.bin", "--split", split,
                   "--out", root / f"pairs_{split}") == 0
    common = ("--data", data, "--pairs", root / "pairs_train",
              "--split", "train", "--gmm", root / "gmm.bin",
              "--pca", root / "pca.bin", "--lam", "1e-3")
    assert run("train-full", *common, "--out", root / "full.bin") == 0
    assert run("train-weak", *common, "--out", root / "weak.bin") == 0
    assert run("train-noisy", *common, "--out", root / "noisy.bin") == 0
    reports = {}
    for name in ("full", "weak", "noisy"):
        out = root / f"rep_{name}.json"
        assert run("eval-recall", "--data", data,
                   "--pairs", root / "pairs_test", "--split", "test",
                   "--model", root / f"{name}.bin", "--x", 50,
                   "--out", out) == 0
        reports[name] = json.loads(out.read_text())
    return {"root": root, "data": data, "reports": reports}


class TestPipeline:
    def test_full_supervision_recall_is_high(self, pipeline):
        assert pipeline["reports"]["full"]["value"] >= 0.8

    def test_weak_supervision_tracks_full(self, pipeline):
        full = pipeline["reports"]["full"]["value"]
        weak = pipeline["reports"]["weak"]["value"]
        assert weak >= 0.75
        assert weak >= 0.85 * full

    def test_noisy_sits_between_chance_and_weak(self, pipeline):
        weak = pipeline["reports"]["weak"]["value"]
        noisy = pipeline["reports"]["noisy"]["value"]
        assert noisy >= 0.3
        assert noisy <= weak + 0.2

    def test_reports_count_every_test_image(self, pipeline):
        for report in pipeline["reports"].values():
            assert report["metric"] == "relationship_recall@50"
            assert report["num_gt"] == 16
            assert len(report["per_group"]) == 16

    def test_score_predictions_replay_identically(self, pipeline):
        root = pipeline["root"]
        preds = root / "preds.jsonl"
        assert run("score", "--data", pipeline["data"],
                   "--pairs", root / "pairs_test",
                   "--model", root / "full.bin", "--k", 1,
                   "--out", preds) == 0
        out = root / "rep_preds.json"
        assert run("eval-recall", "--data", pipeline["data"],
                   "--split", "test", "--predictions", preds,
                   "--x", 50, "--out", out) == 0
        assert json.loads(out.read_text()) == pipeline["reports"]["full"]

    def test_retrieval_map_is_high(self, pipeline):
        root = pipeline["root"]
        out = root / "rep_retrieval.json"
        assert run("eval-retrieval", "--data", pipeline["data"],
                   "--pairs", root / "pairs_test", "--split", "test",
                   "--model", root / "full.bin", "--out", out) == 0
        report = json.loads(out.read_text())
        assert report["metric"] == "retrieval_map_union@0.3"
        assert report["value"] >= 0.6
