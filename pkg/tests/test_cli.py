import json
import subprocess
import sys

import numpy as np
import pytest

from hiercons.checkpoint import save_checkpoint
from hiercons.cli import main, parse_overrides
from hiercons.heads import BackboneConfig
from hiercons.hierarchy import parse_hierarchy
from hiercons.model import HierarchicalModel

SMALL = ["--data.synthetic.samples_per_class", "8", "--data.synthetic.feature_dim", "4",
         "--hierarchy.balanced", "[2,3,5]", "--backbone.hidden", "[6]"]


def _run(*argv):
    return main(list(argv))


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


class TestOverrides:
    def test_parse(self):
        assert parse_overrides(["--train.lr", "1e-3", "--data.synthetic.level_spreads=[6,3]", "--train.joint_init",
                                "uniform"]) == {"train.lr": 1e-3, "data.synthetic.level_spreads": [6, 3],
                                                "train.joint_init": "uniform"}

    def test_rejects_unknown_flag(self, workdir, capsys):
        assert _run("train", "--bogus") != 0
        assert "bogus" in capsys.readouterr().err

    def test_rejects_unknown_option(self, workdir, capsys):
        assert _run("train", "--quiet", "--train.learning_rate", "0.1") != 0
        assert "learning_rate" in capsys.readouterr().err


class TestGenData:
    def test_same_seed_byte_identical(self, workdir):
        for out in ("a", "b"):
            assert _run("gen-data", "--quiet", "--seed", "7", "--out", out, *SMALL) == 0
        for name in ("train.csv", "val.csv", "test.csv", "manifest.json"):
            assert (workdir / "a" / name).read_bytes() == (workdir / "b" / name).read_bytes()

    def test_manifest_echoes_defaults(self, workdir):
        assert _run("gen-data", "--quiet", "--out", "d") == 0
        manifest = json.loads((workdir / "d" / "manifest.json").read_text())
        syn = manifest["synthetic"]
        assert syn["level_spreads"] == [6.0, 6.0, 6.0]
        assert set(syn) == {"feature_dim", "samples_per_class", "clusters_per_class", "leaf_spread", "level_spreads",
                            "cluster_spread", "noise_rate", "noise_splits", "seed"}
        assert manifest["counts"] == {"train": 300, "val": 150, "test": 150}

    def test_invalid_noise_rate(self, workdir, capsys):
        assert _run("gen-data", "--out", "d", "--data.synthetic.noise_rate", "1.5") != 0
        assert "noise_rate" in capsys.readouterr().err
        assert not (workdir / "d" / "train.csv").exists()


class TestTrain:
    def test_row_two_flags(self, workdir):
        assert _run("train", "--quiet", "--out", "r", "--no-hc-loss", "--no-hc-inference",
                    "--train.epochs", "2", *SMALL) == 0
        report = json.loads((workdir / "r" / "metrics.json").read_text())
        assert report["inference"] == "fine_head"
        cfg = report["config"]
        assert (cfg["multi_level"], cfg["hc_loss"], cfg["hc_inference"]) == (True, False, False)
        assert all(rec["train_loss"]["hc"] is None for rec in report["history"])
        assert report["effective_config"]["train"] == cfg

    def test_seed_count_and_aggregate(self, workdir):
        assert _run("train", "--quiet", "--out", "r", "--seeds", "5", "--seed", "10", "--train.epochs", "2",
                    *SMALL) == 0
        runs = sorted(p.name for p in (workdir / "r").iterdir() if p.is_dir())
        assert runs == [f"seed_{s}" for s in range(10, 15)]
        agg = json.loads((workdir / "r" / "aggregate.json").read_text())
        values = [json.loads((workdir / "r" / r / "metrics.json").read_text())["final"]["test"]["levels"][2]["mf1"]
                  for r in runs]
        assert agg["seeds"] == list(range(10, 15))
        assert agg["levels"][2]["mf1"]["mean"] == pytest.approx(np.mean(values), abs=1e-15)
        assert agg["levels"][2]["mf1"]["std"] == pytest.approx(np.std(values, ddof=1), abs=1e-15)

    def test_missing_hierarchy_file(self, workdir, capsys):
        (workdir / "cfg.json").write_text(json.dumps({"hierarchy": "missing.json"}))
        assert _run("train", "--config", "cfg.json", "--out", "r") != 0
        err = capsys.readouterr().err
        assert "missing.json" in err and "Traceback" not in err

    def test_feature_width_mismatch(self, workdir, capsys):
        assert _run("train", "--out", "r", "--backbone.input_dim", "9", *SMALL) != 0
        assert "input_dim" in capsys.readouterr().err

    def test_identical_invocations(self, workdir):
        for out in ("a", "b"):
            assert _run("train", "--quiet", "--out", out, "--train.epochs", "3", "--train.lr", "0.01", *SMALL) == 0
        assert (workdir / "a" / "metrics.json").read_bytes() == (workdir / "b" / "metrics.json").read_bytes()
        assert (workdir / "a" / "checkpoint.bin").read_bytes() == (workdir / "b" / "checkpoint.bin").read_bytes()

    def test_from_csv_files(self, workdir):
        assert _run("gen-data", "--quiet", "--out", "d", *SMALL) == 0
        (workdir / "cfg.json").write_text(json.dumps({
            "hierarchy": "d/hierarchy.json",
            "data": {"train": "d/train.csv", "val": "d/val.csv", "test": "d/test.csv"},
            "backbone": {"hidden": [6]},
            "train": {"epochs": 2},
        }))
        assert _run("train", "--quiet", "--config", "cfg.json", "--out", "r") == 0
        assert json.loads((workdir / "r" / "metrics.json").read_text())["final"]["test"]["n"] == 10


class TestEvalInfer:
    def test_memorized_training_split(self, workdir):
        assert _run("gen-data", "--quiet", "--out", "d", *SMALL) == 0
        assert _run("train", "--quiet", "--out", "r", "--train.epochs", "150", "--train.lr", "0.02",
                    "--train.batch_size", "8", "--backbone.hidden", "[32]", *SMALL[:6]) == 0
        assert _run("eval", "--quiet", "--checkpoint", "r/checkpoint.bin", "--data", "d/train.csv", "--out", "e") == 0
        report = json.loads((workdir / "e" / "eval.json").read_text())
        assert report["levels"][-1]["oa"] >= 0.99

    def _write_model(self, workdir, spec, widths, logit_rows):
        model = HierarchicalModel.create(spec, BackboneConfig(1, 1), joint_init="indicator")
        for head, row in zip(model.heads, logit_rows):
            head.layers[0].weight.data = np.array([row], dtype=float)
        save_checkpoint(workdir / "m.bin", model)
        header = "f0," + ",".join(f"y{h}" for h in range(1, len(widths) + 1))
        (workdir / "x.csv").write_text(header + "\n1.0," + ",".join("0" for _ in widths) + "\n")

    def test_single_level_modes_identical(self, workdir):
        spec = parse_hierarchy({"levels": [["a", "b", "c"]]})
        self._write_model(workdir, spec, [3], [[0.2, 1.0, -0.4]])
        for mode in ("consensus", "fine"):
            assert _run("eval", "--quiet", "--checkpoint", "m.bin", "--data", "x.csv", "--inference", mode,
                        "--out", mode) == 0
        a = json.loads((workdir / "consensus" / "eval.json").read_text())
        b = json.loads((workdir / "fine" / "eval.json").read_text())
        assert a["levels"] == b["levels"]

    def test_coarse_overrules_fine(self, workdir):
        spec = parse_hierarchy({"levels": [["A", "B"], ["a1", "a2", "b1", "b2"]], "parents": [[0, 0, 1, 1]]})
        # fine head narrowly prefers a1 over b1; coarse head is confident in B
        fine = np.log([0.51, 1e-6, 0.49, 1e-6])
        coarse = np.log([0.05, 0.95])
        self._write_model(workdir, spec, [2, 4], [coarse, fine])
        for mode in ("consensus", "fine"):
            assert _run("infer", "--quiet", "--checkpoint", "m.bin", "--data", "x.csv", "--inference", mode,
                        "--out", mode) == 0
        assert (workdir / "fine" / "predictions.csv").read_text().splitlines()[1] == "1,0,B,a1"
        assert (workdir / "consensus" / "predictions.csv").read_text().splitlines()[1] == "1,2,B,b1"

    def test_infer_without_labels(self, workdir):
        spec = parse_hierarchy({"levels": [["a", "b"]]})
        self._write_model(workdir, spec, [2], [[0.0, 1.0]])
        (workdir / "x.csv").write_text("f0\n1.0\n-1.0\n")
        assert _run("infer", "--quiet", "--checkpoint", "m.bin", "--data", "x.csv", "--out", "p") == 0
        assert (workdir / "p" / "predictions.csv").read_text() == "y1,name1\n1,b\n0,a\n"


class TestExportMatrices:
    def test_untrained_uniform(self, workdir):
        assert _run("train", "--quiet", "--out", "r", "--train.epochs", "1", "--train.lr", "1e-12", *SMALL) == 0
        assert _run("export-matrices", "--quiet", "--checkpoint", "r/checkpoint.bin", "--out", "m") == 0
        index = json.loads((workdir / "m" / "index.json").read_text())["matrices"]
        projections = [m for m in index if m["kind"] == "projection"]
        assert len(projections) == 3 * 2
        assert len([m for m in index if m["kind"] == "log_joint"]) == 3
        for m in projections:
            rows = (workdir / "m" / m["file"]).read_text().splitlines()
            values = np.array([[float(v) for v in r.split(",")[1:]] for r in rows[1:]])
            assert values.shape == tuple(m["shape"])
            np.testing.assert_allclose(values, 1.0 / values.shape[1], atol=1e-9)

    def test_trained_recovers_parents(self, workdir):
        assert _run("train", "--quiet", "--out", "r", "--train.epochs", "100") == 0
        assert _run("export-matrices", "--quiet", "--checkpoint", "r/checkpoint.bin", "--out", "m") == 0
        spec = parse_hierarchy(json.loads((workdir / "m" / "index.json").read_text())["hierarchy"])
        rows = (workdir / "m" / "projection_3_to_2.csv").read_text().splitlines()
        header = rows[0].split(",")[1:]
        hits = 0
        for j, r in enumerate(rows[1:]):
            parts = r.split(",")
            assert parts[0] == spec.level_classes[2][j]
            best = header[int(np.argmax([float(v) for v in parts[1:]]))]
            hits += best == spec.level_classes[1][spec.parent_map[1][j]]
        assert hits / (len(rows) - 1) >= 0.9


class TestGradcheck:
    def test_default_passes(self, workdir):
        assert _run("gradcheck", "--quiet", "--out", "g") == 0
        report = json.loads((workdir / "g" / "gradcheck.json").read_text())
        assert report["passed"]
        names = [g["name"] for g in report["parameters"]]
        assert {"joint.1.2", "joint.1.3", "joint.2.3", "backbone.0.weight"} <= set(names)
        assert all(g["max_rel_error"] <= 1e-5 for g in report["parameters"])

    def test_corrupted_rule_is_named(self, workdir, capsys):
        assert _run("gradcheck", "--quiet", "--out", "g", "--corrupt-op", "logaddexp") == 1
        report = json.loads((workdir / "g" / "gradcheck.json").read_text())
        assert report["failed_ops"] == ["logaddexp"]
        assert "logaddexp" in capsys.readouterr().err


def test_module_entry_point_exit_codes(tmp_path):
    ok = subprocess.run([sys.executable, "-m", "hiercons", "gen-data", "--quiet", "--out", str(tmp_path / "d"),
                         "--data.synthetic.samples_per_class", "4"], capture_output=True, text=True)
    assert ok.returncode == 0 and ok.stdout == ""
    bad = subprocess.run([sys.executable, "-m", "hiercons", "eval", "--checkpoint", str(tmp_path / "none"),
                          "--data", "x.csv"], capture_output=True, text=True)
    assert bad.returncode != 0 and "checkpoint not found" in bad.stderr and bad.stdout == ""
