import json
from pathlib import Path

import numpy as np
import pytest

from trajcover.cli import main
from trajcover.serialize import read_csv, read_json
from trajcover.trajset import cross_distances, load_set
from trajcover.synthdata import future_in_agent_frame, load_scenes

SYNTH = ["synth", "--n-scenes", "12", "--seed", "4", "--margin", "0.3",
         "--two-lane-prob", "0", "--noise", "0.1"]
FAST_TRAIN = ["--epochs", "3", "--lr0", "0.3"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(SYNTH + ["--out", str(root / "scenes")]) == 0
    assert main(["build-set", "--scenes", str(root / "scenes"), "--out", str(root / "set.json"),
                 "--epsilon", "2", "--preview-svg", str(root / "set.svg")]) == 0
    return root


class TestSynth:
    def test_writes_scenes_and_manifest(self, workdir):
        files = sorted((workdir / "scenes").glob("scene-*.json"))
        assert len(files) == 12
        manifest = read_json(workdir / "scenes" / "manifest.json")
        assert manifest["spec"]["seed"] == 4
        assert manifest["files"] == [p.name for p in files]

    def test_rerun_is_byte_identical(self, workdir, tmp_path):
        assert main(SYNTH + ["--out", str(tmp_path / "again")]) == 0
        for name in sorted(p.name for p in (workdir / "scenes").iterdir()):
            assert (tmp_path / "again" / name).read_bytes() == (workdir / "scenes" / name).read_bytes()


class TestBuildSet:
    def test_coverage_property_validates(self, workdir):
        tset = load_set(workdir / "set.json")
        scenes = load_scenes(workdir / "scenes")
        stack = np.stack([future_in_agent_frame(c).points for c in scenes])
        dists = cross_distances(stack, tset.points, tset.coverage_metric)
        assert dists.min(axis=1).max() <= tset.epsilon + 1e-12
        assert (workdir / "set.svg").read_text().startswith("<svg")

    def test_fixed_size_mode(self, workdir, tmp_path):
        out = tmp_path / "set8.json"
        assert main(["build-set", "--scenes", str(workdir / "scenes"), "--out", str(out),
                     "--size", "4"]) == 0
        assert len(load_set(out)) == 4


class TestRasterize:
    def test_ppm_and_png(self, workdir, tmp_path):
        scene = str(sorted((workdir / "scenes").glob("scene-*.json"))[0])
        assert main(["rasterize", "--scene", scene, "--out", str(tmp_path / "a.ppm")]) == 0
        assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6\n400 400\n")
        assert main(["rasterize", "--scene", scene, "--out", str(tmp_path / "a.png"),
                     "--mode", "map_only"]) == 0
        assert (tmp_path / "a.png").read_bytes().startswith(b"\x89PNG")

    def test_rerun_identical(self, workdir, tmp_path):
        scene = str(sorted((workdir / "scenes").glob("scene-*.json"))[0])
        for name in ("x.ppm", "y.ppm"):
            assert main(["rasterize", "--scene", scene, "--out", str(tmp_path / name)]) == 0
        assert (tmp_path / "x.ppm").read_bytes() == (tmp_path / "y.ppm").read_bytes()


class TestBaseline:
    def test_csv_schema(self, workdir, tmp_path):
        out = tmp_path / "baseline.csv"
        assert main(["baseline", "--scenes", str(workdir / "scenes"), "--out", str(out)]) == 0
        header, rows = read_csv(out)
        assert header == ["scene_id", "best_model", "ade"]
        assert len(rows) == 12
        assert all(r[1] in ("cv_cy", "cv_cyr", "ca_cy", "ca_cyr") for r in rows)


class TestTrainEval:
    def test_train_eval_flow(self, workdir, tmp_path):
        model = tmp_path / "model.json"
        assert main(["train", "--scenes", str(workdir / "scenes"), "--set", str(workdir / "set.json"),
                     "--out", str(model), "--lambda", "1"] + FAST_TRAIN) == 0
        log_header, log_rows = read_csv(str(model) + ".log.csv")
        assert log_header == ["epoch", "step", "loss", "ce_term", "offroad_term"]
        assert len(log_rows) == 3  # 12 scenes, batch 32 -> 1 step per epoch

        out = tmp_path / "eval.csv"
        assert main(["eval", "--scenes", str(workdir / "scenes"), "--model", str(model),
                     "--out", str(out)]) == 0
        header, rows = read_csv(out)
        assert header == ["scene_id", "minade1", "minade5", "minade10", "miss_5_2", "dac", "mean_mode_dist"]
        assert rows[-1][0] == "aggregate"
        assert len(rows) == 13

    def test_pretrain_then_init(self, workdir, tmp_path):
        pre = tmp_path / "pre.json"
        assert main(["pretrain", "--scenes", str(workdir / "scenes"), "--set", str(workdir / "set.json"),
                     "--out", str(pre)] + FAST_TRAIN) == 0
        model = tmp_path / "fine.json"
        assert main(["train", "--scenes", str(workdir / "scenes"), "--init", str(pre),
                     "--out", str(model)] + FAST_TRAIN) == 0
        assert read_json(model)["format"] == "trajcover-model-v1"

    def test_train_without_set_or_init_fails(self, workdir, tmp_path):
        code = main(["train", "--scenes", str(workdir / "scenes"), "--out", str(tmp_path / "m.json")])
        assert code == 2

    def test_eval_physics(self, workdir, tmp_path):
        out = tmp_path / "eval_phys.csv"
        assert main(["eval", "--scenes", str(workdir / "scenes"), "--physics", "--out", str(out)]) == 0
        header, rows = read_csv(out)
        assert header[1] == "minade1"
        agg = rows[-1]
        assert float(agg[1]) >= 0.0

    def test_ordinal_head_trains(self, workdir, tmp_path):
        model = tmp_path / "reg.json"
        assert main(["train", "--scenes", str(workdir / "scenes"), "--set", str(workdir / "set.json"),
                     "--out", str(model), "--head", "ordinal_regression"] + FAST_TRAIN) == 0
        assert read_json(model)["head"] == "ordinal_regression"


class TestErrors:
    def test_unknown_flag_exits_2(self, capsys):
        assert main(["synth", "--bogus-flag", "1"]) == 2
        assert "usage" in capsys.readouterr().err

    def test_no_command_exits_2(self):
        assert main([]) == 2

    def test_unknown_command_exits_2(self):
        assert main(["frobnicate"]) == 2

    def test_missing_scene_dir_exits_3(self, tmp_path):
        assert main(["baseline", "--scenes", str(tmp_path / "nope"), "--out",
                     str(tmp_path / "x.csv")]) == 3

    def test_malformed_scene_exits_3(self, tmp_path):
        bad = tmp_path / "scenes"
        bad.mkdir()
        (bad / "scene-000000.json").write_text("{not json")
        assert main(["baseline", "--scenes", str(bad), "--out", str(tmp_path / "x.csv")]) == 3

    def test_bad_config_value_exits_2(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path / "s"), "--lane-width", "1.0"]) == 2

    def test_model_file_not_checkpoint_exits_3(self, workdir, tmp_path):
        assert main(["eval", "--scenes", str(workdir / "scenes"), "--model", str(workdir / "set.json"),
                     "--out", str(tmp_path / "x.csv")]) == 3


class TestSweep:
    def test_sweep_summary_plots_and_resume(self, workdir, tmp_path):
        out = tmp_path / "sweep"
        args = ["sweep", "--scenes", str(workdir / "scenes"), "--out", str(out),
                "--lambdas", "0,1", "--seeds", "0", "--set-sizes", "4",
                "--epochs", "3", "--lr0", "0.3", "--val-fraction", "0.25"]
        assert main(args) == 0
        header, rows = read_csv(out / "summary.csv")
        assert header[0] == "cell_id"
        assert len(rows) == 3  # two lambda cells + one regression cell
        assert {r[2] for r in rows} == {"ok"}
        assert (out / "plots" / "dac_vs_lambda.svg").exists()
        assert (out / "plots" / "residual_l1_vs_size.svg").exists()
        first = (out / "summary.csv").read_bytes()
        assert main(args) == 0  # resumes completed cells
        assert (out / "summary.csv").read_bytes() == first

    def test_failed_cell_exits_4(self, workdir, tmp_path):
        out = tmp_path / "sweep_bad"
        args = ["sweep", "--scenes", str(workdir / "scenes"), "--out", str(out),
                "--loss-variants", "ce,bogus", "--seeds", "0",
                "--epochs", "2", "--val-fraction", "0.25"]
        assert main(args) == 4
        header, rows = read_csv(out / "summary.csv")
        status = {r[0]: r[2] for r in rows}
        assert any(v == "failed" for v in status.values())
        assert any(v == "ok" for v in status.values())
