import json

import numpy as np
import pytest
from click.testing import CliRunner

from splatseg.cli import main, parse_views
from splatseg.scene_io import load_cameras, load_label_map, load_scene, save_scene
from splatseg.synthetic import spec_to_dict, two_blob_spec


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


def tiny_spec_file(tmp_path, seed=5):
    """Small two-blob fixture spec kept fast enough for CLI round trips."""
    spec = two_blob_spec(seed=seed, image_size=(48, 48))
    d = spec_to_dict(spec)
    for blob in d["blobs"]:
        blob["count"] = 80
    d["camera_ring"]["count"] = 4
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(d))
    return path


def run_ok(runner, args):
    result = runner.invoke(main, args, catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


class TestParseViews:
    def test_ranges_and_singles(self):
        assert parse_views("0-2,5", [0, 1, 2, 3, 4, 5]) == [0, 1, 2, 5]

    def test_default_is_everything(self):
        assert parse_views(None, [3, 1]) == [3, 1]

    def test_unknown_view_rejected(self):
        import click

        with pytest.raises(click.UsageError, match="not present"):
            parse_views("7", [0, 1])


class TestSynth:
    def test_writes_a_loadable_fixture(self, runner, tmp_path):
        spec_file = tiny_spec_file(tmp_path)
        out = tmp_path / "fix"
        run_ok(runner, ["synth", "--spec", str(spec_file), "-o", str(out)])
        scene = load_scene(out / "scene.ply")
        cameras = load_cameras(out / "cameras.json")
        planted = json.loads((out / "planted_labels.json").read_text())
        assert scene.n_gaussians == 160 and scene.K == 3
        assert len(cameras) == 5  # 4 train + 1 eval
        assert planted["n_train_views"] == 4
        assert len(planted["labels"]) == 160
        for _, vid in cameras:
            load_label_map(out / "masks" / f"mask_{vid:04d}.png", scene.K)
        # scene ships untrained: uniform codes
        assert np.array_equal(scene.object_codes, np.zeros((160, 3)))

    def test_same_seed_is_byte_identical(self, runner, tmp_path):
        spec_file = tiny_spec_file(tmp_path)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        run_ok(runner, ["synth", "--spec", str(spec_file), "-o", str(out_a)])
        run_ok(runner, ["synth", "--spec", str(spec_file), "-o", str(out_b)])
        assert (out_a / "scene.ply").read_bytes() == (out_b / "scene.ply").read_bytes()
        for i in range(5):
            name = f"masks/mask_{i:04d}.png"
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_preset(self, runner, tmp_path):
        out = tmp_path / "three"
        run_ok(runner, ["synth", "--preset", "three-blob", "-o", str(out), "--seed", "2"])
        assert load_scene(out / "scene.ply").K == 4

    def test_spec_and_preset_are_exclusive(self, runner, tmp_path):
        result = runner.invoke(main, ["synth", "--preset", "two-blob",
                                      "--spec", str(tiny_spec_file(tmp_path)), "-o", "x"])
        assert result.exit_code == 2


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli_fix")
    runner = CliRunner()
    run_ok(runner, ["synth", "--spec", str(tiny_spec_file(tmp)), "-o", str(tmp / "fix")])
    return tmp / "fix"


class TestTrain:
    def test_zero_iterations_keeps_codes(self, runner, fixture_dir, tmp_path):
        out = tmp_path / "run0"
        run_ok(runner, [
            "train", "--scene", str(fixture_dir / "scene.ply"),
            "--cameras", str(fixture_dir / "cameras.json"),
            "--masks", str(fixture_dir / "masks"),
            "-o", str(out), "--iterations", "0", "--views", "0-3",
        ])
        before = load_scene(fixture_dir / "scene.ply")
        after = load_scene(out / "scene.ply")
        assert np.array_equal(before.object_codes, after.object_codes)
        report = json.loads((out / "report.json").read_text())
        assert report["iterations"] == 0 and report["losses"] == []

    def test_missing_masks_dir_is_usage_error(self, runner, fixture_dir, tmp_path):
        result = runner.invoke(main, [
            "train", "--scene", str(fixture_dir / "scene.ply"),
            "--cameras", str(fixture_dir / "cameras.json"),
            "--masks", str(tmp_path / "nowhere"),
            "-o", str(tmp_path / "x"),
        ])
        assert result.exit_code == 2

    def test_missing_single_mask_is_usage_error(self, runner, fixture_dir, tmp_path):
        sparse = tmp_path / "sparse_masks"
        sparse.mkdir()
        (sparse / "mask_0000.png").write_bytes(
            (fixture_dir / "masks" / "mask_0000.png").read_bytes()
        )
        result = runner.invoke(main, [
            "train", "--scene", str(fixture_dir / "scene.ply"),
            "--cameras", str(fixture_dir / "cameras.json"),
            "--masks", str(sparse), "-o", str(tmp_path / "x"), "--views", "0-1",
        ])
        assert result.exit_code == 2 and "mask for view 1" in result.output

    def test_config_file_supplies_defaults(self, runner, fixture_dir, tmp_path):
        cfg = tmp_path / "train.toml"
        cfg.write_text("[train]\niterations = 7\nlearning_rate = 0.01\n")
        out = tmp_path / "cfgrun"
        run_ok(runner, [
            "train", "--scene", str(fixture_dir / "scene.ply"),
            "--cameras", str(fixture_dir / "cameras.json"),
            "--masks", str(fixture_dir / "masks"),
            "-o", str(out), "--views", "0-3", "--config", str(cfg),
        ])
        report = json.loads((out / "report.json").read_text())
        assert report["iterations"] == 7

    def test_cli_flag_beats_config_file(self, runner, fixture_dir, tmp_path):
        cfg = tmp_path / "train.toml"
        cfg.write_text("iterations = 7\n")
        out = tmp_path / "flagrun"
        run_ok(runner, [
            "train", "--scene", str(fixture_dir / "scene.ply"),
            "--cameras", str(fixture_dir / "cameras.json"),
            "--masks", str(fixture_dir / "masks"),
            "-o", str(out), "--views", "0-3", "--config", str(cfg), "--iterations", "3",
        ])
        assert json.loads((out / "report.json").read_text())["iterations"] == 3


class TestPipeline:
    def test_end_to_end(self, runner, fixture_dir, tmp_path):
        fix = fixture_dir
        run_dir, ref_dir = tmp_path / "run", tmp_path / "ref"
        run_ok(runner, [
            "train", "--scene", str(fix / "scene.ply"), "--cameras", str(fix / "cameras.json"),
            "--masks", str(fix / "masks"), "-o", str(run_dir),
            "--views", "0-3", "--iterations", "150", "--threads", "2",
        ])
        run_ok(runner, ["refine", "--scene", str(run_dir / "scene.ply"), "-o", str(ref_dir)])
        assert (ref_dir / "segmentation.json").exists()
        assert (ref_dir / "segmentation_colored.ply").exists()

        render_dir = tmp_path / "renders"
        run_ok(runner, [
            "render", "--scene", str(ref_dir / "scene.ply"),
            "--cameras", str(fix / "cameras.json"), "-o", str(render_dir),
            "--views", "4", "--prob-class", "1",
        ])
        assert (render_dir / "label_0004.png").exists()
        assert (render_dir / "prob_1_0004.pgm").exists()

        out_ply = tmp_path / "objects.ply"
        result = run_ok(runner, [
            "extract", "--scene", str(ref_dir / "scene.ply"),
            "--classes", "1,2", "-o", str(out_ply),
        ])
        planted = json.loads((fix / "planted_labels.json").read_text())
        expected = sum(1 for c in planted["labels"] if c in (1, 2))
        assert f"extracted {expected} of 160" in result.output

        metrics_path = tmp_path / "metrics.json"
        result = run_ok(runner, [
            "eval", "--scene", str(ref_dir / "scene.ply"),
            "--cameras", str(fix / "cameras.json"), "--masks", str(fix / "masks"),
            "--views", "4", "-o", str(metrics_path),
        ])
        payload = json.loads(metrics_path.read_text())
        assert payload["miou"] >= 0.9
        assert "pooled" in payload["protocol"]
        assert "mean" in result.output

    def test_train_determinism(self, runner, fixture_dir, tmp_path):
        outs = []
        for name in ("d1", "d2"):
            out = tmp_path / name
            run_ok(runner, [
                "train", "--scene", str(fixture_dir / "scene.ply"),
                "--cameras", str(fixture_dir / "cameras.json"),
                "--masks", str(fixture_dir / "masks"),
                "-o", str(out), "--views", "0-3", "--iterations", "40",
            ])
            outs.append((out / "scene.ply").read_bytes())
        assert outs[0] == outs[1]

    def test_refine_is_idempotent_on_confident_scene(self, runner, fixture_dir, tmp_path):
        # make every code confident, then refine twice: identical scenes out
        scene = load_scene(fixture_dir / "scene.ply")
        planted = json.loads((fixture_dir / "planted_labels.json").read_text())["labels"]
        scene.object_codes[:] = 10.0 * np.eye(scene.K)[np.asarray(planted)]
        confident = tmp_path / "confident.ply"
        save_scene(scene, confident)
        ref1, ref2 = tmp_path / "r1", tmp_path / "r2"
        run_ok(runner, ["refine", "--scene", str(confident), "-o", str(ref1)])
        run_ok(runner, ["refine", "--scene", str(ref1 / "scene.ply"), "-o", str(ref2)])
        assert (ref1 / "scene.ply").read_bytes() == (ref2 / "scene.ply").read_bytes()

    def test_refine_no_filter_flag(self, runner, fixture_dir, tmp_path):
        out = tmp_path / "nofilter"
        result = run_ok(runner, [
            "refine", "--scene", str(fixture_dir / "scene.ply"),
            "-o", str(out), "--no-filter",
        ])
        assert "filtered 0" in result.output

    def test_extract_unknown_class_is_usage_error(self, runner, fixture_dir, tmp_path):
        result = runner.invoke(main, [
            "extract", "--scene", str(fixture_dir / "scene.ply"),
            "--classes", "9", "-o", str(tmp_path / "x.ply"),
        ])
        assert result.exit_code == 2

    def test_eval_perfect_codes_reach_unity(self, runner, fixture_dir, tmp_path):
        # planted one-hot codes reproduce the ground-truth masks
        scene = load_scene(fixture_dir / "scene.ply")
        planted = json.loads((fixture_dir / "planted_labels.json").read_text())["labels"]
        scene.object_codes[:] = 12.0 * np.eye(scene.K)[np.asarray(planted)]
        perfect = tmp_path / "perfect.ply"
        save_scene(scene, perfect)
        metrics_path = tmp_path / "m.json"
        run_ok(runner, [
            "eval", "--scene", str(perfect), "--cameras", str(fixture_dir / "cameras.json"),
            "--masks", str(fixture_dir / "masks"), "-o", str(metrics_path), "--per-view",
        ])
        payload = json.loads(metrics_path.read_text())
        assert payload["miou"] >= 0.99
        assert "per-view" in payload["protocol"]
