import numpy as np
import pytest

from splatseg.errors import TrainDivergedError
from splatseg.metrics import gaussian_accuracy
from splatseg.projection import project
from splatseg.rasterizer import render_semantic
from splatseg.refine import segment
from splatseg.scene_io import LabelMap
from splatseg.synthetic import BlobSpec, CameraRingSpec, SynthSpec, generate
from splatseg.trainer import TrainConfig, TrainView, ce_loss, make_one_hot, train

from helpers import scene_geometry_bytes


def mini_two_blob(seed=21):
    return SynthSpec(
        blobs=[
            BlobSpec(center=(-1.5, 0.0, 0.0), radius=0.7, count=150, class_id=1),
            BlobSpec(center=(1.5, 0.0, 0.0), radius=0.7, count=150, class_id=2),
        ],
        camera_ring=CameraRingSpec(count=4, radius=6.0, height=1.2),
        image_size=(64, 64),
        seed=seed,
    )


def build_views(result):
    k = result.scene.K
    return [TrainView.build(cam, mask, k) for cam, mask in result.train_views]


class TestOneHot:
    def test_single_pixel(self):
        lm = LabelMap(width=1, height=1, labels=np.array([[2]]))
        assert make_one_hot(lm, 3).T.tolist() == [[0.0, 0.0, 1.0]]

    def test_all_background(self):
        lm = LabelMap(width=2, height=2, labels=np.zeros((2, 2), dtype=np.int32))
        m = make_one_hot(lm, 3)
        assert np.array_equal(m[0], np.ones(4))
        assert np.array_equal(m[1:], np.zeros((2, 4)))

    def test_counting_identities(self, rng):
        labels = rng.integers(0, 5, size=(13, 9)).astype(np.int32)
        lm = LabelMap(width=9, height=13, labels=labels)
        m = make_one_hot(lm, 5)
        assert np.array_equal(m.sum(axis=0), np.ones(13 * 9))
        assert np.array_equal(m.sum(axis=1), np.bincount(labels.ravel(), minlength=5))

    def test_out_of_range_rejected(self):
        lm = LabelMap(width=1, height=1, labels=np.array([[4]]))
        with pytest.raises(ValueError):
            make_one_hot(lm, 3)


class TestCeLoss:
    def test_perfect_prediction_is_zero(self, rng):
        labels = rng.integers(0, 3, size=(4, 5)).astype(np.int32)
        m = make_one_hot(LabelMap(width=5, height=4, labels=labels), 3)
        loss, grad = ce_loss(m, m.copy())
        assert loss == 0.0  # log(1) exactly
        assert np.all(grad[m == 0] == 0)

    def test_two_class_closed_form(self):
        m = np.array([[1.0], [0.0]])
        rendered = np.array([[0.5], [0.5]])
        loss, _ = ce_loss(m, rendered)
        assert np.isclose(loss, np.log(2.0) / 2.0, atol=1e-12)  # 0.34657

    def test_gradient_matches_finite_differences(self, rng):
        k, n = 4, 30
        labels = rng.integers(0, k, size=n)
        m = np.zeros((k, n))
        m[labels, np.arange(n)] = 1.0
        rendered = rng.uniform(0.05, 1.0, size=(k, n))
        _, grad = ce_loss(m, rendered)
        h = 1e-5
        for _ in range(25):
            i, j = rng.integers(0, k), rng.integers(0, n)
            up = rendered.copy()
            up[i, j] += h
            down = rendered.copy()
            down[i, j] -= h
            fd = (ce_loss(m, up)[0] - ce_loss(m, down)[0]) / (2 * h)
            if m[i, j] == 0:
                assert grad[i, j] == 0.0 and abs(fd) < 1e-12
            else:
                assert abs(grad[i, j] - fd) / abs(fd) <= 1e-6

    def test_clamped_region_has_zero_gradient(self):
        m = np.array([[1.0], [0.0]])
        rendered = np.array([[1e-12], [1.0]])
        loss, grad = ce_loss(m, rendered, log_eps=1e-8)
        assert np.isfinite(loss)
        assert grad[0, 0] == 0.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ce_loss(np.zeros((2, 3)), np.zeros((3, 2)))


class TestTrain:
    def test_zero_iterations_is_identity(self):
        result = generate(mini_two_blob())
        scene = result.scene
        before = scene.object_codes.tobytes()
        report = train(scene, build_views(result), TrainConfig(iterations=0))
        assert scene.object_codes.tobytes() == before
        assert report.losses == []
        assert report.final_objective == report.initial_objective

    def test_prelabeled_scene_stays_stable(self):
        # codes already saturated at +-10 logits: the first steps must not blow it up
        result = generate(mini_two_blob())
        scene = result.scene
        k = scene.K
        scene.object_codes[:] = 20.0 * np.eye(k)[result.planted] - 10.0
        views = build_views(result)
        report = train(scene, views, TrainConfig(iterations=10, batch=len(views)))
        assert max(report.losses) <= report.losses[0] + 1e-4

    def test_two_blob_converges(self):
        result = generate(mini_two_blob())
        scene = result.scene
        report = train(scene, build_views(result), TrainConfig(iterations=300))
        assert report.final_objective < 0.05
        acc = gaussian_accuracy(segment(scene).class_of, result.planted)
        assert acc >= 0.99

    def test_reported_objective_matches_independent_recompute(self):
        result = generate(mini_two_blob())
        scene = result.scene
        views = build_views(result)
        cfg = TrainConfig(iterations=40)
        report = train(scene, views, cfg)
        losses = []
        for view in views:
            image, _ = render_semantic(scene, project(scene, view.camera), cfg.normalize_codes)
            rendered = image.data.reshape(-1, scene.K).T
            losses.append(ce_loss(view.one_hot, rendered, cfg.log_eps)[0])
        assert abs(np.mean(losses) - report.final_objective) <= 1e-9

    def test_geometry_is_immutable(self):
        result = generate(mini_two_blob())
        scene = result.scene
        before = scene_geometry_bytes(scene)
        train(scene, build_views(result), TrainConfig(iterations=25))
        assert scene_geometry_bytes(scene) == before

    def test_deterministic_across_runs(self):
        result = generate(mini_two_blob())
        codes = []
        for _ in range(2):
            scene = result.scene.copy()
            train(scene, build_views(result), TrainConfig(iterations=60))
            codes.append(scene.object_codes.tobytes())
        assert codes[0] == codes[1]

    def test_sgd_also_converges(self):
        result = generate(mini_two_blob())
        scene = result.scene
        report = train(
            scene, build_views(result),
            TrainConfig(iterations=200, optimizer="sgd", learning_rate=40.0),
        )
        assert report.final_objective < report.initial_objective

    def test_divergence_aborts(self):
        # a corrupted scene (NaN codes) must abort cleanly, before any update
        result = generate(mini_two_blob())
        scene = result.scene
        scene.object_codes[0, 0] = np.nan
        with pytest.raises(TrainDivergedError, match="iteration 0"):
            train(scene, build_views(result), TrainConfig(iterations=3))

    def test_view_validation(self):
        result = generate(mini_two_blob())
        views = build_views(result)
        with pytest.raises(ValueError, match="at least one view"):
            train(result.scene, [], TrainConfig())
        with pytest.raises(ValueError, match="batch"):
            train(result.scene, views, TrainConfig(batch=99))
        with pytest.raises(ValueError, match="optimizer"):
            train(result.scene, views, TrainConfig(optimizer="lbfgs"))

    def test_batch_mode_matches_full_gradient_direction(self):
        # full-batch training also reaches a low objective
        result = generate(mini_two_blob())
        scene = result.scene
        views = build_views(result)
        report = train(scene, views, TrainConfig(iterations=150, batch=len(views)))
        assert report.final_objective < 0.05
