import json

import numpy as np
import pytest
from PIL import Image

from splatseg.errors import SceneFormatError
from splatseg.projection import project
from splatseg.scene_io import (
    Camera,
    LabelMap,
    Scene,
    load_cameras,
    load_label_map,
    load_scene,
    save_cameras,
    save_label_map,
    save_scene,
)

from helpers import random_scene

BASE_PROPS = [
    "x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2",
    "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
]


def write_raw_ply(path, names, rows):
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(rows)}"]
    header += [f"property float {n}" for n in names]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode())
        fh.write(np.asarray(rows, dtype="<f4").tobytes())


def one_vertex_row(scale_log=0.0, opacity_logit=0.0):
    row = np.zeros(len(BASE_PROPS), dtype=np.float32)
    row[10:13] = scale_log
    row[9] = opacity_logit
    row[13] = 1.0  # identity quaternion
    return [row]


class TestScenePly:
    def test_scale_stored_as_log(self, tmp_path):
        path = tmp_path / "one.ply"
        write_raw_ply(path, BASE_PROPS, one_vertex_row(scale_log=np.log(0.5)))
        scene = load_scene(path, K=2)
        assert np.allclose(scene.scales[0], 0.5, atol=1e-7)

    def test_opacity_stored_as_logit(self, tmp_path):
        path = tmp_path / "one.ply"
        write_raw_ply(path, BASE_PROPS, one_vertex_row(opacity_logit=0.0))
        scene = load_scene(path, K=2)
        assert scene.opacities[0] == 0.5

    def test_round_trip_random_scenes(self, rng, tmp_path):
        for i in range(8):
            scene = random_scene(rng, n=100, k=3 + i % 3)
            path = tmp_path / f"rt{i}.ply"
            save_scene(scene, path)
            back = load_scene(path)
            assert np.allclose(back.means, scene.means, atol=1e-6)
            assert np.allclose(back.scales, scene.scales, atol=1e-6)
            assert np.allclose(back.rotations, scene.rotations, atol=1e-6)
            assert np.allclose(back.opacities, scene.opacities, atol=1e-6)
            assert np.allclose(back.colors_dc, scene.colors_dc, atol=1e-6)
            assert np.allclose(back.object_codes, scene.object_codes, atol=1e-6)

    def test_empty_scene_round_trip(self, tmp_path):
        scene = Scene(
            means=np.zeros((0, 3)), scales=np.zeros((0, 3)), rotations=np.zeros((0, 4)),
            opacities=np.zeros(0), colors_dc=np.zeros((0, 3)), object_codes=np.zeros((0, 3)),
            class_names=["background", "a", "b"],
        )
        path = tmp_path / "empty.ply"
        save_scene(scene, path)
        back = load_scene(path)
        assert back.n_gaussians == 0 and back.K == 3

    def test_header_lists_code_properties(self, rng, tmp_path):
        path = tmp_path / "k3.ply"
        save_scene(random_scene(rng, n=4, k=3), path)
        header = path.read_bytes().split(b"end_header")[0].decode()
        for i in range(3):
            assert f"property float obj_code_{i}" in header
        assert "obj_code_3" not in header

    def test_load_is_idempotent_across_calls(self, rng, tmp_path):
        path = tmp_path / "twice.ply"
        save_scene(random_scene(rng, n=30), path)
        a, b = load_scene(path), load_scene(path)
        assert np.array_equal(a.opacities, b.opacities)
        assert np.array_equal(a.scales, b.scales)

    def test_codeless_file_gets_uniform_distribution(self, tmp_path):
        path = tmp_path / "plain.ply"
        write_raw_ply(path, BASE_PROPS, one_vertex_row())
        scene = load_scene(path, K=4)
        assert np.array_equal(scene.object_codes, np.zeros((1, 4)))
        probs = scene.class_probabilities()
        assert probs.max() == 1.0 / 4.0  # exactly uniform

    def test_k_mismatch_with_embedded_codes(self, rng, tmp_path):
        path = tmp_path / "k3.ply"
        save_scene(random_scene(rng, n=4, k=3), path)
        with pytest.raises(SceneFormatError, match="K=5"):
            load_scene(path, K=5)

    def test_codeless_file_requires_k(self, tmp_path):
        path = tmp_path / "plain.ply"
        write_raw_ply(path, BASE_PROPS, one_vertex_row())
        with pytest.raises(SceneFormatError, match="K is required"):
            load_scene(path)

    def test_malformed_header(self, tmp_path):
        path = tmp_path / "bad.ply"
        path.write_bytes(b"not a ply\n")
        with pytest.raises(SceneFormatError):
            load_scene(path, K=2)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "short.ply"
        write_raw_ply(path, BASE_PROPS, one_vertex_row())
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(SceneFormatError, match="mismatch"):
            load_scene(path, K=2)

    def test_missing_property(self, tmp_path):
        path = tmp_path / "noopacity.ply"
        names = [p for p in BASE_PROPS if p != "opacity"]
        write_raw_ply(path, names, [np.zeros(len(names), dtype=np.float32)])
        with pytest.raises(SceneFormatError, match="opacity"):
            load_scene(path, K=2)


class TestCameras:
    def record(self, view_id=0, w2c=None):
        if w2c is None:
            w2c = np.eye(4)
        return {
            "id": view_id, "width": 64, "height": 48, "fx": 100.0, "fy": 90.0,
            "cx": 32.0, "cy": 24.0, "world_to_camera": [float(v) for v in np.asarray(w2c).ravel()],
        }

    def test_identity_pose(self, tmp_path):
        path = tmp_path / "cams.json"
        path.write_text(json.dumps([self.record()]))
        cams = load_cameras(path)
        assert len(cams) == 1
        cam, vid = cams[0]
        assert vid == 0
        assert np.array_equal(cam.world_to_camera, np.eye(4))

    def test_view_count_and_id_ordering(self, tmp_path):
        path = tmp_path / "cams.json"
        path.write_text(json.dumps([self.record(5), self.record(2)]))
        cams = load_cameras(path)
        assert len(cams) == 2
        assert [vid for _, vid in cams] == [2, 5]

    def test_known_point_projection(self, tmp_path):
        # pinhole by hand: px = fx * X/Z + cx, py = fy * Y/Z + cy
        path = tmp_path / "cams.json"
        path.write_text(json.dumps([self.record()]))
        cam, _ = load_cameras(path)[0]
        point = np.array([0.5, 0.25, 2.0])
        expected = (100.0 * 0.5 / 2.0 + 32.0, 90.0 * 0.25 / 2.0 + 24.0)

        scene = Scene(
            means=point.reshape(1, 3), scales=np.full((1, 3), 0.1),
            rotations=np.array([[1.0, 0, 0, 0]]), opacities=np.array([0.5]),
            colors_dc=np.zeros((1, 3)), object_codes=np.zeros((1, 2)),
        )
        splats = project(scene, cam)
        assert np.allclose(splats.centers[0], expected, atol=1e-12)

    def test_non_orthonormal_rotation_rejected(self, tmp_path):
        w2c = np.eye(4)
        w2c[0, 0] = 1.5
        path = tmp_path / "cams.json"
        path.write_text(json.dumps([self.record(w2c=w2c)]))
        with pytest.raises(SceneFormatError, match="orthonormal"):
            load_cameras(path)

    def test_missing_field_rejected(self, tmp_path):
        rec = self.record()
        del rec["fx"]
        path = tmp_path / "cams.json"
        path.write_text(json.dumps([rec]))
        with pytest.raises(SceneFormatError, match="fx"):
            load_cameras(path)

    def test_save_load_round_trip(self, tmp_path):
        cam = Camera(fx=120.0, fy=110.0, cx=31.5, cy=23.5, width=64, height=48,
                     world_to_camera=np.eye(4))
        path = tmp_path / "cams.json"
        save_cameras([(cam, 3)], path)
        back, vid = load_cameras(path)[0]
        assert vid == 3 and back.fx == cam.fx and np.array_equal(back.world_to_camera, np.eye(4))


class TestLabelMaps:
    def test_all_zero_png_is_background(self, tmp_path):
        path = tmp_path / "zeros.png"
        Image.fromarray(np.zeros((6, 7), dtype=np.uint8), mode="L").save(path)
        lm = load_label_map(path, K=3)
        assert lm.width == 7 and lm.height == 6
        assert np.array_equal(lm.labels, np.zeros((6, 7), dtype=np.int32))

    def test_value_at_k_rejected(self, tmp_path):
        arr = np.zeros((4, 4), dtype=np.uint8)
        arr[1, 2] = 3
        path = tmp_path / "bad.png"
        Image.fromarray(arr, mode="L").save(path)
        with pytest.raises(SceneFormatError, match=">= K"):
            load_label_map(path, K=3)

    def test_multichannel_rejected(self, tmp_path):
        path = tmp_path / "rgb.png"
        Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(path)
        with pytest.raises(SceneFormatError, match="single-channel"):
            load_label_map(path, K=3)

    def test_round_trip(self, rng, tmp_path):
        labels = rng.integers(0, 5, size=(20, 30)).astype(np.int32)
        lm = LabelMap(width=30, height=20, labels=labels)
        path = tmp_path / "rt.png"
        save_label_map(lm, path)
        back = load_label_map(path, K=5)
        assert np.array_equal(back.labels, labels)

    def test_sixteen_bit_round_trip(self, rng, tmp_path):
        labels = rng.integers(0, 300, size=(8, 8)).astype(np.int32)
        labels[0, 0] = 299
        lm = LabelMap(width=8, height=8, labels=labels)
        path = tmp_path / "wide.png"
        save_label_map(lm, path)
        back = load_label_map(path, K=300)
        assert np.array_equal(back.labels, labels)
