"""Synthetic captures, corruption models, and scene/result files."""

import json

import numpy as np
import pytest

from jointsplat import (
    CorruptionSpec,
    DegenerateGeometry,
    OptimConfig,
    SceneFormatError,
    corrupt,
    default_skeleton_17,
    init_skeleton,
    load_results,
    load_scene,
    optimize,
    save_results,
    save_scene,
    scale_resolution,
    synth_scene,
    triangulate_detections,
)


class TestSynthScene:
    def test_detections_triangulate_to_ground_truth(self):
        scene = synth_scene(4, seed=0)
        recovered = triangulate_detections(scene)
        assert np.max(np.linalg.norm(recovered - scene.gt_pose, axis=1)) < 1e-6

    def test_same_seed_is_identical(self):
        a = synth_scene(4, seed=42, subject_pose="random-articulated")
        b = synth_scene(4, seed=42, subject_pose="random-articulated")
        assert np.array_equal(a.gt_pose, b.gt_pose)
        for da, db in zip(a.detections, b.detections):
            for pa, pb in zip(da, db):
                assert np.array_equal(pa, pb)

    def test_seed_is_the_only_entropy(self):
        a = synth_scene(4, seed=1, subject_pose="random-articulated")
        b = synth_scene(4, seed=2, subject_pose="random-articulated")
        assert not np.array_equal(a.gt_pose, b.gt_pose)

    def test_view_count_validated(self):
        with pytest.raises(ValueError):
            synth_scene(1)

    def test_unknown_pose_rejected(self):
        with pytest.raises(ValueError):
            synth_scene(4, subject_pose="handstand")

    def test_cameras_see_the_subject(self):
        scene = synth_scene(6, seed=3, subject_pose="random-articulated")
        for row in scene.detections:
            for det in row:
                assert det is not None
                assert -0.1 * 256 <= det[0] <= 1.1 * 256


class TestCorrupt:
    def test_zero_spec_is_identity(self):
        scene = synth_scene(4, seed=5)
        out = corrupt(scene, CorruptionSpec())
        for ra, rb in zip(scene.detections, out.detections):
            for pa, pb in zip(ra, rb):
                assert np.array_equal(pa, pb)
        assert np.array_equal(scene.gt_pose, out.gt_pose)

    def test_input_scene_not_mutated(self):
        scene = synth_scene(4, seed=5)
        frozen = [[None if d is None else d.copy() for d in row]
                  for row in scene.detections]
        gt = scene.gt_pose.copy()
        corrupt(scene, CorruptionSpec(noise_sigma_2d=3.0, noise_sigma_3d_init=20.0,
                                      occluded_views=(0,), occluded_joints=(3,)))
        for ra, rb in zip(scene.detections, frozen):
            for pa, pb in zip(ra, rb):
                assert np.array_equal(pa, pb)
        assert np.array_equal(scene.gt_pose, gt)

    def test_seeded_noise_is_reproducible(self):
        scene = synth_scene(4, seed=5)
        spec = CorruptionSpec(noise_sigma_2d=2.0, noise_sigma_3d_init=40.0, seed=7)
        a = corrupt(scene, spec)
        b = corrupt(scene, spec)
        for ra, rb in zip(a.detections, b.detections):
            for pa, pb in zip(ra, rb):
                assert np.array_equal(pa, pb)
        assert np.array_equal(a.init_pose, b.init_pose)
        c = corrupt(scene, CorruptionSpec(noise_sigma_2d=2.0, seed=8))
        assert not np.array_equal(a.detections[0][0], c.detections[0][0])

    def test_drop_mode_removes_detections(self):
        scene = synth_scene(4, seed=5)
        out = corrupt(scene, CorruptionSpec(occluded_views=(0, 2),
                                            occluded_joints=(13, 16)))
        for view in (0, 2):
            for joint in (13, 16):
                assert out.detections[view][joint] is None
        assert out.detections[1][13] is not None

    def test_displace_mode_moves_detections(self):
        scene = synth_scene(4, seed=5)
        out = corrupt(scene, CorruptionSpec(occluded_views=(1,),
                                            occluded_joints=(2, 6),
                                            occlusion_mode="displace",
                                            displace_sigma=8.0))
        for joint in (2, 6):
            assert out.detections[1][joint] is not None
            shift = np.linalg.norm(out.detections[1][joint] - scene.detections[1][joint])
            assert shift > 2.0
        assert np.array_equal(out.detections[0][2], scene.detections[0][2])

    def test_init_noise_triangulates_then_perturbs(self):
        scene = synth_scene(4, seed=5)
        assert scene.init_pose is None
        out = corrupt(scene, CorruptionSpec(noise_sigma_3d_init=40.0, seed=3))
        assert out.init_pose is not None
        offsets = np.linalg.norm(out.init_pose - scene.gt_pose, axis=1)
        assert offsets.max() > 1.0
        assert offsets.max() < 400.0

    def test_bounds_validated(self):
        scene = synth_scene(4, seed=5)
        with pytest.raises(ValueError):
            corrupt(scene, CorruptionSpec(occluded_views=(4,), occluded_joints=(0,)))
        with pytest.raises(ValueError):
            corrupt(scene, CorruptionSpec(occluded_joints=(17,), occluded_views=(0,)))
        with pytest.raises(ValueError):
            corrupt(scene, CorruptionSpec(noise_sigma_2d=-1.0))
        with pytest.raises(ValueError):
            corrupt(scene, CorruptionSpec(occlusion_mode="blur"))


class TestScaleResolution:
    def test_intrinsics_and_detections_scale(self):
        scene = synth_scene(4, seed=5)
        half = scale_resolution(scene, 0.5)
        cam, cam_h = scene.cameras[0], half.cameras[0]
        assert np.isclose(cam_h.fx, 0.5 * cam.fx)
        assert np.isclose(cam_h.cx, 0.5 * cam.cx)
        assert cam_h.width == 128
        assert np.allclose(half.detections[2][5], 0.5 * scene.detections[2][5])
        assert np.array_equal(half.gt_pose, scene.gt_pose)

    def test_projection_consistency(self):
        from jointsplat import project_point
        scene = synth_scene(4, seed=5)
        half = scale_resolution(scene, 0.5)
        (uv, _) = project_point(scene.cameras[0], scene.gt_pose[0])
        (uv_h, _) = project_point(half.cameras[0], scene.gt_pose[0])
        assert np.allclose(uv_h, 0.5 * uv, atol=1e-9)

    def test_invalid_factor(self):
        scene = synth_scene(4, seed=5)
        with pytest.raises(ValueError):
            scale_resolution(scene, 0.0)
        with pytest.raises(ValueError):
            scale_resolution(scene, -1.0)


class TestSceneFiles:
    def test_round_trip(self, tmp_path):
        scene = synth_scene(4, seed=9, subject_pose="random-articulated")
        scene = corrupt(scene, CorruptionSpec(noise_sigma_2d=1.0,
                                              occluded_views=(1,),
                                              occluded_joints=(5,),
                                              noise_sigma_3d_init=10.0))
        path = tmp_path / "scene.json"
        save_scene(path, scene)
        loaded = load_scene(path)

        assert len(loaded.cameras) == 4
        for ca, cb in zip(scene.cameras, loaded.cameras):
            assert np.max(np.abs(ca.intrinsics - cb.intrinsics)) < 1e-12
            assert np.max(np.abs(ca.extrinsics - cb.extrinsics)) < 1e-12
            assert (ca.width, ca.height) == (cb.width, cb.height)
        for ra, rb in zip(scene.detections, loaded.detections):
            for pa, pb in zip(ra, rb):
                if pa is None:
                    assert pb is None
                else:
                    assert np.max(np.abs(pa - pb)) < 1e-12
        assert np.max(np.abs(scene.gt_pose - loaded.gt_pose)) < 1e-12
        assert np.max(np.abs(scene.init_pose - loaded.init_pose)) < 1e-12

    def test_missing_cameras_key(self, tmp_path):
        scene = synth_scene(4, seed=9)
        path = tmp_path / "broken.json"
        save_scene(path, scene)
        payload = json.loads(path.read_text())
        del payload["cameras"]
        path.write_text(json.dumps(payload))
        with pytest.raises(SceneFormatError, match="cameras"):
            load_scene(path)

    def test_wrong_format_tag(self, tmp_path):
        path = tmp_path / "other.json"
        path.write_text(json.dumps({"format": "something-else", "version": 1}))
        with pytest.raises(SceneFormatError):
            load_scene(path)

    def test_detection_row_mismatch(self, tmp_path):
        scene = synth_scene(4, seed=9)
        path = tmp_path / "scene.json"
        save_scene(path, scene)
        payload = json.loads(path.read_text())
        payload["detections"] = payload["detections"][:2]
        path.write_text(json.dumps(payload))
        with pytest.raises(SceneFormatError):
            load_scene(path)

    def test_not_json(self, tmp_path):
        path = tmp_path / "garbage.json"
        path.write_text("not json {")
        with pytest.raises(SceneFormatError):
            load_scene(path)


class TestResultFiles:
    def test_round_trip(self, tmp_path):
        scene = synth_scene(4, seed=9)
        sk = init_skeleton(default_skeleton_17(), triangulate_detections(scene))
        refined, trace = optimize(scene, sk, OptimConfig(max_iters=5))
        path = tmp_path / "results.json"
        save_results(path, refined, trace, config={"max_iters": 5},
                     meta={"scene": "synthetic"})
        loaded = load_results(path)

        assert loaded["stop_reason"] == trace.stop_reason
        assert loaded["iterations_run"] == trace.iterations_run
        means = np.asarray(loaded["joints"]["means"])
        assert np.max(np.abs(means - refined.means())) < 1e-12
        covs = np.asarray(loaded["joints"]["covariances"])
        assert np.max(np.abs(covs - np.stack(refined.covariances()))) < 1e-12
        assert loaded["config"]["max_iters"] == 5
        assert len(loaded["trace"]) == trace.iterations_run

    def test_wall_time_not_serialized(self, tmp_path):
        """Timing is machine-local; result files stay byte-reproducible."""
        scene = synth_scene(4, seed=9)
        sk = init_skeleton(default_skeleton_17(), triangulate_detections(scene))
        refined, trace = optimize(scene, sk, OptimConfig(max_iters=3))
        path = tmp_path / "results.json"
        save_results(path, refined, trace)
        assert "wall" not in path.read_text()

    def test_rejects_foreign_payload(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"format": "jointsplat-results"}))
        with pytest.raises(SceneFormatError):
            load_results(path)


class TestTriangulateDetections:
    def test_missing_views_still_triangulate(self):
        scene = synth_scene(4, seed=9)
        out = corrupt(scene, CorruptionSpec(occluded_views=(0, 1),
                                            occluded_joints=(5,)))
        pose = triangulate_detections(out)
        assert np.linalg.norm(pose[5] - scene.gt_pose[5]) < 1e-6

    def test_under_two_views_degenerate(self):
        scene = synth_scene(2, seed=9)
        out = corrupt(scene, CorruptionSpec(occluded_views=(0,),
                                            occluded_joints=(5,)))
        with pytest.raises(DegenerateGeometry, match="joint 5"):
            triangulate_detections(out)
