"""Differentiable one-channel-per-joint splatting and pseudo ground truth."""

import numpy as np
import pytest

from jointsplat import (
    Camera,
    CovarianceFactors,
    GaussianSkeleton,
    JointGaussian,
    MissingDetection,
    SkeletonModel,
    aggregate_view,
    default_skeleton_17,
    init_skeleton,
    project_point,
    pseudo_gt,
    render_loss,
    render_gradients,
    render_skeleton,
    splat_joint,
    write_pgm,
)
from jointsplat.render import masked_pair, masked_residual

IMAGE = 256


def front_camera(f=1000.0, c=(128.0, 128.0), size=IMAGE):
    intrinsics = np.array([[f, 0.0, c[0]], [0.0, f, c[1]], [0.0, 0.0, 1.0]])
    return Camera(intrinsics, np.eye(4), size, size)


def isotropic_joint(mean, sigma2, channel=0):
    return JointGaussian(np.asarray(mean, dtype=float),
                         CovarianceFactors.isotropic(sigma2), channel)


def on_axis_joint(sigma_eff_px, f=1000.0, depth=2000.0, channel=0):
    """Joint whose projected footprint is isotropic with the given sigma."""
    sigma2_3d = (sigma_eff_px ** 2 - 0.3) * (depth / f) ** 2
    return isotropic_joint([0.0, 0.0, depth], sigma2_3d, channel)


class TestSplat:
    def test_unit_peak_at_center(self):
        cam = front_camera()
        hm = splat_joint(cam, on_axis_joint(4.0), IMAGE, IMAGE)
        assert hm.pixels[128, 128] == 1.0
        assert hm.pixels.max() == 1.0

    def test_value_at_one_sigma(self):
        cam = front_camera()
        hm = splat_joint(cam, on_axis_joint(4.0), IMAGE, IMAGE)
        assert np.allclose(hm.pixels[128, 132], np.exp(-0.5), rtol=1e-12)
        assert np.allclose(hm.pixels[124, 128], np.exp(-0.5), rtol=1e-12)

    @pytest.mark.parametrize("sigma", [2.0, 4.0, 9.0])
    def test_mass_matches_gaussian_integral(self, sigma):
        cam = front_camera()
        hm = splat_joint(cam, on_axis_joint(sigma), IMAGE, IMAGE)
        mass = hm.patch.sum()
        expected = 2.0 * np.pi * np.sqrt(np.linalg.det(hm.cov2d))
        assert abs(mass - expected) / expected < 0.02

    def test_pixels_zero_outside_bbox(self):
        cam = front_camera()
        hm = splat_joint(cam, on_axis_joint(3.0), IMAGE, IMAGE)
        img = hm.pixels
        x0, y0, x1, y1 = hm.bbox
        outside = np.ones_like(img, dtype=bool)
        outside[y0:y1 + 1, x0:x1 + 1] = False
        assert np.all(img[outside] == 0.0)
        assert np.array_equal(img[y0:y1 + 1, x0:x1 + 1], hm.patch)

    def test_behind_camera_flagged_zero(self):
        cam = front_camera()
        hm = splat_joint(cam, isotropic_joint([0.0, 0.0, -500.0], 3.0), IMAGE, IMAGE)
        assert hm.out_of_view
        assert np.all(hm.pixels == 0.0)

    def test_nearer_joint_has_larger_footprint(self):
        cam = front_camera()
        near = splat_joint(cam, isotropic_joint([0.0, 0.0, 1500.0], 3.0), IMAGE, IMAGE)
        far = splat_joint(cam, isotropic_joint([0.0, 0.0, 3000.0], 3.0), IMAGE, IMAGE)
        assert np.trace(near.cov2d) > np.trace(far.cov2d)


class TestRenderSkeleton:
    @pytest.fixture
    def scene(self):
        model = default_skeleton_17()
        rng = np.random.default_rng(2)
        means = rng.normal(scale=150.0, size=(17, 3)) + [0.0, 0.0, 2500.0]
        return front_camera(), model, means

    def test_channel_layout(self, scene):
        cam, model, means = scene
        sk = init_skeleton(model, means, base_sigma2=400.0)
        rendered = render_skeleton(cam, sk, IMAGE, IMAGE)
        assert len(rendered) == 17
        assert [hm.joint for hm in rendered] == list(range(17))

    def test_channel_isolation_is_bit_exact(self, scene):
        cam, model, means = scene
        sk = init_skeleton(model, means, base_sigma2=400.0)
        base = render_skeleton(cam, sk, IMAGE, IMAGE)
        moved = sk.copy()
        moved.joints[5].mean += [40.0, -25.0, 60.0]
        rerendered = render_skeleton(cam, moved, IMAGE, IMAGE)
        for j in range(17):
            if j == 5:
                assert not np.array_equal(base[j].pixels, rerendered[j].pixels)
            else:
                assert base[j].bbox == rerendered[j].bbox
                assert np.array_equal(base[j].patch, rerendered[j].patch)

    def test_joint_permutation_permutes_channels(self, scene):
        cam, model, means = scene
        perm = np.random.default_rng(7).permutation(17)
        sk = init_skeleton(model, means, occ_scale=1.0)
        sk_perm = init_skeleton(model, means[perm], occ_scale=1.0)
        base = render_skeleton(cam, sk, IMAGE, IMAGE)
        permuted = render_skeleton(cam, sk_perm, IMAGE, IMAGE)
        for j in range(17):
            assert base[perm[j]].bbox == permuted[j].bbox
            assert np.array_equal(base[perm[j]].patch, permuted[j].patch)

    def test_all_behind_camera(self, scene):
        cam, model, means = scene
        sk = init_skeleton(model, means - [0.0, 0.0, 6000.0])
        rendered = render_skeleton(cam, sk, IMAGE, IMAGE)
        assert all(hm.out_of_view for hm in rendered)
        assert len(rendered) == 17


class TestPseudoGt:
    def test_matches_splat_when_detection_is_projection(self):
        cam = front_camera()
        g = isotropic_joint([120.0, -80.0, 2200.0], 50.0)
        det, _ = project_point(cam, g.mean)
        ps = pseudo_gt(cam, det, g.factors.covariance(), g.mean, IMAGE, IMAGE)
        hm = splat_joint(cam, g, IMAGE, IMAGE)
        assert ps.bbox == hm.bbox
        assert np.max(np.abs(ps.patch - hm.patch)) < 1e-12

    def test_is_pure_function(self):
        cam = front_camera()
        det = np.array([90.0, 140.0])
        mean = np.array([0.0, 0.0, 2000.0])
        a = pseudo_gt(cam, det, 3.0 * np.eye(3), mean, IMAGE, IMAGE)
        b = pseudo_gt(cam, det, 3.0 * np.eye(3), mean, IMAGE, IMAGE)
        assert a.bbox == b.bbox
        assert np.array_equal(a.patch, b.patch)

    def test_missing_detection_raises(self):
        cam = front_camera()
        mean = np.array([0.0, 0.0, 2000.0])
        with pytest.raises(MissingDetection):
            pseudo_gt(cam, None, 3.0 * np.eye(3), mean, IMAGE, IMAGE)

    def test_margin_10_percent(self):
        cam = front_camera()
        mean = np.array([0.0, 0.0, 2000.0])
        cov = 3.0 * np.eye(3)
        pseudo_gt(cam, np.array([-20.0, 100.0]), cov, mean, IMAGE, IMAGE)
        with pytest.raises(MissingDetection):
            pseudo_gt(cam, np.array([-30.0, 100.0]), cov, mean, IMAGE, IMAGE)
        with pytest.raises(MissingDetection):
            pseudo_gt(cam, np.array([100.0, 290.0]), cov, mean, IMAGE, IMAGE)


class TestMask:
    def test_identical_pair_zero_diff_nonempty_mask(self):
        cam = front_camera()
        hm = splat_joint(cam, on_axis_joint(4.0), IMAGE, IMAGE)
        mask, diff = masked_pair(hm, hm)
        assert mask.sum() > 0
        assert np.all(diff == 0.0)

    def test_disjoint_supports_union(self):
        cam = front_camera()
        a = splat_joint(cam, isotropic_joint([-150.0, 0.0, 2000.0], 30.0), IMAGE, IMAGE)
        b = splat_joint(cam, isotropic_joint([150.0, 0.0, 2000.0], 30.0), IMAGE, IMAGE)
        res = masked_residual(a, b)
        assert res.count == len(a.active_indices()) + len(b.active_indices())

    def test_dimension_mismatch_raises(self):
        cam = front_camera()
        small = front_camera(size=128)
        a = splat_joint(cam, on_axis_joint(3.0), IMAGE, IMAGE)
        b = splat_joint(small, on_axis_joint(3.0), 128, 128)
        with pytest.raises(ValueError):
            masked_pair(a, b)


def single_joint_skeleton(g):
    model = SkeletonModel(("only",), (), (), (), (), frozenset())
    return GaussianSkeleton(joints=(g,), model=model)


def pair_loss(cam, g, ps, idx):
    hm = splat_joint(cam, g, IMAGE, IMAGE)
    res = masked_residual(hm, ps, indices=idx)
    return float(res.values @ res.values) / res.count


class TestSplatGradients:
    def setup_pair(self):
        cam = front_camera()
        g = JointGaussian(np.array([90.0, -60.0, 2100.0]),
                          CovarianceFactors(np.log([2.0, 3.5, 1.4]) / 2.0,
                                            np.array([0.9, 0.2, -0.3, 0.1])),
                          0)
        det, _ = project_point(cam, g.mean)
        ps = pseudo_gt(cam, det + [2.5, -1.5], g.factors.covariance(), g.mean,
                       IMAGE, IMAGE)
        hm = splat_joint(cam, g, IMAGE, IMAGE)
        idx = masked_residual(hm, ps).indices
        return cam, g, ps, idx

    def test_matches_finite_differences(self):
        cam, g, ps, idx = self.setup_pair()
        sk = single_joint_skeleton(g)
        result = render_loss([[splat_joint(cam, g, IMAGE, IMAGE)]], [[ps]],
                             frozen={(0, 0): idx})
        grad = render_gradients([cam], sk, result)[0]
        analytic = np.concatenate([grad.d_mean[0], grad.d_logscale[0], grad.d_quat[0]])

        steps = [1e-4] * 3 + [1e-6] * 3 + [1e-6] * 4
        fd = np.zeros(10)
        for k in range(10):
            gp, gm = g.copy(), g.copy()
            for sign, gg in ((+1.0, gp), (-1.0, gm)):
                if k < 3:
                    gg.mean[k] += sign * steps[k]
                elif k < 6:
                    gg.factors.log_scale[k - 3] += sign * steps[k]
                else:
                    gg.factors.quat[k - 6] += sign * steps[k]
            fd[k] = (pair_loss(cam, gp, ps, idx) - pair_loss(cam, gm, ps, idx)) / (2 * steps[k])
        rel = np.abs(analytic - fd) / np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-8)
        assert rel.max() < 1e-5

    def test_zero_residual_zero_gradient(self):
        cam, g, _, _ = self.setup_pair()
        det, _ = project_point(cam, g.mean)
        ps = pseudo_gt(cam, det, g.factors.covariance(), g.mean, IMAGE, IMAGE)
        sk = single_joint_skeleton(g)
        result = render_loss([[splat_joint(cam, g, IMAGE, IMAGE)]], [[ps]])
        grad = render_gradients([cam], sk, result)[0]
        assert np.all(grad.d_mean == 0.0)
        assert np.all(grad.d_logscale == 0.0)
        assert np.all(grad.d_quat == 0.0)

    def test_translation_equivariance(self):
        """Shifting world and camera together leaves the gradients put."""
        cam, g, ps, idx = self.setup_pair()
        sk = single_joint_skeleton(g)
        result = render_loss([[splat_joint(cam, g, IMAGE, IMAGE)]], [[ps]],
                             frozen={(0, 0): idx})
        grad = render_gradients([cam], sk, result)[0]

        shift = np.array([500.0, -300.0, 200.0])
        ext = np.eye(4)
        ext[:3, :3] = cam.rotation
        ext[:3, 3] = cam.translation - cam.rotation @ shift
        cam2 = Camera(cam.intrinsics, ext, cam.width, cam.height)
        g2 = g.copy()
        g2.mean += shift
        sk2 = single_joint_skeleton(g2)
        det, _ = project_point(cam, g.mean)
        ps2 = pseudo_gt(cam2, det + [2.5, -1.5], g.factors.covariance(), g2.mean,
                        IMAGE, IMAGE)
        result2 = render_loss([[splat_joint(cam2, g2, IMAGE, IMAGE)]], [[ps2]],
                              frozen={(0, 0): idx})
        grad2 = render_gradients([cam2], sk2, result2)[0]
        assert np.max(np.abs(grad.d_logscale - grad2.d_logscale)) < 1e-9
        assert np.max(np.abs(grad.d_mean - grad2.d_mean)) < 1e-9
        assert np.max(np.abs(grad.d_quat - grad2.d_quat)) < 1e-9


class TestResolutionScaling:
    @pytest.mark.parametrize("scale", [0.5, 0.25])
    def test_peak_location_tracks_scale(self, scale):
        cam = front_camera(c=(117.3, 139.8))
        g = isotropic_joint([130.0, -90.0, 2300.0], 200.0)
        full = splat_joint(cam, g, IMAGE, IMAGE)
        k = cam.intrinsics.copy()
        k[:2] *= scale
        size = int(round(IMAGE * scale))
        cam_s = Camera(k, np.eye(4), size, size)
        scaled = splat_joint(cam_s, g, size, size)

        peak_full = np.array(np.unravel_index(np.argmax(full.pixels), full.pixels.shape))
        peak_scaled = np.array(np.unravel_index(np.argmax(scaled.pixels), scaled.pixels.shape))
        assert np.max(np.abs(peak_scaled / scale - peak_full)) <= 1.0 / scale + 1e-9


class TestImageHelpers:
    def test_aggregate_clamps_to_one(self):
        cam = front_camera()
        hms = [splat_joint(cam, on_axis_joint(4.0, channel=c), IMAGE, IMAGE)
               for c in range(2)]
        total = aggregate_view(hms)
        assert total.max() == 1.0
        assert total.shape == (IMAGE, IMAGE)

    def test_write_pgm_format(self, tmp_path):
        cam = front_camera()
        hm = splat_joint(cam, on_axis_joint(4.0), IMAGE, IMAGE)
        path = tmp_path / "view.pgm"
        write_pgm(path, hm.pixels)
        blob = path.read_bytes()
        header = f"P5\n{IMAGE} {IMAGE}\n65535\n".encode()
        assert blob.startswith(header)
        data = blob[len(header):]
        assert len(data) == IMAGE * IMAGE * 2
        offset = (128 * IMAGE + 128) * 2
        assert data[offset:offset + 2] == b"\xff\xff"
