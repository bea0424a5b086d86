"""Differentiable one-hot-channel splatting and pseudo-ground-truth heatmaps.

Each joint Gaussian is splatted into its own channel as a unit-peak 2D
Gaussian (footprint from reproject_covariance), so overlapping joints are
supervised independently. Pseudo ground truth for a (view, joint) pair is a
unit-peak 2D Gaussian at the detected keypoint whose covariance comes from
reprojecting the INITIAL 3D covariance; it stays fixed for the whole
optimization.

Rasters are truncated to a 3-sigma bounding box. The truncation decides which
pixels are active (and therefore enter the loss mask); pixel VALUES used by
the loss and the backward pass are always evaluated from the continuous
Gaussian, so the objective stays smooth in the parameters and analytic
gradients agree with finite differences to roundoff.
"""

from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, MissingDetection, NonFiniteLoss
from .geometry import (
    covariance_eigenvalues,
    project_point,
    projection_jacobian,
    quat_rotation_jacobian,
    reproject_covariance,
)

# Pixel values at or below this count as zero for masking purposes. Far below
# exp(-9/2) ~ 0.011, the minimum on the 3-sigma ellipse boundary, so the mask
# is the truncation support.
MASK_THRESHOLD = 1e-4

# Truncation radius in units of sqrt(largest eigenvalue) of cov2d.
TRUNCATION_SIGMAS = 3.0

# Detections up to this fraction of the image size outside the frame are
# still accepted; detectors emit slightly out-of-frame keypoints for cropped
# subjects.
DETECTION_MARGIN = 0.1


@dataclass
class Heatmap:
    """One channel of one view: a truncated unit-peak 2D Gaussian raster.

    patch holds the values inside bbox = (x0, y0, x1, y1), inclusive pixel
    coordinates; everything outside is exactly zero. bbox is None when the
    splat has no support inside the image (off-frame or behind the camera).
    center/cov2d are None only for out-of-view splats.
    """

    view: int
    joint: int
    width: int
    height: int
    center: np.ndarray
    cov2d: np.ndarray
    bbox: tuple
    patch: np.ndarray
    out_of_view: bool = False

    @property
    def pixels(self):
        """Dense height x width image (materialized on demand)."""
        img = np.zeros((self.height, self.width))
        if self.bbox is not None:
            x0, y0, x1, y1 = self.bbox
            img[y0:y1 + 1, x0:x1 + 1] = self.patch
        return img

    def active_indices(self, threshold=MASK_THRESHOLD):
        """(K, 2) int array of (iy, ix) pixels above threshold, row-major."""
        if self.bbox is None:
            return np.zeros((0, 2), dtype=np.int64)
        x0, y0, _, _ = self.bbox
        iy, ix = np.nonzero(self.patch > threshold)
        return np.stack([iy + y0, ix + x0], axis=1).astype(np.int64)

    def evaluate(self, indices):
        """Continuous Gaussian value at integer pixels (iy, ix), untruncated."""
        if self.center is None:
            return np.zeros(len(indices))
        return _gaussian_at(self.center, self.cov2d, indices)


@dataclass
class MaskedResidual:
    """Residual of one (view, joint) pair on its loss mask.

    indices: (K, 2) int (iy, ix); values: rendered - pseudo at those pixels,
    both evaluated from the continuous Gaussians.
    """

    view: int
    joint: int
    indices: np.ndarray
    values: np.ndarray

    @property
    def count(self):
        return len(self.values)


@dataclass
class RenderGrad:
    """Loss gradients w.r.t. every joint's mean, log-scale and quaternion."""

    d_mean: np.ndarray
    d_logscale: np.ndarray
    d_quat: np.ndarray

    @classmethod
    def zeros(cls, n_joints):
        return cls(np.zeros((n_joints, 3)), np.zeros((n_joints, 3)), np.zeros((n_joints, 4)))

    def add_joint(self, j, d_mean, d_logscale, d_quat):
        self.d_mean[j] += d_mean
        self.d_logscale[j] += d_logscale
        self.d_quat[j] += d_quat

    def add(self, other):
        self.d_mean += other.d_mean
        self.d_logscale += other.d_logscale
        self.d_quat += other.d_quat


def _inv2(c):
    """Closed-form inverse of a 2x2 SPD matrix."""
    det = c[0, 0] * c[1, 1] - c[0, 1] * c[1, 0]
    return np.array([[c[1, 1], -c[0, 1]], [-c[1, 0], c[0, 0]]]) / det


def _gaussian_at(center, cov2d, indices):
    """exp(-1/2 d' C^-1 d) at integer pixels (iy, ix); d = pixel - center."""
    q = _inv2(cov2d)
    d = indices[:, ::-1].astype(float) - center
    quad = q[0, 0] * d[:, 0] ** 2 + 2.0 * q[0, 1] * d[:, 0] * d[:, 1] + q[1, 1] * d[:, 1] ** 2
    return np.exp(-0.5 * quad)


def _raster(center, cov2d, width, height):
    """Truncated raster of a unit-peak Gaussian: (bbox, patch) or (None, None).

    bbox is the 3-sigma square (half-extent 3*sqrt(lambda1)) clipped to the
    image; it always covers the 3-sigma ellipse of cov2d.
    """
    if not (np.all(np.isfinite(center)) and np.all(np.isfinite(cov2d))):
        raise NonFiniteLoss("splat center or footprint went non-finite")
    lam1, _ = covariance_eigenvalues(cov2d)
    half = TRUNCATION_SIGMAS * np.sqrt(lam1)
    x0 = max(int(np.floor(center[0] - half)), 0)
    x1 = min(int(np.ceil(center[0] + half)), width - 1)
    y0 = max(int(np.floor(center[1] - half)), 0)
    y1 = min(int(np.ceil(center[1] + half)), height - 1)
    if x0 > x1 or y0 > y1:
        return None, None
    q = _inv2(cov2d)
    dx = np.arange(x0, x1 + 1) - center[0]
    dy = np.arange(y0, y1 + 1) - center[1]
    quad = (
        q[0, 0] * dx[np.newaxis, :] ** 2
        + 2.0 * q[0, 1] * dx[np.newaxis, :] * dy[:, np.newaxis]
        + q[1, 1] * dy[:, np.newaxis] ** 2
    )
    return (x0, y0, x1, y1), np.exp(-0.5 * quad)


def splat_joint(cam, g, width, height):
    """Render one joint Gaussian into its channel for one camera.

    Behind-camera joints yield an all-zero heatmap flagged out_of_view; the
    loss treats such a channel as rendering zero everywhere.
    """
    try:
        center, _ = project_point(cam, g.mean)
    except BehindCamera:
        return Heatmap(cam.id, g.channel, width, height, None, None, None, None,
                       out_of_view=True)
    center = np.asarray(center)
    cov2d = reproject_covariance(cam, g.mean, g.factors.covariance())
    bbox, patch = _raster(center, cov2d, width, height)
    return Heatmap(cam.id, g.channel, width, height, center, cov2d, bbox, patch)


def render_skeleton(cam, sk, width, height):
    """All N channels for one camera; channel j holds only joint j's splat."""
    return [splat_joint(cam, g, width, height) for g in sk.joints]


def pseudo_gt(cam, detection, cov3d_init, mean3d_init, width, height, joint=-1):
    """Pseudo-ground-truth heatmap for one detected keypoint.

    Unit-peak Gaussian at the DETECTED pixel location with covariance
    reprojected from the INITIAL 3D estimate; the caller keeps it fixed for
    the whole optimization.

    Raises MissingDetection when the detection is absent or farther than
    DETECTION_MARGIN * image size outside the frame.
    """
    if detection is None:
        raise MissingDetection(f"view {cam.id}, joint {joint}: no detection")
    detection = np.asarray(detection, dtype=float).reshape(2)
    if not np.all(np.isfinite(detection)):
        raise MissingDetection(f"view {cam.id}, joint {joint}: non-finite detection")
    mx, my = DETECTION_MARGIN * width, DETECTION_MARGIN * height
    if not (-mx <= detection[0] <= width + mx and -my <= detection[1] <= height + my):
        raise MissingDetection(
            f"view {cam.id}, joint {joint}: detection {detection.tolist()} "
            f"outside margin-extended image"
        )
    cov2d = reproject_covariance(cam, mean3d_init, cov3d_init)
    bbox, patch = _raster(detection, cov2d, width, height)
    return Heatmap(cam.id, joint, width, height, detection, cov2d, bbox, patch)


def masked_residual(rendered, pseudo, threshold=MASK_THRESHOLD, indices=None):
    """Union-masked residual of one (view, joint) pair.

    The mask is the union of both heatmaps' active pixels; values on the mask
    come from each continuous Gaussian (rendered side is zero when
    out_of_view). Passing explicit indices freezes the mask, which makes the
    pair loss a smooth function of the Gaussian parameters; gradient checks
    rely on this.
    """
    if indices is None:
        w = rendered.width
        ra = rendered.active_indices(threshold)
        pa = pseudo.active_indices(threshold)
        keys = np.union1d(ra[:, 0] * w + ra[:, 1], pa[:, 0] * w + pa[:, 1])
        indices = np.stack([keys // w, keys % w], axis=1)
    values = rendered.evaluate(indices) - pseudo.evaluate(indices)
    return MaskedResidual(rendered.view, rendered.joint, indices, values)


def masked_pair(rendered, pseudo, threshold=MASK_THRESHOLD):
    """Dense (mask, diff) images for one (view, joint) pair.

    mask = pixels where either heatmap exceeds threshold; diff = rendered -
    pseudo on the mask, zero elsewhere, with values from the continuous
    Gaussians (see masked_residual).
    """
    if (rendered.width, rendered.height) != (pseudo.width, pseudo.height):
        raise ValueError("heatmap dimensions differ")
    res = masked_residual(rendered, pseudo, threshold)
    mask = np.zeros((rendered.height, rendered.width), dtype=bool)
    diff = np.zeros((rendered.height, rendered.width))
    mask[res.indices[:, 0], res.indices[:, 1]] = True
    diff[res.indices[:, 0], res.indices[:, 1]] = res.values
    return mask, diff


def splat_gradients(cam, g, residual):
    """Backward pass of splat_joint for one (view, joint) pair.

    residual holds d(loss)/d(pixel value) at its indices; for a plain L2
    residual image r - p this returns the gradient of 1/2 * sum((r - p)^2).
    Gradients flow through the projected mean AND the projected covariance,
    including the dependence of the projection Jacobian on the mean.

    Chain, per pixel at offset d = pixel - u with C = J R Sigma R' J' + h I,
    Q = C^-1, value v = exp(-1/2 d' Q d):
        dL/du      = sum w Q d                 with w = residual * v
        dL/dC      = 1/2 Q (sum w d d') Q
    then C -> (Sigma, J) -> (mean, log-scale, quaternion) by matrix calculus.
    Verified against finite differences, never trusted from derivation alone.
    """
    zeros = (np.zeros(3), np.zeros(3), np.zeros(4))
    if residual.count == 0 or not np.any(residual.values):
        return zeros
    try:
        (u, v_center), _ = project_point(cam, g.mean)
    except BehindCamera:
        # Out-of-view splat renders zero everywhere: constant, no gradient.
        return zeros
    center = np.array([u, v_center])
    rot_wc = cam.rotation
    p_cam = cam.to_camera(g.mean)
    x, y, z = p_cam
    fx, fy = cam.fx, cam.fy
    jac = projection_jacobian(cam, g.mean)
    a_mat = jac @ rot_wc
    sigma3 = g.factors.covariance()
    cov2d = reproject_covariance(cam, g.mean, sigma3)
    q2 = _inv2(cov2d)

    d = residual.indices[:, ::-1].astype(float) - center
    quad = q2[0, 0] * d[:, 0] ** 2 + 2.0 * q2[0, 1] * d[:, 0] * d[:, 1] + q2[1, 1] * d[:, 1] ** 2
    w = residual.values * np.exp(-0.5 * quad)

    d_center = (d @ q2) * w[:, np.newaxis]
    d_center = d_center.sum(axis=0)
    s2 = (d[:, :, np.newaxis] * d[:, np.newaxis, :] * w[:, np.newaxis, np.newaxis]).sum(axis=0)
    g_cov2d = 0.5 * q2 @ s2 @ q2

    # Covariance path: C = A Sigma A' + h I, A = J R.
    g_sigma3 = a_mat.T @ g_cov2d @ a_mat
    g_a = 2.0 * g_cov2d @ a_mat @ sigma3
    g_jac = g_a @ rot_wc.T

    # Jacobian entries depend on the camera-frame point.
    gx = g_jac[0, 2] * (-fx / z ** 2)
    gy = g_jac[1, 2] * (-fy / z ** 2)
    gz = (
        g_jac[0, 0] * (-fx / z ** 2)
        + g_jac[1, 1] * (-fy / z ** 2)
        + g_jac[0, 2] * (2.0 * fx * x / z ** 3)
        + g_jac[1, 2] * (2.0 * fy * y / z ** 3)
    )
    g_pcam = jac.T @ d_center + np.array([gx, gy, gz])
    g_mean = rot_wc.T @ g_pcam

    # Factor path: Sigma = M M', M = R_q diag(s), s = exp(log_scale).
    s = g.factors.scale
    rq = g.factors.rotation()
    m3 = rq * s[np.newaxis, :]
    g_m3 = 2.0 * g_sigma3 @ m3
    g_logscale = (g_m3 * rq).sum(axis=0) * s
    g_rq = g_m3 * s[np.newaxis, :]
    jq = quat_rotation_jacobian(g.factors.quat)
    g_quat_raw = np.einsum("cab,ab->c", jq, g_rq)
    quat = g.factors.quat
    g_quat = g_quat_raw - quat * (quat @ g_quat_raw)
    return g_mean, g_logscale, g_quat


def aggregate_view(heatmaps):
    """Sum of all channels of one view, clamped to 1, for visual inspection."""
    total = np.zeros((heatmaps[0].height, heatmaps[0].width))
    for hm in heatmaps:
        if hm.bbox is not None:
            x0, y0, x1, y1 = hm.bbox
            total[y0:y1 + 1, x0:x1 + 1] += hm.patch
    return np.minimum(total, 1.0)


def write_pgm(path, pixels):
    """Dump a [0,1] float image as 16-bit big-endian binary PGM."""
    data = np.round(np.clip(pixels, 0.0, 1.0) * 65535.0).astype(">u2")
    h, w = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(data.tobytes())
