"""Camera model and projective geometry.

Conventions (used by every module in this package):

  World frame:  right-handed, millimeters. Z is up for synthetic scenes but
                nothing here assumes it.
  Camera frame: standard computer vision. X right, Y down, Z forward along
                the optical axis. extrinsics is the 4x4 world-to-camera
                rigid transform: p_cam = R @ p_world + t.
  Image frame:  pixels, origin at the top-left, u right, v down. Integer
                pixel (ix, iy) samples the continuous plane at (ix, iy).

All arithmetic is double precision. Points must be strictly in front of the
camera (Z > DEPTH_EPSILON) for projection; violations raise BehindCamera
rather than returning garbage.
"""

from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, DegenerateGeometry

# Minimum camera-frame depth in mm. Below this the perspective map and its
# affine approximation are meaningless.
DEPTH_EPSILON = 1.0

# Stabilizer added to both diagonal entries of every reprojected 2D
# covariance, in px^2. Keeps the splat footprint at least ~half a pixel wide
# so rasterization never degenerates.
COV2D_STABILIZER = 0.3

# Clamp inside the closed-form 2x2 eigenvalue square root.
EIGENVALUE_CLAMP = 1e-9

# Relative singular-value threshold declaring a DLT system rank-deficient.
DLT_RANK_TOL = 1e-9

_ORTHONORMAL_TOL = 1e-9


@dataclass(frozen=True)
class Camera:
    """Calibrated pinhole camera.

    Parameters
    ----------
    intrinsics : (3, 3) array
        [[fx, 0, cx], [0, fy, cy], [0, 0, 1]], pixels, zero skew.
    extrinsics : (4, 4) array
        World-to-camera rigid transform; rotation block orthonormal,
        translation in mm.
    width, height : int
        Image size in pixels.
    id : int
        View index.
    """

    intrinsics: np.ndarray
    extrinsics: np.ndarray
    width: int
    height: int
    id: int = 0

    def __post_init__(self):
        K = np.asarray(self.intrinsics, dtype=float)
        T = np.asarray(self.extrinsics, dtype=float)
        if K.shape != (3, 3):
            raise ValueError(f"intrinsics must be 3x3, got {K.shape}")
        if T.shape != (4, 4):
            raise ValueError(f"extrinsics must be 4x4, got {T.shape}")
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "extrinsics", T)
        R = T[:3, :3]
        if not np.allclose(R.T @ R, np.eye(3), atol=_ORTHONORMAL_TOL):
            raise ValueError("extrinsics rotation block is not orthonormal")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")

    @property
    def fx(self):
        return self.intrinsics[0, 0]

    @property
    def fy(self):
        return self.intrinsics[1, 1]

    @property
    def cx(self):
        return self.intrinsics[0, 2]

    @property
    def cy(self):
        return self.intrinsics[1, 2]

    @property
    def rotation(self):
        """3x3 world-to-camera rotation block."""
        return self.extrinsics[:3, :3]

    @property
    def translation(self):
        """World-to-camera translation, mm."""
        return self.extrinsics[:3, 3]

    def projection_matrix(self):
        """3x4 matrix K @ [R | t]."""
        return self.intrinsics @ self.extrinsics[:3, :]

    def to_camera(self, p):
        """World point -> camera-frame point."""
        p = np.asarray(p, dtype=float)
        return self.rotation @ p + self.translation


@dataclass
class CovarianceFactors:
    """Factored 3D covariance: Sigma = R(q) diag(exp(log_scale))^2 R(q)^T.

    Storing standard deviations in the log domain and the rotation as a unit
    quaternion keeps the reconstructed matrix symmetric positive definite
    under any unconstrained update.

    Fields
    ------
    log_scale : (3,) array, log of per-axis standard deviations in mm.
    quat : (4,) array, unit quaternion (w, x, y, z).
    """

    log_scale: np.ndarray
    quat: np.ndarray

    def __post_init__(self):
        self.log_scale = np.asarray(self.log_scale, dtype=float).reshape(3).copy()
        self.quat = np.asarray(self.quat, dtype=float).reshape(4).copy()
        n = np.linalg.norm(self.quat)
        if n == 0.0:
            raise ValueError("zero quaternion")
        self.quat = self.quat / n

    @classmethod
    def isotropic(cls, sigma2):
        """Factors for Sigma = sigma2 * I (sigma2 in mm^2)."""
        if sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        return cls(np.full(3, 0.5 * np.log(sigma2)), np.array([1.0, 0.0, 0.0, 0.0]))

    @property
    def scale(self):
        """Per-axis standard deviations, mm."""
        return np.exp(self.log_scale)

    def rotation(self):
        return quat_to_rotation(self.quat)

    def covariance(self):
        """Reconstructed 3x3 covariance, mm^2."""
        R = self.rotation()
        S = self.scale
        M = R * S[np.newaxis, :]  # R @ diag(S)
        return M @ M.T

    def copy(self):
        return CovarianceFactors(self.log_scale.copy(), self.quat.copy())


def quat_to_rotation(q):
    """Rotation matrix of a (w, x, y, z) quaternion (normalized first)."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_rotation_jacobian(q):
    """d(rotation matrix)/d(quaternion) for a UNIT quaternion.

    Returns a (4, 3, 3) array: component k holds dR/dq_k of the closed-form
    rotation above, valid on the unit sphere. Callers differentiating through
    a normalization must project with (I - q q^T) themselves.
    """
    w, x, y, z = q
    dw = 2 * np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]], dtype=float)
    dx = 2 * np.array([[0, y, z], [y, -2 * x, -w], [z, w, -2 * x]], dtype=float)
    dy = 2 * np.array([[-2 * y, x, w], [x, 0, z], [-w, z, -2 * y]], dtype=float)
    dz = 2 * np.array([[-2 * z, -w, x], [w, -2 * z, y], [x, y, 0]], dtype=float)
    return np.stack([dw, dx, dy, dz])


def project_point(cam, p):
    """Project a world point.

    Returns
    -------
    (pixel, depth) : ((2,) array px, float mm)

    Raises
    ------
    BehindCamera
        If the camera-frame depth is <= DEPTH_EPSILON.
    """
    pc = cam.to_camera(p)
    X, Y, Z = pc
    if Z <= DEPTH_EPSILON:
        raise BehindCamera(f"camera {cam.id}: depth {Z:.3f} mm <= {DEPTH_EPSILON} mm")
    u = cam.fx * X / Z + cam.cx
    v = cam.fy * Y / Z + cam.cy
    return np.array([u, v]), Z


def projection_jacobian(cam, p):
    """2x3 Jacobian of the pixel coordinates w.r.t. CAMERA-FRAME coordinates.

        [[fx/Z, 0,    -fx X/Z^2],
         [0,    fy/Z, -fy Y/Z^2]]

    Raises BehindCamera like project_point.
    """
    pc = cam.to_camera(p)
    return _jacobian_at(cam, pc)


def _jacobian_at(cam, pc):
    X, Y, Z = pc
    if Z <= DEPTH_EPSILON:
        raise BehindCamera(f"camera {cam.id}: depth {Z:.3f} mm <= {DEPTH_EPSILON} mm")
    return np.array(
        [
            [cam.fx / Z, 0.0, -cam.fx * X / (Z * Z)],
            [0.0, cam.fy / Z, -cam.fy * Y / (Z * Z)],
        ]
    )


def reproject_covariance(cam, mean, cov3d):
    """Project a 3D covariance (mm^2) to a 2D pixel covariance (px^2).

    Computes J @ R @ cov3d @ R^T @ J^T + COV2D_STABILIZER * I, where R is the
    rotation block of the extrinsics and J the projection Jacobian at the
    mean. Only the rotation block of the view transform can act on a
    covariance; the translation cancels. The result is symmetric positive
    definite by construction.
    """
    cov3d = np.asarray(cov3d, dtype=float)
    pc = cam.to_camera(mean)
    J = _jacobian_at(cam, pc)
    A = J @ cam.rotation
    cov2d = A @ cov3d @ A.T + COV2D_STABILIZER * np.eye(2)
    # Force exact symmetry; the product is symmetric up to rounding.
    return 0.5 * (cov2d + cov2d.T)


def covariance_eigenvalues(cov2d):
    """Eigenvalues (lam1, lam2) of a symmetric 2x2 matrix, lam1 >= lam2.

    Closed form m +/- sqrt(((a - c)/2)^2 + b^2). The discriminant is a sum of
    squares, never the difference m^2 - det: that form cancels for
    near-isotropic matrices and loses ~eps*m^2/r absolute accuracy. The clamp
    only keeps the square root total under exotic inputs (inf/nan entries).
    """
    a, b = cov2d[0, 0], cov2d[0, 1]
    c = cov2d[1, 1]
    m = 0.5 * (a + c)
    r = np.sqrt(max(EIGENVALUE_CLAMP, (0.5 * (a - c)) ** 2 + b * b))
    return m + r, m - r


def triangulate_dlt(cams, obs):
    """Least-squares 3D point from >=2 calibrated 2D observations.

    Stacks the classic two DLT rows per view, built in intrinsics-normalized
    coordinates (x_hat = (u - cx) / fx against [R|t]) so pixel scale cannot
    skew the algebra, normalizes each row, and solves the system in the W = 1
    gauge via SVD. The finite-point gauge avoids the accuracy loss of the
    unit-homogeneous-norm solution when world coordinates are large (mm).

    Raises
    ------
    DegenerateGeometry
        If the design matrix is rank-deficient (sigma_3/sigma_1 below
        DLT_RANK_TOL): parallel rays or coincident camera centers.
    ValueError
        For fewer than 2 views or non-finite observations.
    """
    if len(cams) < 2:
        raise ValueError("triangulation needs at least 2 views")
    if len(cams) != len(obs):
        raise ValueError("one observation per camera required")
    rows = []
    for cam, uv in zip(cams, obs):
        uv = np.asarray(uv, dtype=float)
        if not np.all(np.isfinite(uv)):
            raise ValueError("non-finite observation")
        pn = cam.extrinsics[:3, :]  # K^-1 P = [R|t]
        xh = (uv[0] - cam.cx) / cam.fx
        yh = (uv[1] - cam.cy) / cam.fy
        r1 = xh * pn[2] - pn[0]
        r2 = yh * pn[2] - pn[1]
        rows.append(r1 / np.linalg.norm(r1))
        rows.append(r2 / np.linalg.norm(r2))
    a_full = np.vstack(rows)
    u_svd, s, vt = np.linalg.svd(a_full[:, :3], full_matrices=False)
    if s[2] / s[0] < DLT_RANK_TOL:
        raise DegenerateGeometry(
            f"DLT design matrix rank-deficient (sigma3/sigma1 = {s[2] / s[0]:.3e})"
        )
    return vt.T @ ((u_svd.T @ -a_full[:, 3]) / s)
