"""Skeleton topology and the Gaussian-per-joint state.

A skeleton is a fixed set of N joints; each joint carries one anisotropic 3D
Gaussian (mean + factored covariance) and a one-hot channel identity equal to
its index. The joint count never changes during optimization.
"""

from dataclasses import dataclass, field

import numpy as np

from .geometry import CovarianceFactors

# Default isotropic initial covariance, mm^2 (Sigma = BASE_SIGMA2 * I).
BASE_SIGMA2 = 3.0

# Extra covariance scale for joints that occluders tend to hit.
OCC_SCALE = 1.25


@dataclass(frozen=True)
class SkeletonModel:
    """Joint names, bone edges, symmetric limb-pair sets, occlusion-prone set.

    symm1/symm2/symm3 are nested lists of ((l1, l2), (r1, r2)) limb pairs;
    each limb is a pair of joint indices whose distance is its length.
    """

    joint_names: tuple
    edges: tuple
    symm1: tuple
    symm2: tuple
    symm3: tuple
    occlusion_prone: frozenset

    def __post_init__(self):
        n = len(self.joint_names)
        for parent, child in self.edges:
            if not (0 <= parent < n and 0 <= child < n):
                raise ValueError("edge index out of range")
        for name, pairs in (("symm1", self.symm1), ("symm2", self.symm2), ("symm3", self.symm3)):
            for left, right in pairs:
                if left == right:
                    raise ValueError(f"{name}: left and right limbs must differ")
                for j1, j2 in (left, right):
                    if not (0 <= j1 < n and 0 <= j2 < n):
                        raise ValueError(f"{name}: joint index out of range")
        if not (set(self.symm1) <= set(self.symm2) <= set(self.symm3)):
            raise ValueError("symm sets must be nested: symm1 <= symm2 <= symm3")
        if not all(0 <= j < n for j in self.occlusion_prone):
            raise ValueError("occlusion_prone index out of range")

    @property
    def n_joints(self):
        return len(self.joint_names)

    def symm_pairs(self, symm_set):
        """Limb pairs for a symmetry setting in {'none', 1, 2, 3}."""
        if symm_set in ("none", None, 0):
            return ()
        return {1: self.symm1, 2: self.symm2, 3: self.symm3}[int(symm_set)]

    def index(self, name):
        return self.joint_names.index(name)


@dataclass
class JointGaussian:
    """One joint: 3D mean (mm), factored covariance, one-hot channel index."""

    mean: np.ndarray
    factors: CovarianceFactors
    channel: int
    opacity: float = 1.0  # fixed; never optimized

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(3).copy()

    def one_hot(self, n):
        c = np.zeros(n)
        c[self.channel] = 1.0
        return c

    def copy(self):
        return JointGaussian(self.mean.copy(), self.factors.copy(), self.channel, self.opacity)


@dataclass
class GaussianSkeleton:
    """A skeleton model plus exactly one JointGaussian per joint."""

    model: SkeletonModel
    joints: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.joints) != self.model.n_joints:
            raise ValueError(
                f"expected {self.model.n_joints} joints, got {len(self.joints)}"
            )
        for j, joint in enumerate(self.joints):
            if joint.channel != j:
                raise ValueError("joint channels must equal their index")

    @property
    def n_joints(self):
        return self.model.n_joints

    def means(self):
        """(N, 3) array of joint means, mm."""
        return np.array([j.mean for j in self.joints])

    def covariances(self):
        """(N, 3, 3) array of reconstructed covariances, mm^2."""
        return np.array([j.factors.covariance() for j in self.joints])

    def copy(self):
        return GaussianSkeleton(self.model, [j.copy() for j in self.joints])


def default_skeleton_17():
    """17-joint skeleton in the common single-person mocap convention.

    Order: root, right leg, left leg, torso/head, right arm, left arm.
    """
    names = (
        "root",
        "r_hip", "r_knee", "r_ankle",
        "l_hip", "l_knee", "l_ankle",
        "spine", "neck", "head_top", "nose",
        "r_shoulder", "r_elbow", "r_wrist",
        "l_shoulder", "l_elbow", "l_wrist",
    )
    i = {n: k for k, n in enumerate(names)}
    edges = (
        (i["root"], i["r_hip"]), (i["r_hip"], i["r_knee"]), (i["r_knee"], i["r_ankle"]),
        (i["root"], i["l_hip"]), (i["l_hip"], i["l_knee"]), (i["l_knee"], i["l_ankle"]),
        (i["root"], i["spine"]), (i["spine"], i["neck"]), (i["neck"], i["head_top"]),
        (i["neck"], i["nose"]),
        (i["neck"], i["r_shoulder"]), (i["r_shoulder"], i["r_elbow"]),
        (i["r_elbow"], i["r_wrist"]),
        (i["neck"], i["l_shoulder"]), (i["l_shoulder"], i["l_elbow"]),
        (i["l_elbow"], i["l_wrist"]),
    )
    # Lower arms and lower legs.
    symm1 = (
        ((i["l_elbow"], i["l_wrist"]), (i["r_elbow"], i["r_wrist"])),
        ((i["l_knee"], i["l_ankle"]), (i["r_knee"], i["r_ankle"])),
    )
    # Plus upper arms and upper legs.
    symm2 = symm1 + (
        ((i["l_shoulder"], i["l_elbow"]), (i["r_shoulder"], i["r_elbow"])),
        ((i["l_hip"], i["l_knee"]), (i["r_hip"], i["r_knee"])),
    )
    # Plus hips-to-root and shoulders-to-neck.
    symm3 = symm2 + (
        ((i["root"], i["l_hip"]), (i["root"], i["r_hip"])),
        ((i["neck"], i["l_shoulder"]), (i["neck"], i["r_shoulder"])),
    )
    occ = frozenset(
        i[n]
        for n in ("r_elbow", "l_elbow", "r_wrist", "l_wrist",
                  "r_knee", "l_knee", "r_ankle", "l_ankle")
    )
    return SkeletonModel(names, edges, symm1, symm2, symm3, occ)


def init_skeleton(model, means, base_sigma2=BASE_SIGMA2, occ_scale=OCC_SCALE):
    """Build a GaussianSkeleton from joint means.

    Every joint starts isotropic with Sigma = base_sigma2 * I; joints in
    model.occlusion_prone get Sigma = occ_scale * base_sigma2 * I. Rotations
    start at identity; scales are stored in the log domain.
    """
    means = np.asarray(means, dtype=float)
    if means.shape != (model.n_joints, 3):
        raise ValueError(f"means must be ({model.n_joints}, 3), got {means.shape}")
    if base_sigma2 <= 0:
        raise ValueError("base_sigma2 must be positive")
    if occ_scale < 1:
        raise ValueError("occ_scale must be >= 1")
    joints = []
    for j in range(model.n_joints):
        s2 = base_sigma2 * (occ_scale if j in model.occlusion_prone else 1.0)
        joints.append(JointGaussian(means[j], CovarianceFactors.isotropic(s2), j))
    return GaussianSkeleton(model, joints)


def limb_length(sk, limb):
    """Euclidean distance in mm between two joint means."""
    j1, j2 = limb
    return float(np.linalg.norm(sk.joints[j1].mean - sk.joints[j2].mean))
