"""Absolute 3D human pose from multi-view 2D keypoints.

One anisotropic 3D Gaussian per joint, splatted differentiably into
per-joint heatmap channels and optimized against pseudo-ground-truth
heatmaps built from the detections. No learned components; the only inputs
are camera calibrations and 2D keypoints.
"""

from .errors import (BehindCamera, DegenerateGeometry, EmptyMask,
                     JointsplatError, MissingDetection, NonFiniteLoss,
                     SceneFormatError)
from .geometry import (COV2D_STABILIZER, DEPTH_EPSILON, Camera,
                       CovarianceFactors, covariance_eigenvalues,
                       project_point, projection_jacobian,
                       quat_rotation_jacobian, quat_to_rotation,
                       reproject_covariance, triangulate_dlt)
from .loss import render_gradients, render_loss, symmetry_loss, total_loss
from .metrics import (Metrics, compute_metrics, metrics_from_arrays, mpjpe,
                      per_joint_error, run_ablation, sigma_coverage,
                      summarize_ablation)
from .optim import OptimConfig, OptimTrace, optimize, pseudo_gt_grid
from .render import (Heatmap, aggregate_view, pseudo_gt, render_skeleton,
                     splat_joint, write_pgm)
from .scene import (CorruptionSpec, Scene, corrupt, load_results, load_scene,
                    save_results, save_scene, scale_resolution, synth_scene,
                    triangulate_detections)
from .skeleton import (GaussianSkeleton, JointGaussian, SkeletonModel,
                       default_skeleton_17, init_skeleton, limb_length)

__version__ = "0.1.0"

__all__ = [
    "BehindCamera", "DegenerateGeometry", "EmptyMask", "JointsplatError",
    "MissingDetection", "NonFiniteLoss", "SceneFormatError",
    "COV2D_STABILIZER", "DEPTH_EPSILON",
    "Camera", "CovarianceFactors", "covariance_eigenvalues", "project_point",
    "projection_jacobian", "quat_rotation_jacobian", "quat_to_rotation",
    "reproject_covariance", "triangulate_dlt",
    "render_gradients", "render_loss", "symmetry_loss", "total_loss",
    "Metrics", "compute_metrics", "metrics_from_arrays", "mpjpe",
    "per_joint_error", "run_ablation", "sigma_coverage", "summarize_ablation",
    "OptimConfig", "OptimTrace", "optimize", "pseudo_gt_grid",
    "Heatmap", "aggregate_view", "pseudo_gt", "render_skeleton",
    "splat_joint", "write_pgm",
    "CorruptionSpec", "Scene", "corrupt", "load_results", "load_scene",
    "save_results", "save_scene", "scale_resolution", "synth_scene",
    "triangulate_detections",
    "GaussianSkeleton", "JointGaussian", "SkeletonModel",
    "default_skeleton_17", "init_skeleton", "limb_length",
]
