"""Evaluation metrics and ablation sweeps.

MPJPE is absolute throughout: joint-mean Euclidean error in mm with no root
alignment, because camera-space placement is the point of multi-view
estimation. sigma_coverage asks the complementary calibration question:
does each joint's own covariance admit the true position within k standard
deviations.

run_ablation drives one-axis sweeps over synthetic scenes and returns a CSV
table with one row per (grid value, seed); summarize_ablation aggregates it
into the median/IQR table meant for reporting. Wall-clock columns are
opt-in (timing=True) so the default table is bit-reproducible under fixed
seeds.
"""

import csv
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .optim import OptimConfig, optimize
from .scene import (CorruptionSpec, corrupt, scale_resolution, synth_scene,
                    triangulate_detections)
from .skeleton import init_skeleton

ABLATION_AXES = ("noise", "accumulation", "occ_scale", "symm", "resolution",
                 "n_views")

# Default grid per axis: init-noise sigmas in mm, accumulation group sizes,
# covariance scaling factors, symmetry sets, resolution fractions, camera
# counts.
DEFAULT_GRIDS = {
    "noise": (10, 20, 40, 60, 80, 100),
    "accumulation": (1, 2, "all"),
    "occ_scale": (1.25, 1.5, 2.0),
    "symm": ("none", 1, 2, 3),
    "resolution": (1.0, 0.75, 0.5, 0.25),
    "n_views": (4, 5, 6, 7, 8),
}


def per_joint_error(pred, gt):
    """Euclidean distance per joint, mm. Shapes must match exactly."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.ndim != 2 or pred.shape[1] != 3 or pred.shape != gt.shape:
        raise ValueError(
            f"expected matching (N, 3) arrays, got {pred.shape} and {gt.shape}"
        )
    return np.linalg.norm(pred - gt, axis=1)


def mpjpe(pred, gt):
    """Mean per-joint position error, mm. Absolute: no alignment applied."""
    return float(np.mean(per_joint_error(pred, gt)))


def coverage_from_arrays(means, covs, gt, k):
    """sigma_coverage on raw (N, 3) means and (N, 3, 3) covariance arrays."""
    means = np.asarray(means, dtype=float)
    covs = np.asarray(covs, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if k <= 0:
        raise ValueError("k must be positive")
    inside = 0
    for j in range(means.shape[0]):
        d = gt[j] - means[j]
        d2 = float(d @ np.linalg.solve(covs[j], d))
        # Boundary counts as inside; the relative slack keeps an exactly-k
        # offset inside when the factored covariance reconstructs sigma^2
        # one ulp low.
        if d2 <= float(k) ** 2 * (1.0 + 1e-9):
            inside += 1
    return inside / means.shape[0]


def sigma_coverage(sk, gt, k):
    """Fraction of joints whose gt position lies within k standard deviations.

    Mahalanobis test of gt against each joint's own Gaussian; a distance of
    exactly k counts as covered.
    """
    return coverage_from_arrays(sk.means(), sk.covariances(), gt, k)


@dataclass
class Metrics:
    """Evaluation summary for one optimized scene.

    coverage holds the fractions of joints within 1, 2 and 3 standard
    deviations of their own covariance. improvement_vs_init is the percent
    of the initial MPJPE recovered; None when no init pose was available.
    """

    mpjpe: float
    per_joint_error: np.ndarray
    coverage: tuple
    improvement_vs_init: float = None

    def __post_init__(self):
        self.per_joint_error = np.asarray(self.per_joint_error, dtype=float)
        if not np.isclose(self.mpjpe, float(np.mean(self.per_joint_error))):
            raise ValueError("mpjpe must equal the mean of per_joint_error")
        c1, c2, c3 = self.coverage
        if not c1 <= c2 <= c3:
            raise ValueError("coverage must be non-decreasing in sigma")

    def to_dict(self):
        return {
            "mpjpe_mm": self.mpjpe,
            "per_joint_error_mm": self.per_joint_error.tolist(),
            "coverage": {"1_sigma": self.coverage[0],
                         "2_sigma": self.coverage[1],
                         "3_sigma": self.coverage[2]},
            "improvement_vs_init_pct": self.improvement_vs_init,
        }


def metrics_from_arrays(means, covs, gt, init_pose=None):
    errs = per_joint_error(means, gt)
    cov = tuple(coverage_from_arrays(means, covs, gt, k) for k in (1, 2, 3))
    improvement = None
    if init_pose is not None:
        init_err = mpjpe(init_pose, gt)
        final = float(np.mean(errs))
        improvement = (0.0 if init_err == 0
                       else 100.0 * (init_err - final) / init_err)
    return Metrics(float(np.mean(errs)), errs, cov, improvement)


def compute_metrics(sk, gt, init_pose=None):
    """Metrics for an optimized skeleton against a ground-truth pose."""
    return metrics_from_arrays(sk.means(), sk.covariances(), gt, init_pose)


# Sweep profiles. The swept knob should be the limiting factor of the run,
# so each axis fixes corruption scales under which its effect is visible:
# pseudo-GT width (base_sigma2) sized to the actual init uncertainty rather
# than the per-joint shipped default, detection noise heavy enough that view
# grouping matters, occlusions that poison the triangulated init. Overrides
# go through the `base` argument of run_ablation.
_PROFILE_COMMON = {
    "views": 4,
    "subject_pose": "random-articulated",
    "noise_2d": 2.0,
    "init_noise_3d": 40.0,
    "base_sigma2": 4900.0,
    "occ_scale": 1.25,
    "symm_set": 1,
    "accumulation": "all",
    "resolution": 1.0,
    "displace_events": (),
    "displace_sigma": 8.0,
    "max_iters": None,
    "lr_mean": None,
    "lambda_sym": None,
}
_PROFILE_AXIS = {
    "noise": {"noise_2d": 0.25, "base_sigma2": 400.0},
    "accumulation": {"noise_2d": 6.0},
    "occ_scale": {"noise_2d": 0.0, "init_noise_3d": 0.0, "base_sigma2": 10000.0,
                  "symm_set": "none",
                  "displace_events": (((0,), (3, 12, 16)), ((2,), (2, 6, 13)))},
    "symm": {},
    "resolution": {},
    "n_views": {},
}

_COLUMNS = ("axis", "value", "seed", "mpjpe_mm", "init_mpjpe_mm",
            "improvement_pct", "coverage_1s", "coverage_2s", "coverage_3s",
            "iterations", "stop_reason")
_TIMING_COLUMNS = ("runtime_s", "sec_per_iter")


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".9g")


def _validate_grid(axis, grid):
    if axis not in ABLATION_AXES:
        raise ValueError(f"axis must be one of {ABLATION_AXES}, got {axis!r}")
    if len(grid) == 0:
        raise ValueError("grid must be non-empty")
    checks = {
        "noise": lambda v: float(v) >= 0,
        "accumulation": lambda v: v == "all" or int(v) >= 1,
        "occ_scale": lambda v: float(v) >= 1,
        "symm": lambda v: v in ("none", 0, 1, 2, 3),
        "resolution": lambda v: float(v) > 0,
        "n_views": lambda v: int(v) >= 2,
    }
    for v in grid:
        try:
            good = checks[axis](v)
        except (TypeError, ValueError):
            good = False
        if not good:
            raise ValueError(f"{axis}: bad grid value {v!r}")


def _sweep_cell(args):
    """One (grid value, seed) run. Module-level so worker pools can pickle it."""
    axis, value, seed, profile, timing = args
    p = dict(profile)
    if axis == "noise":
        p["init_noise_3d"] = float(value)
    elif axis == "accumulation":
        p["accumulation"] = value
    elif axis == "occ_scale":
        p["occ_scale"] = float(value)
    elif axis == "symm":
        p["symm_set"] = value if value == "none" else int(value)
    elif axis == "resolution":
        p["resolution"] = float(value)
    elif axis == "n_views":
        p["views"] = int(value)

    scene = synth_scene(p["views"], seed=seed, subject_pose=p["subject_pose"])
    cur = scene
    for k, (views, joints) in enumerate(p["displace_events"]):
        cur = corrupt(cur, CorruptionSpec(
            occluded_views=tuple(views), occluded_joints=tuple(joints),
            occlusion_mode="displace", displace_sigma=p["displace_sigma"],
            seed=seed + 300 + 500 * k))
    if p["noise_2d"] > 0 or p["init_noise_3d"] > 0:
        cur = corrupt(cur, CorruptionSpec(noise_sigma_2d=p["noise_2d"],
                                          noise_sigma_3d_init=p["init_noise_3d"],
                                          seed=seed + 100))
    if p["resolution"] != 1.0:
        cur = scale_resolution(cur, p["resolution"])
    init = cur.init_pose if cur.init_pose is not None else triangulate_detections(cur)
    sk0 = init_skeleton(cur.skeleton, init, p["base_sigma2"], p["occ_scale"])
    acc = None if p["accumulation"] == "all" else int(p["accumulation"])
    cfg = OptimConfig(base_sigma2=p["base_sigma2"], occ_scale=p["occ_scale"],
                      symm_set=p["symm_set"], accumulation_views=acc)
    if p["max_iters"] is not None:
        cfg.max_iters = int(p["max_iters"])
    if p["lr_mean"] is not None:
        cfg.lr_mean = float(p["lr_mean"])
    if p["lambda_sym"] is not None:
        cfg.lambda_sym = float(p["lambda_sym"])
    t0 = time.perf_counter()
    out, trace = optimize(cur, sk0, cfg)
    dt = time.perf_counter() - t0
    m = compute_metrics(out, scene.gt_pose, init)
    row = [axis, _fmt(value), str(seed), _fmt(m.mpjpe),
           _fmt(mpjpe(init, scene.gt_pose)), _fmt(m.improvement_vs_init),
           _fmt(m.coverage[0]), _fmt(m.coverage[1]), _fmt(m.coverage[2]),
           str(trace.iterations_run), trace.stop_reason]
    if timing:
        row += [format(dt, ".3f"),
                format(dt / max(trace.iterations_run, 1), ".4f")]
    return row


def run_ablation(axis, grid, base=None, seeds=20, workers=1, timing=False):
    """Sweep one axis over a grid; returns the result table as CSV text.

    One row per (grid value, seed), ordered by grid position then seed
    regardless of worker count. Columns: axis, value, seed, mpjpe_mm,
    init_mpjpe_mm, improvement_pct, coverage_1s/2s/3s, iterations,
    stop_reason; timing=True appends runtime_s and sec_per_iter, the only
    nondeterministic columns.

    base overrides the axis profile (keys of _PROFILE_COMMON). seeds is a
    count (seeds 0..n-1) or an explicit iterable. Per-seed rows exist for
    reproducibility; report medians/IQRs from summarize_ablation, never a
    single row.
    """
    _validate_grid(axis, grid)
    profile = {**_PROFILE_COMMON, **_PROFILE_AXIS[axis], **(base or {})}
    unknown = set(profile) - set(_PROFILE_COMMON)
    if unknown:
        raise ValueError(f"unknown profile keys: {sorted(unknown)}")
    seed_list = list(range(seeds)) if isinstance(seeds, int) else [int(s) for s in seeds]
    if not seed_list:
        raise ValueError("need at least one seed")
    tasks = [(axis, v, s, profile, timing) for v in grid for s in seed_list]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_cell, tasks))
    else:
        rows = [_sweep_cell(t) for t in tasks]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_COLUMNS + (_TIMING_COLUMNS if timing else ()))
    w.writerows(rows)
    return buf.getvalue()


def summarize_ablation(csv_text):
    """Median and interquartile range per grid value, as CSV text.

    Aggregates the per-seed rows of run_ablation over the seed axis,
    preserving grid order. This is the table meant for quoting.
    """
    rows = list(csv.DictReader(io.StringIO(csv_text)))
    if not rows:
        raise ValueError("empty table")

    def med_iqr(vals):
        a = np.asarray(vals, dtype=float)
        return (float(np.median(a)),
                float(np.percentile(a, 75) - np.percentile(a, 25)))

    order = []
    groups = {}
    for r in rows:
        if r["value"] not in groups:
            order.append(r["value"])
            groups[r["value"]] = []
        groups[r["value"]].append(r)
    timing = "sec_per_iter" in rows[0]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["axis", "value", "n_seeds", "mpjpe_median", "mpjpe_iqr",
              "improvement_median", "improvement_iqr"]
    if timing:
        header.append("sec_per_iter_median")
    w.writerow(header)
    for key in order:
        g = groups[key]
        em, ei = med_iqr([r["mpjpe_mm"] for r in g])
        im, ii = med_iqr([r["improvement_pct"] for r in g])
        row = [g[0]["axis"], key, str(len(g)), _fmt(em), _fmt(ei),
               _fmt(im), _fmt(ii)]
        if timing:
            row.append(_fmt(float(np.median(
                [float(r["sec_per_iter"]) for r in g]))))
        w.writerow(row)
    return buf.getvalue()
