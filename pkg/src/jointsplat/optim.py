"""Adam optimization of the Gaussian skeleton with cross-view accumulation.

One iteration is a full pass over all views, split into consecutive groups
of accumulation_views; each group's render gradients are SUMMED (not
averaged), the symmetry gradient is added once, and a single Adam update is
applied. accumulation_views = M therefore gives exactly one update per
multi-view pass; accumulation_views = 1 reproduces standard per-view updates.

Pseudo-ground-truth heatmaps are built once from the initial skeleton and
stay fixed; the Gaussian count never changes (no densification or pruning).
Early stopping compares the minimum loss in two consecutive disjoint windows
of size M.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, EmptyMask, MissingDetection, NonFiniteLoss
from .loss import LAMBDA_SYM, render_gradients, render_loss, symmetry_loss, total_loss
from .render import pseudo_gt, render_skeleton
from .skeleton import BASE_SIGMA2, OCC_SCALE

MAX_ITERS = 125
EARLY_STOP_DELTA = 1e-6

# Adam defaults. eps acts as the reference gradient scale: it must sit
# above the roundoff noise of a converged loss (or the optimizer chases
# femtometer gradients forever and never early-stops) yet far below the
# gradient of a Gaussian tail a few sigma out (or distant joints freeze
# because their updates are suppressed to lr*g/eps ~ 0). 1e-7 clears both
# margins on metric-scale scenes; 1e-3 was measurably too high, stalling
# recovery from >50 mm initialization errors.
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-7
LR_MEAN = 2.0
LR_LOGSCALE = 5e-3
LR_QUAT = 1e-3


@dataclass
class OptimConfig:
    """All optimizer knobs; every field has the shipped default.

    window and accumulation_views default to the view count of the scene
    when left at None. Units: lr_mean is mm per unit normalized gradient;
    sigmas are mm^2 (base_sigma2) and dimensionless (occ_scale).
    """

    max_iters: int = MAX_ITERS
    early_stop_delta: float = EARLY_STOP_DELTA
    window: int = None
    lr_mean: float = LR_MEAN
    lr_logscale: float = LR_LOGSCALE
    lr_quat: float = LR_QUAT
    adam_beta1: float = ADAM_BETA1
    adam_beta2: float = ADAM_BETA2
    adam_eps: float = ADAM_EPS
    accumulation_views: int = None
    lambda_sym: float = LAMBDA_SYM
    symm_set: object = 1
    occ_scale: float = OCC_SCALE
    base_sigma2: float = BASE_SIGMA2
    freeze_covariance: bool = False
    refresh_pseudo_cov: bool = False

    def validate(self, n_views):
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        for name in ("lr_mean", "lr_logscale", "lr_quat"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lambda_sym < 0:
            raise ValueError("lambda_sym must be >= 0")
        acc = self.accumulation_views
        if acc is not None and not (1 <= acc <= n_views):
            raise ValueError(f"accumulation_views must be in [1, {n_views}]")
        if self.symm_set not in ("none", None, 0, 1, 2, 3):
            raise ValueError("symm_set must be one of none, 1, 2, 3")


@dataclass
class OptimTrace:
    reports: list = field(default_factory=list)
    stop_reason: str = "max_iters"
    iterations_run: int = 0
    wall_time: float = 0.0


@dataclass
class AdamState:
    """First/second moment estimates; one slot per parameter array."""

    m_mean: np.ndarray
    v_mean: np.ndarray
    m_logscale: np.ndarray
    v_logscale: np.ndarray
    m_quat: np.ndarray
    v_quat: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n_joints):
        return cls(*(np.zeros((n_joints, k)) for k in (3, 3, 3, 3, 4, 4)))


def pseudo_gt_grid(cams, detections, init_sk):
    """M x N grid of pseudo-GT heatmaps from the INITIAL skeleton.

    Entries are None for missing detections, detections outside the margin,
    or joints behind a camera; the loss excludes those pairs. The grid is
    built once per optimization and never refreshed (the pseudo covariance
    belongs to the initial pose estimate).
    """
    grid = []
    for i, cam in enumerate(cams):
        row = []
        for j, g in enumerate(init_sk.joints):
            det = detections[i][j]
            try:
                row.append(pseudo_gt(cam, det, g.factors.covariance(), g.mean,
                                     cam.width, cam.height, joint=j))
            except (MissingDetection, BehindCamera):
                row.append(None)
        grid.append(row)
    return grid


def early_stop_check(loss_history, window, delta):
    """True iff the min loss of the last two disjoint windows differ < delta."""
    if window <= 0 or len(loss_history) < 2 * window:
        return False
    last = min(loss_history[-window:])
    prev = min(loss_history[-2 * window:-window])
    return abs(last - prev) < delta


def _adam_update(param, grad, m, v, t, lr, beta1, beta2, eps):
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    param -= lr * mhat / (np.sqrt(vhat) + eps)


def accumulate_step(grads, sym_grad, cfg, state, sk):
    """One parameter update from a group of per-view gradients.

    Per-view render gradients are summed, the symmetry gradient (means only)
    is added once, then a single Adam step is applied to every joint's mean,
    log-scale and quaternion (covariance parts skipped under
    freeze_covariance). Quaternions are renormalized after the step.

    Returns the summed (d_mean, d_logscale, d_quat) actually used.
    """
    n = sk.n_joints
    g_mean = np.zeros((n, 3))
    g_logscale = np.zeros((n, 3))
    g_quat = np.zeros((n, 4))
    for g in grads:
        g_mean += g.d_mean
        g_logscale += g.d_logscale
        g_quat += g.d_quat
    g_mean = g_mean + cfg.lambda_sym * sym_grad

    if not (np.all(np.isfinite(g_mean)) and np.all(np.isfinite(g_logscale))
            and np.all(np.isfinite(g_quat))):
        raise NonFiniteLoss("non-finite gradient")

    state.t += 1
    means = sk.means()
    _adam_update(means, g_mean, state.m_mean, state.v_mean, state.t,
                 cfg.lr_mean, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    for j, joint in enumerate(sk.joints):
        joint.mean = means[j]
    if not cfg.freeze_covariance:
        logscales = np.array([j.factors.log_scale for j in sk.joints])
        quats = np.array([j.factors.quat for j in sk.joints])
        _adam_update(logscales, g_logscale, state.m_logscale, state.v_logscale,
                     state.t, cfg.lr_logscale, cfg.adam_beta1, cfg.adam_beta2,
                     cfg.adam_eps)
        _adam_update(quats, g_quat, state.m_quat, state.v_quat, state.t,
                     cfg.lr_quat, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        for j, joint in enumerate(sk.joints):
            joint.factors.log_scale = logscales[j]
            joint.factors.quat = quats[j] / np.linalg.norm(quats[j])
    return g_mean, g_logscale, g_quat


def optimize(scene, skeleton, cfg=None):
    """Refine a Gaussian skeleton against a scene's 2D detections.

    The passed skeleton is treated as the initial estimate: its means seed
    the optimization and its covariances define the (fixed) pseudo-GT
    footprints. Joints with no detection in any view keep their
    initialization. Returns (refined skeleton, trace); the input skeleton is
    not mutated.

    Raises EmptyMask when no (view, joint) pair has a usable detection, and
    NonFiniteLoss (with the partial trace attached) when the loss or a
    gradient goes non-finite.
    """
    cfg = cfg if cfg is not None else OptimConfig()
    cams = scene.cameras
    m_views = len(cams)
    cfg.validate(m_views)
    window = cfg.window if cfg.window is not None else m_views
    acc = cfg.accumulation_views if cfg.accumulation_views is not None else m_views
    pairs = skeleton.model.symm_pairs(cfg.symm_set)

    sk = skeleton.copy()
    pseudo = pseudo_gt_grid(cams, scene.detections, skeleton)
    if all(p is None for row in pseudo for p in row):
        raise EmptyMask("scene has no usable detections")

    trace = OptimTrace()
    state = AdamState.zeros(sk.n_joints)
    groups = [list(range(s, min(s + acc, m_views))) for s in range(0, m_views, acc)]
    t0 = time.perf_counter()
    totals = []

    for _ in range(cfg.max_iters):
        if cfg.refresh_pseudo_cov:
            pseudo = pseudo_gt_grid(cams, scene.detections, sk)
        iter_render = 0.0
        iter_sym_terms = []
        iter_per_view = [0.0] * m_views
        iter_count = 0
        for group in groups:
            try:
                rendered = [render_skeleton(cams[i], sk, cams[i].width, cams[i].height)
                            for i in group]
            except NonFiniteLoss as e:
                trace.wall_time = time.perf_counter() - t0
                e.trace = trace
                raise
            try:
                result = render_loss(rendered, [pseudo[i] for i in group])
            except EmptyMask:
                # This group has nothing to say; other groups still update.
                continue
            sym_term, sym_grad = symmetry_loss(sk, pairs)
            if not np.isfinite(result.term) or not np.isfinite(sym_term):
                trace.wall_time = time.perf_counter() - t0
                raise NonFiniteLoss("non-finite loss", trace=trace)
            grads = render_gradients([cams[i] for i in group], sk, result)
            accumulate_step(grads, sym_grad, cfg, state, sk)
            iter_render += result.term
            iter_sym_terms.append(sym_term)
            for k, i in enumerate(group):
                iter_per_view[i] += result.per_view[k]
            iter_count += result.masked_pixel_count
        if not iter_sym_terms:
            raise EmptyMask("no group produced a masked residual")
        report = total_loss(iter_render, float(np.mean(iter_sym_terms)),
                            cfg.lambda_sym, iter_per_view, iter_count)
        trace.reports.append(report)
        totals.append(report.total)
        trace.iterations_run += 1
        if len(totals) % window == 0 and early_stop_check(totals, window,
                                                          cfg.early_stop_delta):
            trace.stop_reason = "converged"
            break

    trace.wall_time = time.perf_counter() - t0
    return sk, trace
