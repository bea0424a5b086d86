"""Objective assembly: masked multi-view L2 render loss + weighted symmetry.

The render term sums, over all (view, joint) pairs with a detection, the
squared difference between rendered and pseudo-GT heatmaps on the union
mask of the pair, normalized by that pair's masked pixel count. Per-pixel
normalization keeps the early-stop threshold meaningful across image sizes
and view counts, and makes each pair's contribution exactly separable.

Default weighting follows the shipped configuration: lambda_sym = 1e-5.
"""

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMask
from .render import MASK_THRESHOLD, RenderGrad, masked_residual, splat_gradients

LAMBDA_SYM = 1e-5


@dataclass
class LossReport:
    render_term: float
    sym_term: float
    total: float
    per_view_render: list
    masked_pixel_count: int


@dataclass
class RenderLossResult:
    """Scalar render term plus the per-pair residuals for the backward pass.

    residuals[i] lists the MaskedResiduals of view i (missing detections and
    empty masks are absent). counts[i] holds the matching pixel counts.
    """

    term: float
    per_view: list
    masked_pixel_count: int
    residuals: list


def render_loss(rendered, pseudo, threshold=MASK_THRESHOLD, frozen=None):
    """Masked L2 loss over an M x N grid of heatmap pairs.

    rendered[i][j] is the splat of joint j in view i; pseudo[i][j] is the
    matching pseudo-GT heatmap or None for a missing detection (excluded).
    Each pair contributes sum(residual^2) / masked_count. frozen, if given,
    maps (i, j) to a fixed pixel index array overriding the union mask; the
    gradient-check harness uses it to probe the loss on a constant mask.

    Raises EmptyMask when no pair contributes at all.
    """
    term = 0.0
    per_view = []
    residuals = []
    total_count = 0
    for i, view_rendered in enumerate(rendered):
        view_term = 0.0
        view_res = []
        for j, heat in enumerate(view_rendered):
            ps = pseudo[i][j]
            if ps is None:
                continue
            idx = frozen.get((i, j)) if frozen is not None else None
            res = masked_residual(heat, ps, threshold, indices=idx)
            if res.count == 0:
                continue
            view_term += float(res.values @ res.values) / res.count
            total_count += res.count
            view_res.append(res)
        term += view_term
        per_view.append(view_term)
        residuals.append(view_res)
    if total_count == 0:
        raise EmptyMask("no (view, joint) pair contributes to the render loss")
    return RenderLossResult(term, per_view, total_count, residuals)


def render_gradients(cams, sk, result):
    """Per-view gradients of the render term w.r.t. all joint parameters.

    Returns a list of RenderGrad, one per view, aligned with result.per_view.
    Each pair's gradient is splat_gradients fed with the residual scaled by
    2 / masked_count, matching the per-pair normalization of render_loss.
    """
    grads = []
    for i, view_res in enumerate(result.residuals):
        grad = RenderGrad.zeros(sk.n_joints)
        for res in view_res:
            scaled = type(res)(res.view, res.joint, res.indices,
                               res.values * (2.0 / res.count))
            d_mean, d_logscale, d_quat = splat_gradients(cams[i], sk.joints[res.joint], scaled)
            grad.add_joint(res.joint, d_mean, d_logscale, d_quat)
        grads.append(grad)
    return grads


def symmetry_loss(sk, pairs):
    """Squared limb-length differences over symmetric pairs, with gradients.

    Returns (scalar mm^2, d_mean (N, 3)). Gradients touch only the four
    endpoint means of each pair; a zero-length limb contributes the
    subgradient 0 for its endpoints (the norm is not differentiable there).
    """
    means = sk.means()
    grad = np.zeros_like(means)
    total = 0.0
    for (l1, l2), (r1, r2) in pairs:
        dl = means[l1] - means[l2]
        dr = means[r1] - means[r2]
        len_l = float(np.linalg.norm(dl))
        len_r = float(np.linalg.norm(dr))
        diff = len_l - len_r
        total += diff * diff
        if len_l > 0.0:
            ul = 2.0 * diff * dl / len_l
            grad[l1] += ul
            grad[l2] -= ul
        if len_r > 0.0:
            ur = 2.0 * diff * dr / len_r
            grad[r1] -= ur
            grad[r2] += ur
    return total, grad


def total_loss(render_term, sym_term, lambda_sym, per_view_render=None,
               masked_pixel_count=0):
    """Combine the two terms: total = render + lambda_sym * sym."""
    if lambda_sym < 0:
        raise ValueError("lambda_sym must be >= 0")
    return LossReport(
        render_term=float(render_term),
        sym_term=float(sym_term),
        total=float(render_term) + lambda_sym * float(sym_term),
        per_view_render=list(per_view_render) if per_view_render is not None else [],
        masked_pixel_count=int(masked_pixel_count),
    )
