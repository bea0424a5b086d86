"""Command-line interface.

Subcommands cover the whole pipeline: synth (make a scene), corrupt
(degrade it), optimize (fit the Gaussian skeleton), eval (score a results
file), ablate (one-axis sweeps) and dump-heatmaps (debug rasters).

Config precedence is defaults < config file < flags; the fully resolved
config is echoed into every results file. The only environment variable is
JOINTSPLAT_CONFIG, the default config file path. Exit codes: 0 success, 1
validation error, 2 numerical failure; failures print one JSON object to
stderr.
"""

import argparse
import json
import os
import sys
from dataclasses import fields as dataclass_fields

import numpy as np

from .errors import EmptyMask, JointsplatError, NonFiniteLoss
from .metrics import (ABLATION_AXES, DEFAULT_GRIDS, metrics_from_arrays,
                      run_ablation, summarize_ablation)
from .optim import OptimConfig, optimize, pseudo_gt_grid
from .render import aggregate_view, render_skeleton, write_pgm
from .scene import (CorruptionSpec, corrupt, load_results, load_scene,
                    save_results, save_scene, scale_resolution, synth_scene,
                    triangulate_detections)
from .skeleton import init_skeleton

CONFIG_ENV = "JOINTSPLAT_CONFIG"

_CONFIG_KEYS = """\
config file keys (JSON object; flags override the file, the file overrides
built-in defaults):
  max_iters           int, optimizer iteration cap (125)
  early_stop_delta    loss units, min-window improvement threshold (1e-6)
  window              int or null, early-stop window length; null = n_views
  lr_mean             mm, Adam step size for joint means (2.0)
  lr_logscale         log-mm, Adam step size for covariance scales (5e-3)
  lr_quat             unitless, Adam step size for covariance rotations (1e-3)
  adam_beta1          unitless, Adam first-moment decay (0.9)
  adam_beta2          unitless, Adam second-moment decay (0.999)
  adam_eps            gradient units, Adam denominator floor (1e-7)
  accumulation_views  int or null, views per gradient group; null = all
  lambda_sym          unitless, limb-symmetry loss weight (1e-5)
  symm_set            "none" | 1 | 2 | 3, symmetric limb-pair set (1)
  occ_scale           unitless, initial covariance scale on
                      occlusion-prone joints (1.25)
  base_sigma2         mm^2, isotropic initial covariance (3.0)
  freeze_covariance   bool, optimize joint means only (false)
  refresh_pseudo_cov  bool, rebuild pseudo-GT every iteration (false)
"""


class UsageError(ValueError):
    """Bad command line; mapped to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(exc):
    json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
    sys.stderr.write("\n")


def _check_output(path, force):
    if os.path.exists(path) and not force:
        raise UsageError(f"{path} exists; pass --force to overwrite")


def _int_tuple(text):
    return tuple(int(t) for t in text.split(",") if t.strip() != "")


def _accumulate_value(text):
    if text == "all":
        return "all"
    v = int(text)
    if v < 1:
        raise ValueError("must be >= 1")
    return v


def _parse_grid(text):
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if tok in ("all", "none"):
            out.append(tok)
            continue
        try:
            out.append(int(tok))
        except ValueError:
            out.append(float(tok))
    return out


def _load_config_file(path):
    try:
        with open(path, encoding="ascii") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(raw, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    valid = {f.name for f in dataclass_fields(OptimConfig)}
    unknown = set(raw) - valid
    if unknown:
        raise UsageError(f"{path}: unknown config keys {sorted(unknown)}")
    return raw


def _resolve_config(args):
    """defaults < config file < flags. Returns (OptimConfig, echo dict)."""
    resolved = {f.name: f.default for f in dataclass_fields(OptimConfig)}
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    if path:
        resolved.update(_load_config_file(path))
    for key in ("max_iters", "lr_mean", "lambda_sym", "occ_scale", "base_sigma2"):
        v = getattr(args, key, None)
        if v is not None:
            resolved[key] = v
    symm = getattr(args, "symm", None)
    if symm is not None:
        resolved["symm_set"] = symm if symm == "none" else int(symm)
    acc = getattr(args, "accumulate", None)
    if acc is not None:
        resolved["accumulation_views"] = None if acc == "all" else acc
    if getattr(args, "freeze_covariance", None):
        resolved["freeze_covariance"] = True
    return OptimConfig(**resolved), dict(resolved)


def _add_config_flags(p):
    p.add_argument("--config", metavar="PATH",
                   help=f"JSON config file (default: ${CONFIG_ENV}); see the "
                        "key table in the top-level --help")
    p.add_argument("--max-iters", type=int, metavar="N", dest="max_iters",
                   help="optimizer iteration cap (default 125)")
    p.add_argument("--lr-mean", type=float, metavar="MM", dest="lr_mean",
                   help="Adam step size for joint means, mm (default 2.0)")
    p.add_argument("--lambda-sym", type=float, metavar="W", dest="lambda_sym",
                   help="limb-symmetry loss weight, unitless (default 1e-5)")
    p.add_argument("--symm", choices=("none", "1", "2", "3"),
                   help="symmetric limb-pair set (default 1)")
    p.add_argument("--occ-scale", type=float, metavar="S", dest="occ_scale",
                   help="initial covariance scale for occlusion-prone "
                        "joints, unitless (default 1.25)")
    p.add_argument("--base-sigma2", type=float, metavar="MM2", dest="base_sigma2",
                   help="isotropic initial covariance, mm^2 (default 3.0)")
    p.add_argument("--accumulate", type=_accumulate_value, metavar="K",
                   help="views per gradient-accumulation group: a count or "
                        "'all' (default all)")
    p.add_argument("--freeze-covariance", action="store_const", const=True,
                   default=None, dest="freeze_covariance",
                   help="optimize joint means only")


def _scene_init(scene):
    return (scene.init_pose if scene.init_pose is not None
            else triangulate_detections(scene))


def cmd_synth(args):
    scene = synth_scene(args.views, subject_pose=args.subject_pose,
                        image_size=args.image_size, seed=args.seed)
    _check_output(args.output, args.force)
    save_scene(args.output, scene)
    print(f"wrote {args.output}: {args.views} views, "
          f"{scene.skeleton.n_joints} joints, seed {args.seed}")
    return 0


def cmd_corrupt(args):
    scene = load_scene(args.scene)
    spec = CorruptionSpec(
        noise_sigma_2d=args.noise_2d,
        occluded_views=args.occlude_views,
        occluded_joints=args.occlude_joints,
        occlusion_mode=args.occlusion_mode,
        displace_sigma=args.displace_sigma,
        noise_sigma_3d_init=args.init_noise_3d,
        seed=args.seed,
    )
    out = corrupt(scene, spec)
    _check_output(args.output, args.force)
    save_scene(args.output, out)
    print(f"wrote {args.output}")
    return 0


def cmd_optimize(args):
    scene = load_scene(args.scene)
    if all(d is None for row in scene.detections for d in row):
        raise EmptyMask(f"{args.scene}: scene has no detections")
    if args.resolution_scale is not None and args.resolution_scale != 1.0:
        scene = scale_resolution(scene, args.resolution_scale)
    cfg, resolved = _resolve_config(args)
    init = _scene_init(scene)
    sk = init_skeleton(scene.skeleton, init, cfg.base_sigma2, cfg.occ_scale)
    out, trace = optimize(scene, sk, cfg)
    metrics = None
    if scene.gt_pose is not None:
        metrics = metrics_from_arrays(out.means(), out.covariances(),
                                      scene.gt_pose, init).to_dict()
    resolved["resolution_scale"] = args.resolution_scale or 1.0
    _check_output(args.output, args.force)
    save_results(args.output, out, trace, metrics=metrics, config=resolved,
                 meta={"scene": args.scene})
    line = (f"wrote {args.output}: {trace.stop_reason} "
            f"after {trace.iterations_run} iterations")
    if metrics is not None:
        line += f", MPJPE {metrics['mpjpe_mm']:.3f} mm"
    print(line)
    return 0


def cmd_eval(args):
    results = load_results(args.results)
    scene = load_scene(args.scene)
    if scene.gt_pose is None:
        raise UsageError(f"{args.scene}: scene has no ground-truth pose")
    means = np.asarray(results["joints"]["means"], dtype=float)
    covs = np.asarray(results["joints"]["covariances"], dtype=float)
    init = scene.init_pose
    m = metrics_from_arrays(means, covs, scene.gt_pose, init)
    if args.json:
        print(json.dumps(m.to_dict(), indent=2))
        return 0
    print(f"MPJPE: {m.mpjpe:.3f} mm")
    print("within 1/2/3 sigma: "
          f"{m.coverage[0]:.3f} {m.coverage[1]:.3f} {m.coverage[2]:.3f}")
    if m.improvement_vs_init is not None:
        print(f"improvement vs init: {m.improvement_vs_init:.1f}%")
    return 0


def cmd_ablate(args):
    base = {}
    for flag, key in (("views", "views"), ("max_iters", "max_iters"),
                      ("occ_scale", "occ_scale"), ("base_sigma2", "base_sigma2"),
                      ("lr_mean", "lr_mean"), ("lambda_sym", "lambda_sym"),
                      ("resolution_scale", "resolution")):
        v = getattr(args, flag, None)
        if v is not None:
            base[key] = v
    if args.symm is not None:
        base["symm_set"] = args.symm if args.symm == "none" else int(args.symm)
    if args.accumulate is not None:
        base["accumulation"] = args.accumulate
    grid = args.grid if args.grid is not None else DEFAULT_GRIDS[args.axis]
    table = run_ablation(args.axis, grid, base=base, seeds=args.seeds,
                         workers=args.workers, timing=args.timing)
    if args.output:
        _check_output(args.output, args.force)
        with open(args.output, "w", encoding="ascii") as f:
            f.write(table)
    # stdout reports aggregates only; per-seed rows live in the CSV file.
    sys.stdout.write(summarize_ablation(table))
    return 0


def cmd_dump_heatmaps(args):
    scene = load_scene(args.scene)
    cfg, _ = _resolve_config(args)
    init = _scene_init(scene)
    sk = init_skeleton(scene.skeleton, init, cfg.base_sigma2, cfg.occ_scale)
    views = range(scene.n_views) if args.view is None else [args.view]
    if not all(0 <= i < scene.n_views for i in views):
        raise UsageError(f"--view out of range 0..{scene.n_views - 1}")
    if os.path.isdir(args.output) and os.listdir(args.output) and not args.force:
        raise UsageError(f"{args.output} is not empty; pass --force")
    os.makedirs(args.output, exist_ok=True)
    pseudo = pseudo_gt_grid(scene.cameras, scene.detections, sk)
    for i in views:
        cam = scene.cameras[i]
        rendered = render_skeleton(cam, sk, cam.width, cam.height)
        rstack = np.stack([hm.pixels for hm in rendered])
        pstack = np.stack([np.zeros((cam.height, cam.width)) if hm is None
                           else hm.pixels for hm in pseudo[i]])
        np.save(os.path.join(args.output, f"view{i}_rendered.npy"), rstack)
        np.save(os.path.join(args.output, f"view{i}_pseudo.npy"), pstack)
        write_pgm(os.path.join(args.output, f"view{i}_rendered.pgm"),
                  aggregate_view(rendered))
        write_pgm(os.path.join(args.output, f"view{i}_pseudo.pgm"),
                  np.minimum(pstack.sum(axis=0), 1.0))
    print(f"wrote {2 * len(list(views))} arrays + previews to {args.output}")
    return 0


def _build_parser():
    parser = _Parser(
        prog="jointsplat",
        description="Multi-view 3D human pose via one optimized Gaussian "
                    "splat per joint.",
        epilog=_CONFIG_KEYS,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")

    p = sub.add_parser("synth", help="synthesize a camera-circle scene")
    p.add_argument("--views", type=int, default=4, help="camera count (default 4)")
    p.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    p.add_argument("--subject-pose", choices=("canonical", "random-articulated"),
                   default="canonical", dest="subject_pose",
                   help="subject pose family (default canonical)")
    p.add_argument("--image-size", type=int, default=256, dest="image_size",
                   metavar="PX", help="square image side, px (default 256)")
    p.add_argument("-o", "--output", required=True, help="scene JSON path")
    p.add_argument("--force", action="store_true", help="overwrite the output")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("corrupt", help="degrade detections and the init pose")
    p.add_argument("scene", help="input scene JSON")
    p.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    p.add_argument("--noise-2d", type=float, default=0.0, dest="noise_2d",
                   metavar="PX", help="detection noise sigma, px (default 0)")
    p.add_argument("--init-noise-3d", type=float, default=0.0,
                   dest="init_noise_3d", metavar="MM",
                   help="init pose noise sigma, mm (default 0)")
    p.add_argument("--occlude-views", type=_int_tuple, default=(),
                   dest="occlude_views", metavar="I,J",
                   help="view indices hit by the occluder")
    p.add_argument("--occlude-joints", type=_int_tuple, default=(),
                   dest="occlude_joints", metavar="I,J",
                   help="joint indices hit by the occluder")
    p.add_argument("--occlusion-mode", choices=("drop", "displace"),
                   default="drop", dest="occlusion_mode",
                   help="drop detections or displace them (default drop)")
    p.add_argument("--displace-sigma", type=float, default=0.0,
                   dest="displace_sigma", metavar="PX",
                   help="displacement magnitude, px (default 0)")
    p.add_argument("-o", "--output", required=True, help="scene JSON path")
    p.add_argument("--force", action="store_true", help="overwrite the output")
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("optimize", help="fit the Gaussian skeleton to a scene")
    p.add_argument("scene", help="input scene JSON")
    p.add_argument("-o", "--output", required=True, help="results JSON path")
    p.add_argument("--resolution-scale", type=float, default=None,
                   dest="resolution_scale", metavar="F",
                   help="rescale the image plane by F before optimizing")
    _add_config_flags(p)
    p.add_argument("--force", action="store_true", help="overwrite the output")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("eval", help="score a results file against a scene's gt")
    p.add_argument("results", help="results JSON from optimize")
    p.add_argument("scene", help="scene JSON holding the ground truth")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep one axis; aggregates to stdout")
    p.add_argument("--axis", required=True, choices=ABLATION_AXES)
    p.add_argument("--grid", type=_parse_grid, default=None,
                   help="comma-separated grid values, e.g. 10,20,40,60,80,100 "
                        "(default: the axis's standard grid)")
    p.add_argument("--seeds", type=int, default=20,
                   help="seeds per grid point (default 20)")
    p.add_argument("--workers", type=int, default=1,
                   help="parallel worker processes (default 1)")
    p.add_argument("--timing", action="store_true",
                   help="append wall-clock columns (breaks bit-reproducibility)")
    p.add_argument("--views", type=int, default=None,
                   help="camera count for the base scene (default 4)")
    p.add_argument("--resolution-scale", type=float, default=None,
                   dest="resolution_scale", metavar="F",
                   help="image-plane scale for the base scene")
    _add_config_flags(p)
    p.add_argument("-o", "--output", help="write the per-seed CSV here")
    p.add_argument("--force", action="store_true", help="overwrite the output")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("dump-heatmaps",
                       help="raster the init skeleton's splats and pseudo-GT")
    p.add_argument("scene", help="input scene JSON")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--view", type=int, default=None,
                   help="single view index (default: all)")
    _add_config_flags(p)
    p.add_argument("--force", action="store_true",
                   help="write into a non-empty directory")
    p.set_defaults(func=cmd_dump_heatmaps)

    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        _fail(e)
        return 1
    except SystemExit as e:  # argparse exits itself on --help
        return 0 if not e.code else 1
    if not hasattr(args, "func"):
        _fail(UsageError("a subcommand is required (see --help)"))
        return 1
    try:
        return args.func(args)
    except NonFiniteLoss as e:
        _fail(e)
        return 2
    except (JointsplatError, ValueError, OSError, KeyError) as e:
        _fail(e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
