"""Scene files, results files, synthetic rigs, and corruption models.

Scenes are JSON: human-diffable, explicit units in the header, and
self-describing (the skeleton definition travels with the data). All
randomness flows through explicit seeds; nothing else in the repository
draws entropy.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometry, SceneFormatError
from .geometry import Camera, project_point, triangulate_dlt
from .skeleton import SkeletonModel, default_skeleton_17

SCENE_FORMAT = "jointsplat-scene"
RESULTS_FORMAT = "jointsplat-results"
FORMAT_VERSION = 1

# Synthetic rig defaults: cameras on a circle around a standing subject.
CIRCLE_RADIUS = 4000.0
IMAGE_SIZE = 256
FOCAL_FRACTION = 0.43  # focal length as a fraction of image size
CAMERA_HEIGHT = 1400.0


@dataclass
class Scene:
    """Cameras, per-view detections, optional ground truth and init pose.

    detections[i][j] is a length-2 float array (px) or None when joint j is
    missing in view i. Poses are (N, 3) mm arrays.
    """

    cameras: list
    detections: list
    skeleton: SkeletonModel
    gt_pose: np.ndarray = None
    init_pose: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.detections) != len(self.cameras):
            raise SceneFormatError(
                f"detections: expected {len(self.cameras)} rows (one per camera), "
                f"got {len(self.detections)}"
            )
        n = self.skeleton.n_joints
        for i, row in enumerate(self.detections):
            if len(row) != n:
                raise SceneFormatError(
                    f"detections[{i}]: expected {n} entries, got {len(row)}"
                )

    @property
    def n_views(self):
        return len(self.cameras)


@dataclass
class CorruptionSpec:
    """Detection/initialization corruption model.

    noise_sigma_2d: i.i.d. Gaussian noise on every detection (px).
    occluded_views x occluded_joints: pairs hit by the occluder; drop mode
    removes the detection, displace mode pushes it by a per-view shared
    direction of magnitude displace_sigma plus half-magnitude per-joint
    jitter (occluders move detections coherently within a view).
    noise_sigma_3d_init: Gaussian perturbation (mm) of the init pose; when
    the scene has none, the init is first triangulated from the (already
    corrupted) detections.
    """

    noise_sigma_2d: float = 0.0
    occluded_views: tuple = ()
    occluded_joints: tuple = ()
    occlusion_mode: str = "drop"
    displace_sigma: float = 0.0
    noise_sigma_3d_init: float = 0.0
    seed: int = 0

    def validate(self, n_views, n_joints):
        if self.noise_sigma_2d < 0 or self.displace_sigma < 0 or self.noise_sigma_3d_init < 0:
            raise ValueError("sigmas must be >= 0")
        if self.occlusion_mode not in ("drop", "displace"):
            raise ValueError("occlusion_mode must be 'drop' or 'displace'")
        if any(not 0 <= i < n_views for i in self.occluded_views):
            raise ValueError("occluded view index out of range")
        if any(not 0 <= j < n_joints for j in self.occluded_joints):
            raise ValueError("occluded joint index out of range")


def _skeleton_to_dict(model):
    return {
        "joint_names": list(model.joint_names),
        "edges": [list(e) for e in model.edges],
        "symm1": [[list(left), list(right)] for left, right in model.symm1],
        "symm2": [[list(left), list(right)] for left, right in model.symm2],
        "symm3": [[list(left), list(right)] for left, right in model.symm3],
        "occlusion_prone": sorted(model.occlusion_prone),
    }


def _skeleton_from_dict(d, path):
    for key in ("joint_names", "edges", "symm1", "symm2", "symm3", "occlusion_prone"):
        if key not in d:
            raise SceneFormatError(f"{path}: missing key '{key}'")
    try:
        return SkeletonModel(
            joint_names=tuple(d["joint_names"]),
            edges=tuple(tuple(e) for e in d["edges"]),
            symm1=tuple((tuple(l), tuple(r)) for l, r in d["symm1"]),
            symm2=tuple((tuple(l), tuple(r)) for l, r in d["symm2"]),
            symm3=tuple((tuple(l), tuple(r)) for l, r in d["symm3"]),
            occlusion_prone=frozenset(d["occlusion_prone"]),
        )
    except (ValueError, TypeError) as e:
        raise SceneFormatError(f"{path}: {e}") from e


def _camera_from_dict(d, path):
    for key in ("intrinsics", "extrinsics", "width", "height"):
        if key not in d:
            raise SceneFormatError(f"{path}: missing key '{key}'")
    try:
        return Camera(
            intrinsics=np.array(d["intrinsics"], dtype=float),
            extrinsics=np.array(d["extrinsics"], dtype=float),
            width=int(d["width"]),
            height=int(d["height"]),
            id=int(d.get("id", 0)),
        )
    except (ValueError, TypeError) as e:
        raise SceneFormatError(f"{path}: {e}") from e


def _dump_json(path, payload):
    with open(path, "w", encoding="ascii") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
        f.write("\n")


def save_scene(path, scene):
    payload = {
        "format": SCENE_FORMAT,
        "version": FORMAT_VERSION,
        "units": {"length": "mm", "image": "px"},
        "skeleton": _skeleton_to_dict(scene.skeleton),
        "cameras": [
            {
                "id": cam.id,
                "width": cam.width,
                "height": cam.height,
                "intrinsics": cam.intrinsics.tolist(),
                "extrinsics": cam.extrinsics.tolist(),
            }
            for cam in scene.cameras
        ],
        "detections": [
            [None if d is None else [float(d[0]), float(d[1])] for d in row]
            for row in scene.detections
        ],
        "gt_pose": None if scene.gt_pose is None else scene.gt_pose.tolist(),
        "init_pose": None if scene.init_pose is None else scene.init_pose.tolist(),
        "meta": scene.meta,
    }
    _dump_json(path, payload)


def load_scene(path):
    """Parse a scene file; schema violations name the offending field."""
    with open(path, encoding="ascii") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise SceneFormatError(f"{path}: not valid JSON ({e})") from e
    if raw.get("format") != SCENE_FORMAT:
        raise SceneFormatError(f"format: expected '{SCENE_FORMAT}', got {raw.get('format')!r}")
    for key in ("skeleton", "cameras", "detections"):
        if key not in raw:
            raise SceneFormatError(f"missing key '{key}'")
    skeleton = _skeleton_from_dict(raw["skeleton"], "skeleton")
    cameras = [_camera_from_dict(c, f"cameras[{i}]") for i, c in enumerate(raw["cameras"])]
    n = skeleton.n_joints
    m = len(cameras)
    det_raw = raw["detections"]
    if len(det_raw) > m:
        raise SceneFormatError(f"detections: view index {len(det_raw) - 1} >= {m} cameras")
    if len(det_raw) < m:
        raise SceneFormatError(f"detections: expected {m} rows, got {len(det_raw)}")
    detections = []
    for i, row in enumerate(det_raw):
        if len(row) != n:
            raise SceneFormatError(f"detections[{i}]: expected {n} entries, got {len(row)}")
        out = []
        for j, d in enumerate(row):
            if d is None:
                out.append(None)
            else:
                arr = np.asarray(d, dtype=float)
                if arr.shape != (2,):
                    raise SceneFormatError(f"detections[{i}][{j}]: expected a 2-vector")
                out.append(arr)
        detections.append(out)

    def pose(key):
        if raw.get(key) is None:
            return None
        arr = np.asarray(raw[key], dtype=float)
        if arr.shape != (n, 3):
            raise SceneFormatError(f"{key}: expected shape ({n}, 3), got {arr.shape}")
        return arr

    return Scene(cameras, detections, skeleton, pose("gt_pose"), pose("init_pose"),
                 raw.get("meta", {}))


def _canonical_pose():
    """Standing 1.7 m subject, z up, facing +x, left = +y. (17, 3) mm."""
    return np.array([
        [0.0, 0.0, 900.0],       # root
        [0.0, -100.0, 880.0],    # r_hip
        [0.0, -105.0, 480.0],    # r_knee
        [0.0, -110.0, 80.0],     # r_ankle
        [0.0, 100.0, 880.0],     # l_hip
        [0.0, 105.0, 480.0],     # l_knee
        [0.0, 110.0, 80.0],      # l_ankle
        [0.0, 0.0, 1150.0],      # spine
        [0.0, 0.0, 1400.0],      # neck
        [0.0, 0.0, 1680.0],      # head_top
        [60.0, 0.0, 1560.0],     # nose
        [0.0, -180.0, 1380.0],   # r_shoulder
        [0.0, -330.0, 1120.0],   # r_elbow
        [0.0, -380.0, 880.0],    # r_wrist
        [0.0, 180.0, 1380.0],    # l_shoulder
        [0.0, 330.0, 1120.0],    # l_elbow
        [0.0, 380.0, 880.0],     # l_wrist
    ])


def _axis_rotation(axis, angle):
    axis = axis / np.linalg.norm(axis)
    k = np.array([
        [0.0, -axis[2], axis[1]],
        [axis[2], 0.0, -axis[0]],
        [-axis[1], axis[0], 0.0],
    ])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def _articulate(model, pose, rng, max_angle=0.4):
    """Random bounded joint-angle perturbations down the kinematic chains.

    Each bone is rigidly rotated about its parent by a random axis/angle and
    the rotation propagates to descendants, so every limb keeps its canonical
    length (left/right pairs stay equal, which the symmetry loss relies on).
    """
    children = {}
    for parent, child in model.edges:
        children.setdefault(parent, []).append(child)
    out = pose.copy()
    rotations = {0: np.eye(3)}

    def walk(parent):
        for child in children.get(parent, ()):
            local = _axis_rotation(rng.normal(size=3), rng.uniform(-max_angle, max_angle))
            rot = rotations[parent] @ local
            rotations[child] = rot
            out[child] = out[parent] + rot @ (pose[child] - pose[parent])
            walk(child)

    walk(0)
    return out


def _look_at(eye, target):
    """World-to-camera rotation: x right, y down, z forward at the target."""
    fwd = target - eye
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, np.array([0.0, 0.0, 1.0]))
    right = right / np.linalg.norm(right)
    down = np.cross(fwd, right)
    return np.stack([right, down, fwd])


def synth_scene(n_views, circle_radius=CIRCLE_RADIUS, subject_pose="canonical",
                image_size=IMAGE_SIZE, seed=0, focal=None):
    """Synthetic capture: cameras evenly spaced on a circle around a subject.

    subject_pose: 'canonical' for the standing pose, 'random-articulated'
    for a seeded articulated variant with random root placement and heading.
    Detections are the exact projections of the ground-truth joints.
    """
    if n_views < 2:
        raise ValueError("n_views must be >= 2")
    rng = np.random.default_rng(seed)
    model = default_skeleton_17()
    pose = _canonical_pose()
    if subject_pose == "random-articulated":
        pose = _articulate(model, pose, rng)
        yaw = _axis_rotation(np.array([0.0, 0.0, 1.0]), rng.uniform(0.0, 2.0 * np.pi))
        root = pose[0].copy()
        offset = np.array([rng.uniform(-200, 200), rng.uniform(-200, 200),
                           rng.uniform(-50, 50)])
        pose = (pose - root) @ yaw.T + root + offset
    elif subject_pose != "canonical":
        raise ValueError(f"unknown subject_pose {subject_pose!r}")

    focal = FOCAL_FRACTION * image_size if focal is None else float(focal)
    centroid = pose.mean(axis=0)
    cameras = []
    for i in range(n_views):
        angle = 2.0 * np.pi * i / n_views
        eye = np.array([
            centroid[0] + circle_radius * np.cos(angle),
            centroid[1] + circle_radius * np.sin(angle),
            CAMERA_HEIGHT,
        ])
        rot = _look_at(eye, centroid)
        extr = np.eye(4)
        extr[:3, :3] = rot
        extr[:3, 3] = -rot @ eye
        intr = np.array([
            [focal, 0.0, image_size / 2.0],
            [0.0, focal, image_size / 2.0],
            [0.0, 0.0, 1.0],
        ])
        cameras.append(Camera(intr, extr, image_size, image_size, id=i))

    detections = []
    for cam in cameras:
        row = []
        for j in range(model.n_joints):
            (u, v), _ = project_point(cam, pose[j])
            row.append(np.array([u, v]))
        detections.append(row)
    meta = {"generator": "synth_scene", "seed": seed, "subject_pose": subject_pose,
            "circle_radius_mm": circle_radius, "focal_px": focal}
    return Scene(cameras, detections, model, gt_pose=pose, meta=meta)


def triangulate_detections(scene):
    """DLT init per joint from all views with a detection. (N, 3) mm.

    Raises DegenerateGeometry naming the joint when fewer than 2 views see it.
    """
    n = scene.skeleton.n_joints
    out = np.zeros((n, 3))
    for j in range(n):
        cams = [cam for i, cam in enumerate(scene.cameras)
                if scene.detections[i][j] is not None]
        obs = [scene.detections[i][j] for i in range(scene.n_views)
               if scene.detections[i][j] is not None]
        if len(cams) < 2:
            raise DegenerateGeometry(f"joint {j}: fewer than 2 views with a detection")
        out[j] = triangulate_dlt(cams, obs)
    return out


def corrupt(scene, spec):
    """Apply a CorruptionSpec; returns a new Scene, gt and cameras untouched.

    Order: 2D detection noise, then occlusion (drop/displace), then the init
    pose (triangulated from the corrupted detections when absent) gets 3D
    noise. Deterministic under spec.seed.
    """
    spec.validate(scene.n_views, scene.skeleton.n_joints)
    rng = np.random.default_rng(spec.seed)
    n = scene.skeleton.n_joints
    m = scene.n_views

    noise2d = rng.normal(0.0, 1.0, size=(m, n, 2))
    detections = []
    for i in range(m):
        row = []
        for j in range(n):
            d = scene.detections[i][j]
            if d is None:
                row.append(None)
            elif spec.noise_sigma_2d > 0:
                row.append(d + spec.noise_sigma_2d * noise2d[i, j])
            else:
                row.append(d.copy())
        detections.append(row)

    views = sorted(spec.occluded_views)
    joints = sorted(spec.occluded_joints)
    if views and joints:
        for i in views:
            direction = rng.normal(size=2)
            direction /= np.linalg.norm(direction)
            for j in joints:
                if detections[i][j] is None:
                    continue
                if spec.occlusion_mode == "drop":
                    detections[i][j] = None
                else:
                    jitter = rng.normal(size=2)
                    detections[i][j] = (detections[i][j]
                                        + spec.displace_sigma * direction
                                        + 0.5 * spec.displace_sigma * jitter)

    out = Scene(scene.cameras, detections, scene.skeleton,
                None if scene.gt_pose is None else scene.gt_pose.copy(),
                None if scene.init_pose is None else scene.init_pose.copy(),
                dict(scene.meta))
    if spec.noise_sigma_3d_init > 0:
        init = out.init_pose if out.init_pose is not None else triangulate_detections(out)
        out.init_pose = init + rng.normal(0.0, spec.noise_sigma_3d_init, size=(n, 3))
    return out


def scale_resolution(scene, factor):
    """Rescale the image plane: intrinsics, image size, detections.

    Models running the pipeline on factor-times-downsampled heatmaps. 3D
    quantities (poses, extrinsics) are untouched; only pixel units change.
    Returns a new Scene.
    """
    if factor <= 0:
        raise ValueError("factor must be positive")
    cameras = []
    for cam in scene.cameras:
        K = cam.intrinsics.copy()
        K[0, 0] *= factor
        K[1, 1] *= factor
        K[0, 2] *= factor
        K[1, 2] *= factor
        cameras.append(Camera(K, cam.extrinsics.copy(),
                              max(1, int(round(cam.width * factor))),
                              max(1, int(round(cam.height * factor))),
                              cam.id))
    detections = [[None if d is None else d * factor for d in row]
                  for row in scene.detections]
    return Scene(cameras, detections, scene.skeleton,
                 None if scene.gt_pose is None else scene.gt_pose.copy(),
                 None if scene.init_pose is None else scene.init_pose.copy(),
                 dict(scene.meta))


def save_results(path, skeleton, trace, metrics=None, config=None, meta=None):
    """Results file: joint means + full covariances, loss trace, stop reason.

    Wall time is deliberately not serialized so identical runs produce
    byte-identical files.
    """
    payload = {
        "format": RESULTS_FORMAT,
        "version": FORMAT_VERSION,
        "units": {"length": "mm"},
        "joints": {
            "names": list(skeleton.model.joint_names),
            "means": [j.mean.tolist() for j in skeleton.joints],
            "covariances": [j.factors.covariance().tolist() for j in skeleton.joints],
        },
        "stop_reason": trace.stop_reason,
        "iterations_run": trace.iterations_run,
        "trace": [
            {
                "render_term": r.render_term,
                "sym_term": r.sym_term,
                "total": r.total,
                "per_view_render": r.per_view_render,
                "masked_pixel_count": r.masked_pixel_count,
            }
            for r in trace.reports
        ],
        "metrics": metrics,
        "config": config,
        "meta": meta or {},
    }
    _dump_json(path, payload)


def load_results(path):
    with open(path, encoding="ascii") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise SceneFormatError(f"{path}: not valid JSON ({e})") from e
    if raw.get("format") != RESULTS_FORMAT:
        raise SceneFormatError(f"format: expected '{RESULTS_FORMAT}', got {raw.get('format')!r}")
    for key in ("joints", "stop_reason"):
        if key not in raw:
            raise SceneFormatError(f"missing key '{key}'")
    return raw
