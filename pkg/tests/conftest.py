"""Shared builders for the test suite.

Cameras here are constructed independently of the library's own synthetic
rig so that geometry tests have an oracle that does not share code with the
implementation under test.
"""

import numpy as np
import pytest

from jointsplat import Camera


def look_at(eye, target, up=(0.0, 0.0, 1.0)):
    """World-to-camera rotation and translation: x right, y down, z forward."""
    eye = np.asarray(eye, dtype=float)
    fwd = np.asarray(target, dtype=float) - eye
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=float))
    right = right / np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd])
    return rot, -rot @ eye


def random_camera(rng, width=1000, height=800):
    """Camera at a random standoff, looking near the origin, jittered K."""
    direction = rng.normal(size=3)
    direction = direction / np.linalg.norm(direction)
    eye = direction * rng.uniform(2500.0, 5000.0)
    target = rng.normal(scale=100.0, size=3)
    up = np.array([0.0, 0.0, 1.0])
    if abs(np.dot((target - eye) / np.linalg.norm(target - eye), up)) > 0.99:
        up = np.array([0.0, 1.0, 0.0])
    rot, t = look_at(eye, target, up)
    fx = rng.uniform(0.4, 0.8) * width
    fy = fx * rng.uniform(0.97, 1.03)
    cx = width / 2.0 + rng.uniform(-20.0, 20.0)
    cy = height / 2.0 + rng.uniform(-20.0, 20.0)
    intrinsics = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
    extrinsics = np.eye(4)
    extrinsics[:3, :3] = rot
    extrinsics[:3, 3] = t
    return Camera(intrinsics, extrinsics, width, height)


def random_point_near_origin(rng, scale=400.0):
    return rng.normal(scale=scale, size=3)


def project_via_matrix(cam, point):
    """Oracle projection through the stacked 3x4 matrix, dehomogenized."""
    ph = cam.projection_matrix() @ np.append(point, 1.0)
    return ph[:2] / ph[2], ph[2]


def random_spd3(rng, lo=0.5, hi=30.0):
    """Random SPD 3x3 with eigenvalues in [lo, hi] (mm^2 scale)."""
    a = rng.normal(size=(3, 3))
    q, _ = np.linalg.qr(a)
    eig = rng.uniform(lo, hi, size=3)
    return q @ np.diag(eig) @ q.T


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


# One line per acceptance criterion, printed after the test summary so the
# pass/fail verdicts survive pytest's output capture.
ACCEPTANCE_LINES = []


def record_acceptance(line):
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
