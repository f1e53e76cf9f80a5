import sys
import numpy as np
import pytest

from fieldreg.field_model import load_template
from fieldreg.geometry.calibration import look_at
from fieldreg.geometry.types import Intrinsics, Pose


@pytest.fixture(scope="session")
def basketball():
    return load_template("basketball")


@pytest.fixture(scope="session")
def soccer():
    return load_template("soccer")


def random_rig(rng, template=None, f_range=(500.0, 5000.0), tilt_range=(10.0, 80.0), size=(1920, 1080)):
    """Camera outside a 28 x 15 field, looking down at a point on it with the given tilt."""
    if template is None:
        xmin, ymin, xmax, ymax = 0.0, 0.0, 28.0, 15.0
    else:
        xmin, ymin, xmax, ymax = template.extent()
    f = rng.uniform(*f_range)
    tilt = np.deg2rad(rng.uniform(*tilt_range))
    target = np.array([rng.uniform(xmin, xmax), rng.uniform(ymin, ymax), 0.0])
    heading = rng.uniform(0, 2 * np.pi)
    half_diag = 0.5 * np.hypot(xmax - xmin, ymax - ymin)
    center_xy = np.array([(xmin + xmax) / 2, (ymin + ymax) / 2])
    # far enough along the heading to leave the field
    dist = np.linalg.norm(target[:2] - center_xy) + half_diag + rng.uniform(2.0, 30.0)
    horiz = dist
    height = horiz * np.tan(tilt)
    cam = np.array([target[0] - horiz * np.cos(heading), target[1] - horiz * np.sin(heading), height])
    return Intrinsics(f, *size), look_at(cam, target)


def rotation_about(axis, deg):
    from scipy.spatial.transform import Rotation

    axis = np.asarray(axis, dtype=float)
    return Rotation.from_rotvec(np.deg2rad(deg) * axis / np.linalg.norm(axis)).as_matrix()


def perturb_pose(pose, rng, rot_deg, trans_m):
    from scipy.spatial.transform import Rotation

    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    dR = Rotation.from_rotvec(np.deg2rad(rot_deg) * axis).as_matrix()
    d = rng.normal(size=3)
    return Pose(dR @ pose.R, pose.t + trans_m * d / np.linalg.norm(d))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for _, _, line in sorted(results):
        terminalreporter.write_line(line)
