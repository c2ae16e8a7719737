import numpy as np
import pytest

from sketchsplat.camera import CameraIntrinsics, Circle, OrbitPose, orbit_to_extrinsics
from sketchsplat.gaussians import GaussianScene


def front_camera(size=16, fov=50.0):
    return orbit_to_extrinsics(OrbitPose(Circle.HORIZONTAL, 0.0, 3.0)), CameraIntrinsics(fov, size, size)


def single_gaussian(position=(0.0, 0.0, 0.0), scale=0.2, opacity_logit=0.0, color=(0.0, 0.0, 0.0)):
    return GaussianScene(
        np.array([position], dtype=float),
        np.array([[1.0, 0.0, 0.0, 0.0]]),
        np.full((1, 3), np.log(scale)),
        np.array([opacity_logit], dtype=float),
        np.array([[color]], dtype=float),
        0,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
