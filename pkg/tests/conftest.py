import numpy as np
import pytest

from deskservo.config import DEFAULTS, make_camera
from deskservo.geometry import CameraModel


@pytest.fixture(scope="session")
def default_cfg() -> dict:
    return dict(DEFAULTS)


@pytest.fixture(scope="session")
def tilted_cam(default_cfg) -> CameraModel:
    return make_camera(default_cfg)


@pytest.fixture(scope="session")
def scale_cam() -> CameraModel:
    """Pure-scale camera: in-image angles equal ground angles exactly."""
    H = np.array([[300.0, 0.0, 400.0], [0.0, 300.0, 300.0], [0.0, 0.0, 1.0]])
    return CameraModel(H=H, width=800, height=600)
