import math
import sys

import numpy as np
import pytest
from hypothesis import strategies as st

from span3d.geom3d import Box3D, CameraIntrinsics

finite = st.floats(min_value=-50.0, max_value=50.0, allow_nan=False)
dims = st.floats(min_value=0.2, max_value=6.0, allow_nan=False)
yaw = st.floats(min_value=-math.pi, max_value=math.pi, allow_nan=False)


@st.composite
def boxes(draw, z_range=(5.0, 60.0)):
    return Box3D(
        draw(st.floats(-15.0, 15.0)),
        draw(st.floats(-2.0, 2.0)),
        draw(st.floats(*z_range)),
        draw(dims),
        draw(dims),
        draw(dims),
        draw(yaw),
    )


@pytest.fixture
def K_simple():
    return CameraIntrinsics(100.0, 100.0, 50.0, 50.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
