import numpy as np
import pytest

from rigsfm.geometry import FisheyeIntrinsics


@pytest.fixture
def fisheye():
    return FisheyeIntrinsics(fx=150.0, fy=151.0, cx=160.3, cy=119.6,
                             k1=0.02, k2=-0.01, k3=0.004, k4=-0.0008,
                             width=320, height=240)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_rotation(rng, max_angle=np.pi):
    from rigsfm.geometry import so3_exp
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return so3_exp(axis * rng.uniform(0, max_angle))


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import summary_lines
    lines = summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
