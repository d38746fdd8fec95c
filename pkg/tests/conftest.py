import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from teskf.lie import exp_so3
from teskf.model import CameraModel, ImuState, VinsState

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: slow end-to-end checks")


def vec3(bound=10.0):
    return st.tuples(*[st.floats(-bound, bound, allow_nan=False, allow_infinity=False)] * 3).map(np.array)


def random_rotation(gen):
    v = gen.normal(size=3)
    return exp_so3(v / np.linalg.norm(v) * gen.uniform(0.0, np.pi * 0.99))


def random_state(gen, m=0, scale=3.0, bias=True):
    imu = ImuState(
        random_rotation(gen),
        gen.normal(size=3) * scale,
        gen.normal(size=3),
        gen.normal(size=3) * 1e-2 if bias else np.zeros(3),
        gen.normal(size=3) * 1e-1 if bias else np.zeros(3),
    )
    return VinsState(imu, {100 + i: gen.normal(size=3) * scale * 2 for i in range(m)})


def random_spd(gen, n, floor=1e-3):
    A = gen.normal(size=(n, n))
    return A @ A.T / n + floor * np.eye(n)


def visible_state(gen, m, cam=None):
    """State whose landmarks all sit 2-8 m in front of ``cam``."""
    cam = cam or CameraModel()
    st_ = random_state(gen, 0)
    R_GC = st_.imu.R @ cam.R_CI.T
    lms = {}
    for i in range(m):
        pc = np.array([gen.uniform(-1, 1), gen.uniform(-1, 1), gen.uniform(2, 8)])
        lms[i] = st_.imu.p + R_GC @ (pc - cam.p_CI)
    return VinsState(st_.imu, lms)


@pytest.fixture
def gen():
    return np.random.default_rng(12345)
