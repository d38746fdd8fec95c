import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from teskf.filters import Filter
from teskf.model import IMU_DIM, POS, CameraModel, NoiseParams, VinsState, batch_projection
from teskf.observability import (
    EXPECTED_NULL, accumulate_trace, analytic_for_audit, analytic_nullspace, build_observability,
    numeric_nullspace, principal_angles, run_audit,
)
from teskf.simulator import CameraFrame

from conftest import random_state, visible_state


def test_single_step_matrix_is_H(gen):
    H = gen.normal(size=(6, 18))
    audit = build_observability(accumulate_trace([(H, np.eye(18))]))
    assert np.array_equal(audit.M, H)
    assert audit.singular_values.size == 18
    assert audit.null_dim() == 12


def test_accumulated_transitions_compose(gen):
    H = [gen.normal(size=(2, 5)) for _ in range(3)]
    Phi = [gen.normal(size=(5, 5)) for _ in range(3)]
    trace = accumulate_trace(zip(H, Phi))
    assert np.array_equal(trace[0][1], np.eye(5))
    assert np.allclose(trace[2][1], Phi[2] @ Phi[1], rtol=0, atol=1e-14)
    M = build_observability(trace).M
    assert np.allclose(M, np.vstack([H[0], H[1] @ Phi[1], H[2] @ Phi[2] @ Phi[1]]), rtol=0, atol=1e-13)


def test_zero_columns_are_the_null_space(gen):
    A = np.hstack([np.zeros((8, 3)), gen.normal(size=(8, 5))])
    audit = build_observability([(A, np.eye(8))])
    N = numeric_nullspace(audit)
    assert N.shape == (8, 3)
    assert np.max(principal_angles(N, np.eye(8)[:, :3])) < 1e-12


def test_full_rank_has_empty_null_space(gen):
    audit = build_observability([(gen.normal(size=(12, 6)), np.eye(6))])
    assert audit.null_dim() == 0
    assert numeric_nullspace(audit).shape == (6, 0)


def test_bad_traces_rejected(gen):
    with pytest.raises(ValueError):
        build_observability([])
    with pytest.raises(ValueError):
        build_observability([(np.zeros((2, 5)), np.eye(6))])
    with pytest.raises(ValueError):
        run_audit("ukf")
    with pytest.raises(ValueError):
        run_audit("teskf", ticks=0)
    with pytest.raises(ValueError):
        analytic_nullspace(random_state(gen, 1), "sideways")


# -- analytic basis -----------------------------------------------------------


def test_bases_coincide_at_zero_state():
    st_ = VinsState(random_state(np.random.default_rng(0)).imu, {1: np.zeros(3)})
    st_.imu.p[:] = 0
    st_.imu.v[:] = 0
    assert np.array_equal(analytic_nullspace(st_), analytic_nullspace(st_, "transformed"))


@given(st.integers(0, 2**31), st.integers(0, 6))
def test_transformed_basis_is_state_independent(seed, m):
    a = random_state(np.random.default_rng(seed), m)
    b = random_state(np.random.default_rng(seed + 1), m)
    assert np.array_equal(analytic_nullspace(a, "transformed"), analytic_nullspace(b, "teskf"))


@given(st.integers(0, 2**31), st.integers(1, 6))
def test_analytic_basis_is_annihilated_by_measurements(seed, m):
    gen = np.random.default_rng(seed)
    st_ = visible_state(gen, m)
    lms = np.array(list(st_.landmarks.values()))
    cam = CameraModel()
    uv = batch_projection(st_.imu.R, st_.imu.p, cam, lms)[0]
    frame = CameraFrame(0.0, np.arange(m), uv, 1.0)
    for kind, which in (("eskf", "original"), ("teskf", "transformed")):
        H = Filter(kind, st_, np.eye(st_.dim), NoiseParams(), cam).measurement_rows(frame)
        N = analytic_nullspace(st_, which)
        assert np.linalg.norm(H @ N) <= 1e-8 * np.linalg.norm(H) * np.linalg.norm(N)


def test_basis_layout(gen):
    st_ = random_state(gen, 2)
    N = analytic_nullspace(st_)
    assert N.shape == (st_.dim, 4)
    assert np.array_equal(N[POS, :3], np.eye(3))
    assert np.array_equal(N[IMU_DIM + 3 : IMU_DIM + 6, :3], np.eye(3))


# -- audits -------------------------------------------------------------------


@pytest.mark.parametrize("mode", ["ideal", "eskf", "fej", "teskf"])
@pytest.mark.parametrize("seed", [0, 3])
def test_audit_null_dimension(mode, seed):
    audit = run_audit(mode, seed)
    assert audit.null_dim() == EXPECTED_NULL[mode]
    assert audit.gap_ok()
    assert audit.meta["rows"] == audit.M.shape[0] > audit.n


@pytest.mark.parametrize("mode", ["ideal", "fej", "teskf"])
def test_audit_null_space_matches_analytic(mode):
    audit = run_audit(mode, 1)
    ang = principal_angles(numeric_nullspace(audit), analytic_for_audit(audit))
    assert ang.max() < 1e-6


def test_teskf_audit_spans_fixed_basis():
    audit = run_audit("teskf", 2)
    fixed = analytic_nullspace(random_state(np.random.default_rng(9), len(audit.state0.landmarks)), "transformed")
    assert principal_angles(numeric_nullspace(audit), fixed).max() < 1e-6


def test_eskf_loses_yaw_direction():
    audit = run_audit("eskf", 0)
    N = analytic_for_audit(audit)
    # translations stay unobservable, the yaw direction does not
    assert np.linalg.norm(audit.M @ N[:, :3]) <= 1e-8 * np.linalg.norm(audit.M)
    yaw = N[:, 3] / np.linalg.norm(N[:, 3])
    assert np.linalg.norm(audit.M @ yaw) > 1e-4 * audit.singular_values[0]
