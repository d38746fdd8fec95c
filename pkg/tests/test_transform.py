import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from teskf.lie import skew
from teskf.model import BA, BG, GRAVITY, IMU_DIM, POS, THETA, VEL, ImuSample, ImuState, VinsState, continuous_error_jacobians, propagate_nominal
from teskf.transform import (
    apply, apply_inv, build_transform, left_mul, right_mul, right_mul_transpose, sandwich,
    transform_derivative, transformed_essential_jacobian, transformed_jacobians,
)

from conftest import random_spd, random_state

seeds = st.integers(0, 2**31)


def test_build_example_single_skew():
    st_ = VinsState(ImuState(p=np.array([1.0, 0.0, 0.0])), {5: np.zeros(3)})
    T = build_transform(st_).dense()
    assert np.array_equal(T[POS, THETA], skew([1, 0, 0]))
    assert not T[VEL, THETA].any()
    assert not T[15:18, THETA].any()
    off = T - np.eye(st_.dim)
    off[POS, THETA] = 0
    assert not off.any()


def test_zero_state_is_identity():
    st_ = VinsState(ImuState(), {1: np.zeros(3), 2: np.zeros(3)})
    assert np.array_equal(build_transform(st_).dense(), np.eye(st_.dim))


@given(seeds, st.integers(0, 6))
def test_inverse_structure(seed, m):
    gen = np.random.default_rng(seed)
    t = build_transform(random_state(gen, m))
    T, Ti = t.dense(), t.dense(inverse=True)
    assert np.allclose(T @ Ti, np.eye(t.dim), rtol=0, atol=1e-14 * max(1.0, np.abs(T).max() ** 2))
    assert np.allclose(Ti, np.linalg.inv(T), rtol=0, atol=1e-12 * max(1.0, np.abs(T).max() ** 2))
    # unit lower block triangular: nothing above the diagonal, unit diagonal
    assert not np.triu(T, 1).any()
    assert np.array_equal(np.diag(T), np.ones(t.dim))


@given(seeds, st.integers(0, 6))
def test_determinant_is_one(seed, m):
    gen = np.random.default_rng(seed)
    T = build_transform(random_state(gen, m)).dense()
    P, L, U = scipy.linalg.lu(T)
    det = np.linalg.det(P) * np.prod(np.diag(L)) * np.prod(np.diag(U))
    assert np.isclose(det, 1.0, rtol=0, atol=1e-12)


def test_apply_without_rotation_error_is_identity(gen):
    st_ = random_state(gen, 3)
    x = gen.normal(size=st_.dim)
    x[THETA] = 0.0
    assert np.array_equal(apply(build_transform(st_), x), x)


def test_apply_example_against_dense():
    st_ = VinsState(ImuState(p=np.array([1.0, 0.0, 0.0])))
    x = np.zeros(15)
    x[2] = 1.0
    t = build_transform(st_)
    out = apply(t, x)
    assert np.allclose(out[POS], [0.0, -1.0, 0.0])
    assert np.allclose(out, t.dense() @ x)


@given(seeds, st.integers(0, 6))
def test_apply_roundtrip_and_dense(seed, m):
    gen = np.random.default_rng(seed)
    t = build_transform(random_state(gen, m))
    x = gen.normal(size=t.dim)
    assert np.allclose(apply_inv(t, apply(t, x)), x, rtol=0, atol=1e-14 * max(1, np.abs(t.S).max() ** 2) * 4)
    assert np.allclose(apply(t, x), t.dense() @ x, rtol=0, atol=1e-12)
    assert np.allclose(apply_inv(t, x), t.dense(True) @ x, rtol=0, atol=1e-12)


@given(seeds, st.integers(0, 5), st.booleans())
def test_sparse_products_match_dense(seed, m, inverse):
    gen = np.random.default_rng(seed)
    t = build_transform(random_state(gen, m))
    X = gen.normal(size=(t.dim, t.dim))
    T = t.dense(inverse)
    assert np.allclose(left_mul(t, X, inverse), T @ X, rtol=0, atol=1e-12)
    assert np.allclose(right_mul(t, X, inverse), X @ T, rtol=0, atol=1e-12)
    assert np.allclose(right_mul_transpose(t, X, inverse), X @ T.T, rtol=0, atol=1e-12)


def test_dimension_mismatch_rejected(gen):
    t = build_transform(random_state(gen, 2))
    with pytest.raises(ValueError):
        apply(t, np.zeros(15))
    with pytest.raises(ValueError):
        sandwich(t, np.eye(15))


def test_sandwich_identity_at_zero_state():
    st_ = VinsState(ImuState(), {0: np.zeros(3)})
    assert np.array_equal(sandwich(build_transform(st_), np.eye(18)), np.eye(18))


@given(seeds, st.integers(0, 8))
def test_sandwich_matches_dense(seed, m):
    gen = np.random.default_rng(seed)
    t = build_transform(random_state(gen, m))
    P = random_spd(gen, t.dim)
    for d, T in (("forward", t.dense()), ("inverse", t.dense(True))):
        ref = T @ P @ T.T
        assert np.linalg.norm(sandwich(t, P, d) - ref) <= 1e-12 * np.linalg.norm(ref)


@given(seeds, st.integers(0, 8))
def test_sandwich_roundtrip(seed, m):
    gen = np.random.default_rng(seed)
    t = build_transform(random_state(gen, m))
    P = random_spd(gen, t.dim)
    back = sandwich(t, sandwich(t, P, "forward"), "inverse")
    assert np.linalg.norm(back - P) <= 1e-11 * np.linalg.norm(P)


def test_sandwich_rejects_asymmetric(gen):
    t = build_transform(random_state(gen, 1))
    P = np.eye(18)
    P[0, 5] = 1e-6
    with pytest.raises(ValueError):
        sandwich(t, P)
    with pytest.raises(ValueError):
        sandwich(t, np.eye(18), "sideways")


# -- transformed jacobians ---------------------------------------------------------------


def test_bias_free_theta_column_is_gravity_only(gen):
    st_ = random_state(gen, 2)
    F, _, _ = transformed_jacobians(st_, ImuSample(0.0, gen.normal(size=3), gen.normal(size=3)))
    col = F[:, THETA]
    assert np.array_equal(col[VEL], skew(GRAVITY))
    rest = col.copy()
    rest[VEL] = 0
    assert not rest.any()


@given(seeds, st.integers(0, 5))
def test_state_independent_blocks(seed, m):
    gen = np.random.default_rng(seed)
    st_ = random_state(gen, m)
    F, _, He = transformed_jacobians(st_, ImuSample(0.0, gen.normal(size=3), gen.normal(size=3)))
    assert np.array_equal(F[VEL, THETA], skew(GRAVITY))
    assert not He[:, THETA].any()
    other = random_state(np.random.default_rng(seed + 1), m)
    other.landmarks = dict(zip(st_.landmarks, other.landmarks.values()))
    assert np.array_equal(transformed_essential_jacobian(other), He)


@given(seeds, st.integers(0, 5))
def test_transformed_jacobians_dense_identity(seed, m):
    gen = np.random.default_rng(seed)
    st_ = random_state(gen, m)
    s = ImuSample(0.0, gen.normal(size=3), gen.normal(size=3) * 3)
    Fs, Gs, Hes = transformed_jacobians(st_, s)
    F, G = continuous_error_jacobians(st_, s)
    t = build_transform(st_)
    T, Ti = t.dense(), t.dense(True)
    ref = transform_derivative(st_, s) @ Ti + T @ F @ Ti
    assert np.linalg.norm(Fs - ref) <= 1e-10 * np.linalg.norm(ref)
    assert np.allclose(Gs, T @ G, rtol=0, atol=1e-12)
    # the essential Jacobian of every landmark equals H_e T^-1
    for i, lm in enumerate(st_.landmarks.values()):
        He = np.zeros((3, st_.dim))
        He[:, THETA] = skew(lm - st_.imu.p)
        He[:, POS] = -np.eye(3)
        He[:, IMU_DIM + 3 * i : IMU_DIM + 3 * i + 3] = np.eye(3)
        assert np.allclose(He @ Ti, Hes[3 * i : 3 * i + 3], rtol=0, atol=1e-12)


def test_bias_rows_are_identity(gen):
    T = build_transform(random_state(gen, 2)).dense()
    assert np.array_equal(T[BG, :], np.eye(T.shape[0])[BG, :])
    assert np.array_equal(T[BA, :], np.eye(T.shape[0])[BA, :])


def test_transform_rates_along_trajectory(gen):
    """Differentiating T along a propagated trajectory gives [v], [a] and zero landmark rate."""
    st_ = random_state(gen, 2)
    st_.imu.ba = np.zeros(3)
    w, a = gen.normal(size=3), gen.normal(size=3) * 2
    h = 1e-5
    s = [ImuSample(k * h, w, a) for k in range(3)]
    x0 = st_
    x1 = propagate_nominal(x0, s[0], s[1])
    x2 = propagate_nominal(x1, s[1], s[2])
    T0, T2 = build_transform(x0).dense(), build_transform(x2).dense()
    Td = (T2 - T0) / (2 * h)
    Tv = build_transform(x1).dense()[VEL, THETA]
    a_world = x1.imu.R @ a
    assert np.allclose(Td[POS, THETA] - Tv, 0.0, atol=1e-4)
    assert np.allclose(Td[VEL, THETA] - skew(a_world), skew(GRAVITY), atol=1e-4)
    assert np.allclose(Td[15:, THETA], 0.0, atol=1e-4)
