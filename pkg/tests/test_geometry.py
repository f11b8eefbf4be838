import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rigsfm.errors import (BehindCameraError, DegenerateError, DomainError,
                           ValidationError)
from rigsfm.geometry import (FisheyeIntrinsics, RigidPose, Twist, compose_chain,
                             distort_theta, hat, project, project_jacobian,
                             refine_intrinsics, rig_absolute_pose, se3_exp,
                             se3_left_jacobian, se3_log, unproject)

from conftest import random_rotation


def test_distort_theta_values(fisheye):
    assert distort_theta(0.0, fisheye) == 0.0
    plain = FisheyeIntrinsics(100, 100, 50, 50, width=100, height=100)
    assert distort_theta(0.5, plain) == 0.5
    k1 = FisheyeIntrinsics(100, 100, 50, 50, k1=0.1, width=100, height=100)
    assert distort_theta(0.5, k1) == pytest.approx(0.5125, abs=1e-15)
    with pytest.raises(DomainError):
        distort_theta(1.8, k1)
    with pytest.raises(DomainError):
        distort_theta(-0.1, k1)


def test_non_monotone_model_rejected():
    with pytest.raises(ValidationError):
        FisheyeIntrinsics(100, 100, 50, 50, k1=-0.5, width=100, height=100)


def test_project_optical_axis_and_closed_form(fisheye):
    np.testing.assert_allclose(project([0, 0, 5], fisheye), [fisheye.cx, fisheye.cy], atol=0)
    intr = FisheyeIntrinsics(1000, 1000, 0, 0, width=2000, height=2000)
    np.testing.assert_allclose(project([1, 0, 1], intr), [1000 * np.arctan(1.0), 0], atol=1e-9)
    assert project([1, 0, 1], intr)[0] == pytest.approx(785.398, abs=1e-3)


def test_project_behind_camera(fisheye):
    with pytest.raises(BehindCameraError):
        project([0, 0, -1], fisheye)
    with pytest.raises(BehindCameraError):
        project([1, 0, 0], fisheye)


def test_roundtrip_pixels(fisheye, rng):
    px = np.column_stack([rng.uniform(0, fisheye.width, 1000), rng.uniform(0, fisheye.height, 1000)])
    b = unproject(px, fisheye)
    np.testing.assert_allclose(np.linalg.norm(b, axis=1), 1, atol=1e-12)
    assert np.all(b[:, 2] > 0)
    d = rng.uniform(0.5, 20, size=(1000, 1))
    np.testing.assert_allclose(project(b * d, fisheye), px, atol=1e-6)


def test_unproject_inverts_forward_model(fisheye, rng):
    p = rng.normal(size=(500, 3))
    p[:, 2] = np.abs(p[:, 2]) + 0.8
    uv = project(p, fisheye)
    keep = (uv[:, 0] >= 0) & (uv[:, 0] < 320) & (uv[:, 1] >= 0) & (uv[:, 1] < 240)
    b = unproject(uv[keep], fisheye)
    u = p[keep] / np.linalg.norm(p[keep], axis=1, keepdims=True)
    np.testing.assert_allclose(b, u, atol=1e-10)


def test_unproject_axis_and_monotone(fisheye):
    np.testing.assert_allclose(unproject([fisheye.cx, fisheye.cy], fisheye), [0, 0, 1], atol=1e-15)
    radii = np.linspace(0, 110, 40)
    px = np.column_stack([fisheye.cx + radii, np.full_like(radii, fisheye.cy)])
    z = unproject(px, fisheye)[:, 2]
    assert np.all(np.diff(z) < 0)
    with pytest.raises(DomainError):
        unproject([-1.0, 10.0], fisheye)


def test_project_jacobian_matches_finite_differences(fisheye, rng):
    p = rng.normal(size=(50, 3)) * 0.5
    p[:, 2] = np.abs(p[:, 2]) + 1.0
    p[0] = [0, 0, 2.0]          # optical axis, series branch
    p[1] = [1e-10, -2e-10, 1.0]
    _, J = project_jacobian(p, fisheye)
    h = 1e-6
    for k in range(3):
        d = np.zeros(3)
        d[k] = h
        fd = (project(p + d, fisheye) - project(p - d, fisheye)) / (2 * h)
        np.testing.assert_allclose(J[:, :, k], fd, rtol=1e-6, atol=1e-4)


def test_se3_exp_examples():
    T = se3_exp(Twist())
    np.testing.assert_array_equal(T.rotation, np.eye(3))
    np.testing.assert_array_equal(T.translation, np.zeros(3))
    T = se3_exp(Twist([0, 0, 0], [0, 0, np.pi / 2]))
    np.testing.assert_allclose(T.rotation, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)
    np.testing.assert_allclose(T.translation, 0, atol=0)


def test_se3_log_exp_roundtrip(rng):
    for _ in range(1000):
        axis = rng.normal(size=3)
        phi = axis / np.linalg.norm(axis) * rng.uniform(0, 3)
        xi = Twist(rng.normal(size=3) * 2, phi)
        back = se3_log(se3_exp(xi))
        assert np.linalg.norm(back.vector() - xi.vector()) < 1e-9
        ident = se3_exp(xi) @ se3_exp(-xi.vector())
        np.testing.assert_allclose(ident.matrix(), np.eye(4), atol=1e-9)


def test_se3_log_at_pi_is_domain_error():
    with pytest.raises(DomainError):
        se3_log(se3_exp([0, 0, 0, np.pi, 0, 0]))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1.5, 1.5), min_size=6, max_size=6))
def test_left_jacobian_first_order(v):
    xi = np.array(v)
    J = se3_left_jacobian(xi)
    h = 1e-6
    for k in range(6):
        d = np.zeros(6)
        d[k] = h
        plus = se3_log(se3_exp(xi + d) @ se3_exp(xi).inverse()).vector()
        minus = se3_log(se3_exp(xi - d) @ se3_exp(xi).inverse()).vector()
        np.testing.assert_allclose((plus - minus) / (2 * h), J[:, k], atol=1e-6)


def test_rig_absolute_pose(rng):
    I = RigidPose.identity()
    np.testing.assert_array_equal(rig_absolute_pose(I, I).matrix(), np.eye(4))
    local = RigidPose(random_rotation(rng), rng.normal(size=3))
    np.testing.assert_allclose(rig_absolute_pose(I, local).matrix(), local.matrix(), atol=0)
    for _ in range(20):
        a = RigidPose(random_rotation(rng), rng.normal(size=3))
        b = RigidPose(random_rotation(rng), rng.normal(size=3))
        c = RigidPose(random_rotation(rng), rng.normal(size=3))
        np.testing.assert_allclose(rig_absolute_pose(a, b).matrix(), a.matrix() @ b.matrix(), atol=1e-12)
        np.testing.assert_allclose(((a @ b) @ c).matrix(), (a @ (b @ c)).matrix(), atol=1e-12)


def test_compose_chain_long_stays_orthonormal(rng):
    step = se3_exp(np.r_[0.01, 0, 0, 0.003, 0.002, 0.001])
    T = compose_chain([step] * 1000)
    M = np.linalg.matrix_power(step.matrix(), 1000)
    np.testing.assert_allclose(T.matrix(), M, atol=1e-9)


def _board(rng, n, intr, noise_rms=0.0):
    # target points spread across the field of view at 0.5-3 m
    px = np.column_stack([rng.uniform(5, intr.width - 5, n), rng.uniform(5, intr.height - 5, n)])
    P = unproject(px, intr) * rng.uniform(0.5, 3.0, size=(n, 1))
    obs = project(P, intr) + rng.normal(scale=noise_rms / np.sqrt(2), size=(n, 2))
    return P, obs


def test_refine_intrinsics_recovers_k1(fisheye, rng):
    P, obs = _board(rng, 300, fisheye)
    start = fisheye.with_params(fisheye.params() + np.r_[0, 0, 0, 0, 0.05, 0, 0, 0])
    refined, rms = refine_intrinsics(P, obs, start)
    assert abs(refined.k1 - fisheye.k1) < 1e-4
    assert rms < 1e-6


def test_refine_intrinsics_fixed_point(fisheye, rng):
    P, obs = _board(rng, 100, fisheye)
    refined, rms = refine_intrinsics(P, obs, fisheye)
    assert refined is fisheye
    assert rms == 0.0


def test_refine_intrinsics_noise_regime(fisheye, rng):
    P, obs = _board(rng, 500, fisheye, noise_rms=0.5)
    start = fisheye.with_params(fisheye.params() * np.r_[1.01, 0.99, 1, 1, 1, 1, 1, 1] + np.r_[0, 0, 1, -1, 0.01, 0, 0, 0])
    refined, rms = refine_intrinsics(P, obs, start)
    assert 0.3 <= rms <= 0.7
    from rigsfm.geometry import reprojection_rms
    assert rms <= reprojection_rms(P, obs, start)


def test_refine_intrinsics_degenerate(fisheye):
    P = np.column_stack([np.zeros(30), np.zeros(30), np.linspace(1, 3, 30)])
    obs = project(P, fisheye)
    with pytest.raises(DegenerateError):
        refine_intrinsics(P, obs, fisheye)
