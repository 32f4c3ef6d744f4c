import math

import numpy as np

from liomap.so3 import (left_jacobian, left_jacobian_inv, orthonormalize,
                        quat_to_rot, right_jacobian, rot_to_quat, skew,
                        so3_exp, so3_log)


def random_rotvec(rng, max_norm=3.0):
    v = rng.normal(size=3)
    n = np.linalg.norm(v)
    scale = rng.uniform(0, max_norm)
    return v / n * scale if n > 0 else v


def test_exp_zero_is_identity():
    np.testing.assert_allclose(so3_exp(np.zeros(3)), np.eye(3), atol=1e-15)


def test_exp_quarter_turn_about_x():
    r = so3_exp((math.pi / 2, 0, 0))
    np.testing.assert_allclose(r @ np.array([0, 1, 0]), [0, 0, 1], atol=1e-12)


def test_log_exp_roundtrip():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        v = random_rotvec(rng)
        err = np.abs(so3_log(so3_exp(v)) - v).max()
        worst = max(worst, err)
    assert worst < 1e-9


def test_log_small_angles():
    rng = np.random.default_rng(1)
    for _ in range(200):
        v = rng.normal(size=3) * 1e-6
        np.testing.assert_allclose(so3_log(so3_exp(v)), v, atol=1e-18)


def test_log_near_pi():
    rng = np.random.default_rng(2)
    for _ in range(100):
        v = rng.normal(size=3)
        v = v / np.linalg.norm(v) * (math.pi - 1e-4)
        np.testing.assert_allclose(so3_log(so3_exp(v)), v, atol=1e-7)


def test_orthonormal_outputs():
    rng = np.random.default_rng(3)
    for _ in range(100):
        r = so3_exp(random_rotvec(rng))
        np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-12)
        assert abs(np.linalg.det(r) - 1.0) < 1e-12


def test_left_jacobian_matches_finite_differences():
    # defining relation: exp(theta + d) ~ exp(J_l(theta) d) exp(theta)
    rng = np.random.default_rng(4)
    h = 1e-7
    for _ in range(50):
        theta = random_rotvec(rng, 2.5)
        jl = left_jacobian(theta)
        num = np.empty((3, 3))
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            dp = so3_log(so3_exp(theta + e) @ so3_exp(theta).T)
            dm = so3_log(so3_exp(theta - e) @ so3_exp(theta).T)
            num[:, i] = (dp - dm) / (2 * h)
        np.testing.assert_allclose(jl, num, atol=1e-6)


def test_right_jacobian_matches_finite_differences():
    # defining relation: exp(theta + d) ~ exp(theta) exp(J_r(theta) d)
    rng = np.random.default_rng(5)
    h = 1e-7
    for _ in range(50):
        theta = random_rotvec(rng, 2.5)
        jr = right_jacobian(theta)
        num = np.empty((3, 3))
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            dp = so3_log(so3_exp(theta).T @ so3_exp(theta + e))
            dm = so3_log(so3_exp(theta).T @ so3_exp(theta - e))
            num[:, i] = (dp - dm) / (2 * h)
        np.testing.assert_allclose(jr, num, atol=1e-6)


def test_jacobian_inverse_pairs():
    rng = np.random.default_rng(6)
    for _ in range(100):
        theta = random_rotvec(rng, 2.9)
        np.testing.assert_allclose(left_jacobian(theta) @ left_jacobian_inv(theta),
                                   np.eye(3), atol=1e-9)
    # Taylor fallback region
    for _ in range(50):
        theta = rng.normal(size=3) * 1e-5
        np.testing.assert_allclose(left_jacobian(theta) @ left_jacobian_inv(theta),
                                   np.eye(3), atol=1e-12)


def test_orthonormalize_projects_back():
    rng = np.random.default_rng(7)
    r = so3_exp(random_rotvec(rng))
    drifted = r + rng.normal(size=(3, 3)) * 1e-6
    fixed = orthonormalize(drifted)
    np.testing.assert_allclose(fixed.T @ fixed, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(fixed, r, atol=1e-5)


def test_quaternion_roundtrip():
    rng = np.random.default_rng(8)
    for _ in range(200):
        r = so3_exp(random_rotvec(rng))
        q = rot_to_quat(r)
        assert q[0] >= 0
        assert abs(np.linalg.norm(q) - 1) < 1e-12
        np.testing.assert_allclose(quat_to_rot(q), r, atol=1e-12)
    np.testing.assert_allclose(quat_to_rot([1, 0, 0, 0]), np.eye(3), atol=1e-15)


def test_skew_cross_product():
    rng = np.random.default_rng(9)
    a, b = rng.normal(size=3), rng.normal(size=3)
    np.testing.assert_allclose(skew(a) @ b, np.cross(a, b), atol=1e-14)
