import math

import numpy as np
import pytest

from liomap.so3 import so3_exp, so3_log
from liomap.state import (ATT, ATT_IL, BA, BG, DIM, GRAV, POS, POS_IL, VEL,
                          ImuSample, NavState, NoiseParams, boxminus, boxplus,
                          compute_iterate_jacobian, jacobians_fx_fw,
                          kinematics_f, propagate)

G = 9.81


def random_state(rng, rot_scale=2.5):
    def rv(s):
        v = rng.normal(size=3)
        return v / np.linalg.norm(v) * rng.uniform(0, s)
    return NavState(
        rot=so3_exp(rv(rot_scale)),
        pos=rng.normal(size=3) * 5,
        vel=rng.normal(size=3),
        bias_gyro=rng.normal(size=3) * 0.01,
        bias_acc=rng.normal(size=3) * 0.1,
        gravity=np.array([0, 0, -G]) + rng.normal(size=3) * 0.05,
        rot_il=so3_exp(rv(0.5)),
        pos_il=rng.normal(size=3) * 0.1,
    )


def rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(a).max(), 1.0)


# -- retraction ---------------------------------------------------------------

def test_boxplus_zero():
    x = NavState.identity()
    y = boxplus(x, np.zeros(DIM))
    assert np.allclose(y.rot, x.rot) and np.allclose(y.pos, x.pos)


def test_boxminus_self_is_zero():
    rng = np.random.default_rng(0)
    x = random_state(rng)
    np.testing.assert_allclose(boxminus(x, x), np.zeros(DIM), atol=1e-12)


def test_box_roundtrip():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(1000):
        x = random_state(rng)
        delta = rng.normal(size=DIM)
        for blk in (ATT, ATT_IL):
            n = np.linalg.norm(delta[blk:blk + 3])
            if n > 0:
                delta[blk:blk + 3] *= rng.uniform(0, 2.9) / n
        got = boxminus(boxplus(x, delta), x)
        worst = max(worst, np.abs(got - delta).max())
    assert worst < 1e-8


# -- kinematics ---------------------------------------------------------------

def test_kinematics_stationary():
    x = NavState.identity()
    f = kinematics_f(x, np.zeros(3), np.array([0, 0, G]), None, dt=0.005)
    np.testing.assert_allclose(f, np.zeros(DIM), atol=1e-12)


def test_kinematics_bias_cancels_rate():
    rng = np.random.default_rng(2)
    x = random_state(rng)
    omega = rng.normal(size=3)
    x.bias_gyro = omega.copy()
    f = kinematics_f(x, omega, rng.normal(size=3), None, dt=0.01)
    np.testing.assert_allclose(f[ATT:ATT + 3], np.zeros(3), atol=1e-15)


def test_kinematics_constant_rows_are_zero():
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = random_state(rng)
        f = kinematics_f(x, rng.normal(size=3), rng.normal(size=3),
                         rng.normal(size=12), dt=0.01)
        assert np.all(f[GRAV:GRAV + 3] == 0)
        assert np.all(f[ATT_IL:] == 0)


def test_kinematics_position_midpoint_term():
    rng = np.random.default_rng(4)
    x = random_state(rng)
    omega = rng.normal(size=3)
    acc = rng.normal(size=3)
    dt = 0.02
    f = kinematics_f(x, omega, acc, None, dt)
    acc_world = x.rot @ (acc - x.bias_acc) + x.gravity
    np.testing.assert_allclose(f[POS:POS + 3], x.vel + 0.5 * acc_world * dt,
                               atol=1e-12)
    np.testing.assert_allclose(f[VEL:VEL + 3], acc_world, atol=1e-12)


# -- propagation --------------------------------------------------------------

def still_buffer(duration, rate=200.0):
    n = int(duration * rate) + 1
    return [ImuSample(i / rate, np.zeros(3), np.array([0, 0, G]))
            for i in range(n)]


def test_propagate_zero_motion():
    x = NavState.identity()
    p0 = np.eye(DIM) * 1e-4
    x1, p1 = propagate(x, p0, still_buffer(1.0), NoiseParams())
    assert np.abs(x1.pos).max() < 1e-9
    assert np.abs(so3_log(x1.rot)).max() < 1e-9
    assert np.abs(x1.vel).max() < 1e-9
    # covariance stays symmetric and positive semidefinite
    np.testing.assert_allclose(p1, p1.T, atol=1e-12)
    assert np.linalg.eigvalsh(p1).min() >= -1e-9


def test_propagate_pure_yaw():
    x = NavState.identity()
    rate = 1000.0
    n = int(rate) + 1
    # a yawing body feels no extra specific force at the origin
    buf = [ImuSample(i / rate, np.array([0, 0, 1.0]), np.array([0, 0, G]))
           for i in range(n)]
    x1, _ = propagate(x, np.eye(DIM) * 1e-6, buf, NoiseParams())
    yaw = so3_log(x1.rot)
    np.testing.assert_allclose(yaw, [0, 0, 1.0], atol=1e-6)


def test_propagate_covariance_grows():
    x = NavState.identity()
    p0 = np.eye(DIM) * 1e-8
    _, p1 = propagate(x, p0, still_buffer(0.1), NoiseParams())
    assert np.trace(p1) > np.trace(p0)


def test_propagate_short_buffers_and_errors():
    x = NavState.identity()
    p = np.eye(DIM)
    x1, p1 = propagate(x, p, [], NoiseParams())
    assert np.allclose(p1, p)
    x1, p1 = propagate(x, p, [ImuSample(0.0, np.zeros(3), np.zeros(3))],
                       NoiseParams())
    assert np.allclose(p1, p)
    bad = [ImuSample(0.0, np.zeros(3), np.zeros(3)),
           ImuSample(0.0, np.zeros(3), np.zeros(3))]
    with pytest.raises(ValueError):
        propagate(x, p, bad, NoiseParams())


def test_orthonormality_preserved_over_many_steps():
    rng = np.random.default_rng(5)
    x = NavState.identity()
    p = np.eye(DIM) * 1e-6
    rate = 200.0
    chunk = 1000
    steps = 30_000
    t0 = 0.0
    for _ in range(steps // chunk):
        buf = [ImuSample(t0 + i / rate,
                         rng.normal(size=3) * 2.0,
                         rng.normal(size=3) * 5.0 + np.array([0, 0, G]))
               for i in range(chunk + 1)]
        x, p = propagate(x, p, buf, NoiseParams())
        t0 += (chunk + 1) / rate
    assert np.abs(x.rot.T @ x.rot - np.eye(3)).max() < 1e-6
    assert np.abs(x.rot_il.T @ x.rot_il - np.eye(3)).max() < 1e-6


# -- jacobians ----------------------------------------------------------------

def _step(x, omega, acc, w, dt):
    return boxplus(x, dt * kinematics_f(x, omega, acc, w, dt))


def fd_fx(x, omega, acc, dt, h=1e-6):
    nominal = _step(x, omega, acc, None, dt)
    out = np.empty((DIM, DIM))
    for i in range(DIM):
        e = np.zeros(DIM)
        e[i] = h
        xp = _step(boxplus(x, e), omega, acc, None, dt)
        xm = _step(boxplus(x, -e), omega, acc, None, dt)
        out[:, i] = (boxminus(xp, nominal) - boxminus(xm, nominal)) / (2 * h)
    return out


def fd_fw(x, omega, acc, dt, h=1e-6):
    nominal = _step(x, omega, acc, None, dt)
    out = np.empty((DIM, 12))
    for i in range(12):
        w = np.zeros(12)
        w[i] = h
        xp = _step(x, omega, acc, w, dt)
        w[i] = -h
        xm = _step(x, omega, acc, w, dt)
        out[:, i] = (boxminus(xp, nominal) - boxminus(xm, nominal)) / (2 * h)
    return out


def test_fx_identity_limit():
    x = NavState.identity()
    fx, _ = jacobians_fx_fw(x, np.zeros(3), np.array([0, 0, G]), 1e-12)
    np.testing.assert_allclose(fx, np.eye(DIM), atol=1e-9)


def test_fw_gravity_rows_zero():
    rng = np.random.default_rng(6)
    x = random_state(rng)
    _, fw = jacobians_fx_fw(x, rng.normal(size=3), rng.normal(size=3), 0.005)
    assert np.all(fw[GRAV:GRAV + 3] == 0)
    assert np.all(fw[ATT_IL:] == 0)


def test_jacobians_match_finite_differences():
    rng = np.random.default_rng(7)
    dt = 0.005
    for _ in range(25):
        x = random_state(rng)
        omega = rng.normal(size=3) * 3
        acc = rng.normal(size=3) * 10
        fx, fw = jacobians_fx_fw(x, omega, acc, dt)
        assert rel_err(fd_fx(x, omega, acc, dt), fx) < 1e-5
        assert rel_err(fd_fw(x, omega, acc, dt), fw) < 1e-5


def test_iterate_jacobian_first_iteration_identity():
    rng = np.random.default_rng(8)
    x = random_state(rng)
    np.testing.assert_allclose(compute_iterate_jacobian(x, x), np.eye(DIM),
                               atol=1e-12)


def test_iterate_jacobian_euclidean_block_identity():
    rng = np.random.default_rng(9)
    x_prop = random_state(rng)
    x_iter = boxplus(x_prop, rng.normal(size=DIM) * 0.3)
    j = compute_iterate_jacobian(x_iter, x_prop)
    np.testing.assert_allclose(j[POS:GRAV + 3, POS:GRAV + 3], np.eye(15),
                               atol=1e-15)


def test_iterate_jacobian_matches_finite_differences():
    rng = np.random.default_rng(10)
    h = 1e-6
    for _ in range(25):
        x_prop = random_state(rng)
        delta = rng.normal(size=DIM) * 0.3
        delta[ATT:ATT + 3] = np.array([0.3, 0, 0]) if _ == 0 else delta[ATT:ATT + 3]
        x_iter = boxplus(x_prop, delta)
        j = compute_iterate_jacobian(x_iter, x_prop)
        num = np.empty((DIM, DIM))
        for i in range(DIM):
            e = np.zeros(DIM)
            e[i] = h
            fp = boxminus(boxplus(x_iter, e), x_prop)
            fm = boxminus(boxplus(x_iter, -e), x_prop)
            num[:, i] = (fp - fm) / (2 * h)
        assert rel_err(num, j) < 1e-5


def test_noise_params_validation():
    with pytest.raises(ValueError):
        NoiseParams(gyro_noise=-1.0)
    q = NoiseParams(gyro_noise=2e-3).q_diag()
    assert q.shape == (12,)
    np.testing.assert_allclose(q[:3], 4e-6)
