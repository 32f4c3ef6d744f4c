"""The 24-dimensional navigation state and its forward propagation.

State blocks (tangent-space index ranges):

    0:3    attitude          world <- imu rotation
    3:6    position          imu origin in world (m)
    6:9    velocity          (m/s)
    9:12   gyro bias         (rad/s)
    12:15  accel bias        (m/s^2)
    15:18  gravity in world  (m/s^2), free 3-vector with zero dynamics
    18:21  extrinsic rotation  imu <- lidar
    21:24  extrinsic translation (m)

Rotation blocks retract via right multiplication with the exponential map
(`R * exp(delta)`); vector blocks add. Forward propagation discretizes the
continuous kinematics one IMU interval at a time with the process noise
set to zero, and pushes the covariance through the analytic error-state
Jacobians (validated against central finite differences in the tests).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .so3 import orthonormalize, right_jacobian, right_jacobian_inv, skew, \
    so3_exp, so3_log

DIM = 24
NOISE_DIM = 12
ATT, POS, VEL, BG, BA, GRAV, ATT_IL, POS_IL = 0, 3, 6, 9, 12, 15, 18, 21

_REORTHO_EVERY = 1000  # propagation steps between rotation re-orthonormalizations


@dataclass
class ImuSample:
    """One inertial measurement: angular velocity and specific force."""
    t: float
    omega: np.ndarray  # rad/s, body frame
    acc: np.ndarray    # m/s^2, body frame


@dataclass
class NoiseParams:
    """Continuous-time noise densities, per axis.

    gyro/accel noise in (rad/s)/sqrt(Hz) and (m/s^2)/sqrt(Hz); bias walks
    in (rad/s)/sqrt(s) and (m/s^2)/sqrt(s). Scalars broadcast to all three
    axes. Per step the discrete noise covariance is diag(density^2)/dt,
    which combined with the dt-scaled noise Jacobian grows the state
    covariance proportionally to dt.
    """
    gyro_noise: np.ndarray = field(default_factory=lambda: np.full(3, 1e-3))
    acc_noise: np.ndarray = field(default_factory=lambda: np.full(3, 1e-2))
    gyro_bias_walk: np.ndarray = field(default_factory=lambda: np.full(3, 1e-5))
    acc_bias_walk: np.ndarray = field(default_factory=lambda: np.full(3, 1e-4))

    def __post_init__(self):
        for name in ("gyro_noise", "acc_noise", "gyro_bias_walk", "acc_bias_walk"):
            v = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (3,)).copy()
            if (v < 0).any():
                raise ValueError(f"{name} must be non-negative")
            setattr(self, name, v)

    def q_diag(self) -> np.ndarray:
        """Diagonal of the 12x12 continuous-time noise covariance."""
        return np.concatenate([self.gyro_noise, self.acc_noise,
                               self.gyro_bias_walk, self.acc_bias_walk]) ** 2


@dataclass
class NavState:
    rot: np.ndarray        # world <- imu
    pos: np.ndarray
    vel: np.ndarray
    bias_gyro: np.ndarray
    bias_acc: np.ndarray
    gravity: np.ndarray    # world frame, ~(0, 0, -9.81)
    rot_il: np.ndarray     # imu <- lidar
    pos_il: np.ndarray

    @classmethod
    def identity(cls, gravity_mag: float = 9.81) -> "NavState":
        return cls(rot=np.eye(3), pos=np.zeros(3), vel=np.zeros(3),
                   bias_gyro=np.zeros(3), bias_acc=np.zeros(3),
                   gravity=np.array([0.0, 0.0, -gravity_mag]),
                   rot_il=np.eye(3), pos_il=np.zeros(3))

    def copy(self) -> "NavState":
        return NavState(self.rot.copy(), self.pos.copy(), self.vel.copy(),
                        self.bias_gyro.copy(), self.bias_acc.copy(),
                        self.gravity.copy(), self.rot_il.copy(),
                        self.pos_il.copy())


def boxplus(x: NavState, delta) -> NavState:
    """Retract a 24-vector tangent increment onto the state."""
    d = np.asarray(delta, dtype=float)
    return NavState(
        rot=x.rot @ so3_exp(d[ATT:ATT + 3]),
        pos=x.pos + d[POS:POS + 3],
        vel=x.vel + d[VEL:VEL + 3],
        bias_gyro=x.bias_gyro + d[BG:BG + 3],
        bias_acc=x.bias_acc + d[BA:BA + 3],
        gravity=x.gravity + d[GRAV:GRAV + 3],
        rot_il=x.rot_il @ so3_exp(d[ATT_IL:ATT_IL + 3]),
        pos_il=x.pos_il + d[POS_IL:POS_IL + 3],
    )


def boxminus(x1: NavState, x2: NavState) -> np.ndarray:
    """Tangent coordinates of x1 seen from x2: boxminus(x2 ⊕ d, x2) == d."""
    out = np.empty(DIM)
    out[ATT:ATT + 3] = so3_log(x2.rot.T @ x1.rot)
    out[POS:POS + 3] = x1.pos - x2.pos
    out[VEL:VEL + 3] = x1.vel - x2.vel
    out[BG:BG + 3] = x1.bias_gyro - x2.bias_gyro
    out[BA:BA + 3] = x1.bias_acc - x2.bias_acc
    out[GRAV:GRAV + 3] = x1.gravity - x2.gravity
    out[ATT_IL:ATT_IL + 3] = so3_log(x2.rot_il.T @ x1.rot_il)
    out[POS_IL:POS_IL + 3] = x1.pos_il - x2.pos_il
    return out


def kinematics_f(x: NavState, omega_m, acc_m, w=None, dt: float = 0.0) -> np.ndarray:
    """Continuous-time state derivative in tangent coordinates.

    The position row carries the half-interval velocity correction
    ``v + (R(a - b_a - n_a) + g) * dt / 2`` so that the dt-scaled
    retraction integrates position to second order. Gravity and extrinsic
    rows are zero.
    """
    if w is None:
        w = np.zeros(NOISE_DIM)
    w = np.asarray(w, dtype=float)
    omega = np.asarray(omega_m, dtype=float) - x.bias_gyro - w[0:3]
    acc_body = np.asarray(acc_m, dtype=float) - x.bias_acc - w[3:6]
    acc_world = x.rot @ acc_body + x.gravity
    out = np.zeros(DIM)
    out[ATT:ATT + 3] = omega
    out[POS:POS + 3] = x.vel + 0.5 * acc_world * dt
    out[VEL:VEL + 3] = acc_world
    out[BG:BG + 3] = w[6:9]
    out[BA:BA + 3] = w[9:12]
    return out


def jacobians_fx_fw(x: NavState, omega_m, acc_m, dt: float
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Error-state Jacobians of one discrete propagation step.

    F_x = d(x_next_true [-] x_next_nominal) / d(error state), F_w likewise
    for the noise vector, both evaluated at zero error and zero noise.
    """
    omega = np.asarray(omega_m, dtype=float) - x.bias_gyro
    acc_body = np.asarray(acc_m, dtype=float) - x.bias_acc
    rot = x.rot
    jr = right_jacobian(omega * dt)
    acc_skew = rot @ skew(acc_body)

    fx = np.eye(DIM)
    fx[ATT:ATT + 3, ATT:ATT + 3] = so3_exp(omega * dt).T
    fx[ATT:ATT + 3, BG:BG + 3] = -dt * jr
    fx[POS:POS + 3, VEL:VEL + 3] = dt * np.eye(3)
    fx[POS:POS + 3, ATT:ATT + 3] = -0.5 * dt * dt * acc_skew
    fx[POS:POS + 3, BA:BA + 3] = -0.5 * dt * dt * rot
    fx[POS:POS + 3, GRAV:GRAV + 3] = 0.5 * dt * dt * np.eye(3)
    fx[VEL:VEL + 3, ATT:ATT + 3] = -dt * acc_skew
    fx[VEL:VEL + 3, BA:BA + 3] = -dt * rot
    fx[VEL:VEL + 3, GRAV:GRAV + 3] = dt * np.eye(3)

    fw = np.zeros((DIM, NOISE_DIM))
    fw[ATT:ATT + 3, 0:3] = -dt * jr
    fw[POS:POS + 3, 3:6] = -0.5 * dt * dt * rot
    fw[VEL:VEL + 3, 3:6] = -dt * rot
    fw[BG:BG + 3, 6:9] = dt * np.eye(3)
    fw[BA:BA + 3, 9:12] = dt * np.eye(3)
    return fx, fw


def propagate(x: NavState, cov: np.ndarray, imu: list[ImuSample],
              noise: NoiseParams) -> tuple[NavState, np.ndarray]:
    """Integrate state and covariance across consecutive IMU intervals.

    Each interval [t_i, t_{i+1}] uses the measurement at its left endpoint.
    Buffers with fewer than two samples return the inputs unchanged;
    non-monotone timestamps are an error. The returned covariance is
    symmetrized; rotations are re-orthonormalized periodically and at the
    end.
    """
    if len(imu) < 2:
        return x.copy(), np.array(cov, dtype=float, copy=True)
    x = x.copy()
    cov = np.array(cov, dtype=float, copy=True)
    q_cont = noise.q_diag()
    steps = 0
    for i in range(len(imu) - 1):
        dt = imu[i + 1].t - imu[i].t
        if dt <= 0:
            raise ValueError(f"non-monotone imu timestamps at index {i}")
        u = imu[i]
        fx, fw = jacobians_fx_fw(x, u.omega, u.acc, dt)
        delta = dt * kinematics_f(x, u.omega, u.acc, None, dt)
        x = boxplus(x, delta)
        cov = fx @ cov @ fx.T + fw @ np.diag(q_cont / dt) @ fw.T
        cov = 0.5 * (cov + cov.T)
        steps += 1
        if steps % _REORTHO_EVERY == 0:
            x.rot = orthonormalize(x.rot)
            x.rot_il = orthonormalize(x.rot_il)
    x.rot = orthonormalize(x.rot)
    x.rot_il = orthonormalize(x.rot_il)
    return x, cov


def compute_iterate_jacobian(x_iter: NavState, x_prop: NavState) -> np.ndarray:
    """Jacobian of the prior error w.r.t. the current iterate's tangent.

    Block diagonal: inverse right Jacobians of the attitude and extrinsic
    rotation offsets between iterate and propagated state, identity on the
    Euclidean blocks. Equals the identity on the first iteration.
    """
    j = np.eye(DIM)
    dtheta = so3_log(x_prop.rot.T @ x_iter.rot)
    j[ATT:ATT + 3, ATT:ATT + 3] = right_jacobian_inv(dtheta)
    dtheta_il = so3_log(x_prop.rot_il.T @ x_iter.rot_il)
    j[ATT_IL:ATT_IL + 3, ATT_IL:ATT_IL + 3] = right_jacobian_inv(dtheta_il)
    return j
