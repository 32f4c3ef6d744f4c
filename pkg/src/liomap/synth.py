"""Deterministic synthetic world, trajectory, IMU and LiDAR generation.

The world is a set of finite planar rectangles. Trajectories are analytic
(closed-form value and derivatives), so the generated IMU stream is exact
and noise-free integration reproduces the trajectory. Every random
quantity derives from one seed; per-scan generators are seeded
independently so scans can be produced in any order.

Scan points each carry their own sample timestamp and are expressed in
the sensor frame at that timestamp, which is what produces motion
distortion when the sensor moves during a scan. Rays that hit no surface
are dropped. Point intensity carries the id of the surface that was hit.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, fields

import numpy as np

from . import dataset as dset
from .so3 import quat_to_rot, rot_to_quat

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


# -- scalar channels with closed-form derivatives ----------------------------

class Channel:
    def value(self, t):
        raise NotImplementedError

    def d1(self, t):
        raise NotImplementedError

    def d2(self, t):
        raise NotImplementedError


class Const(Channel):
    def __init__(self, c: float = 0.0):
        self.c = float(c)

    def value(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.c)

    def d1(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    d2 = d1


class Sum(Channel):
    def __init__(self, *parts: Channel):
        self.parts = parts

    def value(self, t):
        return sum(p.value(t) for p in self.parts)

    def d1(self, t):
        return sum(p.d1(t) for p in self.parts)

    def d2(self, t):
        return sum(p.d2(t) for p in self.parts)


def _q5(v):
    return v ** 3 * (10.0 + v * (-15.0 + 6.0 * v))


def _q5_d(v):
    return v ** 2 * (30.0 + v * (-60.0 + 30.0 * v))


def _q5_dd(v):
    return v * (60.0 + v * (-180.0 + 120.0 * v))


def _q5_int(v):
    # integral of _q5 from 0 to v
    return v ** 4 * (2.5 + v * (-3.0 + v))


class RampedRate(Channel):
    """Angle whose rate ramps 0 -> rate -> 0 with quintic ease in/out.

    The rate holds a plateau between the ramps, so angle rate, its
    derivative and the angle itself are all C^2 and closed form. Before
    t0 the angle is 0; after t1 it stays at its final value.
    """

    def __init__(self, rate: float, t0: float, t1: float, ramp: float):
        if t1 - t0 < 2 * ramp:
            raise ValueError("motion window shorter than the two rate ramps")
        self.rate = float(rate)
        self.t0 = float(t0)
        self.t1 = float(t1)
        self.ramp = float(ramp)

    @classmethod
    def with_total(cls, total: float, t0: float, t1: float, ramp: float):
        """Choose the plateau rate so the angle sweeps `total` overall."""
        rate = total / ((t1 - t0) - ramp)  # ramps each contribute rate*ramp/2
        return cls(rate, t0, t1, ramp)

    @property
    def total(self) -> float:
        return self.rate * ((self.t1 - self.t0) - self.ramp)

    def _eval(self, t, what):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        r, t0, t1, tr = self.rate, self.t0, self.t1, self.ramp
        up = (t > t0) & (t < t0 + tr)
        mid = (t >= t0 + tr) & (t <= t1 - tr)
        down = (t > t1 - tr) & (t < t1)
        after = t >= t1
        v_up = (t[up] - t0) / tr
        v_dn = (t1 - t[down]) / tr
        if what == "value":
            out[up] = r * tr * _q5_int(v_up)
            out[mid] = r * tr * 0.5 + r * (t[mid] - t0 - tr)
            out[down] = self.total - r * tr * _q5_int(v_dn)
            out[after] = self.total
        elif what == "d1":
            out[up] = r * _q5(v_up)
            out[mid] = r
            out[down] = r * _q5(v_dn)
        else:
            out[up] = r * _q5_d(v_up) / tr
            out[down] = -r * _q5_d(v_dn) / tr
        return out

    def value(self, t):
        return self._eval(t, "value")

    def d1(self, t):
        return self._eval(t, "d1")

    def d2(self, t):
        return self._eval(t, "d2")


class WindowedSine(Channel):
    """amp * sin(2 pi f (t - t0)) under a quintic fade-in/out window."""

    def __init__(self, amp: float, freq: float, t0: float, t1: float,
                 ramp: float, phase: float = 0.0):
        self.amp = float(amp)
        self.w = 2.0 * math.pi * float(freq)
        self.t0 = float(t0)
        self.t1 = float(t1)
        self.ramp = float(ramp)
        self.phase = float(phase)

    def _window(self, t):
        tr = self.ramp
        u = np.clip((t - self.t0) / tr, 0.0, 1.0)
        v = np.clip((self.t1 - t) / tr, 0.0, 1.0)
        w = _q5(u) * _q5(v)
        dw = (_q5_d(u) / tr) * _q5(v) - _q5(u) * (_q5_d(v) / tr)
        ddw = (_q5_dd(u) / tr ** 2) * _q5(v) \
            - 2.0 * (_q5_d(u) / tr) * (_q5_d(v) / tr) \
            + _q5(u) * (_q5_dd(v) / tr ** 2)
        # clip kills derivatives outside the ramps
        in_up = (t > self.t0) & (t < self.t0 + tr)
        in_dn = (t > self.t1 - tr) & (t < self.t1)
        dw = np.where(in_up | in_dn, dw, 0.0)
        ddw = np.where(in_up | in_dn, ddw, 0.0)
        return w, dw, ddw

    def value(self, t):
        t = np.asarray(t, dtype=float)
        w, _, _ = self._window(t)
        return self.amp * np.sin(self.w * (t - self.t0) + self.phase) * w

    def d1(self, t):
        t = np.asarray(t, dtype=float)
        w, dw, _ = self._window(t)
        arg = self.w * (t - self.t0) + self.phase
        return self.amp * (self.w * np.cos(arg) * w + np.sin(arg) * dw)

    def d2(self, t):
        t = np.asarray(t, dtype=float)
        w, dw, ddw = self._window(t)
        arg = self.w * (t - self.t0) + self.phase
        return self.amp * (-self.w ** 2 * np.sin(arg) * w
                           + 2.0 * self.w * np.cos(arg) * dw
                           + np.sin(arg) * ddw)


# -- world --------------------------------------------------------------------

@dataclass(frozen=True)
class Rect:
    """Finite planar rectangle: corner plus two independent edge vectors."""
    corner: tuple
    edge_u: tuple
    edge_v: tuple
    surface_id: int

    def __post_init__(self):
        n = np.cross(self.edge_u, self.edge_v)
        if np.linalg.norm(n) < 1e-12:
            raise ValueError("degenerate rectangle: edge vectors are dependent")

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.edge_u, self.edge_v)
        return n / np.linalg.norm(n)


@dataclass
class WorldModel:
    rects: list[Rect]

    def cast_rays(self, origins: np.ndarray, dirs: np.ndarray,
                  max_range: float) -> tuple[np.ndarray, np.ndarray]:
        """Nearest-hit ranges and surface ids; misses get inf and -1."""
        n_rays = origins.shape[0]
        best_t = np.full(n_rays, np.inf)
        best_id = np.full(n_rays, -1, dtype=int)
        for rect in self.rects:
            c = np.asarray(rect.corner, dtype=float)
            eu = np.asarray(rect.edge_u, dtype=float)
            ev = np.asarray(rect.edge_v, dtype=float)
            nrm = np.cross(eu, ev)
            denom = dirs @ nrm
            with np.errstate(divide="ignore", invalid="ignore"):
                t = ((c - origins) @ nrm) / denom
            ok = (np.abs(denom) > 1e-12) & (t > 1e-6) & (t <= max_range) \
                & (t < best_t)
            if not ok.any():
                continue
            q = origins[ok] + t[ok, None] * dirs[ok]
            d = q - c
            # local coordinates via the 2x2 Gram system (edges need not be
            # orthogonal)
            guu, gvv, guv = eu @ eu, ev @ ev, eu @ ev
            du, dv = d @ eu, d @ ev
            det = guu * gvv - guv * guv
            s1 = (gvv * du - guv * dv) / det
            s2 = (guu * dv - guv * du) / det
            inside = (s1 >= 0) & (s1 <= 1) & (s2 >= 0) & (s2 <= 1)
            sel = np.flatnonzero(ok)[inside]
            best_t[sel] = t[sel]
            best_id[sel] = rect.surface_id
        return best_t, best_id


def make_room_world(size=(50.0, 50.0, 12.0), panels: int = 4) -> WorldModel:
    """Rectangular room centered on the z axis, floor at z=0, plus some
    tilted interior panels that break the axis-aligned symmetry."""
    sx, sy, sz = (float(v) for v in size)
    hx, hy = sx / 2.0, sy / 2.0
    rects = [
        Rect((-hx, -hy, 0.0), (sx, 0, 0), (0, sy, 0), 0),    # floor
        Rect((-hx, -hy, sz), (sx, 0, 0), (0, sy, 0), 1),     # ceiling
        Rect((-hx, -hy, 0.0), (sx, 0, 0), (0, 0, sz), 2),    # wall y = -hy
        Rect((-hx, hy, 0.0), (sx, 0, 0), (0, 0, sz), 3),     # wall y = +hy
        Rect((-hx, -hy, 0.0), (0, sy, 0), (0, 0, sz), 4),    # wall x = -hx
        Rect((hx, -hy, 0.0), (0, sy, 0), (0, 0, sz), 5),     # wall x = +hx
    ]
    rng = np.random.default_rng(12345)  # fixed: panels are part of the world
    for i in range(panels):
        ang = 2.0 * math.pi * i / max(panels, 1)
        cx, cy = 0.62 * hx * math.cos(ang), 0.62 * hy * math.sin(ang)
        tilt = rng.uniform(0.3, 0.9)
        eu = np.array([math.cos(ang + 1.0), math.sin(ang + 1.0), 0.0]) * 6.0
        ev = np.array([0.0, 0.0, 1.0]) * 5.0 + np.array(
            [math.cos(ang), math.sin(ang), 0.0]) * tilt * 2.0
        rects.append(Rect((cx - eu[0] / 2, cy - eu[1] / 2, 1.0),
                          tuple(eu), tuple(ev), 6 + i))
    return WorldModel(rects)


# -- trajectory ---------------------------------------------------------------

@dataclass
class TrajectorySpec:
    """Closed loop in a horizontal circle with optional attitude motion.

    All motion starts after `still_time` (the sensor is exactly static
    before that) and eases in/out over `ramp_time`, so the pose is twice
    differentiable everywhere and the platform starts and ends at rest.
    """
    duration: float = 60.0
    still_time: float = 1.0
    ramp_time: float = 4.0
    center: tuple = (0.0, 0.0, 6.0)
    radius: float = 15.915  # ~100 m circumference
    turns: float = 1.0
    yaw_follow_tangent: bool = True
    spin_rate_dps: float = 0.0     # sustained extra yaw spin (plateau rate)
    yaw_wobble_amp: float = 0.0    # rad
    yaw_wobble_freq: float = 0.3   # Hz
    pitch_amp: float = 0.08
    pitch_freq: float = 0.5
    roll_amp: float = 0.06
    roll_freq: float = 0.4
    z_bob_amp: float = 0.0
    z_bob_freq: float = 0.2

    def __post_init__(self):
        if self.duration <= self.still_time + 2 * self.ramp_time:
            raise ValueError("duration too short for the motion ramps")


class Trajectory:
    def __init__(self, spec: TrajectorySpec):
        self.spec = spec
        t0 = spec.still_time
        t1 = spec.duration
        tr = spec.ramp_time
        self.theta = RampedRate.with_total(2.0 * math.pi * spec.turns, t0, t1, tr)
        spin_total_sign = 1.0
        self.spin = RampedRate(math.radians(spec.spin_rate_dps) * spin_total_sign,
                               t0, t1, tr)
        self.yaw_wobble = WindowedSine(spec.yaw_wobble_amp, spec.yaw_wobble_freq,
                                       t0, t1, tr)
        self.pitch = WindowedSine(spec.pitch_amp, spec.pitch_freq, t0, t1, tr)
        self.roll = WindowedSine(spec.roll_amp, spec.roll_freq, t0, t1, tr,
                                 phase=0.7)
        self.z_bob = WindowedSine(spec.z_bob_amp, spec.z_bob_freq, t0, t1, tr)

    # angles ------------------------------------------------------------------

    def _yaw(self, t):
        s = self.spec
        base = self.theta.value(t) + (math.pi / 2.0 if s.yaw_follow_tangent else 0.0)
        return base + self.spin.value(t) + self.yaw_wobble.value(t)

    def _yaw_d1(self, t):
        return self.theta.d1(t) + self.spin.d1(t) + self.yaw_wobble.d1(t)

    # pose --------------------------------------------------------------------

    def position(self, t):
        t = np.asarray(t, dtype=float)
        s = self.spec
        th = self.theta.value(t)
        p = np.empty(t.shape + (3,))
        p[..., 0] = s.center[0] + s.radius * np.cos(th)
        p[..., 1] = s.center[1] + s.radius * np.sin(th)
        p[..., 2] = s.center[2] + self.z_bob.value(t)
        return p

    def velocity(self, t):
        t = np.asarray(t, dtype=float)
        s = self.spec
        th = self.theta.value(t)
        thd = self.theta.d1(t)
        v = np.empty(t.shape + (3,))
        v[..., 0] = -s.radius * np.sin(th) * thd
        v[..., 1] = s.radius * np.cos(th) * thd
        v[..., 2] = self.z_bob.d1(t)
        return v

    def acceleration(self, t):
        t = np.asarray(t, dtype=float)
        s = self.spec
        th = self.theta.value(t)
        thd = self.theta.d1(t)
        thdd = self.theta.d2(t)
        a = np.empty(t.shape + (3,))
        a[..., 0] = -s.radius * (np.cos(th) * thd ** 2 + np.sin(th) * thdd)
        a[..., 1] = s.radius * (-np.sin(th) * thd ** 2 + np.cos(th) * thdd)
        a[..., 2] = self.z_bob.d2(t)
        return a

    def rotation(self, t):
        """World <- body matrices, shape (..., 3, 3); yaw-pitch-roll order."""
        t = np.asarray(t, dtype=float)
        psi = self._yaw(t)
        th = self.pitch.value(t)
        ph = self.roll.value(t)
        cps, sps = np.cos(psi), np.sin(psi)
        cth, sth = np.cos(th), np.sin(th)
        cph, sph = np.cos(ph), np.sin(ph)
        r = np.empty(t.shape + (3, 3))
        r[..., 0, 0] = cps * cth
        r[..., 0, 1] = cps * sth * sph - sps * cph
        r[..., 0, 2] = cps * sth * cph + sps * sph
        r[..., 1, 0] = sps * cth
        r[..., 1, 1] = sps * sth * sph + cps * cph
        r[..., 1, 2] = sps * sth * cph - cps * sph
        r[..., 2, 0] = -sth
        r[..., 2, 1] = cth * sph
        r[..., 2, 2] = cth * cph
        return r

    def body_rate(self, t):
        """Angular velocity in the body frame for the yaw-pitch-roll chain."""
        t = np.asarray(t, dtype=float)
        psi_d = self._yaw_d1(t)
        th = self.pitch.value(t)
        th_d = self.pitch.d1(t)
        ph = self.roll.value(t)
        ph_d = self.roll.d1(t)
        cth, sth = np.cos(th), np.sin(th)
        cph, sph = np.cos(ph), np.sin(ph)
        w = np.empty(t.shape + (3,))
        w[..., 0] = ph_d - psi_d * sth
        w[..., 1] = th_d * cph + psi_d * cth * sph
        w[..., 2] = psi_d * cth * cph - th_d * sph
        return w


# -- sensors ------------------------------------------------------------------

@dataclass
class SensorSpec:
    imu_rate_hz: float = 200.0
    scan_rate_hz: float = 10.0
    points_per_scan: int = 2000
    fov_az_deg: float = 60.0   # half angle
    fov_el_deg: float = 35.0   # half angle
    pattern: str = "rosette"   # non-repetitive by default; or "raster"
    raster_rows: int = 24
    max_range_m: float = 120.0
    range_std_m: float = 0.02
    dir_noise_rad: float = 0.0  # beam-direction noise, off by default
    gyro_noise_density: float = 1e-3
    acc_noise_density: float = 1e-2
    gyro_bias_walk: float = 1e-5
    acc_bias_walk: float = 1e-4
    gyro_bias_init: tuple = (0.002, -0.001, 0.0015)
    acc_bias_init: tuple = (0.02, -0.01, 0.03)
    gravity_mag: float = 9.81
    q_il: tuple = (1.0, 0.0, 0.0, 0.0)   # imu <- lidar, scalar first
    p_il: tuple = (0.05, 0.02, -0.03)

    def __post_init__(self):
        if self.imu_rate_hz <= 0 or self.scan_rate_hz <= 0:
            raise ValueError("sensor rates must be positive")
        if self.range_std_m < 0:
            raise ValueError("range noise must be non-negative")
        if self.pattern not in ("raster", "rosette"):
            raise ValueError(f"unknown scan pattern {self.pattern!r}")

    def rot_il(self) -> np.ndarray:
        return quat_to_rot(self.q_il)


def scan_directions(spec: SensorSpec, scan_index: int) -> np.ndarray:
    """Unit ray directions in the sensor frame (x forward), one per point."""
    n = spec.points_per_scan
    az_half = math.radians(spec.fov_az_deg)
    el_half = math.radians(spec.fov_el_deg)
    if spec.pattern == "raster":
        rows = spec.raster_rows
        cols = (n + rows - 1) // rows
        el_rows = np.linspace(-el_half, el_half, rows)
        az_cols = np.linspace(-az_half, az_half, cols)
        az = np.empty(rows * cols)
        el = np.empty(rows * cols)
        for r in range(rows):
            sweep = az_cols if r % 2 == 0 else az_cols[::-1]  # serpentine
            az[r * cols:(r + 1) * cols] = sweep
            el[r * cols:(r + 1) * cols] = el_rows[r]
        az, el = az[:n], el[:n]
    else:
        u = np.arange(n) / n
        phase = GOLDEN_ANGLE * scan_index  # non-repetitive across scans
        az = az_half * np.sin(2.0 * math.pi * 7.3 * u + phase)
        el = el_half * np.sin(2.0 * math.pi * 11.17 * u)
    d = np.empty((n, 3))
    d[:, 0] = np.cos(el) * np.cos(az)
    d[:, 1] = np.cos(el) * np.sin(az)
    d[:, 2] = np.sin(el)
    return d


def gen_imu(traj: Trajectory, spec: SensorSpec, seed: int):
    """Measured IMU stream plus the ground-truth bias traces.

    Returns (t, omega_measured, acc_measured, bias_gyro, bias_acc).
    """
    rng = np.random.default_rng([seed, 0])
    rate = spec.imu_rate_hz
    n = int(round(traj.spec.duration * rate)) + 1
    t = np.arange(n) / rate
    dt = 1.0 / rate
    omega_true = traj.body_rate(t)
    rot = traj.rotation(t)
    acc_world = traj.acceleration(t)
    g = np.array([0.0, 0.0, -spec.gravity_mag])
    f_body = np.einsum("nji,nj->ni", rot, acc_world - g)
    bias_g = np.cumsum(
        np.vstack([np.asarray(spec.gyro_bias_init, dtype=float),
                   spec.gyro_bias_walk * math.sqrt(dt) * rng.standard_normal((n - 1, 3))]),
        axis=0)
    bias_a = np.cumsum(
        np.vstack([np.asarray(spec.acc_bias_init, dtype=float),
                   spec.acc_bias_walk * math.sqrt(dt) * rng.standard_normal((n - 1, 3))]),
        axis=0)
    omega_m = omega_true + bias_g \
        + spec.gyro_noise_density * math.sqrt(rate) * rng.standard_normal((n, 3))
    acc_m = f_body + bias_a \
        + spec.acc_noise_density * math.sqrt(rate) * rng.standard_normal((n, 3))
    return t, omega_m, acc_m, bias_g, bias_a


def gen_scan(traj: Trajectory, world: WorldModel, spec: SensorSpec,
             scan_index: int, seed: int):
    """One scan: (timestamps, points in the sensor frame, surface ids).

    Every point is generated from the true pose at its own sample time;
    timestamps are spread uniformly across the scan period. Misses are
    dropped.
    """
    rng = np.random.default_rng([seed, 1, scan_index])
    period = 1.0 / spec.scan_rate_hz
    n = spec.points_per_scan
    t = scan_index * period + (np.arange(n) + 0.5) * (period / n)
    d_l = scan_directions(spec, scan_index)
    if spec.dir_noise_rad > 0:
        w = spec.dir_noise_rad * rng.standard_normal((n, 3))
        d_l = d_l + np.cross(w, d_l)
        d_l /= np.linalg.norm(d_l, axis=1, keepdims=True)
    rot_gi = traj.rotation(t)
    pos_gi = traj.position(t)
    rot_il = spec.rot_il()
    p_il = np.asarray(spec.p_il, dtype=float)
    rot_gl = np.einsum("nij,jk->nik", rot_gi, rot_il)
    origins = pos_gi + np.einsum("nij,j->ni", rot_gi, p_il)
    dirs_w = np.einsum("nij,nj->ni", rot_gl, d_l)
    hit_t, hit_id = world.cast_rays(origins, dirs_w, spec.max_range_m)
    ok = np.isfinite(hit_t)
    ranges = hit_t[ok] + spec.range_std_m * rng.standard_normal(int(ok.sum()))
    pts = d_l[ok] * ranges[:, None]
    return t[ok], pts, hit_id[ok].astype(float)


def gt_poses_at_scan_ends(traj: Trajectory, spec: SensorSpec, n_scans: int):
    t_end = (np.arange(n_scans) + 1) / spec.scan_rate_hz
    rot = traj.rotation(t_end)
    pos = traj.position(t_end)
    quat = np.array([rot_to_quat(r) for r in rot])
    return t_end, pos, quat


# -- dataset export -----------------------------------------------------------

def export_dataset(world: WorldModel, traj: Trajectory, spec: SensorSpec,
                   seed: int, path: str) -> int:
    """Write the dataset directory consumed by the odometry runner.

    Returns the number of scans written. Output is byte-identical across
    runs with the same inputs and seed.
    """
    os.makedirs(os.path.join(path, "scans"), exist_ok=True)
    t, omega, acc, _, _ = gen_imu(traj, spec, seed)
    dset.write_imu_csv(os.path.join(path, "imu.csv"), t, omega, acc)
    n_scans = int(math.floor(traj.spec.duration * spec.scan_rate_hz))
    for k in range(n_scans):
        ts, pts, sid = gen_scan(traj, world, spec, k, seed)
        dset.write_scan_csv(
            os.path.join(path, "scans", f"scan_{k:06d}.csv"), ts, pts, sid)
    t_end, pos, quat = gt_poses_at_scan_ends(traj, spec, n_scans)
    dset.write_traj_csv(os.path.join(path, "gt_traj.csv"), t_end, pos, quat)
    meta = {
        "scan_rate_hz": spec.scan_rate_hz,
        "imu_rate_hz": spec.imu_rate_hz,
        "scan_count": n_scans,
        "gravity_mag": spec.gravity_mag,
        "extrinsic": {"q_il": list(spec.q_il), "p_il": list(spec.p_il)},
        "noise": {
            "gyro_noise_density": spec.gyro_noise_density,
            "acc_noise_density": spec.acc_noise_density,
            "gyro_bias_walk": spec.gyro_bias_walk,
            "acc_bias_walk": spec.acc_bias_walk,
            "range_std_m": spec.range_std_m,
        },
    }
    dset.write_meta(os.path.join(path, "meta.json"), meta)
    return n_scans


# -- generator spec file ------------------------------------------------------

@dataclass
class SimSpec:
    """Everything needed to generate one dataset, JSON-serializable."""
    seed: int = 0
    world_size: tuple = (50.0, 50.0, 12.0)
    world_panels: int = 4
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    sensors: SensorSpec = field(default_factory=SensorSpec)

    @classmethod
    def from_dict(cls, data: dict) -> "SimSpec":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown generator spec keys: {sorted(unknown)}")
        for key, sub_cls in (("trajectory", TrajectorySpec), ("sensors", SensorSpec)):
            if key in data:
                sub = dict(data[key])
                sub_known = {f.name for f in fields(sub_cls)}
                sub_unknown = set(sub) - sub_known
                if sub_unknown:
                    raise ValueError(
                        f"unknown {key} keys: {sorted(sub_unknown)}")
                for name, val in sub.items():
                    if isinstance(val, list):
                        sub[name] = tuple(val)
                data[key] = sub_cls(**sub)
        if "world_size" in data and isinstance(data["world_size"], list):
            data["world_size"] = tuple(data["world_size"])
        return cls(**data)

    def build(self):
        world = make_room_world(self.world_size, self.world_panels)
        traj = Trajectory(self.trajectory)
        return world, traj, self.sensors
