"""Point-to-plane LiDAR-inertial odometry over the incremental map tree.

Per scan: forward-propagate the state across the IMU buffer, re-express
every point at the scan-end sensor pose (undoing in-scan motion), run the
iterated update against planes fitted to map neighbors, register the scan
into the map with on-tree downsampling, and shift the local map region
when the detection ball touches its boundary.

The update solves the posterior by repeated relinearization; the gain is
computed in the state-dimension form

    K = (H^T R^-1 H + P^-1)^-1 H^T R^-1

which inverts a 24x24 matrix regardless of how many point-to-plane
correspondences a scan produces (it equals the conventional
P H^T (H P H^T + R)^-1, which the tests verify).
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .dataset import Dataset
from .geometry import AlignedCuboid
from .ikdtree import BalanceParams, IncrementalKdTree
from .so3 import quat_to_rot, rot_to_quat, skew, so3_exp
from .state import (ATT, ATT_IL, BA, BG, DIM, GRAV, POS, POS_IL, VEL,
                    ImuSample, NavState, NoiseParams, boxminus, boxplus,
                    compute_iterate_jacobian, propagate)


class DegenerateScanError(RuntimeError):
    """Raised when a scan yields too few valid plane correspondences."""


class OdometryDiverged(RuntimeError):
    pass


@dataclass
class PlanePatch:
    normal: np.ndarray   # unit vector when valid
    anchor: np.ndarray   # centroid of the fitted neighbors
    valid: bool


@dataclass
class Correspondence:
    index: int
    residual: float
    h_row: np.ndarray     # (24,)
    noise: float          # scalar variance (m^2)


@dataclass
class MapRegion:
    """Axis-aligned local-map cube around the sensor."""
    center: np.ndarray
    length: float
    gamma: float
    fov_range: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).copy()
        if self.gamma <= 1.0:
            raise ValueError("gamma must exceed 1")
        if self.length <= 2.0 * self.gamma * self.fov_range:
            raise ValueError("detection ball must fit inside the map region")

    def cuboid(self) -> AlignedCuboid:
        h = self.length / 2.0
        return AlignedCuboid(tuple(self.center - h), tuple(self.center + h))


def fit_plane(neighbors, threshold: float) -> PlanePatch:
    """Least-squares plane through the neighbor points.

    The normal is the smallest-eigenvalue direction of the centered
    scatter; the patch is valid only if every neighbor lies within
    `threshold` of the plane. Collinear (rank-deficient) neighbor sets are
    invalid.
    """
    nb = np.asarray(neighbors, dtype=float)
    c = nb.mean(axis=0)
    m = nb - c
    w, v = np.linalg.eigh(m.T @ m)
    if w[1] <= max(w[2] * 1e-9, 1e-12):
        return PlanePatch(np.zeros(3), c, False)
    u = v[:, 0]
    valid = bool(np.abs(m @ u).max() <= threshold)
    return PlanePatch(u, c, valid)


# -- motion compensation ------------------------------------------------------

def motion_compensate(point_times, points, imu_t, imu_omega, imu_acc,
                      x_end: NavState, scan_end: float) -> np.ndarray:
    """Re-express scan points at the scan-end sensor pose.

    Integrates the IMU backward from the scan-end state to recover the
    relative pose at each point's own sample time, so a static world point
    looks as if it had been sampled at scan end. Gaps larger than twice
    the nominal IMU period fall back to the nearest integrated pose (with
    a warning).
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    times = np.asarray(point_times, dtype=float)
    if pts.shape[0] == 0:
        return pts.copy()
    imu_t = np.asarray(imu_t, dtype=float)
    keep = imu_t <= scan_end
    if not keep.any():
        return pts.copy()
    # restrict the backward pass to the scan window (plus one leading sample)
    first = int(np.searchsorted(imu_t, float(times.min()), side="right")) - 1
    first = max(first, 0)
    keep &= np.arange(len(imu_t)) >= first
    knots = np.append(imu_t[keep], scan_end)
    om = np.vstack([imu_omega[keep], imu_omega[keep][-1:]])
    ac = np.vstack([imu_acc[keep], imu_acc[keep][-1:]])
    n = len(knots)
    if len(imu_t) >= 2:
        nominal = float(np.median(np.diff(imu_t)))
        if nominal > 0 and (np.diff(knots[:-1]) > 2.0 * nominal).any():
            warnings.warn("IMU gap inside scan exceeds 2 sample periods; "
                          "falling back to nearest pose", RuntimeWarning)
    g = x_end.gravity
    bg = x_end.bias_gyro
    ba = x_end.bias_acc
    # backward pass: anchor poses at every IMU knot, ending at x_end
    rot_k = np.empty((n, 3, 3))
    pos_k = np.empty((n, 3))
    vel_k = np.empty((n, 3))
    rot_k[-1] = x_end.rot
    pos_k[-1] = x_end.pos
    vel_k[-1] = x_end.vel
    for i in range(n - 2, -1, -1):
        dt = knots[i + 1] - knots[i]
        w_hat = om[i] - bg
        a_hat = ac[i] - ba
        rot_k[i] = rot_k[i + 1] @ so3_exp(-w_hat * dt)
        aw = rot_k[i] @ a_hat + g
        vel_k[i] = vel_k[i + 1] - dt * aw
        pos_k[i] = pos_k[i + 1] - dt * vel_k[i] - 0.5 * dt * dt * aw

    rot_il = x_end.rot_il
    pos_il = x_end.pos_il
    s = pts @ rot_il.T + pos_il  # sensor -> body frame
    seg = np.clip(np.searchsorted(knots, times, side="right") - 1, 0, n - 2)
    out = np.empty_like(pts)
    for i in np.unique(seg):
        sel = seg == i
        tau = np.clip(times[sel], knots[i], knots[i + 1]) - knots[i]
        w_hat = om[i] - bg
        a_hat = ac[i] - ba
        angle_rate = np.linalg.norm(w_hat)
        sj = s[sel]
        if angle_rate > 1e-12:
            axis = w_hat / angle_rate
            ang = angle_rate * tau
            cross1 = np.cross(np.broadcast_to(axis, sj.shape), sj)
            cross2 = np.cross(np.broadcast_to(axis, sj.shape), cross1)
            rot_s = sj + np.sin(ang)[:, None] * cross1 \
                + (1.0 - np.cos(ang))[:, None] * cross2
        else:
            rot_s = sj
        aw = rot_k[i] @ a_hat + g
        pos_tau = pos_k[i] + np.outer(tau, vel_k[i]) \
            + 0.5 * np.outer(tau * tau, aw)
        world = rot_s @ rot_k[i].T + pos_tau
        body_end = (world - x_end.pos) @ x_end.rot
        out[sel] = (body_end - pos_il) @ rot_il
    return out


# -- residuals and gain -------------------------------------------------------

@dataclass
class PerfCounters:
    knn_s: float = 0.0
    knn_calls: int = 0
    insert_s: float = 0.0
    insert_calls: int = 0
    boxdel_s: float = 0.0
    boxdel_calls: int = 0
    peak_s: float = 0.0  # slowest single incremental update op


def compute_residuals(x: NavState, pts_l: np.ndarray, tree: IncrementalKdTree,
                      cfg: RunConfig, perf: PerfCounters | None = None,
                      collect: bool = False):
    """Point-to-plane residuals and their state Jacobian rows.

    For each point: project with the current iterate, find the k nearest
    map points, fit a plane, and emit the signed plane distance plus the
    analytic Jacobian row. Points with too few neighbors, invalid fits or
    gated residuals are skipped. Raises DegenerateScanError when fewer
    than the configured minimum survive.

    Returns (z, H, noise_diag, used_indices) or, with collect=True, a list
    of Correspondence records as well.
    """
    pts_l = np.asarray(pts_l, dtype=float).reshape(-1, 3)
    rot_gl = x.rot @ x.rot_il
    s_body = pts_l @ x.rot_il.T + x.pos_il
    g_pts = s_body @ x.rot.T + x.pos
    z_list: list[float] = []
    rows: list[np.ndarray] = []
    used: list[int] = []
    corrs: list[Correspondence] = []
    r_var = cfg.range_std_m ** 2
    u_rot_cache = x.rot
    for j in range(pts_l.shape[0]):
        if perf is not None:
            t0 = time.perf_counter()
        found = tree.knn_search(g_pts[j], cfg.knn_k, max_dist=cfg.knn_max_dist_m)
        if perf is not None:
            perf.knn_s += time.perf_counter() - t0
            perf.knn_calls += 1
        if len(found) < cfg.knn_k:
            continue
        nb = np.array([p for p, _ in found])
        patch = fit_plane(nb, cfg.plane_threshold_m)
        if not patch.valid:
            continue
        u = patch.normal
        z = float(u @ (g_pts[j] - patch.anchor))
        if abs(z) > cfg.outlier_residual_m:
            continue
        row = np.zeros(DIM)
        row[ATT:ATT + 3] = -(u @ u_rot_cache) @ skew(s_body[j])
        row[POS:POS + 3] = u
        row[ATT_IL:ATT_IL + 3] = -(u @ rot_gl) @ skew(pts_l[j])
        row[POS_IL:POS_IL + 3] = u @ u_rot_cache
        z_list.append(z)
        rows.append(row)
        used.append(j)
        if collect:
            corrs.append(Correspondence(j, z, row, r_var))
    if len(z_list) < cfg.min_correspondences:
        raise DegenerateScanError(
            f"only {len(z_list)} valid correspondences "
            f"(minimum {cfg.min_correspondences})")
    z = np.array(z_list)
    h = np.vstack(rows)
    noise = np.full(len(z_list), r_var)
    if collect:
        return z, h, noise, np.array(used), corrs
    return z, h, noise, np.array(used)


def kalman_gain(h: np.ndarray, r_diag: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """State-dimension gain form; inverts a 24x24 system for any number of
    measurements. m = 0 degenerates to an empty gain."""
    m = h.shape[0]
    if m == 0:
        return np.zeros((DIM, 0))
    hr = h.T / np.asarray(r_diag, dtype=float)  # H^T R^-1
    cov_inv = _safe_inv(cov)
    a = hr @ h + cov_inv
    return np.linalg.solve(a, hr)


def _safe_inv(cov: np.ndarray) -> np.ndarray:
    try:
        inv = np.linalg.inv(cov)
        if np.isfinite(inv).all():
            return inv
    except np.linalg.LinAlgError:
        pass
    eps = 1e-9 * max(np.trace(cov) / cov.shape[0], 1.0)
    warnings.warn(f"singular covariance; applying ridge {eps:g}",
                  RuntimeWarning)
    return np.linalg.inv(cov + eps * np.eye(cov.shape[0]))


@dataclass
class UpdateResult:
    state: NavState
    cov: np.ndarray
    iterations: int
    n_corr: int
    degenerate: bool
    costs: list = field(default_factory=list)


def iterated_update(x_prop: NavState, p_prop: np.ndarray, pts_l: np.ndarray,
                    tree: IncrementalKdTree, cfg: RunConfig,
                    perf: PerfCounters | None = None) -> UpdateResult:
    """Relinearize residuals at the current iterate until the state
    increment drops below the convergence threshold (or the iteration cap).

    Returns the converged state with posterior covariance. A degenerate
    scan returns the prior with inflated covariance and a flag instead.
    """
    x_k = x_prop.copy()
    identity = np.eye(DIM)
    k_mat = np.zeros((DIM, 0))
    h = np.zeros((0, DIM))
    p = p_prop
    costs: list[float] = []
    iterations = 0
    n_corr = 0
    p_prop_inv = _safe_inv(p_prop)
    for _ in range(cfg.max_iterations):
        j = compute_iterate_jacobian(x_k, x_prop)
        j_inv = np.linalg.inv(j)
        p = j_inv @ p_prop @ j_inv.T
        try:
            z, h, noise, _ = compute_residuals(x_k, pts_l, tree, cfg, perf)
        except DegenerateScanError:
            if iterations == 0:
                return UpdateResult(x_prop.copy(),
                                    p_prop * cfg.degenerate_inflation,
                                    0, 0, True)
            break
        n_corr = len(z)
        dx_prior = boxminus(x_k, x_prop)
        costs.append(float(dx_prior @ p_prop_inv @ dx_prior
                           + (z * z / noise).sum()))
        k_mat = kalman_gain(h, noise, p)
        delta = -k_mat @ z - (identity - k_mat @ h) @ (j_inv @ dx_prior)
        x_next = boxplus(x_k, delta)
        step = float(np.linalg.norm(boxminus(x_next, x_k)))
        x_k = x_next
        iterations += 1
        if step < cfg.conv_eps:
            break
    p_post = (identity - k_mat @ h) @ p
    p_post = 0.5 * (p_post + p_post.T)
    return UpdateResult(x_k, p_post, iterations, n_corr, False, costs)


# -- registration and map region ----------------------------------------------

def register_scan(x: NavState, pts_l: np.ndarray, intensities,
                  tree: IncrementalKdTree, resolution: float,
                  parallel: bool | None = None,
                  perf: PerfCounters | None = None) -> int:
    """Map every point to the global frame and insert with downsampling.
    Returns how many survived as new map points."""
    pts_l = np.asarray(pts_l, dtype=float).reshape(-1, 3)
    if intensities is None:
        intensities = np.zeros(pts_l.shape[0])
    s = pts_l @ x.rot_il.T + x.pos_il
    g = s @ x.rot.T + x.pos
    count = 0
    for j in range(g.shape[0]):
        if perf is not None:
            t0 = time.perf_counter()
        kept = tree.insert_with_downsample(g[j], resolution,
                                           intensity=float(intensities[j]),
                                           parallel=parallel)
        if perf is not None:
            dt = time.perf_counter() - t0
            perf.insert_s += dt
            perf.insert_calls += 1
            perf.peak_s = max(perf.peak_s, dt)
        if kept:
            count += 1
    return count


def manage_map_region(region: MapRegion, lidar_pos, tree: IncrementalKdTree,
                      parallel: bool | None = None,
                      perf: PerfCounters | None = None) -> tuple[MapRegion, int]:
    """Shift the local-map cube away from any boundary the detection ball
    touches, deleting the vacated slab per moved axis. Returns the updated
    region and the number of points removed."""
    pos = np.asarray(lidar_pos, dtype=float)
    r = region.gamma * region.fov_range
    d = (region.gamma - 1.0) * region.fov_range
    half = region.length / 2.0
    old_lo = region.center - half
    old_hi = region.center + half
    new_center = region.center.copy()
    deleted = 0
    for ax in range(3):
        move = 0.0
        if pos[ax] - r <= old_lo[ax]:
            move = -d
        elif pos[ax] + r >= old_hi[ax]:
            move = d
        if move == 0.0:
            continue
        new_center[ax] += move
        slab_lo = old_lo.copy()
        slab_hi = old_hi.copy()
        if move > 0:
            slab_hi[ax] = old_lo[ax] + d   # vacated slab at the low face
        else:
            slab_lo[ax] = old_hi[ax] - d   # vacated slab at the high face
        if perf is not None:
            t0 = time.perf_counter()
        deleted += tree.box_delete(AlignedCuboid(tuple(slab_lo), tuple(slab_hi)),
                                   parallel=parallel)
        if perf is not None:
            dt = time.perf_counter() - t0
            perf.boxdel_s += dt
            perf.boxdel_calls += 1
            perf.peak_s = max(perf.peak_s, dt)
    if not np.array_equal(new_center, region.center):
        region = MapRegion(new_center, region.length, region.gamma,
                           region.fov_range)
    return region, deleted


# -- full pipeline --------------------------------------------------------------

@dataclass
class ScanRecord:
    index: int
    t: float
    pos: np.ndarray
    quat: np.ndarray
    timings_ms: dict
    n_corr: int
    iterations: int
    inserted: int
    tree_size: int
    valid_points: int
    rebuilds: int
    knn_us_mean: float
    insert_us_mean: float
    boxdel_us_mean: float
    peak_us: float
    degenerate: bool


@dataclass
class OdometryResult:
    records: list
    state: NavState
    cov: np.ndarray
    map_stats: dict
    tree: IncrementalKdTree

    def trajectory_arrays(self):
        t = np.array([r.t for r in self.records])
        pos = np.array([r.pos for r in self.records])
        quat = np.array([r.quat for r in self.records])
        return t, pos, quat


def _initialize_state(ds: Dataset, cfg: RunConfig) -> tuple[NavState, np.ndarray]:
    """Gravity, gyro bias and accelerometer bias from a still interval;
    identity attitude; extrinsic from the dataset's initial guess."""
    still = ds.imu_t <= cfg.init_still_s
    if still.sum() < 5:
        still = np.zeros_like(ds.imu_t, dtype=bool)
        still[:min(20, len(ds.imu_t))] = True
    acc_mean = ds.imu_acc[still].mean(axis=0)
    omega_mean = ds.imu_omega[still].mean(axis=0)
    g_mag = float(ds.meta.get("gravity_mag", 9.81))
    g0 = -acc_mean / np.linalg.norm(acc_mean) * g_mag
    x = NavState.identity(g_mag)
    x.gravity = g0
    x.bias_gyro = omega_mean
    x.bias_acc = acc_mean + g0
    ext = ds.meta.get("extrinsic", {})
    x.rot_il = quat_to_rot(ext.get("q_il", (1.0, 0.0, 0.0, 0.0)))
    x.pos_il = np.asarray(ext.get("p_il", (0.0, 0.0, 0.0)), dtype=float)
    p0 = np.zeros((DIM, DIM))
    stds = {ATT: cfg.init_att_std, POS: cfg.init_pos_std, VEL: cfg.init_vel_std,
            BG: cfg.init_bg_std, BA: cfg.init_ba_std, GRAV: cfg.init_grav_std,
            ATT_IL: cfg.init_ext_rot_std, POS_IL: cfg.init_ext_pos_std}
    for blk, std in stds.items():
        p0[blk:blk + 3, blk:blk + 3] = np.eye(3) * std ** 2
    return x, p0


def _noise_from(ds: Dataset, cfg: RunConfig) -> NoiseParams:
    n = ds.meta.get("noise", {})
    return NoiseParams(
        gyro_noise=n.get("gyro_noise_density", cfg.gyro_noise_density),
        acc_noise=n.get("acc_noise_density", cfg.acc_noise_density),
        gyro_bias_walk=n.get("gyro_bias_walk", cfg.gyro_bias_walk),
        acc_bias_walk=n.get("acc_bias_walk", cfg.acc_bias_walk))


def _imu_slice(ds: Dataset, t0: float, t1: float) -> list[ImuSample]:
    """Samples covering [t0, t1], zero-order-held at both boundaries."""
    i0 = int(np.searchsorted(ds.imu_t, t0, side="right")) - 1
    i1 = int(np.searchsorted(ds.imu_t, t1, side="right"))
    i0 = max(i0, 0)
    out: list[ImuSample] = []
    for i in range(i0, min(i1, len(ds.imu_t))):
        t = float(ds.imu_t[i])
        out.append(ImuSample(max(t, t0), ds.imu_omega[i], ds.imu_acc[i]))
    if out and out[-1].t < t1:
        out.append(ImuSample(t1, out[-1].omega, out[-1].acc))
    # collapse duplicates produced by clipping
    dedup: list[ImuSample] = []
    for s in out:
        if dedup and s.t <= dedup[-1].t:
            dedup[-1] = ImuSample(dedup[-1].t, s.omega, s.acc)
            continue
        dedup.append(s)
    return dedup


def run_odometry(ds: Dataset, cfg: RunConfig, progress=None) -> OdometryResult:
    """Run the full pipeline over a dataset.

    Per scan: propagate, compensate, update, register, manage the map
    region. Emits one pose record per scan end with stage timings.
    Raises OdometryDiverged when the position estimate leaves the
    configured bound.
    """
    scan_rate = float(ds.meta["scan_rate_hz"])
    noise = _noise_from(ds, cfg)
    if "noise" in ds.meta and "range_std_m" in ds.meta["noise"]:
        cfg_range = float(ds.meta["noise"]["range_std_m"])
        if cfg_range > 0:
            cfg = RunConfig(**{**cfg.to_dict(), "range_std_m": cfg_range})
    x, cov = _initialize_state(ds, cfg)
    tree = IncrementalKdTree(
        params=BalanceParams(cfg.alpha_bal, cfg.alpha_del, cfg.n_max),
        parallel=cfg.parallel_rebuild)
    region: MapRegion | None = None
    records: list[ScanRecord] = []
    prev_end = float(ds.imu_t[0])
    rebuilds_before = 0
    for k in range(ds.scan_count):
        scan_end = (k + 1) / scan_rate
        timings = {}
        t0 = time.perf_counter()
        imu = _imu_slice(ds, prev_end, scan_end)
        x, cov = propagate(x, cov, imu, noise)
        timings["propagate_ms"] = (time.perf_counter() - t0) * 1e3

        ts, pts, intens = ds.scan(k)
        step = max(1, int(cfg.temporal_downsample))
        ts, pts, intens = ts[::step], pts[::step], intens[::step]

        t0 = time.perf_counter()
        pts_c = motion_compensate(ts, pts, ds.imu_t, ds.imu_omega, ds.imu_acc,
                                  x, scan_end)
        timings["compensate_ms"] = (time.perf_counter() - t0) * 1e3

        perf = PerfCounters()
        degenerate = False
        n_corr = 0
        iterations = 0
        t0 = time.perf_counter()
        if tree.size()[1] >= cfg.min_correspondences:
            result = iterated_update(x, cov, pts_c, tree, cfg, perf)
            x, cov = result.state, result.cov
            degenerate = result.degenerate
            n_corr = result.n_corr
            iterations = result.iterations
        timings["update_ms"] = (time.perf_counter() - t0) * 1e3

        t0 = time.perf_counter()
        inserted = register_scan(x, pts_c, intens, tree, cfg.downsample_res_m,
                                 perf=perf)
        timings["map_insert_ms"] = (time.perf_counter() - t0) * 1e3

        lidar_pos = x.rot @ x.pos_il + x.pos
        t0 = time.perf_counter()
        if region is None:
            region = MapRegion(lidar_pos, cfg.map_size_m, cfg.gamma,
                               cfg.fov_range_m)
        else:
            region, _ = manage_map_region(region, lidar_pos, tree, perf=perf)
        timings["region_ms"] = (time.perf_counter() - t0) * 1e3

        if not np.isfinite(x.pos).all() or \
                np.linalg.norm(x.pos) > cfg.divergence_bound_m:
            raise OdometryDiverged(
                f"position {x.pos} out of bounds at scan {k} "
                f"(t={scan_end:.3f}s, {n_corr} correspondences)")

        total, valid = tree.size()
        stats = tree.stats
        records.append(ScanRecord(
            index=k, t=scan_end, pos=x.pos.copy(), quat=rot_to_quat(x.rot),
            timings_ms=timings, n_corr=n_corr, iterations=iterations,
            inserted=inserted, tree_size=total, valid_points=valid,
            rebuilds=stats["rebuilds"] - rebuilds_before,
            knn_us_mean=(perf.knn_s / perf.knn_calls * 1e6
                         if perf.knn_calls else 0.0),
            insert_us_mean=(perf.insert_s / perf.insert_calls * 1e6
                            if perf.insert_calls else 0.0),
            boxdel_us_mean=(perf.boxdel_s / perf.boxdel_calls * 1e6
                            if perf.boxdel_calls else 0.0),
            peak_us=perf.peak_s * 1e6,
            degenerate=degenerate))
        rebuilds_before = stats["rebuilds"]
        prev_end = scan_end
        if progress is not None:
            progress(records[-1])
    tree.wait_for_rebuild()
    total, valid = tree.size()
    map_stats = {"tree_size": total, "valid_points": valid, **tree.stats,
                 "height": tree.height}
    return OdometryResult(records, x, cov, map_stats, tree)
