"""Run configuration: every tunable of the odometry pipeline with defaults.

Configs load from a JSON file; unknown keys are rejected and ranges are
validated. CLI flags override file values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields


@dataclass
class RunConfig:
    map_size_m: float = 1000.0        # local map cube edge length
    downsample_res_m: float = 0.5     # on-tree downsample cell size
    temporal_downsample: int = 4      # keep one of this many raw points
    knn_k: int = 5                    # neighbors per plane fit
    knn_max_dist_m: float = 2.0       # ranged kNN inlier radius
    conv_eps: float = 1e-3            # update convergence threshold
    max_iterations: int = 5
    alpha_bal: float = 0.6            # tree balance criterion
    alpha_del: float = 0.5            # tree deleted-fraction criterion
    n_max: int = 1500                 # second-thread rebuild threshold
    gamma: float = 1.5                # detection-ball relaxation factor
    fov_range_m: float = 100.0        # sensor detection range
    plane_threshold_m: float = 0.1    # plane-fit validity threshold
    outlier_residual_m: float = 1.0   # residual gate
    min_correspondences: int = 10     # below this a scan is degenerate
    range_std_m: float = 0.02         # measurement noise (per point)
    init_still_s: float = 0.5         # stationary window for gravity init
    divergence_bound_m: float = 1e4   # abort when position exceeds this
    degenerate_inflation: float = 10.0  # covariance scale on degenerate scans
    parallel_rebuild: bool = True
    seed: int = 0
    gyro_noise_density: float = 1e-3  # (rad/s)/sqrt(Hz)
    acc_noise_density: float = 1e-2   # (m/s^2)/sqrt(Hz)
    gyro_bias_walk: float = 1e-5      # (rad/s)/sqrt(s)
    acc_bias_walk: float = 1e-4       # (m/s^2)/sqrt(s)
    init_att_std: float = 0.05        # rad
    init_pos_std: float = 1e-4        # m
    init_vel_std: float = 0.1         # m/s
    init_bg_std: float = 2e-3         # rad/s
    init_ba_std: float = 2e-2         # m/s^2
    init_grav_std: float = 0.1        # m/s^2
    init_ext_rot_std: float = 1e-4    # rad
    init_ext_pos_std: float = 1e-4    # m

    def __post_init__(self):
        positive = [
            "map_size_m", "downsample_res_m", "temporal_downsample", "knn_k",
            "knn_max_dist_m", "conv_eps", "max_iterations", "n_max",
            "fov_range_m", "plane_threshold_m", "outlier_residual_m",
            "min_correspondences", "range_std_m", "divergence_bound_m",
            "degenerate_inflation",
        ]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"config key {name} must be positive")
        if not 0.5 < self.alpha_bal < 1.0:
            raise ValueError("alpha_bal must lie in (0.5, 1)")
        if not 0.0 < self.alpha_del < 1.0:
            raise ValueError("alpha_del must lie in (0, 1)")
        if self.gamma <= 1.0:
            raise ValueError("gamma must exceed 1")
        if self.map_size_m <= 2.0 * self.gamma * self.fov_range_m:
            raise ValueError(
                "map_size_m must exceed twice the detection-ball radius "
                "(2 * gamma * fov_range_m)")
        for name in ("gyro_noise_density", "acc_noise_density",
                     "gyro_bias_walk", "acc_bias_walk", "init_att_std",
                     "init_pos_std", "init_vel_std", "init_bg_std",
                     "init_ba_std", "init_grav_std", "init_ext_rot_std",
                     "init_ext_pos_std", "init_still_s"):
            if getattr(self, name) < 0:
                raise ValueError(f"config key {name} must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def describe(cls) -> str:
        """One line per key with its default, for --help output."""
        lines = []
        for f in fields(cls):
            lines.append(f"  {f.name} (default {f.default})")
        return "\n".join(lines)
