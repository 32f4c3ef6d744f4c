"""Dataset directory format shared by the generator and the odometry runner.

A dataset is a directory with:

    imu.csv                 t,wx,wy,wz,ax,ay,az        (SI units)
    scans/scan_<idx>.csv    t,x,y,z,intensity          (sensor frame, m)
    meta.json               rates, extrinsic guess, noise parameters
    gt_traj.csv             optional ground truth, same schema as traj.csv

Trajectories (estimated or ground truth) are CSVs with columns
t,px,py,pz,qw,qx,qy,qz: position of the IMU in the global frame and the
world <- imu quaternion, scalar first. All floats are written with 17
significant digits so that regeneration with the same seed is
byte-identical.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd

IMU_COLUMNS = ["t", "wx", "wy", "wz", "ax", "ay", "az"]
SCAN_COLUMNS = ["t", "x", "y", "z", "intensity"]
TRAJ_COLUMNS = ["t", "px", "py", "pz", "qw", "qx", "qy", "qz"]


class DatasetFormatError(Exception):
    pass


def _write_csv(path: str, header: list[str], rows: np.ndarray) -> None:
    with open(path, "w", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for row in np.atleast_2d(rows):
            f.write(",".join("%.17g" % v for v in row) + "\n")


def write_imu_csv(path: str, t, omega, acc) -> None:
    rows = np.column_stack([t, omega, acc])
    _write_csv(path, IMU_COLUMNS, rows)


def write_scan_csv(path: str, t, pts, intensity) -> None:
    rows = np.column_stack([t, pts, intensity])
    _write_csv(path, SCAN_COLUMNS, rows)


def write_traj_csv(path: str, t, pos, quat) -> None:
    rows = np.column_stack([t, pos, quat])
    _write_csv(path, TRAJ_COLUMNS, rows)


def load_traj_csv(path: str):
    df = pd.read_csv(path)
    if list(df.columns) != TRAJ_COLUMNS:
        raise DatasetFormatError(f"{path}: expected columns {TRAJ_COLUMNS}")
    arr = df.to_numpy(dtype=float)
    return arr[:, 0], arr[:, 1:4], arr[:, 4:8]


def write_meta(path: str, meta: dict) -> None:
    with open(path, "w", newline="\n") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


@dataclass
class Dataset:
    """Lazy view over a dataset directory; scans load on demand."""

    path: str
    meta: dict
    imu_t: np.ndarray
    imu_omega: np.ndarray
    imu_acc: np.ndarray
    scan_files: list[str]

    @property
    def scan_count(self) -> int:
        return len(self.scan_files)

    def scan(self, index: int):
        """(timestamps, points, intensities) of one scan."""
        df = pd.read_csv(self.scan_files[index])
        if list(df.columns) != SCAN_COLUMNS:
            raise DatasetFormatError(
                f"{self.scan_files[index]}: expected columns {SCAN_COLUMNS}")
        arr = df.to_numpy(dtype=float)
        return arr[:, 0], arr[:, 1:4], arr[:, 4]

    def gt_path(self) -> str | None:
        p = os.path.join(self.path, "gt_traj.csv")
        return p if os.path.exists(p) else None


def load_dataset(path: str) -> Dataset:
    imu_path = os.path.join(path, "imu.csv")
    meta_path = os.path.join(path, "meta.json")
    scans_dir = os.path.join(path, "scans")
    for p, what in ((imu_path, "imu.csv"), (meta_path, "meta.json"),
                    (scans_dir, "scans/")):
        if not os.path.exists(p):
            raise DatasetFormatError(f"dataset at {path} is missing {what}")
    with open(meta_path) as f:
        meta = json.load(f)
    df = pd.read_csv(imu_path)
    if list(df.columns) != IMU_COLUMNS:
        raise DatasetFormatError(f"{imu_path}: expected columns {IMU_COLUMNS}")
    arr = df.to_numpy(dtype=float)
    if arr.shape[0] >= 2 and not (np.diff(arr[:, 0]) > 0).all():
        raise DatasetFormatError(f"{imu_path}: timestamps not strictly increasing")
    scan_files = sorted(
        os.path.join(scans_dir, name) for name in os.listdir(scans_dir)
        if name.startswith("scan_") and name.endswith(".csv"))
    if not scan_files:
        raise DatasetFormatError(f"dataset at {path} has no scans")
    return Dataset(path=path, meta=meta, imu_t=arr[:, 0],
                   imu_omega=arr[:, 1:4], imu_acc=arr[:, 4:7],
                   scan_files=scan_files)
