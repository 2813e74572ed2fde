"""Dataset ingestion for training.

Reads the toolkit's dataset directories (EuRoC-style CSV files plus a YAML
calibration) and prepares per-camera-frame training records: the IMU batch
since the previous frame, the GRU input window, the stereo measurements,
and the ground-truth state at the frame instant.

For noise-relabeling experiments the true specific force and body rate are
recovered from the ground-truth stream itself (interval-equivalent inputs,
the same discretization the filter integrates), then re-corrupted with a
configurable time-varying noise profile.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import yaml

GRAVITY = np.array([0.0, 0.0, -9.81])


@dataclass
class Calibration:
    fx: float
    fy: float
    cx: float
    cy: float
    baseline: float
    T_bc_q: np.ndarray
    T_bc_t: np.ndarray


@dataclass
class Frame:
    """Everything the filter consumes at one camera instant."""

    t: int
    imu_t: np.ndarray      # (n,) int64, samples since the previous frame
    imu: np.ndarray        # (n, 6) [w_m, a_m] rows
    obs_ids: np.ndarray    # (m,) feature ids
    obs_body: np.ndarray   # (m, 3) triangulated body-frame points
    truth: np.ndarray      # (16,) ground-truth state [q p v bw ba]


@dataclass
class Dataset:
    frames: list
    calib: Calibration
    truth_t: np.ndarray
    truth_x: np.ndarray    # (N, 16)
    dt_ns: int

    def __len__(self) -> int:
        return len(self.frames)


def _rows(path):
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line[0].isalpha():
                continue
            yield [float(v) for v in line.split(",")]


def load_imu_csv(path):
    rows = np.array(list(_rows(path)))
    return rows[:, 0].astype(np.int64), rows[:, 1:7]


def load_truth_csv(path):
    rows = np.array(list(_rows(path)))
    t = rows[:, 0].astype(np.int64)
    p, q, v = rows[:, 1:4], rows[:, 4:8], rows[:, 8:11]
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    bias = rows[:, 11:17] if rows.shape[1] >= 17 else np.zeros((len(t), 6))
    x = np.concatenate([q, p, v, bias], axis=1)
    return t, x


def load_tracks_csv(path):
    frames: dict[int, list] = {}
    for row in _rows(path):
        frames.setdefault(int(row[0]), []).append((int(row[1]), *row[2:6]))
    return dict(sorted(frames.items()))


def load_calibration(path) -> Calibration:
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    tbc = doc.get("T_bc", {})
    return Calibration(doc["fx"], doc["fy"], doc["cx"], doc["cy"],
                       doc["baseline"],
                       np.asarray(tbc.get("q", [1, 0, 0, 0]), dtype=float),
                       np.asarray(tbc.get("t", [0, 0, 0]), dtype=float))


def triangulate(obs, calib: Calibration, d_min: float = 0.5):
    """Rectified stereo triangulation to the body frame; None if dropped."""
    lid, u_l, v_l, u_r, v_r = obs
    d = u_l - u_r
    if d <= d_min:
        return None
    Z = calib.fx * calib.baseline / d
    cam = np.array([(u_l - calib.cx) * Z / calib.fx,
                    (v_l - calib.cy) * Z / calib.fy, Z])
    w, v = calib.T_bc_q[0], calib.T_bc_q[1:]
    R = ((w * w - v @ v) * np.eye(3) + 2 * np.outer(v, v)
         + 2 * w * np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]]))
    return R @ cam + calib.T_bc_t


def load_dataset(dataset_dir, imu_override=None) -> Dataset:
    """Assemble per-frame records from a dataset directory."""
    imu_t, imu = (imu_override if imu_override is not None
                  else load_imu_csv(os.path.join(dataset_dir, "imu.csv")))
    truth_t, truth_x = load_truth_csv(os.path.join(dataset_dir, "truth.csv"))
    tracks = load_tracks_csv(os.path.join(dataset_dir, "tracks.csv"))
    calib = load_calibration(os.path.join(dataset_dir, "calib.yaml"))
    frames = []
    cursor = 0
    for t, obs_list in tracks.items():
        hi = int(np.searchsorted(imu_t, t))
        ids, body = [], []
        for obs in obs_list:
            l_b = triangulate(obs, calib)
            if l_b is not None:
                ids.append(obs[0])
                body.append(l_b)
        k = int(np.argmin(np.abs(truth_t - t)))
        order = np.argsort(ids) if ids else []
        frames.append(Frame(
            t=t,
            imu_t=imu_t[cursor:hi].copy(),
            imu=imu[cursor:hi].copy(),
            obs_ids=np.asarray(ids, dtype=np.int64)[order] if ids else np.zeros(0, np.int64),
            obs_body=np.asarray(body)[order] if ids else np.zeros((0, 3)),
            truth=truth_x[k].copy()))
        cursor = hi
    dt_ns = int(np.median(np.diff(imu_t))) if len(imu_t) > 1 else 5_000_000
    return Dataset(frames, calib, truth_t, truth_x, dt_ns)


# ---------------------------------------------------------------------------
# recovering true inputs and re-corrupting them

def equivalent_inputs(truth_t, truth_x, g=GRAVITY):
    """Interval-average body rate and specific force from the truth stream.

    These are exactly the inputs under which the discrete kinematics
    reproduce the ground-truth states, so re-corrupting them gives IMU
    streams with any desired noise profile.
    """
    q, p, v = truth_x[:, 0:4], truth_x[:, 4:7], truth_x[:, 7:10]
    dT = np.diff(truth_t) * 1e-9
    # dq_k = q_k^-1 (x) q_{k+1}
    w1, v1 = q[:-1, 0:1], -q[:-1, 1:]          # inverse of q_k
    w2, v2 = q[1:, 0:1], q[1:, 1:]
    dq_w = w1 * w2 - np.sum(v1 * v2, axis=1, keepdims=True)
    dq_v = w1 * v2 + w2 * v1 + np.cross(v1, v2)
    sign = np.where(dq_w < 0, -1.0, 1.0)
    dq_w, dq_v = dq_w * sign, dq_v * sign
    vn = np.linalg.norm(dq_v, axis=1, keepdims=True)
    theta = 2.0 * np.arctan2(vn, dq_w)
    scale = np.where(vn < 1e-12, 2.0, theta / np.maximum(vn, 1e-300))
    omega = scale * dq_v / dT[:, None]
    dv = (v[1:] - v[:-1]) / dT[:, None] - g
    # rotate dv into the body frame of q_k
    w0, v0 = q[:-1, 0:1], q[:-1, 1:]
    accel = ((w0**2 - np.sum(v0 * v0, axis=1, keepdims=True)) * dv
             + 2 * v0 * np.sum(v0 * dv, axis=1, keepdims=True)
             - 2 * w0 * np.cross(v0, dv))  # R^T x = R(q^-1) x
    return omega, accel


@dataclass
class NoiseProfile:
    """Time-varying IMU corruption: noise bursts and bias transients.

    ``segments`` holds (t_start_s, multiplier) pairs scaling the white
    noise; ``bias_steps`` holds (t_s, delta_b_gyro, delta_b_accel) jumps on
    top of the random walk (temperature-transient style).  Both give the
    adaptation network a regime signal readable from raw IMU windows.
    """

    gyro_sigma: float = 2e-3
    accel_sigma: float = 2e-2
    gyro_walk: float = 1e-5
    accel_walk: float = 1e-4
    init_gyro_bias: np.ndarray = field(default_factory=lambda: np.array([5e-3, -4e-3, 3e-3]))
    init_accel_bias: np.ndarray = field(default_factory=lambda: np.array([0.05, -0.03, 0.04]))
    segments: tuple = ((0.0, 0.2), (2.0, 5.0), (4.0, 0.2), (6.0, 5.0), (8.0, 0.2))
    bias_steps: tuple = ()

    def multiplier(self, t_s):
        m = self.segments[0][1]
        for start, mult in self.segments:
            if t_s >= start:
                m = mult
        return m


def corrupt_inputs(truth_t, omega, accel, profile: NoiseProfile, seed: int):
    """True inputs -> measured IMU rows with a time-varying noise level."""
    rng = np.random.default_rng(seed)
    n = omega.shape[0]
    t_s = (truth_t[:-1] - truth_t[0]) * 1e-9
    mult = np.array([profile.multiplier(t) for t in t_s])[:, None]
    b_w = profile.init_gyro_bias + np.cumsum(
        rng.normal(0, profile.gyro_walk, (n, 3)), axis=0)
    b_a = profile.init_accel_bias + np.cumsum(
        rng.normal(0, profile.accel_walk, (n, 3)), axis=0)
    for t_step, d_bw, d_ba in profile.bias_steps:
        mask = (t_s >= t_step)[:, None]
        b_w = b_w + mask * np.asarray(d_bw, dtype=float)
        b_a = b_a + mask * np.asarray(d_ba, dtype=float)
    w_m = omega + b_w + rng.normal(0, 1, (n, 3)) * profile.gyro_sigma * mult
    a_m = accel + b_a + rng.normal(0, 1, (n, 3)) * profile.accel_sigma * mult
    return truth_t[:-1].copy(), np.concatenate([w_m, a_m], axis=1)


def write_imu_csv(path, imu_t, imu) -> None:
    """Same IMU CSV layout the rest of the toolkit reads."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("#t[ns],wx,wy,wz,ax,ay,az\n")
        for t, row in zip(imu_t, imu):
            fh.write(f"{int(t)}," + ",".join(format(v, ".17g") for v in row) + "\n")


def relabeled_dataset(dataset_dir, profile: NoiseProfile, seed: int,
                      out_dir=None) -> Dataset:
    """Load a dataset but replace its IMU stream with a re-corrupted one.

    With ``out_dir`` set, writes a full dataset directory (new imu.csv,
    everything else copied by reference) so external tools can run on it.
    """
    truth_t, truth_x = load_truth_csv(os.path.join(dataset_dir, "truth.csv"))
    omega, accel = equivalent_inputs(truth_t, truth_x)
    imu_t, imu = corrupt_inputs(truth_t, omega, accel, profile, seed)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_imu_csv(os.path.join(out_dir, "imu.csv"), imu_t, imu)
        for name in ("truth.csv", "tracks.csv", "calib.yaml", "config.yaml"):
            src = os.path.join(dataset_dir, name)
            if os.path.exists(src):
                with open(src, "rb") as fi, \
                        open(os.path.join(out_dir, name), "wb") as fo:
                    fo.write(fi.read())
    return load_dataset(dataset_dir, imu_override=(imu_t, imu))
