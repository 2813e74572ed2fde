"""Synthetic trajectory, IMU and stereo-track generation.

The pose profile is analytic (per-axis position sinusoids plus a smooth
two-axis attitude wobble), so true velocity is exact calculus, not
numerical differentiation.  The emitted gyro/accelerometer values are the
*discrete-equivalent* inputs of each sample interval:

    w_k = log(q_k^-1 (x) q_{k+1}) / dT        (average body rate)
    a_k = R(q_k)^T ((v_{k+1} - v_k)/dT - g)   (average specific force)

which makes the truth stream satisfy the filter's zero-order-hold
kinematics exactly in attitude and velocity and to O(dT^3) in position.
A noise-free filter run on this data therefore tracks at machine
precision, which is what the consistency checks lean on.

All randomness flows through one ``numpy.random.Generator`` seeded from
the config, so identical configs reproduce identical streams bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quat
from .frontend import CameraRig, FeatureObservation, TrackFrame, TrackTable, project_stereo
from .navmodel import GRAVITY, ImuSample, LandmarkSet, NavState, NoiseSigma


def _default_true_sigma() -> np.ndarray:
    return np.array([2e-3, 2e-3, 2e-3,      # gyro white (rad/s)
                     2e-2, 2e-2, 2e-2,      # accel white (m/s^2)
                     1e-5, 1e-5, 1e-5,      # gyro bias walk per sample
                     1e-4, 1e-4, 1e-4,      # accel bias walk per sample
                     0.05])                 # landmark noise (m), unused by IMU


@dataclass
class SimConfig:
    """Canonical synthetic scenario; every field has a reproducible default.

    Rates are Hz with ``imu_rate`` divisible by ``cam_rate``; sigmas are the
    true injected noise levels (same 13-slot layout as NoiseSigma, discrete
    per-sample standard deviations).
    """

    duration: float = 60.0
    imu_rate: int = 200
    cam_rate: int = 20
    seed: int = 7
    pos_amp: np.ndarray = field(default_factory=lambda: np.array([1.5, 1.2, 0.4]))
    pos_freq: np.ndarray = field(default_factory=lambda: np.array([0.12, 0.10, 0.16]))
    pos_phase: np.ndarray = field(default_factory=lambda: np.array([0.0, np.pi / 2, 0.0]))
    rot_amp: np.ndarray = field(default_factory=lambda: np.array([0.3, 0.2]))
    rot_freq: np.ndarray = field(default_factory=lambda: np.array([0.10, 0.13]))
    true_sigma: np.ndarray = field(default_factory=_default_true_sigma)
    init_gyro_bias: np.ndarray = field(default_factory=lambda: np.array([5e-3, -4e-3, 3e-3]))
    init_accel_bias: np.ndarray = field(default_factory=lambda: np.array([0.05, -0.03, 0.04]))
    landmark_count: int = 100
    landmark_extent: float = 10.0
    landmark_center: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 6.0]))
    pixel_noise: float = 0.4
    img_w: int = 752
    img_h: int = 480

    def __post_init__(self):
        for name in ("pos_amp", "pos_freq", "pos_phase", "landmark_center",
                     "init_gyro_bias", "init_accel_bias"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))
        self.rot_amp = np.asarray(self.rot_amp, dtype=float).reshape(2)
        self.rot_freq = np.asarray(self.rot_freq, dtype=float).reshape(2)
        self.true_sigma = np.asarray(self.true_sigma, dtype=float).reshape(13)
        if self.imu_rate % self.cam_rate != 0:
            raise ValueError("SimConfig: imu_rate must be divisible by cam_rate")

    @property
    def imu_dt_ns(self) -> int:
        return round(1e9 / self.imu_rate)

    @property
    def steps_per_frame(self) -> int:
        return self.imu_rate // self.cam_rate


@dataclass
class TruthStream:
    """Sampled true states plus the per-interval equivalent IMU inputs.

    ``states[k]`` is the truth at ``t_ns[k]``; ``(omega[k], accel[k])``
    drives the interval [t_k, t_k+1] (one fewer entries than states).
    """

    t_ns: np.ndarray
    states: list
    omega: np.ndarray
    accel: np.ndarray
    g: np.ndarray


def _profile_pose(cfg: SimConfig, t):
    """Analytic (q, p, v) of the profile at times ``t`` (seconds, array)."""
    t = np.asarray(t, dtype=float)
    ph = 2.0 * np.pi * np.outer(t, cfg.pos_freq) + cfg.pos_phase
    p = cfg.pos_amp * np.sin(ph)
    v = cfg.pos_amp * (2.0 * np.pi * cfg.pos_freq) * np.cos(ph)
    th = cfg.rot_amp * np.sin(2.0 * np.pi * np.outer(t, cfg.rot_freq))
    # yaw wobble about z composed with a roll wobble about x
    zero = np.zeros_like(th[:, 0])
    q_z = quat.rotvec_to_quat(np.stack([zero, zero, th[:, 0]], axis=-1))
    q_x = quat.rotvec_to_quat(np.stack([th[:, 1], zero, zero], axis=-1))
    q = quat.quat_compose(q_z, q_x)
    return q, p, v


def simulate_trajectory(cfg: SimConfig, g=GRAVITY) -> TruthStream:
    """Sample the analytic profile at the IMU rate and derive the
    discrete-equivalent body rates and specific forces."""
    g = np.asarray(g, dtype=float)
    n_steps = round(cfg.duration * cfg.imu_rate)
    t_ns = (np.arange(n_steps + 1, dtype=np.int64) * cfg.imu_dt_ns)
    q, p, v = _profile_pose(cfg, t_ns * 1e-9)
    dT = cfg.imu_dt_ns * 1e-9
    dq = quat.quat_compose(quat.quat_inverse(q[:-1]), q[1:])
    omega = quat.quat_to_rotvec(dq) / dT
    dv = (v[1:] - v[:-1]) / dT
    accel = quat.quat_rotate(quat.quat_inverse(q[:-1]), dv - g)
    states = [NavState(q[k], p[k], v[k], np.zeros(3), np.zeros(3))
              for k in range(n_steps + 1)]
    return TruthStream(t_ns, states, omega, accel, g)


def synthesize_imu(truth: TruthStream, cfg: SimConfig,
                   rng: np.random.Generator):
    """Corrupt the true inputs with bias random walks and white noise.

    Returns (samples, b_w, b_a): the measured IMU stream and the true bias
    trajectories at each sample instant.  Bias walks step before use, so
    sample k carries b_k = b_{k-1} + walk_k.
    """
    sig = cfg.true_sigma
    n = truth.omega.shape[0]
    walk_w = rng.normal(0.0, 1.0, (n, 3)) * sig[6:9]
    walk_a = rng.normal(0.0, 1.0, (n, 3)) * sig[9:12]
    b_w = cfg.init_gyro_bias + np.cumsum(walk_w, axis=0)
    b_a = cfg.init_accel_bias + np.cumsum(walk_a, axis=0)
    eta_w = rng.normal(0.0, 1.0, (n, 3)) * sig[0:3]
    eta_a = rng.normal(0.0, 1.0, (n, 3)) * sig[3:6]
    w_m = truth.omega + b_w + eta_w
    a_m = truth.accel + b_a + eta_a
    samples = [ImuSample(truth.t_ns[k], w_m[k], a_m[k]) for k in range(n)]
    return samples, b_w, b_a


def generate_landmarks(cfg: SimConfig, rng: np.random.Generator) -> LandmarkSet:
    """Uniform landmark cloud in a cube around ``landmark_center``."""
    coords = (cfg.landmark_center
              + rng.uniform(-0.5, 0.5, (cfg.landmark_count, 3)) * cfg.landmark_extent)
    return LandmarkSet(range(cfg.landmark_count), coords)


def synthesize_tracks(truth: TruthStream, landmarks: LandmarkSet,
                      rig: CameraRig, cfg: SimConfig,
                      rng: np.random.Generator) -> TrackTable:
    """Project landmarks through the rig at the camera rate.

    Points behind the camera or outside the image are dropped *before*
    noise is added; surviving pixels get i.i.d. Gaussian noise of
    ``cfg.pixel_noise``.  Frames may be empty.
    """
    table = TrackTable()
    ids = landmarks.ids
    coords = landmarks.coords_matrix()
    for k in range(0, truth.t_ns.shape[0], cfg.steps_per_frame):
        x = truth.states[k]
        frame = TrackFrame(int(truth.t_ns[k]), [])
        body = quat.quat_rotate(quat.quat_inverse(x.q), coords - x.p)
        for lid, l_b in zip(ids, body):
            pix = project_stereo(l_b, rig)
            if pix is None:
                continue
            u_l, v_l, u_r, v_r = pix
            if not (0.0 <= u_l < cfg.img_w and 0.0 <= u_r < cfg.img_w
                    and 0.0 <= v_l < cfg.img_h):
                continue
            noise = rng.normal(0.0, 1.0, 4) * cfg.pixel_noise
            frame.observations.append(FeatureObservation(
                frame.t, lid, u_l + noise[0], v_l + noise[1],
                u_r + noise[2], v_r + noise[3]))
        table.append(frame)
    return table


def true_sigma_as_noise(cfg: SimConfig) -> NoiseSigma:
    return NoiseSigma(cfg.true_sigma.copy())
