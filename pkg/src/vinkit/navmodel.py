"""Strapdown state and measurement models shared by the filters.

The navigation state is ``[q, p, v, b_w, b_a]`` (16 numbers, 15 error
degrees of freedom): body-to-world attitude quaternion, world-frame
position and velocity, gyro and accelerometer biases.  Propagation is
the exact zero-order-hold discretization of the continuous kinematics

    q' = 1/2 Gamma(w) q,   p' = v,   v' = g + R(q) a

evaluated in closed form: the attitude block is the quaternion exp map
and the (p, v) block is the nilpotent expansion, so one step costs a
handful of flops instead of an 11x11 matrix exponential.

Timestamps are integer nanoseconds throughout; all other quantities are
SI (rad, m, s).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import quat

GRAVITY = np.array([0.0, 0.0, -9.81])  # world frame, z-up

STATE_DIM = 16      # q(4) p(3) v(3) b_w(3) b_a(3)
ERROR_DIM = 15      # attitude counts 3, not 4
IMU_NOISE_DIM = 6   # [eta_w, eta_a]
AUG_DIM = STATE_DIM + IMU_NOISE_DIM
SIGMA_DIM = 13      # noise standard deviation vector length


@dataclass
class NavState:
    """Filter/truth navigation state at one instant."""

    q: np.ndarray
    p: np.ndarray
    v: np.ndarray
    b_w: np.ndarray
    b_a: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(4)
        n = np.linalg.norm(self.q)
        if abs(n - 1.0) > 1e-3:
            raise ValueError(f"NavState: quaternion norm {n:.6f} too far from 1")
        self.q = quat.quat_normalize(self.q)
        self.p = np.asarray(self.p, dtype=float).reshape(3)
        self.v = np.asarray(self.v, dtype=float).reshape(3)
        self.b_w = np.asarray(self.b_w, dtype=float).reshape(3)
        self.b_a = np.asarray(self.b_a, dtype=float).reshape(3)

    @classmethod
    def identity(cls) -> "NavState":
        return cls(quat.QUAT_IDENTITY.copy(), np.zeros(3), np.zeros(3),
                   np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, x) -> "NavState":
        x = np.asarray(x, dtype=float).reshape(STATE_DIM)
        return cls(x[0:4], x[4:7], x[7:10], x[10:13], x[13:16])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.p, self.v, self.b_w, self.b_a])

    def copy(self) -> "NavState":
        return NavState(self.q.copy(), self.p.copy(), self.v.copy(),
                        self.b_w.copy(), self.b_a.copy())


@dataclass
class ImuSample:
    """One gyro/accelerometer reading; t in integer nanoseconds."""

    t: int
    w_m: np.ndarray
    a_m: np.ndarray

    def __post_init__(self):
        self.t = int(self.t)
        self.w_m = np.asarray(self.w_m, dtype=float).reshape(3)
        self.a_m = np.asarray(self.a_m, dtype=float).reshape(3)


@dataclass
class NoiseSigma:
    """13 noise standard deviations: gyro(3), accel(3), gyro-walk(3),
    accel-walk(3), landmark(1).  All entries must be strictly positive."""

    c: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(SIGMA_DIM)
        if np.any(self.c <= 0.0):
            raise ValueError("NoiseSigma: all entries must be strictly positive")

    @property
    def gyro(self) -> np.ndarray:
        return self.c[0:3]

    @property
    def accel(self) -> np.ndarray:
        return self.c[3:6]

    @property
    def gyro_walk(self) -> np.ndarray:
        return self.c[6:9]

    @property
    def accel_walk(self) -> np.ndarray:
        return self.c[9:12]

    @property
    def landmark(self) -> float:
        return float(self.c[12])


class LandmarkSet:
    """World-frame landmark registry keyed by integer id.

    Iteration and matrix views are always in ascending id order, which is
    the canonical stacking order of the measurement vector.
    """

    def __init__(self, ids=(), coords=()):
        self._map: dict[int, np.ndarray] = {}
        ids = list(ids)
        coords = list(coords)
        if len(ids) != len(coords):
            raise ValueError("LandmarkSet: ids and coords length mismatch")
        for i, c in zip(ids, coords):
            self.add(int(i), c)

    def add(self, lid: int, coord) -> None:
        lid = int(lid)
        if lid in self._map:
            raise ValueError(f"LandmarkSet: duplicate landmark id {lid}")
        self._map[lid] = np.asarray(coord, dtype=float).reshape(3)

    def get(self, lid: int) -> np.ndarray:
        return self._map[int(lid)]

    def subset(self, ids) -> "LandmarkSet":
        ids = sorted(int(i) for i in ids)
        return LandmarkSet(ids, [self._map[i] for i in ids])

    @property
    def ids(self) -> list[int]:
        return sorted(self._map)

    def coords_matrix(self) -> np.ndarray:
        if not self._map:
            return np.zeros((0, 3))
        return np.stack([self._map[i] for i in self.ids])

    def __contains__(self, lid) -> bool:
        return int(lid) in self._map

    def __len__(self) -> int:
        return len(self._map)

    @property
    def measurement_dim(self) -> int:
        return 3 * len(self._map)


def propagate_vec(x, w_m, a_m, eta, dT: float, g=GRAVITY) -> np.ndarray:
    """Closed-form ZOH state transition on serialized states.

    Broadcasts over leading axes: ``x`` is ``(..., 16)``, ``eta`` is
    ``(..., 6)``; the IMU reading is shared.  Biases pass through
    unchanged (their random walk enters as additive process noise).
    """
    if dT <= 0.0:
        raise ValueError("propagate_vec: dT must be positive")
    x = np.asarray(x, dtype=float)
    eta = np.asarray(eta, dtype=float)
    g = np.asarray(g, dtype=float)
    q, p, v = x[..., 0:4], x[..., 4:7], x[..., 7:10]
    b_w, b_a = x[..., 10:13], x[..., 13:16]
    w = w_m - b_w - eta[..., 0:3]
    a = a_m - b_a - eta[..., 3:6]
    acc = g + quat.quat_rotate(q, a)
    q_new = quat.quat_compose(q, quat.rotvec_to_quat(w * dT))
    v_new = v + acc * dT
    p_new = p + v * dT + 0.5 * acc * dT * dT
    return np.concatenate([q_new, p_new, v_new, b_w, b_a], axis=-1)


def propagate_state(x: NavState, u: ImuSample, eta_x, dT: float,
                    g=GRAVITY) -> NavState:
    """One discrete kinematics step with an explicit IMU-noise realization."""
    out = propagate_vec(x.as_vector(), u.w_m, u.a_m,
                        np.asarray(eta_x, dtype=float).reshape(IMU_NOISE_DIM),
                        dT, g)
    return NavState.from_vector(out)


def measure_landmark(x: NavState, l_w) -> np.ndarray:
    """Landmark world coordinates seen from the body frame: R(q)^T (l_w - p)."""
    l_w = np.asarray(l_w, dtype=float)
    return quat.quat_rotate(quat.quat_inverse(x.q), l_w - x.p)


def measure_all(x: NavState, landmarks: LandmarkSet) -> np.ndarray:
    """Stacked body-frame landmark predictions in ascending id order."""
    if len(landmarks) == 0:
        raise ValueError("measure_all: empty landmark set (no vision update)")
    body = quat.quat_rotate(quat.quat_inverse(x.q),
                            landmarks.coords_matrix() - x.p)
    return body.reshape(-1)


def measure_sigma_points(points, landmarks: LandmarkSet) -> np.ndarray:
    """Vectorized measure_all over a stack of serialized states.

    ``points`` is ``(n, 16)``; returns ``(n, 3 * |landmarks|)``.
    """
    points = np.asarray(points, dtype=float)
    L = landmarks.coords_matrix()          # (m, 3)
    q_inv = quat.quat_inverse(points[:, 0:4])  # (n, 4)
    rel = L[None, :, :] - points[:, None, 4:7]  # (n, m, 3)
    body = quat.quat_rotate(q_inv[:, None, :], rel)
    return body.reshape(points.shape[0], -1)


def assemble_process_cov(sigma: NoiseSigma):
    """Covariances the filter needs from a standard-deviation vector.

    Returns ``(C_eta_x, C_eta_w)``: the 6x6 IMU white-noise covariance used
    for state augmentation and the 15x15 additive process covariance whose
    only nonzero block is the bias random walk (last six diagonal entries).
    """
    c = sigma.c
    C_eta_x = np.diag(np.concatenate([c[0:3] ** 2, c[3:6] ** 2]))
    C_eta_w = np.diag(np.concatenate([np.zeros(ERROR_DIM - 6),
                                      c[6:9] ** 2, c[9:12] ** 2]))
    return C_eta_x, C_eta_w


def assemble_measurement_cov(c_l: float, d_z: int) -> np.ndarray:
    """Isotropic measurement covariance c_l^2 I for a d_z-dim measurement."""
    if c_l <= 0.0:
        raise ValueError("assemble_measurement_cov: c_l must be positive")
    if d_z <= 0 or d_z % 3 != 0:
        raise ValueError("assemble_measurement_cov: d_z must be a positive multiple of 3")
    return (c_l * c_l) * np.eye(d_z)
