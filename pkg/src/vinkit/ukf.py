"""Quaternion-manifold unscented Kalman filter for visual-inertial navigation.

The filter keeps a 16-number navigation state with a 15x15 error-state
covariance (attitude uncertainty lives in the 3-dim tangent space, not on
the 4 quaternion components).  Each prediction augments the state with the
6-dim IMU white-noise vector, draws 2 * 21 + 1 = 43 sigma points where the
attitude slot is perturbed on the manifold (boxplus with a rotation-vector
column) and every other slot by plain addition, pushes them through the
strapdown transition, and recombines with the quaternion weighted mean.

Because camera frames arrive far less often than IMU samples, prediction
runs as an "aggregate" pass over every IMU sample accumulated since the
last frame; only then does a single vision update fire.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quat
from .errors import NumericalError
from .navmodel import (
    AUG_DIM,
    ERROR_DIM,
    GRAVITY,
    STATE_DIM,
    ImuSample,
    LandmarkSet,
    NavState,
    NoiseSigma,
    assemble_measurement_cov,
    assemble_process_cov,
    measure_sigma_points,
    propagate_vec,
)

AUG_ERROR_DIM = AUG_DIM - 1      # 21: augmented state minus quaternion redundancy
N_SIGMA = 2 * AUG_ERROR_DIM + 1  # 43

# Eigenvalues less negative than this are treated as roundoff and clamped
# to zero; anything below is a genuine numerical failure.
PSD_FLOOR = -1e-9


def _default_sigma() -> NoiseSigma:
    return NoiseSigma(np.array([2e-3, 2e-3, 2e-3,
                                2e-2, 2e-2, 2e-2,
                                1e-5, 1e-5, 1e-5,
                                1e-4, 1e-4, 1e-4,
                                0.2]))


@dataclass
class FilterConfig:
    """Unscented-transform tuning and nominal noise levels.

    ``lam`` spreads the sigma points, ``alpha``/``beta`` shape the zeroth
    covariance weight, ``upsilon`` bounds the learned noise rescaling to
    one decade each way by default.
    """

    lam: float = 3.0
    alpha: float = 1.0
    beta: float = 2.0
    upsilon: float = 1.0
    g: np.ndarray = field(default_factory=lambda: GRAVITY.copy())
    nominal_sigma: NoiseSigma = field(default_factory=_default_sigma)

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=float).reshape(3)
        if AUG_ERROR_DIM + self.lam <= 0.0:
            raise ValueError("FilterConfig: need d_a - 1 + lam > 0")


@dataclass
class FilterState:
    """Posterior (or predicted) estimate: mean, error covariance, time."""

    x: NavState
    P: np.ndarray
    t: int

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float).reshape(ERROR_DIM, ERROR_DIM)
        self.t = int(self.t)


@dataclass
class SigmaSet:
    """43 sigma points; ``augmented`` rows carry the IMU-noise slot."""

    points: np.ndarray
    kind: str  # "augmented" (43 x 22) or "propagated" (43 x 16)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        expected = AUG_DIM if self.kind == "augmented" else STATE_DIM
        if self.points.shape != (N_SIGMA, expected):
            raise ValueError(f"SigmaSet: expected ({N_SIGMA}, {expected}), "
                             f"got {self.points.shape}")


@dataclass
class UtWeights:
    w_m: np.ndarray
    w_c: np.ndarray


@dataclass
class VisionFrame:
    """One camera measurement: stacked body-frame landmark coordinates and
    the matching world-frame landmark set (same ascending-id order)."""

    t: int
    z: np.ndarray
    landmarks: LandmarkSet

    def __post_init__(self):
        self.t = int(self.t)
        self.z = np.asarray(self.z, dtype=float).reshape(-1)
        if self.z.shape[0] != self.landmarks.measurement_dim:
            raise ValueError("VisionFrame: z length does not match landmark count")


def ut_weights(cfg: FilterConfig) -> UtWeights:
    """Mean/covariance weights of the 43-point unscented transform."""
    n = AUG_ERROR_DIM
    if n + cfg.lam <= 0.0:
        raise ValueError("ut_weights: lam too negative, sigma scale not real")
    w_m = np.full(N_SIGMA, 1.0 / (2.0 * (n + cfg.lam)))
    w_c = w_m.copy()
    w_m[0] = cfg.lam / (cfg.lam + n)
    w_c[0] = w_m[0] + 1.0 - cfg.alpha**2 + cfg.beta
    return UtWeights(w_m, w_c)


def augment(fs: FilterState, C_eta_x) -> tuple[np.ndarray, np.ndarray]:
    """Stack the IMU-noise slot onto the state: zero mean, block covariance."""
    C_eta_x = np.asarray(C_eta_x, dtype=float)
    xa = np.concatenate([fs.x.as_vector(), np.zeros(6)])
    Pa = np.zeros((AUG_ERROR_DIM, AUG_ERROR_DIM))
    Pa[:ERROR_DIM, :ERROR_DIM] = fs.P
    Pa[ERROR_DIM:, ERROR_DIM:] = C_eta_x
    return xa, Pa


def _cov_sqrt(A: np.ndarray) -> np.ndarray:
    """Lower-triangular square root with escalating-jitter retries.

    Cholesky after symmetrization; an exactly zero matrix short-circuits to
    a zero root (legitimate degenerate spread).  On failure the diagonal is
    jittered by 1e-12 * trace / dim, escalating tenfold up to three tries.
    """
    A = 0.5 * (A + A.T)
    if not A.any():
        return np.zeros_like(A)
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        pass
    dim = A.shape[0]
    jitter = 1e-12 * np.trace(A) / dim
    for _ in range(3):
        try:
            return np.linalg.cholesky(A + jitter * np.eye(dim))
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError("covariance square root failed after jitter escalation")


def _repair_psd(P: np.ndarray) -> np.ndarray:
    """Symmetrize and clamp eigenvalues in (PSD_FLOOR, 0) to zero."""
    P = 0.5 * (P + P.T)
    try:
        np.linalg.cholesky(P)  # cheap sufficient PSD certificate
        return P
    except np.linalg.LinAlgError:
        pass
    vals, vecs = np.linalg.eigh(P)
    lo = vals.min()
    if lo >= 0.0:
        return P
    if lo <= PSD_FLOOR:
        raise NumericalError(f"covariance lost positive semidefiniteness "
                             f"(min eigenvalue {lo:.3e})")
    return (vecs * np.clip(vals, 0.0, None)) @ vecs.T


def draw_sigma_points(xa: np.ndarray, Pa: np.ndarray,
                      cfg: FilterConfig) -> SigmaSet:
    """43 augmented sigma points around ``xa`` with spread sqrt((21+lam) Pa).

    Column nu of the matrix square root perturbs point nu (boxplus) and
    point nu + 21 (boxminus); the quaternion slot consumes the first three
    rows as a rotation vector, all other slots add elementwise.
    """
    n = AUG_ERROR_DIM
    L = _cov_sqrt((n + cfg.lam) * np.asarray(Pa, dtype=float))
    deltas = L.T  # row nu = perturbation nu
    points = np.empty((N_SIGMA, AUG_DIM))
    points[0] = xa
    q0 = np.broadcast_to(xa[0:4], (n, 4))
    rest0 = xa[4:]
    points[1:n + 1, 0:4] = quat.boxplus(q0, deltas[:, 0:3])
    points[1:n + 1, 4:] = rest0 + deltas[:, 3:]
    points[n + 1:, 0:4] = quat.boxplus(q0, -deltas[:, 0:3])
    points[n + 1:, 4:] = rest0 - deltas[:, 3:]
    return SigmaSet(points, kind="augmented")


def propagate_sigmas(S: SigmaSet, u: ImuSample, dT: float,
                     cfg: FilterConfig) -> SigmaSet:
    """Push every augmented point through the state transition, each with
    its own IMU-noise realization from the augmentation slot."""
    if S.kind != "augmented":
        raise ValueError("propagate_sigmas: expected an augmented sigma set")
    out = propagate_vec(S.points[:, :STATE_DIM], u.w_m, u.a_m,
                        S.points[:, STATE_DIM:], dT, cfg.g)
    return SigmaSet(out, kind="propagated")


def state_residuals(points: np.ndarray, ref: NavState) -> np.ndarray:
    """Error-state residuals point (-) ref: rotation-vector attitude part,
    plain differences elsewhere.  Returns (n, 15)."""
    dq = quat.quat_diff(points[:, 0:4], ref.q)
    dv = points[:, 4:] - ref.as_vector()[4:]
    return np.concatenate([dq, dv], axis=-1)


def predict_moments(S: SigmaSet, W: UtWeights, C_eta_w, t: int) -> FilterState:
    """Weighted mean (quaternion slot via QWM) and covariance of propagated
    sigma points, plus the additive bias-walk process covariance."""
    if S.kind != "propagated":
        raise ValueError("predict_moments: expected a propagated sigma set")
    pts = S.points
    q_mean = quat.quat_weighted_mean(pts[:, 0:4], W.w_m)
    vec_mean = W.w_m @ pts[:, 4:]
    x_mean = NavState.from_vector(np.concatenate([q_mean, vec_mean]))
    D = state_residuals(pts, x_mean)
    P = np.einsum("i,ij,ik->jk", W.w_c, D, D) + np.asarray(C_eta_w, dtype=float)
    return FilterState(x_mean, _repair_psd(P), t)


def _per_step_covs(covs, n_steps: int):
    """Accept a single (C_eta_x, C_eta_w) pair or one pair per batch step."""
    if isinstance(covs, tuple) and len(covs) == 2 and np.ndim(covs[0]) == 2:
        return [covs] * n_steps
    covs = list(covs)
    if len(covs) != n_steps:
        raise ValueError("aggregate_predict: need one covariance pair per IMU sample")
    return covs


def aggregate_predict(fs: FilterState, batch, covs, end_t: int,
                      cfg: FilterConfig) -> tuple[FilterState, SigmaSet]:
    """Run the full predict cycle once per IMU sample since the last frame.

    Each cycle augments, draws, propagates and recombines; in between the
    posterior is simply the prior (no measurement).  Returns the final
    predicted state and the final propagated sigma set, which the update
    step reuses.  ``end_t`` closes the last integration interval.
    """
    batch = list(batch)
    if not batch:
        raise ValueError("aggregate_predict: empty IMU batch (no predict)")
    ts = [u.t for u in batch] + [int(end_t)]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise ValueError("aggregate_predict: timestamps must be strictly increasing")
    covs = _per_step_covs(covs, len(batch))
    W = ut_weights(cfg)
    S_prop = None
    for u, (C_eta_x, C_eta_w), t_next in zip(batch, covs, ts[1:]):
        dT = (t_next - u.t) * 1e-9
        xa, Pa = augment(fs, C_eta_x)
        S_prop = propagate_sigmas(draw_sigma_points(xa, Pa, cfg), u, dT, cfg)
        fs = predict_moments(S_prop, W, C_eta_w, t_next)
    return fs, S_prop


def measurement_moments(S: SigmaSet, W: UtWeights, x_pred: NavState,
                        landmarks: LandmarkSet, C_eta_l):
    """Predicted measurement mean, innovation covariance and state-measurement
    cross covariance from the propagated sigma points."""
    if S.kind != "propagated":
        raise ValueError("measurement_moments: expected a propagated sigma set")
    if len(landmarks) == 0:
        raise ValueError("measurement_moments: empty landmark set")
    Z = measure_sigma_points(S.points, landmarks)
    z_hat = W.w_m @ Z
    dZ = Z - z_hat
    P_zz = np.einsum("i,ij,ik->jk", W.w_c, dZ, dZ) + np.asarray(C_eta_l, dtype=float)
    D = state_residuals(S.points, x_pred)
    P_xz = np.einsum("i,ij,ik->jk", W.w_c, D, dZ)
    return z_hat, P_zz, P_xz


def _gain_solve(P_zz: np.ndarray, P_xz: np.ndarray) -> np.ndarray:
    """K = P_xz P_zz^-1 via a symmetric solve, with jittered retries."""
    dim = P_zz.shape[0]
    jitter = 1e-12 * np.trace(P_zz) / dim
    A = P_zz
    for attempt in range(4):
        try:
            return np.linalg.solve(A, P_xz.T).T
        except np.linalg.LinAlgError:
            if attempt == 3:
                break
            A = P_zz + jitter * np.eye(dim)
            jitter *= 10.0
    raise NumericalError("innovation covariance is singular after regularization")


def update(fs_pred: FilterState, S: SigmaSet, W: UtWeights, z,
           landmarks: LandmarkSet, C_eta_l) -> FilterState:
    """Vision correction: Kalman gain on the landmark innovation, manifold
    state injection, covariance downdated and PSD-repaired."""
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.shape[0] != landmarks.measurement_dim:
        raise ValueError("update: measurement length does not match landmarks")
    z_hat, P_zz, P_xz = measurement_moments(S, W, fs_pred.x, landmarks, C_eta_l)
    K = _gain_solve(P_zz, P_xz)
    dx = K @ (z - z_hat)
    x = fs_pred.x
    x_new = NavState(quat.boxplus(x.q, dx[0:3]),
                     x.p + dx[3:6], x.v + dx[6:9],
                     x.b_w + dx[9:12], x.b_a + dx[12:15])
    P_new = _repair_psd(fs_pred.P - K @ P_zz @ K.T)
    return FilterState(x_new, P_new, fs_pred.t)


def _prior_sigma_set(fs: FilterState, cfg: FilterConfig,
                     C_eta_x) -> SigmaSet:
    """Sigma points representing the current prior without propagation,
    for updates that arrive before any IMU data (e.g. the first frame)."""
    xa, Pa = augment(fs, C_eta_x)
    S = draw_sigma_points(xa, Pa, cfg)
    return SigmaSet(S.points[:, :STATE_DIM], kind="propagated")


def step(fs: FilterState, cfg: FilterConfig, imu_batch,
         vision: VisionFrame | None = None, end_t: int | None = None,
         sigma: NoiseSigma | None = None) -> FilterState:
    """One filter cycle: aggregate predict over the IMU batch, then a vision
    update if a frame with at least one landmark is present.

    ``sigma`` carries the (possibly network-rescaled) noise standard
    deviations; ``None`` falls back to the nominal values, which makes the
    adaptive path with unit scaling identical to the baseline filter.
    """
    sigma = sigma if sigma is not None else cfg.nominal_sigma
    C_eta_x, C_eta_w = assemble_process_cov(sigma)
    imu_batch = list(imu_batch)
    if end_t is None:
        end_t = vision.t if vision is not None else (imu_batch[-1].t if imu_batch else fs.t)
    if imu_batch:
        fs_pred, S = aggregate_predict(fs, imu_batch, (C_eta_x, C_eta_w), end_t, cfg)
    else:
        fs_pred = FilterState(fs.x.copy(), fs.P.copy(), end_t)
        S = None
    if vision is None or len(vision.landmarks) == 0:
        return fs_pred
    if S is None:
        S = _prior_sigma_set(fs_pred, cfg, C_eta_x)
    C_eta_l = assemble_measurement_cov(sigma.landmark, vision.landmarks.measurement_dim)
    return update(fs_pred, S, ut_weights(cfg), vision.z, vision.landmarks, C_eta_l)
