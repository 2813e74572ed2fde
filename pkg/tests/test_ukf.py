"""Unscented filter mechanics: weights, sigma points, moments, update flow,
and exact agreement with a textbook linear Kalman filter on a frozen
linear subproblem."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from vinkit import quat
from vinkit.errors import NumericalError
from vinkit.navmodel import (
    ImuSample,
    LandmarkSet,
    NavState,
    NoiseSigma,
    assemble_process_cov,
    propagate_state,
)
from vinkit.ukf import (
    AUG_ERROR_DIM,
    FilterConfig,
    FilterState,
    N_SIGMA,
    SigmaSet,
    VisionFrame,
    _gain_solve,
    _repair_psd,
    aggregate_predict,
    augment,
    draw_sigma_points,
    measurement_moments,
    predict_moments,
    propagate_sigmas,
    state_residuals,
    step,
    ut_weights,
)

MS5 = 5_000_000  # 5 ms in ns


def hover_sample(t=0):
    return ImuSample(t, [0, 0, 0], [0, 0, 9.81])


def random_filter_state(rng, t=0):
    x = NavState(quat.quat_normalize(rng.normal(size=4)), rng.normal(size=3),
                 rng.normal(size=3) * 0.5, rng.normal(size=3) * 0.01,
                 rng.normal(size=3) * 0.05)
    A = rng.normal(size=(15, 15)) * 0.02
    return FilterState(x, A @ A.T + 1e-4 * np.eye(15), t)


# ---------------------------------------------------------------------------
# weights

def test_ut_weights_frozen_values():
    w = ut_weights(FilterConfig(lam=3.0, alpha=1.0, beta=2.0))
    assert_allclose(w.w_m[0], 0.125)
    assert_allclose(w.w_m[1:], np.full(42, 1.0 / 48.0))
    assert_allclose(w.w_c[0], 2.125)
    assert_allclose(w.w_c[1:], w.w_m[1:])


def test_ut_weights_sum_to_one():
    for lam in (-5.0, 0.5, 3.0, 10.0):
        w = ut_weights(FilterConfig(lam=lam))
        assert_allclose(np.sum(w.w_m), 1.0, atol=1e-12)


def test_ut_weights_reject_degenerate_lambda():
    with pytest.raises(ValueError):
        FilterConfig(lam=-21.0)


# ---------------------------------------------------------------------------
# augmentation

def test_augment_identity_blocks():
    fs = FilterState(NavState.identity(), np.eye(15), 0)
    xa, Pa = augment(fs, np.eye(6))
    assert_allclose(Pa, np.eye(21))
    assert_allclose(xa[16:], np.zeros(6))
    assert xa.shape == (22,)


def test_augment_block_structure():
    rng = np.random.default_rng(40)
    fs = random_filter_state(rng)
    C = np.diag(rng.uniform(0.1, 1.0, 6))
    xa, Pa = augment(fs, C)
    assert_allclose(Pa[:15, :15], fs.P)
    assert_allclose(Pa[15:, 15:], C)
    assert_allclose(Pa[:15, 15:], np.zeros((15, 6)))
    assert_allclose(Pa[15:, :15], np.zeros((6, 15)))


# ---------------------------------------------------------------------------
# sigma points

def test_sigma_points_zero_spread():
    fs = FilterState(NavState.identity(), np.zeros((15, 15)), 0)
    xa, Pa = augment(fs, np.zeros((6, 6)))
    S = draw_sigma_points(xa, Pa, FilterConfig())
    assert S.points.shape == (N_SIGMA, 22)
    assert_allclose(S.points, np.tile(xa, (N_SIGMA, 1)), atol=1e-15)


def test_sigma_points_identity_scaled():
    # 21 + lam = 4 so every perturbation column has norm exactly 2
    cfg = FilterConfig(lam=4.0 - AUG_ERROR_DIM)
    fs = FilterState(NavState.identity(), np.eye(15), 0)
    xa, Pa = augment(fs, np.eye(6))
    S = draw_sigma_points(xa, Pa, cfg)
    for nu in range(1, 22):
        d_rot = quat.quat_diff(S.points[nu, 0:4], xa[0:4])
        d_vec = S.points[nu, 4:] - xa[4:]
        assert_allclose(np.sqrt(np.linalg.norm(d_rot) ** 2
                                + np.linalg.norm(d_vec) ** 2), 2.0, atol=1e-9)


def test_sigma_points_manifold_round_trip():
    rng = np.random.default_rng(41)
    cfg = FilterConfig()
    fs = random_filter_state(rng)
    C = np.diag(rng.uniform(1e-6, 1e-4, 6))
    xa, Pa = augment(fs, C)
    S = draw_sigma_points(xa, Pa, cfg)
    L = np.linalg.cholesky((AUG_ERROR_DIM + cfg.lam) * 0.5 * (Pa + Pa.T))
    for nu in range(1, 22):
        delta = L[:, nu - 1]
        d_rot = quat.quat_diff(S.points[nu, 0:4], xa[0:4])
        assert_allclose(d_rot, delta[0:3], atol=1e-9)
        assert_allclose(S.points[nu, 4:] - xa[4:], delta[3:], atol=1e-12)
        # mirrored point nu + 21 carries the negated perturbation
        d_rot_m = quat.quat_diff(S.points[nu + 21, 0:4], xa[0:4])
        assert_allclose(d_rot_m, -delta[0:3], atol=1e-9)


def test_sigma_point_consistency_recovers_mean():
    rng = np.random.default_rng(42)
    cfg = FilterConfig()
    W = ut_weights(cfg)
    fs = random_filter_state(rng)
    xa, Pa = augment(fs, np.diag(rng.uniform(1e-4, 1e-2, 6)))
    S = draw_sigma_points(xa, Pa, cfg)
    vec_mean = W.w_m @ S.points[:, 4:]
    assert_allclose(vec_mean, xa[4:], atol=1e-12)
    q_mean = quat.quat_weighted_mean(S.points[:, 0:4], W.w_m)
    assert np.linalg.norm(quat.quat_diff(q_mean, xa[0:4])) < 1e-8


# ---------------------------------------------------------------------------
# propagation and predicted moments

def test_propagate_sigmas_hover_zero_spread():
    fs = FilterState(NavState.identity(), np.zeros((15, 15)), 0)
    xa, Pa = augment(fs, np.zeros((6, 6)))
    S = draw_sigma_points(xa, Pa, FilterConfig())
    Sp = propagate_sigmas(S, hover_sample(), 0.005, FilterConfig())
    assert Sp.kind == "propagated"
    assert_allclose(Sp.points, np.tile(fs.x.as_vector(), (N_SIGMA, 1)), atol=1e-14)


def test_propagate_sigmas_matches_per_point_oracle():
    rng = np.random.default_rng(43)
    cfg = FilterConfig()
    fs = random_filter_state(rng)
    xa, Pa = augment(fs, np.diag(rng.uniform(1e-4, 1e-2, 6)))
    S = draw_sigma_points(xa, Pa, cfg)
    u = ImuSample(0, rng.normal(size=3), rng.normal(size=3) * 2)
    Sp = propagate_sigmas(S, u, 0.005, cfg)
    for nu in range(N_SIGMA):
        x_nu = NavState.from_vector(S.points[nu, :16])
        ref = propagate_state(x_nu, u, S.points[nu, 16:], 0.005, cfg.g)
        assert_allclose(Sp.points[nu], ref.as_vector(), atol=1e-12)


def test_propagate_sigmas_point0_is_noise_free():
    rng = np.random.default_rng(44)
    cfg = FilterConfig()
    fs = random_filter_state(rng)
    xa, Pa = augment(fs, np.diag(rng.uniform(1e-4, 1e-2, 6)))
    u = ImuSample(0, rng.normal(size=3), rng.normal(size=3))
    Sp = propagate_sigmas(draw_sigma_points(xa, Pa, cfg), u, 0.005, cfg)
    ref = propagate_state(fs.x, u, np.zeros(6), 0.005, cfg.g)
    assert_allclose(Sp.points[0], ref.as_vector(), atol=1e-14)


def test_predict_moments_degenerate_set():
    x = NavState.identity()
    pts = np.tile(x.as_vector(), (N_SIGMA, 1))
    C_w = np.diag(np.concatenate([np.zeros(9), np.full(6, 1e-4)]))
    fs = predict_moments(SigmaSet(pts, "propagated"), ut_weights(FilterConfig()),
                         C_w, t=7)
    assert_allclose(fs.x.as_vector(), x.as_vector(), atol=1e-12)
    assert_allclose(fs.P, C_w, atol=1e-15)
    assert fs.t == 7


def test_predict_moments_vector_slots_weighted_average():
    rng = np.random.default_rng(45)
    cfg = FilterConfig()
    W = ut_weights(cfg)
    pts = np.tile(NavState.identity().as_vector(), (N_SIGMA, 1))
    pts[:, 4:] += rng.normal(size=(N_SIGMA, 12)) * 0.1
    fs = predict_moments(SigmaSet(pts, "propagated"), W, np.zeros((15, 15)), 0)
    assert_allclose(fs.x.as_vector()[4:], W.w_m @ pts[:, 4:], atol=1e-12)


def test_residual_of_identical_quaternions_is_zero():
    rng = np.random.default_rng(46)
    x = NavState(quat.quat_normalize(rng.normal(size=4)), [1, 2, 3],
                 [0.1, 0, 0], np.zeros(3), np.zeros(3))
    pts = np.tile(x.as_vector(), (N_SIGMA, 1))
    D = state_residuals(pts, x)
    assert_allclose(D[:, 0:3], np.zeros((N_SIGMA, 3)), atol=1e-12)


# ---------------------------------------------------------------------------
# aggregate predict

def test_aggregate_batch_of_one_equals_single_cycle():
    rng = np.random.default_rng(47)
    cfg = FilterConfig()
    W = ut_weights(cfg)
    fs = random_filter_state(rng, t=0)
    sigma = cfg.nominal_sigma
    C_x, C_w = assemble_process_cov(sigma)
    u = ImuSample(0, rng.normal(size=3) * 0.1, [0, 0, 9.7])
    out, Sp = aggregate_predict(fs, [u], (C_x, C_w), MS5, cfg)
    xa, Pa = augment(fs, C_x)
    Sp_ref = propagate_sigmas(draw_sigma_points(xa, Pa, cfg), u, 0.005, cfg)
    ref = predict_moments(Sp_ref, W, C_w, MS5)
    assert_allclose(out.x.as_vector(), ref.x.as_vector(), atol=1e-14)
    assert_allclose(out.P, ref.P, atol=1e-14)
    assert_allclose(Sp.points, Sp_ref.points, atol=1e-14)


def test_aggregate_hover_batch_keeps_state_grows_cov():
    # zero initial spread: only the injected process noise grows P, and the
    # mean stays pinned (a finite attitude spread would shed second-order
    # "cosine loss" into velocity, which the UT is supposed to capture)
    cfg = FilterConfig()
    fs = FilterState(NavState.identity(), np.zeros((15, 15)), 0)
    C_x, C_w = assemble_process_cov(cfg.nominal_sigma)
    batch = [hover_sample(k * MS5) for k in range(10)]
    traces = [np.trace(fs.P)]
    cur = fs
    for k, u in enumerate(batch):
        cur, _ = aggregate_predict(cur, [u], (C_x, C_w), (k + 1) * MS5, cfg)
        traces.append(np.trace(cur.P))
    assert_allclose(cur.x.q, [1, 0, 0, 0], atol=1e-9)
    assert_allclose(cur.x.p, [0, 0, 0], atol=1e-9)
    assert all(b > a for a, b in zip(traces, traces[1:]))
    # single call over the whole batch agrees with the step-by-step loop
    batched, _ = aggregate_predict(fs, batch, (C_x, C_w), 10 * MS5, cfg)
    assert_allclose(batched.x.as_vector(), cur.x.as_vector(), atol=1e-12)
    assert_allclose(batched.P, cur.P, atol=1e-12)


def test_aggregate_rejects_empty_and_disordered():
    cfg = FilterConfig()
    fs = FilterState(NavState.identity(), np.eye(15) * 1e-4, 0)
    C = assemble_process_cov(cfg.nominal_sigma)
    with pytest.raises(ValueError):
        aggregate_predict(fs, [], C, MS5, cfg)
    batch = [hover_sample(2 * MS5), hover_sample(MS5)]
    with pytest.raises(ValueError):
        aggregate_predict(fs, batch, C, 3 * MS5, cfg)


# ---------------------------------------------------------------------------
# measurement moments and update

def _predicted(rng, cfg, landmarks):
    fs = random_filter_state(rng, t=0)
    # place the state near the origin looking at the landmarks
    fs.x.p = np.zeros(3)
    C_x, C_w = assemble_process_cov(cfg.nominal_sigma)
    u = ImuSample(0, rng.normal(size=3) * 0.05, [0, 0, 9.81])
    return aggregate_predict(fs, [u], (C_x, C_w), MS5, cfg)


def test_measurement_moments_degenerate_set():
    cfg = FilterConfig()
    W = ut_weights(cfg)
    lm = LandmarkSet([0, 1], [[1, 2, 3], [3, 1, 0]])
    x = NavState.identity()
    pts = np.tile(x.as_vector(), (N_SIGMA, 1))
    C_l = 0.04 * np.eye(6)
    z_hat, P_zz, P_xz = measurement_moments(SigmaSet(pts, "propagated"), W, x,
                                            lm, C_l)
    assert_allclose(P_zz, C_l, atol=1e-12)
    assert_allclose(P_xz, np.zeros((15, 6)), atol=1e-12)
    assert_allclose(z_hat, np.concatenate([[1, 2, 3], [3, 1, 0]]), atol=1e-12)


def test_measurement_moments_mean_and_psd():
    rng = np.random.default_rng(48)
    cfg = FilterConfig()
    W = ut_weights(cfg)
    lm = LandmarkSet(range(3), rng.normal(size=(3, 3)) + [0, 0, 5])
    fs_pred, Sp = _predicted(rng, cfg, lm)
    from vinkit.navmodel import measure_sigma_points
    Z = measure_sigma_points(Sp.points, lm)
    z_hat, P_zz, P_xz = measurement_moments(Sp, W, fs_pred.x, lm, 0.01 * np.eye(9))
    assert_allclose(z_hat, W.w_m @ Z, atol=1e-12)
    assert_allclose(P_zz, P_zz.T, atol=1e-12)
    assert np.all(np.linalg.eigvalsh(P_zz) > 0)


def test_gain_solve_scalar_analog():
    K = _gain_solve(np.array([[4.0]]), np.array([[2.0]]))
    assert_allclose(K, [[0.5]])


def test_update_zero_innovation_keeps_state():
    rng = np.random.default_rng(49)
    cfg = FilterConfig()
    W = ut_weights(cfg)
    lm = LandmarkSet(range(4), rng.normal(size=(4, 3)) + [0, 0, 5])
    fs_pred, Sp = _predicted(rng, cfg, lm)
    C_l = 0.04 * np.eye(12)
    z_hat, P_zz, _ = measurement_moments(Sp, W, fs_pred.x, lm, C_l)
    from vinkit.ukf import update
    out = update(fs_pred, Sp, W, z_hat, lm, C_l)
    assert_allclose(out.x.as_vector(), fs_pred.x.as_vector(), atol=1e-10)
    assert np.trace(out.P) <= np.trace(fs_pred.P) + 1e-12
    assert_allclose(out.P, out.P.T, atol=1e-12)


def test_update_reduces_trace_random():
    rng = np.random.default_rng(50)
    cfg = FilterConfig()
    W = ut_weights(cfg)
    from vinkit.ukf import update
    for _ in range(10):
        lm = LandmarkSet(range(3), rng.normal(size=(3, 3)) + [0, 0, 6])
        fs_pred, Sp = _predicted(rng, cfg, lm)
        C_l = 0.04 * np.eye(9)
        z = np.asarray([rng.normal(size=9)]).ravel() * 0.1 + \
            measurement_moments(Sp, W, fs_pred.x, lm, C_l)[0]
        out = update(fs_pred, Sp, W, z, lm, C_l)
        assert np.trace(out.P) <= np.trace(fs_pred.P) + 1e-12


def test_psd_repair_contract():
    P = np.eye(15)
    P[0, 0] = -1e-10  # inside the repair window
    out = _repair_psd(P)
    assert np.all(np.linalg.eigvalsh(out) >= -1e-16)
    P[0, 0] = -1e-6   # beyond it
    with pytest.raises(NumericalError):
        _repair_psd(P)


# ---------------------------------------------------------------------------
# step orchestration

def test_step_without_vision_is_pure_predict():
    rng = np.random.default_rng(51)
    cfg = FilterConfig()
    fs = random_filter_state(rng, t=0)
    batch = [ImuSample(k * MS5, rng.normal(size=3) * 0.02, [0, 0, 9.8])
             for k in range(5)]
    out = step(fs, cfg, batch, vision=None, end_t=5 * MS5)
    C = assemble_process_cov(cfg.nominal_sigma)
    ref, _ = aggregate_predict(fs, batch, C, 5 * MS5, cfg)
    assert_allclose(out.x.as_vector(), ref.x.as_vector(), atol=1e-14)
    assert_allclose(out.P, ref.P, atol=1e-14)


def test_step_with_vision_composes_predict_update():
    rng = np.random.default_rng(52)
    cfg = FilterConfig()
    W = ut_weights(cfg)
    fs = random_filter_state(rng, t=0)
    fs.x.p = np.zeros(3)
    lm = LandmarkSet(range(3), rng.normal(size=(3, 3)) + [0, 0, 5])
    batch = [ImuSample(k * MS5, rng.normal(size=3) * 0.02, [0, 0, 9.8])
             for k in range(3)]
    C_x, C_w = assemble_process_cov(cfg.nominal_sigma)
    fs_pred, Sp = aggregate_predict(fs, batch, (C_x, C_w), 3 * MS5, cfg)
    z = measurement_moments(Sp, W, fs_pred.x, lm,
                            np.eye(9) * cfg.nominal_sigma.landmark**2)[0] + 0.01
    vision = VisionFrame(3 * MS5, z, lm)
    out = step(fs, cfg, batch, vision=vision, end_t=3 * MS5)
    from vinkit.ukf import update
    from vinkit.navmodel import assemble_measurement_cov
    ref = update(fs_pred, Sp, W, z, lm,
                 assemble_measurement_cov(cfg.nominal_sigma.landmark, 9))
    assert_allclose(out.x.as_vector(), ref.x.as_vector(), atol=1e-13)
    assert_allclose(out.P, ref.P, atol=1e-13)


def test_step_nominal_none_equals_explicit_nominal():
    rng = np.random.default_rng(53)
    cfg = FilterConfig()
    fs = random_filter_state(rng, t=0)
    batch = [ImuSample(k * MS5, rng.normal(size=3) * 0.02, [0, 0, 9.8])
             for k in range(3)]
    a = step(fs, cfg, batch, end_t=3 * MS5, sigma=None)
    b = step(fs, cfg, batch, end_t=3 * MS5, sigma=cfg.nominal_sigma)
    assert_allclose(a.x.as_vector(), b.x.as_vector(), atol=0)
    assert_allclose(a.P, b.P, atol=0)


def test_step_update_only_first_frame():
    # vision before any IMU data: sigma points come from the prior itself
    rng = np.random.default_rng(54)
    cfg = FilterConfig()
    fs = FilterState(NavState.identity(), 0.01 * np.eye(15), 0)
    lm = LandmarkSet(range(4), rng.normal(size=(4, 3)) + [0, 0, 5])
    z = np.concatenate([lm.get(i) for i in lm.ids]) + 0.05
    out = step(fs, cfg, [], vision=VisionFrame(0, z, lm), end_t=0)
    assert out.t == 0
    assert np.trace(out.P) < np.trace(fs.P)
    assert np.linalg.norm(out.x.p) > 1e-4  # the innovation moved the state


# ---------------------------------------------------------------------------
# linear equivalence against a textbook Kalman filter

def test_linear_equivalence_frozen_attitude():
    """Frozen identity attitude, zero bias, linear landmark measurements:
    the quaternion UKF must reproduce a linear KF on [p, v] to 1e-6."""
    rng = np.random.default_rng(55)
    cfg = FilterConfig(lam=3.0, alpha=1.0, beta=2.0)
    W = ut_weights(cfg)
    dT = 0.005
    sigma_a = 0.05       # accel white noise feeding p, v
    sigma_l = 0.1        # landmark measurement noise
    landmarks = LandmarkSet([0, 1], [[2.0, 0.5, 4.0], [-1.0, 1.5, 5.0]])
    m_lm = landmarks.coords_matrix().reshape(-1)

    # UKF side: zero attitude/bias covariance and process noise
    C_eta_x = np.diag([0, 0, 0, sigma_a**2, sigma_a**2, sigma_a**2])
    C_eta_w = np.zeros((15, 15))
    C_eta_l = sigma_l**2 * np.eye(6)
    P0 = np.zeros((15, 15))
    P0[3:9, 3:9] = np.diag([0.04, 0.04, 0.04, 0.01, 0.01, 0.01])
    fs = FilterState(NavState.identity(), P0, 0)

    # reference linear KF on [p, v]
    F = np.eye(6)
    F[0:3, 3:6] = dT * np.eye(3)
    G = np.zeros((6, 3))
    G[0:3] = 0.5 * dT**2 * np.eye(3)
    G[3:6] = dT * np.eye(3)
    Q = G @ (sigma_a**2 * np.eye(3)) @ G.T
    H = np.zeros((6, 6))
    H[0:3, 0:3] = -np.eye(3)
    H[3:6, 0:3] = -np.eye(3)
    R = sigma_l**2 * np.eye(6)
    m_kf = np.zeros(6)
    P_kf = P0[3:9, 3:9].copy()

    # simulated truth with known accelerations
    p_true, v_true = np.zeros(3), np.zeros(3)
    from vinkit.ukf import update
    from vinkit.navmodel import GRAVITY
    for k in range(100):
        a_world = np.array([0.2 * np.sin(0.05 * k), -0.1, 0.05])
        a_m = a_world - GRAVITY  # identity attitude, zero bias
        # truth integrates the same ZOH model
        p_true = p_true + v_true * dT + 0.5 * a_world * dT**2
        v_true = v_true + a_world * dT
        z = m_lm - np.concatenate([p_true, p_true]) \
            + rng.normal(size=6) * sigma_l

        u = ImuSample(k * MS5, np.zeros(3), a_m)
        fs_pred, Sp = aggregate_predict(fs, [u], (C_eta_x, C_eta_w),
                                        (k + 1) * MS5, cfg)
        fs = update(fs_pred, Sp, W, z, landmarks, C_eta_l)

        Bu = np.concatenate([0.5 * a_world * dT**2, a_world * dT])
        m_kf = F @ m_kf + Bu
        P_kf = F @ P_kf @ F.T + Q
        S = H @ P_kf @ H.T + R
        K = P_kf @ H.T @ np.linalg.solve(S, np.eye(6))
        m_kf = m_kf + K @ (z - (m_lm + H @ m_kf))
        P_kf = P_kf - K @ S @ K.T

    assert_allclose(fs.x.p, m_kf[0:3], atol=1e-6)
    assert_allclose(fs.x.v, m_kf[3:6], atol=1e-6)
    assert_allclose(fs.P[3:9, 3:9], P_kf, atol=1e-6)
    # frozen slots never moved
    assert_allclose(fs.x.q, [1, 0, 0, 0], atol=1e-6)
    assert np.linalg.norm(fs.x.b_w) < 1e-6
    assert np.linalg.norm(fs.x.b_a) < 1e-6
