"""Simulator: analytic profile properties, discrete-kinematics consistency,
and the IMU/track corruption models."""

import numpy as np
from numpy.testing import assert_allclose

from vinkit import quat
from vinkit.frontend import CameraRig, body_point
from vinkit.navmodel import propagate_state, ImuSample
from vinkit.sim import (
    SimConfig,
    generate_landmarks,
    simulate_trajectory,
    synthesize_imu,
    synthesize_tracks,
)


def hover_config(**kw):
    args = dict(duration=2.0, pos_amp=[0, 0, 0], rot_amp=[0, 0],
                init_gyro_bias=[0, 0, 0], init_accel_bias=[0, 0, 0])
    args.update(kw)
    return SimConfig(**args)


def test_hover_profile():
    truth = simulate_trajectory(hover_config())
    for x in truth.states[:20]:
        assert_allclose(x.q, [1, 0, 0, 0], atol=1e-15)
        assert_allclose(x.v, [0, 0, 0], atol=1e-15)
    assert_allclose(truth.omega, np.zeros_like(truth.omega), atol=1e-15)
    assert_allclose(truth.accel, np.tile([0, 0, 9.81], (truth.accel.shape[0], 1)),
                    atol=1e-12)


def test_circle_profile_constant_speed():
    A, f = 2.0, 0.1
    cfg = SimConfig(duration=5.0, pos_amp=[A, A, 0], pos_freq=[f, f, 0],
                    pos_phase=[np.pi / 2, 0, 0], rot_amp=[0, 0])
    truth = simulate_trajectory(cfg)
    speeds = np.array([np.linalg.norm(x.v) for x in truth.states])
    assert_allclose(speeds, 2 * np.pi * A * f, rtol=1e-12)


def test_truth_satisfies_discrete_kinematics():
    cfg = SimConfig(duration=3.0)
    truth = simulate_trajectory(cfg)
    dT = cfg.imu_dt_ns * 1e-9
    for k in range(0, truth.omega.shape[0], 7):
        u = ImuSample(truth.t_ns[k], truth.omega[k], truth.accel[k])
        out = propagate_state(truth.states[k], u, np.zeros(6), dT, truth.g)
        nxt = truth.states[k + 1]
        assert_allclose(out.q, nxt.q, atol=1e-8)
        assert_allclose(out.v, nxt.v, atol=1e-8)
        assert_allclose(out.p, nxt.p, atol=1e-8)


def test_trajectory_deterministic():
    cfg = SimConfig(duration=1.0)
    a = simulate_trajectory(cfg)
    b = simulate_trajectory(cfg)
    assert np.array_equal(a.t_ns, b.t_ns)
    assert np.array_equal(a.omega, b.omega)
    assert np.array_equal(a.accel, b.accel)


# ---------------------------------------------------------------------------
# IMU synthesis

def test_synthesize_imu_exact_when_noise_free():
    cfg = hover_config()
    cfg.true_sigma = np.full(13, 1e-300)  # effectively zero, layout preserved
    cfg.true_sigma[:] = 0.0
    truth = simulate_trajectory(cfg)
    samples, b_w, b_a = synthesize_imu(truth, cfg, np.random.default_rng(0))
    for k in (0, 50, 100):
        assert_allclose(samples[k].w_m, truth.omega[k], atol=0)
        assert_allclose(samples[k].a_m, truth.accel[k], atol=0)
    assert_allclose(b_w, np.zeros_like(b_w), atol=0)


def test_bias_walk_constant_when_walk_sigma_zero():
    cfg = hover_config(init_gyro_bias=[0.01, -0.02, 0.03])
    cfg.true_sigma[6:12] = 0.0
    truth = simulate_trajectory(cfg)
    _, b_w, b_a = synthesize_imu(truth, cfg, np.random.default_rng(1))
    assert_allclose(b_w, np.tile([0.01, -0.02, 0.03], (b_w.shape[0], 1)), atol=0)


def test_noise_sample_variance_matches_sigma():
    cfg = hover_config(duration=170.0)  # > 1e5 scalar draws across axes
    cfg.true_sigma[0:3] = 2e-3
    cfg.true_sigma[3:6] = 3e-2
    cfg.true_sigma[6:12] = 0.0
    truth = simulate_trajectory(cfg)
    samples, _, _ = synthesize_imu(truth, cfg, np.random.default_rng(2))
    eta_w = np.stack([s.w_m for s in samples]) - truth.omega
    eta_a = np.stack([s.a_m for s in samples]) - truth.accel
    assert eta_w.size >= 1e5
    assert abs(np.var(eta_w) / (2e-3) ** 2 - 1.0) < 0.05
    assert abs(np.var(eta_a) / (3e-2) ** 2 - 1.0) < 0.05


def test_synthesize_imu_deterministic_per_seed():
    cfg = hover_config()
    truth = simulate_trajectory(cfg)
    s1, _, _ = synthesize_imu(truth, cfg, np.random.default_rng(42))
    s2, _, _ = synthesize_imu(truth, cfg, np.random.default_rng(42))
    assert all(np.array_equal(a.w_m, b.w_m) and np.array_equal(a.a_m, b.a_m)
               for a, b in zip(s1, s2))


# ---------------------------------------------------------------------------
# track synthesis

def test_tracks_noise_free_project_triangulate_round_trip():
    cfg = SimConfig(duration=1.0, pixel_noise=0.0, landmark_count=30, seed=3)
    rng = np.random.default_rng(cfg.seed)
    truth = simulate_trajectory(cfg)
    landmarks = generate_landmarks(cfg, rng)
    rig = CameraRig.default()
    table = synthesize_tracks(truth, landmarks, rig, cfg, rng)
    frame = table.frames[0]
    assert len(frame.observations) > 5
    x = truth.states[0]
    for o in frame.observations:
        l_b = quat.quat_rotate(quat.quat_inverse(x.q),
                               landmarks.get(o.lid) - x.p)
        assert_allclose(body_point(o, rig), l_b, atol=1e-9)


def test_tracks_drop_behind_camera():
    cfg = SimConfig(duration=0.2, landmark_count=2, pixel_noise=0.0,
                    landmark_center=[0, 0, -5])  # behind a +z-looking camera
    rng = np.random.default_rng(cfg.seed)
    truth = simulate_trajectory(cfg)
    landmarks = generate_landmarks(cfg, rng)
    table = synthesize_tracks(truth, landmarks, CameraRig.default(), cfg, rng)
    assert all(len(f.observations) == 0 for f in table)


def test_tracks_deterministic_per_seed():
    cfg = SimConfig(duration=0.5)
    out = []
    for _ in range(2):
        rng = np.random.default_rng(9)
        truth = simulate_trajectory(cfg)
        landmarks = generate_landmarks(cfg, rng)
        out.append(synthesize_tracks(truth, landmarks, CameraRig.default(),
                                     cfg, rng))
    for fa, fb in zip(out[0], out[1]):
        assert fa.t == fb.t and len(fa.observations) == len(fb.observations)
        for oa, ob in zip(fa.observations, fb.observations):
            assert (oa.lid, oa.u_l, oa.v_l, oa.u_r, oa.v_r) == \
                   (ob.lid, ob.u_l, ob.v_l, ob.u_r, ob.v_r)


def test_enough_landmarks_visible_in_canonical_scenario():
    cfg = SimConfig(duration=2.0)
    rng = np.random.default_rng(cfg.seed)
    truth = simulate_trajectory(cfg)
    landmarks = generate_landmarks(cfg, rng)
    table = synthesize_tracks(truth, landmarks, CameraRig.default(), cfg, rng)
    counts = [len(f.observations) for f in table]
    assert min(counts) >= 5, f"too few visible landmarks: {counts}"
