"""Shared dataset fixtures.

Datasets are produced through the deployed toolkit's own CLI/config
surface (its external interface) and cached per session.  The deployed
package is imported in tests only, as the verification oracle; the
trainer's runtime never imports it.
"""

import numpy as np
import pytest
import torch

from vinkit import cli as vincli
from vinkit.navmodel import NoiseSigma
from vinkit.pipeline import ExperimentConfig, save_config

# deliberately stiff bias-walk sigmas: the mis-tuned baseline the
# adaptation networks are supposed to correct
STIFF_SIGMA = np.array([2e-3] * 3 + [2e-2] * 3 + [3e-6] * 3 + [3e-5] * 3 + [0.2])


def build_dataset(path, seed, duration=8.0, landmark_count=50,
                  pixel_noise=0.2, nominal_sigma=None, **sim_kw):
    cfg = ExperimentConfig()
    cfg.sim.duration = duration
    cfg.sim.landmark_count = landmark_count
    cfg.sim.pixel_noise = pixel_noise
    cfg.sim.seed = seed
    for k, v in sim_kw.items():
        setattr(cfg.sim, k, np.asarray(v, dtype=float)
                if isinstance(v, (list, tuple)) else v)
    if nominal_sigma is not None:
        cfg.filter.nominal_sigma = NoiseSigma(np.asarray(nominal_sigma))
    save_config(str(path) + ".yaml", cfg)
    assert vincli.main(["simulate", "--config", str(path) + ".yaml",
                        "--out", str(path)]) == 0
    return cfg


@pytest.fixture(scope="session")
def mild_dataset(tmp_path_factory):
    """Moderate scenario for cross-filter comparisons."""
    path = tmp_path_factory.mktemp("data") / "mild"
    build_dataset(path, seed=31, duration=6.0, landmark_count=40,
                  pixel_noise=0.4)
    return str(path)


@pytest.fixture(scope="session")
def stiff_train_dataset(tmp_path_factory):
    """Training scenario with the stiff nominal tuning baked into config."""
    path = tmp_path_factory.mktemp("data") / "train"
    build_dataset(path, seed=31, nominal_sigma=STIFF_SIGMA)
    return str(path)


@pytest.fixture(scope="session")
def stiff_heldout_dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "heldout"
    build_dataset(path, seed=77, nominal_sigma=STIFF_SIGMA)
    return str(path)


def hover_toy_dataset(n_frames=5, n_landmarks=4, imu_per_frame=10,
                      noise=0.02, seed=4,
                      gyro_bias=(0.01, -0.008, 0.012),
                      accel_bias=(0.3, -0.2, 0.25)):
    """Tiny in-memory dataset: hovering truth, fixed landmark set.

    Every landmark is visible in every frame, so registration happens only
    at frame zero from the (parameter-independent) initial state and the
    loss is a smooth function of the network weights end to end.  The IMU
    carries unmodeled constant biases: the filter has to estimate them, and
    how fast it does depends on the (network-scaled) walk sigmas, which is
    what gives the loss a healthy gradient into the network.
    """
    from vintrain.data import Dataset, Frame, Calibration

    rng = np.random.default_rng(seed)
    dt_ns = 5_000_000
    landmarks = rng.uniform(-2, 2, (n_landmarks, 3)) + [0, 0, 6]
    truth = np.zeros(16)
    truth[0] = 1.0
    frames = []
    for k in range(n_frames):
        t = k * imu_per_frame * dt_ns
        if k == 0:
            imu_t = np.zeros(0, dtype=np.int64)
            imu = np.zeros((0, 6))
        else:
            imu_t = (np.arange(imu_per_frame) * dt_ns
                     + (k - 1) * imu_per_frame * dt_ns).astype(np.int64)
            imu = np.concatenate([
                gyro_bias + rng.normal(0, noise, (imu_per_frame, 3)),
                np.add([0, 0, 9.81], accel_bias)
                + rng.normal(0, noise, (imu_per_frame, 3)),
            ], axis=1)
        frames.append(Frame(
            t=t, imu_t=imu_t, imu=imu,
            obs_ids=np.arange(n_landmarks, dtype=np.int64),
            obs_body=landmarks + rng.normal(0, noise, landmarks.shape),
            truth=truth.copy()))
    calib = Calibration(458.0, 458.0, 376.0, 240.0, 0.11,
                        np.array([1.0, 0, 0, 0]), np.zeros(3))
    return Dataset(frames, calib, np.array([f.t for f in frames]),
                   np.tile(truth, (n_frames, 1)), dt_ns)


def toy_loss(imunet, dataset, tcfg):
    """Differentiable whole-dataset loss used by the gradient checks."""
    import vintrain.rotations as rot
    from vintrain.ekf import frame_step
    from vintrain.networks import scale_sigma
    from vintrain.train import initial_state

    nominal = torch.as_tensor(tcfg.nominal_sigma, dtype=torch.float64)
    state = initial_state(tcfg, dataset)
    registry = {}
    total = torch.zeros((), dtype=torch.float64)
    count = 0
    for frame in dataset.frames:
        if frame.imu.shape[0] >= imunet.d_gru:
            window = torch.as_tensor(frame.imu[-imunet.d_gru:],
                                     dtype=torch.float64).unsqueeze(0)
            gamma = torch.cat([imunet(window)[0],
                               torch.zeros(1, dtype=torch.float64)])
            sigma = scale_sigma(gamma, nominal, tcfg.upsilon)
        else:
            sigma = nominal
        state = frame_step(state, frame, registry, sigma, dataset.dt_ns)
        truth = torch.as_tensor(frame.truth, dtype=torch.float64)
        r_e = rot.diff(truth[0:4], state.q)
        p_e = truth[4:7] - state.p
        v_e = truth[7:10] - state.v
        total = total + (tcfg.w_q * torch.dot(r_e, r_e)
                         + tcfg.w_p * torch.dot(p_e, p_e)
                         + tcfg.w_v * torch.dot(v_e, v_e))
        count += 1
    return total / count
