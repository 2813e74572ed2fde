"""Experiment orchestration: configs, the frame loop, and artifact output.

``run_filter`` is the core loop shared by every mode: it carves the IMU
stream into per-frame batches, asks the landmark registry for matches,
optionally rescales the noise sigmas with the learned networks, and steps
the filter.  ``run_experiment`` wraps it with dataset/synthetic input
handling, error computation and CSV emission for plotting.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from . import dlam
from .errors import DataFormatError
from .frontend import (
    CameraRig,
    TrackTable,
    parse_calibration,
    parse_groundtruth_csv,
    parse_imu_csv,
    parse_tracks,
    register_landmarks,
    write_calibration,
    write_groundtruth_csv,
    write_imu_csv,
    write_tracks_csv,
)
from .metrics import ErrorSeries, LossReport, compute_errors, compute_loss
from .navmodel import (
    LandmarkSet,
    NavState,
    NoiseSigma,
    assemble_measurement_cov,
    assemble_process_cov,
)
from .sim import (
    SimConfig,
    generate_landmarks,
    simulate_trajectory,
    synthesize_imu,
    synthesize_tracks,
)
from .ukf import (
    FilterConfig,
    FilterState,
    VisionFrame,
    _prior_sigma_set,
    aggregate_predict,
    step,
    update,
    ut_weights,
)


@dataclass
class InitConfig:
    """Initial covariance (standard deviations per error block) and policy."""

    att: float = 0.02
    pos: float = 0.05
    vel: float = 0.05
    gyro_bias: float = 0.01
    accel_bias: float = 0.05
    from_truth: bool = True      # seed the mean from the first truth row
    include_bias: bool = False   # also copy the truth bias columns

    def p0(self) -> np.ndarray:
        d = np.concatenate([np.full(3, self.att), np.full(3, self.pos),
                            np.full(3, self.vel), np.full(3, self.gyro_bias),
                            np.full(3, self.accel_bias)])
        return np.diag(d * d)


@dataclass
class ExperimentConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    rig: CameraRig = field(default_factory=CameraRig.default)
    filter: FilterConfig = field(default_factory=FilterConfig)
    init: InitConfig = field(default_factory=InitConfig)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    s, f, i, r = cfg.sim, cfg.filter, cfg.init, cfg.rig
    lst = lambda a: np.asarray(a, dtype=float).tolist()
    return {
        "sim": {
            "duration": s.duration, "imu_rate": s.imu_rate, "cam_rate": s.cam_rate,
            "seed": s.seed,
            "pos_amp": lst(s.pos_amp), "pos_freq": lst(s.pos_freq),
            "pos_phase": lst(s.pos_phase),
            "rot_amp": lst(s.rot_amp), "rot_freq": lst(s.rot_freq),
            "true_sigma": lst(s.true_sigma),
            "init_gyro_bias": lst(s.init_gyro_bias),
            "init_accel_bias": lst(s.init_accel_bias),
            "landmark_count": s.landmark_count,
            "landmark_extent": s.landmark_extent,
            "landmark_center": lst(s.landmark_center),
            "pixel_noise": s.pixel_noise,
            "img_w": s.img_w, "img_h": s.img_h,
        },
        "rig": {
            "fx": r.fx, "fy": r.fy, "cx": r.cx, "cy": r.cy,
            "baseline": r.baseline,
            "T_bc": {"q": lst(r.T_bc_q), "t": lst(r.T_bc_t)},
        },
        "filter": {
            "lam": f.lam, "alpha": f.alpha, "beta": f.beta,
            "upsilon": f.upsilon, "gravity": lst(f.g),
            "nominal_sigma": lst(f.nominal_sigma.c),
        },
        "init": {
            "att": i.att, "pos": i.pos, "vel": i.vel,
            "gyro_bias": i.gyro_bias, "accel_bias": i.accel_bias,
            "from_truth": i.from_truth, "include_bias": i.include_bias,
        },
    }


def config_from_dict(doc: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    doc = doc or {}
    if "sim" in doc:
        cfg.sim = SimConfig(**doc["sim"])
    if "rig" in doc:
        r = dict(doc["rig"])
        tbc = r.pop("T_bc", {})
        cfg.rig = CameraRig(T_bc_q=np.asarray(tbc.get("q", [1, 0, 0, 0]), dtype=float),
                            T_bc_t=np.asarray(tbc.get("t", [0, 0, 0]), dtype=float), **r)
    if "filter" in doc:
        f = dict(doc["filter"])
        g = f.pop("gravity", None)
        sig = f.pop("nominal_sigma", None)
        kwargs = dict(f)
        if g is not None:
            kwargs["g"] = np.asarray(g, dtype=float)
        if sig is not None:
            kwargs["nominal_sigma"] = NoiseSigma(np.asarray(sig, dtype=float))
        cfg.filter = FilterConfig(**kwargs)
    if "init" in doc:
        cfg.init = InitConfig(**doc["init"])
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    try:
        return config_from_dict(doc)
    except (TypeError, ValueError, KeyError) as exc:
        raise DataFormatError(f"{path}: bad config ({exc})") from None


def save_config(path, cfg: ExperimentConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=False)


@dataclass
class RunResult:
    estimates: list                  # (t_ns, NavState) at each camera frame
    registry: LandmarkSet
    frames_updated: int = 0
    frames_skipped: int = 0
    dropped_observations: int = 0


def run_filter(samples, tracks: TrackTable, rig: CameraRig,
               fcfg: FilterConfig, fs0: FilterState,
               imu_weights: dlam.ImuNetWeights | None = None,
               dlam_cfg: dlam.DlamConfig | None = None,
               use_vision: bool = True,
               registry: LandmarkSet | None = None) -> RunResult:
    """Drive the filter over a track table, one aggregate cycle per frame.

    With ``imu_weights`` set, each frame's noise sigmas are rescaled from
    the last d_gru IMU samples (frames with a shorter history keep the
    nominal values; the vision logit does likewise for CSV pipelines, which
    carry no raw images).  ``use_vision=False`` turns the run into pure
    dead reckoning on the same timeline.
    """
    dlam_cfg = dlam_cfg or dlam.DlamConfig(upsilon=fcfg.upsilon)
    registry = registry if registry is not None else LandmarkSet()
    fs = fs0
    samples = sorted(samples, key=lambda s: s.t)
    sample_t = np.array([s.t for s in samples], dtype=np.int64)
    result = RunResult([], registry)
    cursor = 0
    for frame in tracks:
        if frame.t < fs.t:
            raise DataFormatError(f"track frame at t={frame.t} precedes the "
                                  f"filter state at t={fs.t}")
        hi = int(np.searchsorted(sample_t, frame.t))
        batch = samples[cursor:hi]
        cursor = hi
        sigma = fcfg.nominal_sigma
        if imu_weights is not None and len(batch) >= dlam_cfg.d_gru:
            window = np.array([np.concatenate([u.w_m, u.a_m])
                               for u in batch[-dlam_cfg.d_gru:]])
            gamma = np.concatenate([dlam.imunet_forward(window, imu_weights, dlam_cfg),
                                    [0.0]])
            sigma = dlam.scale_sigma(gamma, fcfg.nominal_sigma, dlam_cfg.upsilon)
        C_eta_x, C_eta_w = assemble_process_cov(sigma)
        if batch:
            fs_pred, S = aggregate_predict(fs, batch, (C_eta_x, C_eta_w),
                                           frame.t, fcfg)
        else:
            fs_pred, S = FilterState(fs.x.copy(), fs.P.copy(), frame.t), None
        # registration must see the state at the frame's own time, so it
        # runs after the predict; pre-predict anchoring would bake one
        # camera period of motion into every first-sight landmark
        vision = None
        if use_vision and frame.observations:
            match = register_landmarks(frame.observations, fs_pred.x, rig, registry)
            result.dropped_observations += match.dropped
            if len(match.matched) > 0:
                vision = VisionFrame(frame.t, match.z, match.matched)
        if vision is not None:
            if S is None:
                S = _prior_sigma_set(fs_pred, fcfg, C_eta_x)
            C_eta_l = assemble_measurement_cov(sigma.landmark,
                                               vision.landmarks.measurement_dim)
            fs = update(fs_pred, S, ut_weights(fcfg), vision.z,
                        vision.landmarks, C_eta_l)
            result.frames_updated += 1
        else:
            fs = fs_pred
            result.frames_skipped += 1
        result.estimates.append((fs.t, fs.x))
    return result


def initial_state(cfg: ExperimentConfig, truth_rows, t0: int) -> FilterState:
    """Initial mean/covariance per the init policy."""
    x0 = NavState.identity()
    if cfg.init.from_truth and truth_rows:
        ts = np.array([t for t, _ in truth_rows], dtype=np.int64)
        x_t = truth_rows[int(np.argmin(np.abs(ts - t0)))][1]
        x0 = x_t.copy()
        if not cfg.init.include_bias:
            x0.b_w = np.zeros(3)
            x0.b_a = np.zeros(3)
    return FilterState(x0, cfg.init.p0(), t0)


# ---------------------------------------------------------------------------
# Artifact writers

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_estimates_csv(path, estimates) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,qw,qx,qy,qz,px,py,pz,vx,vy,vz,bwx,bwy,bwz,bax,bay,baz\n")
        for t, x in estimates:
            row = np.concatenate([x.q, x.p, x.v, x.b_w, x.b_a])
            fh.write(f"{int(t)}," + ",".join(_fmt(v) for v in row) + "\n")


def read_estimates_csv(path) -> list[tuple[int, NavState]]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("t,") or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 17:
                raise DataFormatError(f"{path}:{lineno}: expected 17 columns")
            try:
                vals = [float(p) for p in parts]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            out.append((int(vals[0]), NavState(vals[1:5], vals[5:8], vals[8:11],
                                               vals[11:14], vals[14:17])))
    return out


def write_errors_csv(path, errors: ErrorSeries) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,rex,rey,rez,pex,pey,pez,vex,vey,vez\n")
        for k in range(len(errors)):
            row = np.concatenate([errors.r_e[k], errors.p_e[k], errors.v_e[k]])
            fh.write(f"{int(errors.t_ns[k])}," + ",".join(_fmt(v) for v in row) + "\n")


def write_loss_yaml(path, report: LossReport, extra: dict | None = None) -> None:
    doc = {"loss": report.loss, "mse_q": report.mse_q, "mse_p": report.mse_p,
           "mse_v": report.mse_v, "transient_skip": report.transient_skip,
           "n_samples": report.n_samples}
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


# ---------------------------------------------------------------------------
# End-to-end experiment entry points

@dataclass
class SyntheticData:
    truth_rows: list            # (t, NavState with true biases)
    samples: list
    tracks: TrackTable
    landmarks: LandmarkSet


def make_synthetic(cfg: ExperimentConfig, seed: int | None = None) -> SyntheticData:
    sim_cfg = cfg.sim if seed is None else replace(cfg.sim, seed=seed)
    rng = np.random.default_rng(sim_cfg.seed)
    truth = simulate_trajectory(sim_cfg, g=cfg.filter.g)
    samples, b_w, b_a = synthesize_imu(truth, sim_cfg, rng)
    landmarks = generate_landmarks(sim_cfg, rng)
    tracks = synthesize_tracks(truth, landmarks, cfg.rig, sim_cfg, rng)
    rows = []
    for k, x in enumerate(truth.states):
        xb = x.copy()
        if k > 0:  # bias walk steps once per sample interval
            xb.b_w, xb.b_a = b_w[k - 1].copy(), b_a[k - 1].copy()
        else:
            xb.b_w = sim_cfg.init_gyro_bias.copy()
            xb.b_a = sim_cfg.init_accel_bias.copy()
        rows.append((int(truth.t_ns[k]), xb))
    return SyntheticData(rows, samples, tracks, landmarks)


def write_dataset(out_dir, cfg: ExperimentConfig, data: SyntheticData) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "imu": os.path.join(out_dir, "imu.csv"),
        "truth": os.path.join(out_dir, "truth.csv"),
        "tracks": os.path.join(out_dir, "tracks.csv"),
        "calib": os.path.join(out_dir, "calib.yaml"),
        "config": os.path.join(out_dir, "config.yaml"),
    }
    write_imu_csv(paths["imu"], data.samples)
    write_groundtruth_csv(paths["truth"], data.truth_rows)
    write_tracks_csv(paths["tracks"], data.tracks)
    write_calibration(paths["calib"], cfg.rig)
    save_config(paths["config"], cfg)
    return paths


def load_dataset(dataset_dir, tracks_path=None):
    imu = parse_imu_csv(os.path.join(dataset_dir, "imu.csv"))
    tracks = parse_tracks(tracks_path or os.path.join(dataset_dir, "tracks.csv"))
    rig = parse_calibration(os.path.join(dataset_dir, "calib.yaml"))
    truth_path = os.path.join(dataset_dir, "truth.csv")
    truth = parse_groundtruth_csv(truth_path) if os.path.exists(truth_path) else []
    return imu, tracks, rig, truth


def run_experiment(cfg: ExperimentConfig, out_dir,
                   weights_path=None, use_dlam: bool = True,
                   seed: int | None = None, dataset_dir=None,
                   tracks_path=None, use_vision: bool = True) -> dict:
    """Wire data -> (optional) adaptation -> filter -> metrics -> artifacts.

    Synthesizes a scenario unless ``dataset_dir`` points at parsed CSVs.
    Returns a dict with the run result, the loss report (when truth is
    available) and the written artifact paths.
    """
    os.makedirs(out_dir, exist_ok=True)
    if dataset_dir is not None:
        samples, tracks, rig, truth_rows = load_dataset(dataset_dir, tracks_path)
        cfg = replace(cfg, rig=rig)
    else:
        data = make_synthetic(cfg, seed=seed)
        samples, tracks, truth_rows = data.samples, data.tracks, data.truth_rows
    if len(tracks) == 0:
        raise DataFormatError("run_experiment: track table has no frames")

    imu_w = None
    dcfg = None
    if use_dlam and weights_path is not None:
        store = dlam.WeightStore.load(weights_path)
        imu_w, _ = dlam.load_weights(store)
        dcfg = store.config

    t0 = tracks.frames[0].t
    fs0 = initial_state(cfg, truth_rows, t0)
    result = run_filter(samples, tracks, cfg.rig, cfg.filter, fs0,
                        imu_weights=imu_w, dlam_cfg=dcfg,
                        use_vision=use_vision)

    paths = {"estimates": os.path.join(out_dir, "estimates.csv")}
    write_estimates_csv(paths["estimates"], result.estimates)
    report = None
    if truth_rows:
        tol = round(0.5e9 / cfg.sim.imu_rate)
        errors = compute_errors(result.estimates, truth_rows, tol_ns=tol)
        paths["errors"] = os.path.join(out_dir, "errors.csv")
        write_errors_csv(paths["errors"], errors)
        report = compute_loss(errors)
        paths["loss"] = os.path.join(out_dir, "loss.yaml")
        write_loss_yaml(paths["loss"], report, extra={
            "frames_updated": result.frames_updated,
            "frames_skipped": result.frames_skipped,
            "dropped_observations": result.dropped_observations,
        })
    return {"result": result, "loss": report, "paths": paths, "config": cfg}
