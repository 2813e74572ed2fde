"""The training loop: filter forward, weighted-MSE loss, accumulated
clipped gradients, one optimizer step per epoch.

Each epoch replays the whole dataset once through the differentiable EKF.
The data is cut into mini-batches of consecutive camera frames; the filter
state carries across the boundary but the autograd graph is truncated
there, so one mini-batch's gradient reaches back one mini-batch.  Per
mini-batch the gradient is clipped to unit norm and accumulated; when the
epoch's mini-batches are done a single Adam step applies the sum (a
per-mini-batch stepping mode exists behind a flag for comparison).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .data import Dataset
from .ekf import EkfState, frame_step
from .networks import ImuNet, VisionNet, scale_sigma
from . import rotations as rot


def _default_nominal() -> np.ndarray:
    return np.array([2e-3, 2e-3, 2e-3, 2e-2, 2e-2, 2e-2,
                     1e-5, 1e-5, 1e-5, 1e-4, 1e-4, 1e-4, 0.2])


@dataclass
class TrainConfig:
    epochs: int = 30
    mini_batch: int = 32
    lr: float = 1e-3
    clip: float = 1.0
    l2: float = 1e-5
    w_q: float = 1000.0
    w_p: float = 600.0
    w_v: float = 100.0
    transient_skip: int = 50
    upsilon: float = 1.0
    nominal_sigma: np.ndarray = field(default_factory=_default_nominal)
    seed: int = 0
    per_minibatch_steps: bool = False
    init_att: float = 0.02
    init_pos: float = 0.05
    init_vel: float = 0.05
    init_gyro_bias: float = 0.01
    init_accel_bias: float = 0.05
    img_w: int = 752
    img_h: int = 480

    def __post_init__(self):
        self.nominal_sigma = np.asarray(self.nominal_sigma, dtype=float).reshape(13)
        if self.clip <= 0:
            raise ValueError("TrainConfig: clip bound must be positive")
        if self.epochs < 1:
            raise ValueError("TrainConfig: epochs must be >= 1")

    def p0(self) -> np.ndarray:
        d = np.concatenate([np.full(3, self.init_att), np.full(3, self.init_pos),
                            np.full(3, self.init_vel),
                            np.full(3, self.init_gyro_bias),
                            np.full(3, self.init_accel_bias)])
        return np.diag(d * d)


def initial_state(cfg: TrainConfig, dataset: Dataset) -> EkfState:
    x0 = dataset.frames[0].truth.copy()
    x0[10:16] = 0.0  # biases are the filter's to learn
    return EkfState.from_numpy(x0, cfg.p0())


def _frame_windows(frames, d_gru: int):
    """(indices, stacked windows) of frames with a full GRU history."""
    idx, wins = [], []
    for i, f in enumerate(frames):
        if f.imu.shape[0] >= d_gru:
            idx.append(i)
            wins.append(f.imu[-d_gru:])
    if not idx:
        return [], None
    return idx, torch.as_tensor(np.stack(wins), dtype=torch.float64)


def run_epoch(imunet: ImuNet, dataset: Dataset, cfg: TrainConfig,
              optimizer: torch.optim.Optimizer | None = None,
              params: list | None = None):
    """One pass over the dataset.

    With an optimizer, computes per-mini-batch clipped gradients, and either
    accumulates them for one step at epoch end (default) or steps per
    mini-batch.  Returns (mean mini-batch loss, gradient-norm list).
    """
    nominal = torch.as_tensor(cfg.nominal_sigma, dtype=torch.float64)
    state = initial_state(cfg, dataset)
    registry: dict = {}
    frames = dataset.frames
    mb_losses, grad_norms = [], []
    accum = None
    if optimizer is not None and params is None:
        params = [p for p in imunet.parameters()]
    k_global = 0
    for start in range(0, len(frames), cfg.mini_batch):
        mb = frames[start:start + cfg.mini_batch]
        state = state.detach()
        idx, windows = _frame_windows(mb, imunet.d_gru)
        gammas = imunet(windows) if windows is not None else None
        gamma_of = {i: gammas[j] for j, i in enumerate(idx)} if idx else {}
        terms_q, terms_p, terms_v = [], [], []
        for i, frame in enumerate(mb):
            if i in gamma_of:
                gamma = torch.cat([gamma_of[i],
                                   torch.zeros(1, dtype=torch.float64)])
                sigma = scale_sigma(gamma, nominal, cfg.upsilon)
            else:
                sigma = nominal
            state = frame_step(state, frame, registry, sigma, dataset.dt_ns)
            if k_global >= cfg.transient_skip:
                truth = torch.as_tensor(frame.truth, dtype=torch.float64)
                r_e = rot.diff(truth[0:4], state.q)
                terms_q.append(torch.dot(r_e, r_e))
                p_e = truth[4:7] - state.p
                terms_p.append(torch.dot(p_e, p_e))
                v_e = truth[7:10] - state.v
                terms_v.append(torch.dot(v_e, v_e))
            k_global += 1
        if not terms_q:
            continue
        n = float(len(terms_q))
        loss = (cfg.w_q * torch.stack(terms_q).sum() / n
                + cfg.w_p * torch.stack(terms_p).sum() / n
                + cfg.w_v * torch.stack(terms_v).sum() / n)
        mb_losses.append(float(loss.detach()))
        if optimizer is not None:
            grads = torch.autograd.grad(loss, params, allow_unused=True)
            grads = [torch.zeros_like(p) if g is None else g
                     for p, g in zip(params, grads)]
            norm = float(torch.sqrt(sum(torch.sum(g * g) for g in grads)))
            factor = min(1.0, cfg.clip / (norm + 1e-300))
            grads = [g * factor for g in grads]
            grad_norms.append(norm * factor)  # post-clip, <= cfg.clip
            if cfg.per_minibatch_steps:
                for p, g in zip(params, grads):
                    p.grad = g
                optimizer.step()
                optimizer.zero_grad(set_to_none=True)
            else:
                accum = grads if accum is None else [a + g for a, g in
                                                     zip(accum, grads)]
        state = state.detach()
    if optimizer is not None and not cfg.per_minibatch_steps and accum is not None:
        for p, g in zip(params, accum):
            p.grad = g
        optimizer.step()
        optimizer.zero_grad(set_to_none=True)
    mean_loss = float(np.mean(mb_losses)) if mb_losses else float("nan")
    if np.isnan(mean_loss):
        raise RuntimeError("run_epoch: loss is NaN (no post-transient frames "
                           "or filter blow-up)")
    return mean_loss, grad_norms


def train(cfg: TrainConfig, dataset: Dataset):
    """Full training: returns (imunet, visionnet, per-epoch loss history).

    The vision network ships at initialization when the dataset carries no
    raw images (its logit path is exercised with gamma = 0, exactly like
    the deployed pipeline on image-free data).
    """
    torch.manual_seed(cfg.seed)
    imunet = ImuNet()
    visionnet = VisionNet(cfg.img_w, cfg.img_h)
    optimizer = torch.optim.Adam(imunet.parameters(), lr=cfg.lr,
                                 weight_decay=cfg.l2)
    params = [p for p in imunet.parameters()]
    history = []
    for epoch in range(cfg.epochs):
        loss, _ = run_epoch(imunet, dataset, cfg, optimizer, params)
        history.append(loss)
        print(f"epoch {epoch + 1:3d}/{cfg.epochs}: loss {loss:.4f}")
        if not np.isfinite(loss):
            raise RuntimeError(f"train: loss diverged at epoch {epoch + 1}")
    return imunet, visionnet, history
