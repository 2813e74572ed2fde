"""Estimation-error series and the weighted MSE loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import quat

LOSS_W_Q = 1000.0
LOSS_W_P = 600.0
LOSS_W_V = 100.0
TRANSIENT_SKIP = 50


@dataclass
class ErrorSeries:
    """Per-step attitude/position/velocity errors, truth minus estimate.

    Attitude error is the rotation vector of q_true (x) q_est^-1; the
    ``skipped`` counter reports estimate timestamps with no matching truth.
    """

    t_ns: np.ndarray
    r_e: np.ndarray
    p_e: np.ndarray
    v_e: np.ndarray
    skipped: int = 0

    def __len__(self) -> int:
        return self.t_ns.shape[0]


@dataclass
class LossReport:
    loss: float
    mse_q: float
    mse_p: float
    mse_v: float
    transient_skip: int
    n_samples: int

    def summary_row(self) -> str:
        return (f"loss={self.loss:.4f} mse_q={self.mse_q:.6e} "
                f"mse_p={self.mse_p:.6e} mse_v={self.mse_v:.6e} "
                f"(skip={self.transient_skip}, n={self.n_samples})")


def compute_errors(estimates, truth, tol_ns: int = 2_500_000) -> ErrorSeries:
    """Match (t, NavState) estimate and truth streams by timestamp.

    A pair matches when timestamps agree within ``tol_ns`` (default half an
    IMU period at 200 Hz); estimates with no matching truth are skipped and
    counted.
    """
    truth = list(truth)
    truth_t = np.array([t for t, _ in truth], dtype=np.int64)
    ts, r_e, p_e, v_e = [], [], [], []
    skipped = 0
    for t, est in estimates:
        i = int(np.searchsorted(truth_t, t))
        best, best_dt = None, None
        for j in (i - 1, i):
            if 0 <= j < truth_t.shape[0]:
                dt = abs(int(truth_t[j]) - int(t))
                if best_dt is None or dt < best_dt:
                    best, best_dt = j, dt
        if best is None or best_dt > tol_ns:
            skipped += 1
            continue
        x_true = truth[best][1]
        ts.append(t)
        r_e.append(quat.quat_diff(x_true.q, est.q))
        p_e.append(x_true.p - est.p)
        v_e.append(x_true.v - est.v)
    stack = lambda rows: np.array(rows).reshape(len(rows), 3)
    return ErrorSeries(np.array(ts, dtype=np.int64), stack(r_e), stack(p_e),
                       stack(v_e), skipped)


def compute_loss(errors: ErrorSeries, w_q: float = LOSS_W_Q,
                 w_p: float = LOSS_W_P, w_v: float = LOSS_W_V,
                 skip: int = TRANSIENT_SKIP) -> LossReport:
    """Weighted mean-square error over the post-transient samples."""
    n = len(errors) - skip
    if n <= 0:
        raise ValueError(f"compute_loss: series of {len(errors)} samples is "
                         f"not longer than the {skip}-sample transient")
    mse_q = float(np.mean(np.sum(errors.r_e[skip:] ** 2, axis=1)))
    mse_p = float(np.mean(np.sum(errors.p_e[skip:] ** 2, axis=1)))
    mse_v = float(np.mean(np.sum(errors.v_e[skip:] ** 2, axis=1)))
    return LossReport(w_q * mse_q + w_p * mse_p + w_v * mse_v,
                      mse_q, mse_p, mse_v, skip, n)
