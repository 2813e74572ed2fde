"""Differentiable error-state EKF used as the training-time filter.

Same strapdown transition and landmark measurement model as the deployed
sigma-point filter, but with first-order Jacobians, so the whole
predict/update recursion is a smooth torch graph and loss gradients reach
the noise-scaling networks through the Kalman gains.

Error state (15): [attitude(3, world-side rotation vector), position,
velocity, gyro bias, accel bias].  Everything is float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from . import rotations as rot

GRAVITY = torch.tensor([0.0, 0.0, -9.81], dtype=torch.float64)


@dataclass
class EkfState:
    """Mean (16 numbers, quaternion first) and 15x15 error covariance."""

    q: torch.Tensor
    p: torch.Tensor
    v: torch.Tensor
    b_w: torch.Tensor
    b_a: torch.Tensor
    P: torch.Tensor

    @classmethod
    def from_numpy(cls, x16, P) -> "EkfState":
        t = lambda a: torch.as_tensor(a, dtype=torch.float64)
        return cls(rot.normalize(t(x16[0:4])), t(x16[4:7]), t(x16[7:10]),
                   t(x16[10:13]), t(x16[13:16]), t(P))

    def detach(self) -> "EkfState":
        return EkfState(self.q.detach(), self.p.detach(), self.v.detach(),
                        self.b_w.detach(), self.b_a.detach(), self.P.detach())

    def mean_vector(self) -> torch.Tensor:
        return torch.cat([self.q, self.p, self.v, self.b_w, self.b_a])


def process_covariances(sigma: torch.Tensor):
    """(C_eta_x 6x6, bias-walk diagonal 6) from a 13-sigma vector."""
    C_eta_x = torch.diag(torch.cat([sigma[0:3] ** 2, sigma[3:6] ** 2]))
    walk = torch.cat([sigma[6:9] ** 2, sigma[9:12] ** 2])
    return C_eta_x, walk


def predict(s: EkfState, w_m: torch.Tensor, a_m: torch.Tensor, dT: float,
            sigma: torch.Tensor, g: torch.Tensor = GRAVITY) -> EkfState:
    """One IMU step: closed-form mean, first-order covariance."""
    w = w_m - s.b_w
    a = a_m - s.b_a
    R = rot.to_matrix(s.q)
    q_new = rot.compose(s.q, rot.from_rotvec(w * dT))
    R_new = rot.to_matrix(q_new)
    acc = g + R @ a
    v_new = s.v + acc * dT
    p_new = s.p + s.v * dT + 0.5 * acc * dT * dT

    I3 = torch.eye(3, dtype=torch.float64)
    Z3 = torch.zeros((3, 3), dtype=torch.float64)
    Ra_hat = rot.skew(R @ a)
    F = torch.cat([
        torch.cat([I3, Z3, Z3, -R_new * dT, Z3], dim=1),
        torch.cat([-0.5 * dT * dT * Ra_hat, I3, dT * I3, Z3,
                   -0.5 * dT * dT * R], dim=1),
        torch.cat([-dT * Ra_hat, Z3, I3, Z3, -dT * R], dim=1),
        torch.cat([Z3, Z3, Z3, I3, Z3], dim=1),
        torch.cat([Z3, Z3, Z3, Z3, I3], dim=1),
    ], dim=0)
    G = torch.cat([
        torch.cat([-R_new * dT, Z3], dim=1),
        torch.cat([Z3, -0.5 * dT * dT * R], dim=1),
        torch.cat([Z3, -dT * R], dim=1),
        torch.cat([Z3, Z3], dim=1),
        torch.cat([Z3, Z3], dim=1),
    ], dim=0)
    C_eta_x, walk = process_covariances(sigma)
    P = F @ s.P @ F.T + G @ C_eta_x @ G.T
    P = P + torch.diag(torch.cat([torch.zeros(9, dtype=torch.float64), walk]))
    P = 0.5 * (P + P.T)
    return EkfState(q_new, p_new, v_new, s.b_w, s.b_a, P)


def measurement_jacobian(s: EkfState, l_w: torch.Tensor):
    """Stacked prediction and Jacobian for landmarks (m, 3)."""
    R_T = rot.to_matrix(s.q).T
    rel = l_w - s.p                        # (m, 3)
    z_hat = rel @ R_T.T                    # R^T (l - p) rows
    m = l_w.shape[0]
    blocks = []
    for i in range(m):
        H_theta = R_T @ rot.skew(rel[i])
        H_p = -R_T
        zeros = torch.zeros((3, 9), dtype=torch.float64)
        blocks.append(torch.cat([H_theta, H_p, zeros], dim=1))
    return z_hat.reshape(-1), torch.cat(blocks, dim=0)


def update(s: EkfState, z: torch.Tensor, l_w: torch.Tensor,
           c_l: torch.Tensor) -> EkfState:
    """Vision correction with Joseph-form covariance update."""
    z_hat, H = measurement_jacobian(s, l_w)
    d_z = z.shape[0]
    R_meas = (c_l * c_l) * torch.eye(d_z, dtype=torch.float64)
    S = H @ s.P @ H.T + R_meas
    K = torch.linalg.solve(S, H @ s.P).T
    dx = K @ (z - z_hat)
    I = torch.eye(15, dtype=torch.float64)
    A = I - K @ H
    P = A @ s.P @ A.T + K @ R_meas @ K.T
    return EkfState(rot.boxplus(s.q, dx[0:3]), s.p + dx[3:6], s.v + dx[6:9],
                    s.b_w + dx[9:12], s.b_a + dx[12:15], 0.5 * (P + P.T))


def frame_step(s: EkfState, frame, registry: dict, sigma: torch.Tensor,
               dt_ns: int, end_t: int | None = None,
               use_vision: bool = True) -> EkfState:
    """Aggregate predict over a frame's IMU batch, then one vision update.

    ``registry`` maps feature id -> world coordinate tensor; first-seen
    features are anchored with the current estimate (detached: the map is
    treated as given, not differentiated through) and skipped this frame.
    """
    n = frame.imu.shape[0]
    for j in range(n):
        t_next = int(frame.imu_t[j + 1]) if j + 1 < n else int(end_t or frame.t)
        dT = (t_next - int(frame.imu_t[j])) * 1e-9
        w_m = torch.as_tensor(frame.imu[j, 0:3], dtype=torch.float64)
        a_m = torch.as_tensor(frame.imu[j, 3:6], dtype=torch.float64)
        s = predict(s, w_m, a_m, dT, sigma)
    if not use_vision or frame.obs_ids.shape[0] == 0:
        return s
    matched_ids, matched_body = [], []
    R_est = rot.to_matrix(s.q).detach()
    for lid, l_b in zip(frame.obs_ids, frame.obs_body):
        l_b_t = torch.as_tensor(l_b, dtype=torch.float64)
        if int(lid) in registry:
            matched_ids.append(int(lid))
            matched_body.append(l_b_t)
        else:
            registry[int(lid)] = (R_est @ l_b_t + s.p.detach())
    if not matched_ids:
        return s
    l_w = torch.stack([registry[i] for i in matched_ids])
    z = torch.cat(matched_body)
    return update(s, z, l_w, sigma[12])
