"""Differentiable quaternion helpers (torch, float64, scalar-first)."""

from __future__ import annotations

import torch


def normalize(q: torch.Tensor) -> torch.Tensor:
    return q / torch.linalg.norm(q)


def compose(q1: torch.Tensor, q2: torch.Tensor) -> torch.Tensor:
    """Hamilton product q1 (x) q2."""
    w1, v1 = q1[0], q1[1:]
    w2, v2 = q2[0], q2[1:]
    w = w1 * w2 - torch.dot(v1, v2)
    v = w1 * v2 + w2 * v1 + torch.linalg.cross(v1, v2)
    return normalize(torch.cat([w.reshape(1), v]))


def inverse(q: torch.Tensor) -> torch.Tensor:
    return torch.cat([q[0:1], -q[1:]])


def from_rotvec(r: torch.Tensor) -> torch.Tensor:
    """Quaternion exp map with a Taylor branch near zero."""
    theta2 = torch.dot(r, r)
    theta = torch.sqrt(theta2 + 1e-300)
    small = theta < 1e-7
    k = torch.where(small, 0.5 - theta2 / 48.0, torch.sin(0.5 * theta) / theta)
    w = torch.cos(0.5 * theta).reshape(1)
    return normalize(torch.cat([w, k * r]))


def to_rotvec(q: torch.Tensor) -> torch.Tensor:
    """Principal-branch log map."""
    q = torch.where(q[0] < 0, -q, q)
    vn2 = torch.dot(q[1:], q[1:])
    vn = torch.sqrt(vn2 + 1e-300)
    theta = 2.0 * torch.atan2(vn, q[0])
    small = vn < 1e-7
    scale = torch.where(small, 2.0 / torch.clamp(q[0], min=0.5), theta / vn)
    return scale * q[1:]


def to_matrix(q: torch.Tensor) -> torch.Tensor:
    """Body-to-world rotation matrix of a unit quaternion."""
    w, v = q[0], q[1:]
    hat = skew(v)
    return ((w * w - torch.dot(v, v)) * torch.eye(3, dtype=q.dtype)
            + 2.0 * torch.outer(v, v) + 2.0 * w * hat)


def skew(v: torch.Tensor) -> torch.Tensor:
    z = torch.zeros((), dtype=v.dtype)
    return torch.stack([
        torch.stack([z, -v[2], v[1]]),
        torch.stack([v[2], z, -v[0]]),
        torch.stack([-v[1], v[0], z]),
    ])


def boxplus(q: torch.Tensor, r: torch.Tensor) -> torch.Tensor:
    """World-side increment: exp(r) (x) q, matching the filter convention."""
    return compose(from_rotvec(r), q)


def diff(q1: torch.Tensor, q2: torch.Tensor) -> torch.Tensor:
    """Rotation vector of q1 (x) q2^-1; the attitude estimation error."""
    return to_rotvec(compose(q1, inverse(q2)))
