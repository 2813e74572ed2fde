"""Singularity-free orientation algebra on SO(3) and the unit quaternion group.

Conventions used throughout the toolkit:

* Quaternions are scalar-first ``[w, x, y, z]`` numpy arrays of shape
  ``(..., 4)`` and unit norm.  After every constructing operation the
  canonical sign ``w >= 0`` is enforced so that the double cover never
  leaks into equality tests.
* Rotation vectors are ``theta * axis`` arrays of shape ``(..., 3)`` in
  radians; log maps return the principal branch ``|theta| <= pi``.
* Rotation matrices are ``(3, 3)`` members of SO(3) mapping body frame
  vectors into the world frame when built from a body-to-world quaternion.

Most functions broadcast over leading axes, which is what the filter uses
to push whole sigma-point sets through the algebra in one call.
"""

from __future__ import annotations

import numpy as np

# Below this rotation angle the exp/log maps switch to 2nd-order Taylor
# expansions of the sin/cos ratios to avoid catastrophic cancellation.
SMALL_ANGLE = 1e-7

QUAT_IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def so3_hat(m) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector, i.e. hat(m) @ n == cross(m, n)."""
    m = np.asarray(m, dtype=float)
    return np.array([
        [0.0, -m[2], m[1]],
        [m[2], 0.0, -m[0]],
        [-m[1], m[0], 0.0],
    ])


def so3_vee(M, tol: float = 1e-9) -> np.ndarray:
    """Inverse of :func:`so3_hat`.  Rejects matrices that are not antisymmetric."""
    M = np.asarray(M, dtype=float)
    if np.linalg.norm(M + M.T) >= tol:
        raise ValueError("so3_vee: input is not antisymmetric within tolerance")
    return np.array([M[2, 1], M[0, 2], M[1, 0]])


def antisym_project(M) -> np.ndarray:
    """Antisymmetric part (M - M^T) / 2 of a square matrix."""
    M = np.asarray(M, dtype=float)
    return 0.5 * (M - M.T)


def quat_normalize(q) -> np.ndarray:
    """Normalize to unit length and enforce the canonical sign.

    Canonical sign means ``w >= 0``; the tie ``w == 0`` is resolved by
    making the first nonzero component positive, so a quaternion and its
    negative always map to the same representative.
    """
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-15):
        raise ValueError("quat_normalize: zero-norm quaternion")
    q = q / n
    if q.ndim == 1:
        return q if _canonical_scalar_sign(q) >= 0 else -q
    sign = np.where(q[..., 0:1] != 0.0, np.sign(q[..., 0:1]), 0.0)
    # w == 0 rows: first nonzero component decides
    for i in range(1, 4):
        sign = np.where(sign == 0.0, np.where(q[..., i : i + 1] != 0.0,
                                              np.sign(q[..., i : i + 1]), 0.0), sign)
    sign = np.where(sign == 0.0, 1.0, sign)
    return q * sign


def _canonical_scalar_sign(q) -> float:
    for c in q:
        if c != 0.0:
            return 1.0 if c > 0.0 else -1.0
    return 1.0


def quat_compose(q1, q2) -> np.ndarray:
    """Quaternion product q1 (x) q2; composes the rotations R(q1) @ R(q2)."""
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    w1, v1 = q1[..., 0], q1[..., 1:]
    w2, v2 = q2[..., 0], q2[..., 1:]
    w = w1 * w2 - np.sum(v1 * v2, axis=-1)
    v = (w1[..., None] * v2 + w2[..., None] * v1 + np.cross(v1, v2))
    return quat_normalize(np.concatenate([w[..., None], v], axis=-1))


def quat_inverse(q) -> np.ndarray:
    """Inverse of a unit quaternion: negate the vector part."""
    q = np.asarray(q, dtype=float)
    out = q.copy()
    out[..., 1:] *= -1.0
    return quat_normalize(out)


def quat_to_rotmat(q) -> np.ndarray:
    """Rotation matrix of a unit quaternion.

    Evaluates ``(w^2 - |v|^2) I + 2 v v^T + 2 w hat(v)``.  Batched inputs
    of shape ``(..., 4)`` return ``(..., 3, 3)`` matrices.
    """
    q = np.asarray(q, dtype=float)
    w, v = q[..., 0], q[..., 1:]
    vv = 2.0 * v[..., :, None] * v[..., None, :]
    eye = np.broadcast_to(np.eye(3), vv.shape)
    s = (w**2 - np.sum(v * v, axis=-1))[..., None, None]
    hat = np.zeros(vv.shape)
    hat[..., 0, 1] = -v[..., 2]
    hat[..., 0, 2] = v[..., 1]
    hat[..., 1, 0] = v[..., 2]
    hat[..., 1, 2] = -v[..., 0]
    hat[..., 2, 0] = -v[..., 1]
    hat[..., 2, 1] = v[..., 0]
    return s * eye + vv + 2.0 * w[..., None, None] * hat


def rotmat_to_quat(R) -> np.ndarray:
    """Unit quaternion of a rotation matrix, canonical sign.

    The naive conversion divides by 4w and blows up near w = 0, so the
    conversion branches on the largest of trace, R11, R22, R33 (Shepperd's
    method); every branch is algebraically identical where both apply.
    """
    R = np.asarray(R, dtype=float)
    t = np.trace(R)
    if t >= max(R[0, 0], R[1, 1], R[2, 2]):
        s = np.sqrt(1.0 + t) * 2.0
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array([(R[2, 1] - R[1, 2]) / s,
                      0.25 * s,
                      (R[0, 1] + R[1, 0]) / s,
                      (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] >= R[2, 2]:
        s = np.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2]) * 2.0
        q = np.array([(R[0, 2] - R[2, 0]) / s,
                      (R[0, 1] + R[1, 0]) / s,
                      0.25 * s,
                      (R[1, 2] + R[2, 1]) / s])
    else:
        s = np.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2]) * 2.0
        q = np.array([(R[1, 0] - R[0, 1]) / s,
                      (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s,
                      0.25 * s])
    return quat_normalize(q)


def rotmat_to_axis_angle(R):
    """Angle-axis (theta, u) of a rotation matrix, theta in [0, pi].

    theta = 0 returns the conventional axis [1, 0, 0].  At theta = pi the
    textbook formula vee(Pa(R)) / sin(theta) is 0/0; the axis is recovered
    from the diagonal of (R + I) / 2 with signs fixed by the largest
    off-diagonal element.
    """
    R = np.asarray(R, dtype=float)
    c = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    theta = float(np.arccos(c))
    if theta < SMALL_ANGLE:
        return 0.0, np.array([1.0, 0.0, 0.0])
    if np.pi - theta < 1e-6:
        # R = I + 2 hat(u)^2  =>  (R + I)/2 has diagonal u_i^2
        B = 0.5 * (R + np.eye(3))
        u = np.sqrt(np.clip(np.diag(B), 0.0, None))
        k = int(np.argmax(u))
        # off-diagonal entries B_ij = u_i u_j fix the relative signs
        for i in range(3):
            if i != k and B[k, i] < 0.0:
                u[i] = -u[i]
        u = u / np.linalg.norm(u)
        return theta, u
    u = so3_vee(antisym_project(R), tol=np.inf) / np.sin(theta)
    return theta, u / np.linalg.norm(u)


def rotvec_to_rotmat(r) -> np.ndarray:
    """Matrix exponential of hat(r), via the Rodrigues closed form."""
    r = np.asarray(r, dtype=float)
    theta = np.linalg.norm(r)
    K = so3_hat(r)
    if theta < SMALL_ANGLE:
        # exp(K) ~ I + K + K^2/2 for tiny angles
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * K + b * (K @ K)


def rotvec_to_quat(r) -> np.ndarray:
    """Quaternion exp map: [cos(|r|/2), sin(|r|/2) r/|r|], Taylor near zero."""
    r = np.asarray(r, dtype=float)
    theta = np.linalg.norm(r, axis=-1, keepdims=True)
    half = 0.5 * theta
    # sin(t/2)/t -> 1/2 - t^2/48 as t -> 0
    k = np.where(theta < SMALL_ANGLE, 0.5 - theta**2 / 48.0,
                 np.sin(half) / np.where(theta < SMALL_ANGLE, 1.0, theta))
    w = np.cos(half)
    return quat_normalize(np.concatenate([w, k * r], axis=-1))


def quat_to_rotvec(q) -> np.ndarray:
    """Quaternion log map to the principal branch, |result| <= pi."""
    q = quat_normalize(q)
    w = np.clip(q[..., 0:1], -1.0, 1.0)
    v = q[..., 1:]
    vn = np.linalg.norm(v, axis=-1, keepdims=True)
    theta = 2.0 * np.arctan2(vn, w)
    # r = theta * v/|v|; near zero use theta/|v| -> 2/w limit
    scale = np.where(vn < SMALL_ANGLE, 2.0 / np.maximum(w, 0.5),
                     theta / np.where(vn < SMALL_ANGLE, 1.0, vn))
    return scale * v


def boxplus(q, r) -> np.ndarray:
    """Manifold increment: q [+] r = q_r(r) (x) q."""
    return quat_compose(rotvec_to_quat(r), q)


def boxminus_vec(q, r) -> np.ndarray:
    """Manifold decrement by a rotation vector: q [-] r = q_r(r)^-1 (x) q."""
    return quat_compose(quat_inverse(rotvec_to_quat(r)), q)


def quat_diff(q1, q2) -> np.ndarray:
    """Rotation-vector difference r_q(q1 (x) q2^-1); boxplus(q2, result) == q1."""
    return quat_to_rotvec(quat_compose(q1, quat_inverse(q2)))


def quat_rotate(q, x) -> np.ndarray:
    """Rotate 3-vectors by unit quaternions: R_q(q) @ x, broadcasting."""
    q = np.asarray(q, dtype=float)
    x = np.asarray(x, dtype=float)
    w, v = q[..., 0:1], q[..., 1:]
    # (w^2 - |v|^2) x + 2 v (v.x) + 2 w (v cross x)
    return ((w**2 - np.sum(v * v, axis=-1, keepdims=True)) * x
            + 2.0 * v * np.sum(v * x, axis=-1, keepdims=True)
            + 2.0 * w * np.cross(v, x))


def quat_weighted_mean(quats, weights) -> np.ndarray:
    """Weighted quaternion mean via the dominant eigenvector of sum w q q^T.

    Returns the eigenvector of the 4x4 accumulator matrix whose eigenvalue
    has the largest magnitude (ties broken by lowest index), normalized and
    canonical-signed.  Raises on empty input or eigensolver failure.
    """
    Q = np.atleast_2d(np.asarray(quats, dtype=float))
    w = np.asarray(weights, dtype=float)
    if Q.shape[0] == 0:
        raise ValueError("quat_weighted_mean: empty quaternion set")
    if Q.shape[0] != w.shape[0]:
        raise ValueError("quat_weighted_mean: weight count mismatch")
    E = np.einsum("i,ij,ik->jk", w, Q, Q)
    try:
        vals, vecs = np.linalg.eigh(E)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - eigh on 4x4 is robust
        raise ValueError("quat_weighted_mean: eigendecomposition failed") from exc
    idx = int(np.argmax(np.abs(vals)))
    return quat_normalize(vecs[:, idx])
