"""A tour of the orientation algebra the filter is built on.

Rotations wear three hats here: 3x3 matrices, unit quaternions (scalar
first), and rotation vectors (angle times axis).  This script walks
through the conversions, the manifold [+]/[-] operators that let a Kalman
filter treat attitude like a vector, and the quaternion weighted mean.
"""

import numpy as np

from vinkit import quat

np.set_printoptions(precision=5, suppress=True)

print("== three faces of one rotation ==")
r = np.array([0.0, 0.0, np.pi / 2])  # 90 degrees about z
R = quat.rotvec_to_rotmat(r)
q = quat.rotvec_to_quat(r)
print("rotation vector:", r)
print("matrix:\n", R)
print("quaternion:", q)
print("back to vector:", quat.quat_to_rotvec(q))

print("\n== composition matches matrix products ==")
q_yaw = quat.rotvec_to_quat([0, 0, 0.4])
q_roll = quat.rotvec_to_quat([0.3, 0, 0])
q_both = quat.quat_compose(q_yaw, q_roll)
print("|R(q_yaw)R(q_roll) - R(q_yaw*q_roll)| =",
      np.abs(quat.quat_to_rotmat(q_yaw) @ quat.quat_to_rotmat(q_roll)
             - quat.quat_to_rotmat(q_both)).max())

print("\n== boxplus / boxminus: attitude as a 3-vector increment ==")
q0 = quat.rotvec_to_quat([0.2, -0.1, 0.5])
delta = np.array([0.01, 0.02, -0.015])
q1 = quat.boxplus(q0, delta)
recovered = quat.quat_diff(q1, q0)
print("applied increment:  ", delta)
print("recovered by diff:  ", recovered)
print("round-trip error:   ", np.abs(recovered - delta).max())

print("\n== the exp/log maps meet at the pi boundary ==")
for angle in (3.0, 3.14, np.pi - 1e-9):
    rv = np.array([angle, 0, 0])
    back = quat.quat_to_rotvec(quat.rotvec_to_quat(rv))
    print(f"|r| = {angle:.6f} -> |round trip error| = "
          f"{np.abs(back - rv).max():.2e}")

print("\n== quaternion weighted mean ==")
# a cluster of noisy attitudes around q0: the mean should land near q0
rng = np.random.default_rng(0)
cluster = [quat.boxplus(q0, rng.normal(size=3) * 0.05) for _ in range(25)]
mean = quat.quat_weighted_mean(cluster, np.ones(25))
print("distance from cluster center:",
      np.linalg.norm(quat.quat_diff(mean, q0)), "rad")

# two attitudes symmetric about identity average to identity
pair_mean = quat.quat_weighted_mean(
    [quat.rotvec_to_quat([0.2, 0, 0]), quat.rotvec_to_quat([-0.2, 0, 0])],
    [0.5, 0.5])
print("symmetric pair mean:", pair_mean, "(identity expected)")
