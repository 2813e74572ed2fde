"""Why inertial-only navigation needs help: dead-reckoning drift.

Simulates a gentle 20-second trajectory, corrupts the perfect IMU signal
with realistic bias and white noise, then integrates the measurements
open loop.  The position error grows without bound; this is the gap the
vision updates close in the next demo.
"""

import numpy as np

from vinkit.navmodel import propagate_state
from vinkit.sim import SimConfig, simulate_trajectory, synthesize_imu

cfg = SimConfig(duration=20.0, seed=11)
truth = simulate_trajectory(cfg)
rng = np.random.default_rng(cfg.seed)
samples, b_w, b_a = synthesize_imu(truth, cfg, rng)

print(f"trajectory: {cfg.duration:.0f} s at {cfg.imu_rate} Hz "
      f"({len(samples)} IMU samples)")
print(f"gyro bias starts at {cfg.init_gyro_bias} rad/s and random-walks\n")

# open-loop integration of the measured signal, biases assumed zero
x = truth.states[0].copy()
dT = cfg.imu_dt_ns * 1e-9
print(f"{'t [s]':>6} {'|p error| [m]':>14} {'|v error| [m/s]':>16}")
for k, u in enumerate(samples):
    x = propagate_state(x, u, np.zeros(6), dT, truth.g)
    if (k + 1) % (2 * cfg.imu_rate) == 0:
        x_true = truth.states[k + 1]
        print(f"{(k + 1) * dT:6.1f} {np.linalg.norm(x.p - x_true.p):14.3f} "
              f"{np.linalg.norm(x.v - x_true.v):16.3f}")

print("\nquadratic blow-up: uncorrected accelerometer bias integrates twice.")
print("A perfect-IMU reference (zero injected noise) would track exactly;")
print("rerun with cfg.true_sigma[:] = 0 and zero init biases to see it.")
