"""Learned noise adaptation: networks emit logits, the filter gets sigmas.

Two small networks watch the raw sensor data: a bidirectional GRU stack
reads the last ten IMU samples and emits twelve logits, a two-stage CNN
reads the stereo pair and emits one more.  Each logit gamma rescales its
nominal standard deviation by 10**(upsilon * tanh(gamma)), so the filter
never trusts or distrusts a sensor by more than one decade (at the
default upsilon = 1).
"""

import numpy as np

from vinkit import dlam
from vinkit.navmodel import NoiseSigma

np.set_printoptions(precision=4, suppress=True)

print("== the scaling law ==")
nominal = NoiseSigma(np.full(13, 0.1))
for g in (-20.0, -1.0, 0.0, 1.0, 20.0):
    scaled = dlam.scale_sigma(np.full(13, g), nominal, upsilon=1.0)
    print(f"gamma = {g:6.1f} -> sigma/nominal = {scaled.c[0] / 0.1:8.4f}")
print("gamma = 0 reproduces the nominal filter exactly; saturation caps a decade.")

print("\n== IMU network forward pass ==")
rng = np.random.default_rng(5)
imu_w, vis_w = dlam.random_weights(rng)
print(f"parameters: {dlam.param_count(imu_w):,} "
      f"(two stacked bidirectional GRU layers, hidden size 32, dense head)")
window = rng.normal(size=(10, 6)) * [0.01, 0.01, 0.01, 1, 1, 9.81]
gamma_imu = dlam.imunet_forward(window, imu_w)
print("window of 10 IMU samples -> 12 logits:", gamma_imu[:4], "...")

print("\n== vision network forward pass ==")
small = dlam.DlamConfig(img_w=94, img_h=60)  # desk-size images for the demo
_, vis_small = dlam.random_weights(rng, small)
img_l = rng.uniform(0, 1, (small.img_h, small.img_w))
img_r = np.clip(img_l + rng.normal(0, 0.05, img_l.shape), 0, 1)
gamma_13 = dlam.visionnet_forward(img_l, img_r, vis_small, small)
print(f"stereo pair {small.img_w}x{small.img_h} -> logit {gamma_13:+.4f}")
full_count = dlam.param_count(dlam.zero_weights()[1])
print(f"full-resolution (752x480) vision network would hold {full_count:,} "
      f"parameters")

print("\n== portable weight store ==")
store = dlam.WeightStore.from_weights(imu_w, vis_w)
blob = store.to_bytes()
imu_back, _ = dlam.load_weights(dlam.WeightStore.from_bytes(blob))
drift = np.abs(dlam.imunet_forward(window, imu_back) - gamma_imu).max()
print(f"serialized {len(store.tensors)} tensors into {len(blob):,} bytes; "
      f"reload changes the forward pass by {drift:.1e} (float32 quantization)")

print("\n== covariances the filter consumes ==")
scaled = dlam.scale_sigma(np.concatenate([gamma_imu, [gamma_13]]),
                          NoiseSigma(np.full(13, 0.05)), upsilon=1.0)
C_gyro, C_acc, C_gw, C_aw, C_l = dlam.covariances_from_gamma(scaled, d_z=6)
print("gyro covariance diagonal:", np.diag(C_gyro))
print("landmark covariance is", C_l.shape, "with", C_l[0, 0], "on the diagonal")
