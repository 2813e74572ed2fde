"""Weight-store emission in the toolkit's portable binary format.

Layout (all little-endian): magic "VINW", u32 version, u32 d_h, u32 d_gru,
f32 upsilon, u32 img_w, u32 img_h, u32 tensor count, then per tensor
(sorted by name): u16 name length, utf-8 name, u8 ndim, u32 dims,
float32 payload in C order.

Torch's GRU packs gates in (reset, update, candidate) order inside one
(3*d_h, d_in) matrix; the store wants separate W_z/W_r/W_n tensors, so the
mapping below slices and relabels.
"""

from __future__ import annotations

import struct

import numpy as np
import torch

from .networks import ImuNet, VisionNet

STORE_MAGIC = b"VINW"
STORE_VERSION = 1


def _gru_tensors(gru: torch.nn.GRU, d_h: int) -> dict[str, np.ndarray]:
    out = {}
    for layer, lname in ((0, "l1"), (1, "l2")):
        for suffix, dname in (("", "fwd"), ("_reverse", "bwd")):
            w_ih = getattr(gru, f"weight_ih_l{layer}{suffix}").detach().numpy()
            w_hh = getattr(gru, f"weight_hh_l{layer}{suffix}").detach().numpy()
            b_ih = getattr(gru, f"bias_ih_l{layer}{suffix}").detach().numpy()
            b_hh = getattr(gru, f"bias_hh_l{layer}{suffix}").detach().numpy()
            r, z, n = slice(0, d_h), slice(d_h, 2 * d_h), slice(2 * d_h, 3 * d_h)
            prefix = f"imu.{lname}.{dname}"
            out[f"{prefix}.W_r"] = w_ih[r]
            out[f"{prefix}.W_z"] = w_ih[z]
            out[f"{prefix}.W_n"] = w_ih[n]
            out[f"{prefix}.U_r"] = w_hh[r]
            out[f"{prefix}.U_z"] = w_hh[z]
            out[f"{prefix}.U_n"] = w_hh[n]
            out[f"{prefix}.b_r"] = b_ih[r]
            out[f"{prefix}.b_z"] = b_ih[z]
            out[f"{prefix}.b_n"] = b_ih[n]
            out[f"{prefix}.bh_r"] = b_hh[r]
            out[f"{prefix}.bh_z"] = b_hh[z]
            out[f"{prefix}.bh_n"] = b_hh[n]
    return out


def collect_tensors(imunet: ImuNet, visionnet: VisionNet) -> dict[str, np.ndarray]:
    tensors = _gru_tensors(imunet.gru, imunet.d_h)
    tensors["imu.head.W"] = imunet.head.weight.detach().numpy()
    tensors["imu.head.b"] = imunet.head.bias.detach().numpy()
    for eye, stack in (("left", visionnet.left), ("right", visionnet.right)):
        tensors[f"vision.conv1.{eye}.kernel"] = stack[0].weight.detach().numpy()
        tensors[f"vision.conv1.{eye}.bias"] = stack[0].bias.detach().numpy()
        tensors[f"vision.conv2.{eye}.kernel"] = stack[3].weight.detach().numpy()
        tensors[f"vision.conv2.{eye}.bias"] = stack[3].bias.detach().numpy()
    tensors["vision.fc1.W"] = visionnet.fc1.weight.detach().numpy()
    tensors["vision.fc1.b"] = visionnet.fc1.bias.detach().numpy()
    tensors["vision.fc2.W"] = visionnet.fc2.weight.detach().numpy()
    tensors["vision.fc2.b"] = visionnet.fc2.bias.detach().numpy()
    return tensors


def export_weights(imunet: ImuNet, visionnet: VisionNet, path,
                   upsilon: float = 1.0) -> bytes:
    """Serialize both networks; returns the bytes written."""
    tensors = collect_tensors(imunet, visionnet)
    for name, arr in tensors.items():
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"export_weights: non-finite values in '{name}'")
    blob = bytearray()
    blob += STORE_MAGIC
    blob += struct.pack("<I", STORE_VERSION)
    blob += struct.pack("<IIfII", imunet.d_h, imunet.d_gru, upsilon,
                        visionnet.img_w, visionnet.img_h)
    blob += struct.pack("<I", len(tensors))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        nb = name.encode("utf-8")
        blob += struct.pack("<H", len(nb))
        blob += nb
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes()
    data = bytes(blob)
    with open(path, "wb") as fh:
        fh.write(data)
    return data
