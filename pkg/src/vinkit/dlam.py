"""Learned noise adaptation: network forward passes and the weight store.

Two small networks rescale the filter's noise standard deviations online.
A two-layer bidirectional GRU digests the last ten IMU samples into twelve
scaling logits (gyro, accel and both bias-walk sigmas); a two-stage CNN
digests the stereo pair into a single logit for the landmark sigma.  Each
logit gamma maps a nominal sigma multiplicatively through

    c = c_nominal * 10 ** (upsilon * tanh(gamma))

so the adapted value stays inside [c/10^upsilon, c*10^upsilon] and gamma = 0
reproduces the nominal filter exactly.

Inference here is plain numpy (float64); training happens elsewhere and
ships weights through the binary store defined at the bottom of this
module.  The GRU uses separate input-side and hidden-side biases per gate
(the convention that reproduces the canonical 27,276 parameter count).
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import DataFormatError
from .navmodel import NoiseSigma

CONV_PADDING = 2
POOL_SIZE = 4
GAMMA_DIM = 13

GRU_FIELDS = ("W_z", "W_r", "W_n", "U_z", "U_r", "U_n",
              "b_z", "b_r", "b_n", "bh_z", "bh_r", "bh_n")


@dataclass
class DlamConfig:
    """Architecture hyperparameters carried in the weight-store header."""

    d_h: int = 32
    d_gru: int = 10
    upsilon: float = 1.0
    img_w: int = 752
    img_h: int = 480


@dataclass
class GruDirection:
    """One direction of a GRU layer; matrices are (d_h, d_in)/(d_h, d_h)."""

    W_z: np.ndarray
    W_r: np.ndarray
    W_n: np.ndarray
    U_z: np.ndarray
    U_r: np.ndarray
    U_n: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_n: np.ndarray
    bh_z: np.ndarray
    bh_r: np.ndarray
    bh_n: np.ndarray


@dataclass
class GruLayerWeights:
    fwd: GruDirection
    bwd: GruDirection


@dataclass
class ImuNetWeights:
    layer1: GruLayerWeights  # d_in = 6
    layer2: GruLayerWeights  # d_in = 2 * d_h
    head_W: np.ndarray       # (12, 2 * d_h)
    head_b: np.ndarray       # (12,)


@dataclass
class ConvStack:
    conv1_kernel: np.ndarray  # (16, 1, 5, 5)
    conv1_bias: np.ndarray
    conv2_kernel: np.ndarray  # (32, 16, 5, 5)
    conv2_bias: np.ndarray


@dataclass
class VisionNetWeights:
    left: ConvStack
    right: ConvStack
    fc1_W: np.ndarray  # (32, flat_dim)
    fc1_b: np.ndarray
    fc2_W: np.ndarray  # (1, 32)
    fc2_b: np.ndarray


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def gru_cell(alpha, h_prev, d: GruDirection) -> np.ndarray:
    """One GRU step with dual biases.

    z and r gate through sigmoids, the candidate n gates the recurrent term
    by r before the tanh, and the new hidden state blends h_prev with n.
    """
    alpha = np.asarray(alpha, dtype=float)
    h_prev = np.asarray(h_prev, dtype=float)
    z = _sigmoid(d.W_z @ alpha + d.U_z @ h_prev + d.b_z + d.bh_z)
    r = _sigmoid(d.W_r @ alpha + d.U_r @ h_prev + d.b_r + d.bh_r)
    n = np.tanh(d.W_n @ alpha + d.b_n + r * (d.U_n @ h_prev + d.bh_n))
    return z * h_prev + (1.0 - z) * n


def bigru_layer(seq, layer: GruLayerWeights) -> np.ndarray:
    """Bidirectional GRU pass over (T, d_in); returns (T, 2 * d_h).

    The forward direction scans left to right, the backward direction right
    to left, both from zero hidden states; outputs are concatenated per
    step as [forward, backward].
    """
    seq = np.asarray(seq, dtype=float)
    T = seq.shape[0]
    d_h = layer.fwd.b_z.shape[0]
    fwd = np.zeros((T, d_h))
    bwd = np.zeros((T, d_h))
    h = np.zeros(d_h)
    for t in range(T):
        h = gru_cell(seq[t], h, layer.fwd)
        fwd[t] = h
    h = np.zeros(d_h)
    for t in range(T - 1, -1, -1):
        h = gru_cell(seq[t], h, layer.bwd)
        bwd[t] = h
    return np.concatenate([fwd, bwd], axis=1)


def imunet_forward(u_window, w: ImuNetWeights, cfg: DlamConfig | None = None) -> np.ndarray:
    """Twelve IMU-noise scaling logits from the last d_gru IMU samples.

    The stacked bidirectional layers feed the dense head with the final
    timestep's concatenated hidden vector (after a ReLU).
    """
    cfg = cfg or DlamConfig()
    u_window = np.asarray(u_window, dtype=float)
    if u_window.shape != (cfg.d_gru, 6):
        raise ValueError(f"imunet_forward: expected window ({cfg.d_gru}, 6), "
                         f"got {u_window.shape}")
    h1 = bigru_layer(u_window, w.layer1)
    h2 = bigru_layer(h1, w.layer2)
    feat = np.maximum(h2[-1], 0.0)
    return w.head_W @ feat + w.head_b


def conv2d_forward(img, kernels, bias, padding: int = CONV_PADDING) -> np.ndarray:
    """Stride-1 cross-correlation on a (C, H, W) map with zero padding."""
    img = np.asarray(img, dtype=float)
    kernels = np.asarray(kernels, dtype=float)
    bias = np.asarray(bias, dtype=float)
    kh, kw = kernels.shape[2], kernels.shape[3]
    padded = np.pad(img, ((0, 0), (padding, padding), (padding, padding)))
    out_h = padded.shape[1] - kh + 1
    out_w = padded.shape[2] - kw + 1
    if out_h < 1 or out_w < 1:
        raise ValueError("conv2d_forward: kernel larger than padded input")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(1, 2))
    return np.einsum("chwij,fcij->fhw", windows, kernels) + bias[:, None, None]


def maxpool2d(m, size: int = POOL_SIZE) -> np.ndarray:
    """Non-overlapping max pooling; ragged edges are floor-truncated."""
    m = np.asarray(m, dtype=float)
    C, H, W = m.shape
    Hp, Wp = H // size, W // size
    if Hp < 1 or Wp < 1:
        raise ValueError("maxpool2d: input smaller than one pooling window")
    return m[:, :Hp * size, :Wp * size].reshape(C, Hp, size, Wp, size).max(axis=(2, 4))


def vision_feature_shape(cfg: DlamConfig) -> tuple[int, int, int]:
    """(C, H, W) of one eye's feature map right before flattening."""
    h, w = cfg.img_h, cfg.img_w
    h, w = (h + 2 * CONV_PADDING - 4), (w + 2 * CONV_PADDING - 4)  # conv1, 5x5
    h, w = h // POOL_SIZE, w // POOL_SIZE
    h, w = (h + 2 * CONV_PADDING - 4), (w + 2 * CONV_PADDING - 4)  # conv2, 5x5
    h, w = h // POOL_SIZE, w // POOL_SIZE
    return 32, h, w


def vision_flat_dim(cfg: DlamConfig) -> int:
    c, h, w = vision_feature_shape(cfg)
    return 2 * c * h * w


def _eye_features(img, stack: ConvStack) -> np.ndarray:
    x = np.maximum(conv2d_forward(img, stack.conv1_kernel, stack.conv1_bias), 0.0)
    x = maxpool2d(x)
    x = np.maximum(conv2d_forward(x, stack.conv2_kernel, stack.conv2_bias), 0.0)
    x = maxpool2d(x)
    return x.reshape(-1)  # channel-major (C, H, W) order


def visionnet_forward(img_l, img_r, w: VisionNetWeights,
                      cfg: DlamConfig | None = None) -> float:
    """Landmark-noise scaling logit from a normalized grayscale stereo pair."""
    cfg = cfg or DlamConfig()
    img_l = np.asarray(img_l, dtype=float)
    img_r = np.asarray(img_r, dtype=float)
    expected = (cfg.img_h, cfg.img_w)
    for name, img in (("left", img_l), ("right", img_r)):
        if img.shape != expected:
            raise ValueError(f"visionnet_forward: {name} image is {img.shape}, "
                             f"configured resolution is {expected}")
    feat = np.concatenate([_eye_features(img_l[None], w.left),
                           _eye_features(img_r[None], w.right)])
    hidden = np.maximum(w.fc1_W @ feat + w.fc1_b, 0.0)
    return float((w.fc2_W @ hidden + w.fc2_b)[0])


def scale_sigma(gamma, nominal: NoiseSigma, upsilon: float) -> NoiseSigma:
    """Rescale nominal sigmas by 10^(upsilon * tanh(gamma)), elementwise."""
    if upsilon <= 0.0:
        raise ValueError("scale_sigma: upsilon must be positive")
    gamma = np.asarray(gamma, dtype=float).reshape(GAMMA_DIM)
    return NoiseSigma(nominal.c * 10.0 ** (upsilon * np.tanh(gamma)))


def covariances_from_gamma(sigma: NoiseSigma, d_z: int):
    """The five diagonal covariance blocks the filter consumes.

    Returns (C_gyro, C_accel, C_gyro_walk, C_accel_walk, C_landmark); the
    landmark block is None when no vision measurement is present (d_z = 0).
    """
    c = sigma.c
    C_l = None if d_z == 0 else (c[12] ** 2) * np.eye(d_z)
    return (np.diag(c[0:3] ** 2), np.diag(c[3:6] ** 2),
            np.diag(c[6:9] ** 2), np.diag(c[9:12] ** 2), C_l)


# ---------------------------------------------------------------------------
# Weight construction helpers

def _gru_direction_shapes(d_h: int, d_in: int) -> dict[str, tuple]:
    shapes = {}
    for g in ("z", "r", "n"):
        shapes[f"W_{g}"] = (d_h, d_in)
        shapes[f"U_{g}"] = (d_h, d_h)
        shapes[f"b_{g}"] = (d_h,)
        shapes[f"bh_{g}"] = (d_h,)
    return shapes


def _imunet_shapes(cfg: DlamConfig) -> dict[str, tuple]:
    shapes = {}
    for lname, d_in in (("l1", 6), ("l2", 2 * cfg.d_h)):
        for dname in ("fwd", "bwd"):
            for f, s in _gru_direction_shapes(cfg.d_h, d_in).items():
                shapes[f"imu.{lname}.{dname}.{f}"] = s
    shapes["imu.head.W"] = (12, 2 * cfg.d_h)
    shapes["imu.head.b"] = (12,)
    return shapes


def _visionnet_shapes(cfg: DlamConfig) -> dict[str, tuple]:
    shapes = {}
    for eye in ("left", "right"):
        shapes[f"vision.conv1.{eye}.kernel"] = (16, 1, 5, 5)
        shapes[f"vision.conv1.{eye}.bias"] = (16,)
        shapes[f"vision.conv2.{eye}.kernel"] = (32, 16, 5, 5)
        shapes[f"vision.conv2.{eye}.bias"] = (32,)
    shapes["vision.fc1.W"] = (32, vision_flat_dim(cfg))
    shapes["vision.fc1.b"] = (32,)
    shapes["vision.fc2.W"] = (1, 32)
    shapes["vision.fc2.b"] = (1,)
    return shapes


def canonical_tensor_shapes(cfg: DlamConfig) -> dict[str, tuple]:
    shapes = _imunet_shapes(cfg)
    shapes.update(_visionnet_shapes(cfg))
    return shapes


def _build_direction(tensors, prefix) -> GruDirection:
    return GruDirection(**{f: tensors[f"{prefix}.{f}"] for f in GRU_FIELDS})


def _nested_arrays(obj):
    if isinstance(obj, np.ndarray):
        yield obj
    elif hasattr(obj, "__dataclass_fields__"):
        for f in fields(obj):
            yield from _nested_arrays(getattr(obj, f.name))


def param_count(w) -> int:
    """Total scalar parameter count of a weights dataclass, biases included."""
    return int(sum(a.size for a in _nested_arrays(w)))


def zero_weights(cfg: DlamConfig | None = None):
    """All-zero networks: every gamma output is exactly zero (nominal filter)."""
    cfg = cfg or DlamConfig()
    tensors = {name: np.zeros(shape)
               for name, shape in canonical_tensor_shapes(cfg).items()}
    return _weights_from_tensors(tensors, cfg)


def random_weights(rng: np.random.Generator, cfg: DlamConfig | None = None,
                   scale: float = 0.1):
    """Small uniform random networks, handy for tests and probing."""
    cfg = cfg or DlamConfig()
    tensors = {name: rng.uniform(-scale, scale, size=shape)
               for name, shape in canonical_tensor_shapes(cfg).items()}
    return _weights_from_tensors(tensors, cfg)


def _weights_from_tensors(tensors: dict, cfg: DlamConfig):
    imu = ImuNetWeights(
        layer1=GruLayerWeights(_build_direction(tensors, "imu.l1.fwd"),
                               _build_direction(tensors, "imu.l1.bwd")),
        layer2=GruLayerWeights(_build_direction(tensors, "imu.l2.fwd"),
                               _build_direction(tensors, "imu.l2.bwd")),
        head_W=tensors["imu.head.W"], head_b=tensors["imu.head.b"])
    vision = VisionNetWeights(
        left=ConvStack(tensors["vision.conv1.left.kernel"],
                       tensors["vision.conv1.left.bias"],
                       tensors["vision.conv2.left.kernel"],
                       tensors["vision.conv2.left.bias"]),
        right=ConvStack(tensors["vision.conv1.right.kernel"],
                        tensors["vision.conv1.right.bias"],
                        tensors["vision.conv2.right.kernel"],
                        tensors["vision.conv2.right.bias"]),
        fc1_W=tensors["vision.fc1.W"], fc1_b=tensors["vision.fc1.b"],
        fc2_W=tensors["vision.fc2.W"], fc2_b=tensors["vision.fc2.b"])
    return imu, vision


def _tensors_from_weights(imu: ImuNetWeights, vision: VisionNetWeights) -> dict:
    tensors = {}
    for lname, layer in (("l1", imu.layer1), ("l2", imu.layer2)):
        for dname, d in (("fwd", layer.fwd), ("bwd", layer.bwd)):
            for f in GRU_FIELDS:
                tensors[f"imu.{lname}.{dname}.{f}"] = getattr(d, f)
    tensors["imu.head.W"] = imu.head_W
    tensors["imu.head.b"] = imu.head_b
    for eye, stack in (("left", vision.left), ("right", vision.right)):
        tensors[f"vision.conv1.{eye}.kernel"] = stack.conv1_kernel
        tensors[f"vision.conv1.{eye}.bias"] = stack.conv1_bias
        tensors[f"vision.conv2.{eye}.kernel"] = stack.conv2_kernel
        tensors[f"vision.conv2.{eye}.bias"] = stack.conv2_bias
    tensors["vision.fc1.W"] = vision.fc1_W
    tensors["vision.fc1.b"] = vision.fc1_b
    tensors["vision.fc2.W"] = vision.fc2_W
    tensors["vision.fc2.b"] = vision.fc2_b
    return tensors


# ---------------------------------------------------------------------------
# Portable weight store (binary, little-endian, float32 payload)

STORE_MAGIC = b"VINW"
STORE_VERSION = 1


@dataclass
class WeightStore:
    """Self-describing tensor container: header plus name->array table."""

    config: DlamConfig = field(default_factory=DlamConfig)
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_weights(cls, imu: ImuNetWeights, vision: VisionNetWeights,
                     config: DlamConfig | None = None) -> "WeightStore":
        return cls(config or DlamConfig(),
                   {k: np.asarray(v, dtype=np.float32)
                    for k, v in _tensors_from_weights(imu, vision).items()})

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    def to_bytes(self) -> bytes:
        cfg = self.config
        buf = io.BytesIO()
        buf.write(STORE_MAGIC)
        buf.write(struct.pack("<I", STORE_VERSION))
        buf.write(struct.pack("<IIfII", cfg.d_h, cfg.d_gru, cfg.upsilon,
                              cfg.img_w, cfg.img_h))
        buf.write(struct.pack("<I", len(self.tensors)))
        for name in sorted(self.tensors):
            arr = np.ascontiguousarray(self.tensors[name], dtype="<f4")
            nb = name.encode("utf-8")
            buf.write(struct.pack("<H", len(nb)))
            buf.write(nb)
            buf.write(struct.pack("<B", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(arr.tobytes())
        return buf.getvalue()

    @classmethod
    def load(cls, path) -> "WeightStore":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    @classmethod
    def from_bytes(cls, data: bytes) -> "WeightStore":
        buf = io.BytesIO(data)

        def take(fmt):
            size = struct.calcsize(fmt)
            raw = buf.read(size)
            if len(raw) != size:
                raise DataFormatError("weight store: truncated file")
            return struct.unpack(fmt, raw)

        if buf.read(4) != STORE_MAGIC:
            raise DataFormatError("weight store: bad magic, not a weight file")
        (version,) = take("<I")
        if version != STORE_VERSION:
            raise DataFormatError(f"weight store: unsupported version {version}")
        d_h, d_gru, upsilon, img_w, img_h = take("<IIfII")
        cfg = DlamConfig(d_h=d_h, d_gru=d_gru, upsilon=float(upsilon),
                         img_w=img_w, img_h=img_h)
        (count,) = take("<I")
        tensors = {}
        for _ in range(count):
            (name_len,) = take("<H")
            name = buf.read(name_len).decode("utf-8")
            (ndim,) = take("<B")
            shape = take(f"<{ndim}I") if ndim else ()
            n_items = int(np.prod(shape)) if shape else 1
            raw = buf.read(4 * n_items)
            if len(raw) != 4 * n_items:
                raise DataFormatError(f"weight store: truncated tensor '{name}'")
            tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape)
        return cls(cfg, tensors)


def load_weights(store: WeightStore) -> tuple[ImuNetWeights, VisionNetWeights]:
    """Place every stored tensor into its slot, strictly and with checks.

    Missing names, unexpected extra names, wrong shapes and non-finite
    values are each rejected with a distinct message.
    """
    expected = canonical_tensor_shapes(store.config)
    missing = sorted(set(expected) - set(store.tensors))
    if missing:
        raise DataFormatError(f"weight store: missing tensors {missing[:5]}"
                              f"{'...' if len(missing) > 5 else ''}")
    extra = sorted(set(store.tensors) - set(expected))
    if extra:
        raise DataFormatError(f"weight store: unknown tensors {extra[:5]}"
                              f"{'...' if len(extra) > 5 else ''}")
    tensors = {}
    for name, shape in expected.items():
        arr = np.asarray(store.tensors[name], dtype=float)
        if arr.shape != shape:
            raise DataFormatError(f"weight store: tensor '{name}' has shape "
                                  f"{arr.shape}, expected {shape}")
        if not np.all(np.isfinite(arr)):
            raise DataFormatError(f"weight store: tensor '{name}' contains "
                                  f"non-finite values")
        tensors[name] = arr
    return _weights_from_tensors(tensors, store.config)
