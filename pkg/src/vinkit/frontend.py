"""Dataset ingestion and the stereo measurement front end.

Consumes EuRoC-style CSV files (IMU, ground truth, and a precomputed
matched-feature track table; feature detection itself is upstream of this
toolkit), triangulates rectified stereo observations into body-frame
points, and maintains the world-frame landmark registry that turns tracks
into filter measurements.

All file formats are comma-separated UTF-8 with '#' comment lines and
integer-nanosecond timestamps.  Parse errors carry 1-based line numbers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import yaml

from . import quat
from .errors import DataFormatError
from .navmodel import ImuSample, LandmarkSet, NavState

# Observations with stereo disparity at or below this floor (pixels) are
# unusable near-infinity points and get dropped.
MIN_DISPARITY = 0.5


@dataclass
class CameraRig:
    """Rectified stereo intrinsics plus the body-from-camera extrinsics."""

    fx: float
    fy: float
    cx: float
    cy: float
    baseline: float
    T_bc_q: np.ndarray  # body-from-camera rotation (unit quaternion)
    T_bc_t: np.ndarray  # body-from-camera translation (m)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0 or self.baseline <= 0:
            raise ValueError("CameraRig: fx, fy and baseline must be positive")
        self.T_bc_q = quat.quat_normalize(np.asarray(self.T_bc_q, dtype=float).reshape(4))
        self.T_bc_t = np.asarray(self.T_bc_t, dtype=float).reshape(3)

    @classmethod
    def default(cls) -> "CameraRig":
        return cls(fx=458.0, fy=458.0, cx=376.0, cy=240.0, baseline=0.11,
                   T_bc_q=quat.QUAT_IDENTITY.copy(), T_bc_t=np.zeros(3))


@dataclass
class FeatureObservation:
    """One matched stereo feature: pixel coordinates in both images."""

    t: int
    lid: int
    u_l: float
    v_l: float
    u_r: float
    v_r: float


@dataclass
class TrackFrame:
    t: int
    observations: list


class TrackTable:
    """Time-ordered frames of stereo feature observations."""

    def __init__(self, frames=None):
        self.frames: list[TrackFrame] = list(frames) if frames else []

    def append(self, frame: TrackFrame) -> None:
        self.frames.append(frame)

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)


def _data_lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            yield lineno, stripped


def _split_row(path, lineno, line, n_cols):
    parts = [p.strip() for p in line.split(",")]
    if len(parts) not in (n_cols if isinstance(n_cols, tuple) else (n_cols,)):
        raise DataFormatError(f"{path}:{lineno}: expected {n_cols} columns, "
                              f"got {len(parts)}")
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise DataFormatError(f"{path}:{lineno}: unparsable numeral ({exc})") from None


def parse_imu_csv(path) -> list[ImuSample]:
    """Rows 't[ns],wx,wy,wz,ax,ay,az' with strictly increasing timestamps."""
    samples = []
    last_t = None
    for lineno, line in _data_lines(path):
        vals = _split_row(path, lineno, line, 7)
        t = int(vals[0])
        if last_t is not None and t <= last_t:
            raise DataFormatError(f"{path}:{lineno}: non-increasing timestamp {t}")
        last_t = t
        samples.append(ImuSample(t, vals[1:4], vals[4:7]))
    return samples


def parse_groundtruth_csv(path) -> list[tuple[int, NavState]]:
    """Rows 't,p(3),q(4 scalar-first),v(3)[,b_w(3),b_a(3)]'.

    Quaternions are renormalized on load; a norm more than 1e-3 from unity
    is rejected as corrupt.
    """
    out = []
    last_t = None
    for lineno, line in _data_lines(path):
        vals = _split_row(path, lineno, line, (11, 17))
        t = int(vals[0])
        if last_t is not None and t <= last_t:
            raise DataFormatError(f"{path}:{lineno}: non-increasing timestamp {t}")
        last_t = t
        q = np.array(vals[4:8])
        if abs(np.linalg.norm(q) - 1.0) > 1e-3:
            raise DataFormatError(f"{path}:{lineno}: quaternion norm "
                                  f"{np.linalg.norm(q):.4f} out of tolerance")
        b_w = vals[11:14] if len(vals) == 17 else np.zeros(3)
        b_a = vals[14:17] if len(vals) == 17 else np.zeros(3)
        out.append((t, NavState(quat.quat_normalize(q), vals[1:4], vals[8:11],
                                b_w, b_a)))
    return out


def parse_tracks(path) -> TrackTable:
    """Rows 't[ns],id,u_l,v_l,u_r,v_r' grouped by timestamp.

    Rows of one frame must be contiguous with non-decreasing frame times;
    a repeated (t, id) pair is an error.
    """
    table = TrackTable()
    current: TrackFrame | None = None
    seen_ids: set[int] = set()
    for lineno, line in _data_lines(path):
        vals = _split_row(path, lineno, line, 6)
        t, lid = int(vals[0]), int(vals[1])
        if current is None or t != current.t:
            if current is not None and t < current.t:
                raise DataFormatError(f"{path}:{lineno}: frame time {t} moves backwards")
            current = TrackFrame(t, [])
            table.append(current)
            seen_ids = set()
        if lid in seen_ids:
            raise DataFormatError(f"{path}:{lineno}: duplicate landmark id {lid} "
                                  f"in frame t={t}")
        seen_ids.add(lid)
        current.observations.append(FeatureObservation(t, lid, *vals[2:6]))
    return table


def parse_calibration(path) -> CameraRig:
    """YAML calibration: keys fx, fy, cx, cy, baseline, T_bc{q, t}."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    try:
        tbc = doc.get("T_bc", {})
        return CameraRig(fx=float(doc["fx"]), fy=float(doc["fy"]),
                         cx=float(doc["cx"]), cy=float(doc["cy"]),
                         baseline=float(doc["baseline"]),
                         T_bc_q=np.asarray(tbc.get("q", [1, 0, 0, 0]), dtype=float),
                         T_bc_t=np.asarray(tbc.get("t", [0, 0, 0]), dtype=float))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"{path}: bad calibration file ({exc})") from None


# ---------------------------------------------------------------------------
# CSV writers (loss-free: 17 significant digits round-trips doubles exactly)

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_imu_csv(path, samples) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("#t[ns],wx,wy,wz,ax,ay,az\n")
        for s in samples:
            vals = ",".join(_fmt(v) for v in np.concatenate([s.w_m, s.a_m]))
            fh.write(f"{s.t},{vals}\n")


def write_groundtruth_csv(path, states) -> None:
    """``states`` is an iterable of (t, NavState)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("#t[ns],px,py,pz,qw,qx,qy,qz,vx,vy,vz,bwx,bwy,bwz,bax,bay,baz\n")
        for t, x in states:
            row = np.concatenate([x.p, x.q, x.v, x.b_w, x.b_a])
            fh.write(f"{int(t)}," + ",".join(_fmt(v) for v in row) + "\n")


def write_tracks_csv(path, table: TrackTable) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("#t[ns],id,u_l,v_l,u_r,v_r\n")
        for frame in table:
            for o in frame.observations:
                fh.write(f"{frame.t},{o.lid},{_fmt(o.u_l)},{_fmt(o.v_l)},"
                         f"{_fmt(o.u_r)},{_fmt(o.v_r)}\n")


def write_calibration(path, rig: CameraRig) -> None:
    doc = {"fx": float(rig.fx), "fy": float(rig.fy), "cx": float(rig.cx),
           "cy": float(rig.cy), "baseline": float(rig.baseline),
           "T_bc": {"q": [float(v) for v in rig.T_bc_q],
                    "t": [float(v) for v in rig.T_bc_t]}}
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


# ---------------------------------------------------------------------------
# Stereo geometry

def triangulate_stereo(obs: FeatureObservation, rig: CameraRig,
                       d_min: float = MIN_DISPARITY):
    """Camera-frame point of a rectified stereo match, or None if the
    disparity is at or below ``d_min`` (observation dropped)."""
    d = obs.u_l - obs.u_r
    if d <= d_min:
        return None
    Z = rig.fx * rig.baseline / d
    X = (obs.u_l - rig.cx) * Z / rig.fx
    Y = (obs.v_l - rig.cy) * Z / rig.fy
    return np.array([X, Y, Z])


def body_point(obs: FeatureObservation, rig: CameraRig,
               d_min: float = MIN_DISPARITY):
    """Triangulated point expressed in the body frame (None if dropped)."""
    l_c = triangulate_stereo(obs, rig, d_min)
    if l_c is None:
        return None
    return quat.quat_rotate(rig.T_bc_q, l_c) + rig.T_bc_t


def project_stereo(l_b, rig: CameraRig):
    """Inverse of :func:`body_point`: body-frame point to stereo pixels.

    Returns (u_l, v_l, u_r, v_r), or None when the point sits on or behind
    the camera plane.
    """
    l_c = quat.quat_rotate(quat.quat_inverse(rig.T_bc_q),
                           np.asarray(l_b, dtype=float) - rig.T_bc_t)
    X, Y, Z = l_c
    if Z <= 1e-9:
        return None
    u_l = rig.fx * X / Z + rig.cx
    v_l = rig.fy * Y / Z + rig.cy
    u_r = rig.fx * (X - rig.baseline) / Z + rig.cx
    return u_l, v_l, u_r, v_l


@dataclass
class FrameMatch:
    """Result of landmark association for one frame."""

    matched: LandmarkSet      # world coordinates of re-observed landmarks
    z: np.ndarray             # stacked body-frame measurements, id order
    registered: LandmarkSet   # landmarks first seen (and added) this frame
    dropped: int              # observations lost to the disparity floor


def register_landmarks(observations, x_est: NavState, rig: CameraRig,
                       registry: LandmarkSet,
                       d_min: float = MIN_DISPARITY) -> FrameMatch:
    """Associate a frame's observations against the landmark registry.

    Ids already registered produce matched (l_w, l_b) pairs using the
    stored world coordinates.  First-seen ids are anchored into the world
    frame with the *current estimate* (l_w = R(q) l_b + p), added to the
    registry, and excluded from this frame's measurement, so a frame of
    entirely new landmarks yields an empty match (skip the update).
    """
    body = {}
    dropped = 0
    for obs in observations:
        l_b = body_point(obs, rig, d_min)
        if l_b is None:
            dropped += 1
            continue
        body[obs.lid] = l_b
    matched_ids = sorted(i for i in body if i in registry)
    new_ids = sorted(i for i in body if i not in registry)
    registered = LandmarkSet()
    for lid in new_ids:
        l_w = quat.quat_rotate(x_est.q, body[lid]) + x_est.p
        registry.add(lid, l_w)
        registered.add(lid, l_w)
    matched = registry.subset(matched_ids)
    z = (np.concatenate([body[i] for i in matched_ids])
         if matched_ids else np.zeros(0))
    return FrameMatch(matched, z, registered, dropped)
