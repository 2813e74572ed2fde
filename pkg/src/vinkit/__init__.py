"""Visual-inertial navigation toolkit.

A quaternion-manifold unscented Kalman filter fusing IMU dead reckoning
with stereo landmark measurements, a learned mechanism that rescales the
filter's noise covariances online, plus a simulator, EuRoC-style dataset
ingestion, and an evaluation harness.
"""

from .errors import DataFormatError, NumericalError
from .frontend import CameraRig, FeatureObservation, TrackFrame, TrackTable
from .metrics import ErrorSeries, LossReport, compute_errors, compute_loss
from .navmodel import (
    GRAVITY,
    ImuSample,
    LandmarkSet,
    NavState,
    NoiseSigma,
    measure_all,
    measure_landmark,
    propagate_state,
)
from .pipeline import ExperimentConfig, run_experiment, run_filter
from .sim import SimConfig, simulate_trajectory, synthesize_imu, synthesize_tracks
from .ukf import FilterConfig, FilterState, SigmaSet, VisionFrame, step

__version__ = "0.1.0"

__all__ = [
    "CameraRig", "DataFormatError", "ErrorSeries", "ExperimentConfig",
    "FeatureObservation", "FilterConfig", "FilterState", "GRAVITY",
    "ImuSample", "LandmarkSet", "LossReport", "NavState", "NoiseSigma",
    "NumericalError", "SigmaSet", "SimConfig", "TrackFrame", "TrackTable",
    "VisionFrame", "compute_errors", "compute_loss", "measure_all",
    "measure_landmark", "propagate_state", "run_experiment", "run_filter",
    "simulate_trajectory", "step", "synthesize_imu", "synthesize_tracks",
]
