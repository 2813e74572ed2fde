"""Training side of the navigation toolkit.

Learns the noise-adaptation networks by backpropagating a weighted MSE
navigation loss through a differentiable error-state EKF, then exports
the weights in the portable store format the deployed filter loads.
"""

from .data import Dataset, NoiseProfile, load_dataset, relabeled_dataset
from .ekf import EkfState, frame_step, predict, update
from .export import export_weights
from .networks import ImuNet, VisionNet, param_count, scale_sigma
from .train import TrainConfig, run_epoch, train

__version__ = "0.1.0"
