"""Two-path teacher/student self-supervised learning for single-lead ECG segments."""

from .config import DataSpec, EncoderConfig, HeadConfig, RunConfig, TrainConfig, full_profile, toy_profile
from .errors import DebsError
from .trainer import Trainer, run_training

__all__ = [
    "DataSpec",
    "DebsError",
    "EncoderConfig",
    "HeadConfig",
    "RunConfig",
    "TrainConfig",
    "Trainer",
    "full_profile",
    "run_training",
    "toy_profile",
]
__version__ = "0.1.0"
