"""Adversarial-trace website fingerprinting defense, desk-scale toolkit."""

__version__ = "0.1.0"

from .trace_model import BurstTrace, PacketTrace, bandwidth_overhead, directions_to_bursts  # noqa: E402
from .dataset_io import LabeledDataset, SyntheticSpec, generate_synthetic  # noqa: E402
from .detector import DetectorModel, TrainConfig, predict_proba, train  # noqa: E402
from .generator import GenerationConfig, generate, generate_batch  # noqa: E402
from .cw import CwConfig, cw_generate  # noqa: E402
from .molding import MoldingConfig, mold  # noqa: E402

__all__ = [
    "BurstTrace", "PacketTrace", "bandwidth_overhead", "directions_to_bursts",
    "LabeledDataset", "SyntheticSpec", "generate_synthetic",
    "DetectorModel", "TrainConfig", "predict_proba", "train",
    "GenerationConfig", "generate", "generate_batch",
    "CwConfig", "cw_generate", "MoldingConfig", "mold",
]
