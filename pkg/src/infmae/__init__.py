"""Information-aware masked autoencoder pretraining for infrared imagery."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import BASE_MODEL, BASE_TRAIN, TINY_MODEL, ModelConfig, TrainConfig
from .estimator import InfMAE
from .maskgen import InformationAwareMasker, MaskPlan, make_mask_plan
from .model import InfMAENet
from .pyramid import FeaturePyramid, PyramidLinearProbe, extract_pyramid

__all__ = [
    "Checkpoint",
    "FeaturePyramid",
    "InfMAE",
    "InfMAENet",
    "InformationAwareMasker",
    "MaskPlan",
    "ModelConfig",
    "BASE_MODEL",
    "BASE_TRAIN",
    "PyramidLinearProbe",
    "TINY_MODEL",
    "TrainConfig",
    "extract_pyramid",
    "load_checkpoint",
    "make_mask_plan",
    "save_checkpoint",
]

__version__ = "0.1.0"
