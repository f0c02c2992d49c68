"""Unsupervised segmentation by a superpixel-regularised autoencoder and a soft superpixel cut."""
from .dsc import DSCResult, run_dsc
from .errors import NumericError, ParseError, StructuralError
from .metrics import evaluate, ods_ois
from .params import HyperParams
from .superae import SuperAE, TrainConfig, train_superae
from .superpixels import slic_segment

__version__ = "0.1.0"

__all__ = [
    "DSCResult",
    "HyperParams",
    "NumericError",
    "ParseError",
    "StructuralError",
    "SuperAE",
    "TrainConfig",
    "evaluate",
    "ods_ois",
    "run_dsc",
    "slic_segment",
    "train_superae",
]
