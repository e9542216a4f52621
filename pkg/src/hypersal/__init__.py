"""3-D CNN classification of hyperspectral cubes with saliency-based
wavelength sensitivity analysis, built on a small numpy autodiff engine."""

from .tensor import Tape, Tensor, backward, tensor_from
from .ops import HEALTHY, INFECTED
from .model import ModelParams, count_params, forward, infer_shapes, init_params
from .data import HyperCube, LabeledPatch, SynthSpec, generate_synthetic
from .train import EvalReport, TrainConfig, evaluate
from .saliency import cstar_map, saliency_map, wavelength_histogram, wavelength_of

# train() is not re-exported so that hypersal.train stays the module
__version__ = "0.1.0"

__all__ = [
    "Tape",
    "Tensor",
    "backward",
    "tensor_from",
    "HEALTHY",
    "INFECTED",
    "ModelParams",
    "count_params",
    "forward",
    "infer_shapes",
    "init_params",
    "HyperCube",
    "LabeledPatch",
    "SynthSpec",
    "generate_synthetic",
    "EvalReport",
    "TrainConfig",
    "evaluate",
    "cstar_map",
    "saliency_map",
    "wavelength_histogram",
    "wavelength_of",
]
