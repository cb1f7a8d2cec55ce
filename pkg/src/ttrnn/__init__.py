"""Recurrent networks with tensor-train compressed weight matrices."""

from .cells import GRUCell, SRNNCell, bptt, unroll
from .checkpoint import (
    Checkpoint,
    load_checkpoint,
    load_into_model,
    load_optimizer,
    read_checkpoint,
    save_checkpoint,
)
from .config import TrainConfig, parse_kv
from .errors import (
    ConfigError,
    DataError,
    FormatError,
    NumericError,
    RangeError,
    ShapeError,
    SizeError,
    StateError,
    TTRNNError,
)
from .indexing import linear_to_multi, multi_to_linear
from .kernels import BACKEND, HAVE_NUMBA
from .linear import DenseLinear, LinearMap, TTLinear
from .models import (
    SequenceClassifier,
    SequencePredictor,
    build_classifier,
    build_predictor,
    make_cell,
    make_map,
    model_report,
)
from .optim import Adam, clip_global_norm, global_norm
from .tasks import (
    ModelReport,
    bernoulli_frame_nll,
    cell_param_count,
    classification_accuracy,
    compression_ratio,
    frame_accuracy,
    frame_counts,
    gate_param_count,
    softmax_cross_entropy,
)
from .ttmatrix import DENSE_CAP, TTMatrix, TTSpec, read_ttmatrix, write_ttmatrix

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "BACKEND",
    "Checkpoint",
    "ConfigError",
    "DENSE_CAP",
    "DataError",
    "DenseLinear",
    "FormatError",
    "GRUCell",
    "HAVE_NUMBA",
    "LinearMap",
    "ModelReport",
    "NumericError",
    "RangeError",
    "SRNNCell",
    "SequenceClassifier",
    "SequencePredictor",
    "ShapeError",
    "SizeError",
    "StateError",
    "TTLinear",
    "TTMatrix",
    "TTRNNError",
    "TTSpec",
    "TrainConfig",
    "bernoulli_frame_nll",
    "bptt",
    "build_classifier",
    "build_predictor",
    "cell_param_count",
    "classification_accuracy",
    "clip_global_norm",
    "compression_ratio",
    "frame_accuracy",
    "frame_counts",
    "gate_param_count",
    "global_norm",
    "linear_to_multi",
    "load_checkpoint",
    "load_into_model",
    "load_optimizer",
    "make_cell",
    "make_map",
    "model_report",
    "multi_to_linear",
    "parse_kv",
    "read_checkpoint",
    "read_ttmatrix",
    "save_checkpoint",
    "softmax_cross_entropy",
    "unroll",
    "write_ttmatrix",
]
