"""normlab: a normalization-ablation laboratory for small residual networks.

Four interchangeable per-channel schemes (full batch normalization, the
affine re-parameterization alone, the normalization step alone, and no
normalization) can be dropped into every norm site of a basic-block or
bottleneck-block residual network, trained under a common harness, and
compared with weight/gradient instrumentation.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .data import BatchIterator, Dataset, load_cifar10, make_synthetic
from .errors import (
    ConfigError,
    DegenerateBatchError,
    FormatError,
    InputError,
    NormlabError,
    UsageError,
)
from .harness import (
    DatasetSpec,
    RunRecord,
    TrainConfig,
    compare_schemes,
    eval_accuracy,
    evaluate,
    grid_search,
    train_run,
)
from .instrument import HistogramSnapshot, IcsProxyRecord, SnapshotRecorder, ics_proxy
from .norm import NormLayer, NormScheme
from .optim import SGD, Adam, make_optimizer
from .resnet import BlockSpec, Model, ModelConfig, build_model, preset_config
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "BatchIterator",
    "BlockSpec",
    "ConfigError",
    "Dataset",
    "DatasetSpec",
    "DegenerateBatchError",
    "FormatError",
    "HistogramSnapshot",
    "IcsProxyRecord",
    "InputError",
    "Model",
    "ModelConfig",
    "NormLayer",
    "NormScheme",
    "NormlabError",
    "RunRecord",
    "SGD",
    "SnapshotRecorder",
    "Tensor",
    "TrainConfig",
    "UsageError",
    "build_model",
    "compare_schemes",
    "eval_accuracy",
    "evaluate",
    "grid_search",
    "ics_proxy",
    "load_checkpoint",
    "load_cifar10",
    "make_optimizer",
    "make_synthetic",
    "preset_config",
    "save_checkpoint",
    "train_run",
]
