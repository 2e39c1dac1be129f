"""Semi-supervised learning of local structured-output predictors."""

from .structured import (
    DEFAULT_ENUMERATION_CAP,
    LossKind,
    Multiclass,
    SpaceTooLarge,
    TagSequence,
    TreeLeaf,
    argmax_output,
    encode_output,
    enumerate_outputs,
    joint_feature,
    loss,
    loss_aug_argmax,
    score,
)
from .neighborhood import NeighborhoodIndex, build_index, neighbors_of_query
from .trainer import (
    DatasetSplit,
    InitPolicy,
    ModelParams,
    TrainConfig,
    TrainState,
    TrainingDiverged,
    train,
)
from .inference import predict, predict_batch
from .datasets import Dataset, SyntheticSpec, generate_synthetic
from .evaluation import Protocol, run_experiment, run_global_baseline, sweep

__version__ = "0.1.0"
