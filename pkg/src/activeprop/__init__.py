"""Active proposal set generation for weakly supervised detector training.

The library provides the two pieces of the sampling engine (a sigmoid
budget schedule over training progress and a proposal partition that turns
current model scores into an active training set) plus the desk-scale
pieces needed to exercise them end to end: a linear two-stream MIL head
with exact gradients, a synthetic weak-supervision world, detection
metrics, and a CLI.
"""

from .errors import (
    ActivePropError,
    ConfigError,
    GenerationError,
    InputError,
    ParseError,
    TrainingDivergedError,
)
from .evaluation import Detection, EvalReport, average_precision, corloc, evaluate
from .geometry import Box, ProposalSet, iou, iou_matrix
from .milhead import (
    ForwardPass,
    LossReport,
    MilGradients,
    MilHeadOutput,
    MilModel,
    RefinementLabels,
    assign_refinement_labels,
    class_softmax,
    detection_softmax,
    forward,
    fuse_streams,
    image_level_loss,
    loss_and_gradients,
    refinement_loss,
    total_loss,
)
from .partition import (
    NEGATIVE,
    POSITIVE,
    RISK,
    PartitionConfig,
    PartitionResult,
    PseudoGroundTruth,
    build_active_set,
    generate,
    label_vector,
    select_pgts,
    score_proposals,
    split_by_score,
    split_quotas,
)
from .rng import derive_rng
from .schedule import (
    ScheduleConfig,
    Stage,
    active_budget,
    retained_fraction,
    stage_occupancy,
    stage_of,
)
from .synth import (
    SimulatorConfig,
    SyntheticProposals,
    SyntheticScene,
    TrainSample,
    WorldSample,
    build_dataset,
    generate_features,
    generate_proposals,
    generate_scene,
)
from .training import (
    RatioExperimentConfig,
    TrainerConfig,
    predict_detections,
    ratio_experiment,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "ActivePropError",
    "Box",
    "ConfigError",
    "Detection",
    "EvalReport",
    "ForwardPass",
    "GenerationError",
    "InputError",
    "LossReport",
    "MilGradients",
    "MilHeadOutput",
    "MilModel",
    "NEGATIVE",
    "POSITIVE",
    "ParseError",
    "PartitionConfig",
    "PartitionResult",
    "ProposalSet",
    "PseudoGroundTruth",
    "RISK",
    "RatioExperimentConfig",
    "RefinementLabels",
    "ScheduleConfig",
    "SimulatorConfig",
    "Stage",
    "SyntheticProposals",
    "SyntheticScene",
    "TrainSample",
    "TrainerConfig",
    "TrainingDivergedError",
    "WorldSample",
    "active_budget",
    "assign_refinement_labels",
    "average_precision",
    "build_active_set",
    "build_dataset",
    "class_softmax",
    "corloc",
    "derive_rng",
    "detection_softmax",
    "evaluate",
    "forward",
    "fuse_streams",
    "generate",
    "generate_features",
    "generate_proposals",
    "generate_scene",
    "image_level_loss",
    "iou",
    "iou_matrix",
    "label_vector",
    "loss_and_gradients",
    "predict_detections",
    "ratio_experiment",
    "refinement_loss",
    "retained_fraction",
    "score_proposals",
    "select_pgts",
    "split_by_score",
    "split_quotas",
    "stage_occupancy",
    "stage_of",
    "total_loss",
    "train",
]
