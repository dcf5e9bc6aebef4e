"""Latent factor analysis for sparse rating matrices, with SGD, Adam and
swarm-tuned SGD trainers and an Adam-guided beetle antennae refiner."""

from .data import (
    RatingMatrix,
    RatingTriplet,
    SplitSpec,
    col_slice,
    load_split,
    parse_ratings,
    read_ratings,
    row_slice,
    save_split,
    split,
    write_ratings,
)
from .errors import (
    A2basError,
    CheckpointError,
    ConfigError,
    DataFileError,
    DivergenceError,
    DuplicateEntryError,
    EvaluationError,
    ParseError,
)
from .model import (
    EvalReport,
    FactorState,
    evaluate,
    init_factors,
    load_checkpoint,
    objective,
    predict,
    save_checkpoint,
)
from .pso import Swarm, SwarmConfig, make_swarm, plfa_train, pso_step
from .refine import (
    AL0_GRID,
    BeetleState,
    RefineConfig,
    antennae_sweep,
    beetle_step,
    col_fitness,
    init_col_beetle,
    init_row_beetle,
    random_direction,
    refine_col,
    refine_row,
    row_fitness,
    sequential_refine,
)
from .trainers import AdamConfig, SgdConfig, TrainTrace, adam_epoch, adam_train, sgd_epoch, sgd_train

__version__ = "0.1.0"

__all__ = [
    "A2basError",
    "AL0_GRID",
    "AdamConfig",
    "BeetleState",
    "CheckpointError",
    "ConfigError",
    "DataFileError",
    "DivergenceError",
    "DuplicateEntryError",
    "EvalReport",
    "EvaluationError",
    "FactorState",
    "ParseError",
    "RatingMatrix",
    "RatingTriplet",
    "RefineConfig",
    "SgdConfig",
    "SplitSpec",
    "Swarm",
    "SwarmConfig",
    "TrainTrace",
    "adam_epoch",
    "adam_train",
    "antennae_sweep",
    "beetle_step",
    "col_fitness",
    "col_slice",
    "evaluate",
    "init_col_beetle",
    "init_factors",
    "init_row_beetle",
    "load_checkpoint",
    "load_split",
    "make_swarm",
    "objective",
    "parse_ratings",
    "plfa_train",
    "predict",
    "pso_step",
    "random_direction",
    "read_ratings",
    "refine_col",
    "refine_row",
    "row_fitness",
    "row_slice",
    "save_checkpoint",
    "save_split",
    "sequential_refine",
    "sgd_epoch",
    "sgd_train",
    "split",
    "write_ratings",
]
