"""Key-phrase and relation labeling with voting LSTM ensembles.

The pipeline mirrors a two-subtask annotation setting: subtask A finds
and classifies key phrases with per-class bidirectional-LSTM ensembles;
subtask B links them with per-relation target-mask ensembles. Everything
runs on plain numpy and is deterministic for a given seed.
"""

from .config import RunConfig, load_run_config
from .corpus import (
    AnnotatedCorpus,
    KeyPhrase,
    RelationInstance,
    RelationType,
    Sentence,
    Token,
)
from .errors import (
    ConfigError,
    GenerationError,
    KprlError,
    NumericError,
    ParseError,
    ShapeError,
)
from .relations import TaskBModel
from .tagger import TaskAModel
from .training import TrainConfig

__version__ = "0.1.0"

__all__ = [
    "AnnotatedCorpus",
    "ConfigError",
    "GenerationError",
    "KeyPhrase",
    "KprlError",
    "NumericError",
    "ParseError",
    "RelationInstance",
    "RelationType",
    "RunConfig",
    "Sentence",
    "ShapeError",
    "TaskAModel",
    "TaskBModel",
    "Token",
    "TrainConfig",
    "load_run_config",
    "__version__",
]
