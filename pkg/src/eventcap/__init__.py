"""Dense video event localization and captioning with role-specific query
sets, overlap suppression, cross-task alignment, and concept guidance."""

from .concepts import ConceptVocabulary, build_vocabulary, label_events
from .data import (
    Event,
    SynthDataset,
    SynthParams,
    VideoRecord,
    load_annotations,
    load_dataset,
    load_features,
    resize_to_fixed_length,
    save_features,
    synth_generate,
    write_dataset,
)
from .errors import ConfigError, DataError, TrainingDiverged
from .estimator import DenseVideoCaptioner
from .evaluation import (
    EvalConfig,
    EvalReport,
    bleu4,
    cider,
    evaluate_dense_captions,
    localization_prf,
    soda_c,
)
from .losses import (
    CTCAConfig,
    FocalConfig,
    LossReport,
    LossWeights,
    OSLConfig,
    ctca,
    osl,
)
from .matching import MatchingCoeffs, MatchResult, brute_force_match, hungarian, matching_cost
from .model import EventCaptionModel, ModelConfig, QueryBank
from .temporal import Segment, giou1d, make_segment, tiou
from .text import TokenVocabulary, tokenize
from .training import (
    ExperimentConfig,
    TrainConfig,
    Trainer,
    build_trainer,
    overlap_statistics,
)

__version__ = "0.1.0"

__all__ = [
    "ConceptVocabulary",
    "build_vocabulary",
    "label_events",
    "Event",
    "SynthDataset",
    "SynthParams",
    "VideoRecord",
    "load_annotations",
    "load_dataset",
    "load_features",
    "resize_to_fixed_length",
    "save_features",
    "synth_generate",
    "write_dataset",
    "ConfigError",
    "DataError",
    "TrainingDiverged",
    "DenseVideoCaptioner",
    "EvalConfig",
    "EvalReport",
    "bleu4",
    "cider",
    "evaluate_dense_captions",
    "localization_prf",
    "soda_c",
    "CTCAConfig",
    "FocalConfig",
    "LossReport",
    "LossWeights",
    "OSLConfig",
    "ctca",
    "osl",
    "MatchingCoeffs",
    "MatchResult",
    "brute_force_match",
    "hungarian",
    "matching_cost",
    "EventCaptionModel",
    "ModelConfig",
    "QueryBank",
    "Segment",
    "giou1d",
    "make_segment",
    "tiou",
    "TokenVocabulary",
    "tokenize",
    "ExperimentConfig",
    "TrainConfig",
    "Trainer",
    "build_trainer",
    "overlap_statistics",
]
