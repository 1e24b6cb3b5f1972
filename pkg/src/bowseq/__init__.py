"""Seq2seq translation with a sentence-level bag-of-words training target."""

from .autodiff import (
    GradCheckReport,
    Node,
    ParameterStore,
    ShapeError,
    backward,
    finite_difference_check,
)
from .data import (
    BOS,
    EOS,
    PAD,
    UNK,
    Batch,
    ExamplePair,
    ToyTaskSpec,
    Vocab,
    build_vocab,
    extract_bag,
    generate_toy_corpus,
    load_pairs,
    make_batches,
)
from .inference import BeamConfig, Hypothesis, beam_search, greedy_decode, normalized_score
from .metrics import BagReport, BleuReport, bag_overlap, corpus_bleu
from .model import (
    ModelConfig,
    Seq2SeqModel,
    bow_probabilities,
    load_checkpoint,
    save_checkpoint,
)
from .objectives import (
    AdamState,
    LossBreakdown,
    ScheduleParams,
    adam_step,
    bag_loss,
    bag_weight,
    clip_gradients,
    total_loss,
    word_loss,
)
from .training import EpochStats, ValidationSet, train_model

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "BagReport",
    "Batch",
    "BeamConfig",
    "BleuReport",
    "BOS",
    "EOS",
    "EpochStats",
    "ExamplePair",
    "GradCheckReport",
    "Hypothesis",
    "LossBreakdown",
    "ModelConfig",
    "Node",
    "PAD",
    "ParameterStore",
    "ScheduleParams",
    "Seq2SeqModel",
    "ShapeError",
    "ToyTaskSpec",
    "UNK",
    "ValidationSet",
    "Vocab",
    "adam_step",
    "backward",
    "bag_loss",
    "bag_overlap",
    "bag_weight",
    "beam_search",
    "bow_probabilities",
    "build_vocab",
    "clip_gradients",
    "corpus_bleu",
    "extract_bag",
    "finite_difference_check",
    "generate_toy_corpus",
    "greedy_decode",
    "load_checkpoint",
    "load_pairs",
    "make_batches",
    "normalized_score",
    "save_checkpoint",
    "total_loss",
    "train_model",
    "word_loss",
]
