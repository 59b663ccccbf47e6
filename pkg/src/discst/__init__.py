"""Punctuation prediction with discriminative self-training, in numpy."""

from .ablation import AblationResult, LadderGrid, run_ablation
from .corpus import (
    EncodedExample,
    LabeledExample,
    Vocabulary,
    build_vocabulary,
    chunk_for_training,
    encode,
    encode_words,
    parse_punctuated_text,
    read_tsv,
    render,
    write_tsv,
)
from .decode import WindowSpec, decode_long, decode_many, half_window_spec, plan_windows
from .errors import ConfigError, DataError, TrainingError
from .labels import CHINESE5, ENGLISH4, LabelSet, PunctLabel, Source
from .loss import SmoothingSpec, combined_st_loss, cross_entropy, smooth_labels
from .metrics import Metrics, paired_significance, score
from .model import ModelConfig, ModelParams, backward, forward, init_params, load_checkpoint, save_checkpoint
from .selftrain import (
    STConfig,
    TrainingData,
    evaluate,
    pretrain_mlm,
    pseudo_label,
    self_train_loop,
    train_student,
    train_supervised,
    tune_hyperparams,
    tune_window,
)
from .synthetic import generate_benchmark

__version__ = "0.1.0"
