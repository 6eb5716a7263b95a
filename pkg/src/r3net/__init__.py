"""Relation-embedded change captioning with syntactic skeleton guidance.

A small numpy reverse-mode autodiff core (:mod:`r3net.tensor`) carries the
model: relation embedding, bidirectional representation reconstruction, a dual
change localizer, a skeleton predictor and an attention LSTM caption decoder.
:mod:`r3net.datagen` builds the synthetic paired-scene corpus it trains on and
:mod:`r3net.metrics` scores the captions.
"""
from .tensor import DimensionError, GraphError, Tensor, backward, no_grad, parameter
from .datagen import Corpus, GenConfig, build_corpus, generate_pair, load_corpus, save_corpus
from .model import VARIANTS, ModelDims, encode, generate, init_params, joint_loss
from .training import ModelState, NumericError, TrainConfig, evaluate, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "Corpus", "DimensionError", "GenConfig", "GraphError", "ModelDims", "ModelState", "NumericError",
    "Tensor", "TrainConfig", "VARIANTS", "backward", "build_corpus", "encode", "evaluate", "generate",
    "generate_pair", "init_params", "joint_loss", "load_checkpoint", "load_corpus", "no_grad", "parameter",
    "save_checkpoint", "save_corpus", "train",
]
