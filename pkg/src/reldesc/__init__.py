"""Dual-encoder relation extraction with instance-adapted predicate descriptions."""

from .data import CandidatePair, REInstance, generate_pairs, make_batch, parse_dataset
from .encoder import EncoderConfig, Vocab, build_vocab, encode, tokenize
from .model import ModelConfig, RelationModel, contrastive_loss, ce_loss, predict, unified_loss
from .schema import (
    NULL,
    Mention,
    PredicateSchema,
    fill_template,
    load_schema,
    mark_description,
    mark_input,
)
from .train import TrainConfig, ablate, alpha_sweep, evaluate, train

__version__ = "0.1.0"
