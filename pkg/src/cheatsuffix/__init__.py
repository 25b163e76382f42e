"""Cheating-suffix optimization and evaluation toolkit for contrastive
text-image pipelines."""

from .backends import (
    EncoderBackend,
    ReferenceBackend,
    TextEncodeResult,
    build_backend,
    register_backend,
    seeded_uniform,
)
from .codebook import (
    Codebook,
    FilteredVocabulary,
    Vocabulary,
    cosine,
    filter_vocabulary,
    nearest_token,
)
from .objective import TargetVectors, build_image_target, build_text_target, build_targets, mmp_loss
from .optimizer import AttackConfig, SuffixState, initialize, optimize, project

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "Codebook",
    "EncoderBackend",
    "FilteredVocabulary",
    "ReferenceBackend",
    "SuffixState",
    "TargetVectors",
    "TextEncodeResult",
    "Vocabulary",
    "build_backend",
    "build_image_target",
    "build_targets",
    "build_text_target",
    "cosine",
    "filter_vocabulary",
    "initialize",
    "mmp_loss",
    "nearest_token",
    "optimize",
    "project",
    "register_backend",
    "seeded_uniform",
]
