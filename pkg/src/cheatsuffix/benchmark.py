"""Seeded desk-scale benchmark instances on the reference backend.

An instance fixes everything one attack run needs: a short original prompt,
the target category, the filtered vocabulary, and both target vectors. The
prompt tokens and the synthetic reference-image vector derive from the
instance seed through documented offsets so that every implementation of the
recipe regenerates identical instances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backends import EncoderBackend
from .codebook import FilteredVocabulary, filter_vocabulary
from .objective import TargetVectors, build_text_target
from .seeding import SplitMix64, seeded_uniform

PROMPT_SEED_XOR = 0x70726F6D  # "prom"
IMAGE_SEED_XOR = 0x696D6167   # "imag"

DEFAULT_TARGET = 5
DEFAULT_TOP_K = 20


@dataclass(frozen=True)
class BenchmarkInstance:
    seed: int
    prompt_ids: tuple[int, ...]
    target: int
    targets: TargetVectors
    filtered: FilteredVocabulary


def synthetic_image_vector(seed: int, d_emb: int) -> np.ndarray:
    """Deterministic stand-in for an arbitrary image embedding."""
    return seeded_uniform(seed, d_emb).astype(np.float64)


def target_image_vector(backend: EncoderBackend, seed: int, target: int,
                        context_tokens: int = 2) -> np.ndarray:
    """Synthetic embedding of an image depicting the target category.

    Modeled as the text embedding of the target token preceded by seeded
    context tokens: alignable with target-related prompts (as a real photo of
    the category would be) while varying across seeds.
    """
    rng = SplitMix64(seed)
    ctx = [rng.next_index(backend.codebook.size) for _ in range(context_tokens)]
    return backend.encode_text(backend.embed_tokens(ctx + [target])).v


def benchmark_instance(backend: EncoderBackend, seed: int,
                       target: int = DEFAULT_TARGET, top_k: int = DEFAULT_TOP_K,
                       lam: float = 0.1) -> BenchmarkInstance:
    """Protocol-style instance: the original prompt is the canonical photo
    template naming a seeded original category different from the target."""
    rng = SplitMix64(seed ^ PROMPT_SEED_XOR)
    original = rng.next_index(backend.codebook.size)
    while original == target:
        original = rng.next_index(backend.codebook.size)
    prompt_ids = backend.target_prompt_tokens(original)
    v_image = target_image_vector(backend, seed ^ IMAGE_SEED_XOR, target)
    targets = TargetVectors(
        v_text=build_text_target(backend, target),
        v_image=v_image,
        target=target,
        lam=lam,
    )
    filtered = filter_vocabulary(backend.codebook, target, top_k)
    return BenchmarkInstance(seed, tuple(prompt_ids), target, targets, filtered)
