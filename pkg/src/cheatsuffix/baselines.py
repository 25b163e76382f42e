"""Comparison attacks: no-op, random suffix, genetic search, greedy coordinate gradient.

All baselines share the text-modality objective (maximize the cosine between
the full prompt's text embedding and the target text vector), respect the
filtered vocabulary, and are reproducible from their seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .backends import EncoderBackend
from .codebook import FilteredVocabulary, cosine, sample_token_ids
from .seeding import SplitMix64

PRINTABLE_CHARSET = tuple(chr(c) for c in range(0x20, 0x7F))


class TextAdapter(Protocol):
    """Tokenizes arbitrary character strings into backend token ids."""

    def encode(self, text: str) -> list[int]:
        ...


@dataclass
class GeneticConfig:
    generations: int = 500
    candidates_per_generation: int = 20
    suffix_char_len: int = 32
    charset: tuple[str, ...] = PRINTABLE_CHARSET
    mutation_rate: float = 0.1
    seed: int = 0
    suffix_token_len: int = 4  # genome length in token-level fallback mode

    def __post_init__(self):
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        if self.candidates_per_generation < 2:
            raise ValueError("candidates_per_generation must be >= 2")
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise ValueError("mutation_rate must be in [0, 1]")


@dataclass
class GcgConfig:
    steps: int = 1000
    candidates_per_step: int = 256
    top_k_coordinates: int = 256
    seed: int = 0
    m: int = 4

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.m < 1:
            raise ValueError("m must be >= 1")


@dataclass
class SearchResult:
    """Best candidate found plus the best-so-far trace (one entry per step)."""

    suffix_tokens: list[int] | None
    suffix_text: str | None
    best_loss: float
    loss_trace: list[float] = field(default_factory=list)


def random_suffix(m: int, filtered: FilteredVocabulary, seed: int) -> list[int]:
    """m token ids drawn uniformly with replacement from the allowed set."""
    return sample_token_ids(filtered, m, seed)


def _text_loss(backend: EncoderBackend, prompt_matrix: np.ndarray,
               suffix_matrix: np.ndarray, v_text: np.ndarray) -> float:
    full = np.vstack([prompt_matrix, suffix_matrix])
    v = backend.encode_text(full).v
    return -cosine(v, v_text)


def genetic_attack(backend: EncoderBackend, original_prompt: Sequence[int],
                   target_text_vector: np.ndarray, config: GeneticConfig,
                   text_adapter: TextAdapter | None = None,
                   filtered: FilteredVocabulary | None = None,
                   initial_population: list | None = None) -> SearchResult:
    """Genetic search for a suffix maximizing similarity to the target text vector.

    Character mode (text_adapter given) evolves strings of suffix_char_len
    characters; token-level fallback (no adapter) evolves suffix_token_len ids
    over the filtered vocabulary. Elite size 1, tournament selection of size 2,
    single-point crossover, per-position mutation at mutation_rate.
    """
    char_mode = text_adapter is not None
    if not char_mode and filtered is None:
        raise ValueError(
            "character mode needs a text adapter; token-level fallback needs a "
            "filtered vocabulary"
        )
    rng = SplitMix64(config.seed)
    prompt_matrix = backend.embed_tokens(list(original_prompt))
    v_text = np.asarray(target_text_vector, dtype=np.float64)

    if char_mode:
        alphabet: Sequence = config.charset
        genome_len = config.suffix_char_len

        def to_matrix(genome):
            ids = text_adapter.encode("".join(genome))
            return backend.embed_tokens(ids)
    else:
        alphabet = [(i,) for i in filtered.sorted_ids]
        genome_len = config.suffix_token_len

        def to_matrix(genome):
            return backend.embed_tokens([g[0] for g in genome])

    def random_genome():
        return tuple(rng.choose(alphabet) for _ in range(genome_len))

    def fitness(genome) -> float:
        return -_text_loss(backend, prompt_matrix, to_matrix(genome), v_text)

    population = [tuple(g) for g in (initial_population or [])]
    while len(population) < config.candidates_per_generation:
        population.append(random_genome())
    population = population[: config.candidates_per_generation]

    best_genome, best_fit = None, -np.inf
    trace: list[float] = []
    for _ in range(config.generations):
        scored = [(fitness(g), g) for g in population]
        for fit, g in scored:
            if fit > best_fit:
                best_fit, best_genome = fit, g
        trace.append(-best_fit)
        elite = max(scored, key=lambda fg: fg[0])[1]

        def tournament():
            a = scored[rng.next_index(len(scored))]
            b = scored[rng.next_index(len(scored))]
            return a[1] if a[0] >= b[0] else b[1]

        children = [elite]
        while len(children) < config.candidates_per_generation:
            p1, p2 = tournament(), tournament()
            cut = rng.next_index(genome_len - 1) + 1 if genome_len > 1 else 0
            child = list(p1[:cut] + p2[cut:]) if genome_len > 1 else list(p1)
            for k in range(genome_len):
                if rng.next_chance(config.mutation_rate):
                    child[k] = rng.choose(alphabet)
            children.append(tuple(child))
        population = children

    if char_mode:
        return SearchResult(suffix_tokens=None, suffix_text="".join(best_genome),
                            best_loss=-best_fit, loss_trace=trace)
    return SearchResult(suffix_tokens=[g[0] for g in best_genome], suffix_text=None,
                        best_loss=-best_fit, loss_trace=trace)


def gcg_attack(backend: EncoderBackend, original_prompt: Sequence[int],
               target_text_vector: np.ndarray, config: GcgConfig,
               filtered: FilteredVocabulary) -> SearchResult:
    """Greedy coordinate gradient over single-token substitutions.

    Per step: take the loss gradient with respect to each suffix row, rank
    allowed replacements per position by the linearized loss change
    g_i . (psi_j - row_i), pool the per-position top-k, evaluate a sampled
    subset exactly, and accept the best substitution only if it improves.
    """
    codebook = backend.codebook
    prompt_ids = list(original_prompt)
    prompt_matrix = backend.embed_tokens(prompt_ids)
    v_text = np.asarray(target_text_vector, dtype=np.float64)
    allowed = list(filtered.sorted_ids)
    rng = SplitMix64(config.seed)

    suffix = [allowed[rng.next_index(len(allowed))] for _ in range(config.m)]

    def exact_loss(ids: list[int]) -> float:
        return _text_loss(backend, prompt_matrix, backend.embed_tokens(ids), v_text)

    def suffix_grad(ids: list[int]) -> np.ndarray:
        full = np.vstack([prompt_matrix, backend.embed_tokens(ids)])
        result = backend.encode_text(full)
        _, g_cos = _cos_grad(result.v, v_text)
        return result.vjp(-g_cos)[len(prompt_ids):]

    current_loss = exact_loss(suffix)
    trace = [current_loss]
    sub64 = codebook.rows(allowed)

    for _ in range(config.steps):
        grad = suffix_grad(suffix)
        pool: list[tuple[int, int]] = []
        for pos in range(config.m):
            deltas = (sub64 - codebook.row(suffix[pos])) @ grad[pos]
            order = np.argsort(deltas, kind="stable")[: config.top_k_coordinates]
            pool.extend((pos, allowed[int(j)]) for j in order)
        if config.candidates_per_step >= len(pool):
            candidates = pool
        else:
            picks = []
            remaining = list(pool)
            for _ in range(config.candidates_per_step):
                picks.append(remaining.pop(rng.next_index(len(remaining))))
            candidates = picks
        best_cand, best_cand_loss = None, current_loss
        for pos, token in candidates:
            trial = list(suffix)
            trial[pos] = token
            loss = exact_loss(trial)
            if loss < best_cand_loss:
                best_cand, best_cand_loss = (pos, token), loss
        if best_cand is not None:
            suffix[best_cand[0]] = best_cand[1]
            current_loss = best_cand_loss
        trace.append(current_loss)

    return SearchResult(suffix_tokens=suffix, suffix_text=None,
                        best_loss=current_loss, loss_trace=trace)


def _cos_grad(v: np.ndarray, t: np.ndarray) -> tuple[float, np.ndarray]:
    nv = float(np.linalg.norm(v))
    nt = float(np.linalg.norm(t))
    c = float(np.dot(v, t) / (nv * nt))
    return c, t / (nv * nt) - c * v / (nv * nv)
