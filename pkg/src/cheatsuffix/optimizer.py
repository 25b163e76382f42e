"""Straight-through suffix optimization.

The suffix lives as a continuous matrix Z (one row per suffix token). Each
iteration projects Z row-wise onto the nearest allowed codebook rows, encodes
the original prompt concatenated with the projected rows, evaluates the
multi-modal loss, and takes one Adam step on Z using the straight-through
gradient: the derivative with respect to the projected matrix is passed to Z
unchanged. The best projected suffix seen before each step is what gets
decoded at the end; the post-final-update Z is never evaluated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .backends import EncoderBackend
from .codebook import Codebook, FilteredVocabulary, cosine, sample_token_ids
from .objective import TargetVectors, mmp_loss_grad

INIT_METHODS = ("eos", "random", "synonym")


@dataclass
class AttackConfig:
    m: int = 4
    lam: float = 0.1
    learning_rate: float = 0.001
    iterations: int = 10000
    init_method: str = "synonym"
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    trace_every: int = 1

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.init_method not in INIT_METHODS:
            raise ValueError(f"init_method must be one of {INIT_METHODS}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.trace_every < 1:
            raise ValueError("trace_every must be >= 1")


@dataclass
class SuffixState:
    Z: np.ndarray
    best_Z: np.ndarray
    best_loss: float
    iteration: int
    loss_trace: list[float] = field(default_factory=list)


class Projection(NamedTuple):
    embeddings: np.ndarray
    token_ids: tuple[int, ...]
    straight_through: bool


def project(Z: np.ndarray, codebook: Codebook, allowed) -> Projection:
    """Row-wise nearest allowed codebook row; gradients pass through unchanged.

    Forward value of row i is the codebook row minimizing squared distance to
    Z_i (ties to the lowest id). The straight_through flag records the
    gradient contract: dL/dZ equals dL/d(embeddings).
    """
    ids = sorted(set(allowed))
    if not ids:
        raise ValueError("project: allowed set is empty")
    Z = np.asarray(Z, dtype=np.float64)
    sub = codebook.rows(ids)
    token_ids = []
    for i in range(Z.shape[0]):
        diffs = sub - Z[i]
        d2 = np.sum(diffs * diffs, axis=1)
        token_ids.append(ids[int(np.argmin(d2))])
    return Projection(codebook.rows(token_ids), tuple(token_ids), True)


def initialize(method: str, m: int, codebook: Codebook, filtered: FilteredVocabulary,
               target: int, seed: int, eos_token_id: int | None = None) -> np.ndarray:
    """Initial Z: eos rows, random allowed rows, or the target's best allowed synonym."""
    if method == "eos":
        if eos_token_id is None:
            raise ValueError("eos initialization requires a backend end-of-string token")
        return np.tile(codebook.row(eos_token_id), (m, 1))
    if method == "random":
        ids = sample_token_ids(filtered, m, seed)
        return codebook.rows(ids).copy()
    if method == "synonym":
        t_row = codebook.row(target)
        best_id, best_score = None, -np.inf
        for j in filtered.sorted_ids:
            score = cosine(t_row, codebook.row(j))
            if score > best_score:
                best_id, best_score = j, score
        if best_id is None:
            raise ValueError("initialize: allowed set is empty")
        return np.tile(codebook.row(best_id), (m, 1))
    raise ValueError(f"unknown init method '{method}'")


def loss_and_grad(backend: EncoderBackend, prompt_matrix: np.ndarray, P: np.ndarray,
                  targets: TargetVectors) -> tuple[float, np.ndarray]:
    """Loss of the post-projection path and its gradient with respect to P.

    The path is P -> encode_text(prompt_rows ++ P) -> multi-modal loss; this is
    the smooth function the straight-through estimator differentiates.
    """
    full = np.vstack([prompt_matrix, P])
    result = backend.encode_text(full)
    loss, dv = mmp_loss_grad(result.v, targets)
    g_full = result.vjp(dv)
    return loss, g_full[prompt_matrix.shape[0]:]


def optimize(backend: EncoderBackend, original_prompt, targets: TargetVectors,
             config: AttackConfig, filtered: FilteredVocabulary) -> tuple[list[int], SuffixState]:
    """Run the straight-through suffix search and decode the best suffix.

    Control flow: per iteration, project Z, evaluate the loss, update the best
    (before the gradient step), then take one Adam step on Z with the
    straight-through gradient. With iterations == 0 the decoded initialization
    is returned and best_loss comes from a single evaluation of the initial Z.
    """
    prompt_ids = list(original_prompt)
    if len(prompt_ids) + config.m > backend.max_prompt_len:
        raise ValueError(
            f"prompt length {len(prompt_ids)} + suffix {config.m} exceeds "
            f"max_prompt_len {backend.max_prompt_len}"
        )
    if targets.v_text.shape != (backend.d_emb,):
        raise ValueError("targets were built for a different backend dimension")
    codebook = backend.codebook
    prompt_matrix = backend.embed_tokens(prompt_ids)
    targets = targets.with_lambda(config.lam) if targets.lam != config.lam else targets

    Z = initialize(config.init_method, config.m, codebook, filtered, targets.target,
                   config.seed, eos_token_id=backend.eos_token_id)
    Z = Z.astype(np.float64)

    state = SuffixState(Z=Z, best_Z=Z.copy(), best_loss=np.inf, iteration=0)

    if config.iterations == 0:
        proj = project(Z, codebook, filtered.allowed_ids)
        loss, _ = loss_and_grad(backend, prompt_matrix, proj.embeddings, targets)
        state.best_loss = loss
        state.loss_trace.append(loss)
        return list(proj.token_ids), state

    m1 = np.zeros_like(Z)
    m2 = np.zeros_like(Z)
    lr, b1, b2, eps = config.learning_rate, config.beta1, config.beta2, config.epsilon

    for it in range(1, config.iterations + 1):
        proj = project(Z, codebook, filtered.allowed_ids)
        loss, gZ = loss_and_grad(backend, prompt_matrix, proj.embeddings, targets)
        if not np.isfinite(loss):
            raise RuntimeError(f"non-finite loss at iteration {it}")
        state.loss_trace.append(loss)
        if state.best_loss > loss:
            state.best_loss = loss
            state.best_Z = Z.copy()
        # straight-through: gZ is the gradient w.r.t. the projected rows
        m1 = b1 * m1 + (1.0 - b1) * gZ
        m2 = b2 * m2 + (1.0 - b2) * gZ * gZ
        mhat = m1 / (1.0 - b1**it)
        vhat = m2 / (1.0 - b2**it)
        Z = Z - lr * mhat / (np.sqrt(vhat) + eps)
        state.iteration = it

    state.Z = Z
    decoded = project(state.best_Z, codebook, filtered.allowed_ids)
    return list(decoded.token_ids), state
