"""Embedding-space structure analysis: prompt grids, pairwise distances,
cluster-separation statistics, and CSV export for external projection tools."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .backends import EncoderBackend

SUBJECT_SLOT = "{}"


@dataclass(frozen=True)
class GridPrompt:
    text: str
    template_idx: int
    subject_idx: int


@dataclass(frozen=True)
class PromptGrid:
    templates: tuple[str, ...]
    subjects: tuple[str, ...]
    prompts: tuple[GridPrompt, ...]


def build_grid(templates: Sequence[str], subjects: Sequence[str]) -> PromptGrid:
    """Template-major cross product of templates x subjects.

    Each template must contain exactly one subject slot "{}".
    """
    for i, tpl in enumerate(templates):
        if tpl.count(SUBJECT_SLOT) != 1:
            raise ValueError(
                f"template {i} must contain exactly one subject slot '{SUBJECT_SLOT}': {tpl!r}"
            )
    prompts = tuple(
        GridPrompt(tpl.replace(SUBJECT_SLOT, subj), ti, si)
        for ti, tpl in enumerate(templates)
        for si, subj in enumerate(subjects)
    )
    return PromptGrid(tuple(templates), tuple(subjects), prompts)


def embed_grid(backend: EncoderBackend, grid: PromptGrid) -> np.ndarray:
    """Text embeddings of every grid prompt.

    Prompts are tokenized by whitespace-splitting into vocabulary surfaces;
    real subword tokenizers belong to external adapters.
    """
    vocab = backend.codebook.vocab
    rows = []
    for p in grid.prompts:
        ids = vocab.ids_of(p.text.split())
        rows.append(backend.encode_text(backend.embed_tokens(ids)).v)
    return np.vstack(rows)


def pairwise_distances(embeddings: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
    """Symmetric matrix of Euclidean distances with zero diagonal."""
    E = np.asarray(embeddings, dtype=np.float64)
    if E.ndim != 2:
        raise ValueError("embeddings must form a 2-D array")
    if not np.all(np.isfinite(E)):
        raise ValueError("embeddings contain non-finite values")
    n = E.shape[0]
    out = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            d = float(np.linalg.norm(E[i] - E[j]))
            out[i, j] = out[j, i] = d
    return out


@dataclass(frozen=True)
class SeparationStats:
    within_mean: float
    between_mean: float
    ratio: float | None  # None when both means are zero (undefined)


def cluster_separation(embeddings, labels: Sequence) -> SeparationStats:
    """Mean distance over within-label and between-label pairs, plus their ratio.

    Requires at least two labels with at least two members each. A zero
    between-label mean leaves the ratio undefined rather than infinite.
    """
    E = np.asarray(embeddings, dtype=np.float64)
    labels = list(labels)
    if E.shape[0] != len(labels):
        raise ValueError("one label per embedding required")
    counts: dict = {}
    for lab in labels:
        counts[lab] = counts.get(lab, 0) + 1
    if len(counts) < 2 or any(c < 2 for c in counts.values()):
        raise ValueError("need >= 2 labels with >= 2 members each")
    dists = pairwise_distances(E)
    within, between = [], []
    n = len(labels)
    for i in range(n):
        for j in range(i + 1, n):
            (within if labels[i] == labels[j] else between).append(dists[i, j])
    within_mean = float(np.mean(within))
    between_mean = float(np.mean(between))
    if between_mean == 0.0:
        return SeparationStats(within_mean, between_mean, None)
    return SeparationStats(within_mean, between_mean, within_mean / between_mean)


def write_embeddings_csv(path: str | Path, grid: PromptGrid, embeddings: np.ndarray,
                         header_lines: Sequence[str] = ()) -> None:
    """CSV: id,template_idx,subject_idx,label,dim0..dimN (one row per prompt)."""
    E = np.asarray(embeddings)
    with open(path, "w", newline="", encoding="utf-8") as f:
        for line in header_lines:
            f.write(f"# {line}\n")
        writer = csv.writer(f)
        writer.writerow(["id", "template_idx", "subject_idx", "label"]
                        + [f"dim{k}" for k in range(E.shape[1])])
        for i, p in enumerate(grid.prompts):
            writer.writerow([i, p.template_idx, p.subject_idx,
                             grid.subjects[p.subject_idx]]
                            + [repr(float(x)) for x in E[i]])


def write_distances_csv(path: str | Path, ids: Sequence, matrix: np.ndarray,
                        header_lines: Sequence[str] = ()) -> None:
    """Square distance matrix with prompt ids on both axes."""
    M = np.asarray(matrix)
    with open(path, "w", newline="", encoding="utf-8") as f:
        for line in header_lines:
            f.write(f"# {line}\n")
        writer = csv.writer(f)
        writer.writerow(["id"] + [str(i) for i in ids])
        for i, row_id in enumerate(ids):
            writer.writerow([str(row_id)] + [repr(float(x)) for x in M[i]])
