"""Vocabulary and embedding-codebook primitives.

The codebook is the |V| x d_token matrix whose row j is the embedding of
token j. This module owns cosine similarity, naturalness filtering (word-final
tokens minus the top-k nearest neighbours of the target category) and
nearest-row search, plus the on-disk formats for both structures.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from collections.abc import Iterable, Sequence
from pathlib import Path

import numpy as np

CODEBOOK_MAGIC = b"MMPC"
CODEBOOK_VERSION = 1


@dataclass(frozen=True)
class VocabEntry:
    surface: str
    word_final: bool


class Vocabulary:
    """Ordered token table; a token's id is its position."""

    def __init__(self, entries: Sequence[tuple[str, bool]] | Sequence[VocabEntry]):
        norm = []
        for e in entries:
            if isinstance(e, VocabEntry):
                norm.append(e)
            else:
                surface, word_final = e
                norm.append(VocabEntry(str(surface), bool(word_final)))
        surfaces = [e.surface for e in norm]
        if len(set(surfaces)) != len(surfaces):
            dupes = sorted({s for s in surfaces if surfaces.count(s) > 1})
            raise ValueError(f"duplicate vocabulary surfaces: {dupes}")
        self.entries: tuple[VocabEntry, ...] = tuple(norm)
        self._by_surface = {e.surface: i for i, e in enumerate(self.entries)}

    def __len__(self) -> int:
        return len(self.entries)

    def surface(self, token_id: int) -> str:
        return self.entries[token_id].surface

    def word_final(self, token_id: int) -> bool:
        return self.entries[token_id].word_final

    def id_of(self, surface: str) -> int | None:
        return self._by_surface.get(surface)

    def ids_of(self, surfaces: Iterable[str]) -> list[int]:
        """Look up several surfaces; raises listing every missing one."""
        ids, missing = [], []
        for s in surfaces:
            i = self._by_surface.get(s)
            if i is None:
                missing.append(s)
            else:
                ids.append(i)
        if missing:
            raise KeyError(f"surfaces not in vocabulary: {missing}")
        return ids

    def word_final_ids(self) -> list[int]:
        return [i for i, e in enumerate(self.entries) if e.word_final]

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        entries = []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or parts[1] not in ("0", "1"):
                raise ValueError(f"{path}: line {lineno}: expected 'surface<TAB>0|1'")
            entries.append((parts[0], parts[1] == "1"))
        return cls(entries)

    def save(self, path: str | Path) -> None:
        lines = [f"{e.surface}\t{1 if e.word_final else 0}" for e in self.entries]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


class Codebook:
    """Embedding matrix (float32 storage) paired with its vocabulary."""

    def __init__(self, psi: np.ndarray, vocab: Vocabulary):
        psi = np.asarray(psi, dtype=np.float32)
        if psi.ndim != 2 or psi.shape[1] <= 0:
            raise ValueError("codebook matrix must be 2-D with d_token > 0")
        if psi.shape[0] != len(vocab):
            raise ValueError(
                f"codebook rows ({psi.shape[0]}) != vocabulary size ({len(vocab)})"
            )
        if not np.all(np.isfinite(psi)):
            raise ValueError("codebook matrix contains non-finite entries")
        self.psi = psi
        self.vocab = vocab
        # float64 view used by every numeric routine
        self._psi64 = psi.astype(np.float64)

    @property
    def size(self) -> int:
        return self.psi.shape[0]

    @property
    def d_token(self) -> int:
        return self.psi.shape[1]

    def row(self, token_id: int) -> np.ndarray:
        return self._psi64[token_id]

    def rows(self, token_ids: Sequence[int]) -> np.ndarray:
        return self._psi64[list(token_ids)]

    def save_matrix(self, path: str | Path) -> None:
        """Binary matrix file: magic, version u32, rows u32, cols u32, float32 LE row-major."""
        rows, cols = self.psi.shape
        with open(path, "wb") as f:
            f.write(CODEBOOK_MAGIC)
            f.write(struct.pack("<III", CODEBOOK_VERSION, rows, cols))
            f.write(self.psi.astype("<f4").tobytes(order="C"))

    @classmethod
    def load(cls, matrix_path: str | Path, vocab_path: str | Path) -> "Codebook":
        return cls(load_matrix(matrix_path), Vocabulary.load(vocab_path))


def load_matrix(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != CODEBOOK_MAGIC:
        raise ValueError(f"{path}: bad magic, not a codebook file")
    version, rows, cols = struct.unpack("<III", raw[4:16])
    if version != CODEBOOK_VERSION:
        raise ValueError(f"{path}: unsupported codebook version {version}")
    body = raw[16:]
    expected = rows * cols * 4
    if len(body) != expected:
        raise ValueError(f"{path}: payload is {len(body)} bytes, expected {expected}")
    return np.frombuffer(body, dtype="<f4").reshape(rows, cols).copy()


@dataclass(frozen=True)
class FilteredVocabulary:
    """Word-final vocabulary minus the top-k codebook neighbours of the target."""

    allowed_ids: frozenset[int]
    removed_synonyms: tuple[tuple[int, float], ...]
    target_id: int
    sorted_ids: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "sorted_ids", tuple(sorted(self.allowed_ids)))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity a.b / (|a||b|), in [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"cosine: shape mismatch {a.shape} vs {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("cosine: non-finite input")
    na = float(np.linalg.norm(a))
    if na == 0.0:
        raise ValueError("cosine: argument 'a' has zero norm")
    nb = float(np.linalg.norm(b))
    if nb == 0.0:
        raise ValueError("cosine: argument 'b' has zero norm")
    return float(np.dot(a, b) / (na * nb))


def filter_vocabulary(codebook: Codebook, target: int, top_k: int) -> FilteredVocabulary:
    """Keep word-final tokens, then drop the target's top_k nearest word-final tokens.

    Ranking is by descending cosine against the target's codebook row, ties
    broken by lower token id; the target itself scores 1 and is always ranked
    first when word-final.
    """
    if not 0 <= target < codebook.size:
        raise ValueError(f"target id {target} out of range")
    if top_k < 0:
        raise ValueError("top_k must be >= 0")
    word_final = codebook.vocab.word_final_ids()
    if top_k > len(word_final):
        raise ValueError(
            f"top_k {top_k} exceeds word-final vocabulary size {len(word_final)}"
        )
    t_row = codebook.row(target)
    scored = [(j, cosine(t_row, codebook.row(j))) for j in word_final]
    scored.sort(key=lambda js: (-js[1], js[0]))
    removed = tuple(scored[:top_k])
    removed_ids = {j for j, _ in removed}
    allowed = frozenset(j for j in word_final if j not in removed_ids)
    return FilteredVocabulary(allowed, removed, target)


def nearest_token(codebook: Codebook, z: np.ndarray, allowed: Iterable[int]) -> int:
    """Allowed token id whose row minimizes squared distance to z; ties -> lowest id."""
    ids = sorted(set(allowed))
    if not ids:
        raise ValueError("nearest_token: allowed set is empty")
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (codebook.d_token,):
        raise ValueError(f"nearest_token: z has shape {z.shape}, expected ({codebook.d_token},)")
    diffs = codebook.rows(ids) - z
    d2 = np.sum(diffs * diffs, axis=1)
    return ids[int(np.argmin(d2))]


def sample_token_ids(filtered: FilteredVocabulary, count: int, seed: int) -> list[int]:
    """count ids drawn uniformly with replacement from the sorted allowed list.

    Uses the documented generator: each float x maps to index
    floor((x + 1) / 2 * |allowed|).
    """
    from .seeding import SplitMix64

    ids = filtered.sorted_ids
    if not ids:
        raise ValueError("sample_token_ids: allowed set is empty")
    rng = SplitMix64(seed)
    return [ids[rng.next_index(len(ids))] for _ in range(count)]
