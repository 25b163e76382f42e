"""Encoder backends: token embedder, text encoder and image encoder behind one
interface with an explicit reverse-mode gradient contract.

A backend bundles the codebook-driven token embedder, a text encoder mapping a
token-embedding matrix to a d_emb vector (returned together with its
vector-Jacobian product), and an image encoder mapping backend-specific image
handles to d_emb vectors. The deterministic reference backend makes every
optimizer property checkable at desk scale; pretrained contrastive encoders
plug in as external adapters validated through conformance files.
"""

from __future__ import annotations

import json
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .codebook import Codebook, Vocabulary, cosine
from .seeding import seeded_matrix, seeded_uniform  # noqa: F401  (re-exported)

REFERENCE_VOCAB_SIZE = 64
REFERENCE_D_TOKEN = 8
REFERENCE_D_EMB = 16
REFERENCE_MAX_PROMPT_LEN = 32
REFERENCE_PSI_SEED = 1
REFERENCE_WEIGHT_SEED = 2
REFERENCE_EOS_TOKEN_ID = 63


@dataclass
class TextEncodeResult:
    """Text embedding plus its reverse-mode gradient hook.

    vjp maps an upstream d_emb gradient to the |s| x d_token gradient with
    respect to the input token-embedding matrix; it is linear and maps the
    zero vector to the zero matrix.
    """

    v: np.ndarray
    vjp: Callable[[np.ndarray], np.ndarray]


class EncoderBackend(ABC):
    """Interface housing the token embedder, text encoder and image encoder."""

    name: str
    codebook: Codebook
    d_token: int
    d_emb: int
    max_prompt_len: int
    eos_token_id: int | None

    def embed_tokens(self, token_ids) -> np.ndarray:
        """|s| x d_token matrix with row i equal to the codebook row of token i."""
        ids = list(token_ids)
        for i in ids:
            if not 0 <= i < self.codebook.size:
                raise ValueError(f"token id {i} out of range for backend '{self.name}'")
        return self.codebook.rows(ids)

    @abstractmethod
    def encode_text(self, token_matrix: np.ndarray) -> TextEncodeResult:
        ...

    @abstractmethod
    def encode_image(self, image: Any) -> np.ndarray:
        ...

    @abstractmethod
    def target_prompt_tokens(self, target: int) -> list[int]:
        """Token ids of the canonical photo-style prompt naming the target."""
        ...


class ReferenceBackend(EncoderBackend):
    """Fully specified desk-scale backend.

    64 word-final tokens "tok00".."tok63", d_token 8, d_emb 16. The codebook
    and the text-encoder weight matrix regenerate bit-identically from seeds
    1 and 2 of the documented generator. Text encoding is tanh(W . meanpool);
    images are d_emb vectors and encode to themselves.
    """

    name = "reference"

    def __init__(self):
        vocab = Vocabulary([(f"tok{i:02d}", True) for i in range(REFERENCE_VOCAB_SIZE)])
        psi = seeded_matrix(REFERENCE_PSI_SEED, REFERENCE_VOCAB_SIZE, REFERENCE_D_TOKEN)
        self.codebook = Codebook(psi, vocab)
        self.weight = seeded_matrix(REFERENCE_WEIGHT_SEED, REFERENCE_D_EMB, REFERENCE_D_TOKEN)
        self._w64 = self.weight.astype(np.float64)
        self.d_token = REFERENCE_D_TOKEN
        self.d_emb = REFERENCE_D_EMB
        self.max_prompt_len = REFERENCE_MAX_PROMPT_LEN
        self.eos_token_id = REFERENCE_EOS_TOKEN_ID

    def encode_text(self, token_matrix: np.ndarray) -> TextEncodeResult:
        P = np.asarray(token_matrix, dtype=np.float64)
        if P.ndim != 2 or P.shape[1] != self.d_token:
            raise ValueError(f"token matrix must be |s| x {self.d_token}")
        n = P.shape[0]
        if n == 0:
            raise ValueError("empty prompt")
        if n > self.max_prompt_len:
            raise ValueError(f"prompt length {n} exceeds max_prompt_len {self.max_prompt_len}")
        u = P.mean(axis=0)
        v = np.tanh(self._w64 @ u)
        w64 = self._w64

        def vjp(g: np.ndarray) -> np.ndarray:
            g = np.asarray(g, dtype=np.float64)
            if g.shape != (self.d_emb,):
                raise ValueError(f"upstream gradient must have shape ({self.d_emb},)")
            row = (w64.T @ (g * (1.0 - v * v))) / n
            return np.tile(row, (n, 1))

        return TextEncodeResult(v=v, vjp=vjp)

    def encode_image(self, image: Any) -> np.ndarray:
        vec = np.asarray(image, dtype=np.float64)
        if vec.shape != (self.d_emb,):
            raise ValueError(f"reference image handle must be a {self.d_emb}-vector")
        if not np.all(np.isfinite(vec)):
            raise ValueError("reference image handle contains non-finite values")
        return vec.copy()

    def target_prompt_tokens(self, target: int) -> list[int]:
        if not 0 <= target < self.codebook.size:
            raise ValueError(f"target id {target} out of range")
        # fixed convention standing for "a photo of <target>"
        return [1, 2, 3, target]


_BACKEND_FACTORIES: dict[str, Callable[[], EncoderBackend]] = {
    "reference": ReferenceBackend,
}


def register_backend(name: str, factory: Callable[[], EncoderBackend]) -> None:
    """Hook for external encoder adapters (pretrained contrastive models)."""
    _BACKEND_FACTORIES[name] = factory


def available_backends() -> list[str]:
    return sorted(_BACKEND_FACTORIES)


def build_backend(name: str) -> EncoderBackend:
    try:
        factory = _BACKEND_FACTORIES[name]
    except KeyError:
        raise ValueError(
            f"unknown backend '{name}'; available: {', '.join(available_backends())}"
        ) from None
    return factory()


# --- adapter conformance files -------------------------------------------------

COSINE_DISTANCE_TOL = 1e-5


def write_conformance(backend: EncoderBackend, path: str | Path,
                      text_token_lists: list[list[int]] | None = None,
                      image_handles: list | None = None,
                      special_token_policy: str = "") -> None:
    """Emit the backend's conformance file with golden input/output pairs."""
    text_pairs = []
    for tokens in text_token_lists or []:
        v = backend.encode_text(backend.embed_tokens(tokens)).v
        text_pairs.append({"tokens": list(tokens), "embedding": [float(x) for x in v]})
    image_pairs = []
    for handle in image_handles or []:
        v = backend.encode_image(handle)
        image_pairs.append({"handle": handle, "embedding": [float(x) for x in v]})
    doc = {
        "backend": backend.name,
        "d_token": backend.d_token,
        "d_emb": backend.d_emb,
        "max_prompt_len": backend.max_prompt_len,
        "special_token_policy": special_token_policy,
        "text_pairs": text_pairs,
        "image_pairs": image_pairs,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def check_conformance(backend: EncoderBackend, path: str | Path) -> list[str]:
    """Validate a backend against a conformance file; returns failure messages."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    failures = []
    for key, got in (("d_token", backend.d_token), ("d_emb", backend.d_emb),
                     ("max_prompt_len", backend.max_prompt_len)):
        if doc.get(key) != got:
            failures.append(f"{key}: file says {doc.get(key)}, backend has {got}")
    for pair in doc.get("text_pairs", []):
        v = backend.encode_text(backend.embed_tokens(pair["tokens"])).v
        dist = 1.0 - cosine(v, np.array(pair["embedding"]))
        if dist > COSINE_DISTANCE_TOL:
            failures.append(f"text tokens {pair['tokens']}: cosine distance {dist:.3g}")
    for pair in doc.get("image_pairs", []):
        v = backend.encode_image(pair["handle"])
        dist = 1.0 - cosine(v, np.array(pair["embedding"]))
        if dist > COSINE_DISTANCE_TOL:
            failures.append(f"image golden: cosine distance {dist:.3g}")
    return failures
