"""Target vectors and the multi-modal loss.

The attack steers the full prompt's text embedding toward two anchors for the
target category: the text embedding of a photo-style prompt naming it, and the
image embedding of a reference image containing it. The loss is

    L = -cos(v, v_image) - lambda * cos(v, v_text)

minimized over the suffix. With lambda = 0 the text term is skipped entirely
(image-prior-only variant), not multiplied by zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .backends import EncoderBackend
from .codebook import cosine


@dataclass(frozen=True)
class TargetVectors:
    v_text: np.ndarray
    v_image: np.ndarray
    target: int
    lam: float

    def __post_init__(self):
        for name, vec in (("v_text", self.v_text), ("v_image", self.v_image)):
            arr = np.asarray(vec, dtype=np.float64)
            if arr.ndim != 1:
                raise ValueError(f"{name} must be a vector")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            if float(np.linalg.norm(arr)) == 0.0:
                raise ValueError(f"{name} has zero norm")
            object.__setattr__(self, name, arr)
        if self.v_text.shape != self.v_image.shape:
            raise ValueError("target vectors have mismatched dimensions")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")

    def with_lambda(self, lam: float) -> "TargetVectors":
        return TargetVectors(self.v_text, self.v_image, self.target, lam)


def build_text_target(backend: EncoderBackend, target: int) -> np.ndarray:
    """Text embedding of the photo-style prompt naming the target category."""
    tokens = backend.target_prompt_tokens(target)
    return backend.encode_text(backend.embed_tokens(tokens)).v


def build_image_target(backend: EncoderBackend, reference_image: Any) -> np.ndarray:
    """Image embedding of a reference image containing the target category.

    The caller asserts the image actually depicts the target and is unrelated
    to the original prompt.
    """
    return backend.encode_image(reference_image)


def build_targets(backend: EncoderBackend, target: int, reference_image: Any,
                  lam: float) -> TargetVectors:
    """Both target vectors for one attack run."""
    return TargetVectors(
        v_text=build_text_target(backend, target),
        v_image=build_image_target(backend, reference_image),
        target=target,
        lam=lam,
    )


def mmp_loss(v: np.ndarray, targets: TargetVectors) -> float:
    """-cos(v, v_image) - lambda * cos(v, v_text); range [-(1+lambda), 1+lambda]."""
    loss = -cosine(v, targets.v_image)
    if targets.lam != 0.0:
        loss -= targets.lam * cosine(v, targets.v_text)
    return loss


def _cosine_grad(v: np.ndarray, t: np.ndarray) -> tuple[float, np.ndarray]:
    nv = float(np.linalg.norm(v))
    nt = float(np.linalg.norm(t))
    c = float(np.dot(v, t) / (nv * nt))
    grad = t / (nv * nt) - c * v / (nv * nv)
    return c, grad


def mmp_loss_grad(v: np.ndarray, targets: TargetVectors) -> tuple[float, np.ndarray]:
    """Loss and its gradient with respect to the prompt embedding v."""
    v = np.asarray(v, dtype=np.float64)
    if float(np.linalg.norm(v)) == 0.0:
        raise ValueError("mmp_loss: v has zero norm")
    c_img, g_img = _cosine_grad(v, targets.v_image)
    loss = -c_img
    grad = -g_img
    if targets.lam != 0.0:
        c_txt, g_txt = _cosine_grad(v, targets.v_text)
        loss -= targets.lam * c_txt
        grad -= targets.lam * g_txt
    return loss, grad
