"""Detection-based attack evaluation.

Images arrive pre-generated from an external source (the harness never invokes
a generator). Per image the harness records a contrastive matching score, an
optional matcher-adapter score, and three binary detector metrics:

    ocndr  original category absent from the detections
    tcdr   target category present
    both   ocndr AND tcdr  (per-image attack success)

Reports aggregate per category pair and across pairs; missing pairs are
skipped and flagged rather than silently dropped.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Protocol, Sequence

import json

import numpy as np

from .backends import EncoderBackend
from .codebook import cosine
from .objective import build_text_target

UNAVAILABLE = "unavailable"


def pair_key(original: str, target: str, applied_original: str | None = None) -> str:
    """Image-source key: "o__t" for the plain protocol, "o__t__o2" for
    universality cells where the (o, t) suffix rides on prompts of o2."""
    if applied_original is None or applied_original == original:
        return f"{original}__{target}"
    return f"{original}__{target}__{applied_original}"


class ImageSource(Protocol):
    label: str

    def __iter__(self) -> Iterator[tuple[str, Any]]:
        """Yields (image_id, handle) in a deterministic order."""
        ...


class ArrayImageSource:
    """In-memory source of embedding-vector image handles (reference backend)."""

    def __init__(self, vectors: Sequence, label: str = "fixture"):
        self.vectors = [np.asarray(v, dtype=np.float64) for v in vectors]
        self.label = label

    def __iter__(self):
        for i, v in enumerate(self.vectors):
            yield f"{self.label}/{i}", v

    def __len__(self):
        return len(self.vectors)


class DirectoryImageSource:
    """Images under <root>/<key>/<index>.png, counts declared by the manifest.

    The manifest (manifest.json at the root) maps source keys to image counts;
    ordering is by integer index, so iteration is deterministic.
    """

    def __init__(self, root: str | Path, key: str, count: int):
        self.root = Path(root)
        self.key = key
        self.count = count
        self.label = key

    def __iter__(self):
        for i in range(self.count):
            path = self.root / self.key / f"{i}.png"
            if not path.exists():
                raise FileNotFoundError(f"missing image {path}")
            yield f"{self.key}/{i}", path

    def __len__(self):
        return self.count


def load_image_manifest(root: str | Path) -> dict[str, DirectoryImageSource]:
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    return {key: DirectoryImageSource(root, key, int(n)) for key, n in manifest.items()}


class Detector(Protocol):
    labels: frozenset[str]

    def detect(self, image: Any) -> set[str]:
        ...


class ScriptedDetector:
    """Mock detector driven by a per-image script.

    The script is either a callable handle -> labels, or a sequence of label
    collections consumed in evaluation order (cycled if shorter than the run).
    """

    def __init__(self, labels: Iterable[str],
                 script: Callable[[Any], Iterable[str]] | Sequence[Iterable[str]]):
        self.labels = frozenset(labels)
        self._script = script
        self._cursor = 0

    def detect(self, image: Any) -> set[str]:
        if callable(self._script):
            out = set(self._script(image))
        else:
            out = set(self._script[self._cursor % len(self._script)])
            self._cursor += 1
        stray = out - self.labels
        if stray:
            raise ValueError(f"scripted detection outside declared label set: {sorted(stray)}")
        return out


class MatcherAdapter(Protocol):
    def score(self, image: Any, target: str) -> float:
        ...


class ConstantMatcher:
    """Test matcher returning a fixed score."""

    def __init__(self, value: float):
        self.value = value

    def score(self, image, target) -> float:
        return self.value


@dataclass
class EvalRecord:
    image_id: str
    clip_score: float
    matcher_score: float | None
    ocndr: int
    tcdr: int
    both: int


@dataclass
class EvalReport:
    original: str
    target: str
    records: list[EvalRecord]
    aggregates: dict
    mode: str = "grey-box"

    def to_dict(self) -> dict:
        return {
            "pair": {"original": self.original, "target": self.target},
            "records": [
                {
                    "image": r.image_id,
                    "clip": r.clip_score,
                    "matcher": UNAVAILABLE if r.matcher_score is None else r.matcher_score,
                    "ocndr": r.ocndr,
                    "tcdr": r.tcdr,
                    "both": r.both,
                }
                for r in self.records
            ],
            "aggregates": self.aggregates,
            "mode": self.mode,
        }


@dataclass
class ProtocolReport:
    reports: list[EvalReport]
    aggregate: dict
    skipped: list[dict] = field(default_factory=list)
    partial: bool = False
    mode: str = "grey-box"

    def to_dict(self) -> dict:
        return {
            "pairs": [r.to_dict() for r in self.reports],
            "aggregates": self.aggregate,
            "skipped": self.skipped,
            "partial": self.partial,
            "mode": self.mode,
        }


def clip_score(backend: EncoderBackend, image: Any, target: int) -> float:
    """Cosine between the image embedding and the target's photo-prompt embedding."""
    return cosine(backend.encode_image(image), build_text_target(backend, target))


def matcher_score(matcher: MatcherAdapter | None, image: Any, target: str) -> float | None:
    """Adapter score recorded verbatim; None marks the metric unavailable."""
    if matcher is None:
        return None
    return float(matcher.score(image, target))


def detection_metrics(detector: Detector, image: Any, original: str,
                      target: str) -> tuple[int, int, int]:
    """(ocndr, tcdr, both) for one image."""
    for cat in (original, target):
        if cat not in detector.labels:
            raise ValueError(f"category '{cat}' not in detector label set")
    detected = detector.detect(image)
    ocndr = int(original not in detected)
    tcdr = int(target in detected)
    return ocndr, tcdr, ocndr * tcdr


def aggregate_records(records: list[EvalRecord]) -> dict:
    if not records:
        return {"clip": None, "matcher": UNAVAILABLE, "ocndr": None, "tcdr": None,
                "both": None, "count": 0}
    matcher_vals = [r.matcher_score for r in records if r.matcher_score is not None]
    return {
        "clip": float(np.mean([r.clip_score for r in records])),
        "matcher": float(np.mean(matcher_vals)) if matcher_vals else UNAVAILABLE,
        "ocndr": float(np.mean([r.ocndr for r in records])),
        "tcdr": float(np.mean([r.tcdr for r in records])),
        "both": float(np.mean([r.both for r in records])),
        "count": len(records),
    }


def evaluate_pair(backend: EncoderBackend, source: ImageSource, detector: Detector,
                  original: str, target: str, matcher: MatcherAdapter | None = None,
                  mode: str = "grey-box") -> EvalReport:
    """Score every image from one source against one (original, target) pair."""
    target_id = backend.codebook.vocab.id_of(target)
    if target_id is None:
        raise ValueError(f"target category '{target}' not in backend vocabulary")
    records = []
    for image_id, handle in source:
        ocndr, tcdr, both = detection_metrics(detector, handle, original, target)
        records.append(EvalRecord(
            image_id=image_id,
            clip_score=clip_score(backend, handle, target_id),
            matcher_score=matcher_score(matcher, handle, target),
            ocndr=ocndr, tcdr=tcdr, both=both,
        ))
    return EvalReport(original, target, records, aggregate_records(records), mode=mode)


def run_protocol(suffixes: dict[tuple[str, str], Any], sources: dict[str, ImageSource],
                 detector: Detector, backend: EncoderBackend,
                 matcher: MatcherAdapter | None = None,
                 mode: str = "grey-box") -> ProtocolReport:
    """Evaluate every configured pair; missing sources get skipped, not faked.

    `suffixes` maps (original, target) category pairs to the suffix that
    produced the images (provenance metadata; scoring reads only the images).
    """
    reports, skipped, all_records = [], [], []
    for (original, target) in sorted(suffixes):
        key = pair_key(original, target)
        source = sources.get(key)
        if source is None:
            skipped.append({"pair": key, "reason": "no image source"})
            continue
        report = evaluate_pair(backend, source, detector, original, target,
                               matcher=matcher, mode=mode)
        reports.append(report)
        all_records.extend(report.records)
    return ProtocolReport(
        reports=reports,
        aggregate=aggregate_records(all_records),
        skipped=skipped,
        partial=bool(skipped),
        mode=mode,
    )


def universality_matrix(suffixes: dict[tuple[str, str], Any],
                        sources: dict[str, ImageSource], detector: Detector,
                        backend: EncoderBackend,
                        categories: Sequence[str]) -> dict:
    """Cross-prompt success grid.

    Cell (original o, target t) averages the per-image success indicator over
    the other categories o2 (o2 not in {o, t}) whose prompts carried the (o, t)
    suffix; the diagonal is undefined. Cells with no usable sources are None.
    """
    cats = list(categories)
    matrix: list[list[float | None]] = []
    for o in cats:
        row: list[float | None] = []
        for t in cats:
            if o == t or (o, t) not in suffixes:
                row.append(None)
                continue
            values: list[int] = []
            for o2 in cats:
                if o2 in (o, t):
                    continue
                source = sources.get(pair_key(o, t, applied_original=o2))
                if source is None:
                    continue
                for _, handle in source:
                    _, _, both = detection_metrics(detector, handle, o2, t)
                    values.append(both)
            row.append(float(np.mean(values)) if values else None)
        matrix.append(row)
    return {"categories": cats, "both": matrix}


def transfer_eval(suffix_surfaces: dict[tuple[str, str], Sequence[str]],
                  backend: EncoderBackend, sources: dict[str, ImageSource],
                  detector: Detector,
                  matcher: MatcherAdapter | None = None) -> ProtocolReport:
    """Cross-model run: re-tokenize suffix surfaces on this backend, then score.

    Pairs whose surfaces the backend vocabulary cannot represent are skipped
    with a reason instead of silently scoring.
    """
    vocab = backend.codebook.vocab
    usable: dict[tuple[str, str], list[int]] = {}
    pre_skipped = []
    for pair, surfaces in sorted(suffix_surfaces.items()):
        try:
            usable[pair] = vocab.ids_of(surfaces)
        except KeyError as exc:
            pre_skipped.append({"pair": pair_key(*pair), "reason": str(exc)})
    report = run_protocol(usable, sources, detector, backend, matcher=matcher,
                          mode="transfer")
    report.skipped = pre_skipped + report.skipped
    report.partial = bool(report.skipped)
    return report
