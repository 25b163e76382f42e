"""Artifact persistence: canonical JSON result files.

Every artifact embeds the resolved run configuration and a format version.
Serialization is canonical (sorted keys, fixed separators, repr floats) so
identical runs produce byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

FORMAT_VERSION = 1


def canonical_json(payload: dict) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_artifact(path: str | Path, payload: dict, config: dict) -> None:
    doc = dict(payload)
    doc["format_version"] = FORMAT_VERSION
    doc["config"] = config
    Path(path).write_text(canonical_json(doc), encoding="utf-8")


def attack_result(method: str, backend_name: str, suffix_token_ids: list[int] | None,
                  suffix_surfaces: list[str] | None, best_loss: float | None,
                  loss_trace: list[float], trace_every: int = 1,
                  suffix_text: str | None = None,
                  wall_clock_seconds: float | None = None) -> dict:
    """Attack result payload shared by the optimizer and every baseline."""
    trace = loss_trace[::trace_every] if trace_every > 1 else list(loss_trace)
    return {
        "method": method,
        "backend": backend_name,
        "suffix_token_ids": suffix_token_ids,
        "suffix_surfaces": suffix_surfaces,
        "suffix_text": suffix_text,
        "best_loss": best_loss,
        "loss_trace": trace,
        "trace_every": trace_every,
        "wall_clock_seconds": wall_clock_seconds,
    }


def config_header_lines(config: dict) -> list[str]:
    """Comment header embedded into CSV artifacts."""
    return [
        f"format_version: {FORMAT_VERSION}",
        "config: " + json.dumps(config, sort_keys=True, ensure_ascii=False),
    ]


def load_artifact(path: str | Path) -> dict[str, Any]:
    return json.loads(Path(path).read_text(encoding="utf-8"))
