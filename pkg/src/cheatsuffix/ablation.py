"""Ablation harnesses: weighting-factor sweep and initialization comparison.

Both run the suffix optimizer over seeded benchmark instances and emit CSV
rows, one per configuration, so the effect of the text-modality weight and of
the initialization method can be read off directly.
"""

from __future__ import annotations

import csv
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .backends import EncoderBackend
from .benchmark import BenchmarkInstance
from .optimizer import AttackConfig, INIT_METHODS, optimize

DEFAULT_LAMBDAS = (0.0, 0.001, 0.01, 0.1, 0.25, 0.5, 0.75, 1.0)


def lambda_sweep(backend: EncoderBackend, instances: Sequence[BenchmarkInstance],
                 base_config: AttackConfig,
                 lambdas: Sequence[float] = DEFAULT_LAMBDAS) -> list[dict]:
    """One row per weighting factor, averaged over the instances.

    The zero-weight run uses only the image-modality prior and is labelled
    "imp"; every other row is the full multi-modal attack, "mmp".
    """
    rows = []
    for lam in lambdas:
        losses, suffixes = [], []
        for inst in instances:
            config = replace(base_config, lam=lam, seed=inst.seed)
            targets = inst.targets.with_lambda(lam)
            suffix, state = optimize(backend, inst.prompt_ids, targets, config,
                                     inst.filtered)
            losses.append(state.best_loss)
            suffixes.append(suffix)
        rows.append({
            "lambda": lam,
            "method": "imp" if lam == 0.0 else "mmp",
            "mean_best_loss": float(np.mean(losses)),
            "suffixes": suffixes,
        })
    return rows


def init_comparison(backend: EncoderBackend, instances: Sequence[BenchmarkInstance],
                    base_config: AttackConfig,
                    methods: Sequence[str] = INIT_METHODS) -> list[dict]:
    """Mean final loss per initialization method over the instances."""
    rows = []
    for method in methods:
        losses = []
        for inst in instances:
            config = replace(base_config, init_method=method, seed=inst.seed)
            targets = inst.targets.with_lambda(config.lam)
            _, state = optimize(backend, inst.prompt_ids, targets, config, inst.filtered)
            losses.append(state.best_loss)
        rows.append({
            "init": method,
            "mean_best_loss": float(np.mean(losses)),
            "losses": losses,
        })
    return rows


def write_sweep_csv(path: str | Path, rows: list[dict],
                    header_lines: Sequence[str] = ()) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        for line in header_lines:
            f.write(f"# {line}\n")
        writer = csv.writer(f)
        writer.writerow(["lambda", "method", "mean_best_loss", "suffixes"])
        for row in rows:
            suffixes = ";".join(",".join(str(t) for t in s) for s in row["suffixes"])
            writer.writerow([repr(float(row["lambda"])), row["method"],
                             repr(row["mean_best_loss"]), suffixes])


def write_init_csv(path: str | Path, rows: list[dict],
                   header_lines: Sequence[str] = ()) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        for line in header_lines:
            f.write(f"# {line}\n")
        writer = csv.writer(f)
        writer.writerow(["init", "mean_best_loss"])
        for row in rows:
            writer.writerow([row["init"], repr(row["mean_best_loss"])])
