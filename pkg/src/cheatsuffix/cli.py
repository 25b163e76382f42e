"""Command-line surface tying the modules into reproducible runs.

Subcommands: filter-vocab, attack, eval, universality, transfer, analyze,
sweep. Option precedence is command line > config file > built-in defaults;
unknown config keys are rejected. Exit codes: 0 success, 1 usage or
configuration error, 2 runtime failure. With a fixed seed and config every
artifact is byte-identical across runs (opt-in --timing breaks this by
recording wall-clock time).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import ablation, analysis, benchmark, evaluation, results
from .backends import EncoderBackend, build_backend
from .baselines import GcgConfig, GeneticConfig, gcg_attack, genetic_attack, random_suffix
from .codebook import Codebook, filter_vocabulary
from .objective import TargetVectors, build_text_target, mmp_loss
from .optimizer import AttackConfig, optimize, project

METHODS = ("mmp", "none", "random", "genetic", "gcg")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1 for usage errors, not argparse's 2
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="cheatsuffix", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def shared(p):
        p.add_argument("--backend", help="encoder backend name (default: reference)")
        p.add_argument("--codebook", help="codebook matrix file")
        p.add_argument("--vocab", help="vocabulary file")
        p.add_argument("--seed", type=int, help="base seed (default: 0)")
        p.add_argument("--out", help="output file or directory")
        p.add_argument("--config", help="JSON config file (flags override it)")

    p = sub.add_parser("filter-vocab", help="write the filtered vocabulary for a target")
    shared(p)
    p.add_argument("--target", help="target category (token id or surface)")
    p.add_argument("--top-k", type=int, dest="top_k", help="synonyms to remove (default: 20)")

    p = sub.add_parser("attack", help="optimize a cheating suffix")
    shared(p)
    p.add_argument("--method", choices=METHODS, help="attack method (default: mmp)")
    p.add_argument("--original-prompt", dest="original_prompt",
                   help="comma-separated token ids or surfaces")
    p.add_argument("--target", help="target category (token id or surface)")
    p.add_argument("--m", type=int, help="suffix token count (default: 4)")
    p.add_argument("--lambda", type=float, dest="lam",
                   help="text-modality weight (default: 0.1)")
    p.add_argument("--lr", type=float, help="learning rate (default: 0.001)")
    p.add_argument("--iters", type=int, help="optimization iterations (default: 10000)")
    p.add_argument("--init", choices=("eos", "random", "synonym"),
                   help="initialization (default: synonym)")
    p.add_argument("--top-k", type=int, dest="top_k", help="synonym filter size (default: 20)")
    p.add_argument("--ref-image", dest="ref_image",
                   help="JSON file with the reference-image vector; "
                        "omitted: synthesized from the seed")
    p.add_argument("--trace-every", type=int, dest="trace_every",
                   help="persist every k-th loss value (default: 1)")
    p.add_argument("--timing", action="store_true", default=None,
                   help="record wall-clock seconds (breaks byte-identical output)")
    p.add_argument("--pairs-file", dest="pairs_file",
                   help="JSON list of {original_prompt, target} for batch runs")
    p.add_argument("--jobs", type=int, help="parallel workers for batch runs (default: 1)")
    p.add_argument("--steps", type=int, help="gcg optimization steps (default: 1000)")
    p.add_argument("--generations", type=int, help="genetic generations (default: 500)")
    p.add_argument("--candidates", type=int,
                   help="genetic candidates per generation (default: 20)")

    p = sub.add_parser("eval", help="score externally generated images")
    shared(p)
    p.add_argument("--pairs", help="comma list original:target,...")
    p.add_argument("--suffixes", help="suffix map JSON (provenance echo)")
    p.add_argument("--fixture", help="mock fixture JSON (sources, detector, matcher)")
    p.add_argument("--images", help="image directory with manifest.json")

    p = sub.add_parser("universality", help="cross-prompt success grid")
    shared(p)
    p.add_argument("--categories", help="comma list of categories")
    p.add_argument("--suffixes", help="suffix map JSON")
    p.add_argument("--fixture", help="mock fixture JSON")

    p = sub.add_parser("transfer", help="re-tokenize suffixes on another backend and score")
    shared(p)
    p.add_argument("--pairs", help="comma list original:target,...")
    p.add_argument("--suffixes", help="suffix map JSON with surfaces")
    p.add_argument("--fixture", help="mock fixture JSON")

    p = sub.add_parser("analyze", help="prompt-grid embedding analysis")
    shared(p)
    p.add_argument("--templates", help="template file, one per line, subject slot {}")
    p.add_argument("--subjects", help="comma list of subject surfaces")

    p = sub.add_parser("sweep", help="weighting-factor and initialization ablation")
    shared(p)
    p.add_argument("--lambdas", help="comma list of weighting factors")
    p.add_argument("--inits", help="comma list of init methods")
    p.add_argument("--num-seeds", type=int, dest="num_seeds",
                   help="benchmark instances per row (default: 3)")
    p.add_argument("--m", type=int, help="suffix token count (default: 2)")
    p.add_argument("--iters", type=int, help="iterations per run (default: 2000)")
    p.add_argument("--lr", type=float, help="learning rate (default: 0.05)")

    return parser


_SHARED_DEFAULTS = {"backend": "reference", "seed": 0, "out": None,
                    "codebook": None, "vocab": None}

_DEFAULTS: dict[str, dict] = {
    "filter-vocab": {**_SHARED_DEFAULTS, "target": "5", "top_k": 20},
    "attack": {
        **_SHARED_DEFAULTS, "method": "mmp", "target": "5",
        "original_prompt": "", "m": 4, "lam": 0.1, "lr": 0.001, "iters": 10000,
        "init": "synonym", "top_k": 20, "ref_image": None, "trace_every": 1,
        "timing": False, "pairs_file": None, "jobs": 1, "steps": 1000,
        "generations": 500, "candidates": 20,
    },
    "eval": {**_SHARED_DEFAULTS, "pairs": "", "suffixes": None,
             "fixture": None, "images": None},
    "universality": {**_SHARED_DEFAULTS, "categories": "",
                     "suffixes": None, "fixture": None},
    "transfer": {**_SHARED_DEFAULTS, "pairs": "", "suffixes": None, "fixture": None},
    "analyze": {**_SHARED_DEFAULTS, "templates": None, "subjects": ""},
    "sweep": {**_SHARED_DEFAULTS, "lambdas": None, "inits": None,
              "num_seeds": 3, "m": 2, "iters": 2000, "lr": 0.05},
}


def _resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults < config file < explicit flags; reject unknown file keys."""
    command = args.command
    resolved = dict(_DEFAULTS[command])
    resolved["command"] = command
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        try:
            file_cfg = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path}: {exc}") from None
        unknown = sorted(set(file_cfg) - set(_DEFAULTS[command]))
        if unknown:
            raise UsageError(f"unknown config keys for '{command}': {unknown}")
        resolved.update(file_cfg)
    for key in _DEFAULTS[command]:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    return resolved


def _load_backend(cfg: dict) -> EncoderBackend:
    try:
        return build_backend(cfg.get("backend", "reference"))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_codebook(cfg: dict) -> Codebook:
    if cfg.get("codebook") or cfg.get("vocab"):
        if not (cfg.get("codebook") and cfg.get("vocab")):
            raise UsageError("--codebook and --vocab must be given together")
        for key in ("codebook", "vocab"):
            if not Path(cfg[key]).exists():
                raise UsageError(f"{key} file not found: {cfg[key]}")
        return Codebook.load(cfg["codebook"], cfg["vocab"])
    return _load_backend(cfg).codebook


def _parse_tokens(spec_str, codebook: Codebook) -> list[int]:
    if not spec_str:
        return []
    items = spec_str.split(",") if isinstance(spec_str, str) else [str(x) for x in spec_str]
    ids = []
    for item in items:
        item = item.strip()
        if item.lstrip("-").isdigit():
            ids.append(int(item))
        else:
            i = codebook.vocab.id_of(item)
            if i is None:
                raise UsageError(f"surface not in vocabulary: {item!r}")
            ids.append(i)
    return ids


def _parse_target(spec_str: str, codebook: Codebook) -> int:
    ids = _parse_tokens(spec_str, codebook)
    if len(ids) != 1:
        raise UsageError(f"--target must name exactly one token, got {spec_str!r}")
    if not 0 <= ids[0] < codebook.size:
        raise UsageError(f"target id {ids[0]} out of range")
    return ids[0]


def _require_out(cfg: dict) -> Path:
    out = cfg.get("out")
    if not out:
        raise UsageError("--out is required")
    return Path(out)


def _echo(cfg: dict) -> dict:
    return {k: v for k, v in sorted(cfg.items()) if k != "out" or v is not None}


# --- subcommands ----------------------------------------------------------------


def _cmd_filter_vocab(cfg: dict) -> int:
    codebook = _load_codebook(cfg)
    target = _parse_target(cfg["target"], codebook)
    filtered = filter_vocabulary(codebook, target, cfg["top_k"])
    payload = {
        "target_id": filtered.target_id,
        "target_surface": codebook.vocab.surface(filtered.target_id),
        "allowed_ids": list(filtered.sorted_ids),
        "removed": [
            {"id": j, "surface": codebook.vocab.surface(j), "score": score}
            for j, score in filtered.removed_synonyms
        ],
    }
    results.write_artifact(_require_out(cfg), payload, _echo(cfg))
    return 0


def _reference_image_vector(cfg: dict, backend: EncoderBackend) -> np.ndarray:
    if cfg.get("ref_image"):
        path = Path(cfg["ref_image"])
        if not path.exists():
            raise UsageError(f"reference image file not found: {path}")
        return np.asarray(json.loads(path.read_text(encoding="utf-8")), dtype=np.float64)
    return benchmark.synthetic_image_vector(cfg["seed"] ^ benchmark.IMAGE_SEED_XOR,
                                            backend.d_emb)


def _run_one_attack(cfg: dict) -> dict:
    backend = _load_backend(cfg)
    codebook = backend.codebook
    target = _parse_target(cfg["target"], codebook)
    prompt_ids = _parse_tokens(cfg["original_prompt"], codebook)
    filtered = filter_vocabulary(codebook, target, cfg["top_k"])
    targets = TargetVectors(
        v_text=build_text_target(backend, target),
        v_image=backend.encode_image(_reference_image_vector(cfg, backend)),
        target=target,
        lam=cfg["lam"],
    )
    start = time.monotonic()
    method = cfg["method"]
    suffix_text = None
    if method == "mmp":
        config = AttackConfig(m=cfg["m"], lam=cfg["lam"], learning_rate=cfg["lr"],
                              iterations=cfg["iters"], init_method=cfg["init"],
                              seed=cfg["seed"], trace_every=cfg["trace_every"])
        suffix, state = optimize(backend, prompt_ids, targets, config, filtered)
        best_loss, trace = state.best_loss, state.loss_trace
    elif method == "none":
        suffix = []
        best_loss = _suffix_loss(backend, prompt_ids, suffix, targets)
        trace = [best_loss]
    elif method == "random":
        suffix = random_suffix(cfg["m"], filtered, cfg["seed"])
        best_loss = _suffix_loss(backend, prompt_ids, suffix, targets)
        trace = [best_loss]
    elif method == "genetic":
        gcfg = GeneticConfig(generations=cfg["generations"],
                             candidates_per_generation=cfg["candidates"],
                             seed=cfg["seed"], suffix_token_len=cfg["m"])
        res = genetic_attack(backend, prompt_ids, targets.v_text, gcfg, filtered=filtered)
        suffix, suffix_text = res.suffix_tokens, res.suffix_text
        best_loss, trace = res.best_loss, res.loss_trace
    elif method == "gcg":
        gcfg = GcgConfig(steps=cfg["steps"], seed=cfg["seed"], m=cfg["m"])
        res = gcg_attack(backend, prompt_ids, targets.v_text, gcfg, filtered)
        suffix = res.suffix_tokens
        best_loss, trace = res.best_loss, res.loss_trace
    else:
        raise UsageError(f"unknown method {method!r}")
    elapsed = time.monotonic() - start
    surfaces = [codebook.vocab.surface(i) for i in suffix] if suffix is not None else None
    return results.attack_result(
        method=method, backend_name=backend.name, suffix_token_ids=suffix,
        suffix_surfaces=surfaces, best_loss=best_loss, loss_trace=trace,
        trace_every=cfg["trace_every"] if method == "mmp" else 1,
        suffix_text=suffix_text,
        wall_clock_seconds=elapsed if cfg.get("timing") else None,
    )


def _suffix_loss(backend, prompt_ids, suffix, targets) -> float:
    full = backend.embed_tokens(list(prompt_ids) + list(suffix))
    return mmp_loss(backend.encode_text(full).v, targets)


def _attack_job(job: dict) -> tuple[str, str]:
    cfg, out_path = job["cfg"], job["out"]
    payload = _run_one_attack(cfg)
    results.write_artifact(out_path, payload, _echo(cfg))
    return cfg["method"], out_path


def _cmd_attack(cfg: dict) -> int:
    out = _require_out(cfg)
    if cfg.get("pairs_file"):
        pairs_path = Path(cfg["pairs_file"])
        if not pairs_path.exists():
            raise UsageError(f"pairs file not found: {pairs_path}")
        pairs = json.loads(pairs_path.read_text(encoding="utf-8"))
        out.mkdir(parents=True, exist_ok=True)
        jobs = []
        for idx, pair in enumerate(pairs):
            job_cfg = dict(cfg)
            job_cfg["original_prompt"] = pair["original_prompt"]
            job_cfg["target"] = str(pair["target"])
            job_cfg["seed"] = cfg["seed"] ^ idx
            job_cfg["pairs_file"] = None
            jobs.append({"cfg": job_cfg, "out": str(out / f"pair_{idx:03d}.json")})
        if cfg["jobs"] > 1:
            with ProcessPoolExecutor(max_workers=cfg["jobs"]) as pool:
                list(pool.map(_attack_job, jobs))
        else:
            for job in jobs:
                _attack_job(job)
        return 0
    payload = _run_one_attack(cfg)
    results.write_artifact(out, payload, _echo(cfg))
    return 0


def _load_fixture(cfg: dict):
    """Mock sources/detector/matcher from a fixture JSON file."""
    if cfg.get("fixture"):
        path = Path(cfg["fixture"])
        if not path.exists():
            raise UsageError(f"fixture file not found: {path}")
        doc = json.loads(path.read_text(encoding="utf-8"))
        sources = {
            key: evaluation.ArrayImageSource(vectors, label=key)
            for key, vectors in doc.get("sources", {}).items()
        }
        det = doc.get("detector", {})
        per_image = det.get("images", {})
        default = det.get("default", [])

        def lookup_script(key):
            count = len(doc["sources"][key])
            return [per_image.get(f"{key}/{i}", default) for i in range(count)]

        detectors = {
            key: evaluation.ScriptedDetector(det.get("labels", []), lookup_script(key))
            for key in sources
        }
        matcher = (evaluation.ConstantMatcher(doc["matcher"])
                   if "matcher" in doc else None)
        return sources, detectors, matcher
    if cfg.get("images"):
        root = Path(cfg["images"])
        if not (root / "manifest.json").exists():
            raise UsageError(f"image manifest not found under {root}")
        raise UsageError(
            "directory image sources need an external detector adapter; "
            "desk runs use --fixture"
        )
    raise UsageError("--fixture (or --images with an adapter) is required")


def _parse_pairs(cfg: dict) -> list[tuple[str, str]]:
    spec_str = cfg.get("pairs") or ""
    pairs = []
    for item in spec_str.split(","):
        item = item.strip()
        if not item:
            continue
        if ":" not in item:
            raise UsageError(f"pair must be original:target, got {item!r}")
        o, t = item.split(":", 1)
        pairs.append((o.strip(), t.strip()))
    if not pairs:
        raise UsageError("--pairs is required")
    return pairs


def _load_suffix_map(cfg: dict) -> dict:
    if not cfg.get("suffixes"):
        return {}
    path = Path(cfg["suffixes"])
    if not path.exists():
        raise UsageError(f"suffix map not found: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def _cmd_eval(cfg: dict) -> int:
    backend = _load_backend(cfg)
    pairs = _parse_pairs(cfg)
    suffix_map = _load_suffix_map(cfg)
    sources, detectors, matcher = _load_fixture(cfg)
    reports, skipped, all_records = [], [], []
    for o, t in pairs:
        key = evaluation.pair_key(o, t)
        if key not in sources:
            skipped.append({"pair": key, "reason": "no image source"})
            continue
        report = evaluation.evaluate_pair(backend, sources[key], detectors[key],
                                          o, t, matcher=matcher)
        reports.append(report)
        all_records.extend(report.records)
    protocol = evaluation.ProtocolReport(
        reports=reports, aggregate=evaluation.aggregate_records(all_records),
        skipped=skipped, partial=bool(skipped), mode="grey-box")
    payload = protocol.to_dict()
    payload["suffixes"] = suffix_map
    results.write_artifact(_require_out(cfg), payload, _echo(cfg))
    return 0


def _cmd_universality(cfg: dict) -> int:
    backend = _load_backend(cfg)
    categories = [c.strip() for c in (cfg.get("categories") or "").split(",") if c.strip()]
    if len(categories) < 3:
        raise UsageError("universality needs at least three categories")
    suffix_map = _load_suffix_map(cfg)
    sources, detectors, _ = _load_fixture(cfg)
    # evaluate cell by cell so each source uses its own scripted detector
    suffix_pairs = {(p.split("__")[0], p.split("__")[1]): v for p, v in suffix_map.items()} \
        if suffix_map else {(o, t): None for o in categories for t in categories if o != t}
    matrix: list[list[float | None]] = []
    for o in categories:
        row = []
        for t in categories:
            if o == t or (o, t) not in suffix_pairs:
                row.append(None)
                continue
            values = []
            for o2 in categories:
                if o2 in (o, t):
                    continue
                key = evaluation.pair_key(o, t, applied_original=o2)
                if key not in sources:
                    continue
                det = detectors[key]
                for _, handle in sources[key]:
                    _, _, both = evaluation.detection_metrics(det, handle, o2, t)
                    values.append(both)
            row.append(float(np.mean(values)) if values else None)
        matrix.append(row)
    payload = {"categories": categories, "both": matrix}
    results.write_artifact(_require_out(cfg), payload, _echo(cfg))
    return 0


def _cmd_transfer(cfg: dict) -> int:
    backend = _load_backend(cfg)
    pairs = _parse_pairs(cfg)
    suffix_map = _load_suffix_map(cfg)
    sources, detectors, matcher = _load_fixture(cfg)
    suffix_surfaces = {}
    for o, t in pairs:
        entry = suffix_map.get(evaluation.pair_key(o, t), {})
        suffix_surfaces[(o, t)] = entry.get("surfaces", [])
    vocab = backend.codebook.vocab
    reports, skipped, all_records = [], [], []
    for (o, t), surfaces in sorted(suffix_surfaces.items()):
        key = evaluation.pair_key(o, t)
        try:
            vocab.ids_of(surfaces)
        except KeyError as exc:
            skipped.append({"pair": key, "reason": str(exc)})
            continue
        if key not in sources:
            skipped.append({"pair": key, "reason": "no image source"})
            continue
        report = evaluation.evaluate_pair(backend, sources[key], detectors[key],
                                          o, t, matcher=matcher, mode="transfer")
        reports.append(report)
        all_records.extend(report.records)
    protocol = evaluation.ProtocolReport(
        reports=reports, aggregate=evaluation.aggregate_records(all_records),
        skipped=skipped, partial=bool(skipped), mode="transfer")
    results.write_artifact(_require_out(cfg), protocol.to_dict(), _echo(cfg))
    return 0


def _cmd_analyze(cfg: dict) -> int:
    backend = _load_backend(cfg)
    if not cfg.get("templates"):
        raise UsageError("--templates is required")
    tpl_path = Path(cfg["templates"])
    if not tpl_path.exists():
        raise UsageError(f"template file not found: {tpl_path}")
    templates = [ln for ln in tpl_path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    subjects = [s.strip() for s in (cfg.get("subjects") or "").split(",") if s.strip()]
    if not subjects:
        raise UsageError("--subjects is required")
    try:
        grid = analysis.build_grid(templates, subjects)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    embeddings = analysis.embed_grid(backend, grid)
    distances = analysis.pairwise_distances(embeddings)
    out = _require_out(cfg)
    out.mkdir(parents=True, exist_ok=True)
    header = results.config_header_lines(_echo(cfg))
    analysis.write_embeddings_csv(out / "embeddings.csv", grid, embeddings, header)
    analysis.write_distances_csv(out / "distances.csv", list(range(len(grid.prompts))),
                                 distances, header)
    sep_path = out / "separation.csv"
    labels = [grid.subjects[p.subject_idx] for p in grid.prompts]
    with open(sep_path, "w", newline="", encoding="utf-8") as f:
        for line in header:
            f.write(f"# {line}\n")
        f.write("within_mean,between_mean,ratio\n")
        try:
            stats = analysis.cluster_separation(embeddings, labels)
            ratio = "" if stats.ratio is None else repr(stats.ratio)
            f.write(f"{stats.within_mean!r},{stats.between_mean!r},{ratio}\n")
        except ValueError as exc:
            f.write(f"# separation undefined: {exc}\n")
    return 0


def _cmd_sweep(cfg: dict) -> int:
    backend = _load_backend(cfg)
    lambdas = ([float(x) for x in cfg["lambdas"].split(",")]
               if cfg.get("lambdas") else list(ablation.DEFAULT_LAMBDAS))
    inits = ([s.strip() for s in cfg["inits"].split(",")]
             if cfg.get("inits") else [])
    instances = [benchmark.benchmark_instance(backend, cfg["seed"] ^ i)
                 for i in range(cfg["num_seeds"])]
    base = AttackConfig(m=cfg["m"], learning_rate=cfg["lr"], iterations=cfg["iters"])
    out = _require_out(cfg)
    out.mkdir(parents=True, exist_ok=True)
    header = results.config_header_lines(_echo(cfg))
    rows = ablation.lambda_sweep(backend, instances, base, lambdas)
    ablation.write_sweep_csv(out / "lambda_sweep.csv", rows, header)
    if inits:
        init_rows = ablation.init_comparison(backend, instances, base, inits)
        ablation.write_init_csv(out / "init_sweep.csv", init_rows, header)
    return 0


_COMMANDS = {
    "filter-vocab": _cmd_filter_vocab,
    "attack": _cmd_attack,
    "eval": _cmd_eval,
    "universality": _cmd_universality,
    "transfer": _cmd_transfer,
    "analyze": _cmd_analyze,
    "sweep": _cmd_sweep,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _resolve_config(args)
        return _COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
