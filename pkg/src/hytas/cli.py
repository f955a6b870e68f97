"""Command-line surface: sample, score, rank, analyze, predict, report.

Every command writes a `<command>_manifest.json` into its output directory
echoing the fully resolved configuration and tool version (no timestamps, so
reruns on identical inputs reproduce outputs byte for byte; the score manifest
additionally carries per-proxy wall-time totals, which are measurements, not
inputs). Seeds are mandatory wherever randomness is consumed. Exit codes:
0 success, 2 usage error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis as A
from . import network as N
from . import predictor as F
from . import proxies as P
from .data import (
    DEFAULT_BATCH_SIZE,
    PROVENANCE_ONES,
    PROVENANCE_RANDOM,
    TokenGeometry,
    TokenizerParams,
    cube_batch,
    load_cube,
    synth_batch,
    synthetic_cube,
)
from .search_space import (
    FLOPS_CONVENTION,
    Genotype,
    SearchSpaceConfig,
    read_population,
    sample_population,
    write_population,
)

DEFAULT_INPUT = "synth:145x145x200"
DEFAULT_TARGET_COL = "toy_oa"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# small IO helpers


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row.get(c)) for c in columns) + "\n")


def read_scores_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for raw in reader:
            row = {}
            for key, value in raw.items():
                if key in ("id", "flags"):
                    row[key] = value
                else:
                    try:
                        row[key] = float(value)
                    except (TypeError, ValueError):
                        row[key] = value
            rows.append(row)
    if not rows:
        raise UsageError(f"empty score table {path}")
    return rows


def read_targets_csv(path: str | Path, column: str) -> dict[str, float]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise UsageError(
                f"target column {column!r} missing from {path} "
                f"(found: {', '.join(reader.fieldnames or [])})"
            )
        return {row["id"]: float(row[column]) for row in reader}


def _json_safe(obj):
    """Replace non-finite floats with None so reports stay strict JSON."""
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, np.floating):
        return _json_safe(float(obj))
    if isinstance(obj, (np.integer, np.bool_)):
        return obj.item()
    return obj


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir: Path, command: str, config: dict, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "config": config,
        "version": __version__,
    }
    if extra:
        manifest.update(extra)
    path = out_dir / f"{command}_manifest.json"
    with open(path, "w", newline="\n") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# input specs


def parse_range(text: str) -> tuple[int, int, int]:
    parts = text.split(":")
    if len(parts) != 3:
        raise UsageError(f"range must be start:stop:step, got {text!r}")
    try:
        lo, hi, step = (int(p) for p in parts)
    except ValueError:
        raise UsageError(f"range must be integers, got {text!r}") from None
    return lo, hi, step


def space_from_args(args) -> SearchSpaceConfig:
    try:
        return SearchSpaceConfig(
            depth=parse_range(args.depth),
            embed_dim=parse_range(args.embed_dim),
            num_heads=parse_range(args.num_heads),
            mlp_ratio=parse_range(args.mlp_ratio),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def resolve_batch(input_spec: str, args, seed: int):
    """Build the scoring batch from an input spec.

    cube:<path>   tokenized pixels of a stored cube
    synth:HxWxB   tokenized pixels of a seeded synthetic cube
    random:TxD    i.i.d. standard-normal token batch
    ones:TxD      all-ones token batch
    """
    kind, _, rest = input_spec.partition(":")
    params = TokenizerParams(patch=args.patch, band_group=args.band_group, stride=args.stride)
    if kind == "cube":
        cube = load_cube(rest)
        classes = cube.num_classes() if cube.labels is not None else args.classes
        geom = TokenGeometry(params.token_count(cube.bands), params.token_dim(), classes)
        batch = cube_batch(
            cube, params, seed=P.derive_seed(seed, "batch"), batch_size=args.batch_size,
            num_classes=classes,
        )
        return batch, geom
    if kind == "synth":
        try:
            h, w, b = (int(x) for x in rest.split("x"))
        except ValueError:
            raise UsageError(f"synth spec must be HxWxB, got {rest!r}") from None
        cube = synthetic_cube(h, w, b, num_classes=args.classes, seed=P.derive_seed(seed, "cube"))
        geom = TokenGeometry(params.token_count(b), params.token_dim(), args.classes)
        batch = cube_batch(
            cube, params, seed=P.derive_seed(seed, "batch"), batch_size=args.batch_size
        )
        return batch, geom
    if kind in ("random", "ones"):
        try:
            t, d = (int(x) for x in rest.split("x"))
        except ValueError:
            raise UsageError(f"{kind} spec must be TxD, got {rest!r}") from None
        geom = TokenGeometry(t, d, args.classes)
        provenance = PROVENANCE_RANDOM if kind == "random" else PROVENANCE_ONES
        batch = synth_batch(
            geom, provenance, seed=P.derive_seed(seed, "batch"), batch_size=args.batch_size
        )
        return batch, geom
    raise UsageError(f"unknown input spec {input_spec!r} (use cube:, synth:, random:, ones:)")


def resolve_workers(args) -> int:
    if args.workers is not None:
        return max(1, args.workers)
    env = os.environ.get("HYTAS_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"HYTAS_WORKERS must be an integer, got {env!r}") from None
    return 1


# ---------------------------------------------------------------------------
# commands


def cmd_sample(args) -> int:
    if args.count < 1:
        raise UsageError(f"--count must be >= 1, got {args.count}")
    cfg = space_from_args(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    population = sample_population(cfg, args.count, args.seed)
    path = out_dir / "genotypes.jsonl"
    write_population(population, path)
    write_manifest(
        out_dir,
        "sample",
        {
            "count": args.count,
            "seed": args.seed,
            "space": {
                "depth": cfg.depth,
                "embed_dim": cfg.embed_dim,
                "num_heads": cfg.num_heads,
                "mlp_ratio": cfg.mlp_ratio,
            },
        },
        extra={"outputs": {"genotypes": path.name, "sha256": _sha256(path)}},
    )
    print(f"wrote {len(population)} genotypes to {path}")
    return 0


def _score_config(args, proxies, workers) -> dict:
    return {
        "genotypes": str(args.genotypes),
        "input": args.input,
        "proxies": [p.value for p in proxies],
        "seed": args.seed,
        "batch_size": args.batch_size,
        "classes": args.classes,
        "tokenizer": {"patch": args.patch, "band_group": args.band_group, "stride": args.stride},
        "sign_removal": args.sign_removal,
        "module_split": args.module_split,
        "decay_start": args.decay_n,
        "workers": workers,
        "flops_convention": FLOPS_CONVENTION,
    }


def cmd_score(args) -> int:
    try:
        proxies = P.parse_proxies(args.proxies)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    workers = resolve_workers(args)
    genotypes = read_population(args.genotypes)
    batch, geom = resolve_batch(args.input, args, args.seed)
    opts = P.ProxyOptions(
        sign_removal=args.sign_removal,
        module_split=args.module_split,
        decay_start=args.decay_n,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = P.score_population(genotypes, batch, geom, proxies, opts, args.seed, workers=workers)
    path = out_dir / "scores.csv"
    P.write_scores_csv(records, proxies, path, module_split=args.module_split)
    time_totals = {
        p.value: round(sum(r.times.get(p.value, 0.0) for r in records), 6) for p in proxies
    }
    write_manifest(
        out_dir,
        "score",
        _score_config(args, proxies, workers),
        extra={
            "inputs": {"genotypes_sha256": _sha256(Path(args.genotypes))},
            "outputs": {"scores": path.name},
            "proxy_wall_time_totals_s": time_totals,
        },
    )
    print(f"scored {len(records)} genotypes x {len(proxies)} proxies -> {path}")
    return 0


def _load_rows_and_targets(args):
    rows = read_scores_csv(args.scores)
    target_col = None
    if args.targets:
        targets = read_targets_csv(args.targets, args.target_col)
        rows = A.attach_targets(rows, targets, column=args.target_col)
        target_col = args.target_col
    return rows, target_col


def _rank_summary_rows(table: dict) -> list[dict]:
    out = []
    for proxy, entry in table["proxies"].items():
        out.append(
            {
                "proxy": proxy,
                "n_finite": entry.get("n_finite"),
                "rho": entry.get("rho"),
                "argmax_id": entry.get("argmax_id"),
                "argmax_ms": entry.get("argmax_ms"),
                "proposed_target": entry.get("proposed_target"),
            }
        )
    if "oracle" in table:
        out.append(
            {
                "proxy": "oracle",
                "n_finite": None,
                "rho": None,
                "argmax_id": table["oracle"]["id"],
                "argmax_ms": table["oracle"]["ms"],
                "proposed_target": table["oracle"]["target"],
            }
        )
    return out


def cmd_rank(args) -> int:
    rows, target_col = _load_rows_and_targets(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = A.rank_table(rows, target_col=target_col)
    summary_cols = ["proxy", "n_finite", "rho", "argmax_id", "argmax_ms", "proposed_target"]
    write_csv(out_dir / "ranked_summary.csv", summary_cols, _rank_summary_rows(table))
    joined_cols = list(rows[0].keys())
    write_csv(out_dir / "ranked_table.csv", joined_cols, rows)
    write_manifest(
        out_dir,
        "rank",
        {
            "scores": str(args.scores),
            "targets": str(args.targets) if args.targets else None,
            "target_col": target_col,
        },
        extra={"inputs": {"scores_sha256": _sha256(Path(args.scores))}},
    )
    print(f"ranked {len(rows)} rows -> {out_dir / 'ranked_summary.csv'}")
    return 0


def _bucket_rows(buckets: list[dict]) -> tuple[list[str], list[dict]]:
    proxies = sorted({p for b in buckets for p in b.get("proxies", {})})
    cols = ["lo", "hi", "n", "sparse", "oracle_target"]
    for p in proxies:
        cols += [f"{p}_rho", f"{p}_proposed"]
    rows = []
    for b in buckets:
        row = {
            "lo": b["lo"],
            "hi": b["hi"],
            "n": b["n"],
            "sparse": b["sparse"],
            "oracle_target": b.get("oracle_target"),
        }
        for p, entry in b.get("proxies", {}).items():
            row[f"{p}_rho"] = entry.get("rho")
            row[f"{p}_proposed"] = entry.get("proposed_target")
        rows.append(row)
    return cols, rows


def cmd_analyze(args) -> int:
    rows, target_col = _load_rows_and_targets(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report: dict = {"n_rows": len(rows), "target_col": target_col}
    if target_col is None and args.bucket_width is not None:
        raise UsageError(
            f"bucket analysis needs a target column: pass --targets with --target-col "
            f"(default {DEFAULT_TARGET_COL!r})"
        )

    factors = A.factor_correlation(rows, target_col=target_col)
    factor_cols = ["score"] + list(A.FACTOR_COLUMNS)
    write_csv(out_dir / "factor_correlations.csv", factor_cols, factors)
    report["factor_correlations"] = factors

    table = A.rank_table(rows, target_col=target_col)
    summary_cols = ["proxy", "n_finite", "rho", "argmax_id", "argmax_ms", "proposed_target"]
    write_csv(out_dir / "ranked_summary.csv", summary_cols, _rank_summary_rows(table))
    report["rank_table"] = table

    if target_col is not None:
        width = args.bucket_width if args.bucket_width is not None else A.DEFAULT_BUCKET_WIDTH
        buckets = A.bucket_analysis(rows, target_col, bucket_width=int(width))
        cols, bucket_rows = _bucket_rows(buckets)
        write_csv(out_dir / "bucket_analysis.csv", cols, bucket_rows)
        report["buckets"] = buckets

    if args.scores_alt:
        alt_rows = read_scores_csv(args.scores_alt)
        sensitivity = A.sensitivity_comparison(rows, alt_rows)
        write_csv(
            out_dir / "sensitivity.csv",
            ["proxy", "n", "rho", "argmax_agrees"],
            sensitivity,
        )
        report["sensitivity"] = sensitivity

    with open(out_dir / "analysis_report.json", "w", newline="\n") as fh:
        json.dump(_json_safe(report), fh, sort_keys=True, indent=2, allow_nan=False)
        fh.write("\n")
    write_manifest(
        out_dir,
        "analyze",
        {
            "scores": str(args.scores),
            "scores_alt": str(args.scores_alt) if args.scores_alt else None,
            "targets": str(args.targets) if args.targets else None,
            "target_col": target_col,
            "bucket_width": args.bucket_width,
        },
        extra={"inputs": {"scores_sha256": _sha256(Path(args.scores))}},
    )
    print(f"analysis written to {out_dir}")
    return 0


def cmd_predict(args) -> int:
    rows = read_scores_csv(args.scores)
    targets = read_targets_csv(args.targets, args.target_col)
    rows = A.attach_targets(rows, targets, column=args.target_col)
    try:
        sizes = [int(s) for s in args.train_sizes.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--train-sizes must be integers, got {args.train_sizes!r}") from None
    if not sizes:
        raise UsageError("--train-sizes is empty")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    x, y = F.extract_features(rows, args.target_col)
    try:
        curve = F.learning_curve(x, y, sizes, repeats=args.repeats, seed=args.seed)
    except F.PredictorError as exc:
        raise UsageError(str(exc)) from None
    write_csv(
        out_dir / "learning_curve.csv",
        ["train_size", "mean_rho", "std_rho", "n_used", "dropped"],
        [
            {
                "train_size": p.train_size,
                "mean_rho": p.mean_rho,
                "std_rho": p.std_rho,
                "n_used": len(p.rhos),
                "dropped": p.dropped,
            }
            for p in curve
        ],
    )

    # largest-size split: persist the fitted forest and its holdout predictions
    size = max(sizes)
    rng = np.random.default_rng(P.derive_seed(args.seed, "final", size))
    perm = rng.permutation(len(rows))
    train_idx, test_idx = perm[:size], perm[size:]
    model = F.fit(x[train_idx], y[train_idx], seed=P.derive_seed(args.seed, "final-fit", size))
    F.save_model(model, out_dir / "forest.json")
    preds = F.predict(model, x[test_idx])
    write_csv(
        out_dir / "predictions.csv",
        ["id", "actual", "predicted"],
        [
            {"id": rows[i]["id"], "actual": y[i], "predicted": float(p)}
            for i, p in zip(test_idx, preds)
        ],
    )
    rho = A.spearman(preds, y[test_idx]) if len(test_idx) >= 2 else float("nan")
    write_manifest(
        out_dir,
        "predict",
        {
            "scores": str(args.scores),
            "targets": str(args.targets),
            "target_col": args.target_col,
            "train_sizes": sizes,
            "repeats": args.repeats,
            "seed": args.seed,
            "features": list(F.FEATURE_COLUMNS),
        },
        extra={
            "inputs": {"scores_sha256": _sha256(Path(args.scores))},
            "holdout_rho_at_largest_size": None if math.isnan(rho) else rho,
        },
    )
    print(f"learning curve ({len(sizes)} sizes) -> {out_dir / 'learning_curve.csv'}")
    return 0


def cmd_report(args) -> int:
    """Desk-scale end-to-end run: sample a small population, score it under the
    primary and a random input source, toy-train every genotype, then emit the
    full analysis and predictor outputs. Accuracies are TOY values from the
    synthetic separable task, not benchmark results."""
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = resolve_workers(args)
    cfg = space_from_args(args)
    population = sample_population(cfg, args.count, args.seed)
    write_population(population, out_dir / "genotypes.jsonl")

    proxies = P.parse_proxies(args.proxies)
    batch, geom = resolve_batch(args.input, args, args.seed)
    opts = P.ProxyOptions(decay_start=args.decay_n)
    records = P.score_population(population, batch, geom, proxies, opts, args.seed, workers=workers)
    P.write_scores_csv(records, proxies, out_dir / "scores.csv")

    alt_batch = synth_batch(
        geom, PROVENANCE_RANDOM, seed=P.derive_seed(args.seed, "alt-batch"),
        batch_size=args.batch_size,
    )
    alt_records = P.score_population(
        population, alt_batch, geom, proxies, opts, args.seed, workers=workers
    )
    P.write_scores_csv(alt_records, proxies, out_dir / "scores_random_input.csv")

    task = A.toy_task(
        geom, n_train=args.toy_train_samples, n_test=args.toy_test_samples,
        noise=args.toy_noise, seed=P.derive_seed(args.seed, "toy-task"),
    )
    target_rows = []
    for g in population:
        net = N.build(g, geom, init_seed=P.derive_seed(args.seed, "init", g.id))
        result = A.toy_train(
            net, task, epochs=args.toy_epochs, lr=args.toy_lr,
            seed=P.derive_seed(args.seed, "toy-train", g.id),
        )
        target_rows.append(
            {
                "id": g.id,
                DEFAULT_TARGET_COL: result.accuracy_after,
                "toy_oa_untrained": result.accuracy_before,
                "loss_before": result.loss_before,
                "loss_after": result.loss_after,
            }
        )
    write_csv(
        out_dir / "targets.csv",
        ["id", DEFAULT_TARGET_COL, "toy_oa_untrained", "loss_before", "loss_after"],
        target_rows,
    )

    ns = argparse.Namespace(
        scores=out_dir / "scores.csv",
        targets=out_dir / "targets.csv",
        target_col=DEFAULT_TARGET_COL,
        scores_alt=out_dir / "scores_random_input.csv",
        bucket_width=None,
        out=args.out,
    )
    cmd_analyze(ns)
    proxy_values = {p.value for p in proxies}
    missing_features = [
        c for c in F.FEATURE_COLUMNS if c not in proxy_values and c in P.ProxyId._value2member_map_
    ]
    predictor_note = "fitted"
    if missing_features:
        predictor_note = f"skipped (missing proxy features: {', '.join(missing_features)})"
    else:
        ns_pred = argparse.Namespace(
            scores=out_dir / "scores.csv",
            targets=out_dir / "targets.csv",
            target_col=DEFAULT_TARGET_COL,
            train_sizes=args.train_sizes,
            repeats=args.repeats,
            seed=P.derive_seed(args.seed, "predict"),
            out=args.out,
        )
        cmd_predict(ns_pred)

    write_manifest(
        out_dir,
        "report",
        {
            "count": args.count,
            "seed": args.seed,
            "input": args.input,
            "proxies": [p.value for p in proxies],
            "toy": {
                "epochs": args.toy_epochs,
                "lr": args.toy_lr,
                "noise": args.toy_noise,
                "train_samples": args.toy_train_samples,
                "test_samples": args.toy_test_samples,
                "label": "TOY accuracies from the synthetic separable task",
            },
            "space": {
                "depth": cfg.depth,
                "embed_dim": cfg.embed_dim,
                "num_heads": cfg.num_heads,
                "mlp_ratio": cfg.mlp_ratio,
            },
            "workers": workers,
        },
        extra={"predictor": predictor_note},
    )
    print(f"full report written to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_space_args(sub, depth="4:10:1", embed="32:240:16"):
    sub.add_argument("--depth", default=depth, help="depth range start:stop:step")
    sub.add_argument("--embed-dim", default=embed, help="embedding range start:stop:step")
    sub.add_argument("--num-heads", default="3:6:1", help="heads range start:stop:step")
    sub.add_argument("--mlp-ratio", default="1:6:1", help="ratio range start:stop:step")


def _add_input_args(sub):
    sub.add_argument("--input", default=DEFAULT_INPUT, help="cube:<path> | synth:HxWxB | random:TxD | ones:TxD")
    sub.add_argument("--batch-size", type=int, default=DEFAULT_BATCH_SIZE)
    sub.add_argument("--classes", type=int, default=16, help="classes when the input carries no labels")
    sub.add_argument("--patch", type=int, default=1)
    sub.add_argument("--band-group", type=int, default=10)
    sub.add_argument("--stride", type=int, default=10)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hytas",
        description="Training-free transformer architecture search for hyperspectral token classifiers",
    )
    parser.add_argument("--version", action="version", version=f"hytas {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="sample a genotype population")
    p.add_argument("--count", type=int, default=2000)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default="hytas_out")
    _add_space_args(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("score", help="score a population with zero-cost proxies")
    p.add_argument("--genotypes", required=True)
    p.add_argument("--proxies", default="all", help="'all' or comma list, e.g. synflow,snip")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--workers", type=int, default=None, help="fallback: HYTAS_WORKERS, then 1")
    p.add_argument("--sign-removal", action="store_true")
    p.add_argument("--module-split", action="store_true")
    p.add_argument("--decay-n", type=int, default=6)
    p.add_argument("--out", default="hytas_out")
    _add_input_args(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("rank", help="ranked table and per-proxy summary")
    p.add_argument("--scores", required=True)
    p.add_argument("--targets", default=None)
    p.add_argument("--target-col", default=DEFAULT_TARGET_COL)
    p.add_argument("--out", default="hytas_out")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("analyze", help="factor, bucket, and sensitivity analyses")
    p.add_argument("--scores", required=True)
    p.add_argument("--scores-alt", default=None, help="second score table for sensitivity")
    p.add_argument("--targets", default=None)
    p.add_argument("--target-col", default=DEFAULT_TARGET_COL)
    p.add_argument("--bucket-width", type=float, default=None, help="model-size bin width (needs targets)")
    p.add_argument("--out", default="hytas_out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("predict", help="proxy-fusion forest and learning curve")
    p.add_argument("--scores", required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--target-col", default=DEFAULT_TARGET_COL)
    p.add_argument("--train-sizes", default="20,50")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default="hytas_out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", help="desk-scale end-to-end pipeline with toy targets")
    p.add_argument("--count", type=int, default=30)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--proxies", default="all")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--decay-n", type=int, default=6)
    p.add_argument("--toy-epochs", type=int, default=20)
    p.add_argument("--toy-lr", type=float, default=0.05)
    p.add_argument("--toy-noise", type=float, default=0.3)
    p.add_argument("--toy-train-samples", type=int, default=256)
    p.add_argument("--toy-test-samples", type=int, default=128)
    p.add_argument("--train-sizes", default="10,20")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", required=True)
    _add_space_args(p, depth="4:5:1", embed="32:64:16")
    _add_input_args(p)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (
        FileNotFoundError,
        A.AnalysisError,
        A.ToyTrainError,
        F.PredictorError,
        P.ProxyError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
