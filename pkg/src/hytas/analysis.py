"""Rank-correlation evaluation, factor and sensitivity analyses, toy training.

Tables are plain lists of per-genotype dicts (one row per score record);
targets are toy overall accuracies or externally supplied values joined on
genotype id. Argmax ties break on the lexicographically smallest id so every
report is deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import network as N
from . import tensor as T
from .data import TokenBatch, TokenGeometry, synth_batch, PROVENANCE_RANDOM

DEFAULT_BUCKET_WIDTH = 5_000_000  # 5M-parameter bins starting at zero

FACTOR_COLUMNS = (
    "depth",
    "embed_dim",
    "mean_heads",
    "mean_mlp_ratio",
    "sum_head_dim",
    "sum_mlp_dim",
    "formula_ms",
)


class AnalysisError(ValueError):
    """Missing columns or malformed tables."""


class ToyTrainError(RuntimeError):
    """Training diverged (non-finite loss)."""


# ---------------------------------------------------------------------------
# rank correlation


def rank_average_ties(values) -> np.ndarray:
    """Ranks 1..n with tied values sharing their average rank."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v), dtype=np.float64)
    i = 0
    sv = v[order]
    while i < len(v):
        j = i
        while j + 1 < len(v) and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Rank correlation with average ranks for ties (Pearson of rank vectors).

    Returns nan when either vector is constant (undefined correlation).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise AnalysisError(f"spearman needs two equal-length vectors (>=2), got {x.shape}, {y.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise AnalysisError("spearman inputs must be finite")
    rx, ry = rank_average_ties(x), rank_average_ties(y)
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    denom = math.sqrt(float((rx**2).sum()) * float((ry**2).sum()))
    if denom == 0.0:
        return float("nan")
    return float((rx * ry).sum() / denom)


# ---------------------------------------------------------------------------
# ranked tables


def _proxy_columns(rows: list[dict]) -> list[str]:
    from .proxies import ALL_PROXIES

    names = [p.value for p in ALL_PROXIES]
    return [c for c in names if c in rows[0]]


def _column(rows, name) -> np.ndarray:
    try:
        return np.asarray([float(r[name]) for r in rows])
    except KeyError:
        raise AnalysisError(f"missing column {name!r}") from None


def _finite_rows(rows, *cols):
    out = []
    for r in rows:
        vals = [float(r[c]) for c in cols]
        if all(math.isfinite(v) for v in vals):
            out.append(r)
    return out


def attach_targets(rows: list[dict], targets: dict[str, float], column: str = "target") -> list[dict]:
    """Join a target map (genotype id -> value) onto score rows."""
    out = []
    for r in rows:
        if r["id"] in targets:
            joined = dict(r)
            joined[column] = float(targets[r["id"]])
            out.append(joined)
    if not out:
        raise AnalysisError("no score rows matched the target ids")
    return out


def proxy_argmax(rows: list[dict], proxy: str) -> dict | None:
    """Row holding the highest finite score; ties break on smallest id."""
    best = None
    for r in rows:
        v = float(r[proxy])
        if not math.isfinite(v):
            continue
        if (
            best is None
            or v > float(best[proxy])
            or (v == float(best[proxy]) and r["id"] < best["id"])
        ):
            best = r
    return best


def rank_table(rows: list[dict], target_col: str | None = None) -> dict:
    """Per-proxy summary: Spearman vs target (when present), argmax genotype,
    its model size, and the target value that argmax proposes."""
    if not rows:
        raise AnalysisError("empty score table")
    proxies = _proxy_columns(rows)
    summary = {}
    for proxy in proxies:
        finite = _finite_rows(rows, proxy, *( [target_col] if target_col else [] ))
        entry = {"n_finite": len(finite)}
        best = proxy_argmax(finite, proxy) if finite else None
        if best is not None:
            entry["argmax_id"] = best["id"]
            entry["argmax_ms"] = float(best["formula_ms"])
            if target_col:
                entry["proposed_target"] = float(best[target_col])
        if target_col and len(finite) >= 2:
            entry["rho"] = spearman(_column(finite, proxy), _column(finite, target_col))
        summary[proxy] = entry
    out = {"proxies": summary}
    if target_col:
        finite_target = sorted(_finite_rows(rows, target_col), key=lambda r: r["id"])
        oracle = max(finite_target, key=lambda r: float(r[target_col]))
        out["oracle"] = {"id": oracle["id"], "target": float(oracle[target_col]),
                         "ms": float(oracle["formula_ms"])}
    return out


def bucket_analysis(
    rows: list[dict],
    target_col: str,
    bucket_width: int = DEFAULT_BUCKET_WIDTH,
    ms_col: str = "formula_ms",
    min_rows: int = 3,
) -> list[dict]:
    """Recompute per-proxy rho and proposed target inside model-size bins.

    Buckets are [k*width, (k+1)*width) starting at zero and covering the
    observed range; bins with fewer than min_rows rows carry a sparse flag
    and omit rho.
    """
    if not rows:
        raise AnalysisError("empty score table")
    proxies = _proxy_columns(rows)
    ms = _column(rows, ms_col)
    n_buckets = int(ms.max() // bucket_width) + 1
    out = []
    for k in range(n_buckets):
        lo, hi = k * bucket_width, (k + 1) * bucket_width
        members = [r for r in rows if lo <= float(r[ms_col]) < hi]
        bucket = {"lo": lo, "hi": hi, "n": len(members), "sparse": len(members) < min_rows}
        if not members:
            out.append(bucket)
            continue
        finite_target = sorted(_finite_rows(members, target_col), key=lambda r: r["id"])
        if finite_target:
            oracle = max(finite_target, key=lambda r: float(r[target_col]))
            bucket["oracle_target"] = float(oracle[target_col])
        per_proxy = {}
        for proxy in proxies:
            finite = _finite_rows(members, proxy, target_col)
            entry = {}
            best = proxy_argmax(finite, proxy) if finite else None
            if best is not None:
                entry["proposed_target"] = float(best[target_col])
            if not bucket["sparse"] and len(finite) >= min_rows:
                entry["rho"] = spearman(_column(finite, proxy), _column(finite, target_col))
            per_proxy[proxy] = entry
        bucket["proxies"] = per_proxy
        out.append(bucket)
    return out


def factor_correlation(rows: list[dict], target_col: str | None = None) -> list[dict]:
    """Spearman between every proxy column (plus target) and every derived
    architecture factor; constant columns yield nan entries."""
    if len(rows) < 10:
        raise AnalysisError("factor correlation needs >= 10 rows")
    score_cols = _proxy_columns(rows)
    if target_col:
        score_cols = score_cols + [target_col]
    out = []
    for score_col in score_cols:
        finite = _finite_rows(rows, score_col)
        record = {"score": score_col}
        for factor in FACTOR_COLUMNS:
            if len(finite) >= 2:
                record[factor] = spearman(_column(finite, score_col), _column(finite, factor))
            else:
                record[factor] = float("nan")
        out.append(record)
    return out


def sensitivity_comparison(rows_a: list[dict], rows_b: list[dict]) -> list[dict]:
    """Per-proxy Spearman between two score tables of the same population,
    plus whether both sources elect the same argmax genotype."""
    by_id = {r["id"]: r for r in rows_b}
    shared = [r for r in rows_a if r["id"] in by_id]
    if len(shared) < 2:
        raise AnalysisError("sensitivity comparison needs >= 2 shared genotypes")
    out = []
    for proxy in _proxy_columns(shared):
        a_vals, b_vals = [], []
        for r in shared:
            va, vb = float(r[proxy]), float(by_id[r["id"]][proxy])
            if math.isfinite(va) and math.isfinite(vb):
                a_vals.append((r["id"], va))
                b_vals.append((r["id"], vb))
        entry = {"proxy": proxy, "n": len(a_vals)}
        if len(a_vals) >= 2:
            entry["rho"] = spearman([v for _, v in a_vals], [v for _, v in b_vals])
            a_sorted = sorted(a_vals)  # id ascending, so ties elect the smallest id
            b_sorted = sorted(b_vals)
            best_a = max(a_sorted, key=lambda t: t[1])
            best_b = max(b_sorted, key=lambda t: t[1])
            entry["argmax_agrees"] = best_a[0] == best_b[0]
        out.append(entry)
    return out


# ---------------------------------------------------------------------------
# toy ground truth


@dataclass
class ToyTask:
    """Class-prototype token sequences with additive noise; linearly separable
    for small noise levels."""

    train: TokenBatch
    test: TokenBatch


def toy_task(
    geom: TokenGeometry,
    n_train: int,
    n_test: int,
    noise: float,
    seed: int,
) -> ToyTask:
    rng = np.random.default_rng(seed)
    prototypes = rng.standard_normal((geom.num_classes, geom.tokens, geom.token_dim))

    def make(n):
        labels = rng.integers(0, geom.num_classes, size=n).astype(np.int64)
        data = prototypes[labels] + noise * rng.standard_normal((n, geom.tokens, geom.token_dim))
        return TokenBatch(data=data, labels=labels, provenance=PROVENANCE_RANDOM)

    return ToyTask(train=make(n_train), test=make(n_test))


@dataclass
class ToyTrainResult:
    accuracy_before: float
    accuracy_after: float
    loss_before: float
    loss_after: float
    epochs: int
    steps: int


def _accuracy(net, batch: TokenBatch) -> float:
    fp = N.forward(net, batch)
    pred = fp.logits.data.argmax(axis=1)
    return float((pred == batch.labels).mean())


def _loss(net, batch: TokenBatch) -> float:
    fp = N.forward(net, batch)
    loss = T.cross_entropy_logits(fp.tape, fp.logits, batch.labels)
    return float(loss.data)


def toy_train(
    net: N.NetworkInstance,
    task: ToyTask,
    epochs: int,
    lr: float,
    seed: int,
    batch_size: int = 64,
) -> ToyTrainResult:
    """Plain SGD on cross entropy; returns held-out accuracy before and after."""
    rng = np.random.default_rng(seed)
    acc_before = _accuracy(net, task.test)
    loss_before = _loss(net, task.train)
    n = task.train.batch_size
    steps = 0
    for epoch in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            mini = TokenBatch(
                data=task.train.data[idx],
                labels=task.train.labels[idx],
                provenance=task.train.provenance,
            )
            fp = N.forward(net, mini)
            loss = T.cross_entropy_logits(fp.tape, fp.logits, mini.labels)
            if not math.isfinite(float(loss.data)):
                raise ToyTrainError(f"training diverged at epoch {epoch}")
            grads = T.backward(fp.tape, loss)
            for p in net.parameters():
                p.data[...] = p.data - lr * grads[p.id]
            steps += 1
    return ToyTrainResult(
        accuracy_before=acc_before,
        accuracy_after=_accuracy(net, task.test),
        loss_before=loss_before,
        loss_after=_loss(net, task.train),
        epochs=epochs,
        steps=steps,
    )
