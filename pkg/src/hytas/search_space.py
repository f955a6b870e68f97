"""Genotype encoding, random sampler, closed-form model size, and FLOPs estimate.

A genotype is (depth, embed_dim, per-block heads, per-block MLP ratios).
Heads and ratios vary per block; the closed-form model-size formula takes
scalar heads/ratio arguments, so list-valued genotypes substitute their
rounded means. The formula's constants (1539 per embedding dim, 7680 per
block) are reproduced verbatim, not rederived; the exact parameter count of
the constructed network is reported alongside and never asserted equal.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .data import TokenGeometry

HEAD_DIM = 64  # per-head width, fixed independent of embed_dim

FLOPS_CONVENTION = (
    "multiply-accumulates x2 of every linear map over the class-token-extended "
    "sequence plus attention score/value products (2*N^2*head_dim each, per head); "
    "norms, softmax, GELU and residual adds excluded; batch size 1"
)


class GenotypeError(ValueError):
    """Structurally inconsistent or out-of-range genotype."""


@dataclass(frozen=True)
class Genotype:
    """One sampled encoder architecture."""

    depth: int
    embed_dim: int
    num_heads: tuple[int, ...]
    mlp_ratio: tuple[int, ...]
    id: str = field(default="", compare=False)

    def __post_init__(self):
        if len(self.num_heads) != self.depth or len(self.mlp_ratio) != self.depth:
            raise GenotypeError(
                f"depth {self.depth} needs {self.depth} heads/ratio entries, got "
                f"{len(self.num_heads)}/{len(self.mlp_ratio)}"
            )
        if not self.id:
            object.__setattr__(self, "id", genotype_id(self))

    def mean_heads(self) -> float:
        return sum(self.num_heads) / self.depth

    def mean_mlp_ratio(self) -> float:
        return sum(self.mlp_ratio) / self.depth

    def sum_head_dim(self) -> int:
        return HEAD_DIM * sum(self.num_heads)

    def sum_mlp_dim(self) -> int:
        return self.embed_dim * sum(self.mlp_ratio)


def genotype_id(g: Genotype) -> str:
    payload = {
        "depth": g.depth,
        "embed_dim": g.embed_dim,
        "mlp_ratio": list(g.mlp_ratio),
        "num_heads": list(g.num_heads),
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("ascii")
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class SearchSpaceConfig:
    """Inclusive (start, stop, step) ranges per component; defaults match the
    full search grid: depth 4-10, embed 32-240 by 16, heads 3-6, ratio 1-6."""

    depth: tuple[int, int, int] = (4, 10, 1)
    embed_dim: tuple[int, int, int] = (32, 240, 16)
    num_heads: tuple[int, int, int] = (3, 6, 1)
    mlp_ratio: tuple[int, int, int] = (1, 6, 1)

    def __post_init__(self):
        for name in ("depth", "embed_dim", "num_heads", "mlp_ratio"):
            lo, hi, step = getattr(self, name)
            if step < 1 or hi < lo:
                raise ValueError(f"empty range for {name}: ({lo}, {hi}, {step})")

    def values(self, name: str) -> list[int]:
        lo, hi, step = getattr(self, name)
        return list(range(lo, hi + 1, step))

    def contains(self, g: Genotype) -> bool:
        return (
            g.depth in self.values("depth")
            and g.embed_dim in self.values("embed_dim")
            and all(h in self.values("num_heads") for h in g.num_heads)
            and all(r in self.values("mlp_ratio") for r in g.mlp_ratio)
        )

    def min_depth(self) -> int:
        return self.depth[0]


def sample_population(cfg: SearchSpaceConfig, count: int, seed: int) -> list[Genotype]:
    """Uniform independent draws per component; duplicates are permitted."""
    if count < 1:
        raise ValueError(f"sample count must be >=1, got {count}")
    rng = np.random.default_rng(seed)
    depths = cfg.values("depth")
    embeds = cfg.values("embed_dim")
    heads = cfg.values("num_heads")
    ratios = cfg.values("mlp_ratio")
    out = []
    for _ in range(count):
        depth = depths[rng.integers(len(depths))]
        embed = embeds[rng.integers(len(embeds))]
        h = tuple(heads[i] for i in rng.integers(len(heads), size=depth))
        r = tuple(ratios[i] for i in rng.integers(len(ratios), size=depth))
        out.append(Genotype(depth=depth, embed_dim=embed, num_heads=h, mlp_ratio=r))
    return out


def layer_count(g: Genotype) -> int:
    """Scoreable layers: embedding + 4 sub-layers per block + classification head."""
    return 4 * g.depth + 2


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def model_size_formula(g: Genotype, num_classes: int) -> int:
    """Closed-form MS(a, b, c, d) with per-block b, c collapsed to rounded means."""
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    a = g.depth
    b = _round_half_up(g.mean_mlp_ratio())
    c = _round_half_up(g.mean_heads())
    d = g.embed_dim
    return (
        1539 * d
        + a * (4 * d + 256 * c * d + 192 * c + 5 * d + 7680 + 2 * b * d * d + b * d + d)
        + 2 * d
        + num_classes * (d + 1)
    )


def exact_param_count(g: Genotype, geom: TokenGeometry) -> int:
    """Learnable scalars of the network that the model builder constructs.

    Embedding entry: token projection, class token, positional table.
    Per block: two norms, fused qkv, output projection, two MLP linears.
    Head entry: final norm plus the classifier.
    """
    d = g.embed_dim
    total = geom.token_dim * d + d  # token projection
    total += d  # class token
    total += (geom.tokens + 1) * d  # positional embedding
    for c, b in zip(g.num_heads, g.mlp_ratio):
        inner = HEAD_DIM * c
        total += 2 * d  # pre-attention norm
        total += d * (3 * inner) + 3 * inner  # fused qkv
        total += inner * d + d  # attention output projection
        total += 2 * d  # pre-MLP norm
        total += d * (b * d) + b * d  # MLP expand
        total += (b * d) * d + d  # MLP contract
    total += 2 * d  # final norm
    total += geom.num_classes * d + geom.num_classes  # classifier
    return total


def flops_estimate(g: Genotype, geom: TokenGeometry) -> int:
    """Forward multiply-accumulate count at batch size 1; see FLOPS_CONVENTION."""
    d = g.embed_dim
    n = geom.tokens + 1  # class token included
    total = 2 * geom.token_dim * d * geom.tokens  # token projection (real tokens only)
    for c, b in zip(g.num_heads, g.mlp_ratio):
        inner = HEAD_DIM * c
        total += 2 * d * (3 * inner) * n  # fused qkv
        total += c * (2 * n * n * HEAD_DIM)  # attention scores
        total += c * (2 * n * n * HEAD_DIM)  # attention-weighted values
        total += 2 * inner * d * n  # output projection
        total += 2 * d * (b * d) * n  # MLP expand
        total += 2 * (b * d) * d * n  # MLP contract
    total += 2 * d * geom.num_classes  # classifier on the class token
    return total


# ---------------------------------------------------------------------------
# JSONL codec


def genotype_to_json(g: Genotype) -> str:
    payload = {
        "id": g.id,
        "depth": g.depth,
        "embed_dim": g.embed_dim,
        "num_heads": list(g.num_heads),
        "mlp_ratio": list(g.mlp_ratio),
    }
    return json.dumps(payload, separators=(",", ":"))


def genotype_from_json(line: str) -> Genotype:
    obj = json.loads(line)
    g = Genotype(
        depth=int(obj["depth"]),
        embed_dim=int(obj["embed_dim"]),
        num_heads=tuple(int(x) for x in obj["num_heads"]),
        mlp_ratio=tuple(int(x) for x in obj["mlp_ratio"]),
    )
    if "id" in obj and obj["id"] != g.id:
        raise GenotypeError(f"genotype id {obj['id']} does not match encoding {g.id}")
    return g


def write_population(genotypes: Iterable[Genotype], path: str | Path) -> None:
    with open(path, "w", newline="\n") as fh:
        for g in genotypes:
            fh.write(genotype_to_json(g) + "\n")


def read_population(path: str | Path) -> list[Genotype]:
    with open(path) as fh:
        return [genotype_from_json(line) for line in fh if line.strip()]
