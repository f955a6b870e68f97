"""Hyperspectral cube ingestion, spectral tokenization, and batch generation.

Cube container format: one JSON header line (height, width, bands, dtype,
layout, standardize, labels) followed by the raw little-endian float32
payload in band-sequential order, then an optional int32 label raster
(0 = unlabeled). The format is bit-exact on round trip.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_BATCH_SIZE = 64

PROVENANCE_REAL = "REAL"
PROVENANCE_RANDOM = "RANDOM"
PROVENANCE_ONES = "ONES"


class CubeFormatError(ValueError):
    """Header/payload mismatch or malformed container."""


class CubeDataError(ValueError):
    """Payload values violate the cube invariants (non-finite, bad labels)."""


class TokenizerConfigError(ValueError):
    """Tokenizer parameters incompatible with the cube geometry."""


@dataclass(frozen=True)
class TokenGeometry:
    """Shape contract between batches and networks."""

    tokens: int
    token_dim: int
    num_classes: int

    def __post_init__(self):
        if self.tokens < 1 or self.token_dim < 1 or self.num_classes < 2:
            raise ValueError(f"invalid token geometry {self}")


@dataclass(frozen=True)
class TokenizerParams:
    """Spatial patch size, spectral band group, and band stride."""

    patch: int = 1
    band_group: int = 10
    stride: int = 10

    def __post_init__(self):
        if self.patch < 1 or self.patch % 2 == 0:
            raise TokenizerConfigError(f"patch must be odd and >=1, got {self.patch}")
        if self.band_group < 1 or self.stride < 1:
            raise TokenizerConfigError("band_group and stride must be >=1")

    def token_count(self, bands: int) -> int:
        if self.band_group > bands:
            raise TokenizerConfigError(f"band group {self.band_group} exceeds {bands} bands")
        return math.ceil((bands - self.band_group) / self.stride) + 1

    def token_dim(self) -> int:
        return self.patch * self.patch * self.band_group


@dataclass
class HsiCube:
    """A height x width x bands raster, stored band-sequential float32."""

    height: int
    width: int
    bands: int
    values: np.ndarray  # float32, shape (bands, height, width)
    labels: np.ndarray | None = None  # int32, shape (height, width), 0 = unlabeled

    def __post_init__(self):
        if self.values.shape != (self.bands, self.height, self.width):
            raise CubeDataError(
                f"values shape {self.values.shape} != (bands, height, width) "
                f"({self.bands}, {self.height}, {self.width})"
            )
        if self.labels is not None and self.labels.shape != (self.height, self.width):
            raise CubeDataError(f"label raster shape {self.labels.shape} != (height, width)")

    def num_classes(self) -> int:
        if self.labels is None or self.labels.max() < 1:
            raise CubeDataError("cube has no labeled pixels")
        return int(self.labels.max())


@dataclass
class TokenBatch:
    """A batch of token sequences with integer class labels."""

    data: np.ndarray  # float64, shape (B, T, D_in)
    labels: np.ndarray  # int64, shape (B,)
    provenance: str

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[0] < 1:
            raise ValueError(f"batch data must be (B, T, D_in), got {self.data.shape}")
        if self.labels.shape != (self.data.shape[0],):
            raise ValueError("labels must have one entry per batch row")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("batch data contains non-finite values")
        if self.provenance not in (PROVENANCE_REAL, PROVENANCE_RANDOM, PROVENANCE_ONES):
            raise ValueError(f"unknown provenance {self.provenance!r}")

    @property
    def batch_size(self) -> int:
        return self.data.shape[0]

    @property
    def tokens(self) -> int:
        return self.data.shape[1]

    @property
    def token_dim(self) -> int:
        return self.data.shape[2]


# ---------------------------------------------------------------------------
# cube container


def write_cube(cube: HsiCube, path: str | Path, standardize: bool = False) -> None:
    header = {
        "bands": cube.bands,
        "dtype": "f32",
        "height": cube.height,
        "labels": cube.labels is not None,
        "layout": "band-sequential",
        "standardize": bool(standardize),
        "width": cube.width,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("ascii") + b"\n")
        fh.write(np.ascontiguousarray(cube.values, dtype="<f4").tobytes())
        if cube.labels is not None:
            fh.write(np.ascontiguousarray(cube.labels, dtype="<i4").tobytes())


def load_cube(path: str | Path) -> HsiCube:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise CubeFormatError(f"malformed header line: {exc}") from exc
        for key in ("height", "width", "bands", "dtype", "layout"):
            if key not in header:
                raise CubeFormatError(f"header missing {key!r}")
        if header["dtype"] != "f32" or header["layout"] != "band-sequential":
            raise CubeFormatError(f"unsupported dtype/layout: {header['dtype']}/{header['layout']}")
        h, w, b = int(header["height"]), int(header["width"]), int(header["bands"])
        payload = fh.read(h * w * b * 4)
        if len(payload) != h * w * b * 4:
            raise CubeFormatError(
                f"payload truncated: expected {h * w * b * 4} bytes, got {len(payload)}"
            )
        values = np.frombuffer(payload, dtype="<f4").reshape(b, h, w).copy()
        labels = None
        if header.get("labels"):
            raster = fh.read(h * w * 4)
            if len(raster) != h * w * 4:
                raise CubeFormatError(
                    f"label raster truncated: expected {h * w * 4} bytes, got {len(raster)}"
                )
            labels = np.frombuffer(raster, dtype="<i4").reshape(h, w).copy()
        trailing = fh.read(1)
        if trailing:
            raise CubeFormatError("trailing bytes after declared payload")
    if not np.all(np.isfinite(values)):
        raise CubeDataError("cube payload contains non-finite values")
    if header.get("standardize"):
        values = standardize_bands(values)
    return HsiCube(height=h, width=w, bands=b, values=values, labels=labels)


def standardize_bands(values: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Per-band zero mean, unit variance (ddof 0); constant bands map to zero."""
    v = values.astype(np.float64)
    mean = v.mean(axis=(1, 2), keepdims=True)
    std = v.std(axis=(1, 2), keepdims=True)
    out = np.where(std > eps, (v - mean) / np.maximum(std, eps), 0.0)
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# tokenization


def _reflect_index(i: int, n: int) -> int:
    # mirror without repeating the edge sample (reflect-101)
    if n == 1:
        return 0
    period = 2 * (n - 1)
    i = abs(i) % period
    return period - i if i >= n else i


def tokenize(cube: HsiCube, pixel: tuple[int, int], params: TokenizerParams) -> np.ndarray:
    """Token sequence for one pixel: flattened patch x band-group sub-cubes.

    Token t covers bands [t*stride, t*stride + band_group); the last token is
    right-aligned so the final bands are always covered. Edge pixels take
    mirror-padded spatial neighborhoods.
    """
    r, c = pixel
    if not (0 <= r < cube.height and 0 <= c < cube.width):
        raise TokenizerConfigError(f"pixel {pixel} outside {cube.height}x{cube.width} raster")
    t_count = params.token_count(cube.bands)
    half = params.patch // 2
    rows = np.array([_reflect_index(r + dr, cube.height) for dr in range(-half, half + 1)])
    cols = np.array([_reflect_index(c + dc, cube.width) for dc in range(-half, half + 1)])
    window = cube.values[:, rows.reshape(-1, 1), cols.reshape(1, -1)]  # (bands, p, p)
    tokens = np.empty((t_count, params.token_dim()))
    for t in range(t_count):
        start = min(t * params.stride, cube.bands - params.band_group)
        tokens[t] = window[start:start + params.band_group].astype(np.float64).reshape(-1)
    return tokens


# ---------------------------------------------------------------------------
# batch generation


def synth_batch(
    geom: TokenGeometry,
    kind: str,
    seed: int,
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> TokenBatch:
    """Synthetic batches: RANDOM is i.i.d. standard normal with uniform labels,
    ONES is the all-ones pass with labels fixed to class 0."""
    if kind == PROVENANCE_ONES:
        data = np.ones((batch_size, geom.tokens, geom.token_dim))
        labels = np.zeros(batch_size, dtype=np.int64)
    elif kind == PROVENANCE_RANDOM:
        rng = np.random.default_rng(seed)
        data = rng.standard_normal((batch_size, geom.tokens, geom.token_dim))
        labels = rng.integers(0, geom.num_classes, size=batch_size).astype(np.int64)
    else:
        raise ValueError(f"synth_batch kind must be RANDOM or ONES, got {kind!r}")
    return TokenBatch(data=data, labels=labels, provenance=kind)


def cube_batch(
    cube: HsiCube,
    params: TokenizerParams,
    seed: int,
    batch_size: int = DEFAULT_BATCH_SIZE,
    num_classes: int | None = None,
) -> TokenBatch:
    """Sample a batch of tokenized pixels; labeled pixels when a raster exists."""
    rng = np.random.default_rng(seed)
    if cube.labels is not None and cube.labels.max() >= 1:
        classes = num_classes or cube.num_classes()
        rows, cols = np.nonzero(cube.labels > 0)
        idx = rng.integers(0, len(rows), size=batch_size)
        pixels = [(int(rows[i]), int(cols[i])) for i in idx]
        labels = np.array([cube.labels[p] - 1 for p in pixels], dtype=np.int64)
    else:
        if num_classes is None:
            raise CubeDataError("unlabeled cube requires an explicit num_classes")
        classes = num_classes
        pixels = [
            (int(rng.integers(0, cube.height)), int(rng.integers(0, cube.width)))
            for _ in range(batch_size)
        ]
        labels = rng.integers(0, classes, size=batch_size).astype(np.int64)
    data = np.stack([tokenize(cube, p, params) for p in pixels])
    if labels.max() >= classes:
        raise CubeDataError(f"label {labels.max()} outside {classes} classes")
    return TokenBatch(data=data, labels=labels, provenance=PROVENANCE_REAL)


def synthetic_cube(
    height: int,
    width: int,
    bands: int,
    num_classes: int,
    seed: int,
) -> HsiCube:
    """Standard-normal cube with a uniform random label raster (no zeros)."""
    rng = np.random.default_rng(seed)
    values = rng.standard_normal((bands, height, width)).astype(np.float32)
    labels = rng.integers(1, num_classes + 1, size=(height, width)).astype(np.int32)
    return HsiCube(height=height, width=width, bands=bands, values=values, labels=labels)
