import json

import numpy as np
import pytest

from hytas import data as D


def small_cube(h=3, w=3, b=6, seed=0, labels=True):
    rng = np.random.default_rng(seed)
    values = rng.standard_normal((b, h, w)).astype(np.float32)
    lab = rng.integers(1, 4, size=(h, w)).astype(np.int32) if labels else None
    return D.HsiCube(height=h, width=w, bands=b, values=values, labels=lab)


def test_cube_round_trip_bitwise(tmp_path):
    cube = small_cube(2, 2, 3)
    path = tmp_path / "cube.hsi"
    D.write_cube(cube, path)
    again = D.load_cube(path)
    assert np.array_equal(again.values, cube.values)
    assert np.array_equal(again.labels, cube.labels)
    D.write_cube(again, tmp_path / "cube2.hsi")
    assert path.read_bytes() == (tmp_path / "cube2.hsi").read_bytes()


def test_truncated_payload_reports_byte_counts(tmp_path):
    cube = small_cube(2, 2, 3, labels=False)
    path = tmp_path / "cube.hsi"
    D.write_cube(cube, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(D.CubeFormatError, match="bytes"):
        D.load_cube(path)


def test_header_declares_more_bands_than_payload(tmp_path):
    cube = small_cube(2, 2, 3, labels=False)
    path = tmp_path / "cube.hsi"
    D.write_cube(cube, path)
    blob = path.read_bytes()
    header, rest = blob.split(b"\n", 1)
    h = json.loads(header)
    h["bands"] = 224
    path.write_bytes(json.dumps(h, sort_keys=True).encode() + b"\n" + rest)
    with pytest.raises(D.CubeFormatError):
        D.load_cube(path)


def test_non_finite_payload_rejected(tmp_path):
    cube = small_cube(2, 2, 2, labels=False)
    cube.values[0, 0, 0] = np.nan
    path = tmp_path / "bad.hsi"
    D.write_cube(cube, path)
    with pytest.raises(D.CubeDataError):
        D.load_cube(path)


def test_standardize_constant_band_is_zero(tmp_path):
    cube = small_cube(2, 2, 3, labels=False)
    cube.values[1] = 4.2
    path = tmp_path / "cube.hsi"
    D.write_cube(cube, path, standardize=True)
    loaded = D.load_cube(path)
    assert np.allclose(loaded.values[1], 0.0)
    assert abs(float(loaded.values[0].mean())) < 1e-6
    assert abs(float(np.asarray(loaded.values[0], dtype=np.float64).std()) - 1.0) < 1e-6


def test_token_counting_formula():
    params = D.TokenizerParams(patch=1, band_group=10, stride=10)
    assert params.token_count(200) == 20
    assert params.token_dim() == 10


def test_single_token_covers_full_spectrum():
    cube = small_cube(2, 2, 6, labels=False)
    params = D.TokenizerParams(patch=1, band_group=6, stride=6)
    tokens = D.tokenize(cube, (1, 1), params)
    assert tokens.shape == (1, 6)
    np.testing.assert_allclose(tokens[0], cube.values[:, 1, 1].astype(np.float64))


def test_last_token_right_aligned():
    cube = small_cube(1, 1, 13, labels=False)
    params = D.TokenizerParams(patch=1, band_group=5, stride=5)
    tokens = D.tokenize(cube, (0, 0), params)
    assert tokens.shape == (params.token_count(13), 5)
    np.testing.assert_allclose(tokens[-1], cube.values[8:13, 0, 0].astype(np.float64))


def test_mirror_padding_at_corner():
    cube = small_cube(3, 3, 2, labels=False)
    params = D.TokenizerParams(patch=3, band_group=2, stride=2)
    tokens = D.tokenize(cube, (0, 0), params)
    # window rows/cols for pixel (0,0) reflect to [1,0,1]
    expected = cube.values[:, [1, 0, 1]][:, :, [1, 0, 1]].astype(np.float64)
    np.testing.assert_allclose(tokens[0], expected[0:2].reshape(-1))


def test_tokenize_translation_consistent_on_constant_cube():
    values = np.full((6, 4, 4), 2.5, dtype=np.float32)
    cube = D.HsiCube(height=4, width=4, bands=6, values=values)
    params = D.TokenizerParams(patch=3, band_group=3, stride=3)
    ref = D.tokenize(cube, (0, 0), params)
    for r in range(4):
        for c in range(4):
            np.testing.assert_array_equal(D.tokenize(cube, (r, c), params), ref)


def test_band_group_larger_than_bands_rejected():
    cube = small_cube(2, 2, 4, labels=False)
    with pytest.raises(D.TokenizerConfigError):
        D.tokenize(cube, (0, 0), D.TokenizerParams(patch=1, band_group=5, stride=5))


def test_ones_batch_is_seed_invariant():
    geom = D.TokenGeometry(tokens=4, token_dim=3, num_classes=5)
    a = D.synth_batch(geom, D.PROVENANCE_ONES, seed=1, batch_size=8)
    b = D.synth_batch(geom, D.PROVENANCE_ONES, seed=999, batch_size=8)
    assert np.array_equal(a.data, b.data) and np.array_equal(a.labels, b.labels)
    assert np.all(a.data == 1.0) and np.all(a.labels == 0)


def test_random_batch_deterministic_under_seed():
    geom = D.TokenGeometry(tokens=4, token_dim=3, num_classes=5)
    a = D.synth_batch(geom, D.PROVENANCE_RANDOM, seed=42)
    b = D.synth_batch(geom, D.PROVENANCE_RANDOM, seed=42)
    assert np.array_equal(a.data, b.data) and np.array_equal(a.labels, b.labels)
    assert a.batch_size == D.DEFAULT_BATCH_SIZE


def test_random_batch_mean_near_zero():
    geom = D.TokenGeometry(tokens=20, token_dim=10, num_classes=16)
    batch = D.synth_batch(geom, D.PROVENANCE_RANDOM, seed=0, batch_size=64)
    n = batch.data.size
    se = 1.0 / np.sqrt(n)
    assert abs(batch.data.mean()) <= 4 * se


def test_cube_batch_uses_labels():
    cube = small_cube(5, 5, 10, seed=2)
    params = D.TokenizerParams(patch=1, band_group=5, stride=5)
    batch = D.cube_batch(cube, params, seed=3, batch_size=16)
    assert batch.provenance == D.PROVENANCE_REAL
    assert batch.data.shape == (16, 2, 5)
    assert batch.labels.min() >= 0 and batch.labels.max() < cube.num_classes()


def test_synthetic_cube_deterministic():
    a = D.synthetic_cube(4, 4, 12, num_classes=6, seed=9)
    b = D.synthetic_cube(4, 4, 12, num_classes=6, seed=9)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.labels, b.labels)
    assert a.labels.min() >= 1 and a.labels.max() <= 6
