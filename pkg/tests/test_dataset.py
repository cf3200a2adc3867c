"""Synthetic corpus generation and deterministic patch ingestion."""

import numpy as np
import pytest

from csdmp import dataset, formats


def test_generate_corpus_deterministic(tmp_path):
    r1, r2 = tmp_path / "a", tmp_path / "b"
    n1 = dataset.generate_corpus(str(r1), 6, size=16, seed=9)
    n2 = dataset.generate_corpus(str(r2), 6, size=16, seed=9)
    assert n1 == n2
    for name in n1:
        assert (r1 / name).read_bytes() == (r2 / name).read_bytes()
    img = formats.load_pgm(r1 / n1[0])
    assert img.shape == (16, 16)
    assert img.min() >= 0.0 and img.max() <= 1.0


def test_handle_split_disjoint_and_deterministic(corpus32):
    h = dataset.DatasetHandle(corpus32, crop_size=16, seed=4)
    train, val = h.split()
    assert set(train).isdisjoint(val)
    assert sorted(train + val) == sorted(h.items)
    train2, val2 = dataset.DatasetHandle(corpus32, crop_size=16,
                                         seed=4).split()
    assert (train, val) == (train2, val2)


def test_handle_missing_root_and_empty(tmp_path):
    with pytest.raises(FileNotFoundError):
        dataset.DatasetHandle(str(tmp_path / "nope"), crop_size=8)
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(ValueError, match="no .pgm"):
        dataset.DatasetHandle(str(empty), crop_size=8)


def test_ingest_deterministic_per_seed(corpus32):
    h = dataset.DatasetHandle(corpus32, crop_size=16, seed=4)
    names = h.items[:8]
    a = list(dataset.ingest_patches(h, names, epoch=2))
    b = list(dataset.ingest_patches(h, names, epoch=2))
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
    c = list(dataset.ingest_patches(h, names, epoch=3))
    assert any(not np.array_equal(u, v) for u, v in zip(a, c))
    assert all(p.shape == (16, 16) for p in a)


def test_ingest_full_crop_yields_image_or_mirror(tmp_path):
    root = tmp_path / "one"
    dataset.generate_corpus(str(root), 1, size=16, seed=2)
    h = dataset.DatasetHandle(str(root), crop_size=16, hflip=True, seed=0)
    img = h.load(h.items[0])
    flipped_seen = False
    for epoch in range(20):
        (patch,) = list(dataset.ingest_patches(h, h.items, epoch))
        assert (np.array_equal(patch, img)
                or np.array_equal(patch, img[:, ::-1]))
        if np.array_equal(patch, img[:, ::-1]):
            flipped_seen = True
    assert flipped_seen
    # flip disabled: always the untouched image
    h2 = dataset.DatasetHandle(str(root), crop_size=16, hflip=False, seed=0)
    for epoch in range(5):
        (patch,) = list(dataset.ingest_patches(h2, h2.items, epoch))
        np.testing.assert_array_equal(patch, img)


def test_ingest_rejects_undersized_image(tmp_path):
    root = tmp_path / "small"
    dataset.generate_corpus(str(root), 1, size=8, seed=0)
    h = dataset.DatasetHandle(str(root), crop_size=16)
    with pytest.raises(ValueError, match="smaller than crop"):
        list(dataset.ingest_patches(h, h.items, 0))
