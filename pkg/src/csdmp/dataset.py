"""Desk-scale dataset handling: a bundled synthetic grayscale corpus
(piecewise-smooth phantoms and texture patches) plus deterministic
patch ingestion with random crop and optional horizontal flip.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import formats


@dataclass
class DatasetHandle:
    root: str
    crop_size: int
    hflip: bool = True
    val_fraction: float = 0.2
    seed: int = 0
    items: list = field(default_factory=list)

    def __post_init__(self):
        if not self.items:
            if not os.path.isdir(self.root):
                raise FileNotFoundError(f"dataset root {self.root!r} missing")
            self.items = sorted(
                f for f in os.listdir(self.root) if f.endswith(".pgm"))
            if not self.items:
                raise ValueError(f"no .pgm images under {self.root!r}")

    def split(self):
        """Deterministic disjoint (train, val) item lists."""
        rng = np.random.Generator(np.random.PCG64(self.seed))
        order = rng.permutation(len(self.items))
        n_val = max(1, int(round(self.val_fraction * len(self.items))))
        val = [self.items[i] for i in sorted(order[:n_val])]
        train = [self.items[i] for i in sorted(order[n_val:])]
        return train, val

    def load(self, name) -> np.ndarray:
        return formats.load_pgm(os.path.join(self.root, name))


def _phantom(size, rng) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = 0.2 + 0.3 * (rng.random() * xx + rng.random() * yy)
    for _ in range(rng.integers(2, 6)):
        cx, cy = rng.random(2)
        rx, ry = 0.08 + 0.3 * rng.random(2)
        theta = rng.random() * np.pi
        dx, dy = xx - cx, yy - cy
        u = dx * np.cos(theta) + dy * np.sin(theta)
        v = -dx * np.sin(theta) + dy * np.cos(theta)
        mask = (u / rx) ** 2 + (v / ry) ** 2 < 1.0
        img = np.where(mask, 0.1 + 0.8 * rng.random(), img)
    return np.clip(img, 0.0, 1.0)


def _texture(size, rng) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.zeros((size, size))
    for _ in range(rng.integers(2, 5)):
        fx, fy = rng.uniform(1, 8, size=2)
        phase = rng.random() * 2 * np.pi
        img += rng.random() * np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
    lo, hi = img.min(), img.max()
    return (img - lo) / (hi - lo + 1e-12)


def generate_corpus(root, n_images: int, size: int = 32, seed: int = 0):
    """Write n_images synthetic PGMs (alternating phantom/texture)."""
    os.makedirs(root, exist_ok=True)
    rng = np.random.Generator(np.random.PCG64(seed))
    names = []
    for i in range(n_images):
        img = _phantom(size, rng) if i % 2 == 0 else _texture(size, rng)
        name = f"img{i:04d}.pgm"
        formats.save_pgm(img, os.path.join(root, name))
        names.append(name)
    return names


def ingest_patches(handle: DatasetHandle, names, epoch: int = 0):
    """Deterministic stream of crop-size patches for one epoch.

    Reshuffles per epoch with a seed derived from (handle.seed, epoch);
    each image yields one random crop, horizontally mirrored with
    probability 1/2 when hflip is enabled.
    """
    rng = np.random.Generator(np.random.PCG64(
        (handle.seed * 1_000_003 + epoch) & 0xFFFFFFFF))
    order = rng.permutation(len(names))
    for idx in order:
        img = handle.load(names[idx])
        H, W = img.shape
        c = handle.crop_size
        if H < c or W < c:
            raise ValueError(
                f"image {names[idx]} ({H}x{W}) smaller than crop {c}")
        i = int(rng.integers(0, H - c + 1))
        j = int(rng.integers(0, W - c + 1))
        patch = img[i:i + c, j:j + c]
        if handle.hflip and rng.random() < 0.5:
            patch = patch[:, ::-1]
        yield np.ascontiguousarray(patch)
