"""Shared test fixtures and numeric helpers."""

import numpy as np
import pytest

from csdmp import dataset


def fd_gradient(f, x, eps=1e-5):
    """Central finite-difference gradient of scalar f at ndarray x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = f(x)
        flat[i] = old - eps
        lo = f(x)
        flat[i] = old
        gf[i] = (hi - lo) / (2 * eps)
    return g


def rel_err(a, b, floor=1e-12):
    """Norm-based relative error between two gradient arrays."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)


@pytest.fixture(scope="session")
def corpus32(tmp_path_factory):
    """Small bundled synthetic corpus: 40 images, 32x32."""
    root = tmp_path_factory.mktemp("corpus32")
    dataset.generate_corpus(str(root), 40, size=32, seed=1)
    return str(root)


@pytest.fixture(scope="session")
def corpus16(tmp_path_factory):
    """Tiny corpus of 16x16 images for fast CLI round trips."""
    root = tmp_path_factory.mktemp("corpus16")
    dataset.generate_corpus(str(root), 12, size=16, seed=3)
    return str(root)
