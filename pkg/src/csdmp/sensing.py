"""Block-based compressive sampling.

Images are split into non-overlapping BxB blocks, each flattened
row-major to a length-N vector (N = B*B).  A single Gaussian sensing
matrix (entries i.i.d. N(0, 1/M)) is shared across all blocks.
Per-block products are computed with explicit gemv calls so the solver
and the unfolded network share bit-identical arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class BlockScheme:
    block_size: int
    height: int
    width: int

    def __post_init__(self):
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")

    @property
    def n(self) -> int:
        return self.block_size * self.block_size

    @property
    def n_blocks(self) -> int:
        return (self.height // self.block_size) * (self.width // self.block_size)

    def check_divisible(self):
        B = self.block_size
        if self.height % B or self.width % B:
            pad_h = (-self.height) % B
            pad_w = (-self.width) % B
            raise ValueError(
                f"image {self.height}x{self.width} not divisible by block "
                f"size {B}; pad by ({pad_h}, {pad_w}) first")


@dataclass
class SensingOperator:
    phi: np.ndarray          # (M, N)
    seed: int
    trainable: bool = False

    @property
    def m(self) -> int:
        return self.phi.shape[0]

    @property
    def n(self) -> int:
        return self.phi.shape[1]

    @property
    def delta(self) -> float:
        return self.m / self.n


@dataclass
class MeasurementSet:
    y: np.ndarray            # (n_blocks, M)
    sigma_meas: float = 0.0
    scheme: BlockScheme | None = None


def partition_blocks(image: np.ndarray, scheme: BlockScheme) -> np.ndarray:
    """(H,W) image -> (n_blocks, N), blocks in row-major order."""
    scheme.check_divisible()
    B = scheme.block_size
    H, W = image.shape
    if (H, W) != (scheme.height, scheme.width):
        raise ValueError(f"image shape {image.shape} does not match scheme")
    blocks = (image.reshape(H // B, B, W // B, B)
                   .transpose(0, 2, 1, 3)
                   .reshape(-1, B * B))
    return np.ascontiguousarray(blocks)


def merge_blocks(blocks: np.ndarray, scheme: BlockScheme) -> np.ndarray:
    """Exact inverse of partition_blocks."""
    B = scheme.block_size
    H, W = scheme.height, scheme.width
    if blocks.shape != (scheme.n_blocks, scheme.n):
        raise ValueError(f"blocks shape {blocks.shape} does not match scheme")
    return (blocks.reshape(H // B, W // B, B, B)
                  .transpose(0, 2, 1, 3)
                  .reshape(H, W))


def gen_sensing_matrix(m: int, n: int, seed: int) -> SensingOperator:
    """Draw an (m, n) matrix with i.i.d. N(0, 1/m) entries."""
    if not 0 < m < n:
        raise ValueError(f"need 0 < M < N, got M={m}, N={n}")
    rng = np.random.Generator(np.random.PCG64(seed))
    phi = rng.normal(0.0, 1.0 / np.sqrt(m), size=(m, n))
    return SensingOperator(phi=phi, seed=seed)


def sample(op: SensingOperator, x_blocks: np.ndarray, sigma_meas: float = 0.0,
           seed: int = 0) -> MeasurementSet:
    """y = Phi x (+ optional i.i.d. Gaussian measurement noise)."""
    x_blocks = np.atleast_2d(np.asarray(x_blocks, dtype=np.float64))
    if x_blocks.shape[1] != op.n:
        raise ValueError(
            f"block length {x_blocks.shape[1]} != N={op.n}")
    y = np.empty((x_blocks.shape[0], op.m))
    for i in range(x_blocks.shape[0]):
        y[i] = op.phi @ x_blocks[i]
    if sigma_meas > 0:
        rng = np.random.Generator(np.random.PCG64(seed))
        y += rng.normal(0.0, sigma_meas, size=y.shape)
    return MeasurementSet(y=y, sigma_meas=sigma_meas)


def adjoint(op: SensingOperator, y_blocks: np.ndarray) -> np.ndarray:
    """Phi^T y per block; (n_blocks, M) -> (n_blocks, N)."""
    y_blocks = np.atleast_2d(np.asarray(y_blocks, dtype=np.float64))
    if y_blocks.shape[1] != op.m:
        raise ValueError(f"block length {y_blocks.shape[1]} != M={op.m}")
    out = np.empty((y_blocks.shape[0], op.n))
    for i in range(y_blocks.shape[0]):
        out[i] = op.phi.T @ y_blocks[i]
    return out


def fidelity(op: SensingOperator, x_blocks: np.ndarray,
             y_blocks: np.ndarray) -> float:
    """Sum over blocks of ||y - Phi x||^2."""
    x_blocks = np.atleast_2d(x_blocks)
    y_blocks = np.atleast_2d(y_blocks)
    if x_blocks.shape[0] != y_blocks.shape[0]:
        raise ValueError("block count mismatch")
    total = 0.0
    for i in range(x_blocks.shape[0]):
        r = y_blocks[i] - op.phi @ x_blocks[i]
        total += float(r @ r)
    return total


def pad_reflect(image: np.ndarray, block_size: int):
    """Edge-reflect pad so both dims divide block_size; returns (padded, crop)."""
    H, W = image.shape
    pad_h = (-H) % block_size
    pad_w = (-W) % block_size
    if pad_h == 0 and pad_w == 0:
        return image, (H, W)
    return np.pad(image, ((0, pad_h), (0, pad_w)), mode="reflect"), (H, W)
