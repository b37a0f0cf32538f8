"""Synthetic matrix-valued objectives with closed-form stochastic gradients.

Two problem families:

* MatrixRegression: sharded least squares (1/2B)||A_b X - Y_b||_F^2 with
  labels Y = A X* + noise. Workers own disjoint row blocks of the global
  design, so the mean of shard gradients is the global gradient. The
  ground truth X* is either dense Gaussian or a seeded low-rank matrix
  with a power-law spectrum (rank phenomena need a low-rank target at
  desk scale).

* PowerLawOracle: a fixed matrix with singular values C k^(-alpha) plus
  controllable Gaussian observation noise whose Frobenius norm
  concentrates at kappa / sqrt(B). Used for projection-stability
  studies; kappa is pinned operationally as the expected Frobenius
  perturbation at B = 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import as_matrix

SHARD_IID = "iid"
SHARD_FEATURE_BLOCKS = "feature_blocks"
SHARD_POLICIES = (SHARD_IID, SHARD_FEATURE_BLOCKS)


@dataclass(frozen=True)
class Batch:
    """Row indices into one worker's shard."""

    worker_id: int
    indices: np.ndarray

    def __post_init__(self):
        if len(self.indices) < 1:
            raise ValueError("batch must contain at least one row")

    @property
    def size(self) -> int:
        return len(self.indices)


class MatrixRegression:
    """Sharded matrix least squares with label noise.

    The global design has `n_rows` standard-Gaussian rows split into
    `workers` equal consecutive blocks. With the feature_blocks policy,
    shard m additionally zeroes all design columns outside its own
    p/workers feature block, which confines worker gradients to disjoint
    coordinate rows (used for the orthogonal-subspace constructions).
    """

    def __init__(
        self,
        p: int,
        q: int,
        n_rows: int,
        workers: int,
        noise_std: float = 0.0,
        seed: int = 0,
        shard_policy: str = SHARD_IID,
        target_rank: int | None = None,
        target_alpha: float = 0.5,
    ):
        if n_rows % workers != 0:
            raise ValueError(f"n_rows={n_rows} must divide evenly across {workers} workers")
        if noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {noise_std}")
        if shard_policy not in SHARD_POLICIES:
            raise ValueError(f"unknown shard policy {shard_policy!r}")
        if shard_policy == SHARD_FEATURE_BLOCKS and p % workers != 0:
            raise ValueError(f"feature_blocks policy needs p={p} divisible by workers={workers}")
        if target_rank is not None and not (1 <= target_rank <= min(p, q)):
            raise ValueError(f"target_rank {target_rank} out of range for {p}x{q}")
        self.p = p
        self.q = q
        self.n_rows = n_rows
        self.workers = workers
        self.noise_std = noise_std
        self.shard_policy = shard_policy
        self.rows_per_shard = n_rows // workers
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0,)))
        design = rng.standard_normal((n_rows, p))
        if shard_policy == SHARD_FEATURE_BLOCKS:
            block = p // workers
            mask = np.zeros((n_rows, p))
            for m in range(workers):
                rows = slice(m * self.rows_per_shard, (m + 1) * self.rows_per_shard)
                mask[rows, m * block : (m + 1) * block] = 1.0
            design = design * mask
        self.design = design
        if target_rank is None:
            self.x_star = rng.standard_normal((p, q)) / np.sqrt(p)
        else:
            left, _ = np.linalg.qr(rng.standard_normal((p, target_rank)))
            right, _ = np.linalg.qr(rng.standard_normal((q, target_rank)))
            spectrum = np.arange(1, target_rank + 1, dtype=np.float64) ** -target_alpha
            self.x_star = (left * spectrum) @ right.T
        self.labels = design @ self.x_star + noise_std * rng.standard_normal((n_rows, q))

    def shard(self, worker_id: int) -> tuple[np.ndarray, np.ndarray]:
        if not (0 <= worker_id < self.workers):
            raise ValueError(f"worker_id {worker_id} out of range")
        rows = slice(worker_id * self.rows_per_shard, (worker_id + 1) * self.rows_per_shard)
        return self.design[rows], self.labels[rows]

    def sample_batch(self, worker_id: int, batch_size: int, rng: np.random.Generator) -> Batch:
        if not (1 <= batch_size <= self.rows_per_shard):
            raise ValueError(f"batch_size {batch_size} out of range for shard of {self.rows_per_shard}")
        idx = rng.choice(self.rows_per_shard, size=batch_size, replace=False)
        return Batch(worker_id=worker_id, indices=idx)

    def full_shard_batch(self, worker_id: int) -> Batch:
        return Batch(worker_id=worker_id, indices=np.arange(self.rows_per_shard))

    def loss(self, x: np.ndarray, batch: Batch) -> float:
        x = as_matrix(x, "parameters")
        a, y = self.shard(batch.worker_id)
        ab = a[batch.indices]
        yb = y[batch.indices]
        resid = ab @ x - yb
        return float(0.5 * np.sum(resid * resid) / batch.size)

    def stoch_gradient(self, x: np.ndarray, batch: Batch) -> np.ndarray:
        x = as_matrix(x, "parameters")
        a, y = self.shard(batch.worker_id)
        ab = a[batch.indices]
        yb = y[batch.indices]
        return ab.T @ (ab @ x - yb) / batch.size

    def init_params(self) -> np.ndarray:
        return np.zeros((self.p, self.q))


@dataclass(frozen=True)
class PowerLawOracle:
    """Fixed signal matrix with power-law spectrum plus batch-scaled noise."""

    c: float
    alpha: float
    p: int
    q: int
    kappa: float
    seed: int = 0
    true_matrix: np.ndarray = field(init=False, repr=False)
    left_basis: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.c <= 0 or self.alpha <= 0:
            raise ValueError("C and alpha must be positive")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        object.__setattr__(self, "true_matrix", gen_powerlaw_matrix(self.c, self.alpha, self.p, self.q, self.seed))
        object.__setattr__(self, "left_basis", _powerlaw_factors(self.p, self.q, self.seed)[0])

    def noisy_observation(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        """true_matrix + N with E||N||_F ~= kappa / sqrt(batch_size)."""
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        if self.kappa == 0.0:
            return self.true_matrix.copy()
        entry_std = self.kappa / np.sqrt(batch_size * self.p * self.q)
        return self.true_matrix + entry_std * rng.standard_normal((self.p, self.q))


def _powerlaw_factors(p: int, q: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7,)))
    k = min(p, q)
    left, lr = np.linalg.qr(rng.standard_normal((p, k)))
    right, rr = np.linalg.qr(rng.standard_normal((q, k)))
    # fix QR sign ambiguity so factors are reproducible across platforms
    left = left * np.sign(np.where(np.diag(lr) == 0, 1.0, np.diag(lr)))
    right = right * np.sign(np.where(np.diag(rr) == 0, 1.0, np.diag(rr)))
    return left, right


def gen_powerlaw_matrix(c: float, alpha: float, p: int, q: int, seed: int) -> np.ndarray:
    """U diag(C k^(-alpha)) V^T with seeded random orthonormal factors."""
    if c <= 0 or alpha <= 0:
        raise ValueError("C and alpha must be positive")
    left, right = _powerlaw_factors(p, q, seed)
    k = min(p, q)
    spectrum = c * np.arange(1, k + 1, dtype=np.float64) ** -alpha
    return (left * spectrum) @ right.T
