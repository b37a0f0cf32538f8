"""Truncated projections, moment rotation, and subspace diagnostics.

A projection is a column-orthonormal basis Q (p x r) mapping full-rank
gradients into a rank-r subspace (g = Q^T G) and back (Q g). New bases
come from the thin SVD of a signal matrix; moments are re-expressed in
the new basis through the rotation R = Q_new^T Q_old.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .linalg import as_matrix, frobenius_norm, spectral_norm, svd

SOURCE_AGGREGATED = "aggregated_pseudo_gradient"
SOURCE_LOCAL_EF = "local_gradient_with_ef"
SOURCE_RANDOM = "random_init"
SOURCE_IDENTITY = "identity"
SOURCES = (SOURCE_AGGREGATED, SOURCE_LOCAL_EF, SOURCE_RANDOM, SOURCE_IDENTITY)

ORTHO_TOL = 1e-10


class DegenerateSignalError(ValueError):
    """Signal is zero or rank-deficient below the requested rank."""


@dataclass(frozen=True)
class Projection:
    """Column-orthonormal basis plus provenance metadata."""

    q: np.ndarray
    rank: int
    computed_at_step: int
    source: str

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown projection source {self.source!r}")
        p, r = self.q.shape
        if not (1 <= r <= p):
            raise ValueError(f"rank must satisfy 1 <= r <= p, got r={r}, p={p}")
        if r != self.rank:
            raise ValueError(f"rank field {self.rank} does not match basis shape {self.q.shape}")
        err = np.linalg.norm(self.q.T @ self.q - np.eye(r))
        if err > ORTHO_TOL:
            raise ValueError(f"basis is not orthonormal (deviation {err:.2e})")

    @property
    def dim(self) -> int:
        return self.q.shape[0]


@dataclass(frozen=True)
class SubspaceMetrics:
    """Per-update diagnostics: basis overlap, signal spectrum shape."""

    mssv: float
    stable_rank: float
    spectral_gap: float
    sin_theta: float


def compute_projection(signal, rank: int, step: int = 0, source: str = SOURCE_AGGREGATED) -> Projection:
    """First `rank` left singular vectors of the signal.

    Raises DegenerateSignalError when the signal is zero or its rank is
    numerically below the requested rank; callers keep the previous
    projection in that case.
    """
    proj, _ = projection_with_spectrum(signal, rank, step=step, source=source)
    return proj


def projection_with_spectrum(
    signal, rank: int, step: int = 0, source: str = SOURCE_AGGREGATED
) -> tuple[Projection, np.ndarray]:
    """Like compute_projection but also returns the signal's singular values."""
    signal = as_matrix(signal, "projection signal")
    p, q = signal.shape
    if not (1 <= rank <= min(p, q)):
        raise ValueError(f"rank {rank} out of range for {p}x{q} signal")
    res = svd(signal)
    if res.s[0] == 0.0 or res.s[rank - 1] <= 1e-12 * res.s[0]:
        raise DegenerateSignalError(
            f"degenerate signal: singular value {rank} is {res.s[rank - 1]:.3e} "
            f"against leading {res.s[0]:.3e}"
        )
    proj = Projection(
        q=np.ascontiguousarray(res.u[:, :rank]), rank=rank, computed_at_step=step, source=source
    )
    return proj, res.s


def random_projection(p: int, rank: int, rng: np.random.Generator, step: int = 0) -> Projection:
    """Seeded Gaussian basis orthonormalized by (twice-applied) Gram-Schmidt."""
    if not (1 <= rank <= p):
        raise ValueError(f"rank {rank} out of range for dimension {p}")
    raw = rng.standard_normal((p, rank))
    q = _gram_schmidt(raw)
    return Projection(q=q, rank=rank, computed_at_step=step, source=SOURCE_RANDOM)


def identity_projection(p: int, rank: int, step: int = 0) -> Projection:
    if not (1 <= rank <= p):
        raise ValueError(f"rank {rank} out of range for dimension {p}")
    q = np.zeros((p, rank))
    q[np.arange(rank), np.arange(rank)] = 1.0
    return Projection(q=q, rank=rank, computed_at_step=step, source=SOURCE_IDENTITY)


def _gram_schmidt(a: np.ndarray) -> np.ndarray:
    q = np.array(a, dtype=np.float64)
    for j in range(q.shape[1]):
        for _ in range(2):
            q[:, j] -= q[:, :j] @ (q[:, :j].T @ q[:, j])
        nrm = np.linalg.norm(q[:, j])
        if nrm < 1e-300:
            raise ValueError("Gram-Schmidt hit a numerically dependent column")
        q[:, j] /= nrm
    return q


def rotation_matrix(q_new: Projection, q_old: Projection) -> np.ndarray:
    """R = Q_new^T Q_old; singular values lie in [0, 1]."""
    if q_new.dim != q_old.dim or q_new.rank != q_old.rank:
        raise ValueError(
            f"projection shapes differ: {q_new.q.shape} vs {q_old.q.shape}"
        )
    return q_new.q.T @ q_old.q


def mssv(r_mat) -> float:
    """Mean squared singular value of a rotation matrix: ||R||_F^2 / r."""
    r_mat = as_matrix(r_mat, "rotation matrix")
    r = r_mat.shape[0]
    return float(frobenius_norm(r_mat) ** 2 / r)


def stable_rank(a) -> float:
    """||A||_F^2 / sigma_1^2; zero matrix reports 0 with a warning."""
    a = as_matrix(a, "stable_rank input")
    spec = spectral_norm(a)
    if spec == 0.0:
        warnings.warn("stable_rank of a zero matrix is reported as 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return float((frobenius_norm(a) / spec) ** 2)


def spectral_gap(s, rank: int) -> float:
    """sigma_r - sigma_{r+1} for a descending singular value array (1-based r)."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 1:
        raise ValueError("singular values must be a 1-D array")
    if not (1 <= rank < s.size):
        raise ValueError(f"rank {rank} needs at least {rank + 1} singular values, got {s.size}")
    return float(s[rank - 1] - s[rank])


def sin_theta_distance(q1: Projection, q2: Projection) -> float:
    """Frobenius sin-theta distance sqrt(r - ||Q1^T Q2||_F^2) in [0, sqrt(r)].

    Evaluated as ||(I - Q1 Q1^T) Q2||_F, which equals the subtracted form
    exactly for orthonormal bases but stays accurate near zero.
    """
    if q1.dim != q2.dim or q1.rank != q2.rank:
        raise ValueError(f"projection shapes differ: {q1.q.shape} vs {q2.q.shape}")
    residual = q2.q - q1.q @ (q1.q.T @ q2.q)
    return min(frobenius_norm(residual), float(np.sqrt(q1.rank)))


def rotate_first_moment(r_mat, u) -> np.ndarray:
    r_mat = as_matrix(r_mat, "rotation matrix")
    u = as_matrix(u, "first moment")
    if r_mat.shape[1] != u.shape[0]:
        raise ValueError(f"rotation {r_mat.shape} incompatible with moment {u.shape}")
    return r_mat @ u


def rotate_second_moment(r_mat, u, v, beta1: float, beta2: float, step: int) -> np.ndarray:
    """Re-express the second moment in a new basis.

    Uses the variance-propagation rule for a linear map under an
    independent-coordinates assumption: with bias-corrected
    uh = u/(1-beta1^t) and vh = v/(1-beta2^t),

        (1 - beta2^t) * | (R o R)(vh - uh o uh) + (R uh) o (R uh) |

    where (R o R) is the entrywise-squared rotation applied by matrix
    multiplication. Output is entrywise non-negative.
    """
    r_mat = as_matrix(r_mat, "rotation matrix")
    u = as_matrix(u, "first moment")
    v = as_matrix(v, "second moment")
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    if not (0.0 <= beta1 < 1.0) or not (0.0 <= beta2 < 1.0):
        raise ValueError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
    if u.shape != v.shape or r_mat.shape[1] != u.shape[0]:
        raise ValueError(
            f"shape mismatch: rotation {r_mat.shape}, u {u.shape}, v {v.shape}"
        )
    if np.any(v < 0.0):
        raise ValueError("second moment must be entrywise non-negative")
    cu = 1.0 - beta1**step
    cv = 1.0 - beta2**step
    uh = u / cu
    vh = v / cv
    rub = r_mat @ uh
    mixed = (r_mat * r_mat) @ (vh - uh * uh) + rub * rub
    return cv * np.abs(mixed)


def predicted_instability(kappa: float, batch_size: float, alpha: float, c: float, rank: int) -> float:
    """Projection instability estimate kappa / (alpha * C * sqrt(B)) * r^(alpha+1).

    Derived from the Davis-Kahan bound with a power-law spectrum
    sigma_k = C k^(-alpha) and noise scale kappa / sqrt(B).
    """
    vals = {"kappa": kappa, "batch_size": batch_size, "alpha": alpha, "C": c, "rank": rank}
    for name, val in vals.items():
        if val <= 0:
            raise ValueError(f"{name} must be positive, got {val}")
    return kappa / (alpha * c * np.sqrt(batch_size)) * rank ** (alpha + 1.0)


def subspace_metrics_from_update(
    q_new: Projection, q_old: Projection, signal_singular_values: np.ndarray
) -> SubspaceMetrics:
    """Diagnostics stamped at a projection update, given the signal spectrum."""
    s = np.asarray(signal_singular_values, dtype=np.float64)
    r = q_new.rank
    sr = float(np.sum(s * s) / (s[0] * s[0])) if s.size and s[0] > 0 else 0.0
    gap = spectral_gap(s, r) if r < s.size else 0.0
    return SubspaceMetrics(
        mssv=mssv(rotation_matrix(q_new, q_old)),
        stable_rank=sr,
        spectral_gap=gap,
        sin_theta=sin_theta_distance(q_new, q_old),
    )
