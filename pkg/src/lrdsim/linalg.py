"""Minimal dense linear algebra on float64 matrices.

A "matrix" throughout this package is a C-contiguous 2-D float64 numpy
array. Entries must be finite at API boundaries; helpers here validate
that and name the offending index on failure.

The SVD is a one-sided cyclic Jacobi with a fixed round-robin pair
ordering, so results are bit-deterministic for identical input. Target
sizes are small (p, q <= 1024); no attempt is made at blocked or
randomized algorithms.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 60


class NonFiniteError(ValueError):
    """Raised when a matrix contains NaN or Inf entries."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return `a` as a finite 2-D float64 array."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must have positive dimensions, got {arr.shape}")
    require_finite(arr, name)
    return np.ascontiguousarray(arr)


def require_finite(a: np.ndarray, name: str = "matrix") -> None:
    finite = np.isfinite(a)
    if not finite.all():
        idx = np.argwhere(~finite)[0]
        bad = a[tuple(idx)]
        raise NonFiniteError(f"{name} has non-finite entry {bad!r} at index {tuple(int(i) for i in idx)}")


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD A = U diag(S) V^T with k = min(p, q) columns.

    U (p x k) and V (q x k) are column-orthonormal; S is descending and
    non-negative. The sign convention makes the largest-magnitude entry
    of each U column positive (lowest row index wins exact ties).
    """

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray


@lru_cache(maxsize=32)
def _round_robin_rounds(n: int) -> tuple:
    """Fixed round-robin ordering: n-1 rounds of disjoint column pairs."""
    m = n if n % 2 == 0 else n + 1
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = []
        for k in range(m // 2):
            a, b = players[k], players[m - 1 - k]
            if a < n and b < n:
                pairs.append((min(a, b), max(a, b)))
        if pairs:
            rounds.append((np.array([i for i, _ in pairs]), np.array([j for _, j in pairs])))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return tuple(rounds)


def _orthonormal_complete(u: np.ndarray, cols: np.ndarray) -> None:
    # Fill exactly-zero singular directions with canonical basis vectors,
    # Gram-Schmidt'ed against the existing columns. Deterministic.
    m = u.shape[0]
    for j in cols:
        for k in range(m):
            cand = np.zeros(m)
            cand[k] = 1.0
            cand -= u @ (u.T @ cand)
            cand -= u @ (u.T @ cand)
            nrm = float(np.linalg.norm(cand))
            if nrm > 0.5:
                u[:, j] = cand / nrm
                break


def svd(a) -> SvdResult:
    """Deterministic thin SVD via one-sided cyclic Jacobi.

    Works on the taller orientation (transposes when cols > rows).
    Rotations are applied whenever a column pair is not numerically
    orthogonal; sweeps stop once every pair's relative off-diagonal
    falls below 1e-12, capped at 60 sweeps.
    """
    a = as_matrix(a, "svd input")
    transposed = a.shape[1] > a.shape[0]
    w = (a.T if transposed else a).copy()
    n = w.shape[1]
    v = np.eye(n)
    rotate_tol = 1e-15
    if n > 1:
        rounds = _round_robin_rounds(n)
        for _ in range(JACOBI_MAX_SWEEPS):
            # exact squared column norms at sweep start; updated incrementally
            # (and clamped at zero) within the sweep
            norms = np.einsum("ij,ij->j", w, w)
            sweep_max = 0.0
            for ii, jj in rounds:
                aa = norms[ii]
                bb = norms[jj]
                cc = np.einsum("ij,ij->j", w[:, ii], w[:, jj])
                denom = np.sqrt(aa * bb)
                rel = np.abs(cc) / np.where(denom > 0.0, denom, 1.0)
                rel[denom == 0.0] = 0.0
                m = float(rel.max()) if rel.size else 0.0
                if m > sweep_max:
                    sweep_max = m
                active = rel > rotate_tol
                if not active.any():
                    continue
                ia = ii[active]
                ja = jj[active]
                aa = aa[active]
                bb = bb[active]
                cc = cc[active]
                zeta = (bb - aa) / (2.0 * cc)
                big = np.abs(zeta) > 1e150  # avoid overflow in zeta**2; limit is 1/(2 zeta)
                safe = np.where(big, 0.0, zeta)
                t = np.where(
                    big,
                    0.5 / np.where(big, zeta, 1.0),
                    np.where(zeta == 0.0, 1.0, np.sign(zeta) / (np.abs(zeta) + np.sqrt(1.0 + safe * safe))),
                )
                cs = 1.0 / np.sqrt(1.0 + t * t)
                sn = cs * t
                wi = w[:, ia]
                wj = w[:, ja]
                w[:, ia] = wi * cs - wj * sn
                w[:, ja] = wi * sn + wj * cs
                vi = v[:, ia]
                vj = v[:, ja]
                v[:, ia] = vi * cs - vj * sn
                v[:, ja] = vi * sn + vj * cs
                cross = 2.0 * cs * sn * cc
                norms[ia] = np.maximum(cs * cs * aa + sn * sn * bb - cross, 0.0)
                norms[ja] = np.maximum(sn * sn * aa + cs * cs * bb + cross, 0.0)
            if sweep_max <= JACOBI_TOL:
                break
    s = np.sqrt(np.einsum("ij,ij->j", w, w))
    order = np.argsort(-s, kind="stable")
    s = s[order]
    w = w[:, order]
    v = v[:, order]
    u = np.zeros_like(w)
    nz = s > 0.0
    u[:, nz] = w[:, nz] / s[nz]
    zero_cols = np.where(~nz)[0]
    if zero_cols.size:
        _orthonormal_complete(u, zero_cols)
    for j in range(n):
        idx = int(np.argmax(np.abs(u[:, j])))
        if u[idx, j] < 0.0:
            u[:, j] = -u[:, j]
            v[:, j] = -v[:, j]
    if transposed:
        return SvdResult(u=np.ascontiguousarray(v), s=s, v=np.ascontiguousarray(u))
    return SvdResult(u=np.ascontiguousarray(u), s=s, v=np.ascontiguousarray(v))


def singular_values(a) -> np.ndarray:
    return svd(a).s


def spectral_norm(a) -> float:
    """Largest singular value."""
    a = as_matrix(a, "spectral_norm input")
    if not a.any():
        return 0.0
    return float(svd(a).s[0])


def frobenius_norm(a) -> float:
    a = as_matrix(a, "frobenius_norm input")
    return float(np.sqrt(np.sum(a * a)))


def clip_frobenius(g, radius: float) -> np.ndarray:
    """Scale `g` onto the Frobenius ball of the given radius if it lies outside."""
    if radius <= 0:
        raise ValueError(f"clip radius must be positive, got {radius}")
    g = as_matrix(g, "clip input")
    norm = frobenius_norm(g)
    if norm <= radius:
        return g
    return g * (radius / norm)


def numerical_rank(a, rel_tol: float = 1e-10) -> int:
    """Count singular values above rel_tol times the largest."""
    s = svd(a).s
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))
