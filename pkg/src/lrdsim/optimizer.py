"""Per-tensor low-rank Adam kernel with error feedback and QHM branches.

The kernel keeps first/second moments in a rank-r basis, compresses
gradients through the current projection with an error-feedback buffer,
and forms updates in one of three quasi-hyperbolic flavors:

  none      Q (uh / (sqrt(vh) + eps))
  low_rank  Q ((omega uh + (1-omega) g) / (sqrt(vh) + eps))
  full_rank (1-omega) G / mu(sqrt(vh) + eps) + omega Q (uh / (sqrt(vh) + eps))

where hats are bias-corrected moments and mu() averages the denominator
over the r rows (per column by default, or a single scalar).

A textbook full-rank Adam step lives here too, serving as the oracle
for the exact-degeneracy checks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .linalg import as_matrix
from .projection import Projection

QHM_NONE = "none"
QHM_LOW_RANK = "low_rank"
QHM_FULL_RANK = "full_rank"
QHM_MODES = (QHM_NONE, QHM_LOW_RANK, QHM_FULL_RANK)

MU_PER_COLUMN = "per_column"
MU_SCALAR = "scalar"


@dataclass(frozen=True)
class HyperParams:
    """Optimizer hyperparameters shared by all workers and layers."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_radius: float = 1.0
    omega: Optional[float] = None
    lr: float = 0.01
    warmup_steps: int = 0

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0):
            raise ValueError(f"beta1 must lie in [0, 1), got {self.beta1}")
        if not (0.0 <= self.beta2 < 1.0):
            raise ValueError(f"beta2 must lie in [0, 1), got {self.beta2}")
        if self.eps <= 0.0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.clip_radius <= 0.0:
            raise ValueError(f"clip radius must be positive, got {self.clip_radius}")
        if self.omega is not None and not (0.0 <= self.omega <= 1.0):
            raise ValueError(f"omega must lie in [0, 1], got {self.omega}")
        if self.lr <= 0.0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.warmup_steps < 0:
            raise ValueError(f"warmup_steps must be >= 0, got {self.warmup_steps}")

    def lr_at(self, t: int) -> float:
        """Linear warmup to `lr` over warmup_steps, constant afterwards."""
        if self.warmup_steps <= 0:
            return self.lr
        return self.lr * min(1.0, (t + 1) / self.warmup_steps)


@dataclass
class LowRankOptState:
    """Optimizer state for one parameter tensor on one worker."""

    u: np.ndarray
    v: np.ndarray
    error: np.ndarray
    proj: Projection
    step: int = 0

    @classmethod
    def fresh(cls, p: int, q: int, proj: Projection) -> "LowRankOptState":
        if proj.dim != p:
            raise ValueError(f"projection dimension {proj.dim} does not match p={p}")
        r = proj.rank
        return cls(u=np.zeros((r, q)), v=np.zeros((r, q)), error=np.zeros((p, q)), proj=proj)


def compress_gradient(grad: np.ndarray, state: LowRankOptState) -> tuple[np.ndarray, np.ndarray]:
    """Project grad + error into the current basis; return (g, new_error).

    The reconstruction identity grad + error_prev == Q g + error_new holds
    by construction (the residual is computed from the same sum).
    """
    grad = as_matrix(grad, "gradient")
    q_mat = state.proj.q
    if grad.shape[0] != q_mat.shape[0] or grad.shape != state.error.shape:
        raise ValueError(
            f"gradient {grad.shape} incompatible with projection {q_mat.shape} / error {state.error.shape}"
        )
    carried = grad + state.error
    g = q_mat.T @ carried
    new_error = carried - q_mat @ g
    return g, new_error


def update_moments(state: LowRankOptState, g: np.ndarray, beta1: float, beta2: float) -> LowRankOptState:
    """EMA update of both moments; increments the step counter."""
    if g.shape != state.u.shape:
        raise ValueError(f"compressed gradient {g.shape} does not match moments {state.u.shape}")
    state.u = beta1 * state.u + (1.0 - beta1) * g
    state.v = beta2 * state.v + (1.0 - beta2) * (g * g)
    state.step += 1
    return state


def compute_update(
    state: LowRankOptState,
    grad: np.ndarray,
    g: np.ndarray,
    mode: str,
    hp: HyperParams,
    mu_semantics: str = MU_PER_COLUMN,
) -> np.ndarray:
    """Full-rank update direction for the current step (caller applies -lr)."""
    if mode not in QHM_MODES:
        raise ValueError(f"unknown QHM mode {mode!r}")
    if mode != QHM_NONE:
        if hp.omega is None:
            raise ValueError(f"mode {mode!r} requires omega")
    if state.step < 1:
        raise ValueError("moments must be updated before computing an update")
    t = state.step
    uh = state.u / (1.0 - hp.beta1**t)
    vh = state.v / (1.0 - hp.beta2**t)
    denom = np.sqrt(vh) + hp.eps
    q_mat = state.proj.q
    if mode == QHM_NONE:
        return q_mat @ (uh / denom)
    omega = hp.omega
    if mode == QHM_LOW_RANK:
        return q_mat @ ((omega * uh + (1.0 - omega) * g) / denom)
    if mu_semantics == MU_PER_COLUMN:
        scale = denom.mean(axis=0, keepdims=True)
    elif mu_semantics == MU_SCALAR:
        scale = float(denom.mean())
    else:
        raise ValueError(f"unknown mu semantics {mu_semantics!r}")
    return (1.0 - omega) * grad / scale + omega * (q_mat @ (uh / denom))


def adam_reference_step(
    x: np.ndarray,
    grad: np.ndarray,
    u: np.ndarray,
    v: np.ndarray,
    hp: HyperParams,
    t: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One textbook full-rank Adam step with bias correction.

    `t` is the step index starting at 0; the returned state has seen
    t+1 moment updates. Serves as the oracle for degeneracy checks.
    """
    grad = as_matrix(grad, "gradient")
    if x.shape != grad.shape or u.shape != grad.shape or v.shape != grad.shape:
        raise ValueError("adam reference requires full-rank shapes throughout")
    u = hp.beta1 * u + (1.0 - hp.beta1) * grad
    v = hp.beta2 * v + (1.0 - hp.beta2) * (grad * grad)
    uh = u / (1.0 - hp.beta1 ** (t + 1))
    vh = v / (1.0 - hp.beta2 ** (t + 1))
    x = x - hp.lr_at(t) * (uh / (np.sqrt(vh) + hp.eps))
    return x, u, v
