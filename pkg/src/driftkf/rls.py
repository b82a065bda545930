"""Extended recursive least squares with exponential forgetting.

Identifies ``(k_i, m_i)`` of one force direction.  The gain uses the Jacobian
of the Kienzle sum at the prior estimate, the innovation uses the nonlinear
prediction.  No constraints are applied: a run may leave the admissible
region, in which case it is flagged divergent and frozen.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PSD_TOL = 1e-9


@dataclass
class RlsState:
    x_hat: np.ndarray  # (..., 2) as [k, m]
    P: np.ndarray  # (..., 2, 2)
    rho: float = 0.98
    divergent: np.ndarray = field(default=None)

    def __post_init__(self):
        if not 0.0 < self.rho <= 1.0:
            raise ValueError("forgetting factor must lie in (0, 1]")
        self.x_hat = np.asarray(self.x_hat, dtype=float)
        self.P = np.asarray(self.P, dtype=float)
        if self.divergent is None:
            self.divergent = np.zeros(self.x_hat.shape[:-1], dtype=bool)


def rls_init(x0, p0_scale: float = 1e5, rho: float = 0.98) -> RlsState:
    if p0_scale <= 0:
        raise ValueError("p0_scale must be positive")
    x0 = np.asarray(x0, dtype=float)
    P = np.broadcast_to(p0_scale * np.eye(2), x0.shape[:-1] + (2, 2)).copy()
    return RlsState(x_hat=x0.copy(), P=P, rho=rho)


def _terms(x_hat, h, b):
    h = np.asarray(h, dtype=float)
    h = h[h > 0]
    if h.size == 0:
        raise ValueError("sample is fully disengaged; skip it")
    log_h = np.log(h)
    k = x_hat[..., 0]
    m = x_hat[..., 1]
    with np.errstate(over="ignore", invalid="ignore"):
        powered = np.exp((1.0 - m)[..., None] * log_h)
        s0 = b * powered.sum(axis=-1)
        s1 = b * (powered * log_h).sum(axis=-1)
    return k, s0, s1


def rls_jacobian(x_hat, h, b):
    """Gradient of ``sum k b h^(1-m)`` with respect to ``[k, m]``."""
    k, s0, s1 = _terms(np.asarray(x_hat, dtype=float), h, b)
    return np.stack([s0, -k * s1], axis=-1)


def rls_predict(x_hat, h, b):
    k, s0, _ = _terms(np.asarray(x_hat, dtype=float), h, b)
    return k * s0


def _update(x, P, rho, M, innovation):
    PM = P @ M[..., None]
    denom = rho + (M[..., None, :] @ PM)[..., 0, 0]
    G = PM[..., 0] / denom[..., None]
    x_new = x + G * innovation[..., None]
    P_new = (P - G[..., :, None] * (M[..., None, :] @ P)) / rho
    P_new = 0.5 * (P_new + np.swapaxes(P_new, -1, -2))
    return x_new, P_new


def _broken(x, P):
    finite = np.isfinite(x).all(axis=-1) & np.isfinite(P).all(axis=(-1, -2))
    bad = ~finite
    if np.any(finite):
        Pf = np.where(finite[..., None, None], P, 0.0)
        eig_min = np.linalg.eigvalsh(Pf)[..., 0]
        scale = np.abs(Pf).max(axis=(-1, -2))
        bad |= finite & (eig_min < -PSD_TOL * np.maximum(scale, 1.0))
    return bad


def rls_step(state: RlsState, z, h, b) -> RlsState:
    """One RLS update from measured force ``z`` at chip geometry ``h``.

    Runs already marked divergent are left unchanged.
    """
    x, P = state.x_hat, state.P
    with np.errstate(over="ignore", invalid="ignore"):
        M = rls_jacobian(x, h, b)
        innovation = np.asarray(z, dtype=float) - rls_predict(x, h, b)
        x_new, P_new = _update(x, P, state.rho, M, innovation)
        broken = state.divergent | _broken(x_new, P_new)
    keep = broken[..., None]
    return RlsState(
        x_hat=np.where(keep, x, x_new),
        P=np.where(keep[..., None], P, P_new),
        rho=state.rho,
        divergent=broken,
    )


def rls_linear_step(state: RlsState, z, M) -> RlsState:
    """Update for a linear measurement ``z = M . x`` (used to check the recursion)."""
    M = np.asarray(M, dtype=float)
    innovation = np.asarray(z, dtype=float) - (M * state.x_hat).sum(axis=-1)
    x_new, P_new = _update(state.x_hat, state.P, state.rho, M, innovation)
    return RlsState(x_hat=x_new, P=P_new, rho=state.rho, divergent=state.divergent)


def rls_run(h, b, z, x0, p0_scale=1e5, rho=0.98):
    """Track ``[k, m]`` over corrected samples.

    ``z`` has shape ``(n,)`` or ``(n, *batch)``; ``x0`` ``(*batch, 2)``.
    Returns ``(trace, state)`` with ``trace`` of shape ``(n, *batch, 2)``.
    """
    state = rls_init(x0, p0_scale, rho)
    z = np.asarray(z, dtype=float)
    trace = np.empty((len(h),) + state.x_hat.shape)
    for k in range(len(h)):
        if np.any(h[k] > 0):
            state = rls_step(state, z[k], h[k], b)
        trace[k] = state.x_hat
    return trace, state
