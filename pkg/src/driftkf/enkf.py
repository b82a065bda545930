"""Box-constrained ensemble Kalman filter with repeated subset inflation.

The state of every member is ``[F_t, F_r, k_t, k_r, m_t, m_r]``.  Ensembles
are plain arrays of shape ``(..., J, 6)``; any leading axes are independent
Monte Carlo runs that are advanced together.  Covariances use the ``1/J``
normalisation throughout.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .mill import summed_force

log = logging.getLogger(__name__)

F_T, F_R, K_T, K_R, M_T, M_R = range(6)
PARAMS = slice(2, 6)
STATE_DIM = 6

# observation operator selecting the two forces
H_FORCES = np.eye(2, STATE_DIM)

# initial ensemble bounds, parameter order (k_t, k_r, m_t, m_r)
INIT_LOWER = np.array([800.0, 600.0, 0.05, 0.01])
INIT_UPPER = np.array([1800.0, 1200.0, 0.6, 0.3])

JITTER = 1e-10
_COND_LIMIT = 1e15


@dataclass(frozen=True)
class BoxConstraints:
    lower: np.ndarray = field(default_factory=lambda: np.array(
        [-np.inf, -np.inf, 500.0, 100.0, 0.1, 0.1]))
    upper: np.ndarray = field(default_factory=lambda: np.array(
        [np.inf, np.inf, 3500.0, 2100.0, 1.0, 1.0]))

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        finite = np.isfinite(lo) & np.isfinite(hi)
        if np.any(lo[finite] >= hi[finite]):
            raise ValueError("lower bound must be below upper bound")


@dataclass(frozen=True)
class InflationPolicy:
    step: int = 50
    lam: float = 10.0
    subset_fraction: float = 0.10

    def __post_init__(self):
        if self.step < 1:
            raise ValueError("inflation step must be >= 1")
        if self.lam < 1:
            raise ValueError("lambda must be >= 1")
        if not 0.0 < self.subset_fraction <= 1.0:
            raise ValueError("subset_fraction must lie in (0, 1]")

    def subset_size(self, J: int) -> int:
        return max(1, int(round(self.subset_fraction * J)))


def member_mean(A, keepdims=False):
    """Mean over the member axis (-2).

    Written as a product with a ones-vector: several times faster than
    ``A.mean(axis=-2)`` for the (runs, J, 6) layout.
    """
    A = np.asarray(A, dtype=float)
    J = A.shape[-2]
    m = (np.ones(J) / J) @ A
    return m[..., None, :] if keepdims else m


def covariance(A, B=None):
    """Empirical (cross-)covariance over the member axis with 1/J scaling."""
    A = np.asarray(A, dtype=float)
    dA = A - member_mean(A, keepdims=True)
    if B is None:
        dB = dA
    else:
        B = np.asarray(B, dtype=float)
        dB = B - member_mean(B, keepdims=True)
    return np.swapaxes(dA, -1, -2) @ dB / A.shape[-2]


def init_ensemble(J, rng, lower=INIT_LOWER, upper=INIT_UPPER, batch=()):
    """Uniform initial ensemble inside the bounds rows; forces start at 0.

    Returns ``(X, P0)`` where ``P0`` is the empirical parameter covariance,
    used as the reference spread for inflation.
    """
    if J < 2:
        raise ValueError("ensemble needs at least two members")
    batch = tuple(batch)
    X = np.zeros(batch + (J, STATE_DIM))
    X[..., PARAMS] = rng.uniform(lower, upper, size=batch + (J, 4))
    return X, covariance(X[..., PARAMS])


def forecast(X, h, b):
    """Identity parameter dynamics; forces recomputed from the chip geometry."""
    out = np.array(X, dtype=float, copy=True)
    out[..., F_T] = summed_force(out[..., K_T], out[..., M_T], b, h)
    out[..., F_R] = summed_force(out[..., K_R], out[..., M_R], b, h)
    return out


def _draw(rng, method, shape):
    """Draw from one generator, or from one generator per leading batch index.

    Per-index generators make a run's random stream independent of which
    other runs share its batch.
    """
    if isinstance(rng, np.random.Generator):
        return getattr(rng, method)(shape)
    rngs = list(rng)
    if len(rngs) != shape[0]:
        raise ValueError("need one generator per entry of the leading batch axis")
    return np.stack([getattr(g, method)(shape[1:]) for g in rngs])


def _psd_sqrt(cov):
    w, v = np.linalg.eigh(cov)
    return v * np.sqrt(np.clip(w, 0.0, None))[..., None, :]


def perturb_measurements(y, gamma, J, rng):
    """Perturbed observation copies ``Z`` (..., J, m) and their ``R_bar``.

    ``R_bar = eps^T eps / J`` is the uncentred second moment of the draws.
    """
    y = np.asarray(y, dtype=float)
    root = _psd_sqrt(np.asarray(gamma, dtype=float))
    shape = y.shape[:-1] + (J, y.shape[-1])
    noise = _draw(rng, "standard_normal", shape)
    if root.ndim == 2:
        # one shared Gamma: a single flat matmul is much cheaper than a batched one
        eps = (noise.reshape(-1, shape[-1]) @ root.T).reshape(shape)
    else:
        eps = noise @ np.swapaxes(root, -1, -2)
    Z = y[..., None, :] + eps
    R_bar = np.swapaxes(eps, -1, -2) @ eps / J
    return Z, R_bar


def _cond2(S):
    """2-norm condition number of 2x2 matrices without an SVD."""
    fro = np.einsum("...ij,...ij->...", S, S)
    det = np.abs(S[..., 0, 0] * S[..., 1, 1] - S[..., 0, 1] * S[..., 1, 0])
    big = 0.5 * (fro + np.sqrt(np.maximum(fro * fro - 4.0 * det * det, 0.0)))
    return big / det


def _solve_innovation(S, rhs):
    """Solve ``S x = rhs`` batched, jittering singular ``S`` once.

    Returns ``(x, singular)`` where ``singular`` marks the jittered entries.
    """
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        cond = _cond2(S) if S.shape[-2:] == (2, 2) else np.linalg.cond(S)
    singular = ~(cond < _COND_LIMIT)
    if np.any(singular):
        S = S + np.where(singular[..., None, None], JITTER * np.eye(S.shape[-1]), 0.0)
        log.debug("innovation covariance singular in %d run(s); jitter added",
                  int(np.sum(singular)))
    return np.linalg.solve(S, rhs), singular


def kalman_gain(P, H, R_bar):
    """``P H^T (H P H^T + R_bar)^{-1}`` with singular flag."""
    PHt = P @ H.T
    S = H @ PHt + R_bar
    GT, singular = _solve_innovation(S, np.swapaxes(PHt, -1, -2))
    return np.swapaxes(GT, -1, -2), singular


def analysis_update(X, Z, H, R_bar):
    """Perturbed-observation analysis; one gain shared by all members.

    ``P H^T`` and ``H P H^T`` are formed from the anomalies directly, which
    is algebraically the same as building the full ``P`` first.
    Returns ``(X_analysis, singular)``.
    """
    X = np.asarray(X, dtype=float)
    J = X.shape[-2]
    Y = X @ H.T
    A = X - member_mean(X, keepdims=True)
    B = Y - member_mean(Y, keepdims=True)
    Bt = np.swapaxes(B, -1, -2)
    PHt_T = Bt @ A / J
    S = Bt @ B / J + R_bar
    GT, singular = _solve_innovation(S, PHt_T)
    return X + (Z - Y) @ GT, singular


def analysis_update_ip(X, Y_hat, Z, gamma):
    """Inverse-problem form ``X + D (C + Gamma)^{-1} (Z - Y_hat)``.

    ``D`` is the state/prediction cross-covariance and ``C`` the prediction
    covariance, so the product is dimensionally consistent.
    Returns ``(X_analysis, singular)``.
    """
    X = np.asarray(X, dtype=float)
    Y_hat = np.asarray(Y_hat, dtype=float)
    D = covariance(X, Y_hat)
    C = covariance(Y_hat)
    W, singular = _solve_innovation(C + gamma, np.swapaxes(D, -1, -2))
    return X + (Z - Y_hat) @ W, singular


def project_box(X, bc: BoxConstraints):
    out = np.maximum(X, bc.lower)
    return np.minimum(out, bc.upper, out=out)


def inflate(X, P0, policy: InflationPolicy, rng, bc: BoxConstraints | None = None):
    """Replace a random subset of members by draws around the subset mean.

    The replacement parameters follow ``N(subset_mean, P0 / lam)``; the
    remaining members are left untouched.  Forces are kept as they are and
    get recomputed by the next forecast.
    """
    X = np.array(X, dtype=float, copy=True)
    batch, J = X.shape[:-2], X.shape[-2]
    M = policy.subset_size(J)
    order = np.argsort(_draw(rng, "random", batch + (J,)), axis=-1)
    chosen = order[..., :M]
    theta = np.take_along_axis(X[..., PARAMS], chosen[..., None], axis=-2)
    mu = member_mean(theta, keepdims=True)
    root = _psd_sqrt(np.asarray(P0, dtype=float) / policy.lam)
    draws = mu + _draw(rng, "standard_normal", batch + (M, 4)) @ np.swapaxes(root, -1, -2)
    params = X[..., PARAMS]
    np.put_along_axis(params, chosen[..., None], draws, axis=-2)
    X[..., PARAMS] = params
    if bc is not None:
        X = project_box(X, bc)
    return X


@dataclass
class EnkfTrace:
    """Per-corrected-sample record of an ``enkf_run``.

    ``mean`` and ``var`` hold the ensemble mean/variance of the parameters,
    shape ``(n, *batch, 4)``; ``singular`` counts jittered analyses per run.
    """

    mean: np.ndarray
    var: np.ndarray
    singular: np.ndarray
    inflated_at: list[int]
    final: np.ndarray


def enkf_run(
    h,
    b,
    y,
    X0,
    gamma,
    rng,
    policy: InflationPolicy | None = None,
    P0=None,
    inflate_rng=None,
    bc: BoxConstraints | None = BoxConstraints(),
    perturb: bool = True,
    record_spread: bool = True,
) -> EnkfTrace:
    """Run the filter over corrected samples.

    Parameters
    ----------
    h : ndarray, shape (n, n_disks)
        Per-disk chip thickness of every corrected sample.
    b : float
        Disk width.
    y : ndarray, shape (n, 2) or (n, *batch, 2)
        Measured ``(F_t, F_r)``.
    X0 : ndarray, shape (*batch, J, 6)
        Initial ensembles.
    gamma : ndarray, shape (2, 2)
        Observation perturbation covariance.
    rng : numpy.random.Generator or sequence of them
        Source of the observation perturbations; a sequence supplies one
        generator per entry of the leading batch axis.
    policy : InflationPolicy or None
        ``None`` gives the classic filter.
    P0 : ndarray, shape (*batch, 4, 4)
        Reference parameter covariance for inflation.
    inflate_rng : Generator or sequence of them
        Separate stream for inflation so the perturbation draws stay aligned
        with a classic run from the same seed.
    bc : BoxConstraints or None
        ``None`` disables projection.
    perturb : bool
        ``False`` feeds the raw measurement to every member (``R_bar = 0``).
    record_spread : bool
        Store per-step parameter variances; ``var`` is ``None`` otherwise.
    """
    h = np.asarray(h, dtype=float)
    y = np.asarray(y, dtype=float)
    X = np.array(X0, dtype=float, copy=True)
    batch, J = X.shape[:-2], X.shape[-2]
    n = len(h)
    if n == 0:
        raise ValueError("no samples to assimilate")
    if policy is not None and (P0 is None or inflate_rng is None):
        raise ValueError("inflation needs P0 and inflate_rng")
    gamma = np.asarray(gamma, dtype=float)
    mean = np.empty((n,) + batch + (4,))
    var = np.empty_like(mean) if record_spread else None
    singular = np.zeros(batch, dtype=int)
    inflated_at = []
    for k in range(n):
        X = forecast(X, h[k], b)
        yk = np.broadcast_to(y[k], batch + (2,))
        if perturb:
            Z, R_bar = perturb_measurements(yk, gamma, J, rng)
        else:
            Z, R_bar = np.broadcast_to(yk[..., None, :], batch + (J, 2)), np.zeros(batch + (2, 2))
        X, sing = analysis_update(X, Z, H_FORCES, R_bar)
        singular += sing
        if bc is not None:
            X = project_box(X, bc)
        if policy is not None and (k + 1) % policy.step == 0:
            X = inflate(X, P0, policy, inflate_rng, bc)
            inflated_at.append(k)
        mu = member_mean(X)
        mean[k] = mu[..., PARAMS]
        if record_spread:
            var[k] = member_mean((X - mu[..., None, :])[..., PARAMS] ** 2)
    return EnkfTrace(mean=mean, var=var, singular=singular,
                     inflated_at=inflated_at, final=X)
