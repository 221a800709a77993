"""Gaussian orthant probabilities.

``P(sign(Z_i) = s_i for all i)`` with ``Z ~ N(mean, cov)``, evaluated with the
separation-of-variables transform of Genz and randomized quasi-Monte Carlo
(independently scrambled Sobol point sets). Many mean vectors sharing one covariance are handled in a batch, which
is how the detector uses it: one covariance, every trellis branch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import qmc

DEFAULT_TOL = 1e-6
DEFAULT_MAX_POINTS = 100_000
_SEED = 0x5EED
_N_SCRAMBLES = 10
_FIRST_BLOCK = 64


@dataclass(frozen=True)
class OrthantQuery:
    """Real Gaussian and the orthant it should land in."""

    mean: np.ndarray
    cov: np.ndarray
    signs: np.ndarray

    def __post_init__(self):
        d = len(self.mean)
        if np.shape(self.cov) != (d, d) or len(self.signs) != d:
            raise ValueError("mean, cov and signs have inconsistent dimensions")
        if not np.all(np.isin(self.signs, (-1, 1))):
            raise ValueError("signs must be +-1")


def is_diagonal(cov: np.ndarray, rel: float = 1e-12) -> bool:
    off = cov - np.diag(np.diag(cov))
    return bool(np.max(np.abs(off), initial=0.0) < rel * np.max(np.abs(np.diag(cov))))


def _checked_cholesky(cov: np.ndarray) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * np.max(np.abs(cov))):
        raise ValueError("covariance is not symmetric")
    w = np.linalg.eigvalsh(cov)
    if w[0] < -1e-10 * w[-1]:
        raise ValueError(f"covariance is not positive semi-definite (min eigenvalue {w[0]:.3g})")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * np.trace(cov) / len(cov)
        return np.linalg.cholesky(cov + jitter * np.eye(len(cov)))


def _sov_integrand(lower: np.ndarray, chol: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Genz integrand for ``P(chol @ w > lower)``.

    ``lower`` is (B, d), ``u`` is (d-1, n) uniform points; returns (B, n).
    """
    B, d = lower.shape
    n = u.shape[1]
    diag = np.diag(chol)
    e = ndtr(-lower[:, 0] / diag[0])[:, None] * np.ones((1, n))
    f = e.copy()
    ws = []
    for i in range(1, d):
        # draw w_{i-1} from its truncated conditional
        tail = np.clip(e * u[i - 1][None, :], 1e-300, 1.0)
        ws.append(-ndtri(tail))
        acc = np.zeros((B, n))
        for j, w in enumerate(ws):
            if chol[i, j] != 0.0:
                acc += chol[i, j] * w
        b = (lower[:, i][:, None] - acc) / diag[i]
        e = ndtr(-b)
        f *= e
    return f


def orthant_probabilities(means: np.ndarray, cov: np.ndarray, signs: np.ndarray,
                          tol: float = DEFAULT_TOL, max_points: int = DEFAULT_MAX_POINTS,
                          return_error: bool = False):
    """Orthant probability for every row of ``means`` under one covariance.

    The estimate stops refining a row once its error estimate (3 standard
    errors over the scramblings) is below ``tol``, or when the next doubling
    would exceed ``max_points`` integrand evaluations; the error estimate then
    reports what was reached.
    """
    means = np.atleast_2d(np.asarray(means, dtype=float))
    cov = np.asarray(cov, dtype=float)
    signs = np.asarray(signs, dtype=float)
    B, d = means.shape
    if cov.shape != (d, d) or signs.shape != (d,):
        raise ValueError("mean, cov and signs have inconsistent dimensions")
    if tol <= 0:
        raise ValueError("tol must be positive")
    m = means * signs[None, :]
    c = cov * np.outer(signs, signs)
    err = np.zeros(B)
    if is_diagonal(c):
        sd = np.sqrt(np.diag(c))
        if np.any(sd <= 0):
            raise ValueError("covariance has a zero variance")
        p = np.prod(ndtr(m / sd[None, :]), axis=1)
        return (p, err) if return_error else p
    chol = _checked_cholesky(c)
    if np.any(np.diag(chol) <= 0):
        raise ValueError("degenerate covariance")
    lower = -m
    if d == 1:
        p = ndtr(-lower[:, 0] / chol[0, 0])
        return (p, err) if return_error else p

    engines = [qmc.Sobol(d - 1, scramble=True, rng=np.random.default_rng([_SEED, k]))
               for k in range(_N_SCRAMBLES)]
    sums = np.zeros((B, _N_SCRAMBLES))
    counts = 0
    n = _FIRST_BLOCK
    active = np.arange(B)
    est = np.zeros(B)
    while True:
        # every engine continues its own sequence, so the totals stay powers of two
        for k, eng in enumerate(engines):
            u = eng.random(n).T
            sums[active, k] += _sov_integrand(lower[active], chol, u).sum(axis=1)
        counts += n
        per_scramble = sums[active] / counts
        est[active] = per_scramble.mean(axis=1)
        err[active] = 3.0 * per_scramble.std(axis=1, ddof=1) / np.sqrt(_N_SCRAMBLES)
        active = active[err[active] > tol]
        if active.size == 0 or 2 * counts * _N_SCRAMBLES > max_points:
            break
        n = counts  # double the point set
    est = np.clip(est, 0.0, 1.0)
    return (est, err) if return_error else est


def orthant_probability(q: OrthantQuery, tol: float = DEFAULT_TOL,
                        max_points: int = DEFAULT_MAX_POINTS) -> float:
    return float(orthant_probabilities(q.mean[None, :], q.cov, q.signs, tol, max_points)[0])


def complex_to_real_cov(R: np.ndarray) -> np.ndarray:
    """Covariance of ``[Re z_1, Im z_1, Re z_2, ...]`` for circular ``z`` with ``E[z z^H] = R``."""
    n = R.shape[0]
    out = np.empty((2 * n, 2 * n))
    out[0::2, 0::2] = R.real / 2
    out[1::2, 1::2] = R.real / 2
    out[0::2, 1::2] = -R.imag / 2
    out[1::2, 0::2] = R.imag / 2
    return out


def complex_to_real(z: np.ndarray) -> np.ndarray:
    """Interleave real and imaginary parts along the last axis."""
    z = np.asarray(z)
    out = np.empty(z.shape[:-1] + (2 * z.shape[-1],))
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out
