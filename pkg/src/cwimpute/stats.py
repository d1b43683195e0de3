"""Distribution samplers, densities and dense linear-algebra kernels.

Everything here is a pure function of its inputs plus an explicit
``numpy.random.Generator``; there is no module-level state, so the functions
are safe to call from multiple threads as long as each thread owns its
generator.

Conventions
-----------
* Gamma distributions use the *rate* parameterization: ``sample_gamma(rng, a, b)``
  has mean ``a / b``.
* The inverse-Wishart ``sample_inverse_wishart(rng, dof, scale)`` has density
  proportional to ``|S|^-(dof+q+1)/2 * exp(-tr(scale @ inv(S)) / 2)``, i.e. the
  scale matrix sits inside the trace and ``E[S] = scale / (dof - q - 1)``.
* Categorical draws are 0-based indices.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

__all__ = [
    "RngStream",
    "rng_stream",
    "chol_psd",
    "mvn_logpdf",
    "mvn_sample",
    "sample_inverse_wishart",
    "sample_gamma",
    "sample_beta",
    "sample_categorical",
    "categorical_rows",
    "conditional_gaussian",
    "effective_sample_size",
]

LOG_2PI = math.log(2.0 * math.pi)

# Relative jitter ladder tried before declaring a matrix non positive definite.
# The sampler routinely visits near-empty components whose scale matrices sit
# close to singularity, hence the retries.
JITTER_LADDER = (1e-10, 1e-8, 1e-6)


@dataclass(frozen=True)
class RngStream:
    """Seed-addressed random stream.

    The same ``(seed, stream)`` pair always yields an identical generator,
    while distinct stream ids give independent-quality streams (numpy
    ``SeedSequence`` spawn keys). Parallel tasks should each own one stream.
    """

    seed: int
    stream: int = 0

    def generator(self):
        return rng_stream(self.seed, self.stream)


def rng_stream(seed, stream=0):
    """Return a ``numpy.random.Generator`` for the given (seed, stream) pair."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),)))


def _as_generator(rng):
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected numpy Generator or RngStream, got {type(rng).__name__}")


def chol_psd(sigma, name="matrix"):
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    On failure the factorization is retried with ``j * mean(diag) * I`` added,
    for ``j`` in the jitter ladder, before raising.

    Raises
    ------
    np.linalg.LinAlgError
        If the matrix is still not positive definite after the maximum
        jitter. The message names the matrix and reports its smallest
        eigenvalue.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValueError(f"{name}: expected a square matrix, got shape {sigma.shape}")
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        pass
    base = float(np.mean(np.diag(sigma)))
    if not np.isfinite(base) or base <= 0.0:
        base = 1.0
    eye = np.eye(sigma.shape[0])
    for j in JITTER_LADDER:
        try:
            return np.linalg.cholesky(sigma + j * base * eye)
        except np.linalg.LinAlgError:
            continue
    smallest = float(np.linalg.eigvalsh(sigma)[0])
    raise np.linalg.LinAlgError(
        f"{name} is not positive definite (smallest eigenvalue ~ {smallest:.3e}, "
        f"jitter up to {JITTER_LADDER[-1]:.0e} * mean diagonal tried)"
    )


def mvn_logpdf(x, mu, sigma):
    """Log density of a multivariate normal, via Cholesky (no explicit inverse).

    Parameters
    ----------
    x : array, shape (q,) or (n, q)
        Evaluation point(s).
    mu : array, shape (q,)
    sigma : array, shape (q, q)
        Symmetric positive-definite covariance.

    Returns
    -------
    float or array of shape (n,)
    """
    x = np.asarray(x, dtype=float)
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    q = mu.shape[0]
    if sigma.shape != (q, q):
        raise ValueError(f"covariance shape {sigma.shape} does not match mean dimension {q}")
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if pts.shape[1] != q:
        raise ValueError(f"points have dimension {pts.shape[1]}, expected {q}")
    L = chol_psd(sigma, name="covariance")
    out = _mvn_logpdf_chol(pts, mu, L)
    return float(out[0]) if single else out


def _mvn_logpdf_chol(pts, mu, L):
    """Log density given a precomputed Cholesky factor; pts is (n, q)."""
    q = mu.shape[0]
    # z = L^-1 (x - mu); inverting the triangular factor is cheap and stable
    # for the small dimensions used here and avoids per-call solver overhead.
    z = (pts - mu) @ np.linalg.inv(L).T
    maha = np.einsum("ij,ij->i", z, z)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return -0.5 * (q * LOG_2PI + logdet + maha)


def mvn_sample(rng, mu, sigma, size=None):
    """Draw ``mu + L z`` with ``L`` the Cholesky factor and ``z`` iid standard normal."""
    rng = _as_generator(rng)
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    q = mu.shape[0]
    if sigma.shape != (q, q):
        raise ValueError(f"covariance shape {sigma.shape} does not match mean dimension {q}")
    L = chol_psd(sigma, name="covariance")
    if size is None:
        return mu + L @ rng.standard_normal(q)
    return mu + rng.standard_normal((int(size), q)) @ L.T


_TRIL_CACHE = {}


def _tril_indices(q):
    if q not in _TRIL_CACHE:
        _TRIL_CACHE[q] = np.tril_indices(q, -1)
    return _TRIL_CACHE[q]


def sample_inverse_wishart(rng, dof, scale):
    """Inverse-Wishart draw through the Bartlett decomposition.

    The precision ``S^-1`` is Wishart(dof, inv(scale)); with ``C`` the lower
    Cholesky factor of ``scale`` and ``A`` a Bartlett factor, the draw is
    ``S = Z^T Z`` for ``Z = solve(A, C^T)``, so no explicit inverse of the
    scale matrix is formed.

    Requires ``dof > q - 1``. ``E[S] = scale / (dof - q - 1)`` when finite.
    """
    rng = _as_generator(rng)
    scale = np.asarray(scale, dtype=float)
    q = scale.shape[0]
    if not dof > q - 1:
        raise ValueError(f"inverse-Wishart needs dof > q - 1 = {q - 1}, got {dof}")
    C = chol_psd(scale, name="inverse-Wishart scale")
    A = np.zeros((q, q))
    df = dof - np.arange(q)
    A[np.diag_indices(q)] = np.sqrt(rng.chisquare(df))
    if q > 1:
        A[_tril_indices(q)] = rng.standard_normal(q * (q - 1) // 2)
    Z = np.linalg.solve(A, C.T)
    return Z.T @ Z


def sample_gamma(rng, shape, rate):
    """Gamma draw with mean ``shape / rate`` (rate convention)."""
    if shape <= 0.0 or rate <= 0.0:
        raise ValueError(f"gamma parameters must be positive, got shape={shape}, rate={rate}")
    return float(_as_generator(rng).gamma(shape, 1.0 / rate))


def sample_beta(rng, a, b):
    if a <= 0.0 or b <= 0.0:
        raise ValueError(f"beta parameters must be positive, got a={a}, b={b}")
    return float(_as_generator(rng).beta(a, b))


def sample_categorical(rng, weights):
    """Draw a 0-based index with probability proportional to ``weights``."""
    rng = _as_generator(rng)
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1:
        raise ValueError("weights must be a vector")
    if np.any(w < 0.0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0.0:
        raise ValueError("weights must have positive sum")
    cum = np.cumsum(w)
    return int(np.searchsorted(cum, rng.random() * total, side="right").clip(0, w.size - 1))


def categorical_rows(rng, log_weights):
    """Row-wise categorical draws from a matrix of unnormalized log weights.

    Parameters
    ----------
    log_weights : array, shape (n, G)

    Returns
    -------
    array of shape (n,), 0-based component indices.
    """
    rng = _as_generator(rng)
    lw = np.asarray(log_weights, dtype=float)
    if np.isnan(lw).any():
        raise ValueError("log weights contain NaN")
    shifted = lw - lw.max(axis=1, keepdims=True)
    w = np.exp(shifted)
    cum = np.cumsum(w, axis=1)
    u = rng.random(lw.shape[0]) * cum[:, -1]
    idx = (cum < u[:, None]).sum(axis=1)
    return np.minimum(idx, lw.shape[1] - 1)


def conditional_gaussian(mu, sigma, given_idx, given_vals):
    """Condition a Gaussian on a subset of coordinates (Schur complement).

    Parameters
    ----------
    mu : array, shape (q,)
    sigma : array, shape (q, q)
    given_idx : sequence of int
        Strict subset of coordinates to condition on.
    given_vals : array, matching ``given_idx``
        Observed values of those coordinates.

    Returns
    -------
    (mu_cond, sigma_cond)
        Moments of the free coordinates, in their original order. The
        conditional covariance does not depend on ``given_vals``.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    q = mu.shape[0]
    given_idx = np.asarray(given_idx, dtype=int)
    given_vals = np.asarray(given_vals, dtype=float)
    if given_idx.size != given_vals.size:
        raise ValueError("given_idx and given_vals must have the same length")
    if given_idx.size >= q:
        raise ValueError("given_idx must be a strict subset of the coordinates")
    if given_idx.size != np.unique(given_idx).size:
        raise ValueError("given_idx contains duplicates")
    free_idx = np.setdiff1d(np.arange(q), given_idx)
    S_gg = sigma[np.ix_(given_idx, given_idx)]
    S_fg = sigma[np.ix_(free_idx, given_idx)]
    S_ff = sigma[np.ix_(free_idx, free_idx)]
    L = chol_psd(S_gg, name="conditioning block")
    # S_fg @ inv(S_gg) through two triangular solves.
    gain = cho_solve((L, True), S_fg.T).T
    mu_cond = mu[free_idx] + gain @ (given_vals - mu[given_idx])
    sigma_cond = S_ff - gain @ S_fg.T
    sigma_cond = 0.5 * (sigma_cond + sigma_cond.T)
    return mu_cond, sigma_cond


def effective_sample_size(chain):
    """Effective sample size from the initial positive autocorrelation sequence.

    Pairs of consecutive autocorrelations are summed while the pair sums stay
    positive (Geyer's initial positive sequence); the result is capped at the
    chain length. A constant chain returns the chain length (zero-variance
    convention).
    """
    x = np.asarray(chain, dtype=float)
    if x.ndim != 1 or x.size < 10:
        raise ValueError("chain must be a 1-D sequence of length >= 10")
    n = x.size
    x = x - x.mean()
    var = float(np.dot(x, x)) / n
    if var == 0.0:
        return float(n)
    # FFT autocovariance, biased normalization.
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n].real / n
    rho = acov / acov[0]
    tau = -1.0
    k = 0
    while 2 * k + 1 < n:
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair <= 0.0:
            break
        tau += 2.0 * pair
        k += 1
    tau = max(tau, 1.0 / n)
    return float(min(n / tau, n))
