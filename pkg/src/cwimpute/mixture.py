"""Gaussian mixture parameterizations on a joint (input, output) space.

Two equivalent views of the same model live here. ``FmmParams`` is the plain
finite mixture of Gaussians on the joint space. ``LcwmParams`` is its
cluster-weighted factorization: per component, a Gaussian marginal on the
input block times a linear-Gaussian conditional for the output block. The
mapping between the two is an exact Schur-complement identity, which the
tests exercise pointwise.

All mixture evaluations run in log space with log-sum-exp; NaN inputs raise
instead of silently falling back to uniform responsibilities.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve

from .stats import chol_psd, mvn_logpdf

__all__ = [
    "ColumnRoles",
    "FmmParams",
    "LcwmParams",
    "fmm_logpdf",
    "fmm_sample",
    "marginal_params",
    "fmm_to_lcwm",
    "lcwm_joint_logdensity",
    "responsibility_xy",
    "responsibility_x",
    "responsibility_mrm",
]

SIMPLEX_TOL = 1e-12


def _log_weights(alpha):
    """Log of mixture weights; exact zeros are clamped to stay finite."""
    return np.log(np.maximum(alpha, 1e-300))


def _logsumexp_rows(a):
    """Row-wise log-sum-exp of a (n, G) matrix."""
    m = a.max(axis=1)
    return m + np.log(np.exp(a - m[:, None]).sum(axis=1))


@dataclass(frozen=True)
class ColumnRoles:
    """Split of the columns of a table into input and output blocks.

    ``input_idx`` may be empty (no auxiliary variables); ``output_idx`` must
    not be. Together they must cover all columns exactly once.
    """

    input_idx: tuple
    output_idx: tuple

    def __post_init__(self):
        object.__setattr__(self, "input_idx", tuple(int(i) for i in self.input_idx))
        object.__setattr__(self, "output_idx", tuple(int(i) for i in self.output_idx))
        if len(self.output_idx) < 1:
            raise ValueError("at least one output column is required")
        combined = self.input_idx + self.output_idx
        if len(set(combined)) != len(combined):
            raise ValueError("input and output indices must be disjoint")
        if sorted(combined) != list(range(len(combined))):
            raise ValueError("input and output indices must cover 0..q-1 exactly")

    @property
    def d(self):
        return len(self.input_idx)

    @property
    def p(self):
        return len(self.output_idx)

    @property
    def q(self):
        return self.d + self.p

    @classmethod
    def from_counts(cls, d, p):
        """Roles for a table laid out as d input columns followed by p outputs."""
        return cls(tuple(range(d)), tuple(range(d, d + p)))


@dataclass
class FmmParams:
    """Finite Gaussian mixture: weights, means and covariances on the joint space."""

    alpha: np.ndarray  # (G,)
    mu: np.ndarray     # (G, q)
    sigma: np.ndarray  # (G, q, q)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.mu = np.atleast_2d(np.asarray(self.mu, dtype=float))
        self.sigma = np.asarray(self.sigma, dtype=float)
        if self.sigma.ndim == 2:
            self.sigma = self.sigma[None, :, :]
        g, q = self.mu.shape
        if self.alpha.shape != (g,) or self.sigma.shape != (g, q, q):
            raise ValueError(
                f"inconsistent shapes: alpha {self.alpha.shape}, mu {self.mu.shape}, sigma {self.sigma.shape}"
            )

    @property
    def g(self):
        return self.alpha.shape[0]

    @property
    def q(self):
        return self.mu.shape[1]

    def validate(self):
        """Check the simplex and positive-definiteness invariants."""
        if np.any(self.alpha < 0.0) or abs(self.alpha.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"weights must be a simplex, got sum {self.alpha.sum()!r}")
        for g in range(self.g):
            chol_psd(self.sigma[g], name=f"component {g} covariance")
        return self

    def to_dict(self):
        return {
            "g": int(self.g),
            "alpha": self.alpha.tolist(),
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
        }

    @classmethod
    def from_dict(cls, payload):
        params = cls(
            alpha=np.asarray(payload["alpha"], dtype=float),
            mu=np.asarray(payload["mu"], dtype=float),
            sigma=np.asarray(payload["sigma"], dtype=float),
        )
        if "g" in payload and int(payload["g"]) != params.g:
            raise ValueError(f"declared g={payload['g']} but {params.g} components given")
        return params

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class LcwmParams:
    """Cluster-weighted factorization of a joint Gaussian mixture.

    Per component: weight ``alpha_g``, input-marginal moments ``(mu_x, sigma_x)``,
    regression map ``y | x ~ N(coef_g^T x + intercept_g, sigma_cond_g)``.
    ``roles`` records which joint coordinates form the input and output blocks.
    """

    alpha: np.ndarray        # (G,)
    mu_x: np.ndarray         # (G, d)
    sigma_x: np.ndarray      # (G, d, d)
    coef: np.ndarray         # (G, d, p)
    intercept: np.ndarray    # (G, p)
    sigma_cond: np.ndarray   # (G, p, p)
    roles: ColumnRoles = field(default=None)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.mu_x = np.asarray(self.mu_x, dtype=float)
        self.sigma_x = np.asarray(self.sigma_x, dtype=float)
        self.coef = np.asarray(self.coef, dtype=float)
        self.intercept = np.asarray(self.intercept, dtype=float)
        self.sigma_cond = np.asarray(self.sigma_cond, dtype=float)
        if self.roles is None:
            self.roles = ColumnRoles.from_counts(self.d, self.p)

    @property
    def g(self):
        return self.alpha.shape[0]

    @property
    def d(self):
        return self.mu_x.shape[1]

    @property
    def p(self):
        return self.intercept.shape[1]

    def conditional_mean(self, g, x):
        """Mean of the output block for component ``g`` at input(s) ``x``."""
        x = np.asarray(x, dtype=float)
        if self.d == 0:
            base = np.broadcast_to(self.intercept[g], x.shape[:-1] + (self.p,)) if x.ndim > 1 else self.intercept[g]
            return np.array(base, dtype=float)
        return x @ self.coef[g] + self.intercept[g]

    def to_dict(self):
        return {
            "alpha": self.alpha.tolist(),
            "mu_x": self.mu_x.tolist(),
            "sigma_x": self.sigma_x.tolist(),
            "coef": self.coef.tolist(),
            "intercept": self.intercept.tolist(),
            "sigma_cond": self.sigma_cond.tolist(),
            "input_idx": list(self.roles.input_idx),
            "output_idx": list(self.roles.output_idx),
        }

    @classmethod
    def from_dict(cls, payload):
        return cls(
            alpha=np.asarray(payload["alpha"], dtype=float),
            mu_x=np.asarray(payload["mu_x"], dtype=float),
            sigma_x=np.asarray(payload["sigma_x"], dtype=float),
            coef=np.asarray(payload["coef"], dtype=float),
            intercept=np.asarray(payload["intercept"], dtype=float),
            sigma_cond=np.asarray(payload["sigma_cond"], dtype=float),
            roles=ColumnRoles(payload["input_idx"], payload["output_idx"]),
        )


def _component_logpdfs(params, pts):
    """Stacked per-component log densities, shape (n, G)."""
    out = np.empty((pts.shape[0], params.g))
    for g in range(params.g):
        out[:, g] = mvn_logpdf(pts, params.mu[g], params.sigma[g])
    return out


def fmm_logpdf(params, w):
    """Log density of the joint Gaussian mixture at point(s) ``w``."""
    w = np.asarray(w, dtype=float)
    single = w.ndim == 1
    pts = np.atleast_2d(w)
    if np.isnan(pts).any():
        raise ValueError("mixture density evaluated at NaN input")
    logs = _component_logpdfs(params, pts) + _log_weights(params.alpha)[None, :]
    out = _logsumexp_rows(logs)
    return float(out[0]) if single else out


def fmm_sample(rng, params, n):
    """Ancestral sample of size ``n``: component labels and joint rows."""
    labels = rng.choice(params.g, size=int(n), p=params.alpha / params.alpha.sum())
    w = np.empty((int(n), params.q))
    for g in range(params.g):
        rows = np.flatnonzero(labels == g)
        if rows.size == 0:
            continue
        L = chol_psd(params.sigma[g], name=f"component {g} covariance")
        w[rows] = params.mu[g] + rng.standard_normal((rows.size, params.q)) @ L.T
    return labels, w


def marginal_params(params, idx):
    """Marginal mixture over a coordinate subset (exact for Gaussians)."""
    idx = np.asarray(idx, dtype=int)
    return FmmParams(
        alpha=params.alpha.copy(),
        mu=params.mu[:, idx].copy(),
        sigma=params.sigma[:, idx[:, None], idx[None, :]].copy(),
    )


def fmm_to_lcwm(fmm, roles):
    """Factorize a joint mixture into its cluster-weighted form.

    Component-wise Schur complement on the (input, output) partition:
    ``coef_g^T = S_yx S_xx^-1``, ``intercept_g = mu_y - coef_g^T mu_x`` and
    ``sigma_cond_g = S_yy - S_yx S_xx^-1 S_xy``. Weights are unchanged.
    """
    if roles.q != fmm.q:
        raise ValueError(f"roles cover {roles.q} columns but the mixture has {fmm.q}")
    xi = np.asarray(roles.input_idx, dtype=int)
    yi = np.asarray(roles.output_idx, dtype=int)
    G, d, p = fmm.g, roles.d, roles.p
    mu_x = fmm.mu[:, xi].copy()
    mu_y = fmm.mu[:, yi]
    sigma_x = fmm.sigma[:, xi[:, None], xi[None, :]].copy()
    S_yy = fmm.sigma[:, yi[:, None], yi[None, :]]
    if d == 0:
        return LcwmParams(
            alpha=fmm.alpha.copy(),
            mu_x=mu_x,
            sigma_x=sigma_x,
            coef=np.zeros((G, 0, p)),
            intercept=mu_y.copy(),
            sigma_cond=S_yy.copy(),
            roles=roles,
        )
    S_xy = fmm.sigma[:, xi[:, None], yi[None, :]]
    try:
        np.linalg.cholesky(sigma_x)  # stacked PD check; solve below reuses sigma_x
        gain = np.linalg.solve(sigma_x, S_xy)  # (G, d, p)
    except np.linalg.LinAlgError:
        # Slow path: per-component jitter and a named error.
        gain = np.empty((G, d, p))
        for g in range(G):
            try:
                L = chol_psd(sigma_x[g], name=f"component {g} input block")
            except np.linalg.LinAlgError as exc:
                raise np.linalg.LinAlgError(f"component {g}: singular input block ({exc})") from exc
            gain[g] = cho_solve((L, True), S_xy[g])
    intercept = mu_y - np.einsum("gdp,gd->gp", gain, mu_x)
    cond = S_yy - np.einsum("gdp,gdr->gpr", S_xy, gain)
    sigma_cond = 0.5 * (cond + np.transpose(cond, (0, 2, 1)))
    return LcwmParams(
        alpha=fmm.alpha.copy(),
        mu_x=mu_x,
        sigma_x=sigma_x,
        coef=gain,
        intercept=intercept,
        sigma_cond=sigma_cond,
        roles=roles,
    )


def _check_xy(lcwm, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.isnan(x).any() or np.isnan(y).any():
        raise ValueError("responsibility/density evaluated at NaN input")
    if x.ndim == 0:
        x = x[None]
    if y.ndim == 0:
        y = y[None]
    if x.shape[-1:] != (lcwm.d,) and not (lcwm.d == 0 and x.size == 0):
        raise ValueError(f"x has shape {x.shape}, expected last dimension {lcwm.d}")
    if y.shape[-1:] != (lcwm.p,):
        raise ValueError(f"y has shape {y.shape}, expected last dimension {lcwm.p}")
    return x, y


def _log_marginal_terms(lcwm, x):
    """log alpha_g + log phi_d(x; mu_g, sigma_g) row-wise, shape (n, G)."""
    n = x.shape[0]
    out = np.broadcast_to(_log_weights(lcwm.alpha), (n, lcwm.g)).copy()
    if lcwm.d > 0:
        for g in range(lcwm.g):
            out[:, g] += mvn_logpdf(x, lcwm.mu_x[g], lcwm.sigma_x[g])
    return out


def _log_conditional_terms(lcwm, x, y):
    """log phi_p(y; coef_g^T x + intercept_g, sigma_cond_g) row-wise, (n, G)."""
    n = y.shape[0]
    out = np.empty((n, lcwm.g))
    for g in range(lcwm.g):
        resid = y - lcwm.conditional_mean(g, x)
        out[:, g] = mvn_logpdf(resid, np.zeros(lcwm.p), lcwm.sigma_cond[g])
    return out


def lcwm_joint_logdensity(lcwm, x, y):
    """Log joint density under the cluster-weighted factorization (log-sum-exp)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    single = y.ndim <= 1
    xm = np.atleast_2d(x) if lcwm.d > 0 else np.zeros((np.atleast_2d(y).shape[0], 0))
    ym = np.atleast_2d(y)
    xm, ym = _check_xy(lcwm, xm, ym)
    logs = _log_marginal_terms(lcwm, xm) + _log_conditional_terms(lcwm, xm, ym)
    out = _logsumexp_rows(logs)
    return float(out[0]) if single else out


def _normalize(logw):
    r = np.exp(logw - _logsumexp_rows(logw)[:, None])
    return r / r.sum(axis=1, keepdims=True)


def responsibility_xy(lcwm, x, y):
    """Posterior component probabilities given a full observation (x, y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    single = y.ndim <= 1
    xm = np.atleast_2d(x) if lcwm.d > 0 else np.zeros((np.atleast_2d(y).shape[0], 0))
    ym = np.atleast_2d(y)
    xm, ym = _check_xy(lcwm, xm, ym)
    r = _normalize(_log_marginal_terms(lcwm, xm) + _log_conditional_terms(lcwm, xm, ym))
    return r[0] if single else r


def responsibility_x(lcwm, x):
    """Posterior component probabilities given the input block alone.

    With no input columns this is exactly the weight vector.
    """
    if lcwm.d == 0:
        return lcwm.alpha / lcwm.alpha.sum()
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xm = np.atleast_2d(x)
    if np.isnan(xm).any():
        raise ValueError("responsibility evaluated at NaN input")
    if xm.shape[1] != lcwm.d:
        raise ValueError(f"x has shape {x.shape}, expected last dimension {lcwm.d}")
    r = _normalize(_log_marginal_terms(lcwm, xm))
    return r[0] if single else r


def responsibility_mrm(lcwm, x, y):
    """Responsibilities using only the conditional factor and the weights.

    This is the mixture-of-regressions rule; it coincides with
    ``responsibility_xy`` exactly when all components share one input marginal.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    single = y.ndim <= 1
    xm = np.atleast_2d(x) if lcwm.d > 0 else np.zeros((np.atleast_2d(y).shape[0], 0))
    ym = np.atleast_2d(y)
    xm, ym = _check_xy(lcwm, xm, ym)
    logw = _log_weights(lcwm.alpha)[None, :] + _log_conditional_terms(lcwm, xm, ym)
    r = _normalize(logw)
    return r[0] if single else r
