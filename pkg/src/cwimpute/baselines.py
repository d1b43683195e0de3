"""Comparison imputers: mean, norm and predictive mean matching.

The mean and norm methods reuse the Gibbs machinery rather than separate
code paths: mean drops every input column (the conditional model reduces to
an intercept per component) and norm collapses the truncation to a single
component (Bayesian multivariate-normal regression imputation). pmm is a
self-contained type-1 matching implementation with chained cycles over the
output columns.
"""

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .gibbs import Hyperparams, run_sampler
from .stats import rng_stream

__all__ = ["BaselineConfig", "impute_mean", "impute_norm", "impute_pmm"]


@dataclass
class BaselineConfig:
    """Settings shared by the baseline imputers.

    ``pmm_donors`` and ``pmm_cycles`` follow the usual defaults of chained
    predictive mean matching (5 donors, 10 cycles, type-1 matching).
    """

    method: str = "pmm"
    pmm_donors: int = 5
    pmm_cycles: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("mean", "norm", "pmm"):
            raise ValueError(f"unknown baseline method {self.method!r}")
        if self.pmm_donors < 1 or self.pmm_cycles < 1:
            raise ValueError("pmm_donors and pmm_cycles must be at least 1")


def _splice_completions(data, draws, view):
    """Rebuild full completed tables from completions of a reduced view."""
    rows = data.missing_rows

    def splice(comp):
        return data.completed_with(comp.values[np.ix_(rows, list(comp.roles.output_idx))])

    draws.completed = [splice(comp) for comp in draws.completed]
    draws.mean_completed = splice(draws.mean_completed)
    draws.estimate_completed = splice(draws.estimate_completed)
    return draws


def impute_mean(data, hp=None, cfg=None, rng=None):
    """Impute without any auxiliary information (outputs-only mixture).

    Component choice for a missing row is driven purely by the mixture
    weights, so imputed-cluster shares track the observed data shares.
    """
    view = data.outputs_only()
    if hp is None:
        hp = Hyperparams.default(view)
    if hp.q != view.roles.p:
        raise ValueError("hyperparameters must live on the output block for the mean method")
    draws = run_sampler(view, hp, cfg, rng=rng)
    return _splice_completions(data, draws, view)


def impute_norm(data, hp=None, cfg=None, rng=None):
    """Single-component Bayesian normal regression imputation."""
    if hp is None:
        hp = Hyperparams.default(data, g_max=1)
    if hp.g_max != 1:
        raise ValueError("norm requires g_max = 1")
    return run_sampler(data, hp, cfg, rng=rng)


def impute_pmm(data, cfg, rng=None, n_completed=1):
    """Chained predictive mean matching over the output columns.

    Per cycle and output column the regression coefficients are drawn from
    their Bayesian posterior given the currently completed predictors;
    observed rows are scored with the posterior-mean coefficients, missing
    rows with the drawn ones (type-1 matching), and each missing cell copies
    the observed value of one of the ``pmm_donors`` closest donors.

    Returns ``n_completed`` completed datasets from independent chains.
    Imputed values are always elements of the observed value set per column.
    """
    if rng is None:
        rng = rng_stream(cfg.seed)
    obs = data.observed_rows
    mis = data.missing_rows
    if obs.size < cfg.pmm_donors:
        raise ValueError(f"need at least {cfg.pmm_donors} observed donor rows, got {obs.size}")
    completed = []
    for _ in range(int(n_completed)):
        completed.append(_pmm_single(data, cfg, rng))
    return completed


def _pmm_single(data, cfg, rng):
    obs = data.observed_rows
    mis = data.missing_rows
    out_cols = list(data.roles.output_idx)
    in_cols = list(data.roles.input_idx)
    work = data.values.copy()
    # Seed missing cells with random draws from the observed values.
    for col in out_cols:
        donors = work[obs, col]
        work[mis, col] = rng.choice(donors, size=mis.size, replace=True)
    if mis.size == 0:
        return data.completed_with(np.zeros((0, data.roles.p)))
    for _ in range(cfg.pmm_cycles):
        for col in out_cols:
            predictors = in_cols + [c for c in out_cols if c != col]
            X = np.column_stack([np.ones(data.n), work[:, predictors]]) if predictors else np.ones((data.n, 1))
            y_obs = work[obs, col]
            X_obs, X_mis = X[obs], X[mis]
            beta_hat, beta_draw = _bayes_regression_draw(X_obs, y_obs, rng)
            pred_obs = X_obs @ beta_hat
            pred_mis = X_mis @ beta_draw
            k = min(cfg.pmm_donors, obs.size)
            for row, target in zip(mis, pred_mis):
                gaps = np.abs(pred_obs - target)
                donors = np.argpartition(gaps, k - 1)[:k]
                pick = donors[rng.integers(0, k)]
                work[row, col] = y_obs[pick]
    return data.completed_with(work[np.ix_(mis, out_cols)])


def _bayes_regression_draw(X, y, rng):
    """Posterior-mean and posterior-draw coefficients of a normal linear model.

    Standard noninformative draw: sigma^2 from the scaled inverse chi-square
    of the residual sum of squares, then beta ~ N(beta_hat, sigma^2 (X'X)^-1).
    A small ridge keeps near-collinear predictor sets workable.
    """
    n, k = X.shape
    xtx = X.T @ X
    ridge = 1e-8 * max(np.trace(xtx) / k, 1.0)
    xtx = xtx + ridge * np.eye(k)
    xty = X.T @ y
    beta_hat = np.linalg.solve(xtx, xty)
    resid = y - X @ beta_hat
    dof = max(n - k, 1)
    ss = float(resid @ resid)
    sigma2 = ss / rng.chisquare(dof) if ss > 0.0 else 0.0
    if sigma2 == 0.0:
        return beta_hat, beta_hat.copy()
    cov = sigma2 * np.linalg.inv(xtx)
    cov = 0.5 * (cov + cov.T)
    L = np.linalg.cholesky(cov + 1e-12 * np.eye(k) * max(np.trace(cov) / k, 1e-300))
    beta_draw = beta_hat + L @ rng.standard_normal(k)
    return beta_hat, beta_draw
