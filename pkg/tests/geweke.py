"""Successive-conditional simulator for checking the Gibbs conditionals.

Two ways of sampling the same joint distribution over (parameters, data):
draw parameters from the prior and data from the model (marginal-conditional),
or alternate one Gibbs sweep with a redraw of the observed data given the
current parameters (successive-conditional). If every full conditional is
correct, parameter moments agree between the two chains.

Component sorting is disabled inside the chain so per-position marginals are
comparable; the identification relabel is a deterministic output transform
tested separately.
"""

import numpy as np

from cwimpute.data import Dataset
from cwimpute.gibbs import GibbsState, Hyperparams, stick_to_alpha, sweep
from cwimpute.mixture import ColumnRoles, FmmParams
from cwimpute.stats import (
    conditional_gaussian,
    effective_sample_size,
    mvn_sample,
    sample_beta,
    sample_gamma,
    sample_inverse_wishart,
)

TOY_N = 20
TOY_MASKED = 6  # first rows carry missing outputs


def toy_hyperparams():
    # f = q + 4 keeps the covariance second moments finite, which the
    # moment comparison needs.
    return Hyperparams(
        g_max=2,
        mu0=np.zeros(2),
        h=1.0,
        f=6.0,
        a_delta=2.0,
        b_delta=2.0,
        a_eta=2.0,
        b_eta=2.0,
    )


def draw_prior(hp, rng):
    """One draw of (delta, sigma, mu, eta, nu) from the prior hierarchy."""
    q, G = hp.q, hp.g_max
    delta = np.array([sample_gamma(rng, hp.a_delta, hp.b_delta) for _ in range(q)])
    sigma = np.empty((G, q, q))
    mu = np.empty((G, q))
    for g in range(G):
        sigma[g] = sample_inverse_wishart(rng, hp.f, np.diag(delta))
        mu[g] = mvn_sample(rng, hp.mu0, sigma[g] / hp.h)
    eta = sample_gamma(rng, hp.a_eta, hp.b_eta)
    nu = np.array([sample_beta(rng, 1.0, eta) for _ in range(G - 1)] + [1.0])
    return delta, sigma, mu, eta, nu


def param_stats(mu, sigma, eta, delta):
    """Moment vector compared between the two chains (fixed positions)."""
    return np.array(
        [
            mu[0, 0],
            mu[0, 1],
            mu[1, 0],
            mu[1, 1],
            np.trace(sigma[0]),
            np.trace(sigma[1]),
            eta,
            delta[0],
            delta[1],
        ]
    )


STAT_NAMES = [
    "mu[0,0]",
    "mu[0,1]",
    "mu[1,0]",
    "mu[1,1]",
    "tr(sigma[0])",
    "tr(sigma[1])",
    "eta",
    "delta[0]",
    "delta[1]",
]


def marginal_chain(n_draws, rng, hp=None):
    hp = hp or toy_hyperparams()
    stats = np.empty((n_draws, len(STAT_NAMES)))
    for t in range(n_draws):
        delta, sigma, mu, eta, _ = draw_prior(hp, rng)
        stats[t] = param_stats(mu, sigma, eta, delta)
    return stats


def _draw_data(rng, alpha, mu, sigma, n):
    z = np.array([np.searchsorted(np.cumsum(alpha), rng.random()) for _ in range(n)]).clip(0, alpha.size - 1)
    w = np.empty((n, mu.shape[1]))
    for i in range(n):
        w[i] = mvn_sample(rng, mu[z[i]], sigma[z[i]])
    return z, w


def successive_chain(n_sweeps, rng, hp=None, n=TOY_N, n_masked=TOY_MASKED):
    """Alternate Gibbs sweeps with data redraws; returns the stat trace."""
    hp = hp or toy_hyperparams()
    q, G = hp.q, hp.g_max
    roles = ColumnRoles((0,), (1,))
    delta, sigma, mu, eta, nu = draw_prior(hp, rng)
    alpha = stick_to_alpha(nu)
    z, w = _draw_data(rng, alpha, mu, sigma, n)
    mask = np.zeros(n, dtype=bool)
    mask[:n_masked] = True
    values = w.copy()
    values[mask, 1] = np.nan
    data = Dataset(columns=["x", "y"], values=values, roles=roles, mask=mask)
    state = GibbsState(
        z=z.copy(),
        z_mis=z[mask].copy(),
        y_mis=w[mask, 1:].copy(),
        nu=nu,
        eta=eta,
        delta=delta,
        params=FmmParams(alpha=alpha, mu=mu, sigma=sigma),
        hp=hp,
    )
    out_col = roles.output_idx[0]
    stats = np.empty((n_sweeps, len(STAT_NAMES)))
    for t in range(n_sweeps):
        sweep(state, data, hp, rng, sort_components=False)
        # Redraw the observed data given (params, z, y_mis): full rows for
        # observed units, inputs given the imputed output for masked units.
        params = state.params
        for i in range(n):
            g = state.z[i]
            if mask[i]:
                mis_pos = int(mask[:i].sum())
                mu_c, sig_c = conditional_gaussian(
                    params.mu[g], params.sigma[g], [out_col], state.y_mis[mis_pos]
                )
                data.values[i, 0] = mvn_sample(rng, mu_c, sig_c)[0]
            else:
                data.values[i] = mvn_sample(rng, params.mu[g], params.sigma[g])
        stats[t] = param_stats(params.mu, params.sigma, state.eta, state.delta)
    return stats


def compare_chains(prior_stats, chain_stats):
    """Per-statistic z-scores of the mean gap, with ESS-adjusted errors."""
    rows = []
    for j, name in enumerate(STAT_NAMES):
        m1, m2 = prior_stats[:, j].mean(), chain_stats[:, j].mean()
        se1 = prior_stats[:, j].std(ddof=1) / np.sqrt(prior_stats.shape[0])
        ess = effective_sample_size(chain_stats[:, j])
        se2 = chain_stats[:, j].std(ddof=1) / np.sqrt(ess)
        se = np.hypot(se1, se2)
        rows.append((name, m1, m2, (m2 - m1) / se if se > 0 else 0.0))
    return rows
