"""Blocked Gibbs sampler for the truncated stick-breaking Gaussian mixture.

One sweep updates, in order: allocations, stick weights, the concentration
parameter, per-component covariance and mean, the scale hyperparameters,
then the two imputation draws (component given inputs, outputs given
component), and finally relabels components by decreasing weight. Missing
rows take part in every parameter update through their current imputations
(data augmentation).

A single run is strictly sequential; independent runs with distinct streams
may execute in parallel.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .mixture import FmmParams, _logsumexp_rows, fmm_to_lcwm, responsibility_x
from .stats import (
    categorical_rows,
    chol_psd,
    effective_sample_size,
    mvn_logpdf,
    mvn_sample,
    rng_stream,
    sample_beta,
    sample_gamma,
    sample_inverse_wishart,
)

__all__ = [
    "Hyperparams",
    "GibbsState",
    "SamplerConfig",
    "PosteriorDraws",
    "init_state",
    "update_allocations",
    "update_stick_weights",
    "update_eta",
    "update_delta",
    "update_component_params",
    "impute_step",
    "relabel",
    "sweep",
    "run_sampler",
]

LOG_TINY = math.log(1e-300)


@dataclass
class Hyperparams:
    """Prior settings for the truncated mixture.

    ``g_max`` is the truncation level; ``mu0`` and ``h`` set the conditional
    Gaussian prior on component means, ``f`` the inverse-Wishart degrees of
    freedom, ``(a_delta, b_delta)`` the Gamma hyperprior on the diagonal
    scale entries and ``(a_eta, b_eta)`` the Gamma prior on the stick
    concentration.

    The default mean precision ``h`` is small: a unit-information mean prior
    measured in within-component covariance units penalizes tight components
    far from the grand mean and pushes the posterior towards merged
    clusters, which defeats the clustering purpose of the model.
    """

    g_max: int
    mu0: np.ndarray
    h: float = 0.001
    f: float = None
    a_delta: float = 0.25
    b_delta: float = 0.25
    a_eta: float = 0.25
    b_eta: float = 0.25

    def __post_init__(self):
        self.mu0 = np.asarray(self.mu0, dtype=float)
        q = self.mu0.shape[0]
        if self.f is None:
            # The scale hyperprior adapts the magnitude of the component
            # covariances, so f mostly controls how coherent their scales
            # are. The minimal f = q + 2 makes covariance draws so heavy-
            # tailed that small-sample partitions wander; q + 10 keeps
            # components commensurate without fixing their scale.
            self.f = float(q + 10)
        if self.g_max < 1:
            raise ValueError("g_max must be at least 1")
        if self.h <= 0.0:
            raise ValueError("h must be positive")
        if not self.f > q - 1:
            raise ValueError(f"f must exceed q - 1 = {q - 1}")
        for name in ("a_delta", "b_delta", "a_eta", "b_eta"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")

    @property
    def q(self):
        return self.mu0.shape[0]

    @classmethod
    def default(cls, data, g_max=10, **overrides):
        """Weakly informative defaults anchored at the data scale.

        ``mu0`` is the column mean of the table with missing outputs filled
        by their observed column means.
        """
        filled = data.values.copy()
        for col in data.roles.output_idx:
            obs = filled[~data.mask, col]
            if obs.size == 0:
                raise ValueError(f"output column {data.columns[col]!r} has no observed values")
            filled[data.mask, col] = obs.mean()
        return cls(g_max=g_max, mu0=filled.mean(axis=0), **overrides)


@dataclass
class SamplerConfig:
    """Run-length controls.

    After ``burn_in`` sweeps, every ``thin``-th sweep is stored until the
    effective sample size of the stored log-likelihood trace reaches
    ``target_ess`` or ``max_sweeps`` is hit. ``n_completed`` datasets are
    emitted, sampled at evenly spaced stored sweeps ending at the last one.
    """

    burn_in: int = 2000
    target_ess: float = 200.0
    max_sweeps: int = 8000
    thin: int = 1
    seed: int = 0
    n_completed: int = 1
    ess_check_every: int = 100

    def __post_init__(self):
        if self.burn_in >= self.max_sweeps:
            raise ValueError("burn_in must be smaller than max_sweeps")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if self.n_completed < 1:
            raise ValueError("n_completed must be at least 1")


@dataclass
class GibbsState:
    """Full state of one sweep.

    ``z`` holds the allocation of every row (missing rows carry the
    allocation last used to impute them), ``z_mis``/``y_mis`` the imputation
    block, ``nu`` the stick fractions with ``nu[-1] == 1``, and ``params``
    the current mixture parameters. The hyperparameters ride along so the
    per-block updates need no extra arguments.
    """

    z: np.ndarray
    z_mis: np.ndarray
    y_mis: np.ndarray
    nu: np.ndarray
    eta: float
    delta: np.ndarray
    params: FmmParams
    hp: Hyperparams
    iter: int = 0

    @property
    def g_max(self):
        return self.params.g

    def counts(self):
        return np.bincount(self.z, minlength=self.g_max)

    def completed(self, data):
        """The data matrix with missing outputs replaced by current imputations."""
        w = data.values.copy()
        rows = data.missing_rows
        for j, col in enumerate(data.roles.output_idx):
            w[rows, col] = self.y_mis[:, j]
        return w


def stick_to_alpha(nu):
    """Transform stick fractions into mixture weights (sums to one exactly)."""
    nu = np.asarray(nu, dtype=float)
    alpha = np.empty_like(nu)
    remaining = 1.0
    for g in range(nu.size):
        alpha[g] = nu[g] * remaining
        remaining *= 1.0 - nu[g]
    return alpha


def alpha_to_stick(alpha):
    """Invert the stick transform; tails below 1e-300 are clamped."""
    alpha = np.asarray(alpha, dtype=float)
    nu = np.empty_like(alpha)
    remaining = 1.0
    for g in range(alpha.size - 1):
        nu[g] = min(max(alpha[g] / max(remaining, 1e-300), 0.0), 1.0)
        remaining -= alpha[g]
    nu[-1] = 1.0
    return nu


def _seed_means(w, g, rng):
    """k-means++-style spread of g rows used as initial component means.

    A homogeneous start (every component near the pooled mean) lets the
    rich-get-richer stick dynamics merge all mass into one component before
    the partition can differentiate, a quasi-absorbing state for single-site
    moves; seeding the means at spread-out data rows avoids it.
    """
    n = w.shape[0]
    seeds = np.empty((g, w.shape[1]))
    seeds[0] = w[rng.integers(0, n)]
    d2 = np.sum((w - seeds[0]) ** 2, axis=1)
    for k in range(1, g):
        total = d2.sum()
        if total <= 0.0:
            seeds[k] = w[rng.integers(0, n)]
            continue
        pick = int(np.searchsorted(np.cumsum(d2), rng.random() * total).clip(0, n - 1))
        seeds[k] = w[pick]
        d2 = np.minimum(d2, np.sum((w - seeds[k]) ** 2, axis=1))
    return seeds


def init_state(data, hp, rng):
    """Starting state with a differentiated partition.

    Missing outputs start at their observed column means. Component means
    are seeded at spread-out data rows, every row is allocated to its
    nearest seed, and one round of conjugate parameter and scale updates
    adapts the covariances and the diagonal prior scale to the within-
    component spread before the chain starts.
    """
    if data.observed_rows.size < 1:
        raise ValueError("need at least one fully observed row")
    p = data.roles.p
    col_means = np.empty(p)
    for j, col in enumerate(data.roles.output_idx):
        obs = data.values[~data.mask, col]
        if obs.size == 0:
            raise ValueError(f"output column {data.columns[col]!r} has no observed values")
        col_means[j] = obs.mean()
    n_mis = data.n_missing
    y_mis = np.tile(col_means, (n_mis, 1))
    G = hp.g_max
    eta_init = hp.a_eta / hp.b_eta
    nu = np.array([sample_beta(rng, 1.0, eta_init) for _ in range(G - 1)] + [1.0])
    delta = np.full(hp.q, hp.a_delta / hp.b_delta)
    state = GibbsState(
        z=np.zeros(data.n, dtype=int), z_mis=np.zeros(n_mis, dtype=int), y_mis=y_mis,
        nu=nu, eta=eta_init, delta=delta,
        params=FmmParams(alpha=stick_to_alpha(nu), mu=np.tile(hp.mu0, (G, 1)),
                         sigma=np.tile(np.eye(hp.q), (G, 1, 1))),
        hp=hp,
    )
    w = state.completed(data)
    seeds = _seed_means(w, G, rng)
    dist2 = ((w[:, None, :] - seeds[None, :, :]) ** 2).sum(axis=2)
    state.z = np.argmin(dist2, axis=1)
    state.z_mis = state.z[data.missing_rows].copy()
    state.params.mu = seeds
    state.params.sigma = np.tile(np.diag(np.maximum(w.var(axis=0), 1e-12)), (G, 1, 1))
    update_component_params(state, data, hp, rng)
    update_delta(state, rng)
    update_component_params(state, data, hp, rng)
    # Replace the mean fill with model-consistent imputations so masked rows
    # do not sit at the global mean and blur the initial partition.
    impute_step(state, data, rng)
    return state


def _log_joint_weights(state, w):
    """log alpha_g + log phi(w; mu_g, sigma_g) for every row, shape (n, G)."""
    G = state.g_max
    logw = np.empty((w.shape[0], G))
    log_alpha = np.log(np.maximum(state.params.alpha, 1e-300))
    for g in range(G):
        logw[:, g] = log_alpha[g] + mvn_logpdf(w, state.params.mu[g], state.params.sigma[g])
    return logw


def update_allocations(state, data, rng):
    """Draw every row's allocation from its joint-space posterior.

    Missing rows enter with their current imputations. Returns the completed
    mixture log likelihood as a by-product (the sweep's trace statistic).
    """
    w = state.completed(data)
    logw = _log_joint_weights(state, w)
    state.z = categorical_rows(rng, logw)
    return float(_logsumexp_rows(logw).sum())


def update_stick_weights(state, rng):
    """Redraw the stick fractions given allocation counts; last stick is 1."""
    counts = state.counts()
    G = state.g_max
    tail = np.concatenate([np.cumsum(counts[::-1])[::-1][1:], [0.0]])
    nu = np.empty(G)
    for g in range(G - 1):
        nu[g] = sample_beta(rng, 1.0 + counts[g], state.eta + tail[g])
    nu[G - 1] = 1.0
    state.nu = nu
    state.params.alpha = stick_to_alpha(nu)


def update_eta(state, rng):
    """Gamma draw for the stick concentration; log of the last weight is clamped."""
    G = state.g_max
    log_tail = math.log(state.params.alpha[-1]) if state.params.alpha[-1] > 0.0 else LOG_TINY
    log_tail = max(log_tail, LOG_TINY)
    state.eta = sample_gamma(rng, state.hp.a_eta + G - 1, state.hp.b_eta - log_tail)


def update_delta(state, rng):
    """Independent Gamma draws for the diagonal prior-scale entries."""
    hp = state.hp
    G, q = state.g_max, hp.q
    inv_diag = np.zeros(q)
    for g in range(G):
        L = chol_psd(state.params.sigma[g], name=f"component {g} covariance")
        inv = np.linalg.inv(L)
        inv_diag += np.sum(inv * inv, axis=0)  # diagonal of sigma^-1
    shape = hp.a_delta + G * hp.f / 2.0
    for j in range(q):
        state.delta[j] = sample_gamma(rng, shape, hp.b_delta + 0.5 * inv_diag[j])


def update_component_params(state, data, hp, rng):
    """Conjugate covariance/mean draws per component; empty ones use the prior."""
    w = state.completed(data)
    G, q = hp.g_max, hp.q
    Delta = np.diag(state.delta)
    for g in range(G):
        rows = np.flatnonzero(state.z == g)
        n_g = rows.size
        if n_g == 0:
            sigma_g = sample_inverse_wishart(rng, hp.f, Delta)
            mu_g = mvn_sample(rng, hp.mu0, sigma_g / hp.h)
        else:
            w_g = w[rows]
            wbar = w_g.mean(axis=0)
            centered = w_g - wbar
            scatter = centered.T @ centered
            dev = wbar - hp.mu0
            shrink = 1.0 / (1.0 / hp.h + 1.0 / n_g)
            scale = Delta + scatter + shrink * np.outer(dev, dev)
            sigma_g = sample_inverse_wishart(rng, hp.f + n_g, scale)
            mean = (hp.h * hp.mu0 + n_g * wbar) / (hp.h + n_g)
            mu_g = mvn_sample(rng, mean, sigma_g / (hp.h + n_g))
        state.params.sigma[g] = sigma_g
        state.params.mu[g] = mu_g


def draw_imputations(params, data, rng):
    """One imputation draw for the missing rows under the given parameters.

    Component per row from the input-only responsibilities (the weights
    alone when there are no inputs), then the output block from that
    component's conditional Gaussian. Returns (z_mis, y_mis).
    """
    rows = data.missing_rows
    p = data.roles.p
    if rows.size == 0:
        return np.zeros(0, dtype=int), np.zeros((0, p))
    lcwm = fmm_to_lcwm(params, data.roles)
    if data.roles.d > 0:
        x_mis = data.values[np.ix_(rows, list(data.roles.input_idx))]
        resp = responsibility_x(lcwm, x_mis)
        z_mis = categorical_rows(rng, np.log(np.maximum(resp, 1e-300)))
    else:
        x_mis = np.zeros((rows.size, 0))
        logw = np.log(np.maximum(params.alpha, 1e-300))
        z_mis = categorical_rows(rng, np.tile(logw, (rows.size, 1)))
    y_new = np.empty((rows.size, p))
    for g in np.unique(z_mis):
        sel = z_mis == g
        mean = lcwm.conditional_mean(g, x_mis[sel])
        L = chol_psd(lcwm.sigma_cond[g], name=f"component {g} conditional covariance")
        y_new[sel] = np.atleast_2d(mean) + rng.standard_normal((int(sel.sum()), p)) @ L.T
    return z_mis, y_new


def impute_step(state, data, rng):
    """Redraw the imputation block for every missing row.

    The row's allocation is overwritten with the drawn component so the
    state stays internally consistent.
    """
    rows = data.missing_rows
    if rows.size == 0:
        return
    z_mis, y_new = draw_imputations(state.params, data, rng)
    state.z_mis = z_mis
    state.y_mis = y_new
    state.z[rows] = z_mis


def relabel(state):
    """Sort components by decreasing weight; permute everything consistently.

    Ties keep their original order (stable sort), the stick fractions are
    recomputed from the sorted weights, and the joint density is unchanged.
    """
    alpha = state.params.alpha
    order = np.argsort(-alpha, kind="stable")
    if np.array_equal(order, np.arange(alpha.size)):
        return
    inverse = np.empty_like(order)
    inverse[order] = np.arange(order.size)
    state.params.alpha = alpha[order]
    state.params.mu = state.params.mu[order]
    state.params.sigma = state.params.sigma[order]
    state.z = inverse[state.z]
    state.z_mis = inverse[state.z_mis]
    state.nu = alpha_to_stick(state.params.alpha)


def sweep(state, data, hp, rng, sort_components=True):
    """One full Gibbs sweep; returns the completed-data log likelihood."""
    loglik = update_allocations(state, data, rng)
    update_stick_weights(state, rng)
    update_eta(state, rng)
    update_component_params(state, data, hp, rng)
    update_delta(state, rng)
    impute_step(state, data, rng)
    if sort_components:
        relabel(state)
    state.iter += 1
    return loglik


@dataclass
class PosteriorDraws:
    """Thinned post-burn-in draws plus imputation products of one run.

    ``completed`` holds stochastic completions (posterior draws of the
    missing outputs); ``mean_completed`` holds the single completion at the
    posterior-mean imputations, the low-noise point summary used for the
    distribution-recovery tables.
    """

    alpha: np.ndarray       # (S, G)
    mu: np.ndarray          # (S, G, q)
    sigma: np.ndarray       # (S, G, q, q)
    eta: np.ndarray         # (S,)
    delta: np.ndarray       # (S, q)
    loglik: np.ndarray      # (S,)
    nonempty: np.ndarray    # (S,)
    sweeps: np.ndarray      # (S,) sweep indices of the stored draws
    completed: list         # n_completed completed Datasets
    mean_completed: object  # Dataset completed at the posterior-mean y_mis
    estimate_completed: object  # Dataset completed by one draw at the posterior-mean parameters
    imputed_share: np.ndarray  # (G,) mean allocation share of the missing rows
    ess: float
    below_target_ess: bool
    hit_gmax: bool
    config: SamplerConfig
    completed_at: np.ndarray = field(default=None)  # stored-draw indices of the completions

    @property
    def n_stored(self):
        return self.alpha.shape[0]

    def posterior_mean_params(self):
        return FmmParams(
            alpha=self.alpha.mean(axis=0),
            mu=self.mu.mean(axis=0),
            sigma=self.sigma.mean(axis=0),
        )

    def summary(self):
        counts, freqs = np.unique(self.nonempty, return_counts=True)
        return {
            "n_stored": int(self.n_stored),
            "ess_loglik": float(self.ess),
            "below_target_ess": bool(self.below_target_ess),
            "hit_gmax": bool(self.hit_gmax),
            "posterior_mean_alpha": self.alpha.mean(axis=0).tolist(),
            "posterior_mean_eta": float(self.eta.mean()),
            "posterior_mean_delta": self.delta.mean(axis=0).tolist(),
            "nonempty_histogram": {int(c): int(f) for c, f in zip(counts, freqs)},
            "imputed_cluster_share": self.imputed_share.tolist(),
        }

    def save_summary(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def save_trace(self, path):
        G = self.alpha.shape[1]
        header = ["sweep", "loglik", "nonempty"] + [f"alpha_{g + 1}" for g in range(G)]
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for s in range(self.n_stored):
                row = [str(int(self.sweeps[s])), repr(float(self.loglik[s])), str(int(self.nonempty[s]))]
                row += [repr(float(v)) for v in self.alpha[s]]
                fh.write(",".join(row) + "\n")


def run_sampler(data, hp, cfg, rng=None):
    """Run the blocked Gibbs sampler on an incomplete dataset.

    Draws are stored after burn-in at the configured thinning stride until
    the stored log-likelihood trace reaches the target effective sample size
    or the sweep budget runs out (flagged, not an error). Completed datasets
    are taken at evenly spaced stored sweeps ending at the last draw.
    """
    if rng is None:
        rng = rng_stream(cfg.seed)
    state = init_state(data, hp, rng)
    G, q = hp.g_max, hp.q
    alphas, mus, sigmas, etas, deltas = [], [], [], [], []
    logliks, nonempties, sweeps_idx, y_mis_draws = [], [], [], []
    share = np.zeros(G)
    hit_gmax = False
    ess = 0.0
    for it in range(1, cfg.max_sweeps + 1):
        ll = sweep(state, data, hp, rng)
        if not np.isfinite(ll):
            raise FloatingPointError(f"non-finite log likelihood at sweep {it}")
        nonempty = int((state.counts() > 0).sum())
        if nonempty == G and G > 1:
            hit_gmax = True
        if it <= cfg.burn_in or (it - cfg.burn_in) % cfg.thin != 0:
            continue
        alphas.append(state.params.alpha.copy())
        mus.append(state.params.mu.copy())
        sigmas.append(state.params.sigma.copy())
        etas.append(state.eta)
        deltas.append(state.delta.copy())
        logliks.append(ll)
        nonempties.append(nonempty)
        sweeps_idx.append(it)
        y_mis_draws.append(state.y_mis.copy())
        if data.n_missing:
            share += np.bincount(state.z_mis, minlength=G)
        n_stored = len(logliks)
        if n_stored >= max(10, cfg.ess_check_every) and n_stored % cfg.ess_check_every == 0:
            ess = effective_sample_size(np.asarray(logliks))
            if ess >= cfg.target_ess:
                break
    n_stored = len(logliks)
    if n_stored == 0:
        raise RuntimeError("no draws stored; increase max_sweeps")
    if n_stored >= 10:
        ess = effective_sample_size(np.asarray(logliks))
    below = ess < cfg.target_ess
    if data.n_missing:
        share = share / (n_stored * data.n_missing)
    m = min(cfg.n_completed, n_stored)
    picks = np.unique(np.round(np.linspace((n_stored - 1) / m, n_stored - 1, m)).astype(int))
    completed = [data.completed_with(y_mis_draws[k]) for k in picks]
    y_mis_mean = (
        np.mean(np.stack(y_mis_draws), axis=0)
        if data.n_missing
        else np.zeros((0, data.roles.p))
    )
    mean_completed = data.completed_with(y_mis_mean)
    point = FmmParams(
        alpha=np.asarray(alphas).mean(axis=0),
        mu=np.asarray(mus).mean(axis=0),
        sigma=np.asarray(sigmas).mean(axis=0),
    )
    _, y_mis_hat = draw_imputations(point, data, rng)
    estimate_completed = data.completed_with(y_mis_hat)
    return PosteriorDraws(
        alpha=np.asarray(alphas),
        mu=np.asarray(mus),
        sigma=np.asarray(sigmas),
        eta=np.asarray(etas),
        delta=np.asarray(deltas),
        loglik=np.asarray(logliks),
        nonempty=np.asarray(nonempties),
        sweeps=np.asarray(sweeps_idx),
        completed=completed,
        mean_completed=mean_completed,
        estimate_completed=estimate_completed,
        imputed_share=share,
        ess=float(ess),
        below_target_ess=bool(below),
        hit_gmax=hit_gmax,
        config=cfg,
        completed_at=picks,
    )
