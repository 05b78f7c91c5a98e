"""Posterior samplers for person parameters.

Two kernels: a blocked Gibbs sweep for probit models (truncated-normal data
augmentation, then an exact K-variate normal draw with precision
corr^{-1} + A'A) and an adaptive random-walk Metropolis step for logit
models.  The per-person functions operate on one response row and a
ChainState; the engine classes at the bottom run all persons at once and
back the Monte Carlo / stochastic marginal estimators.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy import special

from .models import (
    MISSING,
    Dataset,
    FactorConfig,
    ItemParams,
    Link,
    ModelKind,
    observed_logprobs,
    person_logliks,
)

_TAIL_CUT = 6.0  # inverse-CDF sampling below, exponential rejection beyond


@dataclass
class ChainState:
    """State of one person's MCMC chain."""

    theta: np.ndarray
    latent_responses: np.ndarray | None
    rng: np.random.Generator

    def __post_init__(self):
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=float))


def person_rng(master_seed: int, person_index: int) -> np.random.Generator:
    """Independent stream for one person, derived from (master seed, index)."""
    return np.random.default_rng(np.random.SeedSequence((master_seed, person_index)))


@dataclass
class MhConfig:
    """Random-walk Metropolis settings.

    proposal_scale defaults to 2.4/sqrt(K).  With adapt=True the scale is
    tuned by Robbins-Monro on the log scale toward the target acceptance
    rate; callers freeze adaptation (adapt=False) after burn-in.
    """

    proposal_scale: float | None = None
    adapt: bool = False
    target_rate: float = 0.234
    steps_adapted: int = 0

    def scale_for(self, k: int) -> float:
        if self.proposal_scale is None:
            self.proposal_scale = 2.4 / np.sqrt(k)
        return self.proposal_scale


def acceptance_probability(log_ratio) -> np.ndarray:
    """Metropolis acceptance probability min(1, exp(log_ratio))."""
    return np.exp(np.minimum(np.asarray(log_ratio, dtype=float), 0.0))


def _robert_tail(a, rng):
    """Draws from N(0,1) truncated to [a, inf) for large a (Robert's method)."""
    a = np.asarray(a, dtype=float)
    lam = 0.5 * (a + np.sqrt(a * a + 4.0))
    out = np.empty_like(a)
    todo = np.ones(a.shape, dtype=bool)
    while todo.any():
        n = int(todo.sum())
        cand = a[todo] + rng.exponential(size=n) / lam[todo]
        accept = rng.random(n) <= np.exp(-0.5 * (cand - lam[todo]) ** 2)
        hit = np.where(todo)[0][accept]
        out[hit] = cand[accept]
        todo[hit] = False
    return out


def _trunc_std_upper(a, b, rng):
    """Z ~ N(0,1) restricted to [a, b] with a >= 0 elementwise."""
    out = np.empty_like(a)
    deep = (a > _TAIL_CUT) & np.isinf(b)
    if deep.any():
        out[deep] = _robert_tail(a[deep], rng)
    rest = ~deep
    if rest.any():
        ar, br = a[rest], b[rest]
        u = rng.random(ar.shape)
        qa = special.ndtr(-ar)
        qb = np.where(np.isinf(br), 0.0, special.ndtr(-np.where(np.isinf(br), 0.0, br)))
        mass = qa - qb
        ok = mass > 0
        z = np.empty_like(ar)
        if ok.any():
            v = qa[ok] - u[ok] * mass[ok]
            z[ok] = -special.ndtri(v)
        if (~ok).any():  # interval mass underflows; approximate locally uniform
            width = np.minimum(br[~ok] - ar[~ok], 1.0 / np.maximum(ar[~ok], 1.0))
            z[~ok] = ar[~ok] + u[~ok] * width
        out[rest] = np.clip(z, ar, br)
    return out


def truncated_normal_interval(mean, lower, upper, rng):
    """Vectorized draws from N(mean, 1) truncated to [lower, upper]."""
    mean = np.asarray(mean, dtype=float)
    a = np.broadcast_to(np.asarray(lower, dtype=float), mean.shape) - mean
    b = np.broadcast_to(np.asarray(upper, dtype=float), mean.shape) - mean
    if np.any(a >= b):
        raise ValueError("lower truncation bound must be below the upper bound")
    z = np.empty_like(mean)
    up = a >= 0
    lo = b <= 0
    mid = ~(up | lo)
    # fixed evaluation order keeps draws reproducible for a given rng state
    if up.any():
        z[up] = _trunc_std_upper(a[up], b[up], rng)
    if lo.any():
        z[lo] = -_trunc_std_upper(-b[lo], -a[lo], rng)
    if mid.any():
        pa = special.ndtr(a[mid])
        pb = np.where(np.isinf(b[mid]), 1.0, special.ndtr(np.where(np.isinf(b[mid]), 0.0, b[mid])))
        u = rng.random(int(mid.sum()))
        z[mid] = np.clip(special.ndtri(pa + u * (pb - pa)), a[mid], b[mid])
    return mean + z


def sample_truncated_normal(mean, positive_side: bool, rng) -> float:
    """One draw from N(mean, 1) truncated to [0, inf) or (-inf, 0]."""
    mean_arr = np.asarray([float(mean)])
    if positive_side:
        draw = truncated_normal_interval(mean_arr, 0.0, np.inf, rng)
    else:
        draw = truncated_normal_interval(mean_arr, -np.inf, 0.0, rng)
    return float(draw[0])


def _latent_bounds(params: ItemParams, y):
    """Per-response truncation interval for the centered probit latent."""
    y = np.asarray(y, dtype=int)
    if params.kind is ModelKind.BINARY:
        # latent y* = d + a'theta + eps, y = 1 iff y* >= 0
        lower = np.where(y == 1, 0.0, -np.inf)
        upper = np.where(y == 1, np.inf, 0.0)
        return lower, upper
    if params.kind is ModelKind.GRADED:
        # latent v = a'theta + eps; category t iff -d_t <= v < -d_{t-1}
        thr = params.intercepts
        lo_map = np.concatenate([-thr, [-np.inf]])
        hi_map = np.concatenate([[np.inf], -thr])
        return lo_map[y], hi_map[y]
    raise ValueError("probit Gibbs supports binary and graded items only")


def draw_theta_given_latent(latents, y_row, items, factor_config: FactorConfig, rng) -> np.ndarray:
    """Step-2 draw: theta from its exact conditional normal given the latent
    responses, precision corr^{-1} + A'A over the observed items."""
    y_row = np.asarray(y_row, dtype=int)
    k = factor_config.k
    rows = []
    resid = []
    for j, params in enumerate(items):
        if y_row[j] == MISSING:
            continue
        offset = params.intercepts[0] if params.kind is ModelKind.BINARY else 0.0
        rows.append(params.loadings)
        resid.append(latents[j] - offset)
    prior_prec = np.linalg.inv(factor_config.correlation)
    if rows:
        a = np.vstack(rows)
        prec = prior_prec + a.T @ a
        mean_vec = np.linalg.solve(prec, a.T @ np.asarray(resid))
    else:
        prec = prior_prec
        mean_vec = np.zeros(k)
    chol = np.linalg.cholesky(prec)
    z = rng.standard_normal(k)
    return mean_vec + sla.solve_triangular(chol.T, z, lower=False)


def gibbs_sweep_probit(y_row, items, factor_config: FactorConfig, state: ChainState) -> ChainState:
    """One blocked Gibbs sweep for a single person under the probit link.

    Step 1 redraws each observed item's latent response from its truncated
    normal; step 2 redraws theta exactly from the K-variate normal with
    precision corr^{-1} + A'A built from the observed items.
    """
    y_row = np.asarray(y_row, dtype=int)
    if len(items) != y_row.size:
        raise ValueError("one ItemParams per response is required")
    rng = state.rng
    theta = state.theta
    latents = np.full(y_row.size, np.nan)
    for j, params in enumerate(items):
        if y_row[j] == MISSING:
            continue
        lower, upper = _latent_bounds(params, y_row[j : j + 1])
        mean = params.loadings @ theta
        offset = params.intercepts[0] if params.kind is ModelKind.BINARY else 0.0
        draw = truncated_normal_interval(np.asarray([mean + offset]), lower, upper, rng)
        latents[j] = draw[0]
    theta_new = draw_theta_given_latent(latents, y_row, items, factor_config, rng)
    return ChainState(theta=theta_new, latent_responses=latents, rng=rng)


def mh_step_logit(
    y_row,
    items,
    factor_config: FactorConfig,
    state: ChainState,
    config: MhConfig,
    link: Link = Link.LOGIT,
) -> ChainState:
    """One random-walk Metropolis update of theta for a single person."""
    y_row = np.asarray(y_row, dtype=int)
    k = factor_config.k
    rng = state.rng
    scale = config.scale_for(k)
    prior_prec = np.linalg.inv(factor_config.correlation)

    def logpost(theta):
        total = -0.5 * theta @ prior_prec @ theta
        for j, params in enumerate(items):
            if y_row[j] == MISSING:
                continue
            total += float(observed_logprobs(y_row[j : j + 1], theta[None, :], params, link)[0])
        return total

    current = logpost(state.theta)
    proposal = state.theta + scale * rng.standard_normal(k)
    delta = logpost(proposal) - current
    accept_prob = float(acceptance_probability(delta))
    accepted = rng.random() < accept_prob
    theta_new = proposal if accepted else state.theta.copy()
    if config.adapt:
        config.steps_adapted += 1
        gain = 1.0 / (10.0 + config.steps_adapted) ** 0.6
        config.proposal_scale = float(scale * np.exp(gain * (accept_prob - config.target_rate)))
    return ChainState(theta=theta_new, latent_responses=state.latent_responses, rng=rng)


class GibbsEngine:
    """Vectorized probit Gibbs sweeps over every person at once."""

    def __init__(self, data: Dataset, items, factor_config: FactorConfig):
        self.data = data
        self.k = factor_config.k
        self.loadings = np.vstack([it.loadings for it in items])
        self.offsets = np.array(
            [it.intercepts[0] if it.kind is ModelKind.BINARY else 0.0 for it in items]
        )
        n, j = data.responses.shape
        self.lower = np.full((n, j), -np.inf)
        self.upper = np.full((n, j), np.inf)
        self.obs = data.observed_mask
        for col, params in enumerate(items):
            y = data.responses[:, col]
            mask = self.obs[:, col]
            lo, hi = _latent_bounds(params, np.where(mask, y, 0))
            self.lower[mask, col] = lo[mask]
            self.upper[mask, col] = hi[mask]
        prior_prec = np.linalg.inv(factor_config.correlation)
        # one Cholesky per missing-data pattern; complete data gives one
        patterns, self.pattern_of = np.unique(self.obs, axis=0, return_inverse=True)
        self.pattern_chols = []
        for pat in patterns:
            a = self.loadings[pat]
            self.pattern_chols.append(np.linalg.cholesky(prior_prec + a.T @ a))

    def sweep(self, thetas, rng):
        n = thetas.shape[0]
        resid = np.zeros((n, self.data.n_items))
        proj = thetas @ self.loadings.T
        for col in range(self.data.n_items):
            mask = self.obs[:, col]
            if not mask.any():
                continue
            mean = proj[mask, col] + self.offsets[col]
            draw = truncated_normal_interval(mean, self.lower[mask, col], self.upper[mask, col], rng)
            resid[mask, col] = draw - self.offsets[col]
        rhs = resid @ self.loadings
        z = rng.standard_normal((n, self.k))
        out = np.empty_like(thetas)
        for g, chol in enumerate(self.pattern_chols):
            sel = self.pattern_of == g
            if not sel.any():
                continue
            mean = sla.cho_solve((chol, True), rhs[sel].T).T
            out[sel] = mean + sla.solve_triangular(chol.T, z[sel].T, lower=False).T
        return out


class MhEngine:
    """Vectorized random-walk Metropolis over every person at once."""

    def __init__(self, data: Dataset, items, factor_config: FactorConfig, link: Link, scale=None):
        self.data = data
        self.items = items
        self.link = link
        self.k = factor_config.k
        self.prior_prec = np.linalg.inv(factor_config.correlation)
        self.scale = 2.4 / np.sqrt(self.k) if scale is None else float(scale)
        self.target_rate = 0.234
        self.steps_adapted = 0
        self.last_rate = np.nan

    def logpost(self, thetas):
        quad = np.einsum("nk,kl,nl->n", thetas, self.prior_prec, thetas)
        return person_logliks(self.data, thetas, self.items, self.link) - 0.5 * quad

    def step(self, thetas, logpost, rng, adapt=False):
        n = thetas.shape[0]
        prop = thetas + self.scale * rng.standard_normal((n, self.k))
        lp_new = self.logpost(prop)
        accept_prob = acceptance_probability(lp_new - logpost)
        accept = rng.random(n) < accept_prob
        thetas = np.where(accept[:, None], prop, thetas)
        logpost = np.where(accept, lp_new, logpost)
        self.last_rate = float(np.mean(accept_prob))
        if adapt:
            self.steps_adapted += 1
            gain = 1.0 / (10.0 + self.steps_adapted) ** 0.6
            self.scale = float(self.scale * np.exp(gain * (self.last_rate - self.target_rate)))
        return thetas, logpost
