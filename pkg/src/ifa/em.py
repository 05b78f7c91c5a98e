"""Marginal-likelihood engines: quadrature EM, Monte Carlo EM, stochastic EM
with burn-in averaging, and stochastic-approximation MCMC.

All four share the same M-step machinery (per-item weighted Newton fits and a
factor-correlation update rescaled to unit diagonal) and differ only in how
the E-step expectations are formed: tensor-product Gauss-Hermite quadrature,
growing batches of posterior draws, a single draw per iteration, or a
stochastic gradient step preconditioned by a running information estimate.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import linalg as sla

from .identify import check_q_matrix
from .itemfit import fit_item, from_internal, internal_grad_hess, resolve_free_mask, to_internal
from .models import (
    MISSING,
    Dataset,
    FactorConfig,
    ItemParams,
    Link,
    ModelKind,
    as_link,
    as_model,
    category_logprobs,
)
from .sampler import GibbsEngine, MhEngine
from .start import default_items

_ESTEP_CELL_BUDGET = 2_000_000
_MSTEP_TOL = 1e-8


# ---------------------------------------------------------------------------
# quadrature grid and marginal likelihood


@dataclass
class QuadratureGrid:
    points_per_dim: int
    nodes: np.ndarray
    log_weights: np.ndarray


def build_grid(points_per_dim: int, factor_config: FactorConfig) -> QuadratureGrid:
    """Tensor-product Gauss-Hermite grid adapted to the factor correlation."""
    if points_per_dim < 2:
        raise ValueError("points_per_dim must be at least 2")
    x, w = hermegauss(points_per_dim)
    w = w / w.sum()  # normalize against the standard normal density
    k = factor_config.k
    grids = np.meshgrid(*([x] * k), indexing="ij")
    z = np.column_stack([g.ravel() for g in grids])
    logw = np.zeros(z.shape[0])
    for g in np.meshgrid(*([np.log(w)] * k), indexing="ij"):
        logw += g.ravel()
    nodes = z @ np.linalg.cholesky(factor_config.correlation).T
    return QuadratureGrid(points_per_dim, nodes, logw)


def _require_small_k(k: int) -> None:
    if k > 3:
        raise ValueError(
            "quadrature engines support k <= 3 (grid size is exponential in k); "
            "use fit_stem or fit_sa_mcmc for higher dimensions"
        )


def _raw(data) -> np.ndarray:
    return data.responses if isinstance(data, Dataset) else np.asarray(data, dtype=int)


def _estep_tables(responses, items, grid: QuadratureGrid, link: Link):
    """Posterior-weighted sufficient statistics on the grid.

    Returns (counts, second_moment, loglik): per-item expected category
    counts at every node (node x category), the summed posterior second
    moment of theta, and the total marginal log-likelihood.
    """
    n = responses.shape[0]
    m = grid.nodes.shape[0]
    k = grid.nodes.shape[1]
    log_tables = [category_logprobs(grid.nodes, it, link) for it in items]
    counts = [np.zeros((m, it.n_categories)) for it in items]
    second = np.zeros((k, k))
    total = 0.0
    chunk = max(1, _ESTEP_CELL_BUDGET // m)
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        block = responses[start:stop]
        loglik = np.tile(grid.log_weights, (stop - start, 1))
        for j, table in enumerate(log_tables):
            y = block[:, j]
            mask = y != MISSING
            if mask.any():
                loglik[mask] += table[:, y[mask]].T
        peak = loglik.max(axis=1, keepdims=True)
        person_ll = peak[:, 0] + np.log(np.exp(loglik - peak).sum(axis=1))
        total += float(person_ll.sum())
        post = np.exp(loglik - person_ll[:, None])
        second += grid.nodes.T @ (post.sum(axis=0)[:, None] * grid.nodes)
        for j, it in enumerate(items):
            y = block[:, j]
            for t in range(it.n_categories):
                sel = y == t
                if sel.any():
                    counts[j][:, t] += post[sel].sum(axis=0)
    return counts, second, total


def log_marginal_likelihood(
    data,
    items,
    factor_config: FactorConfig,
    grid: QuadratureGrid | None = None,
    link: Link = Link.LOGIT,
    points_per_dim: int = 21,
) -> float:
    """Quadrature marginal log-likelihood, log-sum-exp stabilized."""
    link = as_link(link)
    _require_small_k(factor_config.k)
    if grid is None:
        grid = build_grid(points_per_dim, factor_config)
    responses = _raw(data)
    _, _, total = _estep_tables(responses, items, grid, link)
    return total


def marginal_gradient(
    data,
    items,
    factor_config: FactorConfig,
    grid: QuadratureGrid | None = None,
    link: Link = Link.LOGIT,
    q: np.ndarray | None = None,
    points_per_dim: int = 21,
) -> np.ndarray:
    """Gradient of the marginal log-likelihood w.r.t. item parameters.

    Computed through the posterior-expected complete-data gradient, stacked
    over items in each item's internal free coordinates.
    """
    link = as_link(link)
    _require_small_k(factor_config.k)
    if grid is None:
        grid = build_grid(points_per_dim, factor_config)
    responses = _raw(data)
    counts, _, _ = _estep_tables(responses, items, grid, link)
    masks = _free_masks(items, q)
    parts = []
    for item, cnt, mask in zip(items, counts, masks):
        g, _ = internal_grad_hess(item, grid.nodes, cnt, link, mask)
        parts.append(g)
    return np.concatenate(parts)


def complete_data_gradient(
    data,
    thetas,
    items,
    link: Link = Link.LOGIT,
    q: np.ndarray | None = None,
) -> np.ndarray:
    """Gradient of the complete-data log-likelihood w.r.t. item parameters,
    stacked over items in internal free coordinates (missing cells skipped)."""
    link = as_link(link)
    responses = _raw(data)
    masks = _free_masks(items, q)
    parts = []
    for j, (item, mask) in enumerate(zip(items, masks)):
        y = responses[:, j]
        obs = y != MISSING
        g, _ = internal_grad_hess(item, thetas[obs], _one_hot(y[obs], item.n_categories), link, mask)
        parts.append(g)
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# parameter packing (natural coordinates, used for trajectories and averages)


def pack_params(items, correlation: np.ndarray) -> np.ndarray:
    parts = [np.concatenate([it.intercepts, it.loadings]) for it in items]
    k = correlation.shape[0]
    if k > 1:
        parts.append(correlation[np.tril_indices(k, -1)])
    return np.concatenate(parts)


def unpack_params(vector: np.ndarray, template_items, k: int):
    items = []
    pos = 0
    for it in template_items:
        nc = it.intercepts.size
        nl = it.loadings.size
        intercepts = np.asarray(vector[pos : pos + nc], dtype=float)
        pos += nc
        loadings = np.asarray(vector[pos : pos + nl], dtype=float)
        pos += nl
        items.append(ItemParams(it.kind, intercepts, loadings))
    corr = np.eye(k)
    if k > 1:
        rows, cols = np.tril_indices(k, -1)
        vals = vector[pos : pos + rows.size]
        corr[rows, cols] = vals
        corr[cols, rows] = vals
    return items, corr


def average_parameter_trail(trail: np.ndarray, burn_in: int) -> np.ndarray:
    """Mean of the post-burn-in parameter snapshots."""
    trail = np.asarray(trail, dtype=float)
    if trail.ndim != 2 or not 0 <= burn_in < trail.shape[0]:
        raise ValueError("need a (iters, params) trail with burn_in < iters")
    return trail[burn_in:].mean(axis=0)


# ---------------------------------------------------------------------------
# shared M-step pieces


def _one_hot(y, n_categories: int) -> np.ndarray:
    w = np.zeros((y.size, n_categories))
    w[np.arange(y.size), np.asarray(y, dtype=int)] = 1.0
    return w


def _free_masks(items, q):
    if q is None:
        return [None] * len(items)
    return [q[j].astype(bool) for j in range(len(items))]


def _mstep_items(items, design, weights_list, link: Link, masks, row_masks=None):
    """Per-item weighted Newton fits; returns (items, any_line_search_failure)."""
    out = []
    failed = False
    for j, (item, w, mask) in enumerate(zip(items, weights_list, masks)):
        d = design if row_masks is None else design[row_masks[j]]
        result = fit_item(
            d, w, item, link, free_mask=mask, max_steps=50, grad_tol=_MSTEP_TOL
        )
        failed = failed or result.line_search_failed
        out.append(result.params)
    return out, failed


def _rescale_correlation(second_moment_mean, items, compensate: bool):
    """Unit-diagonal correlation from a second-moment matrix.

    When compensate is set, loadings absorb the removed scale so the
    marginal model is unchanged (exact equivalence transform).
    """
    d = np.sqrt(np.clip(np.diag(second_moment_mean), 1e-12, None))
    corr = second_moment_mean / np.outer(d, d)
    corr = 0.5 * (corr + corr.T)
    np.fill_diagonal(corr, 1.0)
    if compensate:
        items = [ItemParams(it.kind, it.intercepts, it.loadings * d) for it in items]
    return corr, items


@dataclass
class MarginalFit:
    items: list
    correlation: np.ndarray
    trajectory: np.ndarray
    marginal_loglik: float | None
    converged: bool
    n_iters: int
    info: dict = field(default_factory=dict)


def _default_model(data, model):
    if model is None:
        return ModelKind.BINARY if np.all(data.categories == 2) else ModelKind.GRADED
    return as_model(model)


# ---------------------------------------------------------------------------
# quadrature EM


@dataclass
class EmConfig:
    points_per_dim: int = 21
    max_iters: int = 200
    tol: float = 1e-6

    def __post_init__(self) -> None:
        if self.tol <= 0 or self.max_iters < 1:
            raise ValueError("tol and max_iters must be positive")


def fit_em_quadrature(
    data: Dataset,
    k: int,
    model=None,
    link: Link = Link.LOGIT,
    config: EmConfig | None = None,
    q: np.ndarray | None = None,
    init_items=None,
) -> MarginalFit:
    """Gauss-Hermite EM for the marginal maximum likelihood estimator."""
    link = as_link(link)
    _require_small_k(k)
    config = config or EmConfig()
    model = _default_model(data, model)
    if q is not None:
        q = check_q_matrix(q, data.n_items, k, allow_empty_rows=True)
    items = list(init_items) if init_items is not None else default_items(data, k, model, link, q)
    corr = np.eye(k)
    masks = _free_masks(items, q)
    responses = data.responses
    trajectory = []
    loglik_trail = []
    prev = None
    converged = False
    n_iters = 0
    for _ in range(config.max_iters):
        grid = build_grid(config.points_per_dim, FactorConfig(k, corr))
        counts, second, loglik = _estep_tables(responses, items, grid, link)
        loglik_trail.append(loglik)
        if prev is not None:
            if loglik < prev - 1e-6 * (abs(prev) + 1.0):
                raise RuntimeError(
                    "EM marginal log-likelihood decreased; the M step diverged"
                )
            if abs(loglik - prev) < config.tol * (abs(prev) + 1.0):
                converged = True
                break
        prev = loglik
        items, _ = _mstep_items(items, grid.nodes, counts, link, masks)
        corr, items = _rescale_correlation(second / data.n_persons, items, compensate=True)
        trajectory.append(pack_params(items, corr))
        n_iters += 1
    if not converged:
        warnings.warn("fit_em_quadrature hit max_iters before meeting the tolerance")
        final_ll = log_marginal_likelihood(
            responses, items, FactorConfig(k, corr), link=link,
            points_per_dim=config.points_per_dim,
        )
        loglik_trail.append(final_ll)
    return MarginalFit(
        items=items,
        correlation=corr,
        trajectory=np.asarray(trajectory),
        marginal_loglik=loglik_trail[-1],
        converged=converged,
        n_iters=n_iters,
        info={"loglik_trail": np.asarray(loglik_trail)},
    )


# ---------------------------------------------------------------------------
# posterior sampling shared by the stochastic engines


class _ChainPool:
    """Warm person-factor chains driven by the Gibbs or MH engine."""

    def __init__(self, data, k: int, link: Link, model: ModelKind, seed: int):
        self.data = data
        self.k = k
        self.link = link
        self.use_gibbs = link is Link.PROBIT and model is not ModelKind.GPC
        self.rng = np.random.default_rng(np.random.SeedSequence(seed))
        self.thetas = np.zeros((data.n_persons, k))
        self.mh_scale = None

    def refresh(self, items, corr):
        config = FactorConfig(self.k, corr)
        if self.use_gibbs:
            self.engine = GibbsEngine(self.data, items, config)
        else:
            self.engine = MhEngine(self.data, items, config, self.link, scale=self.mh_scale)
            self.logpost = self.engine.logpost(self.thetas)

    def sweep(self, adapt: bool):
        if self.use_gibbs:
            self.thetas = self.engine.sweep(self.thetas, self.rng)
        else:
            self.thetas, self.logpost = self.engine.step(
                self.thetas, self.logpost, self.rng, adapt=adapt
            )
            self.mh_scale = self.engine.scale
        return self.thetas


# ---------------------------------------------------------------------------
# Monte Carlo EM


@dataclass
class McemConfig:
    max_iters: int = 18
    draws_start: int = 10
    draws_growth: float = 1.4
    draws_cap: int = 200
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_iters < 1 or self.draws_start < 1 or self.draws_cap < self.draws_start:
            raise ValueError("invalid MCEM iteration/draw counts")
        if self.draws_growth < 1.0:
            raise ValueError("draws_growth must be at least 1")


def fit_mcem(
    data: Dataset,
    k: int,
    config: McemConfig | None = None,
    draws_schedule=None,
    *,
    model=None,
    link: Link = Link.LOGIT,
    q: np.ndarray | None = None,
) -> MarginalFit:
    """Monte Carlo EM: E-step expectations from growing batches of draws."""
    link = as_link(link)
    config = config or McemConfig()
    model = _default_model(data, model)
    if q is not None:
        q = check_q_matrix(q, data.n_items, k, allow_empty_rows=True)
    if draws_schedule is None:
        draws_schedule = [
            int(min(config.draws_cap, round(config.draws_start * config.draws_growth**t)))
            for t in range(config.max_iters)
        ]
    items = default_items(data, k, model, link, q)
    corr = np.eye(k)
    masks = _free_masks(items, q)
    responses = data.responses
    chains = _ChainPool(data, k, link, model, config.seed)
    trajectory = []
    n_iters = 0
    for t, n_draws in enumerate(draws_schedule):
        chains.refresh(items, corr)
        adapt = t < max(1, len(draws_schedule) // 2)
        draws = [chains.sweep(adapt).copy() for _ in range(n_draws)]
        design = np.vstack(draws)
        weights_list = []
        row_masks = []
        for j, item in enumerate(items):
            y = responses[:, j]
            obs = y != MISSING
            w = _one_hot(np.tile(y[obs], n_draws), item.n_categories)
            weights_list.append(w)
            row_masks.append(np.tile(obs, n_draws))
        items, _ = _mstep_items(items, design, weights_list, link, masks, row_masks)
        second = design.T @ design / design.shape[0]
        corr, items = _rescale_correlation(second, items, compensate=True)
        trajectory.append(pack_params(items, corr))
        n_iters += 1
    return MarginalFit(
        items=items,
        correlation=corr,
        trajectory=np.asarray(trajectory),
        marginal_loglik=None,
        converged=True,
        n_iters=n_iters,
        info={"draws_schedule": list(draws_schedule)},
    )


# ---------------------------------------------------------------------------
# stochastic EM


@dataclass
class StemConfig:
    total_iters: int = 400
    burn_in: int = 100
    sweeps_per_iter: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.burn_in < self.total_iters:
            raise ValueError("need 0 < burn_in < total_iters")
        if self.sweeps_per_iter < 1:
            raise ValueError("sweeps_per_iter must be positive")


def fit_stem(
    data: Dataset,
    k: int,
    stem_config: StemConfig | None = None,
    q: np.ndarray | None = None,
    *,
    model=None,
    link: Link = Link.LOGIT,
) -> MarginalFit:
    """Stochastic EM: single-draw E steps, burn-in averaged estimate."""
    link = as_link(link)
    config = stem_config or StemConfig()
    model = _default_model(data, model)
    if q is not None:
        q = check_q_matrix(q, data.n_items, k, allow_empty_rows=True)
    items = default_items(data, k, model, link, q)
    corr = np.eye(k)
    masks = _free_masks(items, q)
    responses = data.responses
    chains = _ChainPool(data, k, link, model, config.seed)
    trajectory = []
    for t in range(config.total_iters):
        chains.refresh(items, corr)
        for _ in range(config.sweeps_per_iter):
            thetas = chains.sweep(adapt=t < config.burn_in)
        weights_list = []
        row_masks = []
        for j, item in enumerate(items):
            y = responses[:, j]
            obs = y != MISSING
            weights_list.append(_one_hot(y[obs], item.n_categories))
            row_masks.append(obs)
        items, _ = _mstep_items(items, thetas, weights_list, link, masks, row_masks)
        second = thetas.T @ thetas / data.n_persons
        corr, items = _rescale_correlation(second, items, compensate=True)
        trajectory.append(pack_params(items, corr))
    trajectory = np.asarray(trajectory)
    averaged = average_parameter_trail(trajectory, config.burn_in)
    items, corr = unpack_params(averaged, items, k)
    return MarginalFit(
        items=items,
        correlation=corr,
        trajectory=trajectory,
        marginal_loglik=None,
        converged=True,
        n_iters=config.total_iters,
        info={"burn_in": config.burn_in},
    )


# ---------------------------------------------------------------------------
# stochastic approximation with MCMC


@dataclass
class SaConfig:
    total_iters: int = 500
    warmup: int = 50
    # callable t -> gamma_t (1-based t); None = plateau of 1 then 1/(t - warmup)
    gain_schedule: Callable[[int], float] | None = None
    use_hessian: bool = True
    sweeps_per_iter: int = 5
    draws_per_iter: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.total_iters < 1 or self.sweeps_per_iter < 1 or self.draws_per_iter < 1:
            raise ValueError("iteration and draw counts must be positive")
        if not 0 <= self.warmup < self.total_iters:
            raise ValueError("need 0 <= warmup < total_iters")

    def gamma(self, t: int) -> float:
        """Gain for 1-based iteration t."""
        if self.gain_schedule is not None:
            return float(self.gain_schedule(t))
        return 1.0 if t <= self.warmup else 1.0 / (t - self.warmup)


def _corr_chol_coords(corr: np.ndarray) -> np.ndarray:
    chol = np.linalg.cholesky(corr)
    k = corr.shape[0]
    return np.concatenate([np.log(np.diag(chol)), chol[np.tril_indices(k, -1)]])


def _chol_from_coords(c: np.ndarray, k: int) -> np.ndarray:
    chol = np.zeros((k, k))
    chol[np.diag_indices(k)] = np.exp(c[:k])
    chol[np.tril_indices(k, -1)] = c[k:]
    return chol


def _corr_loglik(c: np.ndarray, moment: np.ndarray, n_persons: float, k: int) -> float:
    """Multivariate-normal complete-data log-likelihood in Cholesky coords."""
    chol = _chol_from_coords(c, k)
    logdet = 2.0 * float(np.sum(c[:k]))
    inv_m = sla.cho_solve((chol, True), moment)
    return -0.5 * n_persons * logdet - 0.5 * float(np.trace(inv_m))


def _corr_grad(c: np.ndarray, moment: np.ndarray, n_persons: float, k: int) -> np.ndarray:
    chol = _chol_from_coords(c, k)
    sigma_inv = sla.cho_solve((chol, True), np.eye(k))
    g_sigma = -0.5 * n_persons * sigma_inv + 0.5 * sigma_inv @ moment @ sigma_inv
    gl = 2.0 * g_sigma @ chol
    return np.concatenate([np.diag(gl) * np.diag(chol), gl[np.tril_indices(k, -1)]])


def _corr_fd_info(c: np.ndarray, moment: np.ndarray, n_persons: float, k: int) -> np.ndarray:
    """Negative finite-difference Hessian of the correlation block."""
    d = c.size
    h = 1e-5
    hess = np.zeros((d, d))
    for a in range(d):
        for b in range(a, d):
            pp = c.copy(); pp[a] += h; pp[b] += h
            pm = c.copy(); pm[a] += h; pm[b] -= h
            mp = c.copy(); mp[a] -= h; mp[b] += h
            mm = c.copy(); mm[a] -= h; mm[b] -= h
            val = (
                _corr_loglik(pp, moment, n_persons, k)
                - _corr_loglik(pm, moment, n_persons, k)
                - _corr_loglik(mp, moment, n_persons, k)
                + _corr_loglik(mm, moment, n_persons, k)
            ) / (4.0 * h * h)
            hess[a, b] = hess[b, a] = val
    return -hess


def _precondition(gamma_block, grad, use_hessian: bool):
    """Solve the preconditioned direction; fall back to the plain gradient."""
    if not use_hessian:
        return grad, False
    try:
        chol = np.linalg.cholesky(gamma_block)
        return sla.cho_solve((chol, True), grad), False
    except np.linalg.LinAlgError:
        return grad, True


def fit_sa_mcmc(
    data: Dataset,
    k: int,
    sa_config: SaConfig | None = None,
    q: np.ndarray | None = None,
    *,
    model=None,
    link: Link = Link.LOGIT,
) -> MarginalFit:
    """Stochastic approximation: gradient steps along stochastic gradients of
    the marginal log-likelihood (Fisher identity), optionally preconditioned
    by a Robbins-Monro estimate of the complete-data information."""
    link = as_link(link)
    config = sa_config or SaConfig()
    model = _default_model(data, model)
    if q is not None:
        q = check_q_matrix(q, data.n_items, k, allow_empty_rows=True)
    items = default_items(data, k, model, link, q)
    corr = np.eye(k)
    masks = [resolve_free_mask(it, m) for it, m in zip(items, _free_masks(items, q))]
    responses = data.responses
    obs_masks = [responses[:, j] != MISSING for j in range(data.n_items)]
    chains = _ChainPool(data, k, link, model, config.seed)
    x_items = [to_internal(it, m) for it, m in zip(items, masks)]
    c_corr = _corr_chol_coords(corr) if k > 1 else np.zeros(0)
    gammas = [np.zeros((x.size, x.size)) for x in x_items]
    gamma_corr = np.zeros((c_corr.size, c_corr.size))
    trajectory = []
    psi_trail = [np.concatenate(x_items + [c_corr])]
    h_trail = []
    fallback_iters = []
    for t in range(1, config.total_iters + 1):
        gamma_t = config.gamma(t)
        chains.refresh(items, corr)
        draws = []
        for _ in range(config.sweeps_per_iter - 1):
            chains.sweep(adapt=t <= config.warmup)
        for _ in range(config.draws_per_iter):
            draws.append(chains.sweep(adapt=t <= config.warmup).copy())
        h_parts = []
        fell_back = False
        new_x = []
        for j, item in enumerate(items):
            g_sum = np.zeros(x_items[j].size)
            info_sum = np.zeros((x_items[j].size,) * 2)
            y = responses[obs_masks[j], j]
            w = _one_hot(y, item.n_categories)
            for theta in draws:
                g, hess = internal_grad_hess(item, theta[obs_masks[j]], w, link, masks[j])
                g_sum += g
                info_sum -= hess
            g_avg = g_sum / len(draws)
            info_avg = info_sum / len(draws)
            gammas[j] = gammas[j] + gamma_t * (info_avg - gammas[j])
            direction, fb = _precondition(gammas[j], g_avg, config.use_hessian)
            fell_back = fell_back or fb
            h_parts.append(g_avg)
            new_x.append(x_items[j] + gamma_t * direction)
        h_corr = np.zeros(0)
        if k > 1:
            moment = sum(theta.T @ theta for theta in draws) / len(draws)
            g_corr = _corr_grad(c_corr, moment, data.n_persons, k)
            info_corr = _corr_fd_info(c_corr, moment, data.n_persons, k)
            gamma_corr = gamma_corr + gamma_t * (info_corr - gamma_corr)
            direction, fb = _precondition(gamma_corr, g_corr, config.use_hessian)
            fell_back = fell_back or fb
            h_corr = g_corr
            c_new = c_corr + gamma_t * direction
            chol = _chol_from_coords(c_new, k)
            sigma = chol @ chol.T
            d = np.sqrt(np.clip(np.diag(sigma), 1e-12, None))
            corr = sigma / np.outer(d, d)
            corr = 0.5 * (corr + corr.T)
            np.fill_diagonal(corr, 1.0)
            c_corr = _corr_chol_coords(corr)
        x_items = new_x
        items = [from_internal(x, it, m) for x, it, m in zip(x_items, items, masks)]
        if fell_back:
            fallback_iters.append(t)
        h_trail.append(np.concatenate(h_parts + [h_corr]))
        psi_trail.append(np.concatenate(x_items + [c_corr]))
        trajectory.append(pack_params(items, corr))
    return MarginalFit(
        items=items,
        correlation=corr,
        trajectory=np.asarray(trajectory),
        marginal_loglik=None,
        converged=True,
        n_iters=config.total_iters,
        info={
            "psi_trail": np.asarray(psi_trail),
            "h_trail": np.asarray(h_trail),
            "fallback_iters": fallback_iters,
        },
    )
