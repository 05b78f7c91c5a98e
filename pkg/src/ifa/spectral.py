"""Singular-value-decomposition estimator for item factor models.

Pipeline for a binary matrix: (1) SVD of the raw 0/1 matrix; (2) keep
singular values above 1.01 * sqrt(max(N, J)) (always at least k+1) and
reconstruct; (3) clip the reconstruction into [1e-4, 1 - 1e-4] and apply the
inverse link; (4) column-center to read off intercepts, then a rank-k SVD of
the centered matrix gives thetas sqrt(N) * U and loadings V * S / sqrt(N).
Ordinal matrices are handled by dichotomizing at every split point,
running the binary pipeline per split, aligning the per-split solutions to
the first usable split, and averaging.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .identify import align_loadings
from .models import MISSING, Dataset, Link, as_link

_PROB_CLIP = 1e-4


@dataclass
class SpectralFit:
    thetas: np.ndarray
    loadings: np.ndarray
    intercepts: np.ndarray
    p_hat: np.ndarray
    splits_used: list = field(default_factory=list)


def singular_value_cutoff(n_persons: int, n_items: int) -> float:
    return 1.01 * np.sqrt(max(n_persons, n_items))


def _denoise(y: np.ndarray, k: int) -> np.ndarray:
    u, s, vt = np.linalg.svd(y, full_matrices=False)
    rank_tol = s.max(initial=0.0) * max(y.shape) * np.finfo(float).eps
    if int(np.sum(s > rank_tol)) < k:
        raise ValueError(
            f"data matrix has fewer than {k} informative singular values; "
            f"cannot extract {k} factors"
        )
    keep = max(int(np.sum(s > singular_value_cutoff(*y.shape))), k + 1)
    keep = min(keep, s.size)
    recon = (u[:, :keep] * s[:keep]) @ vt[:keep]
    return np.clip(recon, _PROB_CLIP, 1.0 - _PROB_CLIP)


def decompose_probability_matrix(p_matrix, k: int, link: Link = Link.LOGIT):
    """Steps 3-4: inverse link, column-center, rank-k factorization.

    Returns (thetas, loadings, intercepts).  Loading columns follow the
    non-negative-column-sum sign convention.
    """
    link = as_link(link)
    p = np.clip(np.asarray(p_matrix, dtype=float), _PROB_CLIP, 1.0 - _PROB_CLIP)
    n = p.shape[0]
    m = link.inverse(p)
    intercepts = m.mean(axis=0)
    centered = m - intercepts[None, :]
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    thetas = np.sqrt(n) * u[:, :k]
    loadings = vt[:k].T * (s[:k] / np.sqrt(n))[None, :]
    flip = loadings.sum(axis=0) < 0
    loadings[:, flip] *= -1.0
    thetas[:, flip] *= -1.0
    return thetas, loadings, intercepts


def _filled_binary(binary: np.ndarray, observed: np.ndarray) -> np.ndarray:
    """Missing cells take the item's observed mean (complete case no-op)."""
    out = binary.astype(float)
    if observed.all():
        return out
    col_mean = np.where(
        observed.sum(axis=0) > 0,
        np.sum(np.where(observed, out, 0.0), axis=0) / np.maximum(observed.sum(axis=0), 1),
        0.5,
    )
    return np.where(observed, out, col_mean[None, :])


def _binary_pipeline(binary, observed, k, link):
    filled = _filled_binary(binary, observed)
    p_hat = _denoise(filled, k)
    thetas, loadings, intercepts = decompose_probability_matrix(p_hat, k, link)
    return thetas, loadings, intercepts, p_hat


def fit_svd_binary(data: Dataset, k: int, link: Link = Link.LOGIT) -> SpectralFit:
    """Spectral estimator for a binary dataset."""
    link = as_link(link)
    if np.any(data.categories != 2):
        raise ValueError("fit_svd_binary requires every item to be binary")
    if min(data.n_persons, data.n_items) < k + 1:
        raise ValueError("spectral estimation needs at least k+1 persons and items")
    thetas, loadings, intercepts, p_hat = _binary_pipeline(
        data.responses == 1, data.observed_mask, k, link
    )
    return SpectralFit(thetas, loadings, intercepts, p_hat, splits_used=[1])


def fit_svd_ordinal(data: Dataset, k: int, link: Link = Link.LOGIT) -> SpectralFit:
    """Spectral estimator for ordinal data via split-point dichotomization.

    Split s dichotomizes at 1{y >= s}.  Splits whose columns are all constant
    are skipped.  Per-split solutions are aligned to the first usable split;
    each item's loading estimate averages over the splits below its own
    category count, and thetas average over all usable splits.
    """
    link = as_link(link)
    if min(data.n_persons, data.n_items) < k + 1:
        raise ValueError("spectral estimation needs at least k+1 persons and items")
    observed = data.observed_mask
    max_split = int(data.categories.max()) - 1
    ref_loadings = None
    per_split = []
    used = []
    for s in range(1, max_split + 1):
        binary = data.responses >= s
        const_col = np.ones(data.n_items, dtype=bool)
        for j in range(data.n_items):
            vals = binary[observed[:, j], j]
            const_col[j] = vals.size == 0 or np.all(vals == vals[0])
        if const_col.all():
            continue
        thetas, loadings, intercepts, p_hat = _binary_pipeline(binary, observed, k, link)
        if ref_loadings is None:
            ref_loadings = loadings
            aligned_loads, aligned_thetas = loadings, thetas
        else:
            try:
                res = align_loadings(loadings, ref_loadings)
            except ValueError:
                continue  # degenerate split; provides no usable rotation
            aligned_loads = loadings @ res.transform.T
            aligned_thetas = thetas @ np.linalg.inv(res.transform)
        per_split.append((s, aligned_thetas, aligned_loads, intercepts, p_hat))
        used.append(s)
    if not per_split:
        raise ValueError("no usable split: every dichotomization is constant")
    first = per_split[0]
    if len(per_split) == 1:
        s, thetas, loadings, intercepts, p_hat = first
        return SpectralFit(thetas, loadings, intercepts, p_hat, splits_used=used)
    thetas = np.mean([t for _, t, _, _, _ in per_split], axis=0)
    loadings = np.zeros_like(first[2])
    counts = np.zeros(data.n_items)
    for s, _, loads, _, _ in per_split:
        valid = data.categories - 1 >= s
        loadings[valid] += loads[valid]
        counts[valid] += 1
    loadings /= np.maximum(counts, 1)[:, None]
    return SpectralFit(thetas, loadings, first[3], first[4], splits_used=used)
