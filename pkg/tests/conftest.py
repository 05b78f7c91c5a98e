"""Shared factories for the test suite.

Random item/parameter draws follow the simulator's default laws so unit
tests exercise the same parameter regime the estimators target.
"""
from __future__ import annotations

import numpy as np

from ifa import ItemParams, Link, ModelKind


def random_item(kind: ModelKind, k: int, rng, categories: int = 3) -> ItemParams:
    """One random item with informative, non-separable parameters."""
    loadings = rng.uniform(0.5, 1.5, size=k)
    if kind is ModelKind.BINARY:
        intercepts = rng.uniform(-1.0, 1.0, size=1)
    elif kind is ModelKind.GRADED:
        intercepts = np.sort(rng.uniform(-1.5, 1.5, size=categories - 1))
    else:
        intercepts = rng.uniform(-1.0, 1.0, size=categories - 1)
    return ItemParams(kind, intercepts, loadings)


MODEL_LINK_PAIRS = [
    (ModelKind.BINARY, Link.LOGIT),
    (ModelKind.BINARY, Link.PROBIT),
    (ModelKind.GRADED, Link.LOGIT),
    (ModelKind.GRADED, Link.PROBIT),
    (ModelKind.GPC, Link.LOGIT),
]
