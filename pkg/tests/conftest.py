"""Shared test fixtures and oracles."""

import itertools

import numpy as np
import pytest


def brute_force_qr(X, y, tau):
    """Exact check-loss minimum by enumerating all basic solutions.

    An optimal quantile regression with a full-rank (n, d) design
    interpolates d observations, so the global minimum is the best
    objective over all invertible d-subsets.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    best = np.inf
    best_theta = None
    for comb in itertools.combinations(range(n), d):
        sub = X[list(comb)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        theta = np.linalg.solve(sub, y[list(comb)])
        u = y - X @ theta
        obj = float(np.sum(u * (tau - (u < 0))))
        if obj < best:
            best = obj
            best_theta = theta
    return best, best_theta


@pytest.fixture
def brute_objective():
    return brute_force_qr


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
