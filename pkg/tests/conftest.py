"""Shared builders for synthetic panels used across the test modules."""

import numpy as np
import pytest

from regpca import from_arrays
from regpca.sieve import eval_basis_many


def make_panel(returns, chars, mask=None, **kw):
    return from_arrays(np.asarray(returns, float), np.asarray(chars, float), mask, **kw)


def random_unbalanced_panel(rng, n_periods, n_assets, n_chars, min_obs):
    """Random returns/characteristics with a random mask keeping N_t >= min_obs."""
    rets = rng.standard_normal((n_periods, n_assets))
    chars = rng.uniform(-0.5, 0.5, (n_periods, n_assets, n_chars))
    mask = np.ones((n_periods, n_assets), dtype=bool)
    for t in range(n_periods):
        n_drop = rng.integers(0, n_assets - min_obs + 1)
        drop = rng.choice(n_assets, size=n_drop, replace=False)
        mask[t, drop] = False
    return from_arrays(rets, chars, mask)


def exact_factor_panel(rng, spec, n_periods, n_assets, k, mask=None, noise=0.0):
    """Panel generated exactly from the model on the given basis.

    Returns (panel, a, b, f) with orthonormal loading columns and the
    intercept coefficient vector orthogonal to them.
    """
    d = spec.total_dim
    lo = max(spec.domain[0][0], -0.5)
    hi = min(spec.domain[0][1], 0.5)
    chars = rng.uniform(lo, hi, (n_periods, n_assets, spec.n_chars))
    b, _ = np.linalg.qr(rng.standard_normal((d, k)))
    a = rng.standard_normal(d)
    a = a - b @ (b.T @ a)
    f = rng.standard_normal((n_periods, k))
    y = np.empty((n_periods, n_assets))
    for t in range(n_periods):
        phi_t = eval_basis_many(spec, chars[t])
        y[t] = phi_t @ (a + b @ f[t])
    if noise > 0:
        y = y + noise * rng.standard_normal(y.shape)
    return from_arrays(y, chars, mask), a, b, f


@pytest.fixture
def rng():
    return np.random.default_rng(1729)
