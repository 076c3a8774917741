"""Shared test oracles, independent of the package internals."""

import numpy as np


def fd_gradient(fn, W, h=1e-5):
    """Entrywise central difference f(x + h/2 e) - f(x - h/2 e) over h."""
    W = np.asarray(W, dtype=float)
    G = np.zeros_like(W)
    for idx in np.ndindex(W.shape):
        up = W.copy()
        dn = W.copy()
        up[idx] += h / 2.0
        dn[idx] -= h / 2.0
        G[idx] = (fn(up) - fn(dn)) / h
    return G


def rel_err(got, want):
    got = np.asarray(got, dtype=float)
    want = np.asarray(want, dtype=float)
    return float(np.linalg.norm(got - want) / max(np.linalg.norm(want), 1e-12))


def assert_fit_invariants(res):
    """Trace-level contract every fit must satisfy, regardless of settings."""
    k = res.outer_iterations
    assert len(res.gamma_trace) == k
    assert len(res.halvings_trace) == k
    assert len(res.objective_trace) == k + 1
    assert len(res.l2_trace) == k + 1
    # objective never increases (roundoff slack only)
    assert np.all(np.diff(res.objective_trace) <= 1e-10)
    assert np.all(res.l2_trace >= 0.0)
    # step protocol: each accepted step is the doubled predecessor (capped)
    # after a whole number of halvings
    gamma_max = res.config.gamma_max
    trial = res.config.gamma0
    for gamma, halvings in zip(res.gamma_trace, res.halvings_trace):
        assert halvings >= 0
        assert gamma == trial / 2.0 ** halvings
        trial = min(2.0 * gamma, gamma_max)
    # binary output is 0/1 with empty diagonal
    assert set(np.unique(res.binary)) <= {0, 1}
    assert np.all(np.diag(res.binary) == 0)


def random_sparse_nonneg(rng, n, density, weight_lo=0.5, weight_hi=2.0, acyclic=False):
    """Random nonnegative sparse matrix with zero diagonal.

    With ``acyclic`` the support is confined to a permuted strict upper
    triangle, which guarantees a DAG by construction.
    """
    mask = rng.random((n, n)) < density
    np.fill_diagonal(mask, False)
    if acyclic:
        mask = np.triu(mask, k=1)
        perm = rng.permutation(n)
        shuffled = np.zeros_like(mask)
        shuffled[np.ix_(perm, perm)] = mask
        mask = shuffled
    return mask * rng.uniform(weight_lo, weight_hi, size=(n, n))
