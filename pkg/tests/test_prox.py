import math

import numpy as np
import pytest
from conftest import fd_gradient, rel_err, random_sparse_nonneg

from bregdag.penalty import PenaltyParams, kernel_value
from bregdag.prox import (
    InnerOptions,
    ProxProblem,
    collapse_split,
    composite_prox,
    estimate_initial_lipschitz,
    gram_spectral_norm,
    group_shrink,
    inner_objective,
    kkt_residual,
    signed_objective,
    signed_prox,
    smooth_gradient,
    smooth_value,
    solve,
)


def make_problem(rng, n=5, m=40, lam=0.05, gamma=10.0, mode="positive", floor=False,
                 alpha=None, mu=1.0):
    X = rng.standard_normal((m, n))
    S = X.T @ X / m
    p = PenaltyParams(n=n, alpha=(0.1 / n if alpha is None else alpha), mu=mu)
    lin = rng.standard_normal((n, n)) * 0.1
    return ProxProblem(
        gram=S, linear_term=lin, lam=lam, gamma=gamma, params=p,
        enforce_norm_floor=floor, mode=mode,
    )


def feasible_start(prob, value=0.1):
    n = prob.params.n
    W = np.full((n, n), value)
    np.fill_diagonal(W, 0.0)
    Z = np.stack([W, np.zeros_like(W)]) if prob.mode == "split" else W
    floor = prob.floor()
    if floor is not None:
        Z = Z * (floor / Z.sum())
    return Z


# -- composite prox ----------------------------------------------------------

def test_prox_plain_soft_threshold():
    V = np.full((3, 3), 1.0)
    out = composite_prox(V, step=1.0, lam=0.3)
    want = np.full((3, 3), 0.7)
    np.fill_diagonal(want, 0.0)
    assert np.allclose(out, want, atol=1e-15)


def test_prox_full_shrinkage_to_zero():
    V = np.full((4, 4), 0.2)
    out = composite_prox(V, step=2.0, lam=0.5)
    assert np.array_equal(out, np.zeros((4, 4)))


def test_prox_clamps_negative_inputs():
    V = -np.ones((3, 3))
    out = composite_prox(V, step=1.0, lam=0.1)
    assert np.array_equal(out, np.zeros((3, 3)))


def test_prox_floor_from_zero_input_spreads_uniformly():
    # all off-diagonal targets are equal, so the shift activates them all
    n = 4
    out = composite_prox(np.zeros((n, n)), step=1.0, lam=0.0, floor=6.0)
    want = np.full((n, n), 6.0 / (n * n - n))
    np.fill_diagonal(want, 0.0)
    assert np.allclose(out, want, atol=1e-12)
    assert out.sum() == pytest.approx(6.0, abs=1e-9)


def test_prox_floor_inactive_when_sum_already_large():
    V = np.full((3, 3), 2.0)
    out = composite_prox(V, step=1.0, lam=0.1, floor=1.0)
    want = np.full((3, 3), 1.9)
    np.fill_diagonal(want, 0.0)
    assert np.allclose(out, want, atol=1e-15)


def _bisect_shift(w, target):
    lo, hi = 0.0, 1.0
    while np.maximum(w + hi, 0.0).sum() < target:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.maximum(w + mid, 0.0).sum() < target:
            lo = mid
        else:
            hi = mid
    return hi


def test_prox_floor_matches_bisection_oracle():
    rng = np.random.default_rng(0)
    n, step, lam, floor = 5, 0.7, 0.4, 8.0
    for _ in range(25):
        V = rng.standard_normal((n, n)) * 2.0
        out = composite_prox(V, step=step, lam=lam, floor=floor)
        mask = ~np.eye(n, dtype=bool)
        w = (V - step * lam)[mask]
        nu = _bisect_shift(w, floor) if np.maximum(w, 0).sum() < floor else 0.0
        want = np.maximum(w + nu, 0.0)
        assert np.allclose(out[mask], want, atol=1e-9)
        assert out.sum() >= floor - 1e-9
        assert np.all(out.diagonal() == 0.0)


def test_prox_stacked_blocks_share_floor():
    rng = np.random.default_rng(1)
    V = rng.standard_normal((2, 4, 4))
    out = composite_prox(V, step=0.5, lam=0.2, floor=20.0)
    assert out.shape == (2, 4, 4)
    assert out.sum() == pytest.approx(20.0, abs=1e-9)
    assert np.all(out >= 0.0)
    assert np.all(np.diagonal(out, axis1=1, axis2=2) == 0.0)


# -- signed prox -------------------------------------------------------------

def test_signed_prox_shrinks_toward_zero_keeping_sign():
    V = np.array([[0.0, 1.0, -1.0], [0.2, 0.0, -0.2], [3.0, -3.0, 0.0]])
    T = np.full((3, 3), 0.5)
    out = signed_prox(V, T)
    want = np.array([[0.0, 0.5, -0.5], [0.0, 0.0, 0.0], [2.5, -2.5, 0.0]])
    assert np.allclose(out, want, atol=1e-15)


def test_signed_prox_matches_scalar_minimization():
    # per entry the map solves min_w (1/(2s)) (w - v)^2 + t |w|; compare
    # against a dense scan, including negative t where the prox expands
    rng = np.random.default_rng(21)
    grid = np.linspace(-6.0, 6.0, 240001)
    for _ in range(20):
        v = float(rng.uniform(-2.0, 2.0))
        t = float(rng.uniform(-1.0, 1.5))
        s = float(rng.uniform(0.1, 3.0))
        V = np.zeros((2, 2))
        V[0, 1] = v
        T = np.zeros((2, 2))
        T[0, 1] = s * t
        got = signed_prox(V, T)[0, 1]
        vals = 0.5 * (grid - v) ** 2 / s + t * np.abs(grid)
        best = grid[int(np.argmin(vals))]
        obj = lambda w: 0.5 * (w - v) ** 2 / s + t * abs(w)
        assert obj(got) <= obj(best) + 1e-8


def test_signed_prox_pins_diagonal_and_honours_floor():
    rng = np.random.default_rng(22)
    V = rng.standard_normal((4, 4))
    out = signed_prox(V, np.full((4, 4), 0.8), floor=5.0)
    assert np.all(out.diagonal() == 0.0)
    assert np.abs(out).sum() >= 5.0 - 1e-9
    assert np.all(np.sign(out[out != 0]) == np.sign(V[out != 0]))


def test_collapse_split_cancels_comass():
    rng = np.random.default_rng(23)
    P = random_sparse_nonneg(rng, 5, density=0.6)
    N = random_sparse_nonneg(rng, 5, density=0.6)
    Z = np.stack([P, N])
    out = collapse_split(Z)
    assert np.allclose(out[0] - out[1], P - N, atol=1e-15)
    assert np.all(np.minimum(out[0], out[1]) == 0.0)
    W = rng.standard_normal((4, 4))
    assert np.array_equal(collapse_split(W), W)  # 2-d passes through


def test_collapse_split_never_increases_inner_objective():
    rng = np.random.default_rng(24)
    for trial in range(6):
        prob = make_problem(rng, mode="split", lam=0.1)
        Z = np.stack([
            random_sparse_nonneg(rng, 5, density=0.7),
            random_sparse_nonneg(rng, 5, density=0.7),
        ])
        # the linear anchor can reward co-mass, so compare without it
        flat = ProxProblem(
            gram=prob.gram, linear_term=np.zeros((5, 5)), lam=prob.lam,
            gamma=prob.gamma, params=prob.params, mode="split",
        )
        assert inner_objective(collapse_split(Z), flat) <= inner_objective(Z, flat) + 1e-12


# -- smooth part -------------------------------------------------------------

def test_smooth_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    prob = make_problem(rng)
    W = random_sparse_nonneg(rng, 5, density=0.8)
    G = smooth_gradient(W, prob)
    G_fd = fd_gradient(lambda M: smooth_value(M, prob), W)
    assert rel_err(G, G_fd) <= 1e-6


def test_smooth_gradient_split_matches_finite_differences():
    rng = np.random.default_rng(3)
    prob = make_problem(rng, mode="split")
    Z = np.stack([
        random_sparse_nonneg(rng, 5, density=0.8),
        random_sparse_nonneg(rng, 5, density=0.8),
    ])
    G = smooth_gradient(Z, prob)
    G_fd = fd_gradient(lambda M: smooth_value(M, prob), Z)
    assert rel_err(G, G_fd) <= 1e-6


def test_smooth_gradient_ignores_lam():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((30, 4))
    S = X.T @ X / 30
    p = PenaltyParams(n=4, alpha=0.025, mu=1.0)
    lin = rng.standard_normal((4, 4))
    W = random_sparse_nonneg(rng, 4, density=0.9)
    grads = [
        smooth_gradient(W, ProxProblem(S, lin, lam, 5.0, p)) for lam in (0.0, 0.3)
    ]
    assert np.array_equal(grads[0], grads[1])


def test_smooth_gradient_infinite_gamma_drops_kernel():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((30, 4))
    S = X.T @ X / 30
    p = PenaltyParams(n=4, alpha=0.025, mu=1.0)
    W = random_sparse_nonneg(rng, 4, density=0.9)
    prob = ProxProblem(S, np.zeros((4, 4)), 0.0, math.inf, p)
    want = 2.0 * S @ (W - np.eye(4))
    assert np.allclose(smooth_gradient(W, prob), want, atol=1e-14)


def test_inner_objective_adds_l1():
    rng = np.random.default_rng(6)
    prob = make_problem(rng, lam=0.25)
    W = random_sparse_nonneg(rng, 5, density=0.5)
    assert inner_objective(W, prob) == pytest.approx(
        smooth_value(W, prob) + 0.25 * W.sum(), rel=1e-14
    )


def test_gram_spectral_norm_matches_eigh():
    rng = np.random.default_rng(7)
    X = rng.standard_normal((50, 8))
    S = X.T @ X / 50
    want = float(np.linalg.eigvalsh(S)[-1])
    assert gram_spectral_norm(S) == pytest.approx(want, rel=1e-8)


# -- solver ------------------------------------------------------------------

def test_solve_returns_zero_for_dominating_lam():
    # lam beyond every negative smooth-gradient entry at the origin makes
    # the origin stationary for the nonnegativity-constrained problem
    rng = np.random.default_rng(8)
    prob = make_problem(rng, lam=0.0, gamma=50.0)
    Z0 = np.zeros((5, 5))
    g0 = smooth_gradient(Z0, prob)
    mask = ~np.eye(5, dtype=bool)
    lam = max(0.0, float(-g0[mask].min())) + 0.1
    prob = ProxProblem(prob.gram, prob.linear_term, lam, prob.gamma, prob.params)
    sol = solve(prob, Z0)
    assert sol.converged
    assert np.array_equal(sol.weights, np.zeros((5, 5)))


def test_solve_monotone_objective_and_kkt():
    rng = np.random.default_rng(9)
    for trial in range(8):
        prob = make_problem(rng, lam=0.05 + 0.05 * trial, gamma=5.0 + trial)
        sol = solve(prob, feasible_start(prob))
        assert sol.converged
        diffs = np.diff(sol.objective_trace)
        assert np.all(diffs <= 1e-12)
        assert sol.kkt_residual <= 1e-8
        # residual with an independently chosen step, not the solver's own
        assert kkt_residual(sol.weights, prob, 0.05) <= 1e-6
        assert np.all(sol.weights >= 0.0)
        assert np.all(sol.weights.diagonal() == 0.0)


def test_solve_split_mode_feasible_and_converged():
    rng = np.random.default_rng(10)
    prob = make_problem(rng, mode="split", lam=0.05, gamma=8.0)
    sol = solve(prob, feasible_start(prob))
    assert sol.converged
    assert sol.weights.shape == (2, 5, 5)
    assert np.all(sol.weights >= 0.0)
    # the two blocks never share an active entry
    assert np.all(np.minimum(sol.weights[0], sol.weights[1]) == 0.0)
    diffs = np.diff(sol.objective_trace)
    assert np.all(diffs <= 1e-12)
    # reported objective is the stacked objective of the returned pair
    assert sol.objective == pytest.approx(inner_objective(sol.weights, prob), rel=1e-12)
    W = sol.weights[0] - sol.weights[1]
    assert sol.objective == pytest.approx(signed_objective(W, prob), rel=1e-12)


def test_solve_split_matches_dense_signed_grid_without_kernel():
    # gamma = inf removes the kernel coupling, so the split objective
    # separates across columns of the signed matrix; entries with a
    # negative total threshold are where co-activation used to hide
    rng = np.random.default_rng(25)
    n, m = 3, 40
    X = rng.standard_normal((m, n))
    S = X.T @ X / m
    p = PenaltyParams(n=n, alpha=0.1 / n, mu=1.0)
    lin = rng.standard_normal((n, n)) * 0.2  # both signs present
    prob = ProxProblem(S, lin, 0.08, math.inf, p, mode="split")
    sol = solve(prob, feasible_start(prob), InnerOptions(max_iter=5000))
    W = sol.weights[0] - sol.weights[1]

    grid = np.arange(-2.0, 2.0 + 1e-9, 0.01)
    total = 0.0
    for j in range(n):
        rows = [i for i in range(n) if i != j]
        best = math.inf
        for a in grid:
            for b in grid:
                w = np.zeros(n)
                w[rows[0]], w[rows[1]] = a, b
                e = np.eye(n)[:, j]
                col = float((e - w) @ S @ (e - w))
                col += float(lin[rows[0], j] * abs(a) + lin[rows[1], j] * abs(b))
                col += 0.08 * (abs(a) + abs(b))
                best = min(best, col)
        total += best
    assert sol.objective <= total + 1e-4
    assert sol.kkt_residual <= 1e-8
    assert np.all(np.minimum(sol.weights[0], sol.weights[1]) == 0.0)


@pytest.mark.filterwarnings("ignore:alpha \\* n")
def test_solve_respects_norm_floor():
    rng = np.random.default_rng(11)
    prob = make_problem(rng, lam=0.3, gamma=5.0, floor=True, alpha=0.5, mu=0.5)
    sol = solve(prob, feasible_start(prob))
    assert sol.weights.sum() >= prob.params.norm_floor() - 1e-8


def test_solve_start_independence():
    rng = np.random.default_rng(12)
    prob = make_problem(rng, lam=0.1, gamma=10.0)
    sol_a = solve(prob, feasible_start(prob, value=0.02))
    sol_b = solve(prob, feasible_start(prob, value=0.8))
    assert sol_a.objective == pytest.approx(sol_b.objective, abs=1e-7)


def test_solve_rejects_infeasible_start():
    rng = np.random.default_rng(13)
    prob = make_problem(rng)
    bad = np.full((5, 5), 0.1)  # nonzero diagonal
    with pytest.raises(ValueError, match="diagonal"):
        solve(prob, bad)
    neg = feasible_start(prob)
    neg[0, 1] = -0.5
    with pytest.raises(ValueError, match="negative"):
        solve(prob, neg)


def test_solve_matches_dense_grid_without_kernel():
    # gamma = inf removes the kernel coupling, so the objective separates
    # across columns and a truly dense per-column grid is affordable
    rng = np.random.default_rng(14)
    n, m = 3, 40
    X = rng.standard_normal((m, n))
    S = X.T @ X / m
    p = PenaltyParams(n=n, alpha=0.1 / n, mu=1.0)
    lin = rng.standard_normal((n, n)) * 0.2
    prob = ProxProblem(S, lin, 0.08, math.inf, p)
    sol = solve(prob, feasible_start(prob), InnerOptions(max_iter=5000))

    grid = np.arange(0.0, 1.0 + 1e-9, 0.01)
    total = 0.0
    for j in range(n):
        rows = [i for i in range(n) if i != j]
        best = math.inf
        for a in grid:
            for b in grid:
                w = np.zeros(n)
                w[rows[0]], w[rows[1]] = a, b
                e = np.eye(n)[:, j]
                col = float((e - w) @ S @ (e - w))
                col += float(lin[rows[0], j] * a + lin[rows[1], j] * b)
                col += 0.08 * (a + b)
                best = min(best, col)
        total += best
    assert sol.objective <= total + 1e-4
    assert sol.kkt_residual <= 1e-8


def test_estimate_initial_lipschitz_positive():
    rng = np.random.default_rng(15)
    prob = make_problem(rng)
    L = estimate_initial_lipschitz(prob, feasible_start(prob))
    assert L > 0.0
    assert math.isfinite(L)


def test_group_shrink_is_exact_norm_prox():
    rng = np.random.default_rng(16)
    V = rng.standard_normal((4, 4))
    np.fill_diagonal(V, 0.0)
    for amount in (0.0, 0.3, 2.0, np.linalg.norm(V) + 1.0):
        got = group_shrink(V, float(amount))

        def obj(X):
            return 0.5 * float(((X - V) ** 2).sum()) + amount * float(np.linalg.norm(X))

        # the minimizer is a nonnegative rescaling of V; scan that ray densely
        best = min(obj(c * V) for c in np.arange(0.0, 1.0 + 1e-9, 1e-4))
        assert obj(got) <= best + 1e-8
    assert np.array_equal(group_shrink(V, float(np.linalg.norm(V))), np.zeros_like(V))


def test_solve_escapes_kernel_kink_near_origin():
    # with a small kernel and a weak linear pull the minimizer sits close
    # to the origin, where the kernel gradient is discontinuous; treating
    # the kink inside the prox keeps the curvature estimate bounded and
    # the step length usable
    p = PenaltyParams(n=3, alpha=0.1 / 3, mu=0.5)
    lin = np.zeros((3, 3))
    lin[1, 0] = -0.12
    prob = ProxProblem(0.4 * np.eye(3), lin, 0.02, 2.0, p)
    sol = solve(prob, np.zeros((3, 3)), InnerOptions(max_iter=5000))

    assert sol.converged
    assert sol.final_step > 1e-4
    assert sol.weights[1, 0] > 0.01
    inactive = sol.weights.copy()
    inactive[1, 0] = 0.0
    assert np.all(inactive == 0.0)

    # dense scan over the single active entry is an exact oracle here
    def obj(w):
        W = np.zeros((3, 3))
        W[1, 0] = w
        return inner_objective(W, prob)

    best = min(obj(w) for w in np.arange(0.0, 0.4, 1e-5))
    assert sol.objective <= best + 1e-8
    assert abs(sol.objective - best) <= 1e-7
    assert kkt_residual(sol.weights, prob, 0.05) <= 1e-7
