"""Outer loop: dynamic-step Bregman proximal gradient for DAG learning.

Given samples ``X`` (rows are observations, ``X[:, j]`` is variable j)
the solver minimizes

    (1/m) ||X (I - W)||_F^2  +  lam * ||W||_1  +  mu * trace((I + alpha W)^n)

over nonnegative off-diagonal weight matrices (positive mode) or over a
split pair ``W = P - N`` with both parts nonnegative (split mode, for
signed weights).  Each outer iteration linearizes only the trace penalty
and solves the remaining convex subproblem with :func:`bregdag.prox.solve`,
measuring the step against the reference kernel.  The step size is halved
until the kernel sufficient-decrease inequality holds, the step is
accepted, and the next trial step is doubled (capped at ``gamma_max``),
so the step size adapts to the local curvature ratio instead of a fixed
Lipschitz constant.

With ``kernel="euclidean"`` the method degrades to a classical baseline:
loss and penalty together form the smooth part, one step is a plain
projected/soft-thresholded gradient step, and the same halve/double
protocol runs against the quadratic model.

Iteration stops once the relative change of the scaled squared residual
``(1/m) ||X (I - W_k)||_F^2`` falls below ``tau``.
"""

from __future__ import annotations

import dataclasses
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .penalty import (
    PenaltyParams,
    bregman_divergence,
    kernel_gradient,
    penalty_gradient,
    penalty_value,
    penalty_value_and_gradient,
)
from .prox import (
    InnerOptions,
    ProxProblem,
    collapse_split,
    composite_prox,
    effective_weights,
    gram_spectral_norm,
    kernel_curvature_bound,
    penalty_input,
    smooth_kernel_curvature_bound,
    solve,
)

#: absolute slack absorbing roundoff in the sufficient-decrease tests
_DECREASE_SLACK = 1e-12
#: bound on step-size halvings within one outer iteration
_MAX_HALVINGS = 60


@dataclass(frozen=True)
class FitConfig:
    """Solver settings.

    ``alpha=None`` resolves to ``0.1 / n`` once the data dimension is
    known.  ``omega`` is the magnitude threshold applied to the learned
    weights when reporting the binary graph.  ``seed`` does not influence
    the fit (which is deterministic) but is echoed into result files.
    """

    lam: float = 1e-4
    mu: float = 100.0
    alpha: float | None = None
    tau: float = 1e-7
    omega: float = 0.3
    gamma0: float = 1.0
    gamma_max: float = 1000.0
    max_outer: int = 500
    mode: str = "positive"
    kernel: str = "bregman"
    enforce_norm_floor: bool = False
    seed: int = 0
    inner: InnerOptions = field(default_factory=InnerOptions)

    def __post_init__(self) -> None:
        if self.mode not in ("positive", "split"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.kernel not in ("bregman", "euclidean"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.omega < 0:
            raise ValueError("omega must be nonnegative")
        if not 0 < self.gamma0 <= self.gamma_max:
            raise ValueError("need 0 < gamma0 <= gamma_max")
        if self.max_outer < 1:
            raise ValueError("max_outer must be at least 1")

    def resolve_params(self, n: int) -> PenaltyParams:
        alpha = 0.1 / n if self.alpha is None else self.alpha
        return PenaltyParams(n=n, alpha=alpha, mu=self.mu)


@dataclass(frozen=True)
class FitResult:
    """Learned weights plus per-iteration diagnostics.

    ``weights`` are signed in split mode (``P - N``).  Traces carry one
    entry per accepted outer step; objective and residual traces are
    prefixed with their value at the starting point.  ``halvings_trace``
    records how many times the trial step was halved before acceptance,
    which together with ``gamma_trace`` pins down the step protocol.
    """

    weights: np.ndarray
    binary: np.ndarray
    objective_trace: np.ndarray
    l2_trace: np.ndarray
    gamma_trace: np.ndarray
    halvings_trace: np.ndarray
    outer_iterations: int
    inner_iterations_total: int
    converged: bool
    wall_time_seconds: float
    config: FitConfig
    params: PenaltyParams
    iterates: list[np.ndarray] | None = None


def loss_value(Z: np.ndarray, X: np.ndarray) -> float:
    """Scaled squared residual ``(1/m) ||X (I - W)||_F^2``."""
    W = effective_weights(np.asarray(Z, dtype=float))
    R = X - X @ W
    return float(np.vdot(R, R)) / X.shape[0]


def l2_error(Z: np.ndarray, X: np.ndarray) -> float:
    """Alias of :func:`loss_value`; this is the quantity the stop rule tracks."""
    return loss_value(Z, X)


def objective(Z: np.ndarray, X: np.ndarray, lam: float, params: PenaltyParams) -> float:
    """Full objective: loss + l1 + trace penalty.

    ``Z`` is a nonnegative matrix in positive mode or a stacked
    nonnegative pair in split mode; either way the penalty acts on the
    nonnegative image of ``Z``.
    """
    Z = np.asarray(Z, dtype=float)
    return (
        loss_value(Z, X)
        + lam * float(np.abs(Z).sum())
        + penalty_value(penalty_input(Z), params)
    )


def sufficient_decrease(
    current: np.ndarray, candidate: np.ndarray, gamma: float, params: PenaltyParams
) -> bool:
    """Kernel sufficient-decrease test for the trace penalty.

    Accepts the step when

        f(W+) <= f(W) + <grad f(W), W+ - W> + D_h(W+, W) / gamma

    up to roundoff slack, with f and the kernel divergence composed with
    the block sum in split mode.  Guaranteed for ``gamma <= 1`` when both
    points lie in the relative-smoothness region.
    """
    cur = penalty_input(np.asarray(current, dtype=float))
    cand = penalty_input(np.asarray(candidate, dtype=float))
    f_cur, g_cur = penalty_value_and_gradient(cur, params)
    f_cand = penalty_value(cand, params)
    bound = (
        f_cur
        + float(np.vdot(g_cur, cand - cur))
        + bregman_divergence(cand, cur, params) / gamma
    )
    return f_cand <= bound + _DECREASE_SLACK


def threshold(W: np.ndarray, omega: float) -> np.ndarray:
    """Binary adjacency: 1 where ``|W| > omega``, diagonal forced to 0."""
    B = (np.abs(np.asarray(W, dtype=float)) > omega).astype(np.int64)
    np.fill_diagonal(B, 0)
    return B


def initial_point(cfg: FitConfig, n: int) -> np.ndarray:
    """Feasible starting point: small uniform off-diagonal entries.

    Positive mode fills the off-diagonal with ``0.1 / n``; split mode puts
    that mass in the positive block and starts the negative block at zero,
    so the pair carries no cancelling mass.  When the norm floor is
    enforced the point is scaled so its entry sum meets the floor exactly.
    """
    c0 = 0.1 / n
    W = np.full((n, n), c0)
    np.fill_diagonal(W, 0.0)
    Z = np.stack([W, np.zeros_like(W)]) if cfg.mode == "split" else W
    if cfg.enforce_norm_floor:
        params = cfg.resolve_params(n)
        Z = Z * (params.norm_floor() / float(Z.sum()))
    return Z


def _reduce_split(Z: np.ndarray, cfg: FitConfig, params: PenaltyParams) -> np.ndarray:
    # objective never increases under the collapse; skip only if it would
    # leave the enforced norm-floor region
    collapsed = collapse_split(Z)
    if cfg.enforce_norm_floor and float(collapsed.sum()) < params.norm_floor():
        return Z
    return collapsed


def _euclidean_smooth(Z: np.ndarray, X: np.ndarray, params: PenaltyParams) -> float:
    return loss_value(Z, X) + penalty_value(penalty_input(Z), params)


def _euclidean_smooth_gradient(
    Z: np.ndarray, S: np.ndarray, params: PenaltyParams
) -> np.ndarray:
    W = effective_weights(Z)
    G_loss = 2.0 * S @ (W - np.eye(params.n))
    g_pen = penalty_gradient(penalty_input(Z), params)
    if Z.ndim == 3:
        return np.stack([G_loss + g_pen, -G_loss + g_pen])
    return G_loss + g_pen


def fit(X: np.ndarray, cfg: FitConfig | None = None, record_iterates: bool = False) -> FitResult:
    """Learn a weighted DAG from samples.

    Parameters
    ----------
    X : (m, n) array
        Observations; ``X[:, j]`` is variable j and the learned entry
        ``W[i, j]`` is the weight of edge ``i -> j``.
    cfg : FitConfig, optional
        Solver settings; defaults throughout when omitted.
    record_iterates : bool
        Keep a copy of every accepted iterate on the result (starting
        point included) for protocol-level verification; off by default.

    Returns
    -------
    FitResult
        Deterministic for fixed ``X`` and ``cfg``: every trace is
        reproducible bit for bit.
    """
    if cfg is None:
        cfg = FitConfig()
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"X must be 2-d (samples x variables), got shape {X.shape}")
    m, n = X.shape
    if m < 1:
        raise ValueError("X must contain at least one sample")
    params = cfg.resolve_params(n)

    started = time.perf_counter()
    S = X.T @ X / m
    norm_S = gram_spectral_norm(S)
    blocks = 2 if cfg.mode == "split" else 1

    Z = initial_point(cfg, n)
    gamma = cfg.gamma0
    obj_trace = [objective(Z, X, cfg.lam, params)]
    l2_trace = [loss_value(Z, X)]
    gamma_trace: list[float] = []
    halvings_trace: list[int] = []
    iterates = [Z.copy()] if record_iterates else None
    inner_total = 0
    converged = False
    outer = 0

    for outer in range(1, cfg.max_outer + 1):
        if cfg.kernel == "bregman":
            _, grad_pen = penalty_value_and_gradient(penalty_input(Z), params)
            halvings = 0
            while True:
                gh = kernel_gradient(penalty_input(Z), params, allow_zero=True)
                prob = ProxProblem(
                    gram=S,
                    linear_term=grad_pen - gh / gamma,
                    lam=cfg.lam,
                    gamma=gamma,
                    params=params,
                    enforce_norm_floor=cfg.enforce_norm_floor,
                    mode=cfg.mode,
                )
                radius = float(np.linalg.norm(penalty_input(Z)))
                if cfg.mode == "positive" and not cfg.enforce_norm_floor:
                    curvature = smooth_kernel_curvature_bound(radius, params)
                else:
                    curvature = kernel_curvature_bound(radius, params)
                L0 = 2.0 * norm_S + curvature / gamma
                opts = dataclasses.replace(cfg.inner, initial_lipschitz=max(L0, 1e-8))
                sol = solve(prob, Z, opts)
                inner_total += sol.iterations
                cand = sol.weights if blocks == 1 else _reduce_split(sol.weights, cfg, params)
                if sufficient_decrease(Z, cand, gamma, params):
                    break
                if halvings >= _MAX_HALVINGS:
                    warnings.warn(
                        "sufficient decrease still failing after "
                        f"{_MAX_HALVINGS} halvings; accepting the step",
                        stacklevel=2,
                    )
                    break
                gamma /= 2.0
                halvings += 1
            Z = cand
        else:  # euclidean baseline: closed-form prox step on loss + penalty
            g = _euclidean_smooth_gradient(Z, S, params)
            phi0 = _euclidean_smooth(Z, X, params)
            floor = params.norm_floor() if cfg.enforce_norm_floor else None
            halvings = 0
            while True:
                cand = composite_prox(Z - gamma * g, gamma, cfg.lam, floor)
                d = cand - Z
                model = phi0 + float(np.vdot(g, d)) + float(np.vdot(d, d)) / (2.0 * gamma)
                if _euclidean_smooth(cand, X, params) <= model + _DECREASE_SLACK:
                    break
                if halvings >= _MAX_HALVINGS:
                    warnings.warn(
                        "quadratic decrease still failing after "
                        f"{_MAX_HALVINGS} halvings; accepting the step",
                        stacklevel=2,
                    )
                    break
                gamma /= 2.0
                halvings += 1
            if blocks == 2:
                cand = _reduce_split(cand, cfg, params)
            Z = cand

        gamma_trace.append(gamma)
        halvings_trace.append(halvings)
        gamma = min(2.0 * gamma, cfg.gamma_max)
        obj_trace.append(objective(Z, X, cfg.lam, params))
        l2_trace.append(loss_value(Z, X))
        if iterates is not None:
            iterates.append(Z.copy())

        prev, cur = l2_trace[-2], l2_trace[-1]
        if prev == 0.0 or abs(cur - prev) / prev <= cfg.tau:
            converged = True
            break

    weights = effective_weights(Z)
    return FitResult(
        weights=weights,
        binary=threshold(weights, cfg.omega),
        objective_trace=np.asarray(obj_trace),
        l2_trace=np.asarray(l2_trace),
        gamma_trace=np.asarray(gamma_trace),
        halvings_trace=np.asarray(halvings_trace, dtype=np.int64),
        outer_iterations=outer,
        inner_iterations_total=inner_total,
        converged=converged,
        wall_time_seconds=time.perf_counter() - started,
        config=cfg,
        params=params,
        iterates=iterates,
    )
