"""Inner subproblem of the Bregman proximal step.

Each outer iteration of the solver linearizes the acyclicity penalty at
the current iterate and leaves everything else exact, which yields the
problem

    minimize  (1/m) ||X (I - W)||_F^2  +  lam * l1(W)
              + <linear_term, |W|>  +  (1/gamma) * h(|W|)
    over      diag(W) = 0,  optionally l1(W) >= norm floor,

where ``linear_term`` collects the penalty gradient minus the scaled
kernel gradient at the expansion point and ``h`` is the reference kernel
from :mod:`bregdag.penalty`.  In positive mode ``W >= 0``, ``|W| = W``
and the problem is convex.  In split mode ``W`` is signed: formally the
variable is a nonnegative pair ``(P, N)`` with the regularizers applied
to ``P + N``, but any pair with co-active entries loses to its reduction
``(max(W, 0), max(-W, 0))``, ``W = P - N``, in every objective term
except the anchor built from the kernel linearization.  Keeping the pair
complementary and optimizing the signed matrix directly removes that
slack dimension, so the penalty linearization acts on the effective
weights instead of being absorbed by cancelling mass.  ``h`` is radial,
hence smooth in the signed variable; the entrywise ``<linear_term, |W|>``
joins the l1 term in the proximal map.

Both modes are smooth-plus-separable and solved by an accelerated
proximal gradient method with backtracking on the smooth part and a
restart whenever momentum overshoots, which keeps the recorded objective
trace nonincreasing.  No conic or general-purpose solver is involved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .penalty import EPS_NORM, PenaltyParams, kernel_gradient, kernel_value

#: slack added to the backtracking model test to absorb roundoff
_MODEL_SLACK = 1e-12
#: hard cap on backtracking halvings per step
_MAX_BACKTRACKS = 100


@dataclass(frozen=True)
class ProxProblem:
    """Data of one inner subproblem.

    ``gram`` is ``X^T X / m``; the loss enters only through it, so the
    samples themselves are not needed here.  ``linear_term`` is the
    ``(n, n)`` coefficient matrix applied to the entry magnitudes (to the
    iterate itself in positive mode).  ``gamma`` is the outer step size;
    ``math.inf`` switches the kernel term off.
    """

    gram: np.ndarray
    linear_term: np.ndarray
    lam: float
    gamma: float
    params: PenaltyParams
    enforce_norm_floor: bool = False
    mode: str = "positive"

    def __post_init__(self) -> None:
        if self.mode not in ("positive", "split"):
            raise ValueError(f"unknown mode {self.mode!r}")
        n = self.params.n
        if self.gram.shape != (n, n):
            raise ValueError(f"gram must be {n}x{n}, got {self.gram.shape}")
        if self.linear_term.shape != (n, n):
            raise ValueError(
                f"linear_term must be {n}x{n}, got {self.linear_term.shape}"
            )
        if self.lam < 0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    @property
    def gram_row(self) -> np.ndarray:
        """Alias of ``gram``; the loss gradient is ``2 * gram @ (W - I)``."""
        return self.gram

    def floor(self) -> float | None:
        return self.params.norm_floor() if self.enforce_norm_floor else None


@dataclass(frozen=True)
class InnerOptions:
    """Iteration controls for :func:`solve`.

    ``initial_lipschitz=None`` estimates a starting curvature from the
    Gram spectral norm (power iteration) plus a kernel curvature bound at
    the starting point; backtracking corrects it upward as needed.
    Convergence requires both a relative objective decrease below
    ``rel_tol`` and a prox fixed-point residual below ``kkt_tol``.
    """

    max_iter: int = 2000
    rel_tol: float = 1e-9
    backtrack_factor: float = 2.0
    initial_lipschitz: float | None = None
    kkt_tol: float = 1e-8


@dataclass(frozen=True)
class InnerSolution:
    weights: np.ndarray
    objective: float
    objective_trace: np.ndarray
    iterations: int
    converged: bool
    kkt_residual: float
    final_step: float


def _offdiag_mask(shape: tuple[int, ...]) -> np.ndarray:
    """Boolean mask of the free entries: off-diagonal of every block."""
    n = shape[-1]
    block = ~np.eye(n, dtype=bool)
    if len(shape) == 3:
        return np.broadcast_to(block, shape).copy()
    return block


def _shift_for_floor(w: np.ndarray, target: float) -> float:
    """Smallest ``nu >= 0`` with ``sum(max(w + nu, 0)) >= target``.

    Exact piecewise-linear solve on the sorted values; falls back to
    bisection if roundoff spoils the bracket scan.
    """
    if float(np.maximum(w, 0.0).sum()) >= target:
        return 0.0
    ws = np.sort(w)[::-1]
    prefix = np.cumsum(ws)
    ks = np.arange(1, ws.size + 1, dtype=float)
    cand = (target - prefix) / ks
    lower = -ws  # nu must exceed -w_(k) for the k-th entry to be active
    upper = np.empty_like(lower)
    upper[:-1] = -ws[1:]
    upper[-1] = np.inf
    ok = (cand > lower - 1e-15) & (cand <= upper + 1e-15)
    idx = np.nonzero(ok)[0]
    if idx.size:
        return max(float(cand[idx[0]]), 0.0)
    # bisection fallback, resolved to 1e-12 of the sum
    lo, hi = 0.0, 1.0
    while np.maximum(w + hi, 0.0).sum() < target:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.maximum(w + mid, 0.0).sum() < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * max(1.0, abs(hi)):
            break
    return hi


def composite_prox(
    V: np.ndarray, step: float, lam: float, floor: float | None = None
) -> np.ndarray:
    """Proximal map of ``step * (lam * l1 + feasible-set indicator)``.

    Soft-thresholds the off-diagonal entries by ``step * lam``, clamps at
    zero, and pins the diagonal.  With a ``floor`` on the entry sum, a
    common upward shift ``nu`` is applied before clamping so the sum
    constraint holds with equality whenever it would otherwise be
    violated.  Works on ``(n, n)`` and stacked ``(2, n, n)`` inputs; the
    floor couples all blocks.
    """
    V = np.asarray(V, dtype=float)
    mask = _offdiag_mask(V.shape)
    W = np.where(mask, V - step * lam, 0.0)
    if floor is not None:
        nu = _shift_for_floor(W[mask], float(floor))
        if nu > 0.0:
            W = np.where(mask, W + nu, 0.0)
    return np.maximum(W, 0.0)


def group_shrink(W: np.ndarray, amount: float) -> np.ndarray:
    """Proximal map of ``amount * ||.||_F``: shrink the Frobenius norm.

    Composed after :func:`composite_prox` this gives the exact prox of
    ``step * (lam * l1 + amount/step * frobenius + indicator)``: the
    entrywise map fixes the support and signs, after which the norm
    shrink's optimality condition is satisfied jointly.
    """
    if amount <= 0.0:
        return W
    norm = float(np.linalg.norm(W))
    if norm <= amount:
        return np.zeros_like(W)
    return (1.0 - amount / norm) * W


def signed_prox(
    V: np.ndarray, thresholds: np.ndarray, floor: float | None = None
) -> np.ndarray:
    """Entrywise proximal map of ``sum(T_ij |W_ij|)`` plus the diagonal pin.

    Shrinks each off-diagonal magnitude by its own threshold while keeping
    the sign; a negative threshold grows the magnitude instead (that is
    the exact prox, and it occurs when the kernel anchor outweighs the
    penalty linearization on an active entry).  A ``floor`` on the
    magnitude sum is honoured by a common upward shift of the magnitudes;
    entries of ``V`` that are exactly zero stay zero unless the shift
    forces them in, in which case they come in positive.
    """
    V = np.asarray(V, dtype=float)
    mask = _offdiag_mask(V.shape)
    mag = np.where(mask, np.abs(V) - thresholds, 0.0)
    if floor is not None:
        nu = _shift_for_floor(mag[mask], float(floor))
        if nu > 0.0:
            mag = np.where(mask, mag + nu, 0.0)
    sign = np.where(V < 0, -1.0, 1.0)
    return sign * np.maximum(mag, 0.0)


def effective_weights(Z: np.ndarray) -> np.ndarray:
    """Signed weights entering the loss: ``Z`` itself or ``P - N``."""
    return Z if Z.ndim == 2 else Z[0] - Z[1]


def penalty_input(Z: np.ndarray) -> np.ndarray:
    """Nonnegative matrix entering penalty and kernel: ``Z`` or ``P + N``."""
    return Z if Z.ndim == 2 else Z[0] + Z[1]


def collapse_split(Z: np.ndarray) -> np.ndarray:
    """Cancel co-active mass in a stacked pair: ``(P, N) -> (P', N')``
    with ``P' - N' = P - N`` and ``min(P', N') = 0`` entrywise.

    The loss only sees the difference, while the l1 term and the penalty
    (increasing in every entry of ``P + N``) can only go down, so this is
    a descent map on the full objective.  The kernel's radial anchor
    rewards keeping ``P + N`` near the previous radius, which lets inner
    solutions retain cancelling mass; applying the reduction at each
    accepted step removes it.  No-op on unstacked input.
    """
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 2:
        return Z
    W = Z[0] - Z[1]
    return np.stack([np.maximum(W, 0.0), np.maximum(-W, 0.0)])


def smooth_value(Z: np.ndarray, prob: ProxProblem) -> float:
    """Smooth part of the inner objective at ``Z`` (stacked or positive).

    The linear term multiplies the penalty input, i.e. the iterate itself
    in positive mode and the block sum in split mode.
    """
    W = effective_weights(Z)
    A = np.eye(prob.params.n) - W
    val = float(np.vdot(A, prob.gram @ A))
    val += float(np.vdot(prob.linear_term, penalty_input(Z)))
    if math.isfinite(prob.gamma):
        val += kernel_value(penalty_input(Z), prob.params) / prob.gamma
    return val


def smooth_gradient(Z: np.ndarray, prob: ProxProblem) -> np.ndarray:
    """Gradient of the smooth part: ``2 S (W - I) + linear_term + (1/gamma) grad h``."""
    Z = np.asarray(Z, dtype=float)
    W = effective_weights(Z)
    G_loss = 2.0 * prob.gram @ (W - np.eye(prob.params.n))
    if Z.ndim == 3:
        G = np.stack([G_loss, -G_loss])
    else:
        G = G_loss
    lin = prob.linear_term
    G = G + (np.stack([lin, lin]) if Z.ndim == 3 else lin)
    if math.isfinite(prob.gamma):
        gh = kernel_gradient(penalty_input(Z), prob.params, allow_zero=True) / prob.gamma
        G = G + (np.stack([gh, gh]) if Z.ndim == 3 else gh)
    return G


def inner_objective(Z: np.ndarray, prob: ProxProblem) -> float:
    """Full inner objective; ``Z`` is assumed feasible (nonnegative)."""
    return smooth_value(Z, prob) + prob.lam * float(Z.sum())


def kernel_kink_slope(p: PenaltyParams) -> float:
    """Directional derivative of the kernel at the origin, ``mu*n*(n-1)*alpha``.

    The kernel grows linearly in ``||W||_F`` near zero, so its gradient is
    discontinuous there and its curvature is unbounded in a shrinking
    neighbourhood.  Subtracting this slope times the norm leaves a convex
    remainder with curvature bounded by
    :func:`smooth_kernel_curvature_bound`; the slope itself is a norm and
    has a closed-form prox (:func:`group_shrink`).
    """
    return p.mu * p.n * (p.n - 1) * p.alpha


def smooth_kernel_curvature_bound(r: float, p: PenaltyParams) -> float:
    """Largest Hessian eigenvalue of the kink-free kernel remainder at radius ``r``."""
    return p.mu * p.n * (p.n - 1) ** 2 * p.alpha ** 2 * (1.0 + p.alpha * r) ** (p.n - 2)


def _reduced_smooth_value(Z: np.ndarray, prob: ProxProblem) -> float:
    """Positive-mode smooth part with the kernel's kink slope removed."""
    W = effective_weights(Z)
    A = np.eye(prob.params.n) - W
    val = float(np.vdot(A, prob.gram @ A))
    val += float(np.vdot(prob.linear_term, Z))
    r = float(np.linalg.norm(Z))
    val += (kernel_value(Z, prob.params) - kernel_kink_slope(prob.params) * r) / prob.gamma
    return val


def _reduced_smooth_gradient(Z: np.ndarray, prob: ProxProblem) -> np.ndarray:
    p = prob.params
    G = 2.0 * prob.gram @ (Z - np.eye(p.n)) + prob.linear_term
    r = float(np.linalg.norm(Z))
    if r < EPS_NORM:
        # coefficient limit (phi'(r) - phi'(0)) / r -> phi''(0)
        coef = kernel_kink_slope(p) * (p.n - 1) * p.alpha
    else:
        # expm1/log1p keep (1 + alpha r)^(n-1) - 1 accurate for tiny r
        coef = kernel_kink_slope(p) * math.expm1((p.n - 1) * math.log1p(p.alpha * r)) / r
    return G + (coef / prob.gamma) * Z


def _signed_smooth_value(W: np.ndarray, prob: ProxProblem) -> float:
    # kernel is radial, so h(|W|) = h(W); the entrywise linear term is
    # nonsmooth in the signed variable and lives in the prox instead
    A = np.eye(prob.params.n) - W
    val = float(np.vdot(A, prob.gram @ A))
    if math.isfinite(prob.gamma):
        val += kernel_value(W, prob.params) / prob.gamma
    return val


def _signed_smooth_gradient(W: np.ndarray, prob: ProxProblem) -> np.ndarray:
    G = 2.0 * prob.gram @ (W - np.eye(prob.params.n))
    if math.isfinite(prob.gamma):
        G = G + kernel_gradient(W, prob.params, allow_zero=True) / prob.gamma
    return G


def signed_objective(W: np.ndarray, prob: ProxProblem) -> float:
    """Split-mode inner objective in the signed parametrization."""
    reg = float(np.vdot(prob.lam + prob.linear_term, np.abs(W)))
    return _signed_smooth_value(W, prob) + reg


def kernel_curvature_bound(r: float, p: PenaltyParams) -> float:
    """Upper bound on the largest kernel Hessian eigenvalue at radius ``r``.

    The tangential curvature grows like 1/r near the origin, where the
    kernel has a kink; the radius is floored at 1e-3 here because this is
    only a starting estimate for backtracking.
    """
    r = max(float(r), 1e-3)
    shell = (1.0 + p.alpha * r) ** (p.n - 2)
    radial = (p.n - 1) * p.alpha ** 2
    tangential = p.alpha * (1.0 + p.alpha * r) / r
    return p.mu * p.n * (p.n - 1) * shell * max(radial, tangential)


def gram_spectral_norm(S: np.ndarray, iters: int = 100) -> float:
    """Largest eigenvalue of the (symmetric PSD) Gram matrix by power iteration."""
    n = S.shape[0]
    v = np.full(n, 1.0 / math.sqrt(n))
    lam = 0.0
    for _ in range(iters):
        u = S @ v
        norm = float(np.linalg.norm(u))
        if norm < EPS_NORM:
            return 0.0
        v = u / norm
        lam = float(v @ (S @ v))
    return lam


def estimate_initial_lipschitz(prob: ProxProblem, start: np.ndarray) -> float:
    L = 2.0 * gram_spectral_norm(prob.gram)
    if math.isfinite(prob.gamma):
        r = float(np.linalg.norm(penalty_input(start)))
        if prob.mode == "positive" and prob.floor() is None:
            L += smooth_kernel_curvature_bound(r, prob.params) / prob.gamma
        else:
            L += kernel_curvature_bound(r, prob.params) / prob.gamma
    return max(L, 1e-8)


def _check_feasible(Z: np.ndarray, prob: ProxProblem) -> None:
    if np.any(Z < 0):
        raise ValueError("starting point has negative entries")
    diags = np.diagonal(Z, axis1=-2, axis2=-1)
    if np.any(diags != 0):
        raise ValueError("starting point has nonzero diagonal entries")
    floor = prob.floor()
    if floor is not None:
        mass = float(np.abs(effective_weights(Z)).sum())
        if mass < floor - 1e-9:
            raise ValueError(
                f"starting point violates the norm floor: sum {mass:.6g} < {floor:.6g}"
            )


def kkt_residual(Z: np.ndarray, prob: ProxProblem, step: float) -> float:
    """Distance between ``Z`` and one prox-gradient step of length ``step``.

    Split-mode input may be the stacked pair or the signed matrix; the
    residual is computed in the signed parametrization either way.
    """
    if prob.mode == "split":
        W = effective_weights(np.asarray(Z, dtype=float))
        G = _signed_smooth_gradient(W, prob)
        T = step * (prob.lam + prob.linear_term)
        Wnext = signed_prox(W - step * G, T, prob.floor())
        return float(np.linalg.norm(W - Wnext))
    if math.isfinite(prob.gamma) and prob.floor() is None:
        G = _reduced_smooth_gradient(Z, prob)
        shrink = kernel_kink_slope(prob.params) / prob.gamma
        Znext = group_shrink(composite_prox(Z - step * G, step, prob.lam, None), step * shrink)
    else:
        G = smooth_gradient(Z, prob)
        Znext = composite_prox(Z - step * G, step, prob.lam, prob.floor())
    return float(np.linalg.norm(Z - Znext))


def solve(prob: ProxProblem, start: np.ndarray, opts: InnerOptions | None = None) -> InnerSolution:
    """Solve the inner subproblem from a feasible warm start.

    Monotone accelerated proximal gradient: candidate steps are taken from
    the extrapolated point, backtracking inflates the curvature estimate
    until the quadratic model holds, and any step that would increase the
    objective triggers a momentum restart from the incumbent, so the
    returned trace never increases.  Convergence is declared once the
    relative objective decrease falls below ``opts.rel_tol`` and the prox
    fixed-point residual falls below ``opts.kkt_tol``.

    In split mode ``start`` is the stacked pair; the loop runs on the
    signed matrix and the returned pair is complementary.
    """
    if opts is None:
        opts = InnerOptions()
    Z = np.asarray(start, dtype=float).copy()
    want = (prob.params.n, prob.params.n)
    if prob.mode == "split":
        want = (2,) + want
    if Z.shape != want:
        raise ValueError(f"start must have shape {want} in {prob.mode} mode, got {Z.shape}")
    _check_feasible(Z, prob)

    L = opts.initial_lipschitz or estimate_initial_lipschitz(prob, Z)
    floor = prob.floor()

    if prob.mode == "split":
        M = effective_weights(Z)
        sval, sgrad = _signed_smooth_value, _signed_smooth_gradient
        thresholds = prob.lam + prob.linear_term

        def prox_map(V: np.ndarray, step: float) -> np.ndarray:
            return signed_prox(V, step * thresholds, floor)

        def F(W: np.ndarray) -> float:
            return signed_objective(W, prob)

    elif math.isfinite(prob.gamma) and floor is None:
        # keep the kernel's kink slope out of the smooth part: near the
        # origin its curvature is unbounded and backtracking would stall
        M = Z
        sval, sgrad = _reduced_smooth_value, _reduced_smooth_gradient
        shrink = kernel_kink_slope(prob.params) / prob.gamma

        def prox_map(V: np.ndarray, step: float) -> np.ndarray:
            return group_shrink(composite_prox(V, step, prob.lam, None), step * shrink)

        def F(W: np.ndarray) -> float:
            return inner_objective(W, prob)

    else:
        M = Z
        sval, sgrad = smooth_value, smooth_gradient

        def prox_map(V: np.ndarray, step: float) -> np.ndarray:
            return composite_prox(V, step, prob.lam, floor)

        def F(W: np.ndarray) -> float:
            return inner_objective(W, prob)

    def backtracked_step(point: np.ndarray, L: float) -> tuple[np.ndarray, float]:
        g = sgrad(point, prob)
        phi0 = sval(point, prob)
        for _ in range(_MAX_BACKTRACKS):
            step = 1.0 / L
            cand = prox_map(point - step * g, step)
            d = cand - point
            model = phi0 + float(np.vdot(g, d)) + 0.5 * L * float(np.vdot(d, d))
            if sval(cand, prob) <= model + _MODEL_SLACK:
                return cand, L
            L *= opts.backtrack_factor
        return cand, L

    def fixed_point_residual(point: np.ndarray, step: float) -> float:
        return float(np.linalg.norm(point - prox_map(point - step * sgrad(point, prob), step)))

    F_x = F(M)
    x, x_prev, y = M, M, M
    t_k = 1.0
    trace = [F_x]
    iterations = 0
    converged = False
    resid = math.inf

    for k in range(1, opts.max_iter + 1):
        iterations = k
        z, L = backtracked_step(y, L)
        F_z = F(z)
        if F_z > F_x:
            # momentum overshoot: plain step from the incumbent
            t_k = 1.0
            z, L = backtracked_step(x, L)
            F_z = F(z)
            if F_z > F_x:
                # no computable descent left; report where we stand
                resid = fixed_point_residual(x, 1.0 / L)
                converged = resid <= opts.kkt_tol
                trace.append(F_x)
                break
        prev_F = F_x
        x_prev, x, F_x = x, z, F_z
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_k * t_k))
        y = x + ((t_k - 1.0) / t_next) * (x - x_prev)
        t_k = t_next
        trace.append(F_x)
        if prev_F - F_x <= opts.rel_tol * max(1.0, abs(F_x)):
            resid = fixed_point_residual(x, 1.0 / L)
            if resid <= opts.kkt_tol:
                converged = True
                break

    if math.isinf(resid):
        resid = fixed_point_residual(x, 1.0 / L)
        converged = converged or resid <= opts.kkt_tol
    if prob.mode == "split":
        x = np.stack([np.maximum(x, 0.0), np.maximum(-x, 0.0)])
    return InnerSolution(
        weights=x,
        objective=F_x,
        objective_trace=np.asarray(trace),
        iterations=iterations,
        converged=converged,
        kkt_residual=resid,
        final_step=1.0 / L,
    )
