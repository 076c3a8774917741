"""Trace-polynomial acyclicity penalty and its Bregman reference kernel.

A nonnegative weighted adjacency matrix ``W`` (entry ``W[i, j]`` is the
weight of edge ``i -> j``) describes an acyclic graph exactly when

    trace((I + alpha * W)^n) == n          (alpha > 0, n = number of nodes)

since the binomial expansion of the matrix power sums weighted closed
walks of every length up to ``n``.  The penalty used throughout this
package is ``mu * trace((I + alpha * W)^n)``; its excess over ``n * mu``
is a smooth, everywhere-nonnegative measure of cyclicity.

The penalty is not Lipschitz-smooth, so gradient steps are measured
against the reference kernel ``h(W) = mu * (n - 1) * (1 + alpha * ||W||_F)^n``
instead of a quadratic.  On the region where ``||W||_F >= 1 / ((n - 2) * alpha)``
the penalty is 1-smooth relative to ``h``, which is what the step-size
control in :mod:`bregdag.solver` relies on.  ``relative_smoothness_check``
probes that inequality numerically.

Signed problems are handled by splitting ``W = P - N`` with ``P, N >= 0``
and composing penalty and kernel with the sum ``P + N``; the ``split_*``
functions implement that lift.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

# Frobenius norms below this are treated as zero when normalizing.
EPS_NORM = 1e-12


@dataclass(frozen=True)
class PenaltyParams:
    """Shape and scaling of the acyclicity penalty.

    Parameters
    ----------
    n : int
        Number of graph nodes, at least 3 (the relative-smoothness region
        is empty for smaller graphs).
    alpha : float
        Positive scale applied to W inside the matrix power.  Values with
        ``alpha * n > 1`` risk overflow of the trace polynomial for large
        weights and trigger a warning.
    mu : float
        Nonnegative overall penalty strength.
    """

    n: int
    alpha: float
    mu: float

    def __post_init__(self) -> None:
        if self.n < 3:
            raise ValueError(f"need at least 3 nodes, got n={self.n}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.mu < 0:
            raise ValueError(f"mu must be nonnegative, got {self.mu}")
        if self.alpha * self.n > 1.0 + 1e-12:
            warnings.warn(
                f"alpha * n = {self.alpha * self.n:.3g} > 1; the trace "
                "polynomial may overflow for large weights",
                stacklevel=2,
            )

    def frobenius_floor(self) -> float:
        """Frobenius-norm floor of the relative-smoothness region."""
        return 1.0 / ((self.n - 2) * self.alpha)

    def norm_floor(self) -> float:
        """Entry-sum (l1) floor whose halfspace lies inside the region."""
        return self.n / ((self.n - 2) * self.alpha)


def _check_matrix(W: np.ndarray, p: PenaltyParams, name: str = "W") -> np.ndarray:
    W = np.asarray(W, dtype=float)
    if W.shape != (p.n, p.n):
        raise ValueError(f"{name} must be {p.n}x{p.n}, got shape {W.shape}")
    return W

def _check_nonneg(W: np.ndarray, name: str = "W") -> None:
    if np.any(W < 0):
        raise ValueError(f"{name} must be entrywise nonnegative; "
                         "pass absolute values for signed matrices")


def _trace_power_parts(W: np.ndarray, p: PenaltyParams) -> tuple[float, np.ndarray]:
    """Return (trace((I + alpha W)^n), (I + alpha W)^(n-1)).

    The power is computed once by binary exponentiation and shared between
    the penalty value and its gradient.  For an acyclic W every diagonal
    entry of every intermediate power is exactly 1 in floating point
    (closed walks are structural zeros), so the trace equals n exactly.
    """
    M = np.eye(p.n) + p.alpha * W
    P = np.linalg.matrix_power(M, p.n - 1)
    return float(np.sum(P * M.T)), P


def penalty_value(W: np.ndarray, p: PenaltyParams) -> float:
    """Penalty ``mu * trace((I + alpha * W)^n)`` at a nonnegative matrix."""
    W = _check_matrix(W, p)
    _check_nonneg(W)
    tr, _ = _trace_power_parts(W, p)
    return p.mu * tr


def penalty_residual(W: np.ndarray, p: PenaltyParams) -> float:
    """Cyclicity excess ``trace((I + alpha * W)^n) - n``; zero iff acyclic."""
    W = _check_matrix(W, p)
    _check_nonneg(W)
    tr, _ = _trace_power_parts(W, p)
    return tr - p.n


def penalty_gradient(W: np.ndarray, p: PenaltyParams) -> np.ndarray:
    """Gradient ``mu * n * alpha * ((I + alpha * W)^(n-1))^T``.

    Entrywise nonnegative whenever W is, since the matrix power of a
    nonnegative matrix stays nonnegative.
    """
    W = _check_matrix(W, p)
    _, P = _trace_power_parts(W, p)
    return p.mu * p.n * p.alpha * P.T


def penalty_value_and_gradient(W: np.ndarray, p: PenaltyParams) -> tuple[float, np.ndarray]:
    """Value and gradient from a single matrix-power evaluation."""
    W = _check_matrix(W, p)
    tr, P = _trace_power_parts(W, p)
    return p.mu * tr, p.mu * p.n * p.alpha * P.T


def kernel_value(W: np.ndarray, p: PenaltyParams) -> float:
    """Reference kernel ``mu * (n - 1) * (1 + alpha * ||W||_F)^n``."""
    W = _check_matrix(W, p)
    r = float(np.linalg.norm(W))
    return p.mu * (p.n - 1) * (1.0 + p.alpha * r) ** p.n


def kernel_gradient(W: np.ndarray, p: PenaltyParams, allow_zero: bool = False) -> np.ndarray:
    """Kernel gradient ``mu*n*(n-1)*alpha * (1 + alpha*||W||_F)^(n-1) * W/||W||_F``.

    The kernel has a kink at the origin.  With ``allow_zero`` the quotient
    norm is clamped at ``EPS_NORM``, which returns the zero matrix at
    ``W = 0`` (a valid subgradient there, since 0 minimizes the kernel);
    otherwise a norm below ``EPS_NORM`` raises.
    """
    W = _check_matrix(W, p)
    r = float(np.linalg.norm(W))
    if r < EPS_NORM:
        if not allow_zero:
            raise ValueError(
                f"kernel gradient undefined at ||W||_F = {r:.3g} < {EPS_NORM}; "
                "pass allow_zero=True for the zero-limit convention"
            )
        r = EPS_NORM
    coef = p.mu * p.n * (p.n - 1) * p.alpha * (1.0 + p.alpha * float(np.linalg.norm(W))) ** (p.n - 1)
    return (coef / r) * W


def bregman_divergence(A: np.ndarray, B: np.ndarray, p: PenaltyParams) -> float:
    """Kernel Bregman divergence ``h(A) - h(B) - <grad h(B), A - B>``.

    Nonnegative by convexity of the kernel; zero when ``A == B``.
    """
    A = _check_matrix(A, p, "A")
    B = _check_matrix(B, p, "B")
    gB = kernel_gradient(B, p, allow_zero=True)
    return kernel_value(A, p) - kernel_value(B, p) - float(np.vdot(gB, A - B))


def is_acyclic_exact(W: np.ndarray, atol: float = 0.0) -> bool:
    """Combinatorial acyclicity test by depth-first search.

    Treats ``|W[i, j]| > atol`` as edge ``i -> j``.  Independent of the
    trace polynomial; used as the oracle for ``is_acyclic_numeric``.
    """
    W = np.asarray(W)
    n = W.shape[0]
    adj = [np.nonzero(np.abs(W[i]) > atol)[0] for i in range(n)]
    state = np.zeros(n, dtype=np.int8)  # 0 unseen, 1 on stack, 2 done
    for root in range(n):
        if state[root]:
            continue
        stack = [(root, iter(adj[root]))]
        state[root] = 1
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if state[nxt] == 1:
                    return False
                if state[nxt] == 0:
                    state[nxt] = 1
                    stack.append((nxt, iter(adj[nxt])))
                    advanced = True
                    break
            if not advanced:
                state[node] = 2
                stack.pop()
    return True


def is_acyclic_numeric(W: np.ndarray, p: PenaltyParams, tol: float = 1e-8) -> bool:
    """Acyclicity via the trace polynomial: residual ``<= tol``.

    For signed matrices pass entrywise absolute values.  Faint long cycles
    can fall below ``tol`` when ``alpha`` is small; callers that need a
    hard guarantee should cross-check with :func:`is_acyclic_exact`.
    """
    return penalty_residual(W, p) <= tol


# -- split (signed) lift ----------------------------------------------------
#
# All split operations compose the positive-case function with the block
# sum P + N, so both gradient blocks coincide with the positive-case
# gradient evaluated at the sum.

def _check_split(pos: np.ndarray, neg: np.ndarray, p: PenaltyParams) -> tuple[np.ndarray, np.ndarray]:
    pos = _check_matrix(pos, p, "pos")
    neg = _check_matrix(neg, p, "neg")
    return pos, neg


def split_penalty_value(pos: np.ndarray, neg: np.ndarray, p: PenaltyParams) -> float:
    pos, neg = _check_split(pos, neg, p)
    return penalty_value(pos + neg, p)


def split_penalty_gradient(pos: np.ndarray, neg: np.ndarray, p: PenaltyParams) -> tuple[np.ndarray, np.ndarray]:
    pos, neg = _check_split(pos, neg, p)
    g = penalty_gradient(pos + neg, p)
    return g, g.copy()


def split_kernel_value(pos: np.ndarray, neg: np.ndarray, p: PenaltyParams) -> float:
    pos, neg = _check_split(pos, neg, p)
    return kernel_value(pos + neg, p)


def split_kernel_gradient(
    pos: np.ndarray, neg: np.ndarray, p: PenaltyParams, allow_zero: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    pos, neg = _check_split(pos, neg, p)
    g = kernel_gradient(pos + neg, p, allow_zero=allow_zero)
    return g, g.copy()


def split_bregman_divergence(
    A: tuple[np.ndarray, np.ndarray], B: tuple[np.ndarray, np.ndarray], p: PenaltyParams
) -> float:
    """Bregman divergence of the lifted kernel between split pairs."""
    Ap, An = _check_split(A[0], A[1], p)
    Bp, Bn = _check_split(B[0], B[1], p)
    gB = kernel_gradient(Bp + Bn, p, allow_zero=True)
    diff = float(np.vdot(gB, (Ap - Bp) + (An - Bn)))
    return split_kernel_value(Ap, An, p) - split_kernel_value(Bp, Bn, p) - diff


# -- numerical relative-smoothness probe ------------------------------------

@dataclass(frozen=True)
class SmoothnessReport:
    """Outcome of a randomized relative-smoothness probe."""

    trials: int
    violations: int
    max_ratio: float  # largest |q_penalty| / q_kernel observed
    passed: bool


def _fd_quadratic_form(grad_fn, W: np.ndarray, H: np.ndarray, eps: float) -> float:
    """<grad(W + eps H) - grad(W - eps H), H> / (2 eps), a central-difference
    estimate of the Hessian quadratic form along H."""
    gp = grad_fn(W + eps * H)
    gm = grad_fn(W - eps * H)
    return float(np.vdot(gp - gm, H)) / (2.0 * eps)


def relative_smoothness_check(
    p: PenaltyParams,
    trials: int = 1000,
    seed: int = 0,
    mode: str = "positive",
    rel_slack: float = 1e-6,
    abs_slack: float = 1e-8,
    fd_step: float = 1e-4,
) -> SmoothnessReport:
    """Probe ``|d2 penalty[H, H]| <= d2 kernel[H, H]`` on the smooth region.

    Samples nonnegative ``W`` with ``||W||_F`` at or above the region floor
    and unit-norm directions ``H`` of arbitrary sign, estimates both
    quadratic forms by central differences of the analytic gradients, and
    counts violations beyond the stated slack.  In ``mode="split"`` the
    lifted pair versions are probed instead, with the block sum placed on
    the region.

    Returns a :class:`SmoothnessReport`; ``passed`` means zero violations.
    """
    if mode not in ("positive", "split"):
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed)
    floor = p.frobenius_floor()
    violations = 0
    max_ratio = 0.0

    for _ in range(trials):
        W = rng.uniform(0.0, 1.0, size=(p.n, p.n))
        np.fill_diagonal(W, 0.0)
        target = floor * (1.0 + rng.uniform(0.0, 1.0))
        W *= target / max(float(np.linalg.norm(W)), EPS_NORM)

        H = rng.standard_normal((p.n, p.n))
        np.fill_diagonal(H, 0.0)
        H /= max(float(np.linalg.norm(H)), EPS_NORM)

        if mode == "positive":
            q_pen = _fd_quadratic_form(lambda M: penalty_gradient(M, p), W, H, fd_step)
            q_ker = _fd_quadratic_form(
                lambda M: kernel_gradient(M, p, allow_zero=True), W, H, fd_step
            )
        else:
            split = rng.uniform(0.0, 1.0, size=(p.n, p.n))
            pos, neg = W * split, W * (1.0 - split)
            Hn = rng.standard_normal((p.n, p.n))
            np.fill_diagonal(Hn, 0.0)
            scale = max(float(np.sqrt(np.linalg.norm(H) ** 2 + np.linalg.norm(Hn) ** 2)), EPS_NORM)
            Hp, Hn = H / scale, Hn / scale

            def grad_pen(Z):
                g, _ = split_penalty_gradient(Z[0], Z[1], p)
                return np.stack([g, g])

            def grad_ker(Z):
                g, _ = split_kernel_gradient(Z[0], Z[1], p, allow_zero=True)
                return np.stack([g, g])

            Z = np.stack([pos, neg])
            D = np.stack([Hp, Hn])
            q_pen = _fd_quadratic_form(grad_pen, Z, D, fd_step)
            q_ker = _fd_quadratic_form(grad_ker, Z, D, fd_step)

        if abs(q_pen) > q_ker * (1.0 + rel_slack) + abs_slack:
            violations += 1
        if q_ker > abs_slack:
            max_ratio = max(max_ratio, abs(q_pen) / q_ker)

    return SmoothnessReport(trials=trials, violations=violations,
                            max_ratio=max_ratio, passed=violations == 0)
