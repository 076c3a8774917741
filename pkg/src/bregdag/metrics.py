"""Directed-graph recovery metrics.

Predicted edges are compared to the ground truth one ordered pair at a
time: a predicted edge is a true positive when the truth has it with the
same orientation, reversed when only the opposite orientation exists,
and extra when the truth has neither direction.  A truth edge with
neither direction predicted is missing.  The structural Hamming distance
is ``missing + extra + reversed``; false-discovery rate and true-positive
rate are both normalized by the number of true edges.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class EvalReport:
    """Edge counts and summary rates; rates are None when the truth is empty."""

    tp: int
    missing: int
    extra: int
    reversed: int
    shd: int
    fdr: float | None
    tpr: float | None
    p_true: int

    def to_record(self) -> dict:
        """Flat key-value form for JSON objects or CSV rows."""
        return asdict(self)


def _edge_support(A: np.ndarray, name: str) -> np.ndarray:
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {A.shape}")
    B = A != 0
    np.fill_diagonal(B, False)
    return B


def evaluate(pred: np.ndarray, truth: np.ndarray) -> EvalReport:
    """Score a predicted adjacency structure against the ground truth.

    Both arguments may be binary or weighted; any nonzero off-diagonal
    entry counts as an edge.  Pairs predicted in both directions are
    scored edge by edge (each direction classified on its own).
    """
    P = _edge_support(pred, "pred")
    T = _edge_support(truth, "truth")
    if P.shape != T.shape:
        raise ValueError(f"shape mismatch: pred {P.shape} vs truth {T.shape}")

    tp = int(np.sum(P & T))
    rev = int(np.sum(P & T.T & ~T))
    extra = int(np.sum(P & ~T & ~T.T))
    missing = int(np.sum(T & ~P & ~P.T))
    p_true = int(T.sum())

    shd = missing + extra + rev
    if p_true > 0:
        fdr = (extra + rev) / p_true
        tpr = tp / p_true
    else:
        fdr = None
        tpr = None
    return EvalReport(
        tp=tp,
        missing=missing,
        extra=extra,
        reversed=rev,
        shd=shd,
        fdr=fdr,
        tpr=tpr,
        p_true=p_true,
    )
