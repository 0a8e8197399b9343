"""Pseudoinverse contract and the two scalar hypothesis inequalities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ConditionReport",
    "comparison_condition",
    "penrose_residuals",
    "pinv",
    "positivity_condition",
]

DEFAULT_RANK_TOL = 1e-12


def pinv(q, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Moore-Penrose pseudoinverse via SVD.

    Singular values below rank_tol times the largest are treated as zero.
    Input must be finite; output satisfies the four Penrose identities to
    within 1e-9 * (1 + ||q||) in Frobenius norm (see penrose_residuals).
    """
    q = np.asarray(q, dtype=float)
    if not np.all(np.isfinite(q)):
        raise ValueError("pinv requires finite entries")
    return np.linalg.pinv(q, rcond=rank_tol)


def penrose_residuals(q, qp) -> dict:
    """Frobenius residuals of the four Penrose identities for (q, qp)."""
    q = np.asarray(q, dtype=float)
    qp = np.asarray(qp, dtype=float)
    qqp = q @ qp
    qpq = qp @ q
    return {
        "reproduce": float(np.linalg.norm(qqp @ q - q)),
        "weak_inverse": float(np.linalg.norm(qpq @ qp - qp)),
        "left_symmetric": float(np.linalg.norm(qqp.T - qqp)),
        "right_symmetric": float(np.linalg.norm(qpq.T - qpq)),
    }


@dataclass(frozen=True)
class ConditionReport:
    """Outcome of a per-time scalar hypothesis inequality.

    margins[k] > 0 means the inequality holds strictly at time k; the
    report carries the left-hand sides so callers can show their work.
    """

    name: str
    passed: bool
    margins: np.ndarray
    lhs: np.ndarray

    def worst(self) -> float:
        return float(self.margins.min()) if self.margins.size else 1.0


def _per_time_state_max(sys, fn):
    out = np.zeros(sys.horizon)
    for k in range(sys.horizon):
        vals = [fn(sys.geometry_for(int(s))) for s in sys.reachable_at[k]]
        out[k] = max(vals) if vals else 0.0
    return out


def positivity_condition(sys, beta_bound: float) -> ConditionReport:
    """Sufficient condition for nonnegative dual weights.

    Per time k over reachable sources: sqrt(2) * l * ||B||_F * ||B+||_F^2
    <= 1, with B the state's bracket matrix, B+ its pseudoinverse and l the
    declared bound on integrand coefficient rows.  Times are 0..T-1: the
    weight recursion only ever evaluates noise at transition sources.
    """
    def lhs(g):
        return float(
            np.sqrt(2.0)
            * beta_bound
            * np.linalg.norm(g.bracket)
            * np.linalg.norm(g.bracket_pinv) ** 2
        )

    vals = _per_time_state_max(sys, lhs)
    margins = 1.0 - vals
    return ConditionReport("positivity", bool(np.all(vals <= 1.0)), margins, vals)


def comparison_condition(sys, omega2: float) -> ConditionReport:
    """Sufficient condition backing the comparison argument.

    Per time k over reachable sources:
    6 * omega2^2 * sqrt(trace(C'C)) * trace(B+' B+) < 1,
    with C the global lattice transition matrix and B+ the per-state bracket
    pseudoinverse.  Strict inequality is required.
    """
    c = sys.transition
    root_trace = float(np.sqrt(np.trace(c.T @ c)))

    def lhs(g):
        return float(
            6.0 * omega2**2 * root_trace * np.trace(g.bracket_pinv.T @ g.bracket_pinv)
        )

    vals = _per_time_state_max(sys, lhs)
    margins = 1.0 - vals
    return ConditionReport("comparison", bool(np.all(vals < 1.0)), margins, vals)
