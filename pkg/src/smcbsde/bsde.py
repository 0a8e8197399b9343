"""Backward solver for value/integrand pairs on the lattice.

Per time k and reachable source e, the backward step computes

    mean    = sum_succ c(succ) * values[k+1, succ]
    z_row   = canonical representative with z_row @ increment
              = values[k+1, succ] - mean for every realizable successor
    y       = unique root of  y - f(k, e, y, z_row) = mean

Drivers must depend on the integrand only through its products with the
realizable increments; this is enforced structurally by always handing them
the canonical representative.  Linear drivers admit a closed-form root;
general drivers are solved with a verified bracket (sign change plus a
monotonicity sweep) refined to 1e-12.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "BijectionError",
    "BsdeSolution",
    "ComparisonReport",
    "DegenerateDriverError",
    "GeneralDriver",
    "LinearDriver",
    "check_comparison",
    "solve_bsde",
]

ROOT_TOL = 1e-12
_BRACKET_FACTOR = 1e3
_MONOTONE_SAMPLES = 32


class DegenerateDriverError(ValueError):
    """A linear driver has a unit drift coefficient: the affine solve is
    singular and no solution exists (or infinitely many do)."""


class BijectionError(RuntimeError):
    """The scalar backward map y -> y - f(k, y, z) failed the bracket or
    monotonicity verification at some solve point."""


@dataclass(frozen=True)
class LinearDriver:
    """Driver  f(k, e, y, z) = alpha[k, e] * y + beta[k, e] @ P_e z' + g[k, e]
    with P_e the bracket projector of the source state.

    alpha, g : (T, D); beta : (T, D, D) rows, or None for no integrand term.
    Entries at states never reachable at time k are ignored.
    """

    alpha: np.ndarray
    g: np.ndarray
    beta: np.ndarray | None = None

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        g = np.asarray(self.g, dtype=float)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "g", g)
        if self.beta is not None:
            object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))

    @classmethod
    def constant(cls, horizon, dim, alpha=0.0, g=0.0, beta_row=None):
        a = np.full((horizon, dim), float(alpha))
        gg = np.full((horizon, dim), float(g))
        b = None
        if beta_row is not None:
            b = np.tile(np.asarray(beta_row, dtype=float), (horizon, dim, 1))
        return cls(a, gg, b)

    def beta_row(self, k, state):
        if self.beta is None:
            return None
        return self.beta[k, state]

    def bounds(self, sys):
        """Max |alpha| and max Euclidean beta-row norm over reachable (k, e)."""
        p = 0.0
        l = 0.0
        for k in range(sys.horizon):
            for s in sys.reachable_at[k]:
                p = max(p, abs(float(self.alpha[k, s])))
                if self.beta is not None:
                    l = max(l, float(np.linalg.norm(self.beta[k, s])))
        return p, l


@dataclass(frozen=True)
class GeneralDriver:
    """Arbitrary driver fn(k, state, y, z_row) -> float.

    The solver hands fn the canonical integrand representative, so fn may
    read z_row freely and still respect equivalence.  Optional Lipschitz
    bounds (in y, and in the integrand seminorm) feed the comparison check.
    """

    fn: Callable
    omega1: float | None = None
    omega2: float | None = None


@dataclass(frozen=True)
class BsdeSolution:
    """Backward solution tables.

    values[k, e]      : value at time k in reachable state e (NaN elsewhere)
    integrands[k, e]  : canonical integrand row applied over step k -> k+1
    """

    values: np.ndarray
    integrands: np.ndarray

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]

    def value_at(self, k, state):
        v = self.values[k, state]
        if np.isnan(v):
            raise ValueError(f"state {state} not reachable at time {k}")
        return float(v)


def _terminal_array(sys, terminal):
    term = np.asarray(terminal, dtype=float)
    if term.shape != (sys.dim,):
        raise ValueError(f"terminal must have shape ({sys.dim},)")
    reach = sys.reachable_at[sys.horizon]
    if not np.all(np.isfinite(term[reach])):
        raise ValueError("terminal has non-finite entries on reachable states")
    return term


def _linear_step(sys, driver, k, s, mean, z_row):
    a = float(driver.alpha[k, s])
    if abs(1.0 - a) < 1e-12:
        raise DegenerateDriverError(
            f"alpha[{k}, {s}] = {a}: y - f is not a bijection"
        )
    rhs = mean + float(driver.g[k, s])
    b = driver.beta_row(k, s)
    if b is not None:
        g = sys.geometry_for(s)
        rhs += float(b @ (g.projector @ z_row))
    return rhs / (1.0 - a)


def _verified_root(phi, center, context=""):
    """Root of y -> phi(y) after checking the map brackets and is monotone."""
    radius = (1.0 + abs(center)) * _BRACKET_FACTOR
    lo, hi = center - radius, center + radius
    flo, fhi = phi(lo), phi(hi)
    if not (flo < 0.0 < fhi):
        raise BijectionError(f"no sign change for y - f on [{lo}, {hi}]{context}")
    ys = np.linspace(lo, hi, _MONOTONE_SAMPLES)
    vals = np.array([phi(y) for y in ys])
    if np.any(np.diff(vals) < -ROOT_TOL * (1.0 + np.abs(vals[:-1]))):
        raise BijectionError(f"y - f is not monotone on the bracket{context}")
    root = brentq(phi, lo, hi, xtol=ROOT_TOL, rtol=8.881784197001252e-16)
    return float(root)


def _general_step(sys, driver, k, s, mean, z_row):
    def phi(y):
        return y - driver.fn(k, s, y, z_row) - mean

    return _verified_root(phi, mean, f" at time {k}, state {s}")


def solve_bsde(sys, driver, terminal) -> BsdeSolution:
    """Solve the backward equation over all reachable states.

    Values at states unreachable at a given time are NaN and never read, so
    the solution is invariant to perturbing inputs there.
    """
    term = _terminal_array(sys, terminal)
    t, d = sys.horizon, sys.dim
    values = np.full((t + 1, d), np.nan)
    integrands = np.zeros((t, d, d))
    reach_t = sys.reachable_at[t]
    values[t, reach_t] = term[reach_t]
    linear = isinstance(driver, LinearDriver)
    for k in range(t - 1, -1, -1):
        nxt = values[k + 1]
        for s in sys.reachable_at[k]:
            s = int(s)
            g = sys.geometry_for(s)
            sup = g.support
            mean = float(g.column[sup] @ nxt[sup])
            z_row = np.zeros(d)
            z_row[sup] = nxt[sup] - mean
            if linear:
                y = _linear_step(sys, driver, k, s, mean, z_row)
            else:
                y = _general_step(sys, driver, k, s, mean, z_row)
            values[k, s] = y
            integrands[k, s] = z_row
    return BsdeSolution(values, integrands)


@dataclass(frozen=True)
class ComparisonReport:
    """Hypothesis checks and conclusion for a pair of backward solutions.

    The conclusion (first solution below the second everywhere) is asserted
    only when all hypotheses hold; a violation in that regime indicates a
    solver bug and raises instead of reporting.
    """

    terminal_ordered: bool
    drivers_ordered: bool
    condition_passed: bool
    condition_worst: float
    max_violation: float
    ordered: bool
    driver_gap_min: float = field(default=float("nan"))


def _driver_value(sys, driver, k, s, y, z_row):
    if isinstance(driver, LinearDriver):
        out = float(driver.alpha[k, s]) * y + float(driver.g[k, s])
        b = driver.beta_row(k, s)
        if b is not None:
            g = sys.geometry_for(s)
            out += float(b @ (g.projector @ z_row))
        return out
    return float(driver.fn(k, s, y, z_row))


def _omega2_for(sys, driver):
    if isinstance(driver, GeneralDriver) and driver.omega2 is not None:
        return float(driver.omega2)
    if isinstance(driver, LinearDriver):
        from .lattice import projection_constants

        _, l = driver.bounds(sys)
        return l * projection_constants(sys).overall
    raise ValueError("general drivers need a declared omega2 bound")


def check_comparison(
    sys, driver1, driver2, terminal1, terminal2, omega2: float | None = None,
    tol: float = 1e-10,
) -> ComparisonReport:
    """Verify the comparison hypotheses and the ordering of the solutions.

    1. terminal1 <= terminal2 on reachable terminal states;
    2. driver1 <= driver2 along the solved second solution;
    3. the comparison condition holds for omega2 (derived from the drivers
       when not supplied, applied to both).
    When all three hold, values1 <= values2 + tol must follow; if it does
    not, an AssertionError is raised because the solver itself is wrong.
    """
    from .linalg import comparison_condition

    t1 = _terminal_array(sys, terminal1)
    t2 = _terminal_array(sys, terminal2)
    sol1 = solve_bsde(sys, driver1, t1)
    sol2 = solve_bsde(sys, driver2, t2)
    reach_t = sys.reachable_at[sys.horizon]
    terminal_ordered = bool(np.all(t1[reach_t] <= t2[reach_t] + tol))

    gaps = []
    for k in range(sys.horizon):
        for s in sys.reachable_at[k]:
            s = int(s)
            y2 = sol2.values[k, s]
            z2 = sol2.integrands[k, s]
            gaps.append(
                _driver_value(sys, driver2, k, s, y2, z2)
                - _driver_value(sys, driver1, k, s, y2, z2)
            )
    gap_min = float(min(gaps)) if gaps else 0.0
    drivers_ordered = gap_min >= -tol

    if omega2 is None:
        omega2 = max(_omega2_for(sys, driver1), _omega2_for(sys, driver2))
    cond = comparison_condition(sys, omega2)

    diff = sol1.values - sol2.values
    with np.errstate(invalid="ignore"):
        max_violation = float(np.nanmax(diff)) if np.any(~np.isnan(diff)) else 0.0
    ordered = max_violation <= tol
    hypotheses = terminal_ordered and drivers_ordered and cond.passed
    if hypotheses and not ordered:
        raise AssertionError(
            "comparison hypotheses hold but the solutions are not ordered "
            f"(violation {max_violation}); the backward solver is inconsistent"
        )
    return ComparisonReport(
        terminal_ordered,
        drivers_ordered,
        cond.passed,
        cond.worst(),
        max_violation,
        ordered,
        gap_min,
    )
