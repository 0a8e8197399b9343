"""Randomized model/driver/problem generators.

Shared by the test-suite, the convention-selection experiment and the CLI
verification commands.  Everything is driven by a caller-supplied Generator
so runs are reproducible; probabilities are kept away from zero so derived
constants (hazards, projection constants) stay well scaled.
"""

from __future__ import annotations

import numpy as np

from .bsde import LinearDriver, solve_bsde
from .chain import SemiMarkovModel
from .lattice import projection_constants

__all__ = [
    "max_beta_for_comparison",
    "max_beta_for_positivity",
    "random_comparison_pair",
    "random_control_problem",
    "random_linear_instance",
    "random_model",
]


def _random_law(rng, size, min_prob=0.12):
    """Random probability vector with entries either zero or >= min_prob."""
    w = rng.dirichlet(np.ones(size))
    w[w < min_prob] = 0.0
    if w.sum() <= 0.0:
        w[int(rng.integers(size))] = 1.0
    return w / w.sum()


def random_model(
    rng: np.random.Generator,
    n_max: int = 4,
    t_max: int = 10,
    n: int | None = None,
    t: int | None = None,
    sub_stochastic_prob: float = 0.3,
    one_hot_start: bool | None = None,
) -> SemiMarkovModel:
    """Random valid model, occasionally with sojourn mass past the horizon."""
    if n is None:
        n = int(rng.integers(2, n_max + 1))
    if t is None:
        t = int(rng.integers(2, t_max + 1))
    dur = t + 1
    pi = np.zeros((n, dur))
    for i in range(n):
        law = _random_law(rng, dur)
        if rng.random() < sub_stochastic_prob:
            law = law * rng.uniform(0.6, 0.95)
        pi[i] = law
    jump = np.zeros((n, dur, n))
    for i in range(n):
        others = [j for j in range(n) if j != i]
        for m in range(dur):
            law = _random_law(rng, len(others))
            jump[i, m, others] = law
    if one_hot_start is None:
        one_hot_start = bool(rng.random() < 0.5)
    if one_hot_start:
        x0 = np.zeros(n)
        x0[int(rng.integers(n))] = 1.0
    else:
        x0 = _random_law(rng, n, min_prob=0.2)
    return SemiMarkovModel(n, t, pi, jump, x0)


def max_beta_for_positivity(sys) -> float:
    """Largest coefficient-row norm for which the positivity condition holds."""
    worst = 0.0
    for g in sys.geometry.values():
        worst = max(
            worst,
            np.sqrt(2.0)
            * np.linalg.norm(g.bracket)
            * np.linalg.norm(g.bracket_pinv) ** 2,
        )
    return 1.0 / worst if worst > 0.0 else np.inf


def max_beta_for_comparison(sys) -> float:
    """Largest row norm keeping the comparison condition strict."""
    lam = projection_constants(sys).overall
    if lam <= 0.0:
        return np.inf
    c = sys.transition
    root_trace = np.sqrt(np.trace(c.T @ c))
    worst = 0.0
    for g in sys.geometry.values():
        worst = max(
            worst, 6.0 * root_trace * np.trace(g.bracket_pinv.T @ g.bracket_pinv)
        )
    if worst <= 0.0:
        return np.inf
    return 1.0 / (lam * np.sqrt(worst))


def _reachable_mask(sys):
    mask = np.zeros((sys.horizon, sys.dim), dtype=bool)
    for k in range(sys.horizon):
        mask[k, sys.reachable_at[k]] = True
    return mask


def random_linear_instance(
    sys,
    rng: np.random.Generator,
    alpha_scale: float = 0.5,
    beta_fraction: float = 0.9,
    comparison_safe: bool = False,
):
    """Random linear driver and terminal with coefficient bounds that pass
    the positivity condition (and optionally the comparison condition)."""
    t, d = sys.horizon, sys.dim
    l_max = beta_fraction * max_beta_for_positivity(sys)
    if comparison_safe:
        l_max = min(l_max, beta_fraction * max_beta_for_comparison(sys))
    mask = _reachable_mask(sys)
    alpha = np.where(mask, rng.uniform(-alpha_scale, alpha_scale, (t, d)), 0.0)
    g = np.where(mask, rng.uniform(-1.0, 1.0, (t, d)), 0.0)
    beta = np.zeros((t, d, d))
    for k in range(t):
        for s in sys.reachable_at[k]:
            row = rng.standard_normal(d)
            norm = np.linalg.norm(row)
            if norm > 0.0:
                beta[k, s] = row * (rng.uniform(0.3, 1.0) * l_max / norm)
    terminal = np.zeros(d)
    reach_t = sys.reachable_at[t]
    terminal[reach_t] = rng.uniform(-1.0, 1.0, reach_t.size)
    return LinearDriver(alpha, g, beta), terminal


def random_comparison_pair(sys, rng: np.random.Generator):
    """Two (driver, terminal) pairs satisfying the comparison hypotheses.

    Half the draws share drift and integrand coefficients and order the
    running/terminal data pointwise; the other half use genuinely different
    coefficients and enforce the driver ordering along the solved second
    solution by absorbing the coefficient change into the running term.
    Returns (driver1, terminal1, driver2, terminal2).
    """
    driver2, terminal2 = random_linear_instance(sys, rng, comparison_safe=True)
    t, d = sys.horizon, sys.dim
    mask = _reachable_mask(sys)
    reach_t = sys.reachable_at[t]
    terminal1 = terminal2.copy()
    terminal1[reach_t] -= rng.uniform(0.0, 1.0, reach_t.size)
    if rng.random() < 0.5:
        g1 = driver2.g - np.where(mask, rng.uniform(0.0, 1.0, (t, d)), 0.0)
        driver1 = LinearDriver(driver2.alpha, g1, driver2.beta)
        return driver1, terminal1, driver2, terminal2
    fresh, _ = random_linear_instance(sys, rng, comparison_safe=True)
    sol2 = solve_bsde(sys, driver2, terminal2)
    g1 = np.zeros((t, d))
    for k in range(t):
        for s in sys.reachable_at[k]:
            s = int(s)
            y2 = sol2.values[k, s]
            z2 = sol2.integrands[k, s]
            proj = sys.geometry_for(s).projector
            carry = float(
                (driver2.alpha[k, s] - fresh.alpha[k, s]) * y2
                + (driver2.beta[k, s] - fresh.beta[k, s]) @ (proj @ z2)
            )
            g1[k, s] = driver2.g[k, s] + carry - rng.uniform(0.0, 1.0)
    driver1 = LinearDriver(fresh.alpha, g1, fresh.beta)
    return driver1, terminal1, driver2, terminal2


def random_control_problem(
    sys,
    rng: np.random.Generator,
    n_controls: int = 2,
    alpha_scale: float = 0.4,
    beta_fraction: float = 0.85,
    control_dependent_alpha: bool = True,
):
    """Random finite-grid control problem passing both hypothesis gates."""
    from .control import ControlProblem

    t, d = sys.horizon, sys.dim
    u = n_controls
    l_max = beta_fraction * min(
        max_beta_for_positivity(sys), max_beta_for_comparison(sys)
    )
    mask = _reachable_mask(sys)
    alpha = np.where(
        mask[:, :, None], rng.uniform(-alpha_scale, alpha_scale, (t, d, u)), 0.0
    )
    if not control_dependent_alpha:
        alpha = np.repeat(alpha[:, :, :1], u, axis=2)
    g = np.where(mask[:, :, None], rng.uniform(-1.0, 1.0, (t, d, u)), 0.0)
    beta = np.zeros((t, d, u, d))
    for k in range(t):
        for s in sys.reachable_at[k]:
            for j in range(u):
                row = rng.standard_normal(d)
                norm = np.linalg.norm(row)
                if norm > 0.0:
                    beta[k, s, j] = row * (rng.uniform(0.2, 1.0) * l_max / norm)
    terminal = np.zeros(d)
    reach_t = sys.reachable_at[t]
    terminal[reach_t] = rng.uniform(-1.0, 1.0, reach_t.size)
    controls = np.linspace(0.0, 1.0, u).reshape(-1, 1)
    return ControlProblem(
        controls=controls,
        alpha=alpha,
        beta=beta,
        g=g,
        terminal=terminal,
        alpha_bound=alpha_scale,
        beta_bound=l_max,
    )
