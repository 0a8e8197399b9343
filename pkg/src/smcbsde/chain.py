"""Finite-state semi-Markov chains observed in discrete time.

A model has states 0..N-1 and a finite horizon T.  Sojourn lengths in state
i follow the law pi[i, m-1] = P(stay exactly m steps), m = 1..T+1, and the
state entered after a sojourn of length m follows jump[i, m-1, :].  Sojourn
mass is allowed to be sub-stochastic: leftover probability means the sojourn
outlasts the horizon and no renormalisation is applied.

Durations are counts starting at 1 ("just arrived"), states are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ChainPath",
    "InvalidModelError",
    "SemiMarkovModel",
    "SimulationError",
    "SojournQuantities",
    "Violation",
    "martingale_increment",
    "simulate",
    "simulate_paths",
    "sojourn_quantities",
    "transition_matrix",
    "validate_model",
]

VALIDATION_TOL = 1e-9
# Survivor mass below this is treated as exhausted (see sojourn_quantities).
_SURVIVOR_SNAP = 1e-12


class InvalidModelError(ValueError):
    """Model data violates a structural constraint needed by an operation."""


class SimulationError(RuntimeError):
    """A simulated path reached a state with no defined continuation."""


@dataclass(frozen=True)
class SemiMarkovModel:
    """Immutable semi-Markov chain model.

    pi   : (N, T+1) sojourn law per state, durations 1..T+1 positionally.
    jump : (N, T+1, N) conditional jump law; jump[i, m-1, j] is the
           probability of landing in j given the sojourn in i lasted m.
    x0   : (N,) initial distribution of the chain state (duration starts at 1).
    """

    n_states: int
    horizon: int
    pi: np.ndarray
    jump: np.ndarray
    x0: np.ndarray

    def __post_init__(self):
        pi = np.ascontiguousarray(np.asarray(self.pi, dtype=float))
        jump = np.ascontiguousarray(np.asarray(self.jump, dtype=float))
        x0 = np.asarray(self.x0, dtype=float)
        n, t = int(self.n_states), int(self.horizon)
        if n < 1 or t < 1:
            raise InvalidModelError("need n_states >= 1 and horizon >= 1")
        if pi.shape != (n, t + 1):
            raise InvalidModelError(f"pi must have shape {(n, t + 1)}, got {pi.shape}")
        if jump.shape != (n, t + 1, n):
            raise InvalidModelError(
                f"jump must have shape {(n, t + 1, n)}, got {jump.shape}"
            )
        if x0.shape != (n,):
            raise InvalidModelError(f"x0 must have shape {(n,)}, got {x0.shape}")
        for arr in (pi, jump, x0):
            arr.flags.writeable = False
        object.__setattr__(self, "n_states", n)
        object.__setattr__(self, "horizon", t)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "jump", jump)
        object.__setattr__(self, "x0", x0)

    @classmethod
    def from_start_state(cls, n_states, horizon, pi, jump, start):
        x0 = np.zeros(n_states)
        x0[start] = 1.0
        return cls(n_states, horizon, pi, jump, x0)

    @property
    def n_durations(self) -> int:
        return self.horizon + 1


@dataclass(frozen=True)
class Violation:
    """One failed validation constraint, as data rather than an exception."""

    field: str
    indices: tuple
    message: str

    def __str__(self):
        where = ",".join(str(i) for i in self.indices)
        return f"{self.field}[{where}]: {self.message}"


@dataclass(frozen=True)
class SojournQuantities:
    """Cumulative, survivor and hazard tables derived from the sojourn law.

    cumulative[i, m-1] = P(sojourn in i <= m)
    survivor[i, m-1]   = P(sojourn in i > m);  survivor at duration 0 is 1.
    hazard[i, m-1]     = P(leave i at duration m | survived m-1 steps),
                         NaN where the duration is not attainable.
    attainable[i, m-1] = True iff state i can be occupied at duration m,
                         i.e. the survivor function at m-1 is positive.
    """

    cumulative: np.ndarray
    survivor: np.ndarray
    hazard: np.ndarray
    attainable: np.ndarray


def validate_model(model: SemiMarkovModel, tol: float = VALIDATION_TOL):
    """Check all structural constraints and return violations as a list.

    Nothing is raised: callers decide what to do with the report.
    """
    out = []
    n, dur = model.n_states, model.n_durations
    if not np.all(np.isfinite(model.pi)):
        out.append(Violation("pi", (), "contains non-finite entries"))
        return out
    if not np.all(np.isfinite(model.jump)):
        out.append(Violation("jump", (), "contains non-finite entries"))
        return out
    for i in range(n):
        for m in range(1, dur + 1):
            p = model.pi[i, m - 1]
            if p < -tol or p > 1 + tol:
                out.append(
                    Violation("pi", (i, m), f"sojourn probability {p} outside [0, 1]")
                )
        total = model.pi[i].sum()
        if total > 1 + tol:
            out.append(
                Violation("pi", (i,), f"sojourn law has total mass {total} > 1")
            )
    for i in range(n):
        for m in range(1, dur + 1):
            row = model.jump[i, m - 1]
            if np.any(row < -tol):
                j = int(np.argmin(row))
                out.append(
                    Violation("jump", (i, m, j), f"negative probability {row[j]}")
                )
            if row[i] > tol:
                out.append(
                    Violation(
                        "jump",
                        (i, m, i),
                        f"self-jump probability {row[i]} must be zero",
                    )
                )
            if model.pi[i, m - 1] > tol and abs(row.sum() - 1.0) > tol:
                out.append(
                    Violation(
                        "jump",
                        (i, m),
                        f"jump row sums to {row.sum()}, must be 1 where the "
                        "sojourn law puts mass",
                    )
                )
    if np.any(model.x0 < -tol):
        out.append(Violation("x0", (int(np.argmin(model.x0)),), "negative mass"))
    if abs(model.x0.sum() - 1.0) > tol:
        out.append(Violation("x0", (), f"mass {model.x0.sum()} does not sum to 1"))
    return out


def sojourn_quantities(
    model: SemiMarkovModel, tol: float = VALIDATION_TOL
) -> SojournQuantities:
    """Build the cumulative/survivor/hazard tables for every state.

    Raises InvalidModelError when some pi[i, m] exceeds the survivor mass
    available at duration m (the hazard would leave [0, 1]).
    """
    cumulative = np.cumsum(model.pi, axis=1)
    survivor = 1.0 - cumulative
    # Cumulative sums of an exhausted law land within roundoff of 1; snap
    # that noise to an exact zero so certain departures come out as hazard
    # exactly 1 (otherwise a 1e-16 stay probability leaks into the lattice
    # and fabricates unreachable states).
    survivor[np.abs(survivor) <= _SURVIVOR_SNAP] = 0.0
    np.clip(survivor, 0.0, None, out=survivor)
    # survivor at duration m-1, i.e. mass still present when duration m starts
    prev = np.concatenate(
        [np.ones((model.n_states, 1)), survivor[:, :-1]], axis=1
    )
    attainable = prev > 0.0
    bad = model.pi > prev + tol
    if np.any(bad):
        i, m = np.argwhere(bad)[0]
        raise InvalidModelError(
            f"pi[{i},{m + 1}] = {model.pi[i, m]} exceeds the survivor mass "
            f"{prev[i, m]} remaining at that duration"
        )
    hazard = np.full_like(model.pi, np.nan)
    np.divide(model.pi, prev, out=hazard, where=attainable)
    np.clip(hazard, 0.0, 1.0, out=hazard)
    hazard[attainable & (survivor == 0.0)] = 1.0
    hazard.flags.writeable = False
    cumulative.flags.writeable = False
    survivor.flags.writeable = False
    attainable.flags.writeable = False
    return SojournQuantities(cumulative, survivor, hazard, attainable)


def transition_matrix(
    model: SemiMarkovModel, duration: int, sq: SojournQuantities | None = None
) -> np.ndarray:
    """One-step chain transition matrix given the current sojourn duration.

    Column i holds the law of the next chain state for a chain that has sat
    in i for `duration` steps: mass 1 - hazard stays put, the rest spreads
    over the jump row.  Columns of states that cannot attain `duration` are
    zero; the remaining columns sum to one.
    """
    if not 1 <= duration <= model.n_durations:
        raise ValueError(
            f"duration {duration} outside 1..{model.n_durations}"
        )
    if sq is None:
        sq = sojourn_quantities(model)
    ok = sq.attainable[:, duration - 1]
    if not np.any(ok):
        raise InvalidModelError(f"no state can attain duration {duration}")
    n = model.n_states
    a = np.zeros((n, n))
    for i in range(n):
        if not ok[i]:
            continue
        h = sq.hazard[i, duration - 1]
        a[:, i] = model.jump[i, duration - 1] * h
        a[i, i] = 1.0 - h
    return a


@dataclass(frozen=True)
class ChainPath:
    """One simulated trajectory over times 0..horizon.

    states[k]    : chain state at time k
    durations[k] : steps spent in the current state including time k
                   (resets to 1 on arrival; durations[0] = 1)
    jump_times   : times of state changes, with the start time 0 included
    """

    states: np.ndarray
    durations: np.ndarray
    jump_times: np.ndarray = field(repr=False)


def _outcome_cumulative(model, sq):
    """Per (state, duration) cumulative outcome law, jumps first then stay.

    Outcome order is jump target 0..N-1 (self entry has mass zero) followed
    by "stay"; simulation inverts this CDF so the order is part of the
    reproducibility contract.
    """
    n, dur = model.n_states, model.n_durations
    probs = np.zeros((n, dur, n + 1))
    hz = np.where(sq.attainable, sq.hazard, 0.0)
    probs[:, :, :n] = model.jump * hz[:, :, None]
    probs[:, :, n] = np.where(sq.attainable, 1.0 - hz, 0.0)
    return np.cumsum(probs, axis=2)


def simulate(
    model: SemiMarkovModel,
    horizon: int | None = None,
    *,
    seed=None,
    rng: np.random.Generator | None = None,
) -> ChainPath:
    """Simulate one path by inverse-CDF sampling, reproducible from a seed.

    Raises SimulationError when the path enters a state/duration whose
    outcome law has no mass (possible only for invalid models).
    """
    if horizon is None:
        horizon = model.horizon
    if horizon > model.horizon:
        raise ValueError("cannot simulate past the model horizon")
    if rng is None:
        rng = np.random.default_rng(seed)
    sq = sojourn_quantities(model)
    cum = _outcome_cumulative(model, sq)
    n = model.n_states
    states = np.empty(horizon + 1, dtype=np.int64)
    durations = np.empty(horizon + 1, dtype=np.int64)
    states[0] = int(rng.choice(n, p=model.x0))
    durations[0] = 1
    jumps = [0]
    for k in range(horizon):
        i, m = states[k], durations[k]
        row = cum[i, m - 1]
        if row[-1] <= 0.0:
            raise SimulationError(
                f"state {i} at duration {m} has no defined continuation"
            )
        u = rng.random() * row[-1]
        pick = int(np.searchsorted(row, u, side="right"))
        pick = min(pick, n)
        if pick == n:
            states[k + 1] = i
            durations[k + 1] = m + 1
        else:
            states[k + 1] = pick
            durations[k + 1] = 1
            jumps.append(k + 1)
    return ChainPath(states, durations, np.asarray(jumps, dtype=np.int64))


def simulate_paths(
    model: SemiMarkovModel,
    n_paths: int,
    horizon: int | None = None,
    *,
    seed=None,
):
    """Vectorised batch simulation with the same outcome order as simulate().

    Returns (states, durations), each (n_paths, horizon+1).  A fixed seed
    yields bit-identical output on repeated calls.
    """
    if horizon is None:
        horizon = model.horizon
    if horizon > model.horizon:
        raise ValueError("cannot simulate past the model horizon")
    rng = np.random.default_rng(seed)
    sq = sojourn_quantities(model)
    cum = _outcome_cumulative(model, sq)
    n = model.n_states
    states = np.empty((n_paths, horizon + 1), dtype=np.int64)
    durations = np.empty((n_paths, horizon + 1), dtype=np.int64)
    states[:, 0] = rng.choice(n, size=n_paths, p=model.x0)
    durations[:, 0] = 1
    for k in range(horizon):
        rows = cum[states[:, k], durations[:, k] - 1]
        totals = rows[:, -1]
        if np.any(totals <= 0.0):
            bad = int(np.argmax(totals <= 0.0))
            raise SimulationError(
                f"state {states[bad, k]} at duration {durations[bad, k]} has "
                "no defined continuation"
            )
        u = rng.random(n_paths) * totals
        picks = np.minimum((rows <= u[:, None]).sum(axis=1), n)
        stay = picks == n
        states[:, k + 1] = np.where(stay, states[:, k], picks)
        durations[:, k + 1] = np.where(stay, durations[:, k] + 1, 1)
    return states, durations


def martingale_increment(
    model: SemiMarkovModel,
    state: int,
    duration: int,
    next_state: int,
    sq: SojournQuantities | None = None,
) -> np.ndarray:
    """Innovation e_next - A(duration) e_state of one observed transition.

    Conditionally on (state, duration) the increment has mean zero, which is
    what makes the chain indicator process a martingale after compensation.
    """
    a = transition_matrix(model, duration, sq)
    out = -a[:, state]
    out[next_state] += 1.0
    return out
