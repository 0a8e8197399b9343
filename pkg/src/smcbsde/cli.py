"""Command-line front end.

Commands
--------
validate       check a model document and list violations
simulate       draw seeded chain paths to CSV
build-lattice  export the stacked transition matrix and per-state noise
               matrices
solve-bsde     solve a linear backward equation, emit CSV + JSON artifacts
verify-duality cross-check a backward solution against its weighted-
               expectation representation under each convention
solve-control  solve a control problem, with a brute-force oracle residual
               when the policy space is small enough
verify-all     run the bundled desk-scale property suite and print a
               summary table

Exit status: 0 success, 1 validation or hypothesis failure, 2 internal
invariant violation (a residual above tolerance).  Outputs are byte-identical
for identical inputs, seed and package version.  Set SMCBSDE_LOG to a level
name (DEBUG, INFO, ...) for diagnostics on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, files
from .bsde import solve_bsde
from .chain import InvalidModelError, simulate_paths, validate_model
from .control import (
    HypothesisError,
    brute_force_value,
    epsilon_optimal_policy,
    solve_control,
)
from .duality import (
    Convention,
    DEFAULT_CONVENTION,
    SelectionError,
    WeightSde,
    dual_value,
    select_convention,
    weight_bounds,
)
from .lattice import build_lattice, projection_constants
from .linalg import comparison_condition, penrose_residuals, pinv, positivity_condition

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_VIOLATION = 2

_EXHAUSTIVE_PATH_CAP = 20_000

log = logging.getLogger("smcbsde")


def _configure_logging():
    level = os.environ.get("SMCBSDE_LOG")
    if level:
        logging.basicConfig(
            level=getattr(logging, level.upper(), logging.INFO),
            format="%(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
        )


def _metadata(**extra):
    meta = {"package_version": __version__,
            "schema_version": files.SCHEMA_VERSION}
    meta.update(extra)
    return meta


def _nan_to_none(arr):
    return [
        [None if (isinstance(v, float) and math.isnan(v)) else v for v in row]
        for row in np.asarray(arr, dtype=float).tolist()
    ]


def _values_rows(sys, values):
    rows = []
    for k in range(sys.horizon + 1):
        for s in sys.reachable_at[k]:
            state, dur = sys.label(int(s))
            rows.append((k, state, dur, float(values[k, int(s)])))
    return rows


def _matrix_lines(mat):
    return "\n".join(
        ",".join(files.format_number(v) for v in row) for row in np.asarray(mat)
    ) + "\n"


def _path_count(sys):
    total = 1
    for k in range(sys.horizon):
        largest = max(
            sys.geometry_for(int(s)).support.size for s in sys.reachable_at[k]
        )
        total *= max(largest, 1)
        if total > _EXHAUSTIVE_PATH_CAP:
            return total
    return total


def _condition_payload(report):
    return {
        "name": report.name,
        "passed": bool(report.passed),
        "worst_margin": float(report.worst()),
        "lhs_per_time": np.asarray(report.lhs).tolist(),
    }


def _cmd_validate(args):
    model = files.load_model(args.model)
    violations = validate_model(model)
    payload = {
        "metadata": _metadata(),
        "violations": [
            {"field": v.field, "indices": list(v.indices), "message": v.message}
            for v in violations
        ],
    }
    if args.out:
        files.write_json(args.out, payload)
    for v in violations:
        print(str(v))
    if violations:
        return EXIT_INVALID
    print(f"model ok: {model.n_states} states, horizon {model.horizon}")
    return EXIT_OK


def _cmd_simulate(args):
    model = files.load_model(args.model)
    n = args.mc_paths or 1
    states, durations = simulate_paths(model, n, seed=args.seed)
    rows = []
    for p in range(n):
        for k in range(model.horizon + 1):
            rows.append((p, k, int(states[p, k]), int(durations[p, k])))
    files.write_csv(args.out, ("path", "time", "state", "duration"), rows)
    print(f"wrote {n} path(s) of length {model.horizon + 1} to {args.out}")
    return EXIT_OK


def _cmd_build_lattice(args):
    model = files.load_model(args.model)
    sys_ = build_lattice(model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "transition.csv").write_text(_matrix_lines(sys_.transition))
    per_source = {}
    for s in sorted(sys_.sources):
        geo = sys_.geometry_for(int(s))
        (out / f"bracket_state{s}.csv").write_text(_matrix_lines(geo.bracket))
        (out / f"covariance_state{s}.csv").write_text(
            _matrix_lines(geo.covariance)
        )
        per_source[str(s)] = {
            "label": list(sys_.label(int(s))),
            "support": geo.support.tolist(),
            "bracket_psd": bool(geo.bracket_psd),
        }
    files.write_json(
        out / "summary.json",
        {
            "metadata": _metadata(),
            "dim": sys_.dim,
            "n_states": model.n_states,
            "horizon": model.horizon,
            "reachable_at": [r.tolist() for r in sys_.reachable_at],
            "sources": per_source,
        },
    )
    print(f"wrote lattice artifacts for dimension {sys_.dim} to {out}")
    return EXIT_OK


def _resolve_convention(name, sys_, seed):
    if name != "auto":
        return Convention(name), None
    result = select_convention(sys_, seed=seed or 0)
    return result.convention, result


def _cmd_solve_bsde(args):
    model = files.load_model(args.model)
    sys_ = build_lattice(model)
    driver, terminal = files.load_linear_problem(args.problem)
    solution = solve_bsde(sys_, driver, terminal)
    tol = args.tol if args.tol is not None else 1e-9
    _, l_bound = driver.bounds(sys_)
    lam = projection_constants(sys_).overall
    positivity = positivity_condition(sys_, l_bound)
    comparison = comparison_condition(sys_, l_bound * lam)

    convention, selection = _resolve_convention(args.convention, sys_, args.seed)
    residual = None
    check_mode = "skipped"
    n_paths = _path_count(sys_)
    if n_paths <= _EXHAUSTIVE_PATH_CAP or args.mc_paths:
        sde = WeightSde.from_driver(driver, convention)
        mc = None if n_paths <= _EXHAUSTIVE_PATH_CAP else args.mc_paths
        dual = dual_value(
            sys_, sde, driver.g, terminal, mc_paths=mc, seed=args.seed
        )
        reach0 = sys_.reachable_at[0]
        residual = float(
            np.max(np.abs(dual[reach0] - solution.values[0, reach0]))
        )
        check_mode = "exhaustive" if mc is None else f"monte-carlo:{mc}"

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files.write_csv(
        out / "values.csv",
        ("time", "state", "duration", "value"),
        _values_rows(sys_, solution.values),
    )
    payload = {
        "metadata": _metadata(
            convention=convention.value,
            tolerance=tol,
            duality_check=check_mode,
            duality_residual=residual,
        ),
        "hypotheses": {
            "positivity": _condition_payload(positivity),
            "comparison": _condition_payload(comparison),
            "coefficient_bound": l_bound,
            "scale_constant": lam,
        },
        "values": _nan_to_none(solution.values),
        "integrands": [sol.tolist() for sol in solution.integrands],
    }
    if selection is not None:
        payload["convention_selection"] = selection.summary()
    files.write_json(out / "solution.json", payload)
    print(f"solved backward equation; artifacts in {out}")
    if residual is not None:
        print(f"duality residual ({check_mode}): {residual:.3e}")
        if check_mode == "exhaustive" and residual > tol:
            print(f"residual exceeds tolerance {tol}", file=sys.stderr)
            return EXIT_VIOLATION
    return EXIT_OK


def _cmd_verify_duality(args):
    model = files.load_model(args.model)
    sys_ = build_lattice(model)
    driver, terminal = files.load_linear_problem(args.problem)
    solution = solve_bsde(sys_, driver, terminal)
    tol = args.tol if args.tol is not None else 1e-9
    n_paths = _path_count(sys_)
    mc = None if n_paths <= _EXHAUSTIVE_PATH_CAP else (args.mc_paths or 50_000)
    reach0 = sys_.reachable_at[0]

    per_convention = {}
    for conv in Convention:
        sde = WeightSde.from_driver(driver, conv)
        dual = dual_value(
            sys_, sde, driver.g, terminal, mc_paths=mc, seed=args.seed
        )
        per_convention[conv.value] = float(
            np.max(np.abs(dual[reach0] - solution.values[0, reach0]))
        )
    convention, selection = _resolve_convention(args.convention, sys_, args.seed)
    residual = per_convention[convention.value]
    payload = {
        "metadata": _metadata(
            convention=convention.value,
            tolerance=tol,
            check="exhaustive" if mc is None else f"monte-carlo:{mc}",
        ),
        "residual_per_convention": per_convention,
        "selected_residual": residual,
    }
    if selection is not None:
        payload["convention_selection"] = selection.summary()
    if args.out:
        files.write_json(args.out, payload)
    for name, value in sorted(per_convention.items()):
        marker = "*" if name == convention.value else " "
        print(f"{marker} {name:9s} residual {value:.3e}")
    if mc is None and residual > tol:
        print(f"selected residual exceeds tolerance {tol}", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


def _cmd_solve_control(args):
    model = files.load_model(args.model)
    sys_ = build_lattice(model)
    problem = files.load_control_problem(args.problem)
    tol = args.tol if args.tol is not None else 1e-9
    solved = solve_control(
        problem, sys_, override_hypotheses=args.override_hypotheses
    )
    oracle_residual = None
    cells = sum(len(sys_.reachable_at[k]) for k in range(sys_.horizon))
    if problem.n_controls**cells <= 100_000:
        brute = brute_force_value(problem, sys_)
        diff = solved.values - brute.per_time_max
        oracle_residual = float(np.nanmax(np.abs(diff)))
    policy_rows = []
    for k in range(sys_.horizon):
        for s in sys_.reachable_at[k]:
            state, dur = sys_.label(int(s))
            u = solved.policy.control_index(k, int(s))
            policy_rows.append(
                {
                    "time": k,
                    "state": state,
                    "duration": dur,
                    "control": u,
                    "point": problem.controls[u].tolist(),
                }
            )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files.write_csv(
        out / "values.csv",
        ("time", "state", "duration", "value"),
        _values_rows(sys_, solved.values),
    )
    files.write_json(
        out / "control.json",
        {
            "metadata": _metadata(
                convention=DEFAULT_CONVENTION.value, tolerance=tol
            ),
            "hypotheses": {
                "positivity": _condition_payload(solved.positivity),
                "comparison": _condition_payload(solved.comparison),
                "scale_constant": solved.lambda_overall,
            },
            "values": _nan_to_none(solved.values),
            "policy": policy_rows,
            "ties": solved.ties,
            "oracle_residual": oracle_residual,
        },
    )
    print(f"solved control problem; artifacts in {out}")
    if oracle_residual is not None:
        print(f"brute-force oracle residual: {oracle_residual:.3e}")
        if oracle_residual > tol:
            print(f"oracle residual exceeds tolerance {tol}", file=sys.stderr)
            return EXIT_VIOLATION
    return EXIT_OK


def _suite_rows(seed):
    """Desk-scale property suite; returns (name, residual, tol, passed) rows."""
    from .instances import (
        random_comparison_pair,
        random_control_problem,
        random_linear_instance,
        random_model,
    )

    rng = np.random.default_rng(seed)
    rows = []

    def add(name, residual, tol):
        rows.append((name, float(residual), float(tol), bool(residual <= tol)))

    from .chain import martingale_increment, sojourn_quantities, transition_matrix

    worst = 0.0
    for _ in range(8):
        model = random_model(rng, n_max=4, t_max=8)
        sq = sojourn_quantities(model)
        for m in range(1, model.horizon + 2):
            if not np.any(sq.attainable[:, m - 1]):
                continue
            a = transition_matrix(model, m, sq)
            for i in np.flatnonzero(sq.attainable[:, m - 1]):
                i = int(i)
                mean = sum(
                    a[j, i] * martingale_increment(model, i, m, j, sq)
                    for j in range(model.n_states)
                    if a[j, i] > 0.0
                )
                worst = max(worst, float(np.max(np.abs(mean))))
        sys_ = build_lattice(model)
        for k in range(sys_.horizon + 1):
            if len(sys_.reachable_at[k]) > (k + 1) * model.n_states:
                worst = max(worst, 1.0)
    add("martingale-and-lattice", worst, 1e-12)

    worst = 0.0
    for _ in range(60):
        size = int(rng.integers(2, 13))
        rank = int(rng.integers(1, size))
        root = rng.standard_normal((size, rank))
        q = root @ root.T
        qp = pinv(q)
        res = penrose_residuals(q, qp)
        worst = max(worst, max(res.values()) / (1.0 + np.linalg.norm(q)))
    add("penrose-axioms", worst, 1e-9)

    worst = 0.0
    min_weight = 0.0
    selection_done = False
    for _ in range(10):
        model = random_model(rng, n_max=3, t_max=4)
        sys_ = build_lattice(model)
        if not selection_done:
            result = select_convention(sys_, trials=8, seed=int(rng.integers(2**31)))
            selection_done = True
        driver, terminal = random_linear_instance(sys_, rng)
        solution = solve_bsde(sys_, driver, terminal)
        sde = WeightSde.from_driver(driver, DEFAULT_CONVENTION)
        dual = dual_value(sys_, sde, driver.g, terminal)
        reach0 = sys_.reachable_at[0]
        worst = max(
            worst,
            float(np.max(np.abs(dual[reach0] - solution.values[0, reach0]))),
        )
        _, l_bound = driver.bounds(sys_)
        report = weight_bounds(sys_, sde, beta_bound=l_bound)
        min_weight = min(min_weight, report.min_weight)
    add("duality-residual", worst, 1e-9)
    add("weight-positivity", max(0.0, -min_weight), 1e-10)

    worst = 0.0
    for _ in range(8):
        model = random_model(rng, n_max=3, t_max=4)
        sys_ = build_lattice(model)
        d1, t1, d2, t2 = random_comparison_pair(sys_, rng)
        s1 = solve_bsde(sys_, d1, t1)
        s2 = solve_bsde(sys_, d2, t2)
        gap = s1.values - s2.values
        worst = max(worst, float(np.nanmax(gap)))
    add("comparison-ordering", max(0.0, worst), 1e-10)

    worst = 0.0
    eps_ok = True
    for i in range(5):
        model = random_model(rng, n_max=2, t_max=3, n=2)
        sys_ = build_lattice(model)
        problem = random_control_problem(sys_, rng, n_controls=2)
        solved = solve_control(problem, sys_)
        brute = brute_force_value(problem, sys_)
        diff = solved.values - brute.per_time_max
        worst = max(worst, float(np.nanmax(np.abs(diff))))
        if i < 2:
            _, report = epsilon_optimal_policy(problem, sys_, solved, 1e-2)
            eps_ok = eps_ok and report.within_bound
    add("control-vs-brute-force", worst, 1e-9)
    add("epsilon-bound", 0.0 if eps_ok else 1.0, 0.5)

    return rows


def _cmd_verify_all(args):
    rows = _suite_rows(args.seed or 0)
    width = max(len(name) for name, *_ in rows)
    print(f"{'property':{width}s}  {'residual':>12s}  {'tol':>8s}  result")
    all_pass = True
    for name, residual, tol, passed in rows:
        all_pass = all_pass and passed
        print(
            f"{name:{width}s}  {residual:12.3e}  {tol:8.0e}  "
            f"{'pass' if passed else 'FAIL'}"
        )
    if args.out:
        files.write_json(
            args.out,
            {
                "metadata": _metadata(seed=args.seed or 0),
                "properties": [
                    {
                        "name": name,
                        "residual": residual,
                        "tolerance": tol,
                        "passed": passed,
                    }
                    for name, residual, tol, passed in rows
                ],
            },
        )
    return EXIT_OK if all_pass else EXIT_VIOLATION


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smcbsde",
        description="Backward equations and control on semi-Markov lattices.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def cmd(name, func, **help_):
        p = sub.add_parser(name, help=help_.get("help"))
        p.set_defaults(func=func)
        return p

    p = cmd("validate", _cmd_validate, help="check a model document")
    p.add_argument("--model", required=True)
    p.add_argument("--out")

    p = cmd("simulate", _cmd_simulate, help="draw seeded chain paths")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--mc-paths", type=int)

    p = cmd("build-lattice", _cmd_build_lattice,
            help="export transition and noise matrices")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)

    p = cmd("solve-bsde", _cmd_solve_bsde, help="solve a linear problem")
    p.add_argument("--model", required=True)
    p.add_argument("--problem", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--mc-paths", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument(
        "--convention",
        default=DEFAULT_CONVENTION.value,
        choices=["auto"] + [c.value for c in Convention],
    )

    p = cmd("verify-duality", _cmd_verify_duality,
            help="cross-check the weighted representation")
    p.add_argument("--model", required=True)
    p.add_argument("--problem", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--mc-paths", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument(
        "--convention",
        default="auto",
        choices=["auto"] + [c.value for c in Convention],
    )

    p = cmd("solve-control", _cmd_solve_control, help="solve a control problem")
    p.add_argument("--model", required=True)
    p.add_argument("--problem", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tol", type=float)
    p.add_argument("--override-hypotheses", action="store_true")

    p = cmd("verify-all", _cmd_verify_all,
            help="run the desk-scale property suite")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)

    return parser


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except files.FileFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (InvalidModelError, HypothesisError, SelectionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
