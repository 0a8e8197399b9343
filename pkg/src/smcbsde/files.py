"""File formats: model/problem documents and numeric artifacts.

Input documents are JSON with a ``schema_version`` field and a ``kind`` tag.
Arrays are nested lists indexed exactly like the in-memory tables
(states 0-based, durations listed from 1).  Writers emit deterministic bytes
for identical inputs: JSON is dumped with sorted keys and newline-terminated,
CSV numbers use 17 significant digits so values round-trip exactly.

Document kinds
--------------
semi_markov_model : n_states, horizon, pi (N x (T+1)), jump (N x (T+1) x N),
                    x0 (N)
linear_bsde       : alpha (T x D), g (T x D), beta (T x D x D, optional),
                    terminal (D)
control_problem   : controls (U x q), alpha (T x D x U), g (T x D x U),
                    beta (T x D x U x D), terminal (D), alpha_bound,
                    beta_bound
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .bsde import LinearDriver
from .chain import SemiMarkovModel
from .control import ControlProblem

__all__ = [
    "SCHEMA_VERSION",
    "FileFormatError",
    "format_number",
    "load_document",
    "load_control_problem",
    "load_linear_problem",
    "load_model",
    "save_control_problem",
    "save_linear_problem",
    "save_model",
    "write_csv",
    "write_json",
]

SCHEMA_VERSION = 1


class FileFormatError(ValueError):
    """A document is malformed; the message names the file and field."""


def format_number(x) -> str:
    return "%.17g" % float(x)


def write_json(path, payload) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2)
    Path(path).write_text(text + "\n")


def write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(
            ",".join(
                format_number(x) if isinstance(x, float) else str(x) for x in row
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def _require(doc, field, path):
    if field not in doc:
        raise FileFormatError(f"{path}: missing field '{field}'")
    return doc[field]


def load_document(path, expected_kind=None) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileFormatError(f"{path}: file not found")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path}: invalid JSON at line {exc.lineno}, "
                              f"column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise FileFormatError(f"{path}: top level must be an object")
    version = _require(doc, "schema_version", path)
    if version != SCHEMA_VERSION:
        raise FileFormatError(
            f"{path}: schema_version {version} unsupported "
            f"(expected {SCHEMA_VERSION})"
        )
    kind = _require(doc, "kind", path)
    if expected_kind is not None and kind != expected_kind:
        raise FileFormatError(
            f"{path}: kind '{kind}' where '{expected_kind}' was expected"
        )
    return doc


def _array(doc, field, path, shape=None):
    try:
        arr = np.asarray(_require(doc, field, path), dtype=float)
    except (TypeError, ValueError) as exc:
        raise FileFormatError(f"{path}: field '{field}' is not numeric") from exc
    if shape is not None and arr.shape != shape:
        raise FileFormatError(
            f"{path}: field '{field}' has shape {arr.shape}, expected {shape}"
        )
    return arr


def load_model(path) -> SemiMarkovModel:
    doc = load_document(path, "semi_markov_model")
    n = int(_require(doc, "n_states", path))
    t = int(_require(doc, "horizon", path))
    pi = _array(doc, "pi", path, (n, t + 1))
    jump = _array(doc, "jump", path, (n, t + 1, n))
    x0 = _array(doc, "x0", path, (n,))
    try:
        return SemiMarkovModel(n, t, pi, jump, x0)
    except ValueError as exc:
        raise FileFormatError(f"{path}: {exc}") from exc


def save_model(path, model: SemiMarkovModel) -> None:
    write_json(
        path,
        {
            "schema_version": SCHEMA_VERSION,
            "kind": "semi_markov_model",
            "n_states": model.n_states,
            "horizon": model.horizon,
            "pi": model.pi.tolist(),
            "jump": model.jump.tolist(),
            "x0": model.x0.tolist(),
        },
    )


def load_linear_problem(path):
    """Returns (LinearDriver, terminal array)."""
    doc = load_document(path, "linear_bsde")
    alpha = _array(doc, "alpha", path)
    if alpha.ndim != 2:
        raise FileFormatError(f"{path}: alpha must be a (T, D) table")
    t, d = alpha.shape
    g = _array(doc, "g", path, (t, d))
    beta = None
    if doc.get("beta") is not None:
        beta = _array(doc, "beta", path, (t, d, d))
    terminal = _array(doc, "terminal", path, (d,))
    return LinearDriver(alpha, g, beta), terminal


def save_linear_problem(path, driver: LinearDriver, terminal) -> None:
    write_json(
        path,
        {
            "schema_version": SCHEMA_VERSION,
            "kind": "linear_bsde",
            "alpha": driver.alpha.tolist(),
            "g": driver.g.tolist(),
            "beta": None if driver.beta is None else driver.beta.tolist(),
            "terminal": np.asarray(terminal, dtype=float).tolist(),
        },
    )


def load_control_problem(path) -> ControlProblem:
    doc = load_document(path, "control_problem")
    alpha = _array(doc, "alpha", path)
    if alpha.ndim != 3:
        raise FileFormatError(f"{path}: alpha must be a (T, D, U) table")
    t, d, u = alpha.shape
    controls = _array(doc, "controls", path)
    if controls.ndim == 1:
        controls = controls.reshape(-1, 1)
    if controls.shape[0] != u:
        raise FileFormatError(
            f"{path}: {controls.shape[0]} control points but alpha has {u}"
        )
    g = _array(doc, "g", path, (t, d, u))
    beta = _array(doc, "beta", path, (t, d, u, d))
    terminal = _array(doc, "terminal", path, (d,))
    try:
        return ControlProblem(
            controls=controls,
            alpha=alpha,
            beta=beta,
            g=g,
            terminal=terminal,
            alpha_bound=float(_require(doc, "alpha_bound", path)),
            beta_bound=float(_require(doc, "beta_bound", path)),
        )
    except ValueError as exc:
        raise FileFormatError(f"{path}: {exc}") from exc


def save_control_problem(path, problem: ControlProblem) -> None:
    write_json(
        path,
        {
            "schema_version": SCHEMA_VERSION,
            "kind": "control_problem",
            "controls": problem.controls.tolist(),
            "alpha": problem.alpha.tolist(),
            "g": problem.g.tolist(),
            "beta": problem.beta.tolist(),
            "terminal": problem.terminal.tolist(),
            "alpha_bound": problem.alpha_bound,
            "beta_bound": problem.beta_bound,
        },
    )
