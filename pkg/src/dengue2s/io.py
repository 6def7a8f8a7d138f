"""Scenario documents, CSV writers and run manifests.

A scenario is a JSON object::

    {
      "description": "optional free text",
      "params": {"lambda_N": 12.8, ..., "delta": 0.01},      # all ten, per month
      "initial_state": {"S": 9000, ..., "V12": 0},           # optional, all fourteen
      "run_kind": "simulate",
      "run_options": {"t_span": [0, 600], ...}
    }

Unknown keys are rejected at every level.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .model import PARAMETER_NAMES, STATE_NAMES, ParameterSet, State

RUN_KINDS = ("simulate", "settle", "r0", "equilibria", "bifcoeff", "continue", "orbits")

_SOLVER_KEYS = {"rel_tol": "number", "abs_tol": "number", "max_step": "number",
                "dense_output_interval": "number"}
_CONT_KEYS = {"free_param": "string", "range": "pair", "start": "string",
              "initial_step": "number", "min_step": "number", "max_step": "number",
              "max_points": "integer", "event_tol": "number"}

# allowed run_options per run kind, with value types
OPTION_SCHEMA: dict[str, dict[str, str]] = {
    "simulate": {"t_span": "pair", **_SOLVER_KEYS},
    "settle": {"tol": "number", "t_max": "number", "chunk": "number", **_SOLVER_KEYS},
    "r0": {},
    "equilibria": {"tol": "number"},
    "bifcoeff": {"weights": "weights"},
    "continue": dict(_CONT_KEYS),
    "orbits": {**_CONT_KEYS, "intervals": "integer", "degree": "integer",
               "orbit_tol": "number", "max_orbits": "integer"},
}
REQUIRED_OPTIONS = {"simulate": ("t_span",), "continue": ("free_param", "range")}
START_KINDS = ("disease_free", "one_strain_1", "one_strain_2", "two_strain_symmetric")
_TOP_KEYS = ("description", "params", "initial_state", "run_kind", "run_options")
_WEIGHT_KEYS = ("w2", "w3", "v2", "v3")


class ScenarioError(ValueError):
    """Invalid scenario document; ``field`` and ``line`` locate the problem."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        where = []
        if field:
            where.append(f"field '{field}'")
        if line:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


@dataclass(frozen=True)
class Scenario:
    params: ParameterSet
    initial_state: State | None = None
    run_kind: str = "simulate"
    run_options: Mapping[str, Any] = field(default_factory=dict)
    description: str = ""

    def with_overrides(self, overrides: Mapping[str, float]) -> "Scenario":
        """Apply ``name=value`` overrides to parameters or initial-state components."""
        p_upd = {k: float(v) for k, v in overrides.items() if k in PARAMETER_NAMES}
        s_upd = {k: float(v) for k, v in overrides.items() if k in STATE_NAMES}
        unknown = set(overrides) - set(p_upd) - set(s_upd)
        if unknown:
            raise ScenarioError(f"unknown override name(s): {', '.join(sorted(unknown))}",
                                field=sorted(unknown)[0])
        try:
            params = self.params.replace(**p_upd)
        except ValueError as exc:
            raise ScenarioError(str(exc), field=next(iter(p_upd), None)) from exc
        state = self.initial_state
        if s_upd:
            if state is None:
                raise ScenarioError("state override given but the scenario has no initial_state",
                                    field=next(iter(s_upd)))
            state = state._replace(**s_upd)
            _check_state(state)
        return Scenario(params, state, self.run_kind, dict(self.run_options), self.description)

    def for_kind(self, run_kind: str, extra_options: Mapping[str, Any] | None = None) -> "Scenario":
        """Same scenario re-targeted to another run kind.

        Options that do not apply to the new kind are dropped; ``extra_options``
        are validated and merged on top.
        """
        if run_kind not in RUN_KINDS:
            raise ScenarioError(f"unknown run_kind {run_kind!r}", field="run_kind")
        allowed = OPTION_SCHEMA[run_kind]
        opts = {k: v for k, v in self.run_options.items() if k in allowed}
        opts.update(extra_options or {})
        _validate_options(run_kind, opts, None)
        return Scenario(self.params, self.initial_state, run_kind, opts, self.description)

    def to_dict(self) -> dict:
        d = {"params": self.params.as_dict(), "run_kind": self.run_kind,
             "run_options": _plain(self.run_options)}
        if self.initial_state is not None:
            d["initial_state"] = {k: float(v) for k, v in self.initial_state._asdict().items()}
        if self.description:
            d["description"] = self.description
        return d


def _plain(obj):
    if isinstance(obj, Mapping):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _line_of(text: str | None, key: str) -> int | None:
    if not text:
        return None
    idx = text.find(f'"{key}"')
    return text.count("\n", 0, idx) + 1 if idx >= 0 else None


def _number(value, name, text, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError("expected a number", field=name, line=_line_of(text, name.split(".")[-1]))
    if not math.isfinite(value):
        raise ScenarioError("value must be finite", field=name, line=_line_of(text, name.split(".")[-1]))
    if integer and (not float(value).is_integer() or value < 1):
        raise ScenarioError("expected a positive integer", field=name,
                            line=_line_of(text, name.split(".")[-1]))
    return value


def _check_state(state: State):
    for k, v in state._asdict().items():
        if v < 0:
            raise ScenarioError("state components must be nonnegative", field=f"initial_state.{k}")
    if sum(state[:10]) <= 0 or sum(state[10:]) <= 0:
        raise ScenarioError("initial_state needs N > 0 and M > 0", field="initial_state")


def _validate_options(kind: str, opts: Mapping, text: str | None):
    schema = OPTION_SCHEMA[kind]
    for key, value in opts.items():
        name = f"run_options.{key}"
        if key not in schema:
            raise ScenarioError(f"unknown option for run_kind '{kind}'", field=name, line=_line_of(text, key))
        typ = schema[key]
        if typ == "number":
            _number(value, name, text)
            if value <= 0:
                raise ScenarioError("must be positive", field=name, line=_line_of(text, key))
        elif typ == "integer":
            _number(value, name, text, integer=True)
        elif typ == "string":
            if not isinstance(value, str):
                raise ScenarioError("expected a string", field=name, line=_line_of(text, key))
        elif typ == "pair":
            if not isinstance(value, (list, tuple)) or len(value) != 2:
                raise ScenarioError("expected a list of two numbers", field=name, line=_line_of(text, key))
            for v in value:
                _number(v, name, text)
            if not value[0] < value[1]:
                raise ScenarioError("first value must be smaller than the second", field=name,
                                    line=_line_of(text, key))
        elif typ == "weights":
            if not isinstance(value, Mapping):
                raise ScenarioError("expected an object with w2, w3, v2, v3", field=name,
                                    line=_line_of(text, key))
            for wk, wv in value.items():
                if wk not in _WEIGHT_KEYS:
                    raise ScenarioError("unknown weight", field=f"{name}.{wk}", line=_line_of(text, wk))
                if _number(wv, f"{name}.{wk}", text) <= 0:
                    raise ScenarioError("weights must be positive", field=f"{name}.{wk}",
                                        line=_line_of(text, wk))
    for key in REQUIRED_OPTIONS.get(kind, ()):
        if key not in opts:
            raise ScenarioError(f"run_kind '{kind}' requires this option", field=f"run_options.{key}")
    if "free_param" in opts:
        from .bifurcation.continuation import FREE_PARAMETERS
        if opts["free_param"] not in FREE_PARAMETERS:
            raise ScenarioError(f"free_param must be one of {', '.join(FREE_PARAMETERS)}",
                                field="run_options.free_param", line=_line_of(text, "free_param"))
    if "start" in opts and opts["start"] not in START_KINDS:
        raise ScenarioError(f"start must be one of {', '.join(START_KINDS)}",
                            field="run_options.start", line=_line_of(text, "start"))


def scenario_from_dict(doc: Mapping, text: str | None = None) -> Scenario:
    if not isinstance(doc, Mapping):
        raise ScenarioError("scenario must be a JSON object")
    for key in doc:
        if key not in _TOP_KEYS:
            raise ScenarioError("unknown key", field=key, line=_line_of(text, key))

    raw = doc.get("params")
    if not isinstance(raw, Mapping):
        raise ScenarioError("missing or malformed 'params' object", field="params")
    for key in raw:
        if key not in PARAMETER_NAMES:
            raise ScenarioError("unknown parameter", field=f"params.{key}", line=_line_of(text, key))
    values = {}
    for name in PARAMETER_NAMES:
        if name not in raw:
            raise ScenarioError("required parameter missing", field=f"params.{name}")
        values[name] = float(_number(raw[name], f"params.{name}", text))
    try:
        params = ParameterSet(**values)
    except ValueError as exc:
        bad = next((n for n in PARAMETER_NAMES if re.search(rf"\b{n}\b", str(exc))), None)
        raise ScenarioError(str(exc), field=f"params.{bad}" if bad else "params",
                            line=_line_of(text, bad) if bad else None) from exc

    state = None
    if doc.get("initial_state") is not None:
        raw_s = doc["initial_state"]
        if not isinstance(raw_s, Mapping):
            raise ScenarioError("initial_state must be an object", field="initial_state")
        for key in raw_s:
            if key not in STATE_NAMES:
                raise ScenarioError("unknown state component", field=f"initial_state.{key}",
                                    line=_line_of(text, key))
        comps = []
        for name in STATE_NAMES:
            if name not in raw_s:
                raise ScenarioError("state component missing", field=f"initial_state.{name}")
            comps.append(float(_number(raw_s[name], f"initial_state.{name}", text)))
        state = State(*comps)
        _check_state(state)

    kind = doc.get("run_kind", "simulate")
    if kind not in RUN_KINDS:
        raise ScenarioError(f"run_kind must be one of {', '.join(RUN_KINDS)}", field="run_kind",
                            line=_line_of(text, "run_kind"))
    opts = doc.get("run_options", {}) or {}
    if not isinstance(opts, Mapping):
        raise ScenarioError("run_options must be an object", field="run_options")
    opts = _plain(opts)
    _validate_options(kind, opts, text)
    if kind in ("simulate", "settle") and state is None:
        raise ScenarioError(f"run_kind '{kind}' needs an initial_state", field="initial_state")
    desc = doc.get("description", "")
    if not isinstance(desc, str):
        raise ScenarioError("description must be a string", field="description")
    return Scenario(params, state, kind, opts, desc)


def parse_scenario(text: bytes | str) -> Scenario:
    """Parse and validate a scenario document."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ScenarioError(f"scenario is not valid UTF-8: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"JSON syntax error: {exc.msg} at column {exc.colno}", line=exc.lineno) from exc
    return scenario_from_dict(doc, text)


def serialize_scenario(scenario: Scenario) -> str:
    return json.dumps(scenario.to_dict(), indent=2, sort_keys=True) + "\n"


def load_scenario(path) -> Scenario:
    return parse_scenario(Path(path).read_bytes())


def baseline_scenario_text() -> str:
    return resources.files("dengue2s.data").joinpath("baseline.json").read_text(encoding="utf-8")


def baseline_scenario() -> Scenario:
    return parse_scenario(baseline_scenario_text())


def scenario_hash(scenario: Scenario) -> str:
    canon = json.dumps(scenario.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


# -- CSV output -------------------------------------------------------------------------

TRAJECTORY_HEADER = ["t", *STATE_NAMES, "N", "M", "I_tot", "I_sec"]
BRANCH_HEADER = ["param", "I_tot", "I_sec", "stable", "max_real_eig"]
EVENTS_HEADER = ["event_kind", "param_value", "imag_pair"]


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if x is None:
        return ""
    return format(float(x), ".17g")


def write_table(path, header, rows):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])
    return path


def _derived_rows(times, states):
    states = np.asarray(states, dtype=float)
    N = states[:, :10].sum(axis=1)
    M = states[:, 10:].sum(axis=1)
    I_sec = states[:, 7] + states[:, 8]
    I_tot = states[:, 1] + states[:, 2] + I_sec
    for k, t in enumerate(times):
        yield [t, *states[k], N[k], M[k], I_tot[k], I_sec[k]]


def write_trajectory_csv(traj, path) -> Path:
    return write_table(path, TRAJECTORY_HEADER, _derived_rows(traj.times, traj.states))


def events_path_for(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + "_events.csv")


def write_events_csv(events, path, with_branch: bool = False) -> Path:
    header = EVENTS_HEADER + (["branch"] if with_branch else [])
    rows = []
    for item in events:
        label, ev = item if with_branch else (None, item)
        row = [ev.event_kind, ev.param_value, ev.imag_pair]
        rows.append(row + [label] if with_branch else row)
    return write_table(path, header, rows)


def write_branch_csv(branch, events, path):
    """Write the branch table and its sibling ``<stem>_events.csv``; returns both paths."""
    if len(branch.points) == 0:
        raise ValueError("cannot write an empty branch")
    rows = []
    for value, rec in zip(branch.param_values, branch.points):
        s = rec.state
        rows.append([value, s.I_tot, s.I_sec, bool(rec.stable), rec.max_real])
    main = write_table(path, BRANCH_HEADER, rows)
    return main, write_events_csv(events, events_path_for(path))


def write_equilibria_csv(records: Mapping[str, Any], path) -> Path:
    header = ["label", "kind", "stable", "max_real_eig", "residual_norm", *STATE_NAMES, "I_tot", "I_sec"]
    rows = []
    for label, rec in records.items():
        s = rec.state
        rows.append([label, rec.kind, bool(rec.stable), rec.max_real, rec.residual_norm, *s, s.I_tot, s.I_sec])
    return write_table(path, header, rows)


def write_orbit_csv(orbit, path) -> Path:
    header = ["tau", *TRAJECTORY_HEADER]
    rows = ([tau, *row] for tau, row in zip(orbit.mesh, _derived_rows(orbit.times, orbit.states)))
    return write_table(path, header, rows)


ORBIT_FAMILY_HEADER = ["param", "period", "amplitude", "I_tot_min", "I_tot_max", "stable",
                       "trivial_multiplier_error", "max_nontrivial_multiplier", "residual"]


def write_orbit_family_csv(orbits, path) -> Path:
    rows = []
    for o in orbits:
        lo, hi = o.min_max("I_tot")
        rows.append([o.param_value, o.period, o.amplitude, lo, hi, o.stable,
                     abs(o.trivial_multiplier - 1.0), float(np.max(np.abs(o.nontrivial_multipliers))),
                     o.residual])
    return write_table(path, ORBIT_FAMILY_HEADER, rows)


def read_csv(path) -> dict[str, np.ndarray]:
    """Read any of the CSV outputs into a column dictionary.

    Numeric columns become float arrays, ``stable`` becomes a bool array and
    label columns stay as string arrays.
    """
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    out = {}
    for j, name in enumerate(header):
        col = [r[j] for r in body]
        if all(v in ("true", "false") for v in col) and col:
            out[name] = np.array([v == "true" for v in col])
            continue
        try:
            out[name] = np.array([float(v) if v != "" else np.nan for v in col])
        except ValueError:
            out[name] = np.array(col)
    return out


# -- manifests --------------------------------------------------------------------------

@dataclass
class RunManifest:
    scenario_hash: str
    tool_version: str
    timestamp: str
    command: str
    settings: dict
    outputs: list
    overrides: dict = field(default_factory=dict)
    scenario: dict = field(default_factory=dict)

    @classmethod
    def create(cls, scenario: Scenario, command: str, settings: Mapping | None = None,
               overrides: Mapping | None = None) -> "RunManifest":
        from . import __version__
        return cls(scenario_hash=scenario_hash(scenario), tool_version=__version__,
                   timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
                   command=command, settings=_plain(dict(settings or {})), outputs=[],
                   overrides=dict(overrides or {}), scenario=scenario.to_dict())

    def run_directory(self, root) -> Path:
        return Path(root) / f"{self.command}-{self.scenario_hash[:12]}"

    def write(self, directory) -> Path:
        path = Path(directory) / "manifest.json"
        path.write_text(json.dumps(self.__dict__, indent=2, sort_keys=True, default=str) + "\n",
                        encoding="utf-8")
        return path


def read_manifest(path) -> RunManifest:
    return RunManifest(**json.loads(Path(path).read_text(encoding="utf-8")))
