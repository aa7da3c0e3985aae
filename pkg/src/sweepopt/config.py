"""Problem configuration: JSON schema validation and construction of the
in-memory problem objects.  Unknown keys are rejected everywhere."""

import json

import numpy as np
from jsonschema import Draft202012Validator

from .costs import RunningCost, TerminalCost
from .crowd import CrowdConfig
from .dynamics import Perturbation, SweepingProblem
from .errors import ConfigError
from .geometry import Polyhedron

_NUM_ARRAY = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_MATRIX = {"type": "array", "items": _NUM_ARRAY}

_CONTROL = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "type": {"enum": ["constant", "affine"]},
        "value": _NUM_ARRAY,
        "c0": _NUM_ARRAY,
        "c1": _NUM_ARRAY,
    },
    "required": ["type"],
}

SWEEPING_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "kind", "n", "d", "T", "x0", "r", "generators",
                 "perturbation", "cost"],
    "properties": {
        "schema_version": {"const": 1},
        "kind": {"const": "sweeping"},
        "n": {"type": "integer", "minimum": 1},
        "d": {"type": "integer", "minimum": 1},
        "T": {"type": "number", "exclusiveMinimum": 0},
        "x0": _NUM_ARRAY,
        "r": {"type": "number", "exclusiveMinimum": 0},
        "tau": {"type": "number", "minimum": 0},
        "generators": _MATRIX,
        "M": {"type": "number", "exclusiveMinimum": 0},
        "perturbation": {
            "type": "object",
            "additionalProperties": False,
            "required": ["type"],
            "properties": {
                "type": {"enum": ["identity", "diag_speeds", "affine"]},
                "speeds": _NUM_ARRAY,
                "A": _MATRIX,
                "B": _MATRIX,
                "c": _NUM_ARRAY,
            },
        },
        "cost": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "terminal": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"weight": {"type": "number"},
                                   "target": _NUM_ARRAY},
                    "required": ["weight"],
                },
                "running": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "w_xdot": {"type": "number"},
                        "w_a": {"type": "number"},
                        "a_ref0": _NUM_ARRAY,
                        "a_ref1": _NUM_ARRAY,
                        "w_udot": {"type": "number"},
                        "w_abs": {"type": "number"},
                        "abs_ref0": _NUM_ARRAY,
                        "abs_ref1": _NUM_ARRAY,
                    },
                },
            },
        },
        "controls": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"u": _CONTROL, "a": _CONTROL},
        },
        "fixed_u": {"type": "boolean"},
        "terminal_on_boundary": {"type": "boolean"},
    },
}

CROWD_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "kind", "n", "R", "T", "speeds", "x0"],
    "properties": {
        "schema_version": {"const": 1},
        "kind": {"const": "crowd"},
        "n": {"type": "integer", "minimum": 1},
        "R": {"type": "number", "exclusiveMinimum": 0},
        "T": {"type": "number", "exclusiveMinimum": 0},
        "speeds": _NUM_ARRAY,
        "x0": _NUM_ARRAY,
        "alpha": {"type": "number"},
    },
}


def load_config(path):
    """Read and validate a problem configuration, raising ConfigError with
    the offending key on any schema violation."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict) or "kind" not in data:
        raise ConfigError("config must be an object with a 'kind' key")
    schema = {"sweeping": SWEEPING_SCHEMA, "crowd": CROWD_SCHEMA}.get(data["kind"])
    if schema is None:
        raise ConfigError(f"unknown kind {data['kind']!r}")
    errors = sorted(Draft202012Validator(schema).iter_errors(data),
                    key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = ".".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"config key {where!r}: {err.message}")
    return data


def control_path(spec, dim, name):
    """Node-samplable control path from its config spec."""
    if spec is None:
        raise ConfigError(f"config is missing the {name!r} control")
    if spec["type"] == "constant":
        if "value" not in spec:
            raise ConfigError(f"control {name!r}: constant control needs 'value'")
        val = np.asarray(spec["value"], dtype=float)
        if val.size != dim:
            raise ConfigError(f"control {name!r}: expected {dim} components")
        return lambda t: val
    c0 = np.asarray(spec.get("c0", np.zeros(dim)), dtype=float)
    c1 = np.asarray(spec.get("c1", np.zeros(dim)), dtype=float)
    if c0.size != dim or c1.size != dim:
        raise ConfigError(f"control {name!r}: expected {dim} components")
    return lambda t: c0 + t * c1


def build_sweeping(data):
    """SweepingProblem plus control paths and solve flags from a validated
    sweeping config."""
    n, d = data["n"], data["d"]
    pert = data["perturbation"]
    kind = pert["type"]
    f = Perturbation(kind, n, d,
                     speeds=pert.get("speeds"),
                     A=pert.get("A"), B=pert.get("B"), c=pert.get("c"))
    cost = data.get("cost", {})
    term = cost.get("terminal", {"weight": 0.0})
    phi = TerminalCost(term.get("weight", 0.0),
                       np.asarray(term.get("target", np.zeros(n)), dtype=float))
    run = cost.get("running", {})
    rc = RunningCost(n=n, d=d,
                     w_xdot=run.get("w_xdot", 0.0), w_a=run.get("w_a", 0.0),
                     a_ref0=run.get("a_ref0"), a_ref1=run.get("a_ref1"),
                     w_udot=run.get("w_udot", 0.0), w_abs=run.get("w_abs", 0.0),
                     abs_ref0=run.get("abs_ref0"), abs_ref1=run.get("abs_ref1"))
    try:
        problem = SweepingProblem(
            n=n, d=d, T=float(data["T"]),
            x0=np.asarray(data["x0"], dtype=float),
            C=Polyhedron(n, np.asarray(data["generators"], dtype=float)),
            r=float(data["r"]), tau=float(data.get("tau", 0.0)),
            f=f, phi=phi, run_cost=rc, M=float(data.get("M", 1.0)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    controls = data.get("controls", {})
    u_path = control_path(controls["u"], n, "u") if "u" in controls else None
    a_path = control_path(controls["a"], d, "a") if "a" in controls else None
    return {
        "problem": problem,
        "u_path": u_path,
        "a_path": a_path,
        "fixed_u": bool(data.get("fixed_u", False)),
        "terminal_on_boundary": bool(data.get("terminal_on_boundary", False)),
    }


def build_crowd(data):
    try:
        return CrowdConfig(n=data["n"], R=float(data["R"]), T=float(data["T"]),
                           speeds=np.asarray(data["speeds"], dtype=float),
                           x0=np.asarray(data["x0"], dtype=float),
                           alpha=data.get("alpha"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
