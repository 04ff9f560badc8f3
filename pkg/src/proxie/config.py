"""JSON run configuration: schema validation and default materialization."""

from __future__ import annotations

import copy
import json
from dataclasses import fields

import jsonschema

from .dgm import KINDS, dgm_from_dict, dgm_to_dict
from .errors import ConfigurationError, SchemaError

_NUMBER = {"type": "number"}
_SEED = {"type": "integer", "minimum": 0, "maximum": 2**64 - 1}
# Only true standard deviations; sigma_zw is a covariance and may be negative.
_POSITIVE = {"sigma_u", "sigma_z", "sigma_w", "sigma_y"}


def _param_schema(cls) -> dict:
    props = {}
    for f in fields(cls):
        if f.name == "treatment_conditioning":
            props[f.name] = {"enum": ["on_X_only", "on_UZWX"]}
        elif isinstance(f.default, tuple):
            props[f.name] = {"type": "array"}
        elif f.name in _POSITIVE:
            props[f.name] = {"type": "number", "exclusiveMinimum": 0}
        else:
            props[f.name] = _NUMBER
    return {"type": "object", "properties": props, "additionalProperties": False}


def _dgm_schema() -> dict:
    branches = []
    for kind, cls in KINDS.items():
        branches.append({
            "if": {"properties": {"kind": {"const": kind}}},
            "then": {"properties": {"params": _param_schema(cls)}},
        })
    return {
        "type": "object",
        "required": ["kind"],
        "properties": {"kind": {"enum": sorted(KINDS)}, "params": {"type": "object"}},
        "additionalProperties": False,
        "allOf": branches,
    }


_NAMES = {"type": "array", "items": {"type": "string", "minLength": 1}}
_BRIDGE = {
    "type": "object",
    "properties": {
        "basis": _NAMES,
        "link": {"enum": ["identity", "logit", "log"]},
        "covariates": {"type": "boolean"},
        "extra_instruments": _NAMES,
    },
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "properties": {
        "dgm": _dgm_schema(),
        "input": {
            "type": "object",
            "required": ["csv", "roles"],
            "properties": {
                "csv": {"type": "string"},
                "roles": {
                    "type": "object",
                    "required": ["outcome", "treatment", "treatment_proxies", "outcome_proxies"],
                    "properties": {
                        "outcome": {"type": "string"},
                        "treatment": {"type": "string"},
                        "covariates": _NAMES,
                        "treatment_proxies": _NAMES,
                        "outcome_proxies": _NAMES,
                        "hidden": _NAMES,
                    },
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "simulate": {
            "type": "object",
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "seed": _SEED,
                "include_hidden": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "estimators": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["name"],
                "properties": {
                    "name": {"type": "string"},
                    "label": {"type": "string"},
                    "h_spec": _BRIDGE,
                    "q_spec": _BRIDGE,
                    "gmm": {
                        "type": "object",
                        "properties": {
                            "solver": {"enum": ["direct_linear", "gauss_newton"]},
                            "max_iter": {"type": "integer", "minimum": 1},
                            "tol": {"type": "number", "exclusiveMinimum": 0},
                        },
                        "additionalProperties": False,
                    },
                    "bootstrap": {
                        "type": "object",
                        "properties": {
                            "replicates": {"type": "integer", "minimum": 1},
                            "seed": _SEED,
                            "ci_method": {"enum": ["percentile", "normal"]},
                        },
                        "additionalProperties": False,
                    },
                },
                "additionalProperties": False,
            },
        },
        "benchmark": {
            "type": "object",
            "properties": {
                "replications": {"type": "integer", "minimum": 1},
                "n": {"type": "integer", "minimum": 1},
                "seed": _SEED,
                "parallelism": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "diagnostics": {
            "type": "object",
            "properties": {"declared_u_dim": {"type": "integer", "minimum": 1}},
            "additionalProperties": False,
        },
        "output": {
            "type": "object",
            "properties": {"dir": {"type": "string"}},
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

DEFAULT_ESTIMATORS = [
    {"name": "naive_or"},
    {"name": "proximal_g"},
    {"name": "two_stage_linear"},
    {"name": "proximal_ipw"},
    {"name": "proximal_dr"},
]
DEFAULTS = {
    "simulate": {"n": 1000, "seed": 0, "include_hidden": True},
    "benchmark": {"replications": 200, "n": 1000, "seed": 0, "parallelism": 1},
    "diagnostics": {"declared_u_dim": 1},
    "output": {"dir": "."},
}


def json_path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def validate(doc: dict) -> None:
    """Raise :class:`SchemaError` whose ``path`` is the JSON path of the first problem."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        # prefer the deepest error; it names the offending field
        err = max(errors, key=lambda e: len(e.absolute_path))
        path = json_path(err.absolute_path)
        raise SchemaError(f"{path}: {err.message}", path=path)
    has_dgm, has_input = "dgm" in doc, "input" in doc
    if has_dgm == has_input:
        raise SchemaError("$: exactly one of 'dgm' or 'input' must be given", path="$")


def resolve(doc: dict) -> dict:
    """Validate ``doc`` and return a copy with every default filled in."""
    if not isinstance(doc, dict):
        raise SchemaError("$: configuration must be a JSON object", path="$")
    validate(doc)
    out = copy.deepcopy(doc)
    for key, block in DEFAULTS.items():
        merged = dict(block)
        merged.update(out.get(key, {}))
        out[key] = merged
    out.setdefault("estimators", copy.deepcopy(DEFAULT_ESTIMATORS))
    if "dgm" in out:
        try:
            spec = dgm_from_dict(out["dgm"])
        except (ConfigurationError, TypeError, ValueError) as exc:
            raise SchemaError(f"$.dgm.params: {exc}", path="$.dgm.params") from None
        out["dgm"] = dgm_to_dict(spec)
    return out


def load(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON ({exc})", path="$") from None
    return resolve(doc)
