"""Run configuration: YAML on disk, validated against a JSON schema.

Every key is optional; missing sections take the defaults below.  Unknown
keys are rejected so that typos fail loudly instead of silently running
with a default.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import yaml

from .dynamics import IntegratorOptions
from .errors import ConfigError
from .wavefield import WavefunctionSpec

__all__ = ["DEFAULTS", "SCHEMA", "RunConfig", "load_config", "DEFAULT_OMEGA"]

# Frequencies used for the three-mode superposition unless a config says otherwise.
DEFAULT_OMEGA = [1.0, math.sqrt(5.0), 1.0]

_INV_SQRT3 = 1.0 / math.sqrt(3.0)

DEFAULTS = {
    "wavefunction": {
        "omega": DEFAULT_OMEGA,
        "modes": [
            {"re": _INV_SQRT3, "im": 0.0, "n1": 0, "n2": 0, "n3": 0},
            {"re": _INV_SQRT3, "im": 0.0, "n1": 1, "n2": 0, "n3": 1},
            {"re": _INV_SQRT3, "im": 0.0, "n1": 0, "n2": 1, "n3": 2},
        ],
    },
    "t": 4.0,
    "box": {"lo": [-4.0, -4.0, -4.0], "hi": [4.0, 4.0, 4.0]},
    "tolerances": {"node_tol": 1e-12, "x_tol_rel": 1e-10},
    "integrator": {"abs_tol": 1e-11, "rel_tol": 1e-11, "max_step": 0.1, "node_guard": 1e-26, "sample_dt": 0.05,
                   "method": "DOP853"},
    "field": {"resolution": 21},
    "nodal": {"resolution": 24, "ds": 0.02, "max_points": 4000},
    "xline": {"mode": "plane"},
    "manifolds": {"count": 10, "eps_rel": 1e-5, "arc_rel": 50.0, "domain_rel": 5.0},
    "trajectory": {"x0": [-0.7, -1.1, 1.3], "t_end": 20.0, "deviation": "variational", "xi0": [1.0, 0.0, 0.0]},
    "chaos": {"line_dt": 0.1, "snapshot_resolution": 16, "snapshot_ds": 0.1, "jump_threshold": None,
              "window": None},
    "hopf": {"t_start": 3.0, "t_end": 5.0, "steps": 21, "point": [0.0, 0.0, 0.0]},
    "output": {"dir": "out"},
    "threads": 1,
}

_num = {"type": "number"}
_vec3 = {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}
_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "additionalProperties": False, "required": list(required)}


SCHEMA = _obj({
    "wavefunction": _obj({
        "omega": {"type": "array", "items": _pos, "minItems": 3, "maxItems": 3},
        "modes": {"type": "array", "minItems": 1, "items": _obj({
            "re": _num, "im": _num,
            "n1": {"type": "integer", "minimum": 0}, "n2": {"type": "integer", "minimum": 0},
            "n3": {"type": "integer", "minimum": 0},
        }, required=("re", "im", "n1", "n2", "n3"))},
    }),
    "t": _num,
    "box": _obj({"lo": _vec3, "hi": _vec3}),
    "tolerances": _obj({"node_tol": _pos, "x_tol_rel": _pos}),
    "integrator": _obj({"abs_tol": _pos, "rel_tol": _pos, "max_step": _pos, "node_guard": _pos,
                        "sample_dt": _pos, "method": {"enum": ["DOP853", "RK45"]}}),
    "field": _obj({"resolution": {"type": "integer", "minimum": 2}}),
    "nodal": _obj({"resolution": {"type": "integer", "minimum": 2}, "ds": _pos, "max_points": _posint}),
    "xline": _obj({"mode": {"enum": ["plane", "full"]}}),
    "manifolds": _obj({"count": _posint, "eps_rel": _pos, "arc_rel": _pos, "domain_rel": _pos}),
    "trajectory": _obj({"x0": _vec3, "t_end": _num, "deviation": {"enum": ["variational", "shadow", "none"]},
                        "xi0": _vec3}),
    "chaos": _obj({"line_dt": _pos, "snapshot_resolution": {"type": "integer", "minimum": 2}, "snapshot_ds": _pos,
                   "jump_threshold": {"type": ["number", "null"]}, "window": {"type": ["number", "null"]}}),
    "hopf": _obj({"t_start": _num, "t_end": _num, "steps": {"type": "integer", "minimum": 2}, "point": _vec3}),
    "output": _obj({"dir": {"type": "string"}}),
    "threads": _posint,
})


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class RunConfig:
    data: dict

    @classmethod
    def from_dict(cls, raw: dict | None) -> "RunConfig":
        raw = raw or {}
        try:
            jsonschema.validate(raw, SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config error at {where}: {exc.message}") from None
        data = _merge(DEFAULTS, raw)
        lo, hi = data["box"]["lo"], data["box"]["hi"]
        if any(a >= b for a, b in zip(lo, hi)):
            raise ConfigError("box: every lo must be below hi")
        cfg = cls(data)
        cfg.spec()  # fail early on inconsistent modes
        return cfg

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def dump(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True)

    def digest(self) -> str:
        canon = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def override(self, **changes) -> "RunConfig":
        """Copy with dotted-path overrides, e.g. ``override(**{"trajectory.x0": [0, 0, 1]})``."""
        data = copy.deepcopy(self.data)
        for path, value in changes.items():
            node = data
            keys = path.split(".")
            for k in keys[:-1]:
                node = node[k]
            node[keys[-1]] = value
        return RunConfig.from_dict(data)

    # typed views
    def __getitem__(self, key):
        return self.data[key]

    def spec(self) -> WavefunctionSpec:
        wf = self.data["wavefunction"]
        modes = [(complex(m["re"], m["im"]), (m["n1"], m["n2"], m["n3"])) for m in wf["modes"]]
        try:
            return WavefunctionSpec.from_modes(modes, tuple(wf["omega"]))
        except ValueError as exc:
            raise ConfigError(f"wavefunction: {exc}") from None

    def box(self):
        return tuple(self.data["box"]["lo"]), tuple(self.data["box"]["hi"])

    def integrator(self) -> IntegratorOptions:
        return IntegratorOptions(**self.data["integrator"])


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig.from_dict({})
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError("config must be a mapping at top level")
    return RunConfig.from_dict(raw)
