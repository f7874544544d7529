"""Scenario files: a single JSON document describing truncation, grid, scheme and data.

Example::

    {
      "name": "reference",
      "truncation": {"m": 2, "n": 3, "shape": "total"},
      "grid": {"J": 50, "boundary": "dirichlet"},
      "time": {"scheme": "crank_nicolson", "dt": 0.005, "T": 0.5},
      "potential": {"terms": [{"index": [0, 0], "generator": {"kind": "constant", "c": 1.0}}]},
      "force": {"terms": []},
      "initial": {"terms": [{"index": [0, 0], "generator": {"kind": "sine", "k": 1}}]},
      "seed": 7
    }

Field specs list explicit ``terms`` per multi-index and/or a ``decay`` rule
that fills every other admitted index with amplitude
``a * r^|gamma| * (2N)^{-rho gamma}``.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import jsonschema
import numpy as np

from .chaos import ChaosField, Grid
from .multiindex import MultiIndex, TruncationSpec, enumerate_indices, log_weight_2N, ZERO
from .pde import OperatorSpec
from .propagator import ScenarioData, make_scenario

log = logging.getLogger(__name__)

FIELD_IDS = {"potential": 0, "force": 1, "initial": 2}

_GENERATOR = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["constant", "sine", "bump", "values", "random_sine"]},
        "c": {"type": "number"},
        "k": {"type": "integer", "minimum": 1},
        "center": {"type": "number"},
        "width": {"type": "number", "exclusiveMinimum": 0},
        "values": {"type": "array", "items": {"type": "number"}},
        "modes": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}
_TIME = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["constant", "linear", "exp", "cos"]},
        "rate": {"type": "number"},
        "omega": {"type": "number"},
        "slope": {"type": "number"},
    },
    "additionalProperties": False,
}
_FIELD = {
    "type": "object",
    "properties": {
        "terms": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["index", "generator"],
                "properties": {
                    "index": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                    "generator": _GENERATOR,
                    "amplitude": {"type": "number"},
                    "time": _TIME,
                },
                "additionalProperties": False,
            },
        },
        "decay": {
            "type": "object",
            "required": ["generator"],
            "properties": {
                "a": {"type": "number"},
                "r": {"type": "number"},
                "rho": {"type": "number"},
                "generator": _GENERATOR,
                "time": _TIME,
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}
SCHEMA = {
    "type": "object",
    "required": ["name", "truncation", "grid", "time", "potential", "force", "initial"],
    "properties": {
        "name": {"type": "string"},
        "truncation": {
            "type": "object",
            "required": ["m", "n"],
            "properties": {
                "m": {"type": "integer", "minimum": 1},
                "n": {"type": "integer", "minimum": 0},
                "shape": {"enum": ["total", "box"]},
            },
            "additionalProperties": False,
        },
        "grid": {
            "type": "object",
            "required": ["J"],
            "properties": {
                "J": {"type": "integer", "minimum": 3},
                "boundary": {"enum": ["dirichlet", "periodic"]},
            },
            "additionalProperties": False,
        },
        "time": {
            "type": "object",
            "required": ["dt", "T"],
            "properties": {
                "scheme": {"enum": ["crank_nicolson", "backward_euler"]},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "T": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "envelope": {
            "type": "object",
            "properties": {"M": {"type": "number", "minimum": 1}, "w": {"type": "number"}},
            "additionalProperties": False,
        },
        "potential": _FIELD,
        "force": _FIELD,
        "initial": _FIELD,
        "seed": {"type": "integer", "minimum": 0},
        "output": {"type": "string"},
        "checks": {"type": "object"},
    },
    "additionalProperties": False,
}


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    name: str
    doc: dict
    data: ScenarioData
    seed: int
    output: Optional[str]
    checks: dict = field(default_factory=dict)


def _line_of(text: str, path) -> Optional[int]:
    """Best-effort line number of the JSON node at ``path`` (keys and list positions)."""
    pos = 0
    for part in path:
        if isinstance(part, str):
            hit = text.find(json.dumps(part), pos)
            if hit < 0:
                break
            pos = hit
    return text.count("\n", 0, pos) + 1 if path else 1


def parse_scenario_text(text: str, seed: Optional[int] = None) -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"line {exc.lineno}, column {exc.colno}: invalid JSON: {exc.msg}") from exc
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ScenarioError(f"line {_line_of(text, list(err.absolute_path))}: at {where}: {err.message}")
    try:
        return build_scenario(doc, seed)
    except ScenarioError:
        raise
    except (ValueError, KeyError) as exc:
        raise ScenarioError(str(exc)) from exc


def load_scenario(path, seed: Optional[int] = None) -> Scenario:
    with open(path) as fh:
        text = fh.read()
    return parse_scenario_text(text, seed)


def _spatial(gen: dict, grid: Grid, rng_key: tuple) -> np.ndarray:
    x = grid.x
    kind = gen["kind"]
    periodic = grid.boundary == "periodic"
    if kind == "constant":
        v = np.full_like(x, gen.get("c", 1.0))
    elif kind == "sine":
        k = gen.get("k", 1)
        v = np.sin((2 if periodic else 1) * k * np.pi * x)
    elif kind == "bump":
        v = np.exp(-0.5 * ((x - gen.get("center", 0.5)) / gen.get("width", 0.1)) ** 2)
    elif kind == "values":
        v = np.asarray(gen["values"], dtype=float)
        if v.shape != x.shape:
            raise ScenarioError(f"'values' generator needs {x.size} entries, got {v.size}")
    elif kind == "random_sine":
        rng = np.random.default_rng(np.random.SeedSequence(list(rng_key)))
        modes = gen.get("modes", 4)
        c = rng.standard_normal(modes)
        v = np.zeros_like(x)
        for j in range(modes):
            if periodic:
                v += c[j] * np.sin(2 * (j + 1) * np.pi * x + j) / (j + 1)
            else:
                v += c[j] * np.sin((j + 1) * np.pi * x) / (j + 1)
    else:  # schema-guarded
        raise ScenarioError(f"unknown generator {kind!r}")
    return v


def _profile(spec: Optional[dict], t: np.ndarray) -> Optional[np.ndarray]:
    if spec is None or spec["kind"] == "constant":
        return None
    kind = spec["kind"]
    if kind == "linear":
        return 1.0 + spec.get("slope", 1.0) * t
    if kind == "exp":
        return np.exp(spec.get("rate", -1.0) * t)
    return np.cos(spec.get("omega", 1.0) * t)


def build_field(spec: dict, name: str, truncation: TruncationSpec, grid: Grid, op: OperatorSpec,
                seed: int, warnings: Optional[list] = None) -> ChaosField:
    m = truncation.m
    raw: dict[MultiIndex, tuple[np.ndarray, Optional[np.ndarray]]] = {}
    fid = FIELD_IDS[name]
    for i, term in enumerate(spec.get("terms", [])):
        dense = term["index"]
        if len(dense) > m and any(dense[m:]):
            raise ScenarioError(f"{name}/terms/{i}/index {dense} uses coordinates beyond m={m}")
        gamma = MultiIndex.from_dense(dense)
        if not truncation.admits(gamma):
            raise ScenarioError(f"{name}/terms/{i}/index {dense} is not admitted by the truncation")
        if gamma in raw:
            raise ScenarioError(f"{name}/terms/{i}/index {dense} is listed twice")
        v = term.get("amplitude", 1.0) * _spatial(term["generator"], grid, (seed, fid, *gamma.dense(m)))
        raw[gamma] = (v, _profile(term.get("time"), op.times))
    decay = spec.get("decay")
    if decay is not None:
        a, r, rho = decay.get("a", 1.0), decay.get("r", 1.0), decay.get("rho", 0.0)
        for gamma in enumerate_indices(truncation):
            if gamma in raw:
                continue
            amp = a * r ** gamma.length * math.exp(-rho * log_weight_2N(gamma))
            v = amp * _spatial(decay["generator"], grid, (seed, fid, *gamma.dense(m)))
            raw[gamma] = (v, _profile(decay.get("time"), op.times))
    for v, _ in raw.values():
        if grid.boundary == "dirichlet":
            v[0] = v[-1] = 0.0
        else:
            v[-1] = v[0]
    if name == "potential":
        if any(p is not None for _, p in raw.values()):
            raise ScenarioError("potential must be stationary (no time profile)")
        q0_inf = float(np.max(np.abs(raw[ZERO][0]))) if ZERO in raw else 0.0
        for gamma, (v, _) in raw.items():
            if not gamma.is_zero() and np.max(np.abs(v)) > q0_inf:
                msg = f"potential coefficient {gamma} clipped to ||q_0||_inf = {q0_inf:.6g}"
                log.warning(msg)
                if warnings is not None:
                    warnings.append(msg)
                np.clip(v, -q0_inf, q0_inf, out=v)
    if name == "initial" and any(p is not None for _, p in raw.values()):
        raise ScenarioError("initial data must be stationary (no time profile)")
    if any(p is not None for _, p in raw.values()):
        coeffs = {g: (np.outer(p, v) if p is not None else np.tile(v, (op.steps + 1, 1)))
                  for g, (v, p) in raw.items()}
        return ChaosField(truncation, grid, coeffs, op.dt)
    return ChaosField(truncation, grid, {g: v for g, (v, _) in raw.items()})


def build_scenario(doc: dict, seed: Optional[int] = None) -> Scenario:
    truncation = TruncationSpec.from_dict(doc["truncation"])
    grid = Grid(doc["grid"]["J"], doc["grid"].get("boundary", "dirichlet"))
    t = doc["time"]
    op = OperatorSpec(grid, float(t["dt"]), float(t["T"]), t.get("scheme", "crank_nicolson"))
    seed = doc.get("seed", 0) if seed is None else seed
    clipped: list = []
    Q = build_field(doc["potential"], "potential", truncation, grid, op, seed, clipped)
    F = build_field(doc["force"], "force", truncation, grid, op, seed)
    G = build_field(doc["initial"], "initial", truncation, grid, op, seed)
    env = doc.get("envelope", {})
    data = make_scenario(Q, F, G, op, M=env.get("M", 1.0), w=env.get("w", 0.0))
    data.warnings[:0] = clipped
    return Scenario(doc["name"], doc, data, seed, doc.get("output"), doc.get("checks", {}))
