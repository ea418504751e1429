"""Scenario configuration files.

A config is a JSON document validated against :data:`SCHEMA` and turned
into a :class:`~qupid.scenarios.Scenario` by :func:`build_scenario`.
Matrices may be given as Pauli strings (``"XZ"``), weighted Pauli sums
(``[{"pauli": "XX", "coeff": -1}]``), real nested lists or
``{"re": [...], "im": [...]}``.
"""

import copy
import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from qupid.evolution import COLLECTION, DENSITY, KINDS, STATE, UNITARY, DynamicGenerator, Linear, Constant, \
    TimeGrid, coupling, propagate
from qupid.models import (
    SpinStarModel,
    TwoLevelModel,
    GaussianSegment,
    bb1_sequence,
    composite_pulse,
    custom_pulse,
    full_amplitude_gaussian,
    gaussian_pulse,
    pauli_string,
    spin_star_generator,
    two_level_generator,
)
from qupid.observables import expectation, gate_fidelity, projector_fidelity
from qupid.scenarios import Scenario
from qupid.uncertainty import ParameterDistribution

SCHEMA_VERSION = 1

_number = {"type": "number"}
_angle = {"oneOf": [{"type": "number"}, {"type": "string", "pattern": r"^\s*-?[0-9.]*\s*\*?\s*pi(\s*/\s*[0-9.]+)?\s*$"}]}
_matrix = {
    "oneOf": [
        {"type": "string", "pattern": "^[IXYZixyz]+$"},
        {"type": "array", "items": {"type": "object", "required": ["pauli"],
                                    "properties": {"pauli": {"type": "string", "pattern": "^[IXYZixyz]+$"},
                                                   "coeff": _number},
                                    "additionalProperties": False}},
        {"type": "array", "items": {"type": "array", "items": _number}},
        {"type": "array", "items": _number},
        {"type": "object", "required": ["re"], "properties": {"re": {"type": "array"}, "im": {"type": "array"}},
         "additionalProperties": False},
    ]
}
_segment = {
    "type": "object",
    "required": ["rotation", "sigma", "truncation"],
    "properties": {"rotation": _angle, "sigma": _number, "truncation": _number, "phase": _angle},
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "required": ["schema_version", "name", "model", "distribution", "grid", "observables"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "description": {"type": "string"},
        "model": {
            "type": "object",
            "required": ["type"],
            "properties": {
                "type": {"enum": ["two-level", "spin-star", "custom"]},
                "delta": _number,
                "omega_max": _number,
                "J": _number,
                "g": _number,
                "duration": _number,
                "control": {"type": "object", "additionalProperties": _number},
                "strict_paper_typo": {"type": "boolean"},
                "dim": {"type": "integer", "minimum": 2},
                "drift": _matrix,
                "terms": {"type": "array", "items": {
                    "type": "object", "required": ["name", "operator", "nominal"],
                    "properties": {"name": {"type": "string"}, "operator": _matrix, "nominal": _number},
                    "additionalProperties": False}},
                "dissipators": {"type": "array", "items": {
                    "type": "object", "required": ["name", "operator", "rate"],
                    "properties": {"name": {"type": "string"}, "operator": _matrix, "rate": _number},
                    "additionalProperties": False}},
            },
            "additionalProperties": False,
        },
        "pulse": {
            "type": "object",
            "required": ["type"],
            "properties": {
                "type": {"enum": ["gaussian", "full-amplitude-gaussian", "bb1", "composite", "custom"]},
                "rotation": _angle,
                "sigma": _number,
                "truncation": _number,
                "phase": _angle,
                "duration": _number,
                "segments": {"type": "array", "items": _segment, "minItems": 1},
                "times": {"type": "array", "items": _number},
                "values": {"type": "array", "items": _number},
                "phases": {"type": "array", "items": _number},
            },
            "additionalProperties": False,
        },
        "distribution": {
            "type": "object",
            "required": ["names"],
            "properties": {
                "names": {"type": "array", "items": {"type": "string"}},
                "means": {"type": "array", "items": _number},
                "sigmas": {"type": "array", "items": _number},
                "relative_sigmas": {"type": "array", "items": _number},
                "covariance": {"type": "array", "items": {"type": "array", "items": _number}},
            },
            "additionalProperties": False,
        },
        "kind": {"enum": list(KINDS)},
        "initial_state": {},
        "grid": {
            "type": "object",
            "required": ["N"],
            "properties": {"T": _number, "N": {"type": "integer", "minimum": 1}},
            "additionalProperties": False,
        },
        "hessian": {"enum": ["full", "diagonal"]},
        "observables": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["type", "label"],
                "properties": {
                    "type": {"enum": ["expectation", "projector-fidelity", "gate-fidelity"]},
                    "label": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
                    "operator": _matrix,
                    "target": {},
                },
                "additionalProperties": False,
            },
        },
        "sample_times": {"oneOf": [{"type": "null"}, {"type": "array", "items": _number},
                                   {"type": "object", "required": ["count"],
                                    "properties": {"count": {"type": "integer", "minimum": 2}},
                                    "additionalProperties": False}]},
        "seed": {"type": "integer", "minimum": 0},
        "mc": {"type": "object", "properties": {"samples": {"type": "integer", "minimum": 2}},
               "additionalProperties": False},
        "sweep": {"type": "object", "required": ["relative_sigmas"],
                  "properties": {"relative_sigmas": {"type": "array", "items": _number, "minItems": 1}},
                  "additionalProperties": False},
        "scaling": {
            "type": "object",
            "properties": {
                "subsets": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "repeats": {"type": "integer", "minimum": 1},
                "relative_sigma": _number,
                "curve_points": {"type": "integer", "minimum": 2},
                "curve_fraction": _number,
            },
            "additionalProperties": False,
        },
        "outputs": {
            "type": "object",
            "properties": {"dir": {"type": "string"}, "csv": {"type": "boolean"}, "json": {"type": "boolean"}},
            "additionalProperties": False,
        },
    },
}


class ConfigError(ValueError):
    """Invalid config; ``problems`` lists every diagnostic found."""

    def __init__(self, problems):
        self.problems = list(problems) if not isinstance(problems, str) else [problems]
        super().__init__("; ".join(self.problems))


def config_hash(cfg):
    """SHA-256 of the canonical (sorted-key) JSON encoding."""
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(text.encode()).hexdigest()


def _field(path):
    return "/".join(str(p) for p in path) or "<root>"


def _line_of(text, path):
    # best effort: line of the last key on the error path
    keys = [p for p in path if isinstance(p, str)]
    if not keys or text is None:
        return None
    m = None
    for m in re.finditer(r'"%s"\s*:' % re.escape(keys[-1]), text):
        pass
    return text.count("\n", 0, m.start()) + 1 if m else None


def schema_problems(cfg, text=None):
    validator = jsonschema.Draft202012Validator(SCHEMA)
    out = []
    for err in sorted(validator.iter_errors(cfg), key=lambda e: list(map(str, e.absolute_path))):
        line = _line_of(text, list(err.absolute_path))
        where = f"line {line}, " if line else ""
        out.append(f"schema: {where}field {_field(err.absolute_path)}: {err.message}")
    return out


def load_config(path):
    """Read and schema-validate a config file; raises :class:`ConfigError`."""
    text = Path(path).read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"json: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    problems = schema_problems(cfg, text)
    if problems:
        raise ConfigError(problems)
    return cfg


def apply_overrides(cfg, seed=None, mc_samples=None, dt_halve=0, strict_paper_typo=False):
    """Copy of ``cfg`` with command-line overrides folded in."""
    cfg = copy.deepcopy(cfg)
    if seed is not None:
        cfg["seed"] = int(seed)
    if mc_samples is not None:
        cfg.setdefault("mc", {})["samples"] = int(mc_samples)
    if dt_halve:
        cfg["grid"]["N"] = int(cfg["grid"]["N"]) * 2 ** int(dt_halve)
    if strict_paper_typo:
        if cfg["model"]["type"] != "spin-star":
            raise ConfigError("--strict-paper-typo only applies to spin-star models")
        cfg["model"]["strict_paper_typo"] = True
    return cfg


# --------------------------------------------------------------------------
# value parsers


def parse_angle(value):
    """Number or a string like ``"pi"``, ``"pi/2"``, ``"3*pi/4"``."""
    if isinstance(value, (int, float)):
        return float(value)
    m = re.fullmatch(r"\s*(-?[0-9.]*)\s*\*?\s*pi(?:\s*/\s*([0-9.]+))?\s*", value)
    if not m:
        raise ConfigError(f"cannot parse angle {value!r}")
    num = m.group(1)
    factor = -1.0 if num == "-" else float(num) if num else 1.0
    return factor * math.pi / (float(m.group(2)) if m.group(2) else 1.0)


def parse_matrix(spec, dim=None):
    if isinstance(spec, str):
        out = pauli_string(spec)
    elif isinstance(spec, dict):
        re_part = np.asarray(spec["re"], dtype=float)
        im_part = np.asarray(spec.get("im", np.zeros_like(re_part)), dtype=float)
        if re_part.shape != im_part.shape:
            raise ConfigError("real and imaginary parts differ in shape")
        out = re_part + 1j * im_part
    elif spec and isinstance(spec[0], dict):
        out = sum(float(t.get("coeff", 1.0)) * pauli_string(t["pauli"]) for t in spec)
    else:
        out = np.asarray(spec, dtype=complex)
    out = np.asarray(out, dtype=complex)
    if dim is not None and out.ndim == 2 and out.shape != (dim, dim):
        raise ConfigError(f"matrix shape {out.shape} does not match dimension {dim}")
    return out


def parse_pulse(block):
    kind = block["type"]
    try:
        if kind == "gaussian":
            return gaussian_pulse(block["sigma"], block["truncation"], parse_angle(block["rotation"]),
                                  parse_angle(block.get("phase", 0.0)))
        if kind == "full-amplitude-gaussian":
            return None  # needs omega_max; resolved by the model builder
        if kind == "bb1":
            return bb1_sequence(parse_angle(block["rotation"]), block["sigma"], block["truncation"])
        if kind == "composite":
            return composite_pulse(
                GaussianSegment(s["sigma"], s["truncation"], parse_angle(s["rotation"]), parse_angle(s.get("phase", 0.0)))
                for s in block["segments"]
            )
        return custom_pulse(block["times"], block["values"], block.get("phases"))
    except KeyError as exc:
        raise ConfigError(f"pulse of type {kind!r} needs field {exc.args[0]!r}") from None


def _two_level_pulse(cfg):
    block = cfg.get("pulse")
    if block is None:
        raise ConfigError("two-level model needs a pulse block")
    if block["type"] == "full-amplitude-gaussian":
        omega = cfg["model"].get("omega_max", 1.0)
        try:
            return full_amplitude_gaussian(parse_angle(block["rotation"]), omega, block["duration"])
        except KeyError as exc:
            raise ConfigError(f"pulse of type 'full-amplitude-gaussian' needs field {exc.args[0]!r}") from None
    return parse_pulse(block)


# --------------------------------------------------------------------------
# scenario assembly


@dataclass
class BuiltConfig:
    """A config resolved into runnable objects."""

    config: dict
    scenario: Scenario
    reference_scale: dict = field(default_factory=dict)
    model: object = None

    @property
    def seed(self):
        return int(self.config.get("seed", 0))

    @property
    def mc_samples(self):
        return int(self.config.get("mc", {}).get("samples", 10_000))

    @property
    def hessian(self):
        return self.config.get("hessian", "full")


def _distribution(block, names_order, nominal, reference):
    names = list(block["names"])
    dup = {n for n in names if names.count(n) > 1}
    if dup:
        raise ConfigError(f"distribution declares {sorted(dup)} more than once")
    unknown = [n for n in names if n not in nominal]
    if unknown:
        raise ConfigError(f"distribution names {unknown} are not model parameters")
    m = len(names)
    given = [k for k in ("sigmas", "relative_sigmas", "covariance") if k in block]
    if len(given) != 1:
        raise ConfigError("distribution needs exactly one of sigmas, relative_sigmas, covariance")
    means = np.asarray(block.get("means", [nominal[n] for n in names]), dtype=float)
    if means.shape != (m,):
        raise ConfigError(f"distribution/means has {means.size} entries for {m} names")
    if "covariance" in block:
        cov = np.asarray(block["covariance"], dtype=float)
        if cov.shape != (m, m):
            raise ConfigError(f"distribution/covariance must be {m}x{m}, got {cov.shape}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max(initial=0))):
            raise ConfigError("distribution/covariance is not symmetric")
    else:
        vals = np.asarray(block[given[0]], dtype=float)
        if vals.shape != (m,):
            raise ConfigError(f"distribution/{given[0]} has {vals.size} entries for {m} names")
        if np.any(vals < 0):
            raise ConfigError(f"distribution/{given[0]} must be non-negative")
        if given[0] == "relative_sigmas":
            vals = vals * np.array([abs(reference[n]) for n in names])
        cov = np.diag(vals**2)
    perm = [names.index(n) for n in names_order]
    try:
        return ParameterDistribution(tuple(names_order), means[perm], cov[np.ix_(perm, perm)])
    except ValueError as exc:
        raise ConfigError(f"distribution: {exc}") from None


def _initial_state(spec, kind, dim):
    if kind == UNITARY:
        return np.eye(dim, dtype=complex) if spec in (None, "identity") else parse_matrix(spec, dim)
    if spec is None:
        psi = np.zeros(dim, dtype=complex)
        psi[0] = 1.0
        if kind == DENSITY:
            return np.outer(psi, psi.conj())
        return psi
    if isinstance(spec, dict) and "index" in spec:
        psi = np.zeros(dim, dtype=complex)
        psi[int(spec["index"])] = 1.0
        return np.outer(psi, psi.conj()) if kind == DENSITY else psi
    arr = parse_matrix(spec)
    if kind == STATE:
        arr = arr / np.linalg.norm(arr)
    elif kind == COLLECTION:
        arr = arr / np.linalg.norm(arr, axis=0)
    return arr


def _custom_model(block):
    dim = int(block.get("dim", 0))
    if dim < 2:
        raise ConfigError("custom model needs dim >= 2")
    terms = [(t["name"], float(t["nominal"]), parse_matrix(t["operator"], dim)) for t in block.get("terms", [])]
    diss = [(d["name"], float(d["rate"]), parse_matrix(d["operator"], dim)) for d in block.get("dissipators", [])]
    names = [n for n, _, _ in terms + diss]
    dup = {n for n in names if names.count(n) > 1}
    if dup:
        raise ConfigError(f"model parameters {sorted(dup)} declared more than once")
    drift = parse_matrix(block["drift"], dim) if "drift" in block else None
    return dim, terms, diss, drift


def build(cfg):
    """Resolve a (schema-valid) config into a :class:`BuiltConfig`."""
    model_block = cfg["model"]
    mtype = model_block["type"]
    dist_block = cfg["distribution"]
    kind = cfg.get("kind", STATE)
    model = None
    if mtype == "two-level":
        pulse = _two_level_pulse(cfg)
        nominal = {"omega_max": float(model_block.get("omega_max", 1.0)), "delta": float(model_block.get("delta", 0.0))}
        reference = {n: nominal["omega_max"] for n in nominal}
        uncertain = {n: 1.0 for n in dist_block["names"] if n in nominal}
        model = TwoLevelModel(nominal["delta"], nominal["omega_max"], pulse, uncertain)
        order = model.parameter_names
        gen = two_level_generator(model)
        T = cfg["grid"].get("T", pulse.duration)
        dim = 2
    elif mtype == "spin-star":
        base = SpinStarModel(
            J=float(model_block.get("J", 1.0)),
            g=model_block.get("g"),
            duration=model_block.get("duration"),
            control={int(k): float(v) for k, v in model_block.get("control", {"1": 1.0, "3": 1.0, "5": -1.0}).items()},
            strict_typo=bool(model_block.get("strict_paper_typo", False)),
        )
        nominal = {n: v for n, v, _ in base.coupling_terms()}
        reference = nominal
        missing = [n for n in dist_block["names"] if n not in nominal]
        if missing:
            raise ConfigError(f"distribution names {missing} are not spin-star couplings")
        model = SpinStarModel(base.J, base.g, base.duration, base.control,
                              {n: 1.0 for n in dist_block["names"]}, base.strict_typo)
        order = model.parameter_names
        gen = spin_star_generator(model)
        T = cfg["grid"].get("T", model.T)
        dim = gen.dim
    else:
        dim, terms, diss, drift = _custom_model(model_block)
        nominal = {n: v for n, v, _ in terms + diss}
        reference = nominal
        order = tuple(dist_block["names"])
        unknown = [n for n in order if n not in nominal]
        if unknown:
            raise ConfigError(f"distribution names {unknown} are not model parameters")

        def coeff(name, value):
            return Linear(order.index(name)) if name in order else Constant(value)

        gen = DynamicGenerator(
            dim=dim,
            n_params=len(order),
            couplings=[coupling(op, coeff(n, v)) for n, v, op in terms],
            drift=drift,
            dissipators=[coupling(op, coeff(n, v)) for n, v, op in diss],
        )
        if "T" not in cfg["grid"]:
            raise ConfigError("custom models need grid/T")
        T = cfg["grid"]["T"]
    dist = _distribution(dist_block, order, nominal, reference)
    try:
        grid = TimeGrid(float(T), int(cfg["grid"]["N"]))
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from None
    chi0 = _initial_state(cfg.get("initial_state"), kind, dim)
    sample_times = _sample_times(cfg.get("sample_times"), grid)
    observables = [_observable(o, gen, dist, grid, chi0, kind, dim) for o in cfg["observables"]]
    labels = [o.label for o in observables]
    if len(set(labels)) != len(labels):
        raise ConfigError("observable labels must be unique")
    sc = Scenario(cfg["name"], gen, dist, grid, chi0, observables, kind, sample_times)
    return BuiltConfig(cfg, sc, reference, model)


def _sample_times(spec, grid):
    if spec is None:
        return None
    if isinstance(spec, dict):
        idx = np.unique(np.round(np.linspace(0, grid.N, int(spec["count"]))).astype(int))
        return idx * grid.dt
    times = np.asarray(spec, dtype=float)
    for t in times:
        try:
            grid.index_of(t)
        except ValueError as exc:
            raise ConfigError(f"sample_times: {exc}") from None
    return np.array(sorted(set(grid.index_of(t) for t in times))) * grid.dt


def _nominal_final(gen, dist, grid, chi0, kind):
    _, chis = propagate(gen, dist.mean, grid, chi0, kind, [grid.T])
    return chis[-1]


def _observable(block, gen, dist, grid, chi0, kind, dim):
    otype, label = block["type"], block["label"]
    if otype == "expectation":
        if "operator" not in block:
            raise ConfigError(f"observable {label!r} needs an operator")
        return expectation(parse_matrix(block["operator"], dim), label)
    target = block.get("target", "nominal-final")
    if otype == "projector-fidelity":
        if target == "nominal-final":
            t = _nominal_final(gen, dist, grid, chi0, kind)
            t = t / np.linalg.norm(t, axis=0)
        else:
            t = parse_matrix(target)
        return projector_fidelity(t, label)
    if kind != UNITARY:
        raise ConfigError(f"gate fidelity {label!r} needs kind 'unitary'")
    t = _nominal_final(gen, dist, grid, chi0, kind) if target == "nominal-final" else parse_matrix(target, dim)
    return gate_fidelity(t, label)


def with_relative_sigma(built, relative_sigma):
    """Rebuild with every uncertain parameter at ``relative_sigma`` of its reference scale."""
    cfg = copy.deepcopy(built.config)
    block = cfg["distribution"]
    for k in ("sigmas", "covariance"):
        block.pop(k, None)
    block["relative_sigmas"] = [float(relative_sigma)] * len(block["names"])
    return build(cfg)
