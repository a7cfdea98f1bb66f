"""Experiment configuration: JSON schema, validation, canonical form.

A config file is a single JSON object with four or five blocks::

    {
      "system":     {"dimension": 2, "components": [...], "conditions": {...}, "target": "..."},
      "controller": {"type": "smc", "w": 5.0, "lambda": 6.0, "k": 0.1, "boundary_layer": 0.0},
      "sampler":    {"scheme": "euler", "steps": 64, "trajectories": 50, "seed": 7,
                     "record_x": false, "tau_clamp": 1e-4},
      "sweep":      {"parameter": "w", "values": [1, 2, 5, 10, 15]},   # optional
      "output":     {"directory": "out", "formats": ["csv", "json", "svg"]}
    }

Components give "weight", "mean", and "cov" as either {"diag": [...]} or
{"full_lower": [[...], ...]} (lower triangle, mirrored to a symmetric
matrix). Validation errors carry the offending field path.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .flow_systems import FlowSystem, GaussComponent
from .guidance import ControlLaw

CONTROLLER_TYPES = ("cfg", "weight_schedule", "apg", "cfg_zero_star", "rectified_cfgpp", "smc")
SWEEP_PARAMETERS = ("w", "lambda", "k")
OUTPUT_FORMATS = ("csv", "json", "svg")
SCHEMES = ("euler", "heun")


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the field."""


def _expect(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{path}: {message}")


def _require_keys(block: dict, path: str, required: tuple[str, ...], optional: tuple[str, ...] = ()) -> None:
    _expect(isinstance(block, dict), path, "must be a JSON object")
    for key in required:
        _expect(key in block, path, f"missing required key {key!r}")
    allowed = set(required) | set(optional)
    for key in block:
        _expect(key in allowed, f"{path}.{key}", "unknown key")


def _as_number(value, path: str) -> float:
    _expect(isinstance(value, (int, float)) and not isinstance(value, bool), path, "must be a number")
    return float(value)


@dataclass(frozen=True)
class ComponentSpec:
    weight: float
    mean: tuple[float, ...]
    cov_form: str  # "diag" | "full_lower"
    cov_payload: tuple

    def cov_matrix(self) -> np.ndarray:
        d = len(self.mean)
        if self.cov_form == "diag":
            return np.diag(np.asarray(self.cov_payload, dtype=float))
        m = np.zeros((d, d))
        for i, row in enumerate(self.cov_payload):
            for j, value in enumerate(row):
                m[i, j] = value
                m[j, i] = value
        return m

    def to_dict(self) -> dict:
        cov = {"diag": list(self.cov_payload)} if self.cov_form == "diag" else {
            "full_lower": [list(r) for r in self.cov_payload]
        }
        return {"weight": self.weight, "mean": list(self.mean), "cov": cov}


@dataclass(frozen=True)
class SystemSpec:
    dimension: int
    components: tuple[ComponentSpec, ...]
    conditions: dict[str, tuple[int, ...]]
    target: str

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "components": [c.to_dict() for c in self.components],
            "conditions": {name: list(idx) for name, idx in sorted(self.conditions.items())},
            "target": self.target,
        }


@dataclass(frozen=True)
class ControllerSpec:
    type: str
    params: dict[str, float | str]

    def to_dict(self) -> dict:
        out: dict = {"type": self.type}
        out.update({k: self.params[k] for k in sorted(self.params)})
        return out


@dataclass(frozen=True)
class SamplerSpec:
    scheme: str = "euler"
    steps: int = 64
    trajectories: int = 50
    seed: int = 0
    record_x: bool = False
    tau_clamp: float = 1e-4

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "steps": self.steps,
            "trajectories": self.trajectories,
            "seed": self.seed,
            "record_x": self.record_x,
            "tau_clamp": self.tau_clamp,
        }


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple[float, ...]

    def to_dict(self) -> dict:
        return {"parameter": self.parameter, "values": list(self.values)}


@dataclass(frozen=True)
class OutputSpec:
    directory: str = "out"
    formats: tuple[str, ...] = ("csv", "json")

    def to_dict(self) -> dict:
        return {"directory": self.directory, "formats": list(self.formats)}


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemSpec
    controller: ControllerSpec
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    sweep: SweepSpec | None = None
    output: OutputSpec = field(default_factory=OutputSpec)

    def to_dict(self) -> dict:
        out = {
            "system": self.system.to_dict(),
            "controller": self.controller.to_dict(),
            "sampler": self.sampler.to_dict(),
            "output": self.output.to_dict(),
        }
        if self.sweep is not None:
            out["sweep"] = self.sweep.to_dict()
        return out


_CONTROLLER_PARAMS: dict[str, dict[str, bool]] = {
    # controller type -> {parameter: required?}
    "cfg": {"w": False},
    "weight_schedule": {"w_max": True, "shape": False},
    "apg": {"w": False, "eta": False},
    "cfg_zero_star": {"w": False},
    "rectified_cfgpp": {"w": False, "lambda_max": False, "gamma": False},
    "smc": {"w": False, "lambda": False, "k": False, "boundary_layer": False},
}


def _parse_controller(block: dict, path: str) -> ControllerSpec:
    _expect(isinstance(block, dict), path, "must be a JSON object")
    _expect("type" in block, path, "missing required key 'type'")
    kind = block["type"]
    _expect(kind in CONTROLLER_TYPES, f"{path}.type", f"unknown controller type {kind!r}")
    schema = _CONTROLLER_PARAMS[kind]
    params: dict[str, float | str] = {}
    for key, value in block.items():
        if key == "type":
            continue
        _expect(key in schema, f"{path}.{key}", f"not a parameter of controller {kind!r}")
        if key == "shape":
            _expect(value in ("linear", "cosine"), f"{path}.shape", f"unknown shape {value!r}")
            params[key] = value
        else:
            params[key] = _as_number(value, f"{path}.{key}")
    for key, required in schema.items():
        if required:
            _expect(key in params, path, f"missing required key {key!r}")
    if "w" in params:
        _expect(params["w"] >= 0.0, f"{path}.w", "guidance scale must be nonnegative")
    if "w_max" in params:
        _expect(params["w_max"] >= 1.0, f"{path}.w_max", "must be at least 1")
    if "eta" in params:
        _expect(params["eta"] <= 1.0, f"{path}.eta", "must be at most 1")
    if "lambda" in params:
        _expect(params["lambda"] > 0.0, f"{path}.lambda", "must be positive")
    if "k" in params:
        _expect(params["k"] >= 0.0, f"{path}.k", "must be nonnegative")
    if "boundary_layer" in params:
        _expect(params["boundary_layer"] >= 0.0, f"{path}.boundary_layer", "must be nonnegative")
    return ControllerSpec(type=kind, params=params)


def _parse_component(block: dict, path: str, dim: int) -> ComponentSpec:
    _require_keys(block, path, ("weight", "mean", "cov"))
    weight = _as_number(block["weight"], f"{path}.weight")
    _expect(0.0 < weight <= 1.0, f"{path}.weight", "must lie in (0, 1]")
    mean = block["mean"]
    _expect(isinstance(mean, list) and len(mean) == dim, f"{path}.mean", f"must be a list of {dim} numbers")
    mean_t = tuple(_as_number(v, f"{path}.mean") for v in mean)
    cov = block["cov"]
    _expect(isinstance(cov, dict) and len(cov) == 1, f"{path}.cov", "must be {'diag': [...]} or {'full_lower': [[...], ...]}")
    form, payload = next(iter(cov.items()))
    if form == "diag":
        _expect(isinstance(payload, list) and len(payload) == dim, f"{path}.cov.diag", f"must list {dim} variances")
        entries = tuple(_as_number(v, f"{path}.cov.diag") for v in payload)
        _expect(all(v > 0 for v in entries), f"{path}.cov.diag", "variances must be positive")
        return ComponentSpec(weight, mean_t, "diag", entries)
    if form == "full_lower":
        _expect(isinstance(payload, list) and len(payload) == dim, f"{path}.cov.full_lower", f"must have {dim} rows")
        rows = []
        for i, row in enumerate(payload):
            _expect(isinstance(row, list) and len(row) == i + 1, f"{path}.cov.full_lower[{i}]", f"row {i} must have {i + 1} entries")
            rows.append(tuple(_as_number(v, f"{path}.cov.full_lower[{i}]") for v in row))
        return ComponentSpec(weight, mean_t, "full_lower", tuple(rows))
    raise ConfigError(f"{path}.cov: unknown covariance form {form!r}")


def _parse_system(block: dict, path: str) -> SystemSpec:
    _require_keys(block, path, ("dimension", "components", "conditions", "target"))
    dim = block["dimension"]
    _expect(isinstance(dim, int) and dim >= 1, f"{path}.dimension", "must be a positive integer")
    comps = block["components"]
    _expect(isinstance(comps, list) and comps, f"{path}.components", "must be a nonempty list")
    components = tuple(_parse_component(c, f"{path}.components[{i}]", dim) for i, c in enumerate(comps))
    total = sum(c.weight for c in components)
    _expect(abs(total - 1.0) <= 1e-12, f"{path}.components", f"weights sum to {total!r}, expected 1")
    conds_block = block["conditions"]
    _expect(isinstance(conds_block, dict) and conds_block, f"{path}.conditions", "must be a nonempty object")
    conditions: dict[str, tuple[int, ...]] = {}
    for name, subset in conds_block.items():
        cpath = f"{path}.conditions.{name}"
        _expect(isinstance(subset, list) and subset, cpath, "must be a nonempty list of component indices")
        idx = []
        for v in subset:
            _expect(isinstance(v, int) and 0 <= v < len(components), cpath, f"invalid component index {v!r}")
            idx.append(v)
        _expect(len(set(idx)) == len(idx), cpath, "repeats a component index")
        conditions[name] = tuple(idx)
    target = block["target"]
    _expect(isinstance(target, str) and target in conditions, f"{path}.target", f"references unknown condition {target!r}")
    return SystemSpec(dim, components, conditions, target)


def _parse_sampler(block: dict, path: str) -> SamplerSpec:
    defaults = SamplerSpec()
    _require_keys(block, path, (), ("scheme", "steps", "trajectories", "seed", "record_x", "tau_clamp"))
    scheme = block.get("scheme", defaults.scheme)
    _expect(scheme in SCHEMES, f"{path}.scheme", f"unknown scheme {scheme!r}")
    steps = block.get("steps", defaults.steps)
    _expect(isinstance(steps, int) and steps >= 2, f"{path}.steps", "must be an integer >= 2")
    traj = block.get("trajectories", defaults.trajectories)
    _expect(isinstance(traj, int) and traj >= 1, f"{path}.trajectories", "must be a positive integer")
    seed = block.get("seed", defaults.seed)
    _expect(isinstance(seed, int), f"{path}.seed", "must be an integer")
    record_x = block.get("record_x", defaults.record_x)
    _expect(isinstance(record_x, bool), f"{path}.record_x", "must be a boolean")
    clamp = _as_number(block.get("tau_clamp", defaults.tau_clamp), f"{path}.tau_clamp")
    _expect(0.0 < clamp < 0.5, f"{path}.tau_clamp", "must lie in (0, 0.5)")
    return SamplerSpec(scheme, steps, traj, seed, record_x, clamp)


def _parse_sweep(block: dict, path: str, controller: ControllerSpec) -> SweepSpec:
    _require_keys(block, path, ("parameter", "values"))
    param = block["parameter"]
    _expect(param in SWEEP_PARAMETERS, f"{path}.parameter", f"must be one of {list(SWEEP_PARAMETERS)}")
    if param in ("lambda", "k"):
        _expect(controller.type == "smc", f"{path}.parameter", f"{param!r} only applies to the smc controller")
    else:
        _expect(controller.type != "weight_schedule", f"{path}.parameter", "'w' does not apply to weight_schedule (sweep w_max unsupported)")
    values = block["values"]
    _expect(isinstance(values, list) and values, f"{path}.values", "must be a nonempty list")
    vals = tuple(_as_number(v, f"{path}.values") for v in values)
    return SweepSpec(param, vals)


def _parse_output(block: dict, path: str) -> OutputSpec:
    defaults = OutputSpec()
    _require_keys(block, path, (), ("directory", "formats"))
    directory = block.get("directory", defaults.directory)
    _expect(isinstance(directory, str) and directory, f"{path}.directory", "must be a nonempty string")
    formats = block.get("formats", list(defaults.formats))
    _expect(isinstance(formats, list) and formats, f"{path}.formats", "must be a nonempty list")
    for fmt in formats:
        _expect(fmt in OUTPUT_FORMATS, f"{path}.formats", f"unknown format {fmt!r}")
    ordered = tuple(fmt for fmt in OUTPUT_FORMATS if fmt in formats)
    return OutputSpec(directory, ordered)


def config_from_dict(raw: dict) -> ExperimentConfig:
    _require_keys(raw, "config", ("system", "controller"), ("sampler", "sweep", "output"))
    system = _parse_system(raw["system"], "system")
    controller = _parse_controller(raw["controller"], "controller")
    sampler = _parse_sampler(raw.get("sampler", {}), "sampler")
    sweep = _parse_sweep(raw["sweep"], "sweep", controller) if "sweep" in raw else None
    output = _parse_output(raw.get("output", {}), "output")
    return ExperimentConfig(system, controller, sampler, sweep, output)


def load_config(path: str) -> ExperimentConfig:
    """Parse and validate a config file; JSON syntax errors keep line/column."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return config_from_dict(raw)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical JSON text; parsing it back yields an identical structure."""
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


def fingerprint(cfg: ExperimentConfig) -> str:
    """Short stable hash of the experiment content (output location excluded)."""
    payload = cfg.to_dict()
    payload.pop("output", None)
    text = json.dumps(payload, indent=2, sort_keys=True)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def build_system(spec: SystemSpec) -> FlowSystem:
    components = [
        GaussComponent(c.weight, np.asarray(c.mean, dtype=float), c.cov_matrix())
        for c in spec.components
    ]
    try:
        return FlowSystem(components, {name: list(idx) for name, idx in spec.conditions.items()})
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise ConfigError(f"system: {exc}") from exc


def build_control_law(spec: ControllerSpec) -> ControlLaw:
    p = spec.params
    if spec.type == "cfg":
        return ControlLaw("cfg", w=p.get("w", 1.0))
    if spec.type == "weight_schedule":
        return ControlLaw("weight_schedule", w=p["w_max"], w_max=p["w_max"], shape=p.get("shape", "cosine"))
    if spec.type == "apg":
        return ControlLaw("apg", w=p.get("w", 1.0), eta=p.get("eta", 0.5))
    if spec.type == "cfg_zero_star":
        return ControlLaw("cfg_zero_star", w=p.get("w", 1.0))
    if spec.type == "rectified_cfgpp":
        return ControlLaw(
            "rectified_cfgpp",
            w=p.get("w", 1.0),
            lam_max=p.get("lambda_max"),
            gamma=p.get("gamma", 1.0),
        )
    if spec.type == "smc":
        return ControlLaw(
            "smc",
            w=p.get("w", 1.0),
            lam=p.get("lambda", 6.0),
            k=p.get("k", 0.1),
            boundary_layer=p.get("boundary_layer", 0.0),
        )
    raise ConfigError(f"controller.type: unknown controller type {spec.type!r}")


def with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    return replace(cfg, sampler=replace(cfg.sampler, seed=int(seed)))


def with_controller_value(cfg: ExperimentConfig, parameter: str, value: float) -> ExperimentConfig:
    """Copy of the config with one controller parameter replaced (sweep rows)."""
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError(f"sweep.parameter: must be one of {list(SWEEP_PARAMETERS)}")
    params = dict(cfg.controller.params)
    params[parameter] = float(value)
    return replace(cfg, controller=ControllerSpec(cfg.controller.type, params))
