"""Experiment configuration: TOML files mapped onto strict dataclasses.

Every table is checked against its dataclass; unknown keys and wrong types
raise ConfigError. ``resolved(cfg)`` gives the fully defaulted mapping that
each run writes next to its outputs.
"""

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .errors import ConfigError

OUTPUT_ENV = "HOPFREACH_OUTPUT"
SYSTEMS = ("vanderpol", "dubins", "linear")
MODES = ("reach", "avoid")
VARIANTS = ("constant", "time_varying", "disturbance_only", "forward", "zero")
ENVELOPES = ("single", "ensemble", "partition")


@dataclass
class SystemConfig:
    name: str = "vanderpol"
    mu: float = 1.0
    u_max: float = 1.0
    d_max: float = 0.5
    # linear systems: xdot = A x + B1 u + B2 d + c, inputs in centred boxes
    A: list = None
    B1: list = None
    B2: list = None
    c: list = None


@dataclass
class TargetConfig:
    center: list = field(default_factory=lambda: [0.0, 0.0])
    radius: float = 0.4
    shape: list = None  # full shape matrix instead of a ball


@dataclass
class GridConfig:
    lo: list = field(default_factory=lambda: [-0.8, -0.8])
    hi: list = field(default_factory=lambda: [0.8, 0.8])
    nodes: list = field(default_factory=lambda: [101, 101])


@dataclass
class ErrorConfig:
    variant: str = "constant"
    reference: list = None       # linearization state, default target centre
    region_lo: list = None       # forward variant: box of query states
    region_hi: list = None


@dataclass
class EnvelopeConfig:
    kind: str = "single"
    references: list = None      # ensemble model references
    parts: int = 4
    shrink: float = 0.7


@dataclass
class SolverSection:
    restarts: int = 20
    tol: float = 1e-6
    max_iter: int = 2000
    seed: int = 0
    method: str = "auto"


@dataclass
class DPConfig:
    nodes: list = field(default_factory=lambda: [201, 201])
    cfl: float = 0.9
    dissipation: str = "local"
    gold: str = ""               # path stem of a cached oracle solution


@dataclass
class AuditConfig:
    band_cells: float = 2.0


@dataclass
class PursuitConfig:
    N: int = 5
    theta_a: float = -0.16
    r_p: float = 3.0
    v_a: float = 3.0
    v_b: float = 3.0
    capture_radius: float = 0.5
    theta_max: float = 3.141592653589793
    r_max: float = 20.0
    horizon: float = 1.0
    step: float = 0.02
    a_max: float = 2.0
    b_max: float = 0.5
    rollouts: int = 50
    mpc_horizon: int = 15
    mpc_iters: int = 50
    switch_margin: float = float("inf")


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    kind: str = "reachset"       # reachset | pursuit
    mode: str = "reach"
    lapse: float = 0.26
    step: float = 0.005
    seed: int = 0
    workers: int = 1
    output_dir: str = ""
    system: SystemConfig = field(default_factory=SystemConfig)
    target: TargetConfig = field(default_factory=TargetConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    error: ErrorConfig = field(default_factory=ErrorConfig)
    envelope: EnvelopeConfig = field(default_factory=EnvelopeConfig)
    solver: SolverSection = field(default_factory=SolverSection)
    dp: DPConfig = field(default_factory=DPConfig)
    audit: AuditConfig = field(default_factory=AuditConfig)
    pursuit: PursuitConfig = field(default_factory=PursuitConfig)

    def output_path(self):
        base = self.output_dir or os.environ.get(OUTPUT_ENV) or "outputs"
        return Path(base) / self.name


_NUMERIC = (int, float)


def _coerce(name, want, value):
    if want is float:
        if isinstance(value, bool) or not isinstance(value, _NUMERIC):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return value
    if want is str:
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string, got {value!r}")
        return value
    if want is list:
        if not isinstance(value, list):
            raise ConfigError(f"{name}: expected an array, got {value!r}")
        return value
    return value


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"[{where}] must be a table")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    kw = {}
    for key, value in data.items():
        f = fields[key]
        name = f"{where}.{key}" if where else key
        if dataclasses.is_dataclass(f.default_factory if f.default_factory is not dataclasses.MISSING
                                    else None):
            kw[key] = _build(f.default_factory, value, key)
            continue
        want = f.type if isinstance(f.type, type) else {"float": float, "int": int, "str": str,
                                                          "list": list}.get(str(f.type))
        kw[key] = _coerce(name, want, value)
    return cls(**kw)


def validate(cfg: ExperimentConfig):
    if cfg.kind not in ("reachset", "pursuit"):
        raise ConfigError(f"kind must be 'reachset' or 'pursuit', got {cfg.kind!r}")
    if cfg.mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {cfg.mode!r}")
    if cfg.system.name not in SYSTEMS:
        raise ConfigError(f"system.name must be one of {SYSTEMS}, got {cfg.system.name!r}")
    if cfg.error.variant not in VARIANTS:
        raise ConfigError(f"error.variant must be one of {VARIANTS}, got {cfg.error.variant!r}")
    if cfg.envelope.kind not in ENVELOPES:
        raise ConfigError(f"envelope.kind must be one of {ENVELOPES}")
    if cfg.lapse < 0 or cfg.step <= 0:
        raise ConfigError("lapse must be >= 0 and step > 0")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    if cfg.target.radius <= 0 and cfg.target.shape is None:
        raise ConfigError("target.radius must be positive")
    if len(cfg.grid.lo) != len(cfg.grid.hi) or len(cfg.grid.nodes) != len(cfg.grid.lo):
        raise ConfigError("grid.lo, grid.hi and grid.nodes must have equal lengths")
    if any(n < 2 for n in cfg.grid.nodes):
        raise ConfigError("grid.nodes entries must be >= 2")
    if cfg.system.name == "linear" and (cfg.system.A is None or cfg.system.B1 is None):
        raise ConfigError("linear systems need system.A and system.B1")
    if cfg.error.variant == "forward" and (cfg.error.region_lo is None or cfg.error.region_hi is None):
        raise ConfigError("the forward variant needs error.region_lo and error.region_hi")
    if cfg.kind == "reachset" and cfg.envelope.kind == "ensemble" and not cfg.envelope.references:
        raise ConfigError("an ensemble needs envelope.references")
    p = cfg.pursuit
    if p.N < 1 or p.rollouts < 0:
        raise ConfigError("pursuit.N must be >= 1 and pursuit.rollouts >= 0")
    return cfg


def from_dict(data):
    return validate(_build(ExperimentConfig, dict(data), ""))


def load(path, seed=None, workers=None):
    """Parse a TOML experiment file; command-line overrides win."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"{path}: {err}") from None
    if seed is not None:
        data["seed"] = int(seed)
    if workers is not None:
        data["workers"] = int(workers)
    return from_dict(data)


def resolved(cfg: ExperimentConfig):
    """Plain mapping with every default filled in (None entries dropped)."""
    def strip(obj):
        if isinstance(obj, dict):
            return {k: strip(v) for k, v in obj.items() if v is not None}
        return obj
    return strip(dataclasses.asdict(cfg))


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if v != v:
            return "nan"
        if v in (float("inf"), float("-inf")):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, int):
        return str(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot write {type(v).__name__} to TOML")


def dumps(mapping):
    """Serialise a resolved config (scalars first, then one table per section)."""
    lines, tables = [], []
    for k, v in mapping.items():
        (tables if isinstance(v, dict) else lines).append((k, v))
    out = [f"{k} = {_toml_value(v)}" for k, v in lines]
    for name, tab in tables:
        out.append("")
        out.append(f"[{name}]")
        out.extend(f"{k} = {_toml_value(v)}" for k, v in tab.items())
    return "\n".join(out) + "\n"


def write_snapshot(cfg, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "resolved_config.toml"
    path.write_text(dumps(resolved(cfg)))
    return path
