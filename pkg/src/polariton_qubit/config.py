"""Run configuration: presets, strict YAML parsing, overrides and hashing.

Resolution order is preset -> config file -> ``--set path=value`` overrides.
Every key is checked against the schema generated from the dataclasses
below; errors carry the key path, the file line when known, and the nearest
valid key for misspellings.
"""

from __future__ import annotations

import difflib
import hashlib
import json
import os
import typing
from dataclasses import MISSING, dataclass, field, fields, is_dataclass, replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .bandstructure import LuttingerParams, QwGeometry
from .device import DeviceConfig, PumpPulse
from .dynamics import SolverSettings
from .gates import EchoConfig
from .sweep import OptimizeSpec, SweepAxis, SweepSpec

SCHEMA_VERSION = 1
CONFIG_DIR_ENV = "POLARITON_QUBIT_CONFIG_DIR"


class ConfigError(ValueError):
    """Invalid configuration; the message names the key path and line."""


@dataclass(frozen=True)
class LuttingerChoice:
    """Named GaAs parameter set from the bundled table, with optional overrides."""

    source: str | None = None
    gamma1: float | None = None
    gamma2: float | None = None
    gamma3: float | None = None

    def params(self) -> LuttingerParams:
        base = LuttingerParams.gaas(self.source)
        over = {k: getattr(self, k) for k in ("gamma1", "gamma2", "gamma3")
                if getattr(self, k) is not None}
        return replace(base, **over)


def _default_sweep() -> SweepSpec:
    return SweepSpec(axes=(SweepAxis("delta_p", 1.0, 6.0, 8),), inner="calibrate")


@dataclass(frozen=True)
class RunConfig:
    device: DeviceConfig = field(default_factory=DeviceConfig)
    pulse: PumpPulse = field(default_factory=lambda: PumpPulse(600.0, 312.0))
    geometry: QwGeometry = field(default_factory=QwGeometry)
    luttinger: LuttingerChoice = field(default_factory=LuttingerChoice)
    solver: SolverSettings = field(default_factory=SolverSettings)
    echo: EchoConfig = field(default_factory=EchoConfig)
    sweep: SweepSpec = field(default_factory=_default_sweep)
    optimize: OptimizeSpec = field(default_factory=OptimizeSpec)
    seed: int = 0
    preset: str = "paper-optimal"

    @property
    def luttinger_params(self) -> LuttingerParams:
        return self.luttinger.params()

    @property
    def settings(self) -> SolverSettings:
        """Solver settings with the trajectory seed derived from the top-level seed."""
        return replace(self.solver, seed=derive_seed(self.seed, 0))

    @property
    def echo_config(self) -> EchoConfig:
        return replace(self.echo, seed=derive_seed(self.seed, 1))

    def to_dict(self) -> dict:
        return _plain(self)

    @property
    def hash(self) -> str:
        return config_hash(self)


def derive_seed(seed: int, stream: int) -> int:
    """Independent 63-bit child seed for a numbered random stream."""
    state = np.random.SeedSequence(seed, spawn_key=(stream,)).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


# ---------------------------------------------------------------------------
# presets

_V_TOY = 1e3 * 0.1 / 0.75**2  # ueV, so that V r^2 = 0.1 meV at r = 0.75
_V_TOY_TREND = 1e3 * 2.5e-5 / 0.75**2  # ueV, V r^2 = 2.5e-5 meV

PRESETS: dict[str, dict] = {
    "paper-optimal": {
        "device": {"delta_p_mev": 6.0, "v_uev": 0.25, "gamma_mev": 0.3, "theta_r_rad": 0.1,
                   "r_hopfield": 0.75, "r_um": 6.0},
        "pulse": {"omega0_mev": 600.0, "tau_ps": 312.0},
        "solver": {"solver": "displaced", "residual_cutoff": [3, 2, 2, 3]},
    },
    "paper-fig2-caption": {
        "device": {"delta_p_mev": 5.0, "v_uev": 0.2, "gamma_mev": 0.3, "theta_r_rad": 0.1,
                   "r_hopfield": 0.75, "r_um": 6.0},
        "pulse": {"omega0_mev": 600.0, "tau_ps": 312.0},
        "solver": {"solver": "displaced", "residual_cutoff": [3, 2, 2, 3]},
    },
    "toy": {
        "device": {"delta_p_mev": 1.0, "v_uev": _V_TOY, "gamma_mev": 0.05, "theta_r_rad": 0.1,
                   "r_hopfield": 0.75, "phi_rad": 0.4},
        "pulse": {"omega0_mev": 0.4, "tau_ps": 20.0},
        "solver": {"solver": "displaced", "fock_cutoff": [7, 3, 3, 7],
                   "residual_cutoff": [4, 3, 3, 4], "dt": 0.1, "n_traj": 10000,
                   "n_output": 41},
        "sweep": {"axes": [{"param": "delta_p", "min": 0.5, "max": 2.0, "steps": 8}]},
        "optimize": {"params": ["omega0"], "lower": [0.05], "upper": [2.0]},
    },
    "toy-trend": {
        "device": {"delta_p_mev": 1.0, "v_uev": _V_TOY_TREND, "gamma_mev": 0.05,
                   "theta_r_rad": 0.1, "r_hopfield": 0.75},
        "pulse": {"omega0_mev": 677.2, "tau_ps": 20.0},
        "solver": {"solver": "displaced", "residual_cutoff": [3, 2, 2, 3]},
        "optimize": {"params": ["omega0", "tau"], "lower": [100.0, 5.0],
                     "upper": [5000.0, 100.0]},
    },
}


# ---------------------------------------------------------------------------
# schema

_HIDDEN = {"solver.seed", "echo.seed"}  # derived from the top-level seed


def _hints(cls) -> dict:
    return typing.get_type_hints(cls)


def schema(cls=RunConfig, prefix: str = "") -> dict[str, tuple[str, object]]:
    """Flat map of every settable path to (type description, default)."""
    out = {}
    hints = _hints(cls)
    for f in fields(cls):
        path = f"{prefix}{f.name}"
        if path in _HIDDEN:
            continue
        hint = hints[f.name]
        if isinstance(hint, type) and is_dataclass(hint):
            out.update(schema(hint, path + "."))
            continue
        if f.default is not MISSING:
            default = f.default
        elif f.default_factory is not MISSING:
            default = f.default_factory()
        else:
            default = None
        out[path] = (_describe(hint), _plain(default))
    return out


def _describe(hint) -> str:
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union or type(hint).__name__ == "UnionType":
        return " | ".join(_describe(a) for a in args)
    if origin is tuple:
        return f"list[{_describe(args[0])}]"
    if origin is dict or hint is dict:
        return "mapping"
    if hint is type(None):
        return "null"
    return getattr(hint, "__name__", str(hint))


def help_text() -> str:
    lines = ["accepted --set paths (type, preset-independent default):"]
    for path, (kind, default) in schema().items():
        lines.append(f"  {path:<34} {kind}  [{json.dumps(default)}]")
    lines.append("presets: " + ", ".join(PRESETS))
    return "\n".join(lines)


def _plain(obj, prefix: str = ""):
    if is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name), f"{prefix}{f.name}.") for f in fields(obj)
                if f"{prefix}{f.name}" not in _HIDDEN}
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# YAML with line numbers

def _node_to_python(node, path: str, lines: dict):
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for key_node, val_node in node.value:
            key = str(key_node.value)
            sub = f"{path}.{key}" if path else key
            if key in out:
                raise ConfigError(f"duplicate key {sub!r} (line {key_node.start_mark.line + 1})")
            lines[sub] = key_node.start_mark.line + 1
            out[key] = _node_to_python(val_node, sub, lines)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_node_to_python(v, f"{path}[{i}]", lines) for i, v in enumerate(node.value)]
    return yaml.safe_load(yaml.serialize(node))


def load_yaml(text: str, source: str = "<config>") -> tuple[dict, dict]:
    """Parse YAML into (data, {path: line})."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: invalid YAML: {exc}") from None
    lines: dict = {}
    if root is None:
        return {}, lines
    data = _node_to_python(root, "", lines)
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    return data, lines


# ---------------------------------------------------------------------------
# validation and construction

def _where(path: str, lines: dict, source: str) -> str:
    line = lines.get(path)
    return f"{source}:{line}: " if line else f"{source}: "


def _coerce(value, hint, path: str, lines: dict, source: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    err = f"{_where(path, lines, source)}key {path!r}"
    if origin is typing.Union or type(hint).__name__ == "UnionType":
        if value is None and type(None) in args:
            return None
        problems = []
        for a in args:
            if a is type(None):
                continue
            try:
                return _coerce(value, a, path, lines, source)
            except ConfigError as exc:
                problems.append(str(exc))
        raise ConfigError(f"{err}: expected {_describe(hint)}, got {value!r}")
    if isinstance(hint, type) and is_dataclass(hint):
        if not isinstance(value, dict):
            raise ConfigError(f"{err}: expected a mapping")
        return _build(hint, value, path, lines, source)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{err}: expected a list, got {value!r}")
        return tuple(_coerce(v, args[0], f"{path}[{i}]", lines, source) for i, v in enumerate(value))
    if origin is dict or hint is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{err}: expected a mapping")
        return {str(k): _coerce(v, float, f"{path}.{k}", lines, source) for k, v in value.items()}
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{err}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{err}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, str):
            # YAML 1.1 reads exponents without a dot (1e-9) as strings
            try:
                value = float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{err}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{err}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{err}: unsupported type {hint}")


def _unknown(key: str, valid, path: str, lines: dict, source: str) -> ConfigError:
    near = difflib.get_close_matches(key, list(valid), n=1, cutoff=0.5)
    hint = f"; did you mean {near[0]!r}?" if near else f"; valid keys: {', '.join(sorted(valid))}"
    return ConfigError(f"{_where(path, lines, source)}unknown key {path!r}{hint}")


def _build(cls, data: dict, prefix: str, lines: dict, source: str):
    hints = _hints(cls)
    names = {f.name for f in fields(cls)} - {p.rsplit(".", 1)[-1] for p in _HIDDEN
                                              if p.rsplit(".", 1)[0] == prefix}
    for key in data:
        if key not in names:
            raise _unknown(key, names, f"{prefix}.{key}" if prefix else key, lines, source)
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            if f.default is MISSING and f.default_factory is MISSING:
                path = f"{prefix}.{f.name}" if prefix else f.name
                raise ConfigError(f"{_where(prefix, lines, source)}missing required key {path!r}")
            continue
        path = f"{prefix}.{f.name}" if prefix else f.name
        kwargs[f.name] = _coerce(data[f.name], hints[f.name], path, lines, source)
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{_where(prefix, lines, source)}invalid {prefix or 'config'}: {exc}") from None


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "fixed":
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _set_override(data: dict, assignment: str) -> dict:
    if "=" not in assignment:
        raise ConfigError(f"--set expects path=value, got {assignment!r}")
    path, _, raw = assignment.partition("=")
    path = path.strip()
    valid = schema()
    if path not in valid:
        near = difflib.get_close_matches(path, list(valid), n=1, cutoff=0.5)
        hint = f"; did you mean {near[0]!r}?" if near else ""
        raise ConfigError(f"--set: unknown key {path!r}{hint}")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"--set {path}: cannot parse value {raw!r}: {exc}") from None
    parts = path.split(".")
    nested = value
    for p in reversed(parts):
        nested = {p: nested}
    return _merge(data, nested)


def find_config(path) -> Path:
    """Locate a config file, falling back to the directory in $POLARITON_QUBIT_CONFIG_DIR."""
    p = Path(path)
    if p.exists():
        return p
    base = os.environ.get(CONFIG_DIR_ENV)
    if base and not p.is_absolute():
        for cand in (Path(base) / p, Path(base) / f"{p}.yaml"):
            if cand.exists():
                return cand
    raise ConfigError(f"config file not found: {path}")


def parse_config(path=None, preset: str | None = None, overrides=(), text: str | None = None) -> RunConfig:
    """Resolve preset -> file -> overrides into a validated ``RunConfig``."""
    source = "<text>"
    data, lines = {}, {}
    if path is not None:
        p = find_config(path)
        source = str(p)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read {p}: {exc}") from None
    if text is not None:
        data, lines = load_yaml(text, source)
        if "schema_version" in data and isinstance(data.get("config"), dict):
            # a JSON artifact manifest: re-run from its resolved config
            data = data["config"]
            lines = {k[len("config."):]: v for k, v in lines.items() if k.startswith("config.")}
    name = preset or data.get("preset") or "paper-optimal"
    if not isinstance(name, str) or name not in PRESETS:
        raise ConfigError(f"{_where('preset', lines, source)}unknown preset {name!r}; "
                          f"choose from {', '.join(PRESETS)}")
    merged = _merge(PRESETS[name], data)
    merged["preset"] = name
    for assignment in overrides:
        merged = _set_override(merged, assignment)
    return _build(RunConfig, merged, "", lines, source)


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def dump_config(cfg: RunConfig) -> str:
    """Fully resolved config as YAML; loading it back gives the same hash."""
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def manifest(cfg: RunConfig, command: str) -> dict:
    """Reproducibility header embedded in every JSON artifact."""
    import numba
    import scipy

    return {
        "schema_version": SCHEMA_VERSION,
        "config_hash": cfg.hash,
        "command": command,
        "config": cfg.to_dict(),
        "versions": {"polariton_qubit": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "numba": numba.__version__},
    }
