"""Parameter sweeps and local optimisation of the pi-rotation fidelity.

A sweep evaluates the gate on a 1-D line or 2-D grid of device / pulse
parameters.  At every cell the pulse can be left as configured
(``inner="none"``), rescaled to an exact pi rotation (``"calibrate"``), or
calibrated and then polished by a bounded Nelder-Mead search over the pulse
parameters (``"optimize"``).  Cells are independent and are gathered into
pre-indexed slots, so output does not depend on evaluation order or on the
number of worker processes.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

#: short sweep-parameter names and the config paths they address
PARAM_PATHS = {
    "theta_r": "device.theta_r_rad",
    "V": "device.v_uev",
    "delta_p": "device.delta_p_mev",
    "omega0": "pulse.omega0_mev",
    "tau": "pulse.tau_ps",
    "gamma": "device.gamma_mev",
}
INNER_MODES = ("none", "calibrate", "optimize")


def resolve_param(name: str) -> str:
    if name in PARAM_PATHS:
        return PARAM_PATHS[name]
    if name in PARAM_PATHS.values():
        return name
    raise ValueError(f"unknown sweep parameter {name!r}; choose from {sorted(PARAM_PATHS)}")


def set_path(obj, path: str, value):
    """Copy of nested frozen dataclass ``obj`` with the dotted ``path`` set to ``value``."""
    head, _, rest = path.partition(".")
    if not is_dataclass(obj) or head not in {f.name for f in fields(obj)}:
        raise KeyError(path)
    if rest:
        return replace(obj, **{head: set_path(getattr(obj, head), rest, value)})
    return replace(obj, **{head: value})


def get_path(obj, path: str):
    for part in path.split("."):
        obj = getattr(obj, part)
    return obj


@dataclass(frozen=True)
class SweepAxis:
    param: str
    min: float
    max: float
    steps: int
    scale: str = "linear"

    def __post_init__(self):
        resolve_param(self.param)
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.scale not in ("linear", "log"):
            raise ValueError("scale must be 'linear' or 'log'")
        if self.scale == "log" and not (self.min > 0 and self.max > 0):
            raise ValueError("log axes need positive bounds")

    @property
    def path(self) -> str:
        return resolve_param(self.param)

    def values(self) -> np.ndarray:
        if self.steps == 1:
            return np.array([float(self.min)])
        if self.scale == "log":
            return np.geomspace(self.min, self.max, self.steps)
        return np.linspace(self.min, self.max, self.steps)


@dataclass(frozen=True)
class OptimizeSpec:
    """Bounded Nelder-Mead over pulse / device parameters (short names or paths)."""

    params: tuple[str, ...] = ("omega0", "tau")
    lower: tuple[float, ...] = (1.0, 5.0)
    upper: tuple[float, ...] = (5000.0, 2000.0)
    max_evals: int = 40
    xatol: float = 1e-4  # in units of the bound width
    fatol: float = 1e-7
    initial_step: float = 0.02  # simplex size, in units of the bound width

    def __post_init__(self):
        if not len(self.params) == len(self.lower) == len(self.upper):
            raise ValueError("params, lower and upper must have equal length")
        for p in self.params:
            resolve_param(p)
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("every lower bound must be below its upper bound")
        if self.max_evals < 1:
            raise ValueError("max_evals must be >= 1")


@dataclass(frozen=True)
class SweepSpec:
    axes: tuple[SweepAxis, ...] = ()
    fixed: dict = field(default_factory=dict)
    inner: str = "none"
    fit_axis: bool = False
    output: str = "sweep"

    def __post_init__(self):
        if not 1 <= len(self.axes) <= 2:
            raise ValueError("a sweep needs one or two axes")
        if self.inner not in INNER_MODES:
            raise ValueError(f"inner must be one of {INNER_MODES}")
        for name in self.fixed:
            resolve_param(name)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.steps for a in self.axes)


@dataclass
class OptimizeResult:
    x: np.ndarray
    value: float
    n_evals: int
    seed_value: float
    converged: bool
    flag: str = ""


@dataclass
class CellResult:
    fidelity: float
    axis_tilt: float
    rotation_angle: float
    omega0_mev: float
    tau_ps: float
    n_evals: int
    flags: tuple[str, ...] = ()


@dataclass
class SweepResult:
    params: list[str]
    coords: list[np.ndarray]
    fidelity: np.ndarray
    axis_tilt: np.ndarray
    rotation_angle: np.ndarray
    omega0_mev: np.ndarray
    tau_ps: np.ndarray
    n_evals: np.ndarray
    flags: np.ndarray  # object array of ";"-joined flag strings
    meta: dict = field(default_factory=dict)

    @property
    def best(self) -> dict:
        f = np.where(np.isnan(self.fidelity), -np.inf, self.fidelity)
        idx = np.unravel_index(int(np.argmax(f)), f.shape)
        return {"index": [int(i) for i in idx],
                "coords": {p: float(c[i]) for p, c, i in zip(self.params, self.coords, idx)},
                "fidelity": float(self.fidelity[idx]), "omega0_mev": float(self.omega0_mev[idx]),
                "tau_ps": float(self.tau_ps[idx])}

    def to_dict(self) -> dict:
        def arr(a):
            return [None if isinstance(v, float) and math.isnan(v) else v
                    for v in np.asarray(a, dtype=float).ravel().tolist()]

        return {"params": self.params, "shape": list(self.fidelity.shape),
                "coords": [c.tolist() for c in self.coords], "fidelity": arr(self.fidelity),
                "axis_tilt": arr(self.axis_tilt), "rotation_angle": arr(self.rotation_angle),
                "omega0_mev": arr(self.omega0_mev), "tau_ps": arr(self.tau_ps),
                "n_evals": np.asarray(self.n_evals).ravel().tolist(),
                "flags": list(self.flags.ravel()), "best": self.best}

    @classmethod
    def from_dict(cls, d: dict) -> "SweepResult":
        shape = tuple(d["shape"])

        def arr(key, dtype=float):
            vals = [np.nan if v is None else v for v in d[key]]
            return np.array(vals, dtype=dtype).reshape(shape)

        flags = np.empty(shape, dtype=object)
        flags.ravel()[:] = d["flags"]
        return cls(list(d["params"]), [np.array(c, dtype=float) for c in d["coords"]],
                   arr("fidelity"), arr("axis_tilt"), arr("rotation_angle"), arr("omega0_mev"),
                   arr("tau_ps"), arr("n_evals", int), flags)


# ---------------------------------------------------------------------------
# optimisation

def optimize_local(objective, x0, bounds=None, max_evals: int = 40, xatol: float = 1e-4,
                   fatol: float = 1e-7, initial_step: float = 0.05) -> OptimizeResult:
    """Maximise ``objective`` by bounded Nelder-Mead starting from ``x0``.

    With ``bounds`` (sequence of (lo, hi)) the search runs in coordinates
    scaled to the bound widths, points are clipped into the box, and
    ``xatol`` / ``initial_step`` are fractions of the widths.  NaN objective
    values count as -inf.  The best point seen is returned, so the value is
    never below the seed value.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if bounds is None:
        lo, width = np.zeros_like(x0), np.ones_like(x0)
        box = None
    else:
        b = np.asarray(bounds, dtype=float)
        lo, width = b[:, 0], b[:, 1] - b[:, 0]
        box = [(0.0, 1.0)] * len(x0)
    cache: dict = {}
    best = {"x": None, "f": -np.inf}

    def to_x(u):
        x = lo + width * np.asarray(u, dtype=float)
        return x if bounds is None else np.clip(x, b[:, 0], b[:, 1])

    def neg(u):
        x = to_x(u)
        key = tuple(x.tolist())
        if key not in cache:
            val = float(objective(x))
            cache[key] = val if math.isfinite(val) else -np.inf
            if cache[key] > best["f"] or best["x"] is None:
                best["x"], best["f"] = x.copy(), cache[key]
        return -cache[key] if math.isfinite(cache[key]) else 1e300

    u0 = (x0 - lo) / width
    if box is not None:
        u0 = np.clip(u0, 0.0, 1.0)
    seed_value = -neg(u0)
    simplex = [u0]
    for i in range(len(u0)):
        u = u0.copy()
        step = initial_step if box is None or u[i] + initial_step <= 1 else -initial_step
        u[i] += step
        simplex.append(u)
    res = minimize(neg, u0, method="Nelder-Mead", bounds=box,
                   options={"maxfev": max(max_evals - 1, 1), "xatol": xatol, "fatol": fatol,
                            "initial_simplex": np.array(simplex)})
    exhausted = res.status == 1 or len(cache) >= max_evals
    flag = "budget_exhausted" if exhausted and not res.success else ""
    return OptimizeResult(best["x"], float(best["f"]), len(cache), float(seed_value),
                          bool(res.success), flag)


# ---------------------------------------------------------------------------
# grid evaluation

def _gate(run_cfg, settings=None, with_axis=False):
    from .gates import pi_rotation_fidelity

    return pi_rotation_fidelity(run_cfg.device, run_cfg.pulse, settings=settings or run_cfg.settings,
                                with_axis=with_axis, geom=run_cfg.geometry,
                                lutt=run_cfg.luttinger_params)


def evaluate_point(run_cfg, spec: SweepSpec, opt: OptimizeSpec | None = None) -> CellResult:
    """Fidelity at one configuration, with the sweep's inner pulse treatment."""
    from .dynamics import ConvergenceError
    from .gates import calibrate_pi_pulse

    opt = opt or OptimizeSpec()
    n_evals = 0
    flags: list[str] = []
    try:
        if spec.inner in ("calibrate", "optimize"):
            pulse, res, n_evals = calibrate_pi_pulse(run_cfg.device, run_cfg.pulse, run_cfg.settings,
                                                     geom=run_cfg.geometry,
                                                     lutt=run_cfg.luttinger_params)
            run_cfg = replace(run_cfg, pulse=pulse)
        if spec.inner == "optimize":
            paths = [resolve_param(p) for p in opt.params]
            x0 = [get_path(run_cfg, p) for p in paths]

            def objective(x):
                cfg = run_cfg
                for p, v in zip(paths, x):
                    cfg = set_path(cfg, p, float(v))
                try:
                    return _gate(cfg).fidelity
                except (ConvergenceError, ValueError):
                    return float("nan")

            found = optimize_local(objective, x0, list(zip(opt.lower, opt.upper)), opt.max_evals,
                                   opt.xatol, opt.fatol, opt.initial_step)
            n_evals += found.n_evals
            if found.flag:
                flags.append(found.flag)
            for p, v in zip(paths, found.x):
                run_cfg = set_path(run_cfg, p, float(v))
        res = _gate(run_cfg, with_axis=spec.fit_axis)
        n_evals += 1 + (3 if spec.fit_axis else 0)
    except (ConvergenceError, ValueError, FloatingPointError) as exc:
        return CellResult(float("nan"), float("nan"), float("nan"), run_cfg.pulse.omega0_mev,
                          run_cfg.pulse.tau_ps, n_evals, (f"failed: {exc}",))
    if res.axis_tilt is not None:
        tilt = res.axis_tilt
    else:
        from .gates import gate_spec, mean_field_axis, tilt_from_x

        tilt = tilt_from_x(mean_field_axis(gate_spec(run_cfg.device, run_cfg.pulse, res.phi)))
    return CellResult(res.fidelity, float(tilt), float(res.rotation_angle or 0.0),
                      run_cfg.pulse.omega0_mev, run_cfg.pulse.tau_ps, n_evals,
                      tuple(flags) + tuple(res.flags))


def _cell_config(base, spec: SweepSpec, values) -> object:
    cfg = base
    for name, val in spec.fixed.items():
        cfg = set_path(cfg, resolve_param(name), float(val))
    for axis, val in zip(spec.axes, values):
        cfg = set_path(cfg, axis.path, float(val))
    return cfg


def _eval_cell(args):
    base, spec, opt, values = args
    return evaluate_point(_cell_config(base, spec, values), spec, opt)


def run_grid(spec: SweepSpec, base, opt: OptimizeSpec | None = None, threads: int = 1,
             order=None, progress=None) -> SweepResult:
    """Evaluate every cell of ``spec`` around the resolved config ``base``.

    ``order`` optionally permutes the evaluation order (flat indices); output
    is identical for any order and any ``threads``.  Failed cells hold NaN and
    a "failed: ..." flag.
    """
    coords = [a.values() for a in spec.axes]
    shape = tuple(len(c) for c in coords)
    cells = list(np.ndindex(*shape))
    order = range(len(cells)) if order is None else [int(i) for i in order]
    if sorted(order) != list(range(len(cells))):
        raise ValueError("order must be a permutation of the cell indices")
    jobs = {i: (base, spec, opt, [c[j] for c, j in zip(coords, cells[i])]) for i in order}
    slots: list[CellResult | None] = [None] * len(cells)
    if threads <= 1 or len(cells) == 1:
        for i in order:
            slots[i] = _eval_cell(jobs[i])
            if progress:
                progress(i, slots[i])
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = {i: pool.submit(_eval_cell, jobs[i]) for i in order}
            for i in order:
                slots[i] = futures[i].result()
                if progress:
                    progress(i, slots[i])

    def grid(attr, dtype=float):
        return np.array([getattr(s, attr) for s in slots], dtype=dtype).reshape(shape)

    flags = np.empty(shape, dtype=object)
    flags.ravel()[:] = [";".join(s.flags) for s in slots]
    return SweepResult([a.param for a in spec.axes], coords, grid("fidelity"), grid("axis_tilt"),
                       grid("rotation_angle"), grid("omega0_mev"), grid("tau_ps"),
                       grid("n_evals", int), flags)


# ---------------------------------------------------------------------------
# output

def _fmt(v: float) -> str:
    return repr(float(v))


def sweep_csv(result: SweepResult, header: str = "") -> str:
    """F as a CSV matrix.

    A line sweep gives columns (param, F); a heatmap gives a matrix whose
    header row holds the second-axis values and whose first column holds the
    first-axis values.  ``header`` becomes a leading "#" comment line.
    """
    buf = []
    if header:
        buf.append(f"# {header}")
    if len(result.params) == 1:
        buf.append(f"{result.params[0]},F")
        buf += [f"{_fmt(x)},{_fmt(f)}" for x, f in zip(result.coords[0], result.fidelity)]
    else:
        p0, p1 = result.params
        buf.append(",".join([f"{p0}\\{p1}"] + [_fmt(v) for v in result.coords[1]]))
        for x, row in zip(result.coords[0], result.fidelity):
            buf.append(",".join([_fmt(x)] + [_fmt(f) for f in row]))
    return "\n".join(buf) + "\n"


def load_sweep_csv(path) -> tuple[list[str], list[np.ndarray], np.ndarray]:
    """Inverse of ``sweep_csv``: (params, coords, F)."""
    with open(path, encoding="utf-8") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]
    head = rows[0]
    if len(head) == 2 and head[1] == "F":
        data = np.array([[float(v) for v in r] for r in rows[1:]])
        return [head[0]], [data[:, 0]], data[:, 1]
    params = head[0].split("\\")
    cols = np.array([float(v) for v in head[1:]])
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    return params, [data[:, 0], cols], data[:, 1:]


def emit_results(result: SweepResult, out_dir, name: str = "sweep", metadata: dict | None = None,
                 header: str = "") -> dict[str, Path]:
    """Write ``<name>.csv`` (F matrix) and ``<name>.json`` (metadata + all grids)."""
    out = Path(out_dir)
    paths = {"csv": out / f"{name}.csv", "json": out / f"{name}.json"}
    doc = dict(metadata or {})
    doc["result"] = result.to_dict()
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths["csv"].write_text(sweep_csv(result, header), encoding="utf-8")
        paths["json"].write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write sweep results to {out}: {exc}") from exc
    return paths


def load_results(json_path) -> SweepResult:
    with open(json_path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return SweepResult.from_dict(doc["result"])
