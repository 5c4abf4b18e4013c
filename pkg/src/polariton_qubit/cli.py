"""Command-line interface: ``polariton-qubit <subcommand> [options]``.

Exit codes: 0 success, 1 physics / convergence failure, 2 configuration error.
Every JSON artifact carries the schema version, the resolved config and its
hash; CSV artifacts start with a "#" comment line holding the same hash.
Wall-clock times go to ``timing.json`` so the other artifacts stay
byte-identical between reruns.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from .bandstructure import quantization_angle
from .config import SCHEMA_VERSION, ConfigError, RunConfig, dump_config, help_text, manifest, parse_config
from .dynamics import ConvergenceError
from .gates import (bloch_map, calibrate_pi_pulse, device_phi, estimate_rotation_axis, gate_result,
                    gate_spec, pi_rotation_fidelity, plane_normal_axis, run_gate, spin_echo_sequence,
                    tilt_from_x, which_path_metric)
from .sweep import emit_results, get_path, load_results, optimize_local, resolve_param, run_grid, set_path

VACUUM_STD = 0.5  # standard deviation of either quadrature of the vacuum


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"not JSON serialisable: {type(obj)}")


def _clean(obj):
    """Replace non-finite floats by None so the JSON stays standard."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


class Artifacts:
    """Writes artifacts into the output directory and keeps the timing sidecar."""

    def __init__(self, out: Path, cfg: RunConfig, command: str):
        self.out, self.cfg, self.command = out, cfg, command
        self.header = manifest(cfg, command)
        self.t0 = time.perf_counter()
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create output directory {out}: {exc}") from exc
        self.written: list[Path] = []

    def csv_header(self) -> str:
        return f"schema_version={SCHEMA_VERSION} config_hash={self.cfg.hash} command={self.command}"

    def write_text(self, name: str, text: str) -> Path:
        path = self.out / name
        try:
            path.write_text(text, encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        self.written.append(path)
        return path

    def write_csv(self, name: str, text: str) -> Path:
        return self.write_text(name, f"# {self.csv_header()}\n{text}")

    def write_json(self, name: str, payload: dict) -> Path:
        doc = dict(self.header)
        doc.update(payload)
        text = json.dumps(_clean(json.loads(json.dumps(doc, default=_json_default))), indent=2,
                          sort_keys=True)
        return self.write_text(name, text + "\n")

    def finish(self):
        self.write_text("resolved.yaml", dump_config(self.cfg))
        timing = {"command": self.command, "config_hash": self.cfg.hash,
                  "wall_time_s": round(time.perf_counter() - self.t0, 3)}
        (self.out / "timing.json").write_text(json.dumps(timing, indent=2) + "\n", encoding="utf-8")
        for p in self.written:
            print(p)


# ---------------------------------------------------------------------------
# subcommands

def cmd_quantization_angle(cfg: RunConfig, args, art: Artifacts) -> int:
    if args.steps < 2:
        raise ConfigError("--steps must be >= 2")
    lutt = cfg.luttinger_params
    rows = ["theta_r,phi"]
    for th in np.linspace(args.min, args.max, args.steps).tolist():
        rows.append(f"{th!r},{quantization_angle(th, cfg.geometry, lutt).phi!r}")
    art.write_csv("quantization_angle.csv", "\n".join(rows) + "\n")
    return 0


def cmd_simulate(cfg: RunConfig, args, art: Artifacts) -> int:
    phi = device_phi(cfg.device, cfg.geometry, cfg.luttinger_params)
    spec = gate_spec(cfg.device, cfg.pulse, phi)
    run = run_gate(spec, cfg.settings, "down")
    res = gate_result(run, spec, phi, cfg.settings)
    if args.axis:
        fit = estimate_rotation_axis(None, None, spec=spec, settings=cfg.settings, first_run=run)
        res.axis_tilt = fit.tilt
    art.write_json("gate_result.json", {"gate_result": res.to_dict()})
    art.write_csv("trajectory.csv", run.record.to_csv())
    return 0


def cmd_axis(cfg: RunConfig, args, art: Artifacts) -> int:
    spec = gate_spec(cfg.device, cfg.pulse, geom=cfg.geometry, lutt=cfg.luttinger_params)
    first = run_gate(spec, cfg.settings, "down")
    fit = estimate_rotation_axis(None, None, spec=spec, settings=cfg.settings, first_run=first)
    path = first.record.bloch
    normal = plane_normal_axis(path)
    payload = {"axis": fit.axis, "rotation_angle": fit.angle, "axis_tilt": fit.tilt,
               "fit_residual": fit.residual, "rms_distance": fit.rms_distance, "bloch_map": fit.bloch_map,
               "plane_normal_axis": normal, "plane_normal_tilt": tilt_from_x(normal)}
    art.write_json("axis.json", payload)
    return 0


def cmd_erasure(cfg: RunConfig, args, art: Artifacts) -> int:
    settings = cfg.settings
    if settings.solver != "displaced":
        raise ConfigError("erasure needs branch amplitudes: set solver.solver=displaced")
    spec = gate_spec(cfg.device, cfg.pulse, geom=cfg.geometry, lutt=cfg.luttinger_params)
    run = run_gate(spec, settings, "down")
    wp = which_path_metric(run.record)
    payload = {"distinguishability": wp.distinguishability, "coherence_factor": wp.coherence_factor,
               "max_phase_space_distance": wp.max_phase_space_distance,
               "vacuum_std": VACUUM_STD,
               "below_vacuum_noise": wp.max_phase_space_distance < VACUUM_STD,
               "fidelity": float(run.spin_rho[0, 0].real)}
    art.write_json("erasure.json", payload)
    diff = np.abs(run.record.branch_up - run.record.branch_down)
    rows = ["t_ps," + ",".join(f"sep_{k}" for k in range(diff.shape[1]))]
    rows += [",".join(f"{v:.12e}" for v in (t, *d)) for t, d in zip(run.record.t, diff)]
    art.write_csv("branches.csv", "\n".join(rows) + "\n")
    return 0


def cmd_echo(cfg: RunConfig, args, art: Artifacts) -> int:
    echo = cfg.echo_config
    maps = {}
    if args.pulses == "simulated":
        kw = dict(settings=cfg.settings, geom=cfg.geometry, lutt=cfg.luttinger_params)
        p_half, _, _ = calibrate_pi_pulse(cfg.device, cfg.pulse, target=math.pi / 2, **kw)
        p_pi, _, _ = calibrate_pi_pulse(cfg.device, cfg.pulse, spin_flip_axis="y", **kw)
        phi = None
        m_half, _ = bloch_map(gate_spec(cfg.device, p_half, phi, geom=cfg.geometry,
                                        lutt=cfg.luttinger_params), cfg.settings)
        m_pi, _ = bloch_map(gate_spec(cfg.device, p_pi, phi, spin_flip_axis="y", geom=cfg.geometry,
                                      lutt=cfg.luttinger_params), cfg.settings)
        maps = {"pi_half_x": m_half, "pi_y": m_pi}
    result = spin_echo_sequence(echo, maps.get("pi_half_x"), maps.get("pi_y"))
    art.write_csv("echo.csv", result.to_csv())
    art.write_json("echo.json", {"pulses": args.pulses, "gate_maps": maps,
                                 "echo_seed": echo.seed, "n_samples": echo.n_samples})
    return 0


def _progress(total):
    def report(i, cell):
        print(f"cell {i + 1}/{total}: F = {cell.fidelity:.8f} {';'.join(cell.flags)}",
              file=sys.stderr)
    return report


def cmd_sweep(cfg: RunConfig, args, art: Artifacts) -> int:
    spec = cfg.sweep
    total = int(np.prod(spec.shape))
    result = run_grid(spec, cfg, cfg.optimize, threads=args.threads,
                      progress=None if args.quiet else _progress(total))
    name = spec.output
    paths = emit_results(result, art.out, name, art.header, art.csv_header())
    art.written += list(paths.values())
    failed = int(np.sum(np.isnan(result.fidelity)))
    if failed:
        print(f"{failed} of {total} cells failed; see flags in {paths['json']}", file=sys.stderr)
    return 0


def cmd_optimize(cfg: RunConfig, args, art: Artifacts) -> int:
    opt = cfg.optimize
    if args.seed_from:
        best = load_results(args.seed_from).best
        for name, val in best["coords"].items():
            cfg = set_path(cfg, resolve_param(name), val)
        cfg = set_path(set_path(cfg, "pulse.omega0_mev", best["omega0_mev"]), "pulse.tau_ps",
                       best["tau_ps"])
    paths = [resolve_param(p) for p in opt.params]
    x0 = [get_path(cfg, p) for p in paths]

    def objective(x):
        c = cfg
        for p, v in zip(paths, x):
            c = set_path(c, p, float(v))
        try:
            return pi_rotation_fidelity(c.device, c.pulse, settings=c.settings, geom=c.geometry,
                                        lutt=c.luttinger_params).fidelity
        except (ConvergenceError, ValueError):
            return float("nan")

    found = optimize_local(objective, x0, list(zip(opt.lower, opt.upper)), opt.max_evals,
                           opt.xatol, opt.fatol, opt.initial_step)
    payload = {"params": list(opt.params), "start": x0, "start_fidelity": found.seed_value,
               "x": found.x, "fidelity": found.value, "n_evals": found.n_evals,
               "converged": found.converged, "flag": found.flag}
    art.write_json("optimize.json", payload)
    return 0


def cmd_validate(cfg: RunConfig, args, art: Artifacts) -> int:
    from .validation import run_checks

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        checks = run_checks(cfg, log=None if args.quiet else print)
    ok = all(c.passed for c in checks)
    art.write_json("validate.json", {"passed": ok, "checks": [c.__dict__ for c in checks]})
    return 0 if ok else 1


COMMANDS = {
    "quantization-angle": (cmd_quantization_angle, "hole quantization tilt phi versus theta_r (CSV)"),
    "simulate": (cmd_simulate, "run one gate: GateResult JSON and trajectory CSV"),
    "axis": (cmd_axis, "fit the effective rotation axis of the gate"),
    "erasure": (cmd_erasure, "which-path distinguishability of the leaked field"),
    "echo": (cmd_echo, "Ramsey and spin-echo coherence versus free time"),
    "sweep": (cmd_sweep, "1-D / 2-D parameter sweep of the fidelity"),
    "optimize": (cmd_optimize, "local Nelder-Mead maximisation of the fidelity"),
    "validate": (cmd_validate, "run the invariant and cross-solver self-checks"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--preset", help="built-in preset (default: file's 'preset' or paper-optimal)")
    common.add_argument("--config", help="YAML config file or JSON artifact manifest")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="PATH=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")
    parser = argparse.ArgumentParser(prog="polariton-qubit",
                                     description="Polariton-mediated spin-qubit rotation simulator.")
    sub = parser.add_subparsers(dest="command", required=True)
    epilog = help_text()
    for name, (_, text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=text, description=text, epilog=epilog,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        if name == "quantization-angle":
            p.add_argument("--min", type=float, default=0.0, help="first theta_r (rad)")
            p.add_argument("--max", type=float, default=math.pi / 2, help="last theta_r (rad)")
            p.add_argument("--steps", type=int, default=100, help="number of grid points")
        elif name == "simulate":
            p.add_argument("--axis", action="store_true", help="also fit the rotation axis")
        elif name == "echo":
            p.add_argument("--pulses", choices=("ideal", "simulated"), default="ideal",
                           help="instantaneous rotations or polariton-mediated gate maps")
        elif name == "optimize":
            p.add_argument("--seed-from", help="sweep JSON whose best cell starts the search")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.config, args.preset, args.overrides)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        art = Artifacts(Path(args.out), cfg, args.command)
        code = COMMANDS[args.command][0](cfg, args, art)
        art.finish()
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
