"""Self-checks run by ``polariton-qubit validate``.

Each check returns a ``Check`` with a pass flag and a short numeric detail.
They are small versions of the analytic oracles and cross-solver
comparisons in the test suite, sized to finish in about a minute.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .bandstructure import LuttingerParams, QwGeometry, quantization_curve
from .constants import HBAR_MEV_PS
from .device import PumpPulse
from .dynamics import (DenseDensityMatrix, HamiltonianSpec, SolverSettings, TrajectoryEnsemble,
                       evolve_dense, evolve_trajectories)
from .gates import EchoConfig, estimate_rotation_axis, gate_spec, run_gate, spin_echo_sequence


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def damped_coherent_error(alpha0=1.0, delta=1.0, gamma=0.05, lifetimes=5.0, cutoff=12, rtol=1e-10):
    """Max relative deviation of <a>(t) from alpha0 exp((-i delta - gamma/2) t / hbar)."""
    t_end = lifetimes * HBAR_MEV_PS / gamma
    spec = HamiltonianSpec.single(delta, 0.0, PumpPulse(0.0, t_end), gamma=gamma)
    settings = SolverSettings(rtol=rtol, atol=1e-13, n_output=51, solver="dense")
    state = DenseDensityMatrix.product("down", (cutoff,), alphas=[alpha0])
    run = evolve_dense(state, spec, settings, t_span=(0.0, t_end))
    t = run.record.t
    exact = alpha0 * np.exp((-1j * delta - 0.5 * gamma) * t / HBAR_MEV_PS)
    return float(np.max(np.abs(run.record.mode_mean[:, 0] - exact) / np.abs(exact)))


def fock_one(cutoff: int = 2) -> np.ndarray:
    psi = np.zeros(2 * cutoff, dtype=complex)
    psi[cutoff + 1] = 1.0  # spin down, one photon
    return psi


def single_photon_decay(gamma=0.05, lifetimes=5.0, solver="dense", n_traj=10000, seed=0, dt=0.05):
    """(t, <n>(t), standard error) for one photon decaying at rate gamma/hbar."""
    t_end = lifetimes * HBAR_MEV_PS / gamma
    spec = HamiltonianSpec.single(1.0, 0.0, PumpPulse(0.0, t_end), gamma=gamma)
    psi = fock_one()
    # with no drive the cutoff of 2 is exact; the top-level warning does not apply
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return _decay(spec, psi, t_end, solver, n_traj, seed, dt)


def _decay(spec, psi, t_end, solver, n_traj, seed, dt):
    if solver == "dense":
        settings = SolverSettings(rtol=1e-10, atol=1e-13, n_output=51, solver="dense")
        run = evolve_dense(DenseDensityMatrix(np.outer(psi, psi.conj()), (2,)), spec, settings,
                           t_span=(0.0, t_end))
        return run.record.t, run.record.mode_number[:, 0], np.zeros(len(run.record.t))
    settings = SolverSettings(dt=dt, n_output=51, solver="trajectories")
    run = evolve_trajectories(TrajectoryEnsemble(psi, (2,), n_traj, seed), spec, settings,
                              t_span=(0.0, t_end))
    n = run.record.mode_number[:, 0]
    return run.record.t, n, np.sqrt(np.clip(n * (1 - n), 0, None) / n_traj)


def run_checks(run_cfg, log=None) -> list[Check]:
    """Quick invariant and oracle suite for the resolved config's numerics."""
    checks: list[Check] = []

    def add(name, ok, detail):
        checks.append(Check(name, bool(ok), detail))
        if log:
            log(checks[-1].line())

    geom, lutt = QwGeometry(), LuttingerParams.gaas()
    th = np.linspace(0.0, math.pi / 2, 100)
    phi = quantization_curve(th, geom, lutt)
    add("quantization angle phi(0) = 0", phi[0] == 0.0, f"phi(0) = {phi[0]:g}")
    add("quantization angle monotone", np.all(np.diff(phi) >= 0), f"phi(pi/2) = {phi[-1]:.6f}")

    err = damped_coherent_error()
    add("damped coherent state", err < 1e-6, f"max relative error {err:.2e}")
    t, n, _ = single_photon_decay(solver="dense")
    err = float(np.max(np.abs(n - np.exp(-0.05 * t / HBAR_MEV_PS))))
    add("single-photon decay (dense)", err < 1e-6, f"max error {err:.2e}")
    t, n, se = single_photon_decay(solver="trajectories", n_traj=2000, seed=run_cfg.settings.seed)
    z = float(np.max(np.abs(n - np.exp(-0.05 * t / HBAR_MEV_PS))[1:] / np.maximum(se[1:], 1e-12)))
    add("single-photon decay (trajectories)", z < 4.0, f"max deviation {z:.2f} standard errors")

    # small cross-solver comparison on a weakly driven toy gate
    from .device import DeviceConfig

    dev = DeviceConfig(delta_p_mev=1.0, v_uev=1e3 * 0.1 / 0.75**2, gamma_mev=0.05, phi_rad=0.4)
    pulse = PumpPulse(0.2, 20.0)
    spec = gate_spec(dev, pulse)
    base = replace(run_cfg.settings, fock_cutoff=(5, 3, 3, 5), residual_cutoff=(3, 2, 2, 3),
                   dt=0.1, n_traj=500, rtol=1e-7)
    dense = run_gate(spec, replace(base, solver="dense"))
    disp = run_gate(spec, replace(base, solver="displaced"))
    traj = run_gate(spec, replace(base, solver="trajectories"))
    b_d, b_p, b_t = (r.record.bloch[-1] for r in (dense, disp, traj))
    se = traj.record.bloch_err[-1]
    diff = float(np.max(np.abs(b_d - b_p)))
    add("dense vs displaced Bloch vector", diff < 1e-3, f"max difference {diff:.2e}")
    ok = np.all(np.abs(b_d - b_t) <= np.maximum(1e-3, 3 * se))
    add("dense vs trajectories Bloch vector", ok,
        f"max difference {np.max(np.abs(b_d - b_t)):.2e} (3 SE = {3 * se.max():.2e})")
    dg = dense.diagnostics
    add("Lindblad invariants",
        dg["trace_drift"] <= 1e-6 and dg["hermiticity"] <= 1e-9 and dg["min_eigenvalue"] >= -1e-6,
        f"trace drift {dg['trace_drift']:.1e}, hermiticity {dg['hermiticity']:.1e}, "
        f"min eigenvalue {dg['min_eigenvalue']:.1e}")

    disp_settings = replace(base, solver="displaced")
    f0 = run_gate(spec, disp_settings).spin_rho[0, 0].real
    spec_ph = gate_spec(dev, replace(pulse, phase_rad=1.1))
    f1 = run_gate(spec_ph, disp_settings).spin_rho[0, 0].real
    add("drive phase gauge invariance", abs(f1 - f0) < 1e-10, f"|dF| = {abs(f1 - f0):.1e}")

    single = HamiltonianSpec.single(1.0, 0.1, pulse, spin_axis=0.0, gamma=0.05)
    fit = estimate_rotation_axis(None, None, spec=single, settings=replace(disp_settings,
                                                                           residual_cutoff=3))
    add("phi = 0 rotates about z", abs(fit.tilt - math.pi / 2) <= 1e-6,
        f"tilt from x = {fit.tilt:.9f}")

    echo = spin_echo_sequence(EchoConfig(free_time_ns=(10.0, 20.0), seed=run_cfg.echo_config.seed))
    r10 = echo.ramsey[0]
    add("Ramsey calibration at T2*", abs(r10 / math.exp(-1) - 1) <= 0.02, f"Ramsey(10 ns) = {r10:.4f}")
    add("echo refocusing", echo.echo[1] >= 0.999, f"echo(20 ns) = {echo.echo[1]:.6f}")
    return checks
