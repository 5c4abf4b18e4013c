"""Gate-level quantities built from dynamics runs.

Fidelity of the pi rotation, rotation-axis fits, the which-path (quantum
erasure) metric of the leaked field, and the spin-echo protocol.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import ndtri

from .bandstructure import LuttingerParams, QwGeometry, quantization_angle
from .constants import HBAR_MEV_PS
from .device import DeviceConfig, PumpPulse
from .dynamics import (BranchCoherent, DenseDensityMatrix, DynamicsRun, HamiltonianSpec, Record,
                       SolverSettings, TrajectoryEnsemble, evolve_dense, evolve_displaced,
                       evolve_trajectories)
from .dynamics import spin_couplings
from .dynamics.operators import SX, SY, SZ
from .dynamics.states import spin_ket


@dataclass
class GateResult:
    fidelity: float
    axis_tilt: float | None
    rotation_angle: float | None
    gate_time: float  # ps
    distinguishability: float | None
    coherence_factor: float | None
    max_phase_space_distance: float | None = None
    residual_occupation: float = 0.0  # total photons left in the modes at t_end
    leaked_photons: float = 0.0
    bloch_final: list = field(default_factory=list)
    phi: float = 0.0
    solver: str = ""
    flags: list = field(default_factory=list)

    def __post_init__(self):
        if not -1e-9 <= self.fidelity <= 1 + 1e-9:
            raise ValueError(f"fidelity {self.fidelity} outside [0, 1]")
        self.fidelity = float(min(max(self.fidelity, 0.0), 1.0))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EchoConfig:
    t2_star_ns: float = 10.0
    free_time_ns: tuple[float, ...] = tuple(np.linspace(0.0, 30.0, 31))
    n_samples: int = 10000
    pi_half_time_ps: float = 1248.0
    seed: int = 0

    def __post_init__(self):
        if not self.t2_star_ns > 0:
            raise ValueError("t2_star_ns must be positive")
        if self.n_samples < 100:
            raise ValueError("n_samples must be >= 100")
        if min(self.free_time_ns) < 0:
            raise ValueError("free times must be non-negative")


@dataclass
class AxisFit:
    axis: np.ndarray
    angle: float
    tilt: float  # angle between the axis line and the x axis, in [0, pi/2]
    residual: float  # Procrustes disparity: sum over probes of |R r_in - r_out|^2
    rotation: np.ndarray
    bloch_map: np.ndarray  # 3x4 affine map [A | c]
    rms_distance: float = 0.0  # sqrt(mean |R r_in - r_out|^2)


@dataclass
class WhichPath:
    distinguishability: float
    coherence_factor: float
    max_phase_space_distance: float


@dataclass
class EchoResult:
    t_ns: np.ndarray
    ramsey: np.ndarray
    echo: np.ndarray

    def to_csv(self, path=None) -> str:
        lines = ["T_ns,ramsey,echo"]
        lines += [f"{t:.12e},{r:.12e},{e:.12e}" for t, r, e in zip(self.t_ns, self.ramsey, self.echo)]
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text


# ---------------------------------------------------------------------------
# running one gate

def device_phi(cfg: DeviceConfig, geom: QwGeometry | None = None,
               lutt: LuttingerParams | None = None) -> float:
    """Quantization tilt for the device: explicit override or Luttinger model at theta_r."""
    if cfg.phi_rad is not None:
        return float(cfg.phi_rad)
    return quantization_angle(cfg.theta_r_rad, geom or QwGeometry(), lutt or LuttingerParams.gaas()).phi


def gate_spec(cfg: DeviceConfig, pulse: PumpPulse, phi: float | None = None,
              spin_flip_axis: str = "x", geom=None, lutt=None) -> HamiltonianSpec:
    phi = device_phi(cfg, geom, lutt) if phi is None else phi
    return HamiltonianSpec.from_device(cfg, pulse, phi, spin_flip_axis=spin_flip_axis)


def run_gate(spec: HamiltonianSpec, settings: SolverSettings, spin="down") -> DynamicsRun:
    """Evolve ``spin`` (label, Bloch vector or ket) x vacuum with the configured solver."""
    if settings.solver == "displaced":
        psi = spin_ket(spin)
        state = BranchCoherent(np.outer(psi, psi.conj()), np.zeros(spec.n_modes, complex),
                               np.zeros(spec.n_modes, complex))
        return evolve_displaced(state, spec, settings)
    cutoffs = settings.cutoffs(spec.n_modes)
    if settings.solver == "dense":
        return evolve_dense(DenseDensityMatrix.product(spin, cutoffs), spec, settings)
    ens = TrajectoryEnsemble.product(spin, cutoffs, settings.n_traj, settings.seed)
    return evolve_trajectories(ens, spec, settings)


def mean_field_axis(spec: HamiltonianSpec) -> np.ndarray:
    """Bloch direction of the drive-weighted spin generator sum_k w_k^2 Lambda_k.

    All modes share one detuning, so |<a_k>|^2 is proportional to w_k^2 and
    this is the rotation axis of the mean-field dynamics.
    """
    gen = sum(w * w * lam for w, lam in zip(spec.pump_weights, spin_couplings(spec)))
    vec = np.array([np.trace(gen @ s).real for s in (SX, SY, SZ)])
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else np.array([1.0, 0.0, 0.0])


def accumulated_rotation(bloch_path: np.ndarray, axis) -> float:
    """Total (unwrapped) angle swept by a Bloch path around ``axis``; can exceed 2 pi."""
    n = np.asarray(axis, dtype=float)
    n = n / np.linalg.norm(n)
    e1 = np.cross(n, [0.0, 0.0, 1.0] if abs(n[2]) < 0.9 else [1.0, 0.0, 0.0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    pts = np.asarray(bloch_path, dtype=float)
    ang = np.unwrap(np.arctan2(pts @ e2, pts @ e1))
    return float(abs(ang[-1] - ang[0]))


def gate_result(run: DynamicsRun, spec: HamiltonianSpec, phi: float, settings) -> GateResult:
    rec = run.record
    fid = float(run.spin_rho[0, 0].real)
    wp = None
    if rec.branch_up is not None and settings.solver == "displaced":
        wp = which_path_metric(rec)
    return GateResult(
        fidelity=fid, axis_tilt=None,
        rotation_angle=accumulated_rotation(rec.bloch, mean_field_axis(spec)),
        gate_time=float(rec.t[-1] - rec.t[0]),
        distinguishability=None if wp is None else wp.distinguishability,
        coherence_factor=None if wp is None else wp.coherence_factor,
        max_phase_space_distance=None if wp is None else wp.max_phase_space_distance,
        residual_occupation=float(np.sum(rec.mode_number[-1])),
        leaked_photons=float(rec.loss[-1]),
        bloch_final=[float(x) for x in rec.bloch[-1]],
        phi=float(phi), solver=settings.solver, flags=list(run.diagnostics.get("flags", [])),
    )


def pi_rotation_fidelity(cfg: DeviceConfig, pulse: PumpPulse, spec: HamiltonianSpec | None = None,
                         settings: SolverSettings | None = None, with_axis: bool = False,
                         geom=None, lutt=None) -> GateResult:
    """F = <up| Tr_field rho(t_end) |up> starting from |down> x vacuum."""
    settings = settings or SolverSettings()
    phi = device_phi(cfg, geom, lutt)
    spec = spec or gate_spec(cfg, pulse, phi)
    run = run_gate(spec, settings, "down")
    res = gate_result(run, spec, phi, settings)
    if with_axis:
        fit = estimate_rotation_axis(cfg, pulse, spec, settings, first_run=run)
        res.axis_tilt = fit.tilt
    return res


def calibrate_pi_pulse(cfg: DeviceConfig, pulse: PumpPulse, settings: SolverSettings | None = None,
                      target: float = math.pi, max_iter: int = 4, tol: float = 1e-3,
                      geom=None, lutt=None, spin_flip_axis: str = "x"):
    """Rescale ``omega0`` until the accumulated rotation equals ``target``.

    The mean-field rotation angle scales as omega0^2, so each step sets
    omega0 <- omega0 * sqrt(target / angle).  Returns (pulse, GateResult, runs).
    """
    settings = settings or SolverSettings()
    phi = device_phi(cfg, geom, lutt)

    def run(p):
        spec = gate_spec(cfg, p, phi, spin_flip_axis=spin_flip_axis)
        return pi_rotation_fidelity(cfg, p, spec=spec, settings=settings, geom=geom, lutt=lutt)

    for it in range(1, max_iter + 1):
        res = run(pulse)
        angle = res.rotation_angle
        if not angle or abs(angle - target) <= tol * target:
            return pulse, res, it
        pulse = replace(pulse, omega0_mev=pulse.omega0_mev * math.sqrt(target / angle))
    return pulse, run(pulse), max_iter + 1


# ---------------------------------------------------------------------------
# rotation axis

def closest_rotation(a: np.ndarray) -> np.ndarray:
    """Orthogonal Procrustes: the SO(3) matrix nearest to ``a`` in Frobenius norm."""
    u, _, vt = np.linalg.svd(a)
    d = np.sign(np.linalg.det(u @ vt)) or 1.0
    return u @ np.diag([1.0, 1.0, d]) @ vt


def rotation_axis_angle(r: np.ndarray) -> tuple[np.ndarray, float]:
    """Axis (unit) and angle in [0, pi] of a rotation matrix."""
    cos_t = np.clip((np.trace(r) - 1) / 2, -1.0, 1.0)
    angle = math.acos(cos_t)
    anti = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if np.linalg.norm(anti) > 1e-6:
        axis = anti / np.linalg.norm(anti)
    else:
        # angle near 0 or pi: axis is the +1 eigenvector of R
        w, v = np.linalg.eigh(0.5 * (r + r.T))
        axis = v[:, np.argmax(w)]
        if angle < 1e-6:
            axis = np.array([1.0, 0.0, 0.0])
    return axis, angle


def tilt_from_x(axis: np.ndarray) -> float:
    return math.acos(min(1.0, abs(float(axis[0])) / float(np.linalg.norm(axis))))


#: probe states for the affine Bloch map: +z and -z give the offset and z column
PROBES = {"+z": np.array([0, 0, 1.0]), "-z": np.array([0, 0, -1.0]),
          "+x": np.array([1.0, 0, 0]), "+y": np.array([0, 1.0, 0])}


def bloch_map(spec: HamiltonianSpec, settings: SolverSettings, first_run: DynamicsRun | None = None):
    """Affine map r_out = A r_in + c of one gate, from four probe runs.

    Returns the 3x4 matrix [A | c] and the runs keyed by probe name.
    """
    runs = {}
    for name, vec in PROBES.items():
        if name == "-z" and first_run is not None:
            runs[name] = first_run
        else:
            runs[name] = run_gate(spec, settings, vec)
    out = {k: r.record.bloch[-1] for k, r in runs.items()}
    c = 0.5 * (out["+z"] + out["-z"])
    a = np.column_stack([out["+x"] - c, out["+y"] - c, 0.5 * (out["+z"] - out["-z"])])
    return np.column_stack([a, c]), runs


def estimate_rotation_axis(cfg: DeviceConfig | None, pulse: PumpPulse | None,
                           spec: HamiltonianSpec | None = None, settings: SolverSettings | None = None,
                           first_run: DynamicsRun | None = None) -> AxisFit:
    """Best single rotation describing the gate (Procrustes fit of the Bloch map).

    ``residual`` is the minimised Procrustes objective, the sum over the four
    probes of the squared distance between the rotated probe and the simulated
    final Bloch vector; ``rms_distance`` is the corresponding RMS distance.
    """
    settings = settings or SolverSettings()
    spec = spec or gate_spec(cfg, pulse)
    m, runs = bloch_map(spec, settings, first_run)
    rot = closest_rotation(m[:, :3])
    axis, angle = rotation_axis_angle(rot)
    sq = np.array([np.sum((rot @ PROBES[k] - runs[k].record.bloch[-1]) ** 2) for k in PROBES])
    return AxisFit(axis, angle, tilt_from_x(axis), float(sq.sum()), rot, m,
                   float(np.sqrt(sq.mean())))


def plane_normal_axis(bloch_path: np.ndarray) -> np.ndarray:
    """Rotation axis from a Bloch trajectory: normal of its best-fit plane."""
    pts = np.asarray(bloch_path, dtype=float)
    centred = pts - pts.mean(axis=0)
    _, _, vt = np.linalg.svd(centred)
    return vt[-1]


# ---------------------------------------------------------------------------
# which-path information

def which_path_metric(record: Record) -> WhichPath:
    """D = int gamma/hbar sum_k |alpha_k - beta_k|^2 dt and exp(-D/2).

    Uses the s_z-conditioned branch amplitudes of the record; times where a
    branch is undefined (NaN) contribute nothing.
    """
    if record.branch_up is None or record.branch_down is None:
        raise ValueError("record carries no branch-conditioned amplitudes")
    diff = np.abs(np.asarray(record.branch_up) - np.asarray(record.branch_down))
    diff = np.nan_to_num(diff, nan=0.0)
    rate = record.gamma / HBAR_MEV_PS * np.sum(diff**2, axis=1)
    dist = float(trapezoid(rate, record.t))
    return WhichPath(dist, math.exp(-0.5 * dist), float(diff.max(initial=0.0)))


# ---------------------------------------------------------------------------
# spin echo

def rotation_matrix(axis, angle: float) -> np.ndarray:
    """Right-handed Bloch-sphere rotation about ``axis``."""
    n = np.asarray(axis, dtype=float)
    n = n / np.linalg.norm(n)
    k = np.array([[0, -n[2], n[1]], [n[2], 0, -n[0]], [-n[1], n[0], 0]])
    return np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)


def ideal_gate(axis, angle: float) -> np.ndarray:
    """3x4 affine map of an ideal instantaneous rotation."""
    return np.column_stack([rotation_matrix(axis, angle), np.zeros(3)])


def overhauser_detunings(echo: EchoConfig) -> np.ndarray:
    """Stratified Gaussian sample of quasi-static precession rates (rad/ns).

    The width sqrt(2)/T2* makes the ensemble free-induction decay exp(-(t/T2*)^2).
    """
    sigma = math.sqrt(2.0) / echo.t2_star_ns if math.isfinite(echo.t2_star_ns) else 0.0
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(echo.seed)))
    u = (np.arange(echo.n_samples) + rng.random(echo.n_samples)) / echo.n_samples
    return sigma * ndtri(u)


def _apply(m: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Apply a 3x4 affine Bloch map to vectors stored as rows."""
    return r @ m[:, :3].T + m[:, 3]


def _precess(r: np.ndarray, angles: np.ndarray) -> np.ndarray:
    c, s = np.cos(angles), np.sin(angles)
    return np.stack([c * r[:, 0] - s * r[:, 1], s * r[:, 0] + c * r[:, 1], r[:, 2]], axis=1)


def spin_echo_sequence(echo: EchoConfig, pi_half_x: np.ndarray | None = None,
                       pi_y: np.ndarray | None = None, precision: float | None = None) -> EchoResult:
    """Ramsey and Hahn-echo coherence versus total free time.

    Ramsey: pi/2_x - free(T) - pi/2_x.  Echo: pi/2_x - free(T/2) - pi_y -
    free(T/2) - pi/2_x.  Coherence is -<z> of the final state starting from
    |up>, so 1 means fully refocused.  ``pi_half_x`` and ``pi_y`` are 3x4
    affine Bloch maps (default: ideal rotations), e.g. from ``bloch_map``.
    """
    if precision is not None and 1 / math.sqrt(echo.n_samples) > precision:
        raise ValueError(f"n_samples={echo.n_samples} too small for precision {precision:g}")
    g_half = ideal_gate([1, 0, 0], math.pi / 2) if pi_half_x is None else np.asarray(pi_half_x)
    g_pi = ideal_gate([0, 1, 0], math.pi) if pi_y is None else np.asarray(pi_y)
    det = overhauser_detunings(echo)
    start = np.tile([0.0, 0.0, 1.0], (len(det), 1))
    after_half = _apply(g_half, start)
    t = np.asarray(echo.free_time_ns, dtype=float)
    ramsey, hahn = np.empty_like(t), np.empty_like(t)
    for i, tt in enumerate(t):
        r = _apply(g_half, _precess(after_half, det * tt))
        ramsey[i] = -np.mean(r[:, 2])
        r = _precess(after_half, det * tt / 2)
        r = _precess(_apply(g_pi, r), det * tt / 2)
        hahn[i] = -np.mean(_apply(g_half, r)[:, 2])
    return EchoResult(t, ramsey, hahn)
