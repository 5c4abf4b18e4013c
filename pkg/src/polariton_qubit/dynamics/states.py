"""State representations, solver settings and observable records."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .operators import MODES, normalize_cutoffs

SOLVERS = ("dense", "trajectories", "displaced")
SPIN_UP = np.array([1.0, 0.0], dtype=complex)
SPIN_DOWN = np.array([0.0, 1.0], dtype=complex)


class ConvergenceError(RuntimeError):
    """Raised when an integration violates its numerical safeguards."""


@dataclass(frozen=True)
class SolverSettings:
    """Numerical knobs shared by the three solvers.

    ``fock_cutoff`` and ``residual_cutoff`` accept one int for every mode or a
    per-mode tuple in ``MODES`` order.  ``dt`` is the fixed step of the RK4
    integrator (and of the trajectory solver); ``method`` selects "DOP853"
    (adaptive, order 8) or "RK4" for the deterministic solvers.  ``solver`` is
    the representation used by gate-level code: "dense", "trajectories" or
    "displaced".
    """

    dt: float = 0.05
    method: str = "DOP853"
    rtol: float = 1e-7
    atol: float = 1e-10
    fock_cutoff: int | tuple[int, ...] = 6
    residual_cutoff: int | tuple[int, ...] = 3
    n_traj: int = 1000
    n_output: int = 101
    max_dim: int = 2048
    trace_tol: float = 1e-6
    top_fock_warn: float = 1e-6
    residual_abort: float = 1e-4
    check_positivity: bool = True
    seed: int = 0
    solver: str = "displaced"

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}; choose from {SOLVERS}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.method not in ("DOP853", "RK4"):
            raise ValueError(f"unknown integrator {self.method!r}")
        if self.n_output < 2:
            raise ValueError("n_output must be >= 2")
        for name in ("fock_cutoff", "residual_cutoff"):
            val = getattr(self, name)
            vals = (val,) if np.isscalar(val) else tuple(val)
            if min(vals) < 2:
                raise ValueError(f"{name} must be >= 2")

    @property
    def displaced_frame(self) -> bool:
        return self.solver == "displaced"

    def cutoffs(self, n_modes: int) -> tuple[int, ...]:
        return normalize_cutoffs(self.fock_cutoff, n_modes)

    def residual_cutoffs(self, n_modes: int) -> tuple[int, ...]:
        return normalize_cutoffs(self.residual_cutoff, n_modes)


def spin_ket(state="down") -> np.ndarray:
    """Spin ket from "up"/"down", a Bloch vector, or an explicit 2-vector."""
    if isinstance(state, str):
        if state == "up":
            return SPIN_UP.copy()
        if state == "down":
            return SPIN_DOWN.copy()
        raise ValueError(f"unknown spin state {state!r}")
    v = np.asarray(state)
    if v.shape == (3,):
        v = v.astype(float) / np.linalg.norm(v)
        theta = math.acos(np.clip(v[2], -1, 1))
        azim = math.atan2(v[1], v[0])
        return np.array([math.cos(theta / 2), math.sin(theta / 2) * np.exp(1j * azim)])
    if v.shape == (2,):
        return v.astype(complex) / np.linalg.norm(v)
    raise ValueError("spin state must be a label, a Bloch 3-vector or a 2-vector")


def coherent_ket(alpha: complex, cutoff: int) -> np.ndarray:
    """Truncated, renormalised coherent state."""
    n = np.arange(cutoff)
    logfact = np.array([math.lgamma(k + 1) for k in n])
    amp = np.exp(-0.5 * abs(alpha) ** 2 - 0.5 * logfact) * (alpha ** n if alpha != 0 else (n == 0))
    amp = amp.astype(complex)
    return amp / np.linalg.norm(amp)


def product_ket(spin, cutoffs: Sequence[int], alphas=None) -> np.ndarray:
    """spin x coherent(alpha_1) x ... ket in the solver basis."""
    alphas = np.zeros(len(cutoffs), dtype=complex) if alphas is None else np.asarray(alphas, dtype=complex)
    out = spin_ket(spin)
    for a, c in zip(alphas, cutoffs):
        out = np.kron(out, coherent_ket(complex(a), c))
    return out


def bloch_from_spin_rho(rho2: np.ndarray) -> np.ndarray:
    return np.array([2 * rho2[0, 1].real, -2 * rho2[0, 1].imag, (rho2[0, 0] - rho2[1, 1]).real])


def spin_rho_from_bloch(r) -> np.ndarray:
    x, y, z = r
    return 0.5 * np.array([[1 + z, x - 1j * y], [x + 1j * y, 1 - z]])


@dataclass
class DenseDensityMatrix:
    """Full density matrix on spin x truncated Fock modes."""

    rho: np.ndarray
    cutoffs: tuple[int, ...]

    @classmethod
    def product(cls, spin="down", cutoffs=(6, 6, 6, 6), alphas=None):
        psi = product_ket(spin, cutoffs, alphas)
        return cls(np.outer(psi, psi.conj()), tuple(cutoffs))

    @property
    def dim(self) -> int:
        return self.rho.shape[0]

    def spin_rho(self) -> np.ndarray:
        r = self.rho.reshape(2, self.dim // 2, 2, self.dim // 2)
        return np.einsum("aibi->ab", r)

    def check(self, tol_trace=1e-9, tol_herm=1e-9, tol_eig=1e-8) -> None:
        tr = np.trace(self.rho).real
        if abs(tr - 1) > tol_trace:
            raise ValueError(f"trace {tr} deviates from 1")
        if np.max(np.abs(self.rho - self.rho.conj().T)) > tol_herm:
            raise ValueError("density matrix is not Hermitian")
        if np.linalg.eigvalsh(self.rho).min() < -tol_eig:
            raise ValueError("density matrix is not positive semidefinite")


@dataclass
class TrajectoryEnsemble:
    """Initial pure state shared by ``n_traj`` quantum trajectories."""

    psi0: np.ndarray
    cutoffs: tuple[int, ...]
    n_traj: int
    seed: int = 0

    @classmethod
    def product(cls, spin="down", cutoffs=(6, 6, 6, 6), n_traj=1000, seed=0, alphas=None):
        return cls(product_ket(spin, cutoffs, alphas), tuple(cutoffs), int(n_traj), int(seed))


@dataclass
class BranchCoherent:
    """Spin state plus mean coherent amplitudes of every mode.

    ``alphas``/``betas`` are the field amplitudes conditioned on s_z = +1/2 and
    -1/2; ``coherence_factor`` is the accumulated loss-induced decoherence
    exp(-D/2).
    """

    spin_rho: np.ndarray
    alphas: np.ndarray
    betas: np.ndarray
    coherence_factor: float = 1.0

    @classmethod
    def product(cls, spin="down", alphas=None, n_modes=4):
        psi = spin_ket(spin)
        a = np.zeros(n_modes, dtype=complex) if alphas is None else np.asarray(alphas, dtype=complex)
        return cls(np.outer(psi, psi.conj()), a.copy(), a.copy())

    @property
    def c_up(self) -> float:
        return math.sqrt(max(self.spin_rho[0, 0].real, 0.0))

    @property
    def c_down(self) -> float:
        return math.sqrt(max(self.spin_rho[1, 1].real, 0.0))


@dataclass
class Record:
    """Observables on the output grid, lab frame.

    Arrays are indexed [time] or [time, mode].  ``bloch_err`` is only set by the
    trajectory solver; the branch arrays only by the dense and displaced ones.
    """

    t: np.ndarray
    bloch: np.ndarray
    mode_mean: np.ndarray
    mode_number: np.ndarray
    loss: np.ndarray
    gamma: float
    bloch_err: np.ndarray | None = None
    p_up: np.ndarray | None = None
    branch_up: np.ndarray | None = None
    branch_down: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_modes(self) -> int:
        return self.mode_mean.shape[1]

    def header(self) -> list[str]:
        cols = ["t_ps", "bloch_x", "bloch_y", "bloch_z"]
        for k in range(self.n_modes):
            tag = _mode_tag(k, self.n_modes)
            cols += [f"re_p_{tag}", f"im_p_{tag}", f"n_{tag}"]
        cols.append("cumulative_loss")
        return cols

    def rows(self):
        for i, t in enumerate(self.t):
            row = [t, *self.bloch[i]]
            for k in range(self.n_modes):
                row += [self.mode_mean[i, k].real, self.mode_mean[i, k].imag, self.mode_number[i, k]]
            row.append(self.loss[i])
            yield row

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        for row in self.rows():
            w.writerow([f"{float(x):.12e}" for x in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text


def _mode_tag(k: int, n_modes: int) -> str:
    if n_modes == 1:
        return "0"
    m, n = MODES[k]
    return f"{'p' if m > 0 else 'm'}{'p' if n > 0 else 'm'}"


@dataclass
class DynamicsRun:
    """Result of one solver call."""

    record: Record
    final: DenseDensityMatrix | TrajectoryEnsemble | BranchCoherent | None
    spin_rho: np.ndarray
    diagnostics: dict

    @property
    def bloch(self) -> np.ndarray:
        return self.record.bloch[-1]

    @property
    def converged(self) -> bool:
        return not self.diagnostics.get("flags")
