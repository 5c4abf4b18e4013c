"""Spin-polariton Hamiltonians and the Lindblad generator.

Hilbert space ordering is spin (index 0 = s_z = +1/2, index 1 = s_z = -1/2)
followed by the polariton modes in ``MODES`` order.  Energies in meV, times in
ps; every generator divides by hbar in meV*ps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from ..constants import HBAR_MEV_PS
from ..device import DeviceConfig, PumpPulse

#: Polariton modes (m, n): m is the angular-momentum projection, n the sign of k_x.
MODES = ((1, 1), (-1, 1), (1, -1), (-1, -1))

SX = np.array([[0, 0.5], [0.5, 0]], dtype=complex)
SY = np.array([[0, -0.5j], [0.5j, 0]], dtype=complex)
SZ = np.array([[0.5, 0], [0, -0.5]], dtype=complex)


@dataclass(frozen=True)
class HamiltonianSpec:
    """Coefficients of the four-mode (or single-mode) interaction Hamiltonian.

    Multi-mode::

        H = delta_p sum n_mn - v_eff_z s_z sum m n_mn + v_eff_x s_x sum m n n_mn
            + Omega(t) sum w_mn (e^{i chi} p_mn^dag + h.c.)

    Single-mode: ``H = delta_p n - v_r2 s_theta n + Omega(t)(p^dag + p)`` with
    ``s_theta = cos(spin_axis) s_z + sin(spin_axis) s_x``.  ``gamma`` (meV) is
    the polariton loss rate applied to every mode by the solvers.
    """

    delta_p: float
    pulse: PumpPulse
    v_eff_z: float = 0.0
    v_eff_x: float = 0.0
    pump_weights: tuple[float, ...] = (1.0, 0.0, 0.0, 1.0)
    single_mode: bool = False
    v_r2: float = 0.0
    spin_axis: float = 0.0
    spin_flip_axis: str = "x"
    gamma: float = 0.0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        w = np.asarray(self.pump_weights, dtype=float)
        if np.any(w < 0) or np.any(w > 1):
            raise ValueError("pump weights must lie in [0, 1]")
        if self.single_mode:
            if len(w) != 1:
                raise ValueError("single-mode spec takes exactly one pump weight")
        else:
            if len(w) != 4:
                raise ValueError("multi-mode spec takes four pump weights")
            if self.v_eff_z < 0 or self.v_eff_x < 0:
                raise ValueError("v_eff_z and v_eff_x must be non-negative")
        if self.spin_flip_axis not in ("x", "y"):
            raise ValueError("spin_flip_axis must be 'x' or 'y'")

    @property
    def n_modes(self) -> int:
        return 1 if self.single_mode else 4

    @classmethod
    def single(cls, delta_p: float, v_r2: float, pulse: PumpPulse, spin_axis: float = 0.0,
               gamma: float = 0.0):
        return cls(delta_p=delta_p, pulse=pulse, single_mode=True, v_r2=v_r2,
                   spin_axis=spin_axis, pump_weights=(1.0,), gamma=gamma)

    @classmethod
    def from_couplings(cls, delta_p: float, v_r2: float, phi: float, theta_r: float,
                       pulse: PumpPulse, **kw):
        """Two-beam spec from V r^2 (meV), tilt ``phi`` and refraction angle ``theta_r``."""
        c = math.cos(phi + theta_r)
        weights = tuple((1 + m * n * c) / 2 for m, n in MODES)
        return cls(delta_p=delta_p, pulse=pulse, v_eff_z=2 * v_r2 * math.cos(phi),
                   v_eff_x=2 * v_r2 * math.sin(phi), pump_weights=weights, **kw)

    @classmethod
    def from_device(cls, cfg: DeviceConfig, pulse: PumpPulse, phi: float, **kw):
        kw.setdefault("gamma", cfg.gamma_mev)
        return cls.from_couplings(cfg.delta_p_mev, cfg.v_mev * cfg.r_hopfield**2, phi,
                                  cfg.theta_r_rad, pulse, **kw)


def normalize_cutoffs(cutoff, n_modes: int) -> tuple[int, ...]:
    """Per-mode Fock dimensions from an int or a sequence."""
    if np.isscalar(cutoff):
        cutoffs = (int(cutoff),) * n_modes
    else:
        cutoffs = tuple(int(c) for c in cutoff)
    if len(cutoffs) != n_modes:
        raise ValueError(f"expected {n_modes} cutoffs, got {len(cutoffs)}")
    if min(cutoffs) < 2:
        raise ValueError(f"Fock cutoffs must be >= 2, got {cutoffs}")
    return cutoffs


def destroy(n: int) -> sp.csr_matrix:
    return sp.diags(np.sqrt(np.arange(1, n, dtype=float)), 1, shape=(n, n), format="csr",
                    dtype=complex)


def _embed(op, index: int, dims: tuple[int, ...]) -> sp.csr_matrix:
    mats = [sp.identity(d, dtype=complex, format="csr") for d in dims]
    mats[index] = sp.csr_matrix(op)
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


@dataclass(frozen=True)
class OperatorSet:
    """Sparse spin and mode operators on spin x modes for fixed cutoffs."""

    cutoffs: tuple[int, ...]
    sx: sp.csr_matrix
    sy: sp.csr_matrix
    sz: sp.csr_matrix
    a: tuple[sp.csr_matrix, ...]
    n: tuple[sp.csr_matrix, ...]
    n_diag: np.ndarray  # (n_modes, dim) photon numbers of every basis state
    spin_up: np.ndarray  # bool mask of s_z = +1/2 basis states

    @property
    def dim(self) -> int:
        return 2 * int(np.prod(self.cutoffs))

    @property
    def dims(self) -> tuple[int, ...]:
        return (2,) + self.cutoffs


@lru_cache(maxsize=32)
def operator_set(cutoffs: tuple[int, ...]) -> OperatorSet:
    dims = (2,) + tuple(cutoffs)
    a = tuple(_embed(destroy(c), k + 1, dims) for k, c in enumerate(cutoffs))
    n = tuple((op.conj().T @ op).tocsr() for op in a)
    grids = np.meshgrid(*[np.arange(d) for d in dims], indexing="ij")
    n_diag = np.stack([g.ravel() for g in grids[1:]]).astype(float)
    return OperatorSet(
        cutoffs=tuple(cutoffs),
        sx=_embed(SX, 0, dims), sy=_embed(SY, 0, dims), sz=_embed(SZ, 0, dims),
        a=a, n=n, n_diag=n_diag, spin_up=grids[0].ravel() == 0,
    )


def spin_couplings(spec: HamiltonianSpec) -> list[np.ndarray]:
    """2x2 spin operator Lambda_k multiplying n_k in the Hamiltonian, per mode."""
    if spec.single_mode:
        s_theta = math.cos(spec.spin_axis) * SZ + math.sin(spec.spin_axis) * SX
        return [-spec.v_r2 * s_theta]
    s_flip = SX if spec.spin_flip_axis == "x" else SY
    return [-spec.v_eff_z * m * SZ + spec.v_eff_x * m * q * s_flip for m, q in MODES]


def hamiltonian_parts(spec: HamiltonianSpec, cutoffs) -> tuple[sp.csr_matrix, sp.csr_matrix, sp.csr_matrix]:
    """Split H(t) = H_num + H_spin + Omega(t) (e^{i chi} A^dag + h.c.).

    Returns ``(h_num, h_spin, A)``: ``h_num`` is the detuning term
    delta_p * sum n, ``h_spin`` = sum_k Lambda_k n_k the spin-dependent number
    couplings and ``A`` the weighted sum of annihilators.
    """
    cutoffs = normalize_cutoffs(cutoffs, spec.n_modes)
    ops = operator_set(cutoffs)
    dims = ops.dims
    h_num = spec.delta_p * sum(ops.n)
    h_spin = sum(_embed(lam, 0, dims) @ nk for lam, nk in zip(spin_couplings(spec), ops.n))
    drive = sum(w * ak for w, ak in zip(spec.pump_weights, ops.a))
    return sp.csr_matrix(h_num), sp.csr_matrix(h_spin), sp.csr_matrix(drive)


def _assemble(spec: HamiltonianSpec, t: float, cutoffs) -> sp.csr_matrix:
    h_num, h_spin, drive = hamiltonian_parts(spec, cutoffs)
    omega = spec.pulse(t) * np.exp(1j * spec.pulse.phase_rad)
    return (h_num + h_spin + omega * drive.conj().T + np.conj(omega) * drive).tocsr()


def build_h_single(spec: HamiltonianSpec, t: float, cutoff: int) -> sp.csr_matrix:
    """Single-mode interaction Hamiltonian on spin x one mode (meV)."""
    if not spec.single_mode:
        raise ValueError("spec is multi-mode; use build_h_multi")
    return _assemble(spec, t, cutoff)


def build_h_multi(spec: HamiltonianSpec, t: float, cutoffs) -> sp.csr_matrix:
    """Two-beam four-mode Hamiltonian on spin x four modes (meV)."""
    if spec.single_mode:
        raise ValueError("spec is single-mode; use build_h_single")
    return _assemble(spec, t, cutoffs)


def lindblad_rhs(rho: np.ndarray, H, gamma: float, collapse_ops) -> np.ndarray:
    """Lindblad generator with equal loss rate ``gamma`` (meV) on every collapse operator.

    Returns d(rho)/dt in 1/ps.  ``rho`` need not be Hermitian.
    """
    rho = np.asarray(rho)
    if rho.shape != H.shape:
        raise ValueError(f"rho shape {rho.shape} does not match H shape {H.shape}")
    rho_h = rho.conj().T

    def right(op):  # rho @ op for sparse op
        return np.asarray(op.conj().T @ rho_h).conj().T

    out = -1j * (np.asarray(H @ rho) - right(H))
    for c in collapse_ops:
        if c.shape != H.shape:
            raise ValueError("collapse operator dimension mismatch")
        num = (c.conj().T @ c).tocsr()
        out += gamma * np.asarray(c @ np.asarray(c @ rho_h).conj().T)
        out -= 0.5 * gamma * (np.asarray(num @ rho) + right(num))
    return out / HBAR_MEV_PS
