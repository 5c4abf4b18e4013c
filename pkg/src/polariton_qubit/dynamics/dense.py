"""Direct integration of the master equation on a truncated Fock space.

The state is propagated in the interaction picture of delta_p * sum n, which
removes the fast detuning rotation and leaves the drive oscillating at
delta_p / hbar.  Records are transformed back to the (laser) frame.
"""

from __future__ import annotations

import warnings

import numba as nb
import numpy as np
import scipy.sparse as sp

from ..constants import HBAR_MEV_PS
from .integrate import SparseCombination, integrate
from .operators import HamiltonianSpec, hamiltonian_parts, operator_set
from .states import (ConvergenceError, DenseDensityMatrix, DynamicsRun, Record,
                     SolverSettings, bloch_from_spin_rho)


@nb.njit(cache=True)
def _lindblad_kernel(indptr, indices, data, rho, jdst, jsrc, jw, jptr, gamma, x, out):
    """out = -i(M rho - rho M^dag) + gamma sum_k a_k rho a_k^dag for CSR M = H - i gamma N / 2.

    The jump tables list, per mode, the basis states i with n_k(i) < cutoff-1,
    the raised state i + stride_k and the matrix element sqrt(n_k(i) + 1).
    ``x`` is a work buffer of the same shape as ``rho``.
    """
    d = rho.shape[0]
    for i in range(d):
        for j in range(d):
            x[i, j] = 0
        for k in range(indptr[i], indptr[i + 1]):
            c = data[k]
            r = indices[k]
            for j in range(d):
                x[i, j] += c * rho[r, j]
    blk = 32
    for ib in range(0, d, blk):
        for jb in range(0, d, blk):
            for i in range(ib, min(ib + blk, d)):
                for j in range(jb, min(jb + blk, d)):
                    v = x[i, j] - np.conj(x[j, i])
                    out[i, j] = complex(v.imag, -v.real)
    for m in range(jptr.shape[0] - 1):
        lo, hi = jptr[m], jptr[m + 1]
        for a in range(lo, hi):
            ia, sa, wa = jdst[a], jsrc[a], gamma * jw[a]
            for b in range(lo, hi):
                out[ia, jdst[b]] += wa * jw[b] * rho[sa, jsrc[b]]


def _jump_tables(cutoffs: tuple[int, ...], n_diag: np.ndarray):
    strides = np.cumprod((1,) + tuple(cutoffs[::-1]))[::-1][1:]
    dst, src, w, ptr = [], [], [], [0]
    for k, c in enumerate(cutoffs):
        sel = np.nonzero(n_diag[k] < c - 1)[0]
        dst.append(sel)
        src.append(sel + strides[k])
        w.append(np.sqrt(n_diag[k][sel] + 1))
        ptr.append(ptr[-1] + len(sel))
    return (np.concatenate(dst).astype(np.int64), np.concatenate(src).astype(np.int64),
            np.concatenate(w), np.array(ptr, dtype=np.int64))


class _Observables:
    """Expectation values of a density matrix in the solver basis."""

    def __init__(self, cutoffs: tuple[int, ...]):
        ops = operator_set(cutoffs)
        self.ops = ops
        self.half = ops.dim // 2
        self.a_idx = []
        for a in ops.a:
            coo = a.tocoo()
            self.a_idx.append((coo.row, coo.col, coo.data, ops.spin_up[coo.row]))
        self.top = [ops.n_diag[k] == c - 1 for k, c in enumerate(cutoffs)]

    def spin_rho(self, rho: np.ndarray) -> np.ndarray:
        r = rho.reshape(2, self.half, 2, self.half)
        return np.einsum("aibi->ab", r)

    def evaluate(self, rho: np.ndarray) -> dict:
        diag = np.real(np.diagonal(rho))
        means, up, down = [], [], []
        for row, col, data, is_up in self.a_idx:
            v = data * rho[col, row]
            means.append(v.sum())
            up.append(v[is_up].sum())
            down.append(v[~is_up].sum())
        p_up = diag[self.ops.spin_up].sum()
        return {
            "spin_rho": self.spin_rho(rho),
            "mean": np.array(means),
            "number": self.ops.n_diag @ diag,
            "p_up": p_up,
            "cond_up": np.array(up),
            "cond_down": np.array(down),
            "top": max(diag[m].sum() for m in self.top),
        }


def _branch(cond, p, floor=1e-12):
    return cond / p if p > floor else np.full_like(cond, np.nan)


def evolve_dense(state: DenseDensityMatrix, spec: HamiltonianSpec, settings: SolverSettings,
                 t_span=None) -> DynamicsRun:
    """Integrate the Lindblad master equation for the full density matrix.

    The loss rate ``spec.gamma`` (meV) applies to every mode.  Raises
    ``ConvergenceError`` if the trace drifts by more than ``settings.trace_tol``.
    """
    cutoffs = tuple(state.cutoffs)
    ops = operator_set(cutoffs)
    dim = ops.dim
    if dim > settings.max_dim:
        raise ValueError(f"Hilbert dimension {dim} exceeds max_dim={settings.max_dim}")
    if state.rho.shape != (dim, dim):
        raise ValueError("state dimension does not match its cutoffs")
    t_span = spec.pulse.t_span if t_span is None else tuple(t_span)
    gamma = spec.gamma
    t0 = t_span[0]
    hb = HBAR_MEV_PS
    w_det = spec.delta_p / hb
    n_tot = ops.n_diag.sum(axis=0)

    _, h_spin, drive = hamiltonian_parts(spec, cutoffs)
    k_static = (h_spin - 0.5j * gamma * sp.diags(n_tot)).tocsr()
    h_eff = SparseCombination([k_static, drive.conj().T, drive])
    jumps = _jump_tables(cutoffs, ops.n_diag)
    chi = spec.pulse.phase_rad
    pulse = spec.pulse
    n_loss = gamma / hb * n_tot
    work = np.empty((dim, dim), dtype=complex)

    def frame_phase(t):
        return np.exp(-1j * w_det * t * (n_tot[:, None] - n_tot[None, :]))

    def rhs(t, y):
        rho = y[:-1].reshape(dim, dim)
        f = pulse(t) * np.exp(1j * (chi + w_det * t))
        m = h_eff([1.0, f, np.conj(f)])
        dy = np.empty_like(y)
        out = dy[:-1].reshape(dim, dim)
        _lindblad_kernel(m.indptr, m.indices, m.data, rho, *jumps, gamma, work, out)
        out /= hb
        dy[-1] = n_loss @ np.real(np.diagonal(rho))
        return dy

    rho0 = state.rho * np.conj(frame_phase(t0))
    y0 = np.concatenate([rho0.astype(complex).ravel(), [0.0]])

    obs = _Observables(cutoffs)
    rec = {k: [] for k in ("t", "bloch", "mean", "number", "loss", "p_up", "up", "down")}
    diag = {"trace_drift": 0.0, "hermiticity": 0.0, "min_eigenvalue": np.inf, "top_fock": 0.0,
            "flags": []}
    last = {}

    def on_output(t, y):
        rho = y[:-1].reshape(dim, dim)
        tr = np.trace(rho).real
        drift = abs(tr - 1)
        diag["trace_drift"] = max(diag["trace_drift"], drift)
        if drift > settings.trace_tol:
            raise ConvergenceError(f"trace drift {drift:.3e} at t={t:.3f} ps exceeds "
                                   f"{settings.trace_tol:g}; reduce rtol or dt")
        diag["hermiticity"] = max(diag["hermiticity"], float(np.max(np.abs(rho - rho.conj().T))))
        if settings.check_positivity:
            lam = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0]
            diag["min_eigenvalue"] = min(diag["min_eigenvalue"], float(lam))
        o = obs.evaluate(rho)
        diag["top_fock"] = max(diag["top_fock"], float(o["top"]))
        phase = np.exp(-1j * w_det * t)
        p_up = o["p_up"]
        rec["t"].append(t)
        rec["bloch"].append(bloch_from_spin_rho(o["spin_rho"]))
        rec["mean"].append(o["mean"] * phase)
        rec["number"].append(o["number"])
        rec["loss"].append(y[-1].real)
        rec["p_up"].append(p_up)
        rec["up"].append(_branch(o["cond_up"], p_up) * phase)
        rec["down"].append(_branch(o["cond_down"], 1 - p_up) * phase)
        last["rho"], last["t"], last["spin"] = rho, t, o["spin_rho"]

    stats = integrate(rhs, y0, t_span, settings.n_output, on_output, method=settings.method,
                      dt=settings.dt, rtol=settings.rtol, atol=settings.atol)
    if diag["top_fock"] > settings.top_fock_warn:
        msg = (f"top Fock level population {diag['top_fock']:.2e} exceeds "
               f"{settings.top_fock_warn:g}; increase fock_cutoff")
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        diag["flags"].append("cutoff_occupation")
    diag.update(stats)
    diag["dim"] = dim

    record = Record(
        t=np.array(rec["t"]), bloch=np.array(rec["bloch"]), mode_mean=np.array(rec["mean"]),
        mode_number=np.array(rec["number"]), loss=np.array(rec["loss"]), gamma=gamma,
        p_up=np.array(rec["p_up"]), branch_up=np.array(rec["up"]),
        branch_down=np.array(rec["down"]), meta={"solver": "dense"},
    )
    rho_lab = last["rho"] * frame_phase(last["t"])
    return DynamicsRun(record, DenseDensityMatrix(rho_lab, cutoffs), last["spin"], diag)
