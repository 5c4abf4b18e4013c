"""Monte-Carlo wave-function unravelling of the master equation.

Trajectories start from a common pure state and follow the same unnormalised
no-jump evolution until their first jump.  More generally, trajectories that
jump from the same state at the same step through the same mode stay identical
until their next jump, so each distinct state is integrated once as a shared
column.  Every trajectory owns an RNG stream spawned from the master seed, so
results do not depend on chunking.
"""

from __future__ import annotations

import warnings

import numba as nb
import numpy as np
import scipy.sparse as sp

from ..constants import HBAR_MEV_PS
from .integrate import SparseCombination, rk4_grid
from .operators import HamiltonianSpec, hamiltonian_parts, operator_set
from .states import (ConvergenceError, DynamicsRun, Record, SolverSettings, TrajectoryEnsemble,
                     spin_rho_from_bloch)

_NORM_FLOOR = 1e-280


@nb.njit(cache=True)
def _csr_cols(indptr, indices, data, psi, n, scale, out):
    """out[:, :n] = scale * M @ psi[:, :n] (trajectories are columns)."""
    d = psi.shape[0]
    for i in range(d):
        for b in range(n):
            out[i, b] = 0
        for k in range(indptr[i], indptr[i + 1]):
            c = data[k] * scale
            r = indices[k]
            for b in range(n):
                out[i, b] += c * psi[r, b]


@nb.njit(cache=True)
def _axpy(y, a, x, n, out):
    """out[:, :n] = y + a * x."""
    for i in range(y.shape[0]):
        for b in range(n):
            out[i, b] = y[i, b] + a * x[i, b]


@nb.njit(cache=True)
def _rk4_update(y, k, h, n):
    c = h / 6
    for i in range(y.shape[0]):
        for b in range(n):
            y[i, b] += c * (k[0, i, b] + 2 * k[1, i, b] + 2 * k[2, i, b] + k[3, i, b])


@nb.njit(cache=True)
def _col_norm2(psi, n):
    out = np.zeros(n)
    for i in range(psi.shape[0]):
        for b in range(n):
            v = psi[i, b]
            out[b] += v.real * v.real + v.imag * v.imag
    return out


class _Stepper:
    """Fixed-step RK4 for d psi/dt = -i/hbar H_eff(t) psi on the first n columns of a buffer."""

    def __init__(self, h_eff: SparseCombination, drive_coeff, dim: int, capacity: int):
        self.h_eff = h_eff
        self.coeff = drive_coeff
        self.k = np.zeros((4, dim, capacity), dtype=complex)
        self.tmp = np.zeros((dim, capacity), dtype=complex)

    def _deriv(self, t, psi, n, out):
        f = self.coeff(t)
        m = self.h_eff([1.0, f, np.conj(f)])
        _csr_cols(m.indptr, m.indices, m.data, psi, n, -1j / HBAR_MEV_PS, out)

    def step(self, t, h, psi, n):
        """Advance ``psi[:, :n]`` in place."""
        k, tmp = self.k, self.tmp
        self._deriv(t, psi, n, k[0])
        _axpy(psi, h / 2, k[0], n, tmp)
        self._deriv(t + h / 2, tmp, n, k[1])
        _axpy(psi, h / 2, k[1], n, tmp)
        self._deriv(t + h / 2, tmp, n, k[2])
        _axpy(psi, h, k[2], n, tmp)
        self._deriv(t + h, tmp, n, k[3])
        _rk4_update(psi, k, h, n)


@nb.njit(cache=True)
def _observe_cols(psi, n, half, rows, cols, data, mode_ptr, n_diag, top_mask,
                  bloch, means, number, top):
    """Observables of the normalised first ``n`` columns, one column at a time.

    Each column is reduced in the same order whatever ``n`` is, so a
    trajectory's record does not depend on how many share the buffer.
    """
    d = psi.shape[0]
    n_modes = n_diag.shape[0]
    for b in range(n):
        nrm = 0.0
        for i in range(d):
            v = psi[i, b]
            nrm += v.real * v.real + v.imag * v.imag
        inv = 1.0 / nrm
        c01 = 0j
        zu = 0.0
        zd = 0.0
        for i in range(half):
            u = psi[i, b]
            w = psi[half + i, b]
            c01 += u * np.conj(w)
            zu += u.real * u.real + u.imag * u.imag
            zd += w.real * w.real + w.imag * w.imag
        c01 *= inv
        bloch[b, 0] = 2 * c01.real
        bloch[b, 1] = -2 * c01.imag
        bloch[b, 2] = (zu - zd) * inv
        for k in range(n_modes):
            acc = 0j
            for e in range(mode_ptr[k], mode_ptr[k + 1]):
                acc += np.conj(psi[rows[e], b]) * data[e] * psi[cols[e], b]
            means[b, k] = acc * inv
            s_n = 0.0
            s_t = 0.0
            for i in range(d):
                v = psi[i, b]
                p = (v.real * v.real + v.imag * v.imag) * inv
                s_n += n_diag[k, i] * p
                s_t += top_mask[k, i] * p
            number[b, k] = s_n
            if k == 0 or s_t > top[b]:
                top[b] = s_t


class _Observer:
    """Bloch vector, <a_k>, <n_k> and top-level weight of the buffer columns."""

    def __init__(self, ops, cutoffs):
        self.half = ops.dim // 2
        coos = [a.tocoo() for a in ops.a]
        self.rows = np.concatenate([c.row for c in coos]).astype(np.int64)
        self.cols = np.concatenate([c.col for c in coos]).astype(np.int64)
        self.data = np.concatenate([c.data for c in coos]).astype(complex)
        self.ptr = np.cumsum([0] + [c.nnz for c in coos]).astype(np.int64)
        self.n_diag = np.ascontiguousarray(ops.n_diag)
        self.top = np.stack([ops.n_diag[k] == c - 1 for k, c in enumerate(cutoffs)]).astype(float)

    def __call__(self, psi: np.ndarray, n: int):
        m = self.n_diag.shape[0]
        bloch, means = np.empty((n, 3)), np.empty((n, m), dtype=complex)
        number, top = np.empty((n, m)), np.empty(n)
        _observe_cols(psi, n, self.half, self.rows, self.cols, self.data, self.ptr, self.n_diag,
                      self.top, bloch, means, number, top)
        return bloch, means, number, top


def trajectory_rngs(seed: int, n_traj: int, start: int = 0):
    """Independent generator per trajectory index, spawned from the master seed."""
    return [np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(i,))))
            for i in range(start, start + n_traj)]


def _run_chunk(psi0, ops, cutoffs, h_eff, coeff, a_ops, grid, per_out, rngs, phase):
    n = len(rngs)
    n_out = (len(grid) - 1) // per_out + 1
    n_modes = len(cutoffs)
    observe = _Observer(ops, cutoffs)
    bloch = np.empty((n_out, n, 3))
    means = np.empty((n_out, n, n_modes), dtype=complex)
    numbers = np.empty((n_out, n, n_modes))
    top = np.empty((n_out, n))
    jumps = np.zeros(n, dtype=np.int64)
    jump_hist = np.empty((n_out, n))

    thresh = np.array([g.random() for g in rngs])
    # trajectories that left the same column at the same step through the same
    # mode hold identical states until their next jump, so they share a column
    buf = np.zeros((ops.dim, n + 1), dtype=complex)
    buf[:, 0] = psi0
    col_of = np.zeros(n, dtype=np.int64)
    n_col = 1
    stepper = _Stepper(h_eff, coeff, ops.dim, n + 1)

    def record(j_out, t):
        obs = observe(buf, n_col)
        bloch[j_out] = obs[0][col_of]
        means[j_out] = obs[1][col_of] * phase(t)
        numbers[j_out] = obs[2][col_of]
        top[j_out] = obs[3][col_of]
        jump_hist[j_out] = jumps

    def draw_mode(i_traj, cum):
        """Pick the emitting mode for one trajectory and redraw its threshold."""
        g = rngs[i_traj]
        k = min(int(np.searchsorted(cum, g.random() * cum[-1], side="right")), len(cum) - 1)
        thresh[i_traj] = g.random()
        jumps[i_traj] += 1
        return k

    record(0, grid[0])
    for s in range(len(grid) - 1):
        stepper.step(grid[s], grid[s + 1] - grid[s], buf, n_col)
        n2 = _col_norm2(buf, n_col)
        if n2.min() < _NORM_FLOOR:
            raise ConvergenceError("trajectory norm underflow in no-jump evolution; reduce dt")
        fired = np.nonzero(n2[col_of] < thresh)[0]
        if len(fired):
            groups = {}
            for c in np.unique(col_of[fired]):
                psi = buf[:, c] / np.sqrt(n2[c])
                cum = np.cumsum(ops.n_diag @ (np.abs(psi) ** 2))
                for i_traj in fired[col_of[fired] == c]:
                    groups.setdefault((c, draw_mode(i_traj, cum)), [psi, []])[1].append(i_traj)
            left = np.bincount(col_of, minlength=n_col) - np.bincount(col_of[fired],
                                                                       minlength=n_col)
            free = list(np.nonzero(left == 0)[0])
            for (c, k), (psi, members) in groups.items():
                out = a_ops[k] @ psi
                if free:
                    slot = free.pop(0)
                else:
                    slot, n_col = n_col, n_col + 1
                buf[:, slot] = out / np.linalg.norm(out)
                col_of[members] = slot
            # close the gaps left by emptied columns
            while free:
                last = n_col - 1
                if free[-1] == last:
                    free.pop()
                else:
                    hole = free.pop(0)
                    buf[:, hole] = buf[:, last]
                    col_of[col_of == last] = hole
                n_col -= 1
        if (s + 1) % per_out == 0:
            record((s + 1) // per_out, grid[s + 1])
    return bloch, means, numbers, jump_hist, top


def evolve_trajectories(state: TrajectoryEnsemble, spec: HamiltonianSpec, settings: SolverSettings,
                        t_span=None, chunk: int | None = None) -> DynamicsRun:
    """Ensemble-averaged quantum-jump evolution with fixed-step RK4 of size ``settings.dt``.

    Observables are recorded on the RK4 grid at ``settings.n_output`` evenly
    spaced times; ``record.bloch_err`` holds per-component standard errors and
    ``record.loss`` the mean number of emitted photons.  ``chunk`` limits how
    many trajectories are held in memory at once and does not change the result.
    """
    cutoffs = tuple(state.cutoffs)
    ops = operator_set(cutoffs)
    if ops.dim > settings.max_dim:
        raise ValueError(f"Hilbert dimension {ops.dim} exceeds max_dim={settings.max_dim}")
    if state.psi0.shape != (ops.dim,):
        raise ValueError("state dimension does not match its cutoffs")
    if state.n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    t_span = spec.pulse.t_span if t_span is None else tuple(t_span)
    gamma = spec.gamma
    w_det = spec.delta_p / HBAR_MEV_PS
    n_tot = ops.n_diag.sum(axis=0)
    chi = spec.pulse.phase_rad

    _, h_spin, drive = hamiltonian_parts(spec, cutoffs)
    k_static = (h_spin - 0.5j * gamma * sp.diags(n_tot)).tocsr()
    h_eff = SparseCombination([k_static, drive.conj().T, drive])

    def coeff(t):
        return spec.pulse(t) * np.exp(1j * (chi + w_det * t))

    def phase(t):
        return np.exp(-1j * w_det * t)

    grid, per_out = rk4_grid(t_span, settings.dt, settings.n_output)
    psi0 = (state.psi0 * np.exp(1j * w_det * t_span[0] * n_tot)).astype(complex)
    a_ops = [a.tocsr() for a in ops.a]

    chunk = state.n_traj if chunk is None else max(1, int(chunk))
    parts = []
    for start in range(0, state.n_traj, chunk):
        count = min(chunk, state.n_traj - start)
        rngs = trajectory_rngs(state.seed, count, start)
        parts.append(_run_chunk(psi0, ops, cutoffs, h_eff, coeff, a_ops, grid, per_out, rngs,
                                phase))
    bloch, means, numbers, jumps, tops = (np.concatenate([p[i] for p in parts], axis=1)
                                          for i in range(5))
    # ensemble-averaged weight of the highest Fock level, worst time
    top = float(tops.mean(axis=1).max())

    n = state.n_traj
    err = bloch.std(axis=1, ddof=1) / np.sqrt(n) if n > 1 else np.zeros((bloch.shape[0], 3))
    diag = {"n_traj": n, "mean_jumps": float(jumps[-1].mean()), "top_fock": top,
            "steps": len(grid) - 1, "flags": []}
    if top > settings.top_fock_warn:
        warnings.warn(f"top Fock level population {top:.2e} exceeds {settings.top_fock_warn:g}; "
                      "increase fock_cutoff", RuntimeWarning, stacklevel=2)
        diag["flags"].append("cutoff_occupation")
    record = Record(
        t=grid[::per_out], bloch=bloch.mean(axis=1), mode_mean=means.mean(axis=1),
        mode_number=numbers.mean(axis=1), loss=jumps.mean(axis=1), gamma=gamma, bloch_err=err,
        meta={"solver": "trajectories", "n_traj": n, "seed": state.seed},
    )
    diag["bloch_err"] = err[-1].tolist()
    return DynamicsRun(record, None, spin_rho_from_bloch(record.bloch[-1]), diag)
