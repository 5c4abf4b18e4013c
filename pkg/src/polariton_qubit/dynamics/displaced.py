"""Displaced-frame solver for large coherent drive amplitudes.

Every mode is split as p_k = abar_k + b_k, where abar_k is the classical,
spin-independent response to the pump

    d abar_k/dt = -(i (delta_p abar_k + e^{i chi} Omega(t) w_k) + gamma abar_k / 2) / hbar.

The drive and loss terms linear in b cancel exactly and the residual problem
on spin x (small Fock spaces for b) is

    H' = delta_p sum b^dag b + sum_k Lambda_k (|abar_k|^2 + abar_k^* b_k + abar_k b_k^dag + b_k^dag b_k)

with loss gamma D[b_k], where Lambda_k is the 2x2 spin operator that multiplies
n_k in the full Hamiltonian.  The residual is propagated in the interaction
picture of delta_p sum b^dag b.

Branch amplitudes alpha_k / beta_k are the classical field amplitudes
conditioned on s_z = +1/2 / -1/2 (diagonal part of Lambda_k); their separation
feeds the which-path integral D = int gamma/hbar sum_k |alpha_k - beta_k|^2 dt.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
import scipy.sparse as sp

from ..constants import HBAR_MEV_PS
from .dense import _jump_tables, _lindblad_kernel
from .integrate import SparseCombination, integrate
from .operators import HamiltonianSpec, _embed, operator_set, spin_couplings
from .states import (BranchCoherent, ConvergenceError, DynamicsRun, Record, SolverSettings,
                     bloch_from_spin_rho)


def classical_amplitude(spec: HamiltonianSpec, t, extra_detuning=0.0,
                        rtol=1e-10, atol=1e-12):
    """Mean-field amplitude of every mode on the times ``t`` (first entry is the start, vacuum).

    ``extra_detuning`` (meV, scalar or per mode) adds to delta_p; it is used
    for the spin-conditioned branches.
    """
    t = np.asarray(t, dtype=float)
    w = np.asarray(spec.pump_weights, dtype=float)
    shift = np.broadcast_to(np.asarray(extra_detuning, dtype=float), w.shape)
    drive = np.exp(1j * spec.pulse.phase_rad) * w
    det = spec.delta_p + shift
    gamma = spec.gamma
    out = []

    def rhs(tt, y):
        return -(1j * (det * y + drive * spec.pulse(tt)) + 0.5 * gamma * y) / HBAR_MEV_PS

    integrate(rhs, np.zeros(len(w), dtype=complex), (t[0], t[-1]), len(t),
              lambda tt, y: out.append(np.array(y)), rtol=rtol, atol=atol)
    return np.array(out)


def evolve_displaced(state: BranchCoherent, spec: HamiltonianSpec, settings: SolverSettings,
                     t_span=None) -> DynamicsRun:
    """Mean field plus small residual master equation.

    The initial spin state is ``state.spin_rho``; the field starts in the
    coherent state ``state.alphas`` (mean field) with the residual in vacuum.
    Raises ``ConvergenceError`` when the residual top-level occupation exceeds
    ``settings.residual_abort``.
    """
    n_modes = spec.n_modes
    cutoffs = settings.residual_cutoffs(n_modes)
    ops = operator_set(cutoffs)
    dim = ops.dim
    if dim > settings.max_dim:
        raise ValueError(f"residual dimension {dim} exceeds max_dim={settings.max_dim}")
    t_span = spec.pulse.t_span if t_span is None else tuple(t_span)
    gamma = spec.gamma
    hb = HBAR_MEV_PS
    w_det = spec.delta_p / hb
    dims = ops.dims
    chi = spec.pulse.phase_rad
    pulse = spec.pulse
    w_pump = np.asarray(spec.pump_weights, dtype=float)

    lams = spin_couplings(spec)
    lam_full = [_embed(lam, 0, dims) for lam in lams]
    n_tot = ops.n_diag.sum(axis=0)
    k_static = sum(lf @ nk for lf, nk in zip(lam_full, ops.n))
    k_static = (k_static - 0.5j * gamma * sp.diags(n_tot)).tocsr()
    mats = [k_static] + lam_full + [lf @ ak for lf, ak in zip(lam_full, ops.a)] \
        + [lf @ ak.conj().T for lf, ak in zip(lam_full, ops.a)]
    h_eff = SparseCombination(mats)
    jumps = _jump_tables(cutoffs, ops.n_diag)
    # s_z-conditioned detuning shifts of the classical branches
    shift_up = np.array([lam[0, 0].real for lam in lams])
    shift_dn = np.array([lam[1, 1].real for lam in lams])
    a_diag = [(coo.row, coo.col, coo.data) for coo in (a.tocoo() for a in ops.a)]
    top_masks = [ops.n_diag[k] == c - 1 for k, c in enumerate(cutoffs)]

    m = n_modes
    i_bar, i_up, i_dn = slice(0, m), slice(m, 2 * m), slice(2 * m, 3 * m)
    i_d, i_loss, i_rho = 3 * m, 3 * m + 1, slice(3 * m + 2, None)
    coeffs = np.empty(1 + 3 * m, dtype=complex)
    coeffs[0] = 1.0
    drive_vec = np.exp(1j * chi) * w_pump

    def mean_b(rho):
        """<b_k> in the interaction picture."""
        return np.array([np.dot(data, rho[col, row]) for row, col, data in a_diag])

    work = np.empty((dim, dim), dtype=complex)

    def rhs(t, y):
        abar, aup, adn = y[i_bar], y[i_up], y[i_dn]
        rho = y[i_rho].reshape(dim, dim)
        om = pulse(t)
        dy = np.empty_like(y)
        dy[i_bar] = -(1j * (spec.delta_p * abar + drive_vec * om) + 0.5 * gamma * abar) / hb
        dy[i_up] = -(1j * ((spec.delta_p + shift_up) * aup + drive_vec * om) + 0.5 * gamma * aup) / hb
        dy[i_dn] = -(1j * ((spec.delta_p + shift_dn) * adn + drive_vec * om) + 0.5 * gamma * adn) / hb
        dy[i_d] = gamma / hb * np.sum(np.abs(aup - adn) ** 2)
        c = np.conj(abar) * np.exp(-1j * w_det * t)
        coeffs[1:1 + m] = np.abs(abar) ** 2
        coeffs[1 + m:1 + 2 * m] = c
        coeffs[1 + 2 * m:] = np.conj(c)
        mat = h_eff(coeffs)
        out = dy[i_rho].reshape(dim, dim)
        _lindblad_kernel(mat.indptr, mat.indices, mat.data, rho, *jumps, gamma, work, out)
        out /= hb
        diag = np.real(np.diagonal(rho))
        n_mean = np.abs(abar) ** 2 + 2 * np.real(c * mean_b(rho)) + ops.n_diag @ diag
        dy[i_loss] = gamma / hb * n_mean.sum()
        return dy

    rho0 = np.zeros((dim, dim), dtype=complex)
    half = dim // 2
    rho0[0, 0], rho0[0, half] = state.spin_rho[0, 0], state.spin_rho[0, 1]
    rho0[half, 0], rho0[half, half] = state.spin_rho[1, 0], state.spin_rho[1, 1]
    a0 = np.asarray(state.alphas, dtype=complex)
    if a0.shape != (m,):
        raise ValueError(f"expected {m} initial amplitudes")
    y0 = np.concatenate([a0, a0, a0, [0.0, 0.0], rho0.ravel()]).astype(complex)

    rec = {k: [] for k in ("t", "bloch", "mean", "number", "loss", "p_up", "up", "down",
                           "alpha", "beta", "abar")}
    diag = {"trace_drift": 0.0, "residual_top": 0.0, "residual_number": 0.0, "flags": []}
    last = {}

    def on_output(t, y):
        rho = y[i_rho].reshape(dim, dim)
        tr = np.trace(rho).real
        drift = abs(tr - 1)
        diag["trace_drift"] = max(diag["trace_drift"], drift)
        if drift > settings.trace_tol:
            raise ConvergenceError(f"residual trace drift {drift:.3e} at t={t:.3f} ps; reduce rtol")
        pops = np.real(np.diagonal(rho))
        top = max(pops[mask].sum() for mask in top_masks)
        diag["residual_top"] = max(diag["residual_top"], float(top))
        if top > settings.residual_abort:
            raise ConvergenceError(
                f"residual top-level occupation {top:.2e} at t={t:.3f} ps exceeds "
                f"{settings.residual_abort:g}; increase residual_cutoff to at least "
                f"{max(cutoffs) + 1}")
        abar = y[i_bar]
        ph = np.exp(-1j * w_det * t)
        b_mean = mean_b(rho) * ph
        nb_ = ops.n_diag @ pops
        diag["residual_number"] = max(diag["residual_number"], float(nb_.max()))
        spin = np.einsum("aibi->ab", rho.reshape(2, half, 2, half))
        p_up = spin[0, 0].real
        rec["t"].append(t)
        rec["bloch"].append(bloch_from_spin_rho(spin))
        rec["mean"].append(abar + b_mean)
        rec["number"].append(np.abs(abar) ** 2 + 2 * np.real(np.conj(abar) * b_mean) + nb_)
        rec["loss"].append(y[i_loss].real)
        rec["p_up"].append(p_up)
        rec["alpha"].append(y[i_up].copy())
        rec["beta"].append(y[i_dn].copy())
        rec["abar"].append(abar.copy())
        last["spin"], last["y"] = spin, y.copy()

    stats = integrate(rhs, y0, t_span, settings.n_output, on_output, method=settings.method,
                      dt=settings.dt, rtol=settings.rtol, atol=settings.atol)
    diag.update(stats)
    diag["dim"] = dim
    diag["residual_cutoffs"] = list(cutoffs)
    if diag["residual_top"] > settings.top_fock_warn:
        warnings.warn(f"residual top-level occupation {diag['residual_top']:.2e} exceeds "
                      f"{settings.top_fock_warn:g}", RuntimeWarning, stacklevel=2)
        diag["flags"].append("cutoff_occupation")

    y_end = last["y"]
    dist = float(y_end[i_d].real)
    coherence = math.exp(-0.5 * dist)
    diag["distinguishability"] = dist
    alphas, betas = np.array(rec["alpha"]), np.array(rec["beta"])
    record = Record(
        t=np.array(rec["t"]), bloch=np.array(rec["bloch"]), mode_mean=np.array(rec["mean"]),
        mode_number=np.array(rec["number"]), loss=np.array(rec["loss"]), gamma=gamma,
        p_up=np.array(rec["p_up"]), branch_up=alphas, branch_down=betas,
        meta={"solver": "displaced", "mean_field": np.array(rec["abar"])},
    )
    final = BranchCoherent(last["spin"], alphas[-1], betas[-1], coherence)
    return DynamicsRun(record, final, last["spin"], diag)
