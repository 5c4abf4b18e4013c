"""Time stepping shared by the deterministic solvers.

Both integrators hand every output-grid state to a callback instead of
storing the full history, since a dense state can be hundreds of MB.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.integrate import DOP853


def output_grid(t_span: tuple[float, float], n_output: int) -> np.ndarray:
    return np.linspace(t_span[0], t_span[1], n_output)


def rk4_grid(t_span: tuple[float, float], dt: float, n_output: int) -> tuple[np.ndarray, int]:
    """Step grid whose step count is a multiple of (n_output - 1).

    Returns the step times and the number of steps between outputs.
    """
    span = t_span[1] - t_span[0]
    per_out = max(1, math.ceil(span / dt / (n_output - 1)))
    n_steps = per_out * (n_output - 1)
    return np.linspace(t_span[0], t_span[1], n_steps + 1), per_out


def integrate(rhs: Callable, y0: np.ndarray, t_span, n_output: int, on_output: Callable,
              method: str = "DOP853", dt: float = 0.05, rtol: float = 1e-8,
              atol: float = 1e-10) -> dict:
    """Integrate y' = rhs(t, y), calling ``on_output(t, y)`` on an even grid.

    Returns integrator statistics.
    """
    t_out = output_grid(t_span, n_output)
    on_output(t_out[0], y0)
    if method == "RK4":
        grid, per_out = rk4_grid(t_span, dt, n_output)
        y = y0.copy()
        for i in range(len(grid) - 1):
            t, h = grid[i], grid[i + 1] - grid[i]
            k1 = rhs(t, y)
            k2 = rhs(t + h / 2, y + (h / 2) * k1)
            k3 = rhs(t + h / 2, y + (h / 2) * k2)
            k4 = rhs(t + h, y + h * k3)
            y = y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            if (i + 1) % per_out == 0:
                on_output(grid[i + 1], y)
        return {"method": "RK4", "steps": len(grid) - 1, "nfev": 4 * (len(grid) - 1)}

    solver = DOP853(rhs, t_span[0], y0, t_span[1], rtol=rtol, atol=atol)
    nxt, steps = 1, 0
    while solver.status == "running":
        msg = solver.step()
        steps += 1
        if solver.status == "failed":
            raise RuntimeError(f"integration failed: {msg}")
        if nxt < len(t_out) and t_out[nxt] <= solver.t:
            interp = solver.dense_output()
            while nxt < len(t_out) and t_out[nxt] <= solver.t:
                y = solver.y if t_out[nxt] >= solver.t else interp(t_out[nxt])
                on_output(t_out[nxt], y)
                nxt += 1
    return {"method": "DOP853", "steps": steps, "nfev": int(solver.nfev)}


class SparseCombination:
    """Evaluate sum_j c_j M_j for fixed sparse M_j with a shared sparsity pattern."""

    def __init__(self, mats):
        mats = [sp.csr_matrix(m) for m in mats]
        shape = mats[0].shape
        pattern = sum(abs(m) for m in mats)
        pattern = sp.csr_matrix(pattern)
        pattern.sum_duplicates()
        pattern.sort_indices()
        # mark pattern positions, then read each matrix on that pattern
        self._rows = np.repeat(np.arange(shape[0]), np.diff(pattern.indptr))
        self._cols = pattern.indices.copy()
        self._data = np.vstack([np.asarray(m[self._rows, self._cols]).ravel() for m in mats])
        self.matrix = sp.csr_matrix(
            (np.zeros(pattern.nnz, dtype=complex), pattern.indices.copy(), pattern.indptr.copy()),
            shape=shape,
        )

    def __call__(self, coeffs) -> sp.csr_matrix:
        self.matrix.data = np.asarray(coeffs, dtype=complex) @ self._data
        return self.matrix
