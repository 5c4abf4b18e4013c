"""Spin-polariton Hamiltonians and the three master-equation solvers."""

from .dense import evolve_dense
from .displaced import classical_amplitude, evolve_displaced
from .operators import (MODES, HamiltonianSpec, build_h_multi, build_h_single, hamiltonian_parts,
                        lindblad_rhs, operator_set, spin_couplings)
from .states import (SOLVERS, BranchCoherent, ConvergenceError, DenseDensityMatrix, DynamicsRun, Record,
                     SolverSettings, TrajectoryEnsemble, bloch_from_spin_rho, spin_rho_from_bloch)
from .trajectories import evolve_trajectories

__all__ = [
    "MODES", "SOLVERS", "BranchCoherent", "ConvergenceError", "DenseDensityMatrix", "DynamicsRun",
    "HamiltonianSpec", "Record", "SolverSettings", "TrajectoryEnsemble", "bloch_from_spin_rho",
    "build_h_multi", "build_h_single", "classical_amplitude", "evolve_dense", "evolve_displaced",
    "evolve_trajectories", "hamiltonian_parts", "lindblad_rhs", "operator_set", "spin_couplings",
    "spin_rho_from_bloch",
]
