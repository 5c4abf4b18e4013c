"""Valence-band quantization direction from the 4x4 Luttinger Hamiltonian.

Basis ordering is J_z = (3/2, 1/2, -1/2, -3/2); energies in meV, lengths in nm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np
import yaml

from .constants import HBAR2_OVER_2M0_MEV_NM2

_S3 = math.sqrt(3.0)
_JP = np.array([[0, _S3, 0, 0], [0, 0, 2, 0], [0, 0, 0, _S3], [0, 0, 0, 0]], dtype=complex)
JX = (_JP + _JP.T) / 2
JY = (_JP - _JP.T) / 2j
JZ = np.diag([1.5, 0.5, -0.5, -1.5]).astype(complex)

#: Snell index reproducing theta_r = 0.1 rad at theta_i = pi/6.
N_EFF_DEFAULT = math.sin(math.pi / 6) / math.sin(0.1)


@dataclass(frozen=True)
class LuttingerParams:
    gamma1: float
    gamma2: float
    gamma3: float
    hbar2_2m0: float = HBAR2_OVER_2M0_MEV_NM2  # meV nm^2

    def __post_init__(self):
        if not self.gamma1 > 0:
            raise ValueError("gamma1 must be positive")
        if not self.hbar2_2m0 > 0:
            raise ValueError("hbar^2/2m0 prefactor must be positive")

    @classmethod
    def gaas(cls, name: str | None = None) -> "LuttingerParams":
        """Literature GaAs parameters from the bundled data file."""
        table = _gaas_table()
        name = name or table["default"]
        try:
            g = table["sets"][name]
        except KeyError:
            raise ValueError(f"unknown GaAs parameter set {name!r}; "
                             f"available: {sorted(table['sets'])}") from None
        return cls(g["gamma1"], g["gamma2"], g["gamma3"])


@lru_cache(maxsize=1)
def _gaas_table() -> dict:
    text = resources.files("polariton_qubit.data").joinpath("gaas_luttinger.yaml").read_text()
    return yaml.safe_load(text)


@dataclass(frozen=True)
class Wavevector:
    k_x: float  # 1/nm
    k_z: float  # 1/nm

    def __post_init__(self):
        if not (math.isfinite(self.k_x) and math.isfinite(self.k_z)):
            raise ValueError("wavevector components must be finite")
        if self.k_x < 0:
            raise ValueError("k_x must be >= 0")
        if not self.k_z > 0:
            raise ValueError("k_z must be > 0")

    @property
    def k2(self) -> float:
        return self.k_x**2 + self.k_z**2


@dataclass(frozen=True)
class QwGeometry:
    w_nm: float = 10.0
    lambda_nm: float = 786.0
    n_eff: float = N_EFF_DEFAULT

    def __post_init__(self):
        if not self.w_nm > 0:
            raise ValueError("QW width must be positive")
        if not self.lambda_nm > 0:
            raise ValueError("wavelength must be positive")
        if not self.n_eff >= 1:
            raise ValueError("n_eff must be >= 1")

    @property
    def k_z(self) -> float:
        return 2 * math.pi / self.w_nm


@dataclass(frozen=True)
class QuantizationResult:
    phi: float
    hh_lh_splitting: float
    eigenvalues: np.ndarray
    k_x: float = 0.0
    k_z: float = 0.0


def luttinger_entries(k: Wavevector, p: LuttingerParams) -> tuple[float, float, float, float]:
    """(P, Q, L, M) in meV."""
    c = p.hbar2_2m0
    P = -c * p.gamma1 * k.k2
    Q = c * p.gamma2 * (2 * k.k_z**2 - k.k_x**2)
    L = c * 2 * _S3 * p.gamma3 * k.k_x * k.k_z
    M = c * _S3 * (p.gamma2 + p.gamma3) / 2 * k.k_x**2
    return P, Q, L, M


def build_luttinger(k: Wavevector, p: LuttingerParams) -> np.ndarray:
    """4x4 Luttinger matrix (meV) for in-plane k_x and confinement k_z."""
    P, Q, L, M = luttinger_entries(k, p)
    Lc, Mc = np.conj(L), np.conj(M)
    return np.array([
        [P + Q, L, M, 0],
        [Lc, P - Q, 0, M],
        [Mc, 0, P - Q, -L],
        [0, Mc, -Lc, P + Q],
    ], dtype=complex)


def angular_momentum_direction(psi: np.ndarray) -> np.ndarray:
    """<J> of a normalised 4-spinor."""
    return np.array([np.vdot(psi, op @ psi).real for op in (JX, JY, JZ)])


def quantization_angle_at(k: Wavevector, p: LuttingerParams) -> QuantizationResult:
    h = build_luttinger(k, p)
    evals, evecs = np.linalg.eigh(h)
    hh_weight = np.abs(evecs[0]) ** 2 + np.abs(evecs[3]) ** 2
    lower, upper = (0, 1), (2, 3)
    pair = max((lower, upper), key=lambda pr: hh_weight[list(pr)].sum())
    other = upper if pair == lower else lower
    split = abs(evals[list(pair)].mean() - evals[list(other)].mean())
    if k.k_x == 0:
        # degenerate doublet: continuity from k_x -> 0+ puts the axis on z
        return QuantizationResult(0.0, float(split), evals, k.k_x, k.k_z)
    basis = evecs[:, list(pair)]
    jz = basis.conj().T @ JZ @ basis
    _, u = np.linalg.eigh(jz)
    psi = basis @ u[:, -1]
    j = angular_momentum_direction(psi)
    phi = math.atan2(math.hypot(j[0], j[1]), abs(j[2]))
    return QuantizationResult(phi, float(split), evals, k.k_x, k.k_z)


def inplane_wavevector(theta_r: float, geom: QwGeometry) -> float:
    """k_x = (2 pi / lambda) sin(theta_r) in 1/nm (vacuum wavevector)."""
    return 2 * math.pi / geom.lambda_nm * math.sin(theta_r)


def quantization_angle(theta_r: float, geom: QwGeometry, p: LuttingerParams) -> QuantizationResult:
    """Tilt phi of the heavy-hole quantization axis at refraction angle ``theta_r``."""
    if not 0 <= theta_r <= math.pi / 2 + 1e-12:
        raise ValueError("theta_r must lie in [0, pi/2]")
    k = Wavevector(inplane_wavevector(theta_r, geom), geom.k_z)
    return quantization_angle_at(k, p)


def quantization_curve(theta_r, geom: QwGeometry, p: LuttingerParams) -> np.ndarray:
    return np.array([quantization_angle(float(t), geom, p).phi for t in np.atleast_1d(theta_r)])


def refract(theta_i: float, geom: QwGeometry) -> float:
    """Refraction angle from Snell's law sin(theta_i) = n_eff sin(theta_r)."""
    if not 0 <= theta_i < math.pi / 2:
        raise ValueError("theta_i must lie in [0, pi/2)")
    return math.asin(math.sin(theta_i) / geom.n_eff)


def incidence(theta_r: float, geom: QwGeometry) -> float:
    """Inverse of ``refract``."""
    s = geom.n_eff * math.sin(theta_r)
    if not 0 <= s < 1:
        raise ValueError("theta_r beyond the critical angle for this n_eff")
    return math.asin(s)
