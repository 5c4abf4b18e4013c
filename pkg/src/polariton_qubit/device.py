"""Experimental parameter model: detuning, coupling, loss, pump pulse, spot size.

Energies are in meV, the exchange coupling ``V`` in micro-eV, times in ps and
the pump spot radius in micrometres.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DeviceConfig",
    "PumpPulse",
    "ScalingModel",
    "PUMP_POWER_CALIBRATION",
    "calibrate_cavity_curvature",
    "coupling_from_radius",
    "gamma_from_q",
    "hopfield_coeff",
    "hopfield_from_detuning",
    "pump_envelope",
    "pump_intensity",
    "pump_power",
]

# Anchor of the intensity model: 600 meV peak drive on a 6 um spot -> 7.9 mW/um^2.
_POWER_ANCHOR = (600.0, 6.0, 7.9)

#: Prefactor C in I = C * Omega0^2 / (pi R^2), units mW / meV^2.
PUMP_POWER_CALIBRATION = _POWER_ANCHOR[2] * math.pi * _POWER_ANCHOR[1] ** 2 / _POWER_ANCHOR[0] ** 2


def hopfield_from_detuning(detuning, rabi_split):
    """Excitonic amplitude of the lower polariton for cavity-exciton detuning.

    ``detuning`` is E_cavity - E_exciton and ``rabi_split`` is 2g, both in meV.
    Works elementwise on arrays.
    """
    detuning = np.asarray(detuning, dtype=float)
    h = np.hypot(detuning, rabi_split)
    # photon weight 1 - r^2 written without cancellation for either sign of detuning
    small = 0.5 * rabi_split**2 / (h * (h + np.abs(detuning)))
    r2 = np.where(detuning >= 0, 1.0 - small, small)
    out = np.sqrt(r2)
    return float(out) if out.ndim == 0 else out


def calibrate_cavity_curvature(k_x: float, r_target: float, rabi_split: float,
                               detuning0: float = 0.0) -> float:
    """Quadratic cavity dispersion coefficient (meV nm^2) giving ``r_target`` at ``k_x``."""
    if not 1 / math.sqrt(2) <= r_target < 1:
        raise ValueError("r_target must lie in [1/sqrt(2), 1) for a flat exciton")
    x = 2 * r_target**2 - 1
    detuning = x * rabi_split / math.sqrt(1 - x * x)
    return (detuning - detuning0) / k_x**2


# k_x at theta_r = 0.1 rad for 786 nm excitation
_K_X_OPERATING = 2 * math.pi / 786.0 * math.sin(0.1)
DEFAULT_RABI_SPLIT_MEV = 5.0
DEFAULT_CAVITY_CURVATURE = calibrate_cavity_curvature(_K_X_OPERATING, 0.75, DEFAULT_RABI_SPLIT_MEV)


@dataclass(frozen=True)
class PumpPulse:
    """Gaussian pump envelope Omega(t) = omega0 * exp(-(t - t_center)^2 / tau^2).

    ``window`` is the simulated span in units of ``tau``; the default 4 covers
    [t_center - 2 tau, t_center + 2 tau].  ``phase_rad`` is a common phase on
    both beams and is physically irrelevant (gauge).
    """

    omega0_mev: float
    tau_ps: float
    t_center_ps: float = 0.0
    window: float = 4.0
    phase_rad: float = 0.0

    def __post_init__(self):
        if not self.omega0_mev >= 0:
            raise ValueError(f"omega0_mev must be >= 0, got {self.omega0_mev}")
        if not self.tau_ps > 0:
            raise ValueError(f"tau_ps must be > 0, got {self.tau_ps}")
        if not self.window >= 2:
            raise ValueError(f"window must be >= 2, got {self.window}")

    @property
    def t_span(self) -> tuple[float, float]:
        half = 0.5 * self.window * self.tau_ps
        return (self.t_center_ps - half, self.t_center_ps + half)

    def __call__(self, t):
        return pump_envelope(t, self)


def pump_envelope(t, pulse: PumpPulse):
    """Drive amplitude in meV at time ``t`` (ps); scalar or array."""
    x = (np.asarray(t, dtype=float) - pulse.t_center_ps) / pulse.tau_ps
    out = pulse.omega0_mev * np.exp(-x * x)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DeviceConfig:
    """Operating point of the cavity, quantum well and trapped spin.

    ``phi_rad`` overrides the hole quantization tilt; leave it ``None`` to
    derive it from the Luttinger model at ``theta_r_rad``.
    """

    delta_p_mev: float = 6.0
    v_uev: float = 0.25
    gamma_mev: float = 0.3
    r_um: float = 6.0
    r_mirror: float = 0.999
    r_hopfield: float = 0.75
    theta_r_rad: float = 0.1
    phi_rad: float | None = None
    rabi_split_mev: float = DEFAULT_RABI_SPLIT_MEV
    cavity_detuning_mev: float = 0.0
    cavity_curvature_mev_nm2: float = DEFAULT_CAVITY_CURVATURE
    cavity_q: float = 3000.0
    photon_energy_mev: float = 1577.4
    photon_lifetime_ps: float | None = None

    def __post_init__(self):
        checks = {
            "delta_p_mev": self.delta_p_mev > 0,
            "v_uev": self.v_uev > 0,
            "gamma_mev": self.gamma_mev > 0,
            "r_um": self.r_um > 0,
            "r_hopfield": 0 < self.r_hopfield < 1,
            "rabi_split_mev": self.rabi_split_mev > 0,
            "theta_r_rad": 0 <= self.theta_r_rad <= math.pi / 2,
        }
        bad = [k for k, ok in checks.items() if not ok]
        if bad:
            raise ValueError(f"invalid device parameters: {', '.join(bad)}")

    @property
    def v_mev(self) -> float:
        return self.v_uev * 1e-3

    @property
    def tau_photon_ps(self) -> float:
        """Photon lifetime; explicit value or hbar/gamma."""
        from .constants import HBAR_MEV_PS

        if self.photon_lifetime_ps is not None:
            return self.photon_lifetime_ps
        return HBAR_MEV_PS / self.gamma_mev


def hopfield_coeff(k_x, cfg: DeviceConfig):
    """Exciton Hopfield amplitude of the lower polariton at in-plane wavevector ``k_x`` (1/nm)."""
    k_x = np.asarray(k_x, dtype=float)
    detuning = cfg.cavity_detuning_mev + cfg.cavity_curvature_mev_nm2 * k_x**2
    return hopfield_from_detuning(detuning, cfg.rabi_split_mev)


def gamma_from_q(photon_energy_mev: float, q: float) -> float:
    """Cavity linewidth hbar*omega/Q in meV.  Informational only."""
    return photon_energy_mev / q


def pump_intensity(omega_mev, r_um: float, calibration: float = PUMP_POWER_CALIBRATION):
    """Pump intensity in mW/um^2 for drive amplitude ``omega_mev`` on a spot of radius ``r_um``."""
    return calibration * np.asarray(omega_mev, dtype=float) ** 2 / (math.pi * r_um**2)


def pump_power(pulse: PumpPulse, cfg: DeviceConfig,
               calibration: float = PUMP_POWER_CALIBRATION) -> float:
    """Peak pump intensity (mW/um^2) of ``pulse`` on the device spot."""
    return float(pump_intensity(pulse.omega0_mev, cfg.r_um, calibration))


@dataclass(frozen=True)
class ScalingModel:
    """Spot-radius scaling of exchange coupling and loss.

    V = v_anchor * (r_anchor / R)^a and
    gamma = gamma_mirror + (gamma_anchor - gamma_mirror) * (r_anchor / R)^b.
    The exponents are model assumptions, not measured data.
    """

    r_anchor_um: float = 6.0
    v_anchor_uev: float = 0.2
    gamma_anchor_mev: float = 0.3
    gamma_mirror_mev: float = 0.15
    a: float = 2.0
    b: float = 1.0

    def __post_init__(self):
        if not 0 <= self.gamma_mirror_mev <= self.gamma_anchor_mev:
            raise ValueError("need 0 <= gamma_mirror_mev <= gamma_anchor_mev")


def coupling_from_radius(r_um: float, model: ScalingModel | None = None) -> tuple[float, float]:
    """Return (V in ueV, gamma in meV) for spot radius ``r_um``."""
    model = model or ScalingModel()
    if not r_um > 0:
        raise ValueError(f"spot radius must be positive, got {r_um}")
    s = model.r_anchor_um / r_um
    v = model.v_anchor_uev * s**model.a
    gamma = model.gamma_mirror_mev + (model.gamma_anchor_mev - model.gamma_mirror_mev) * s**model.b
    return v, gamma
