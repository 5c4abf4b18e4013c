"""Physical constants in the package unit system (meV, ps, nm)."""

from scipy import constants as _c

#: Reduced Planck constant in meV*ps.
HBAR_MEV_PS = _c.hbar / _c.e * 1e3 * 1e12

#: hbar^2 / (2 m0) in meV*nm^2.
HBAR2_OVER_2M0_MEV_NM2 = _c.hbar**2 / (2 * _c.m_e) / _c.e * 1e3 * 1e18

#: h*c in meV*nm, for photon energy from wavelength.
HC_MEV_NM = _c.h * _c.c / _c.e * 1e3 * 1e9
