import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polariton_qubit.bandstructure import (JX, JY, JZ, N_EFF_DEFAULT, LuttingerParams, QwGeometry,
                                           Wavevector, build_luttinger, incidence, inplane_wavevector,
                                           luttinger_entries, quantization_angle, quantization_curve,
                                           refract)

GAAS = LuttingerParams.gaas()
GEOM = QwGeometry()


# -- independent oracles ---------------------------------------------------

def char_poly(h):
    """Characteristic polynomial coefficients by Faddeev-LeVerrier (no eigensolver)."""
    n = h.shape[0]
    coeffs = [1.0 + 0j]
    m = np.zeros_like(h)
    for k in range(1, n + 1):
        m = h @ m + coeffs[-1] * np.eye(n)
        coeffs.append(-np.trace(h @ m) / k)
    return np.array(coeffs).real


def quartic_oracle(h):
    """Eigenvalues via roots of the characteristic quartic.

    Kramers symmetry makes the quartic a perfect square q(x)^2, so the double
    roots are taken from the quadratic square root q to avoid the sqrt(eps)
    loss of precision at repeated roots.
    """
    _, a3, a2, _, _ = char_poly(h)
    b = a3 / 2
    c = (a2 - b * b) / 2
    r = np.sort(np.roots([1.0, b, c]).real)
    return np.repeat(r, 2)


def jacobi_eigh(a, tol=1e-15, sweeps=50):
    """Cyclic Jacobi rotations for a real symmetric matrix."""
    a = np.array(a, dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    for _ in range(sweeps):
        off = math.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off < tol * max(1.0, np.abs(a).max()):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) < 1e-300:
                    continue
                th = 0.5 * math.atan2(2 * a[p, q], a[q, q] - a[p, p])
                c, s = math.cos(th), math.sin(th)
                j = np.eye(n)
                j[p, p] = j[q, q] = c
                j[p, q], j[q, p] = s, -s
                a = j.T @ a @ j
                v = v @ j
    return np.diag(a), v


def hermitian_jacobi(h):
    """Eigenpairs of a complex Hermitian matrix through its real 2n x 2n embedding."""
    n = h.shape[0]
    big = np.block([[h.real, -h.imag], [h.imag, h.real]])
    w, v = jacobi_eigh(big)
    order = np.argsort(w)
    return w[order], v[:n, order] + 1j * v[n:, order]


def phi_oracle(k, p):
    """Quantization tilt using Jacobi eigenvectors and a doublet projector."""
    h = build_luttinger(k, p)
    w, vecs = hermitian_jacobi(h)
    # each complex level appears 4 times in the embedding (Kramers x real embedding)
    groups = [vecs[:, 0:4], vecs[:, 4:8]]
    projectors = []
    for g in groups:
        # four real vectors span a two-dimensional complex subspace
        u, s, _ = np.linalg.svd(g)
        assert s[2] < 1e-8 * s[0]
        q = u[:, :2]
        projectors.append(q @ q.conj().T)
    hh = max(projectors, key=lambda pr: (pr[0, 0] + pr[3, 3]).real)
    m = hh @ JZ @ hh
    w2, v2 = hermitian_jacobi(m)
    psi = v2[:, -1]
    psi = psi / np.linalg.norm(psi)
    j = [np.vdot(psi, op @ psi).real for op in (JX, JY, JZ)]
    return math.atan2(math.hypot(j[0], j[1]), abs(j[2]))


wavevectors = st.builds(
    Wavevector,
    k_x=st.floats(0.0, 0.2, allow_nan=False),
    k_z=st.floats(0.05, 1.5, allow_nan=False),
)


# -- build_luttinger ---------------------------------------------------------

def test_kx_zero_is_diagonal_with_two_degenerate_pairs():
    k = Wavevector(0.0, GEOM.k_z)
    h = build_luttinger(k, GAAS)
    P, Q, L, M = luttinger_entries(k, GAAS)
    assert L == 0 and M == 0
    assert np.array_equal(h, np.diag(np.diag(h)))
    ev = np.linalg.eigvalsh(h)
    assert ev[0] == ev[1] and ev[2] == ev[3]
    assert ev[2] - ev[0] == pytest.approx(2 * abs(Q), rel=1e-12)


@settings(max_examples=1000, deadline=None)
@given(wavevectors)
def test_hermitian(k):
    h = build_luttinger(k, GAAS)
    assert np.array_equal(h, h.conj().T)


@settings(max_examples=200, deadline=None)
@given(wavevectors)
def test_kramers_degeneracy(k):
    ev = np.linalg.eigvalsh(build_luttinger(k, GAAS))
    scale = np.abs(ev).max()
    assert abs(ev[1] - ev[0]) <= 1e-12 * scale
    assert abs(ev[3] - ev[2]) <= 1e-12 * scale


def test_eigenvalues_match_quartic_oracle_at_reference_point():
    k = Wavevector(0.008, 0.628)
    h = build_luttinger(k, GAAS)
    np.testing.assert_allclose(np.linalg.eigvalsh(h), quartic_oracle(h), rtol=1e-9)


def test_eigenvalues_match_quartic_oracle_on_random_inputs():
    rng = np.random.default_rng(1)
    for _ in range(100):
        k = Wavevector(rng.uniform(0, 0.2), rng.uniform(0.05, 1.5))
        p = LuttingerParams(rng.uniform(2, 10), rng.uniform(0.5, 4), rng.uniform(0.5, 4))
        h = build_luttinger(k, p)
        np.testing.assert_allclose(np.linalg.eigvalsh(h), quartic_oracle(h), rtol=1e-9)


def test_closed_form_spectrum():
    k = Wavevector(0.05, 0.6)
    P, Q, L, M = luttinger_entries(k, GAAS)
    root = math.sqrt(Q * Q + abs(L) ** 2 + abs(M) ** 2)
    ev = np.linalg.eigvalsh(build_luttinger(k, GAAS))
    np.testing.assert_allclose(ev, [P - root, P - root, P + root, P + root], rtol=1e-12)


@pytest.mark.parametrize("kx,kz", [(math.nan, 0.6), (0.1, math.inf), (-0.1, 0.6), (0.1, 0.0)])
def test_wavevector_rejects_invalid(kx, kz):
    with pytest.raises(ValueError):
        Wavevector(kx, kz)


def test_params_validation():
    with pytest.raises(ValueError):
        LuttingerParams(0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        LuttingerParams(1.0, 1.0, 1.0, hbar2_2m0=-1.0)
    with pytest.raises(ValueError, match="unknown"):
        LuttingerParams.gaas("nope")


# -- quantization_angle --------------------------------------------------------

def test_phi_zero_at_normal_refraction():
    r = quantization_angle(0.0, GEOM, GAAS)
    assert r.phi == 0.0
    assert r.hh_lh_splitting > 0
    assert np.all(np.diff(r.eigenvalues) >= 0)


def test_phi_matches_jacobi_oracle():
    r = quantization_angle(0.1, GEOM, GAAS)
    k = Wavevector(inplane_wavevector(0.1, GEOM), GEOM.k_z)
    assert abs(r.phi - phi_oracle(k, GAAS)) <= 1e-6


@pytest.mark.parametrize("theta", [0.02, 0.5, 1.0, math.pi / 2])
def test_phi_matches_jacobi_oracle_across_range(theta):
    r = quantization_angle(theta, GEOM, GAAS)
    k = Wavevector(inplane_wavevector(theta, GEOM), GEOM.k_z)
    assert abs(r.phi - phi_oracle(k, GAAS)) <= 1e-6


def test_phi_at_grazing_has_expected_order():
    # the exact number depends on the unstated Luttinger set; see acceptance test
    phi = quantization_angle(math.pi / 2, GEOM, GAAS).phi
    assert 0.010 < phi < 0.020
    for name in ("vurgaftman2001", "lawaetz1971", "molenkamp1988", "skolnick1976"):
        assert 0.010 < quantization_angle(math.pi / 2, GEOM, LuttingerParams.gaas(name)).phi < 0.020


def test_phi_monotone_and_bounded():
    phi = quantization_curve(np.linspace(0, math.pi / 2, 100), GEOM, GAAS)
    assert phi[0] == 0.0
    assert np.all(np.diff(phi) >= 0)
    assert np.all((phi >= 0) & (phi <= math.pi / 2))


def test_phi_continuous_on_fine_grid():
    phi = quantization_curve(np.arange(0, math.pi / 2, 1e-3), GEOM, GAAS)
    assert np.max(np.abs(np.diff(phi))) <= 1e-3


def test_hh_lh_splitting_dominates_small_kx():
    r = quantization_angle(math.pi / 2, GEOM, GAAS)
    # about 2Q at k_x -> 0
    assert r.hh_lh_splitting > 50.0


def test_quantization_angle_rejects_out_of_range():
    with pytest.raises(ValueError):
        quantization_angle(-0.1, GEOM, GAAS)
    with pytest.raises(ValueError):
        quantization_angle(2.0, GEOM, GAAS)


# -- geometry ----------------------------------------------------------------

def test_refract_normal_incidence():
    assert refract(0.0, GEOM) == 0.0


def test_refract_calibration_pair():
    assert N_EFF_DEFAULT == math.sin(math.pi / 6) / math.sin(0.1)
    assert N_EFF_DEFAULT == pytest.approx(5.0085, abs=2e-4)  # 5.0085 is the rounded value
    assert refract(math.pi / 6, GEOM) == pytest.approx(0.1, abs=1e-12)


def test_refract_small_angle():
    g = QwGeometry(n_eff=5.0085)
    expected = math.asin(math.sin(0.05) / 5.0085)
    assert refract(0.05, g) == pytest.approx(expected, rel=1e-14)
    # 0.0099793 rounds to 0.00998
    assert refract(0.05, g) == pytest.approx(0.009982, abs=5e-6)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 1.5))
def test_incidence_inverts_refract(theta_i):
    assert incidence(refract(theta_i, GEOM), GEOM) == pytest.approx(theta_i, abs=1e-12)


def test_refract_domain():
    with pytest.raises(ValueError):
        refract(math.pi / 2, GEOM)
    with pytest.raises(ValueError):
        incidence(0.5, GEOM)


def test_inplane_wavevector():
    assert inplane_wavevector(0.0, GEOM) == 0.0
    kmax = inplane_wavevector(math.pi / 2, GEOM)
    assert kmax == pytest.approx(2 * math.pi / 786.0, rel=1e-14)
    assert kmax / GEOM.k_z == pytest.approx(10.0 / 786.0, rel=1e-12)
    assert inplane_wavevector(0.1, GEOM) == pytest.approx(7.981e-4, rel=1e-3)


@pytest.mark.parametrize("kw", [{"w_nm": 0}, {"lambda_nm": -1}, {"n_eff": 0.5}])
def test_geometry_validation(kw):
    with pytest.raises(ValueError):
        QwGeometry(**kw)
