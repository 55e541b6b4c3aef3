"""Pair couplings: closed-form values, limits, matrix assembly symmetry."""
import numpy as np
import pytest

import eitcloud as ec


def test_scalar_green_closed_form_point():
    # gamma_n e^{ikr} / (i k r) at kr = 2 pi is purely imaginary
    value = ec.scalar_green(0.5, 2.0 * np.pi)
    assert value == pytest.approx(-1j / (4.0 * np.pi), rel=1e-14)


def test_scalar_green_magnitude_and_phase():
    rng = np.random.default_rng(1)
    kr = rng.uniform(0.2, 40.0, 50)
    g = ec.scalar_green(0.3, kr)
    assert np.allclose(np.abs(g), 0.3 / kr, rtol=1e-13)
    # G * i kr * e^{-ikr} recovers the rate prefactor
    assert np.allclose(g * 1j * kr * np.exp(-1j * kr), 0.3, rtol=1e-13)


def test_vectorial_far_field_ratio():
    kr = 200.0
    ratio_t = ec.vectorial_green(0.5, kr, 0.0) / ec.scalar_green(0.5, kr)
    assert abs(ratio_t) == pytest.approx(1.5, abs=2e-2)
    c = 0.6
    ratio_o = ec.vectorial_green(0.5, kr, c) / ec.scalar_green(0.5, kr)
    assert abs(ratio_o) == pytest.approx(1.5 * (1.0 - c * c), abs=2e-2)


def test_vectorial_near_field_cubed_divergence():
    kr = 1e-3
    g = ec.vectorial_green(0.5, kr, 0.0)
    # transverse orientation: |G| -> (3 gamma / 2) / (kr)^3
    assert abs(g) * kr**3 / (1.5 * 0.5) == pytest.approx(1.0, rel=1e-3)


def test_vectorial_equals_scalar_at_magic_orientation():
    # at (z/r)^2 = 1/3 the near-field terms cancel and the angular factor
    # reduces the vectorial coupling to the scalar one at every distance
    c = 1.0 / np.sqrt(3.0)
    for kr in (0.05, 0.7, 3.0, 25.0):
        assert ec.vectorial_green(0.4, kr, c) == pytest.approx(
            ec.scalar_green(0.4, kr), rel=1e-12)


def test_domain_errors():
    with pytest.raises(ValueError):
        ec.scalar_green(0.5, 0.0)
    with pytest.raises(ValueError):
        ec.vectorial_green(0.5, -1.0, 0.0)
    with pytest.raises(ValueError):
        ec.vectorial_green(0.5, 1.0, 1.5)


@pytest.mark.parametrize("mode", ["scalar", "vectorial"])
def test_build_matrices_symmetric_zero_diagonal(mode):
    cloud = ec.sample_cloud(8.0, 8.0, 0.05, seed=13)
    params = ec.LambdaParams(omega1=0.1, omega2=0.5, kernel_mode=mode)
    m = ec.build_matrices(cloud, params)
    for g in (m.g1, m.g2):
        assert g.shape == (cloud.atom_count, cloud.atom_count)
        assert g.dtype == np.complex128
        assert np.array_equal(g, g.T)
        assert np.all(np.diag(g) == 0.0)
    assert m.mode == mode


def test_none_mode_exact_zeros():
    cloud = ec.sample_cloud(8.0, 8.0, 0.05, seed=13)
    params = ec.LambdaParams(omega1=0.1, omega2=0.5, kernel_mode="none")
    m = ec.build_matrices(cloud, params)
    assert np.all(m.g1 == 0.0)
    assert np.all(m.g2 == 0.0)
    assert m.mode == "none"


def test_matrix_entries_match_pair_functions():
    cloud = ec.sample_cloud(8.0, 8.0, 0.05, seed=21)
    i, j = 2, 11
    diff = cloud.positions[i] - cloud.positions[j]
    r = float(np.linalg.norm(diff))
    c = float(diff[2] / r)
    p_s = ec.LambdaParams(omega1=0.1, omega2=0.5, gamma1_frac=0.3,
                          gamma2_frac=0.7, kernel_mode="scalar")
    m_s = ec.build_matrices(cloud, p_s)
    assert m_s.g1[i, j] == pytest.approx(ec.scalar_green(0.3, r), rel=1e-13)
    assert m_s.g2[i, j] == pytest.approx(ec.scalar_green(0.7, r), rel=1e-13)
    p_v = ec.LambdaParams(omega1=0.1, omega2=0.5, gamma1_frac=0.3,
                          gamma2_frac=0.7, kernel_mode="vectorial")
    m_v = ec.build_matrices(cloud, p_v)
    assert m_v.g1[i, j] == pytest.approx(
        ec.vectorial_green(0.3, r, c), rel=1e-13)


def test_second_transition_wavenumber_scaling():
    cloud = ec.sample_cloud(8.0, 8.0, 0.05, seed=21)
    i, j = 4, 9
    r = float(np.linalg.norm(cloud.positions[i] - cloud.positions[j]))
    params = ec.LambdaParams(omega1=0.1, omega2=0.5, k2_over_k1=2.0,
                             kernel_mode="scalar")
    m = ec.build_matrices(cloud, params)
    assert m.g2[i, j] == pytest.approx(ec.scalar_green(0.5, 2.0 * r),
                                       rel=1e-13)
    # transition 1 stays at the probe wavenumber
    assert m.g1[i, j] == pytest.approx(ec.scalar_green(0.5, r), rel=1e-13)


def test_kernel_modes_frozen_set():
    assert set(ec.KERNEL_MODES) == {"none", "scalar", "vectorial"}
    with pytest.raises(ValueError):
        ec.LambdaParams(omega1=0.1, omega2=0.5, kernel_mode="bogus")
