import math
import warnings

import numpy as np
import pytest
from scipy import stats

from pshw import thermal as th
from pshw.core import ManyBodyState, make_grid


def quiet_grid(*a, **k):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return make_grid(*a, **k)


def test_thermal_wavelength_standard_form():
    # h / sqrt(2 pi m kT) with h = 2 pi
    assert th.thermal_wavelength(1.0) == pytest.approx(2 * np.pi / np.sqrt(2 * np.pi))


def test_large_beta_gives_constant():
    g = make_grid(1, 1, 32, 10.0)
    st = th.build_thermal_state(g, th.ThermalSpec(1e6, 4, 0))
    a = st.amplitude
    assert np.max(np.abs(a - a.mean())) < 1e-10 * np.abs(a).max()


def test_mean_energy_mode_sum_oracle():
    g = make_grid(1, 1, 64, 10.0)
    spec = th.ThermalSpec(1.0, 16, 3)
    st = th.build_thermal_state(g, spec)
    k = 2 * np.pi * np.arange(-16, 17) / 10.0
    E = k**2 / 2
    w = np.exp(-2 * E)
    oracle = np.sum(E * w) / np.sum(w)
    prob = np.abs(th.momentum_coefficients(st)) ** 2
    measured = np.sum(prob * th.kinetic_phase_energy(st))
    assert abs(measured - oracle) < 1e-10


def test_fermi_diagonal_vanishes():
    g = make_grid(1, 2, 64, 20.0)
    st = th.build_thermal_state(g, th.ThermalSpec(1.0, 20, 1, "fermi"))
    diag = np.abs(np.diagonal(st.amplitude))
    assert diag.max() < 1e-10 * np.abs(st.amplitude).max()


@pytest.mark.parametrize("symmetry", ["none", "bose", "fermi"])
def test_occupancy_law_on_coefficients(symmetry):
    g = make_grid(1, 2, 64, 20.0)
    spec = th.ThermalSpec(1.0, 16, 5, symmetry)
    c = th.thermal_coefficients(g, spec)
    E = th.mode_energies(g, 16, (1.0, 1.0))
    nz = np.abs(c) > 0
    w = np.abs(c[nz]) ** 2 * np.exp(2 * (E[nz] - E.min()))
    assert np.ptp(w) / w.mean() < 1e-10
    st = th.build_thermal_state(g, spec)
    assert th.occupancy_law_residual(st, 1.0) < 1e-8


def test_bose_thermal_state_exchange_even():
    from pshw.core import exchange_residual

    g = make_grid(1, 3, 16, 8.0)
    st = th.build_thermal_state(g, th.ThermalSpec(2.0, 4, 0, "bose"))
    assert exchange_residual(st, 0, 1) < 1e-10
    assert exchange_residual(st, 1, 2) < 1e-10


def test_truncation_warning():
    g = make_grid(1, 1, 64, 40.0)
    with pytest.warns(UserWarning, match="tail mass"):
        th.build_thermal_state(g, th.ThermalSpec(0.05, 4, 0))


def test_seed_determinism():
    g = make_grid(1, 2, 32, 10.0)
    a = th.build_thermal_state(g, th.ThermalSpec(1.0, 8, 11)).amplitude
    b = th.build_thermal_state(g, th.ThermalSpec(1.0, 8, 11)).amplitude
    assert np.array_equal(a, b)


def test_momentum_spectrum_plane_wave_and_sum():
    g = make_grid(1, 1, 64, 2 * np.pi)
    x = g.axis_coords(0)
    st = ManyBodyState.from_amplitude(g, np.exp(3j * x))
    sp = th.momentum_spectrum(st)
    assert sp.occupancy.sum() == pytest.approx(1.0, abs=1e-8)
    assert sp.k[np.argmax(sp.occupancy)] == pytest.approx(3.0)
    assert np.count_nonzero(sp.occupancy > 1e-12) == 1
    g2 = make_grid(1, 2, 32, 10.0)
    st2 = th.build_thermal_state(g2, th.ThermalSpec(1.0, 8, 0))
    assert th.momentum_spectrum(st2).occupancy.sum() == pytest.approx(2.0, abs=1e-8)


def test_gaussian_packet_spectrum_width():
    g = make_grid(1, 1, 512, 80.0)
    x = g.axis_coords(0)
    sigma = 1.3
    st = ManyBodyState.from_amplitude(g, np.exp(-(x**2) / (4 * sigma**2)))
    p = th.momentum_marginals(st)[0]
    k = g.wavenumbers(0)
    assert np.sqrt(np.sum(p * k**2)) == pytest.approx(1 / (2 * sigma), rel=1e-6)


def test_born_chi2_against_construction_law():
    g = make_grid(1, 2, 64, 20.0)
    ps = []
    for seed in range(8):
        st = th.build_thermal_state(g, th.ThermalSpec(1.0, 16, seed, "none"))
        ps.append(th.occupancy_chi2(st, 1.0, 4000, seed)[1])
    assert stats.combine_pvalues(ps).pvalue > 0.01
    # a wrong beta is rejected
    st = th.build_thermal_state(g, th.ThermalSpec(1.0, 16, 0, "none"))
    assert th.occupancy_chi2(st, 0.7, 4000, 0)[1] < 1e-6


# -- equilibration ------------------------------------------------------------------


def test_equilibration_thermal_passes():
    g = make_grid(1, 2, 128, 40.0)
    st = th.build_thermal_state(g, th.ThermalSpec(1.0, 50, 1))
    rep = th.equilibration_report(st, 16 * g.spacing[0])
    assert rep.passed, rep.ratios
    assert np.allclose(rep.ratios * rep.ratios.T, 1.0)


def test_equilibration_plane_wave_fails():
    g = make_grid(1, 2, 64, 2 * np.pi)
    x1 = g.config_coord(0, 0)
    amp = np.exp(2j * x1) * np.ones(g.shape)
    st = ManyBodyState.from_amplitude(g, amp)
    rep = th.equilibration_report(st, 4 * g.spacing[0])
    assert rep.status == "fail"
    assert not np.isfinite(rep.ratios[0, 1])


def test_equilibration_real_eigenstate_no_currents():
    g = make_grid(1, 2, 64, 2 * np.pi)
    amp = np.cos(2 * g.config_coord(0, 0)) * np.cos(3 * g.config_coord(1, 0))
    st = ManyBodyState.from_amplitude(g, amp)
    rep = th.equilibration_report(st, 4 * g.spacing[0])
    assert rep.status == "no currents" and rep.passed is None


def test_equilibration_width_validation():
    g = make_grid(1, 2, 32, 10.0)
    st = th.build_thermal_state(g, th.ThermalSpec(1.0, 8, 0))
    with pytest.raises(ValueError):
        th.equilibration_report(st, 0.5 * g.spacing[0])


# -- kinetic fill -------------------------------------------------------------------


def test_fill_flat_basin():
    U = np.zeros(100)
    E, K = th.kinetic_fill_profile(U, 5.0, cell_volume=0.1)
    assert E == pytest.approx(5.0 / 10.0, rel=1e-12)
    assert np.allclose(K, K[0])


def test_fill_harmonic_closed_form():
    x = np.linspace(-10, 10, 200001)
    dx = x[1] - x[0]
    E, K = th.kinetic_fill_profile(x**2 / 2, 1.0, dx)
    # closed form: int (E - x^2/2)_+ dx = (4 sqrt2 / 3) E^{3/2}
    oracle = (3 / (4 * np.sqrt(2))) ** (2 / 3)
    assert E == pytest.approx(oracle, rel=1e-6)
    assert K.sum() * dx == pytest.approx(1.0, rel=1e-8)


def test_fill_empty_basin():
    U = np.linspace(-1, 3, 50) ** 2 - 2
    E, K = th.kinetic_fill_profile(U, 0.0)
    assert E == U.min() and not K.any()


def test_fill_conservation_random_potentials():
    rng = np.random.default_rng(0)
    for _ in range(5):
        U = rng.normal(size=(40, 40))
        Eth = rng.uniform(0.1, 50)
        E, K = th.kinetic_fill_profile(U, Eth, 0.25)
        assert K.sum() * 0.25 == pytest.approx(Eth, rel=1e-8)


# -- transitivity -------------------------------------------------------------------


def test_transitive_equal_beta_passes():
    g = make_grid(1, 1, 128, 40.0)
    a = th.build_thermal_state(g, th.ThermalSpec(1.0, 50, 1))
    b = th.build_thermal_state(g, th.ThermalSpec(1.0, 50, 2))
    rep = th.transitive_check(a, b, 0.05)
    assert rep.passed
    assert rep.beta_fit == pytest.approx(1.0, rel=1e-6)


def test_transitive_unequal_beta_fails():
    g = make_grid(1, 1, 128, 40.0)
    a = th.build_thermal_state(g, th.ThermalSpec(1.0, 50, 1))
    b = th.build_thermal_state(g, th.ThermalSpec(2.0, 50, 2))
    rep = th.transitive_check(a, b, 0.05)
    assert not rep.passed
    assert sorted(rep.betas) == pytest.approx([1.0, 2.0], rel=1e-6)


def test_transitive_vacuum_identity():
    g = make_grid(1, 2, 64, 20.0)
    a = th.build_thermal_state(g, th.ThermalSpec(1.0, 16, 1))
    rep = th.transitive_check(a, None, 0.05)
    ref = th.equilibration_report(a, 4 * g.spacing[0])
    assert np.allclose(rep.equilibration.ratios, ref.ratios)


def test_transitive_incompatible_grids():
    a = th.build_thermal_state(make_grid(1, 1, 32, 10.0), th.ThermalSpec(1.0, 8, 1))
    b = th.build_thermal_state(make_grid(1, 1, 32, 12.0), th.ThermalSpec(1.0, 8, 1))
    with pytest.raises(th.CompositionError):
        th.transitive_check(a, b)


# -- entropy / temperature --------------------------------------------------------


def test_exponential_dos():
    E = np.linspace(0, 10, 101)
    dos = th.DensityOfStates.from_log(E, 0.7 * E)
    S, T = th.entropy_temperature(dos, 5.0)
    assert T == pytest.approx(1 / 0.7, rel=1e-12)
    assert S == pytest.approx(3.5)


def test_power_law_dos_closed_form():
    dos = th.DensityOfStates.closed_form(lambda E: 3 * np.log(E))
    S, T = th.entropy_temperature(dos, 6.0)
    assert T == pytest.approx(2.0, rel=1e-8)


def test_edge_warns():
    E = np.linspace(1, 10, 10)
    dos = th.DensityOfStates.from_log(E, np.log(E))
    with pytest.warns(UserWarning, match="edge"):
        th.entropy_temperature(dos, 1.0)


def test_two_oscillator_quasicontinuum():
    E, g = th.harmonic_level_counts(2, 200)
    # direct enumeration oracle: two distinguishable oscillators have n+1 states
    assert np.array_equal(g, np.arange(1, 202))
    dos = th.DensityOfStates.from_counts(E, g)
    for e in (30.0, 80.0, 150.0):
        _, T = th.entropy_temperature(dos, e)
        # quasicontinuum Omega ~ E gives T = E
        assert T == pytest.approx(e, rel=1e-3)
