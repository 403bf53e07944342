import math
import warnings

import numpy as np
import pytest
import sympy as sp

from pshw.core import ManyBodyState, make_grid, symmetrize
from pshw.hydro import OneBodyFields, curl_2d, project_fields
from pshw.vortex import (
    VortexSpec,
    angular_momentum_about,
    angular_variance,
    assign_carriers,
    calibration_map,
    circulation,
    coherence_model,
    coherence_numbers,
    cylinder_vortex_observables,
    decorrelated_rotation_state,
    displaced_vortex_quadrature,
    fine_structure,
    ghw_construct,
    lattice_angular_momentum,
    lattice_deviation,
    linear_momentum,
    localized_correlation,
    make_vortex_wavefunction,
    scale_estimates,
    vortex_carriers,
)


def mesh(grid):
    return [np.broadcast_to(a, grid.shape) for a in grid.mesh()]


@pytest.fixture(scope="module")
def plane():
    return make_grid(2, 1, 128, 20.0)


def gaussian(X, Y):
    return np.exp(-(X**2 + Y**2) / 4.0)


@pytest.mark.parametrize("n", [1, 2, 3, -2])
def test_centered_vortex_quanta(plane, n):
    psi = make_vortex_wavefunction(plane, gaussian, VortexSpec(((0.0, 0.0),), (n,), 0.3))
    assert angular_momentum_about(psi, (0, 0), plane) == pytest.approx(n, rel=1e-6)
    assert circulation(psi, (40, 88, 40, 88)) == pytest.approx(2 * math.pi * n, abs=1e-6)
    rho = np.abs(psi) ** 2
    assert rho[64, 64] < 1e-8 * rho.max()


def test_loop_circulation_counts_enclosed_windings(plane):
    spec = VortexSpec(((-3.0, 0.0), (3.0, 0.5)), (1, -1), 0.3)
    psi = make_vortex_wavefunction(plane, gaussian, spec)
    x = plane.axis_coords(0)
    idx = lambda v: int(np.argmin(np.abs(x - v)))
    assert circulation(psi, (idx(-5), idx(5), idx(-2), idx(2))) == pytest.approx(0.0, abs=1e-6)
    assert circulation(psi, (idx(-5), idx(-1), idx(-2), idx(2))) == pytest.approx(2 * math.pi, abs=1e-6)
    assert circulation(psi, (idx(1), idx(5), idx(-2), idx(2))) == pytest.approx(-2 * math.pi, abs=1e-6)


def test_opposite_pair_annihilates(plane):
    with pytest.warns(UserWarning, match="overlap"):
        psi = make_vortex_wavefunction(plane, gaussian, VortexSpec(((1.0, 1.0), (1.0, 1.0)), (1, -1), 0.3))
    rng = np.random.default_rng(0)
    for _ in range(10):
        i0, j0 = rng.integers(20, 60, size=2)
        i1, j1 = rng.integers(70, 110, size=2)
        assert abs(circulation(psi, (i0, i1, j0, j1))) < 1e-9


def test_invalid_specs(plane):
    with pytest.raises(ValueError):
        VortexSpec(((0.0, 0.0),), (0,), 1.0)
    with pytest.raises(ValueError):
        VortexSpec(((0.0, 0.0),), (1,), 0.0)
    with pytest.raises(ValueError):
        make_vortex_wavefunction(plane, gaussian, VortexSpec(((50.0, 0.0),), (1,), 0.3))
    spec = VortexSpec(((1.0, -2.0),), (2,), 0.5)
    assert VortexSpec.from_dict(spec.to_dict()) == spec


def test_base_point_shift_identity(plane):
    rng = np.random.default_rng(5)
    X, Y = mesh(plane)
    for _ in range(5):
        k = rng.normal(size=2)
        spec = VortexSpec((tuple(rng.uniform(-2, 2, size=2)),), (int(rng.choice([-1, 1, 2])),), 0.4)
        psi = make_vortex_wavefunction(plane, gaussian, spec) * np.exp(1j * 0.3 * (k[0] * X + k[1] * Y))
        P = linear_momentum(psi, plane)
        L0 = angular_momentum_about(psi, (0, 0), plane)
        shift = rng.uniform(-3, 3, size=2)
        L1 = angular_momentum_about(psi, shift, plane)
        assert L1 == pytest.approx(L0 - (shift[0] * P[1] - shift[1] * P[0]), abs=1e-8)


def test_zero_momentum_state_is_base_point_independent(plane):
    psi = make_vortex_wavefunction(plane, gaussian, VortexSpec(((0.0, 0.0),), (1,), 0.3))
    assert np.abs(linear_momentum(psi, plane)).max() < 1e-10
    assert angular_momentum_about(psi, (2.0, -1.5), plane) == pytest.approx(angular_momentum_about(psi, (0, 0), plane), abs=1e-8)


def test_displaced_vortex_matches_quadrature():
    grid = make_grid(2, 1, 128, 12.0)
    R, edge, xi = 3.0, 0.3, 0.2
    values = []
    for b in (0.0, 0.5, 1.0, 1.5, 2.0):
        psi = make_vortex_wavefunction(grid, lambda X, Y: 0.5 * (1 - np.tanh((np.hypot(X, Y) - R) / edge)), VortexSpec(((b, 0.0),), (1,), xi))
        L = angular_momentum_about(psi, (0, 0), grid)
        assert L == pytest.approx(displaced_vortex_quadrature(b, R, edge, xi), rel=1e-3)
        values.append(L)
    assert np.all(np.diff(values) < 0)
    assert values[0] == pytest.approx(1.0, rel=1e-6)


def test_many_body_product_angular_momentum():
    grid = make_grid(2, 2, 32, 10.0)
    g1 = grid.physical()
    psi = make_vortex_wavefunction(g1, lambda X, Y: np.exp(-(X**2 + Y**2) / 3), VortexSpec(((0.0, 0.0),), (1,), 0.4))
    state = ManyBodyState.product(grid, [psi, psi], "bose")
    assert angular_momentum_about(state) == pytest.approx(2.0, rel=1e-3)


def test_cylinder_closed_forms():
    obs = cylinder_vortex_observables(1.0, 0.01, 1)
    assert obs.L == 1.0
    assert obs.K == pytest.approx(math.log(100) / (1 - 1e-4), rel=1e-12)
    assert obs.K == pytest.approx(4.6056, abs=1e-4)
    assert obs.K_quadrature == pytest.approx(obs.K, rel=1e-10)
    assert obs.L_quadrature == pytest.approx(obs.L, rel=1e-10)
    assert obs.ratio == pytest.approx(1 / (1 - 1e-4) * math.log(100), rel=1e-12)
    zero = cylinder_vortex_observables(1.0, 0.01, 0)
    assert (zero.L, zero.K) == (0.0, 0.0)
    with pytest.warns(UserWarning, match="diverges"):
        cylinder_vortex_observables(1.0, 1e-9, 1)
    with pytest.raises(ValueError):
        cylinder_vortex_observables(1.0, 1.5, 1)


def exact_ratio(s):
    k = sp.symbols("k", integer=True, nonnegative=True)
    S = sp.Integer(s)
    total = sp.summation(k**2 * ((k + 1) ** 2 - k**2), (k, 0, S - 1))
    return total * 2 / S**4


def test_lattice_matches_symbolic_annulus_sum():
    s_vals = (10, 20, 50, 100, 200)
    gaps = [1 - float(exact_ratio(s)) for s in s_vals]
    x = np.array([1 / s for s in s_vals])
    c_oracle = float(np.sum(x * gaps) / np.sum(x * x))
    res = lattice_deviation(100.0, 1.0, 2.0, 3.0, s_vals)
    assert res.coefficient == pytest.approx(c_oracle, rel=5e-4)
    assert float(f"{res.coefficient:.3g}") == float(f"{c_oracle:.3g}")
    # closed form of the exact sum: 1 - (4/3)/s + 1/(3 s^3)
    s = sp.symbols("s", positive=True)
    k = sp.symbols("k", integer=True)
    closed = sp.simplify(2 * sp.summation(k**2 * (2 * k + 1), (k, 0, s - 1)) / s**4)
    assert sp.simplify(closed - (1 - sp.Rational(4, 3) / s + 1 / (3 * s**3))) == 0
    assert 1.0 <= res.coefficient <= 4.0


def test_lattice_limits_and_monotonicity():
    ratios = [lattice_angular_momentum(1.0, 1.0 / s, 1.0, 1.0) / 0.5 for s in (4, 10, 40, 100, 1000)]
    assert all(r < 1 for r in ratios)
    assert np.all(np.diff(ratios) > 0)
    assert 1 - ratios[-1] < 1e-2
    res = lattice_deviation(10.0, 1.0, 1.0, 1.0)
    # the printed j^3 sum overshoots the classical value
    assert res.printed_sum > res.L_class > res.L_lattice
    with pytest.raises(ValueError):
        lattice_angular_momentum(1.0, 0.5, 1.0, 1.0)


@pytest.fixture(scope="module")
def ghw_grid():
    grid = make_grid(2, 1, 32, 12.0)
    X, Y = mesh(grid)
    rho = np.exp(-(X**2 + Y**2) / 4)
    rho = 2 * rho / (rho.sum() * grid.one_body_cell_volume)
    return grid, X, Y, rho


def test_ghw_uniform_is_constant_product():
    grid = make_grid(2, 1, 16, 4.0)
    one = np.ones(grid.shape)
    f = OneBodyFields(grid, 2 * one / 16.0, [0 * one, 0 * one], 0 * one)
    state = ghw_construct(f, 2, 0.3, 1.0, seed=0)
    mod = np.abs(state.amplitude)
    assert np.ptp(mod) < 1e-12 * mod.max()


def test_ghw_irrotational_round_trip(ghw_grid):
    grid, X, Y, rho = ghw_grid
    k = 2 * np.pi / 12.0
    v = [-0.3 * k * np.sin(k * X) * np.sin(k * Y), 0.3 * k * np.cos(k * X) * np.cos(k * Y)]
    f = OneBodyFields(grid, rho, v, np.zeros_like(rho))
    out = project_fields([ghw_construct(f, 2, 0.3, 1.0, seed=1)])[0]
    bulk = rho > 0.05 * rho.max()
    err = math.sqrt(sum(((a - b) ** 2)[bulk].sum() for a, b in zip(out.v, v)) / sum((b**2)[bulk].sum() for b in v))
    assert err < 0.05
    assert out.N == pytest.approx(2.0, rel=1e-10)


def test_ghw_vorticity_round_trip(ghw_grid):
    grid, X, Y, rho = ghw_grid
    R0 = 2.0
    w0 = 2 * np.pi / (np.pi * R0**2)
    r, th = np.hypot(X, Y), np.arctan2(Y, X)
    vt = np.where(r < R0, 0.5 * w0 * r, 0.5 * w0 * R0**2 / np.maximum(r, 1e-9))
    f = OneBodyFields(grid, rho, [-vt * np.sin(th), vt * np.cos(th)], np.zeros_like(rho))
    carriers = vortex_carriers(f, 2)
    assert len(carriers) == 2 and all(s == 1 for _, s in carriers)
    out = project_fields([ghw_construct(f, 2, 0.3, 1.0, seed=1)], velocity="current")[0]
    disk = r < R0
    assert curl_2d(out.v, grid)[disk].mean() == pytest.approx(w0, rel=0.10)
    with pytest.raises(ValueError, match="insufficient particles"):
        assign_carriers(carriers * 2, 2)


def test_ghw_is_seeded(ghw_grid):
    grid, _, _, rho = ghw_grid
    f = OneBodyFields(grid, rho, [0 * rho, 0 * rho], 0.5 * np.ones_like(rho))
    a = ghw_construct(f, 2, 0.3, 6.0, seed=3)
    b = ghw_construct(f, 2, 0.3, 6.0, seed=3)
    c = ghw_construct(f, 2, 0.3, 6.0, seed=4)
    assert np.array_equal(a.amplitude, b.amplitude)
    assert not np.allclose(a.amplitude, c.amplitude)


def test_fine_structure_spectrum():
    grid = make_grid(2, 1, 64, 20.0)
    rng = np.random.default_rng(0)
    f = fine_structure(grid, 2.0, 2.0, rng, modes=16)
    assert np.mean(np.abs(f) ** 2) == pytest.approx(1.0)
    spec = np.abs(np.fft.fftn(f)) ** 2
    kx, ky = np.meshgrid(grid.wavenumbers(0), grid.wavenumbers(1), indexing="ij")
    occupied = spec > 1e-10 * spec.max()
    assert np.hypot(kx, ky)[occupied].min() > 2 * np.pi / 2.0
    assert np.all(fine_structure(grid, 0.0, 2.0, rng) == 1)


def test_model_coherence():
    grid = make_grid(1, 1, 64, 10.0)
    x = grid.axis_coords(0)
    phi = np.exp(-(x**2))
    assert np.allclose(coherence_model([phi] * 5)[np.abs(phi) > 0], 5.0)
    sites = [np.where(np.abs(x - c) < 0.2, 1.0, 0.0) for c in (-3.0, 0.0, 3.0)]
    N = coherence_model(sites)
    on = sum(sites) > 0
    assert np.allclose(N[on], 1.0) and np.all(N[~on] == 0)


def test_model_free_coherence_anchors():
    grid = make_grid(1, 3, 24, 12.0)
    x = grid.axis_coords(0)
    phi = np.exp(-(x**2) / 2)
    product = ManyBodyState.product(grid, [phi] * 3, "bose")
    field = coherence_numbers(state=product)
    on = np.abs(phi) ** 2 > 1e-300
    assert np.allclose(field.raw[on], 1.0, atol=1e-10)
    assert np.allclose(field.model_free[on], 3.0, atol=1e-9)
    # symmetrized disjoint sites give the localized anchor 1
    sites = [np.where(np.abs(x - c) < 0.6, 1.0, 0.0) for c in (-4.0, 0.0, 4.0)]
    loc = ManyBodyState.product(grid, sites, "bose")
    field = coherence_numbers(components=sites, state=loc)
    occupied = sum(sites) > 0
    assert np.allclose(field.raw[occupied], localized_correlation(3), atol=1e-10)
    assert np.allclose(field.model_free[occupied], 1.0, atol=1e-9)
    assert np.all(field.model_free[~occupied] == 0)
    f = calibration_map(4)
    assert f(1.0) == pytest.approx(1.0) and f(localized_correlation(4)) == pytest.approx(0.25)
    assert symmetrize is not None


@pytest.fixture(scope="module")
def rot_grid():
    return make_grid(2, 1, 96, 14.0)


def test_decorrelated_density_is_axisymmetric(rot_grid):
    scan = {N: angular_variance(decorrelated_rotation_state(rot_grid, N, 0.5, 0.3, 0.0), [0.5, 1.0, 1.5, 2.0]) for N in (2, 4, 8, 16)}
    assert scan[16] < 1e-3
    assert scan[2] > scan[4] > scan[8] > scan[16]
    coherent = decorrelated_rotation_state(rot_grid, 16, 0.5, 0.3, 0.0, coherent=True)
    assert angular_variance(coherent, [1.0]) > 1e-2


def test_decorrelated_keeps_angular_momentum(rot_grid):
    for t in (0.0, 0.8):
        dec = decorrelated_rotation_state(rot_grid, 16, 0.5, 0.3, t)
        coh = decorrelated_rotation_state(rot_grid, 16, 0.5, 0.3, t, coherent=True)
        a, b = 1.3, 0.7
        analytic = 16 * 0.5 * (a * a - b * b) / (a * a + b * b) * (a * a - b * b) / 2
        assert dec.angular_momentum() == pytest.approx(coh.angular_momentum(), rel=0.01)
        assert coh.angular_momentum() == pytest.approx(analytic, rel=0.01)


def test_static_without_rotation(rot_grid):
    a = decorrelated_rotation_state(rot_grid, 4, 0.0, 0.3, 0.0).one_body_density()
    b = decorrelated_rotation_state(rot_grid, 4, 0.0, 0.3, 5.0).one_body_density()
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        decorrelated_rotation_state(rot_grid, 1, 0.5, 0.3, 0.0)
    with pytest.raises(NotImplementedError):
        decorrelated_rotation_state(rot_grid, 4, 0.5, 0.3, 0.0, kernel_tag="jastrow")


def test_small_product_state_expands(rot_grid):
    small = make_grid(2, 1, 16, 8.0)
    st = decorrelated_rotation_state(small, 2, 0.5, 0.3, 0.0)
    mb = st.to_many_body()
    assert mb.grid.N == 2 and mb.norm() == pytest.approx(1.0)


def test_scale_estimates_values():
    rep = scale_estimates()
    assert rep.atom_count == pytest.approx(1e25)
    assert rep.v_del_atom == pytest.approx(1.0545718e-34 / (1e-25 * 1e-11), rel=1e-6)
    assert rep.v_del_cm == pytest.approx(1.0545718e-34 / (1.0 * math.sqrt(1e25) * 1e-11), rel=1e-6)
    assert rep.omega_threshold == pytest.approx(1.380649e-23 * 300 / 1.0545718e-34, rel=1e-6)
    full = scale_estimates(pressure=1e5, cloud_extent=1e-3, angular_momentum=1e-30, particles=1e10)
    assert full.vortex_energy > 0
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert set(rep.within_order()) == {"v_del_cm", "v_del_atom", "omega_threshold"}
