import warnings

import numpy as np
import pytest
from scipy.optimize import curve_fit

from pshw.core import ManyBodyState, make_grid
from pshw.dynamics import OneBodyEigenbasis, PropagationPlan, gp_ground_state, propagate_exact, propagate_schrodinger, thomas_fermi_density
from pshw.hydro import (
    CFLError,
    GPInitial,
    OneBodyFields,
    TransportCoefficients,
    curl_2d,
    diagram_residual,
    divergence,
    evolve_euler,
    evolve_navier_stokes,
    helmholtz_decompose,
    project_fields,
)


def full_mesh(grid):
    return [np.broadcast_to(a, grid.shape) for a in grid.mesh()]


@pytest.fixture
def pair_grid():
    return make_grid(1, 2, 64, 20.0)


def test_product_state_velocity_is_phase_gradient(pair_grid):
    x = pair_grid.axis_coords(0)
    orb = np.exp(-(x**2) / 4) * np.exp(1j * 0.7 * np.sin(2 * np.pi * x / 20))
    state = ManyBodyState.product(pair_grid, [orb, orb], "bose")
    f = project_fields([state])[0]
    expected = 0.7 * 2 * np.pi / 20 * np.cos(2 * np.pi * x / 20)
    bulk = f.rho > 1e-3 * f.rho.max()
    assert np.abs(f.v[0] - expected)[bulk].max() < 1e-6
    assert f.closure < 1e-6
    assert f.N == pytest.approx(2.0, rel=1e-12)


def test_current_mode_agrees_for_product(pair_grid):
    x = pair_grid.axis_coords(0)
    orb = np.exp(-(x**2) / 4) * np.exp(1j * 0.3 * x)
    state = ManyBodyState.product(pair_grid, [orb, orb], "bose")
    f = project_fields([state], velocity="current")[0]
    bulk = f.rho > 1e-3 * f.rho.max()
    assert np.allclose(f.v[0][bulk], 0.3, atol=1e-8)


def test_eigenstate_projection_is_static():
    grid = make_grid(1, 2, 64, 16.0)
    x = grid.axis_coords(0)
    basis = OneBodyEigenbasis(grid.physical(), 0.5 * x**2)
    state = ManyBodyState.product(grid, [basis.vectors[:, 0], basis.vectors[:, 1]], "fermi")
    fields = project_fields(propagate_exact(state, basis, [0.0, 0.7, 3.1]))
    for f in fields:
        assert np.abs(f.v[0]).max() < 1e-8
    assert max(np.abs(f.rho - fields[0].rho).max() for f in fields) < 1e-8
    assert max(np.abs(f.T - fields[0].T).max() for f in fields) < 1e-8


def test_frame_difference_closure(pair_grid):
    x = pair_grid.axis_coords(0)
    orb = np.exp(-((x + 1) ** 2) / 4) * np.exp(1j * 0.5 * x)
    state = ManyBodyState.product(pair_grid, [orb, orb], "bose")
    traj = propagate_schrodinger(state, PropagationPlan(0.002, 10), stride=1)
    fields = project_fields(traj.states, dt=0.002)
    assert all(f.closure < 1e-6 for f in fields)


def test_gp_thomas_fermi_is_cold():
    grid = make_grid(1, 1, 256, 20.0)
    x = grid.axis_coords(0)
    V = 0.5 * x**2
    res = gp_ground_state(grid, V, 1.0, 100.0)
    f = project_fields([res.psi], grid)[0]
    # trap energy scale: mean potential energy per particle
    scale = np.sum(V * f.rho) / np.sum(f.rho)
    assert f.T.max() < 1e-3 * scale


def test_helmholtz_properties():
    grid = make_grid(2, 1, 64, 10.0)
    rng = np.random.default_rng(3)
    v = [rng.normal(size=grid.shape) for _ in range(2)]
    irr, rot = helmholtz_decompose(v, grid)
    assert max(np.abs(a + b - c).max() for a, b, c in zip(irr, rot, v)) < 1e-10
    assert np.abs(divergence(rot, grid)).max() < 1e-10
    assert abs(sum(np.sum(a * b) for a, b in zip(irr, rot))) < 1e-10 * sum(np.sum(c**2) for c in v)
    irr2, rot2 = helmholtz_decompose(irr, grid)
    assert max(np.abs(a - b).max() for a, b in zip(irr2, irr)) < 1e-12
    assert max(np.abs(r).max() for r in rot2) < 1e-12


def test_helmholtz_gradient_and_curl_fields():
    grid = make_grid(2, 1, 64, 2 * np.pi)
    X, Y = full_mesh(grid)
    phi = np.sin(X) * np.cos(2 * Y)
    grad = [np.cos(X) * np.cos(2 * Y), -2 * np.sin(X) * np.sin(2 * Y)]
    _, rot = helmholtz_decompose(grad, grid)
    assert max(np.abs(r).max() for r in rot) < 1e-12
    swirl = [-grad[1], grad[0]]
    irr, _ = helmholtz_decompose(swirl, grid)
    assert max(np.abs(i).max() for i in irr) < 1e-12
    assert np.abs(curl_2d(grad, grid)).max() < 1e-10
    assert phi.shape == grid.shape


def test_thomas_fermi_is_discrete_equilibrium():
    grid = make_grid(1, 1, 256, 20.0)
    x = grid.axis_coords(0)
    V = 0.5 * x**2
    _, n = thomas_fermi_density(V, 1.0, 100.0, grid.spacing[0])
    f = OneBodyFields(grid, n, [np.zeros_like(n)], np.zeros_like(n))
    tr = evolve_euler(f, V, "barotropic_gp", 0.01, int(2 * np.pi / 0.01), g=1.0)
    assert np.abs(tr.fields[-1].rho - n).max() / n.max() < 1e-3
    assert abs(tr.mass[-1] / tr.mass[0] - 1) < 1e-12


def test_uniform_state_unchanged():
    grid = make_grid(2, 1, 32, 4.0)
    one = np.ones(grid.shape)
    f = OneBodyFields(grid, 2 * one, [0 * one, 0 * one], 0.5 * one)
    for law in ("ideal", "barotropic_gp"):
        tr = evolve_euler(f, None, law, 0.01, 20, g=1.0)
        assert np.array_equal(tr.fields[-1].rho, f.rho)
        assert np.abs(tr.fields[-1].v[0]).max() == 0


def test_ripple_speed():
    L = 40.0
    grid = make_grid(1, 1, 512, L)
    x = grid.axis_coords(0)
    k = 2 * np.pi / L * 4
    g = 2.0
    rho = 1 + 1e-3 * np.cos(k * x)
    f = OneBodyFields(grid, rho, [np.zeros_like(x)], np.zeros_like(x))
    tr = evolve_euler(f, None, "barotropic_gp", 0.02, 200, g=g, stride=1)
    amp = np.array([np.sum((fr.rho - 1) * np.cos(k * x)) for fr in tr.fields]) / np.sum(np.cos(k * x) ** 2) / 1e-3
    (w, _), _ = curve_fit(lambda t, w, gam: np.exp(-gam * t) * np.cos(w * t), tr.times, amp, p0=[k * np.sqrt(g), 0.0])
    assert w / k == pytest.approx(np.sqrt(g), rel=0.02)


@pytest.fixture
def shear():
    grid = make_grid(2, 1, 64, 2 * np.pi)
    X, _ = full_mesh(grid)
    one = np.ones(grid.shape)
    return grid, X, OneBodyFields(grid, one, [0 * one, 0.01 * np.sin(X)], one)


def test_shear_decay_rate(shear):
    grid, X, f = shear
    eta = 0.05
    tc = TransportCoefficients(eta=eta, pressure_law="ideal", lambda_mfp=0.01)
    # the compressive limiter keeps numerical diffusion off the smooth extrema
    tr = evolve_navier_stokes(f, None, tc, 0.01, 500, stride=50, limiter="mc")
    amp = [np.sum(fr.v[1] * np.sin(X)) / np.sum(np.sin(X) ** 2) for fr in tr.fields]
    rate = -np.polyfit(tr.times, np.log(amp), 1)[0]
    assert rate == pytest.approx(eta * 1.0**2 / 1.0, rel=0.02)
    assert np.abs(tr.mass - tr.mass[0]).max() < 1e-12 * tr.mass[0]
    assert np.abs(tr.momentum - tr.momentum[0]).max() < 1e-10 * tr.mass[0]
    assert tr.knudsen == pytest.approx(0.01, rel=0.05)
    # viscous heating keeps total energy fixed and raises the temperature
    assert np.abs(tr.energy - tr.energy[0]).max() < 1e-12 * tr.energy[0]
    assert tr.fields[-1].T.mean() > 1.0


def test_zero_viscosity_reduces_to_euler(shear):
    _, _, f = shear
    a = evolve_navier_stokes(f, None, TransportCoefficients(0.0, "ideal", lambda_mfp=1.0), 0.01, 30)
    b = evolve_euler(f, None, "ideal", 0.01, 30)
    for fa, fb in zip(a.fields, b.fields):
        assert np.abs(fa.rho - fb.rho).max() < 1e-10
        assert np.abs(fa.v[1] - fb.v[1]).max() < 1e-10


def test_momentum_conserved_for_random_flow():
    grid = make_grid(2, 1, 32, 8.0)
    rng = np.random.default_rng(0)
    rho = 1 + 0.2 * rng.random(grid.shape)
    v = [0.1 * rng.normal(size=grid.shape) for _ in range(2)]
    f = OneBodyFields(grid, rho, v, np.ones(grid.shape))
    tr = evolve_navier_stokes(f, None, TransportCoefficients(0.02, "ideal", lambda_mfp=0.1), 0.005, 100, stride=10)
    scale = np.abs(tr.momentum[0]).max() + tr.mass[0] * 0.1
    assert np.abs(tr.momentum - tr.momentum[0]).max() < 1e-10 * scale
    assert np.abs(tr.mass - tr.mass[0]).max() < 1e-12 * tr.mass[0]


def test_cfl_rejection_suggests_step(shear):
    _, _, f = shear
    with pytest.raises(CFLError) as err:
        evolve_euler(f, None, "ideal", 1.0, 2)
    assert 0 < err.value.suggested_dt < 0.5 * f.grid.spacing[0]
    tc = TransportCoefficients(eta=10.0, pressure_law="ideal", lambda_mfp=0.1)
    with pytest.raises(CFLError, match="viscous"):
        evolve_navier_stokes(f, None, tc, 0.01, 2)


def test_knudsen_warning(shear):
    _, _, f = shear
    tc = TransportCoefficients(eta=0.0, pressure_law="ideal", lambda_mfp=0.5)
    with pytest.warns(UserWarning, match="Knudsen"):
        evolve_navier_stokes(f, None, tc, 0.01, 2)


def test_transport_validation():
    with pytest.raises(ValueError):
        TransportCoefficients(eta=-1.0)
    with pytest.raises(ValueError):
        TransportCoefficients(pressure_law="ideal", lambda_mfp=0.0)
    with pytest.raises(ValueError):
        TransportCoefficients(pressure_law="barotropic_gp")


def test_diagram_residual_zero_horizon():
    grid = make_grid(1, 1, 128, 20.0)
    x = grid.axis_coords(0)
    psi = np.sqrt(np.maximum(10 - 0.5 * x**2, 0) + 1e-3)
    r = diagram_residual(GPInitial(psi, grid, 1.0), 0.5 * x**2, "euler", 0.0, 0.01)
    assert r.l2[0] == 0 and r.linf[0] == 0
    with pytest.raises(ValueError):
        diagram_residual(GPInitial(psi, grid, 1.0), 0.5 * x**2, "kinetic", 1.0, 0.01)


def test_diagram_residual_reports_leg_failure():
    grid = make_grid(1, 1, 128, 20.0)
    x = grid.axis_coords(0)
    res = gp_ground_state(grid, 0.5 * x**2, 1.0, 50.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        r = diagram_residual(GPInitial(res.psi, grid, 1.0), 0.5 * x**2, "euler", 1.0, 0.5, quantum_dt=0.01)
    assert r.legs["hydro"].startswith("failed")
    assert r.legs["quantum"] == "ok"
