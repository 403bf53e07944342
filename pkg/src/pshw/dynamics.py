"""Time propagation: split-step Schrodinger, Gross-Pitaevskii, harmonic towers.

Stepping is Strang split: half potential, full kinetic in the spectral basis,
half potential.  Periodic axes use the FFT; wall axes use the type-I sine
transform.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
from scipy.special import comb

from .core import Grid, ManyBodyState, as_config_potential


class CollapseError(RuntimeError):
    """Kinetic energy ran away toward the grid cutoff (attractive collapse)."""


class GridResolutionError(ValueError):
    """Requested orbitals are not resolved by the grid."""


@dataclass(frozen=True)
class PropagationPlan:
    dt: float
    steps: int
    potential: object = None
    interaction: float = 0.0
    absorbing_width: float = 0.0
    absorbing_strength: float = 1.0
    scheme: str = "strang_split"

    def __post_init__(self):
        if self.dt == 0:
            raise ValueError("dt must be nonzero")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.scheme != "strang_split":
            raise ValueError("only strang_split is supported")
        if self.absorbing_width < 0:
            raise ValueError("absorbing_width must be non-negative")


# -- kinetic operator ---------------------------------------------------------------


def _axis_wavenumbers(grid: Grid, a: int) -> np.ndarray:
    """Eigen-wavenumbers of -d^2/dx^2 in transform order."""
    if grid.boundary[a] == "wall":
        L = (grid.n + 1) * grid.spacing[a]
        return np.pi * np.arange(1, grid.n + 1) / L
    return grid.wavenumbers(a)


class KineticOperator:
    """Diagonal kinetic energy in the grid's spectral basis."""

    def __init__(self, grid: Grid, masses, hbar=1.0):
        self.grid = grid
        self.masses = tuple(masses)
        self.hbar = hbar
        self.walls = [ax for ax in range(grid.ndim) if grid.boundary[ax % grid.d] == "wall"]
        self.periodic_axes = [ax for ax in range(grid.ndim) if ax not in self.walls]
        E = np.zeros((1,) * grid.ndim)
        for ax in range(grid.ndim):
            shape = [1] * grid.ndim
            shape[ax] = -1
            k = _axis_wavenumbers(grid, ax % grid.d).reshape(shape)
            E = E + hbar**2 * k**2 / (2 * self.masses[ax // grid.d])
        self.energy = E

    @property
    def max_energy(self) -> float:
        return float(self.energy.max())

    def forward(self, psi):
        out = psi
        if self.periodic_axes:
            out = sfft.fftn(out, axes=self.periodic_axes)
        if self.walls:
            out = sfft.dstn(out, type=1, axes=self.walls, norm="ortho")
        return out

    def backward(self, c):
        out = c
        if self.walls:
            out = sfft.idstn(out, type=1, axes=self.walls, norm="ortho")
        if self.periodic_axes:
            out = sfft.ifftn(out, axes=self.periodic_axes)
        return out

    def propagator(self, dt, imaginary=False):
        if imaginary:
            return np.exp(-self.energy * dt / self.hbar)
        return np.exp(-1j * self.energy * dt / self.hbar)

    def apply(self, psi, phase):
        return self.backward(phase * self.forward(psi))

    def expectation(self, psi) -> float:
        c = self.forward(psi)
        w = np.abs(c) ** 2
        return float(np.sum(w * self.energy) / np.sum(w))

    def apply_h(self, psi):
        return self.backward(self.energy * self.forward(psi))


def absorbing_potential(grid: Grid, width: float, strength: float) -> np.ndarray:
    """Negative imaginary quadratic ramp within ``width`` of every domain edge."""
    W = np.zeros(grid.shape)
    if width <= 0:
        return W
    for i in range(grid.N):
        for a in range(grid.d):
            x = grid.config_coord(i, a)
            edge = grid.lengths[a] / 2 - width
            s = np.clip((np.abs(x) - edge) / width, 0.0, None)
            W = W + strength * s**2
    return W


# -- Schrodinger --------------------------------------------------------------------


@dataclass
class Trajectory:
    times: np.ndarray
    states: list
    norms: np.ndarray
    energies: np.ndarray
    absorbed: float = 0.0
    observables: dict = field(default_factory=dict)

    def csv_rows(self):
        header = ["t", "norm", "energy"] + sorted(self.observables)
        rows = [header]
        for idx, t in enumerate(self.times):
            row = [float(t), float(self.norms[idx]), float(self.energies[idx])]
            row += [float(self.observables[k][idx]) for k in sorted(self.observables)]
            rows.append(row)
        return rows


def _raw_norm(psi, grid):
    return float(np.sum(np.abs(psi) ** 2) * grid.cell_volume)


def expectation_energy(state_or_psi, grid: Grid, V, kin: KineticOperator) -> float:
    psi = state_or_psi.amplitude if isinstance(state_or_psi, ManyBodyState) else state_or_psi
    norm = np.sum(np.abs(psi) ** 2)
    return kin.expectation(psi) + float(np.sum(V * np.abs(psi) ** 2) / norm)


def check_time_step(kin: KineticOperator, dt: float):
    if abs(dt) * kin.max_energy / kin.hbar >= 0.5:
        warnings.warn(
            f"dt*E_max/hbar = {abs(dt) * kin.max_energy / kin.hbar:.3g} exceeds 0.5; "
            "high modes will alias in phase",
            stacklevel=3,
        )


def propagate_schrodinger(state: ManyBodyState, plan: PropagationPlan, stride: int | None = None, observables=None) -> Trajectory:
    """Strang-split evolution of a many-body state.

    ``observables`` maps names to callables of the amplitude array, sampled at
    every stride.  With an absorbing boundary the lost norm is reported in
    ``absorbed`` and states are returned unnormalized.
    """
    grid = state.grid
    kin = KineticOperator(grid, state.masses, state.hbar)
    check_time_step(kin, plan.dt)
    V = as_config_potential(grid, plan.potential)
    W = absorbing_potential(grid, plan.absorbing_width, plan.absorbing_strength)
    half = np.exp(-1j * V * plan.dt / (2 * state.hbar)) * np.exp(-W * abs(plan.dt) / (2 * state.hbar))
    kphase = kin.propagator(plan.dt)
    stride = plan.steps if not stride else stride
    observables = observables or {}
    psi = np.array(state.amplitude)
    times, states, norms, energies = [0.0], [state], [1.0], [expectation_energy(psi, grid, V, kin)]
    obs = {k: [f(psi)] for k, f in observables.items()}
    for step in range(1, plan.steps + 1):
        psi = half * kin.apply(half * psi, kphase)
        if stride and step % stride == 0:
            times.append(step * plan.dt)
            norms.append(_raw_norm(psi, grid))
            energies.append(expectation_energy(psi, grid, V, kin))
            states.append(state.replace(psi, normalize=False))
            for k, f in observables.items():
                obs[k].append(f(psi))
    final_norm = _raw_norm(psi, grid)
    return Trajectory(
        np.array(times), states, np.array(norms), np.array(energies),
        absorbed=1.0 - final_norm, observables={k: np.array(v) for k, v in obs.items()},
    )


# -- Gross-Pitaevskii ---------------------------------------------------------------


@dataclass
class GPResult:
    times: np.ndarray
    frames: list
    energies: np.ndarray
    residual: float
    converged: bool
    steps_taken: int
    status: str = "ok"

    @property
    def psi(self) -> np.ndarray:
        return self.frames[-1]


def gp_energy(psi, grid1: Grid, V, g, kin: KineticOperator) -> float:
    dv = grid1.one_body_cell_volume
    n = np.abs(psi) ** 2
    N = n.sum() * dv
    T = kin.expectation(psi) * N
    return float(T + np.sum(V * n) * dv + 0.5 * g * np.sum(n**2) * dv)


def gp_residual(psi, grid1, V, g, kin) -> float:
    """|| H psi - mu psi || / || psi || with mu the Rayleigh quotient."""
    Hpsi = kin.apply_h(psi) + (V + g * np.abs(psi) ** 2) * psi
    mu = np.vdot(psi, Hpsi).real / np.vdot(psi, psi).real
    return float(np.linalg.norm(Hpsi - mu * psi) / np.linalg.norm(psi))


def propagate_gp(
    psi0,
    grid1: Grid,
    plan: PropagationPlan,
    N: float | None = None,
    imaginary: bool = False,
    mass: float = 1.0,
    hbar: float = 1.0,
    tol: float = 1e-8,
    stride: int | None = None,
    check_every: int = 10,
    collapse_fraction: float = 0.25,
):
    """Nonlinear Strang stepping of i hbar dpsi/dt = (T + V + g|psi|^2) psi.

    psi is normalized to N (default: its current norm).  In imaginary time the
    state is renormalized each step and stepping stops once the residual
    ||H psi - mu psi|| / ||psi|| falls below ``tol``.
    """
    if grid1.N != 1:
        raise ValueError("GP order parameters live on a one-body grid")
    kin = KineticOperator(grid1, (mass,), hbar)
    dv = grid1.one_body_cell_volume
    psi = np.array(psi0, dtype=np.complex128)
    if N is None:
        N = float(np.sum(np.abs(psi) ** 2) * dv)
    psi *= math.sqrt(N / (np.sum(np.abs(psi) ** 2) * dv))
    V = np.zeros(grid1.shape) if plan.potential is None else np.asarray(plan.potential, dtype=float)
    W = absorbing_potential(grid1, plan.absorbing_width, plan.absorbing_strength)
    g = plan.interaction
    dt = plan.dt
    if not imaginary:
        check_time_step(kin, dt)
    kphase = kin.propagator(dt, imaginary)
    damp = np.exp(-W * abs(dt) / (2 * hbar))
    stride = stride or plan.steps or 1
    e_cut = collapse_fraction * kin.max_energy

    def half(p):
        Veff = V + g * np.abs(p) ** 2
        if imaginary:
            with np.errstate(over="ignore", invalid="ignore"):
                return p * np.exp(-Veff * dt / (2 * hbar))
        return p * np.exp(-1j * Veff * dt / (2 * hbar)) * damp

    times, frames, energies = [0.0], [psi.copy()], [gp_energy(psi, grid1, V, g, kin)]
    residual = gp_residual(psi, grid1, V, g, kin) if imaginary else float("nan")
    converged = imaginary and residual < tol
    polishing = False
    shift = None
    step = 0
    status = "ok"
    while step < plan.steps and not converged:
        step += 1
        if polishing:
            psi = _gradient_step(psi, V, g, kin, shift)
        else:
            psi = half(kin.apply(half(psi), kphase))
        if imaginary:
            with np.errstate(over="ignore", invalid="ignore"):
                norm = float(np.sum(np.abs(psi) ** 2) * dv)
            if not np.isfinite(norm) or norm == 0:
                raise CollapseError(f"order parameter diverged at step {step}")
            psi *= math.sqrt(N / norm)
        if step % check_every == 0 or step == plan.steps:
            if not np.all(np.isfinite(psi)) or kin.expectation(psi) > e_cut:
                raise CollapseError(
                    f"kinetic energy per particle reached {kin.expectation(psi):.3g} "
                    f"(guard {e_cut:.3g}) at step {step}"
                )
            if imaginary:
                previous, residual = residual, gp_residual(psi, grid1, V, g, kin)
                converged = residual < tol
                if not polishing and residual > 0.98 * previous:
                    # split-step fixed point carries an O(dt) bias; finish on the exact flow
                    polishing = True
                    Veff = V + g * np.abs(psi) ** 2
                    shift = float(np.ptp(Veff)) + 1.0
        if step % stride == 0 or converged or step == plan.steps:
            times.append(step * dt)
            frames.append(psi.copy())
            energies.append(gp_energy(psi, grid1, V, g, kin))
    if imaginary and not converged:
        status = "not converged"
    return GPResult(np.array(times), frames, np.array(energies), residual, bool(converged), step, status)


def _gradient_step(psi, V, g, kin: KineticOperator, shift: float):
    """One kinetic-preconditioned normalized gradient step; fixed point is H psi = mu psi."""
    Hpsi = kin.apply_h(psi) + (V + g * np.abs(psi) ** 2) * psi
    mu = np.vdot(psi, Hpsi).real / np.vdot(psi, psi).real
    r = Hpsi - mu * psi
    return psi - kin.backward(kin.forward(r) / (kin.energy + shift))


def thomas_fermi_density(V: np.ndarray, g: float, N: float, cell_volume: float):
    """n = max(0, (mu - V)/g) normalized to N; returns (mu, n)."""
    from .thermal import kinetic_fill_profile

    mu, K = kinetic_fill_profile(V, g * N, cell_volume)
    return mu, K / g


def gp_ground_state(grid1: Grid, V, g: float, N: float, dt: float = 0.01, tol: float = 1e-8, max_steps: int = 200000, mass=1.0, hbar=1.0, psi0=None):
    """Imaginary-time ground state started from the Thomas-Fermi guess."""
    if psi0 is None:
        if g > 0:
            _, n = thomas_fermi_density(V, g, N, grid1.one_body_cell_volume)
            psi0 = np.sqrt(n) + 1e-3 * np.sqrt(N / (grid1.size * grid1.one_body_cell_volume))
        else:
            psi0 = np.exp(-(V - V.min()))
    plan = PropagationPlan(dt=dt, steps=max_steps, potential=V, interaction=g)
    return propagate_gp(psi0, grid1, plan, N=N, imaginary=True, mass=mass, hbar=hbar, tol=tol, stride=max_steps)


# -- exact propagation for non-interacting Hamiltonians -------------------------------------


class OneBodyEigenbasis:
    """Dense diagonalization of the discrete one-body Hamiltonian (1D or small 2D)."""

    def __init__(self, grid1: Grid, V1=None, mass=1.0, hbar=1.0):
        if grid1.N != 1:
            raise ValueError("eigenbasis needs a one-body grid")
        size = grid1.size
        if size > 4096:
            raise ValueError("one-body grid too large for dense diagonalization")
        kin = KineticOperator(grid1, (mass,), hbar)
        eye = np.eye(size).reshape((size,) + grid1.shape)
        cols = [kin.apply_h(e).ravel() for e in eye]
        H = np.array(cols).T
        H = 0.5 * (H + H.conj().T)
        if V1 is not None:
            H = H + np.diag(np.asarray(V1, dtype=float).ravel())
        self.energies, self.vectors = np.linalg.eigh(H)
        self.grid1 = grid1
        self.hbar = hbar

    def evolution(self, t):
        return (self.vectors * np.exp(-1j * self.energies * t / self.hbar)) @ self.vectors.conj().T

    def occupancies(self, state: ManyBodyState) -> np.ndarray:
        """|<n_1 ... n_N | Psi>|^2 over the product eigenbasis."""
        amp = _apply_each_particle(state.amplitude, state.grid, self.vectors.conj().T)
        p = np.abs(amp) ** 2
        return p / p.sum()


def _apply_each_particle(amp, grid: Grid, M):
    """Apply a one-body matrix to every particle's coordinate block."""
    d = grid.d
    out = amp
    block = grid.n**d
    for i in range(grid.N):
        axes = list(range(i * d, (i + 1) * d))
        moved = np.moveaxis(out, axes, list(range(d)))
        shp = moved.shape
        flat = moved.reshape(block, -1)
        flat = M @ flat
        out = np.moveaxis(flat.reshape(shp), list(range(d)), axes)
    return out


def propagate_exact(state: ManyBodyState, basis: OneBodyEigenbasis, times) -> list:
    """Evolve a non-interacting state by eigenphase factors at each time."""
    return [state.replace(_apply_each_particle(state.amplitude, state.grid, basis.evolution(t)), normalize=False) for t in times]


# -- harmonic towers ----------------------------------------------------------------


def hermite_function(n: int, x, omega: float = 1.0, mass: float = 1.0, hbar: float = 1.0):
    """Normalized 1D oscillator eigenfunction."""
    s = math.sqrt(mass * omega / hbar)
    xi = s * np.asarray(x)
    # recurrence keeps large n stable
    h_prev = np.zeros_like(xi)
    h = np.pi**-0.25 * np.exp(-(xi**2) / 2)
    for k in range(n):
        h, h_prev = math.sqrt(2 / (k + 1)) * xi * h - math.sqrt(k / (k + 1)) * h_prev, h
    return h * math.sqrt(s)


@dataclass(frozen=True)
class HarmonicSpectrum:
    omega: float
    dim: int
    levels: np.ndarray
    degeneracies: np.ndarray
    towers: np.ndarray

    def tower_spacing(self, hbar: float = 1.0) -> float:
        return 2 * hbar * self.omega


def harmonic_spectrum(omega: float, count: int, dim: int = 1, interaction_tag: str = "free", hbar: float = 1.0) -> HarmonicSpectrum:
    """Isotropic oscillator levels (n + dim/2) hbar omega with degeneracies.

    Breathing towers group levels by n // 2; consecutive members differ by
    2 hbar omega.
    """
    if interaction_tag != "free":
        raise NotImplementedError("only the free (non-interacting) spectrum is supported")
    n = np.arange(count)
    levels = (n + dim / 2) * hbar * omega
    deg = comb(n + dim - 1, dim - 1, exact=False).astype(np.int64)
    return HarmonicSpectrum(omega, dim, levels, deg, n // 2)


def breathing_pairs(count: int, offset: int) -> list:
    """Greedy disjoint orbital pairs (lo, lo + offset), lowest first."""
    used, pairs, lo = set(), [], 0
    while len(pairs) < count:
        if lo not in used and lo + offset not in used:
            pairs.append((lo, lo + offset))
            used.update((lo, lo + offset))
        lo += 1
    return pairs


def breathing_state(grid: Grid, omega: float, alpha: float, n_max: int | None = None, offset: int = 1, symmetry: str = "fermi", mass: float = 1.0, hbar: float = 1.0) -> ManyBodyState:
    """Antisymmetrized product of superpositions psi_lo + alpha psi_{lo+offset}.

    With offset 1 the pairs are (0,1), (2,3), ... and one-body observables beat
    at omega; offset 2 pairs (0,2), (1,3), (4,6), ... and the breathing
    moment <x^2> oscillates at 2 omega.
    """
    if grid.d != 1:
        raise ValueError("breathing states are built on 1D grids")
    if abs(alpha) > 1:
        raise ValueError("|alpha| must not exceed 1")
    count = grid.N
    if n_max is not None and n_max + 1 != count:
        raise ValueError(f"n_max={n_max} needs {n_max + 1} particles, grid has {count}")
    pairs = breathing_pairs(count, offset)
    top = max(p[1] for p in pairs)
    E_top = (top + 0.5) * hbar * omega
    kmax = math.pi / grid.spacing[0]
    if math.sqrt(2 * mass * E_top) / hbar * 1.6 > kmax:
        raise GridResolutionError(f"orbital {top} exceeds the grid's Nyquist momentum")
    if 1.6 * math.sqrt(2 * E_top / (mass * omega**2)) > grid.lengths[0] / 2:
        raise GridResolutionError(f"orbital {top} does not fit in the box")
    x = grid.axis_coords(0)
    orbitals = []
    for lo, hi in pairs:
        phi = hermite_function(lo, x, omega, mass, hbar) + alpha * hermite_function(hi, x, omega, mass, hbar)
        orbitals.append(phi)
    return ManyBodyState.product(grid, orbitals, symmetry if count > 1 else "none", (mass,) * count, hbar)


def moment(state_or_amp, grid: Grid, power: int = 2) -> float:
    """Sum over particles of <x_i^power> (1D coordinate 0)."""
    amp = state_or_amp.amplitude if isinstance(state_or_amp, ManyBodyState) else state_or_amp
    prob = np.abs(amp) ** 2
    prob = prob / prob.sum()
    total = 0.0
    for i in range(grid.N):
        total += float(np.sum(prob * grid.config_coord(i, 0) ** power))
    return total


def spectral_peak(signal: np.ndarray, dt: float):
    """Angular frequency of the largest non-DC FFT peak and the bin width."""
    s = np.asarray(signal) - np.mean(signal)
    spec = np.abs(np.fft.rfft(s))
    freqs = 2 * np.pi * np.fft.rfftfreq(s.size, dt)
    i = int(np.argmax(spec[1:]) + 1)
    return float(freqs[i]), float(freqs[1] - freqs[0])


# -- damping --------------------------------------------------------------------------


@dataclass(frozen=True)
class DampingEstimate:
    status: str
    tau: float


def damping_estimate(delta_E: float | None = None, E: float | None = None, L: float | None = None, l: float | None = None, hbar: float = 1.0) -> DampingEstimate:
    """tau = hbar / Delta E, or tau = (hbar / E)(L / l)."""
    if delta_E is not None:
        if delta_E < 0:
            raise ValueError("energy spread must be non-negative")
        if delta_E == 0:
            return DampingEstimate("undamped", math.inf)
        return DampingEstimate("damped", hbar / delta_E)
    if None in (E, L, l) or min(E, L, l) <= 0:
        raise ValueError("need delta_E or positive (E, L, l)")
    return DampingEstimate("damped", hbar / E * (L / l))

