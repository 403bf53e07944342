"""Random-phase thermal wavefunctions and equilibrium diagnostics.

Amplitudes are weighted by exp(-beta E), so mode occupancies follow
exp(-2 beta E).  Natural units by default.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from .core import Grid, ManyBodyState, make_grid, rng_stream

TRUNCATION_LIMIT = 1e-6


class CompositionError(ValueError):
    """States cannot be composed into one product state."""


@dataclass(frozen=True)
class ThermalSpec:
    beta: float
    mode_cutoff: int
    seed: int = 0
    symmetry: str = "none"

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.mode_cutoff < 1:
            raise ValueError("mode_cutoff must be at least 1")


def thermal_wavelength(beta: float, mass: float = 1.0, hbar: float = 1.0) -> float:
    """Standard de Broglie thermal wavelength h / sqrt(2 pi m k_B T)."""
    return 2 * math.pi * hbar * math.sqrt(beta / (2 * math.pi * mass))


def _mode_lattice(grid: Grid, K: int):
    """Integer mode labels in [-K, K] and the wavenumber per spatial axis."""
    labels = np.arange(-K, K + 1)
    dk = np.array([2 * np.pi / L for L in grid.lengths])
    return labels, dk


def mode_energies(grid: Grid, K: int, masses, hbar=1.0) -> np.ndarray:
    """Total kinetic energy on the (2K+1)^(dN) mode lattice."""
    labels, dk = _mode_lattice(grid, K)
    E = np.zeros((2 * K + 1,) * grid.ndim)
    for ax in range(grid.ndim):
        i, a = divmod(ax, grid.d)
        shape = [1] * grid.ndim
        shape[ax] = -1
        k = (labels * dk[a]).reshape(shape)
        E = E + hbar**2 * k**2 / (2 * masses[i])
    return E


def _particle_mode_index(grid: Grid, K: int) -> list:
    """Per particle, the flattened single-particle mode index over the lattice."""
    side = 2 * K + 1
    out = []
    for i in range(grid.N):
        idx = np.zeros((1,) * grid.ndim, dtype=np.int64)
        for a in range(grid.d):
            shape = [1] * grid.ndim
            shape[i * grid.d + a] = side
            idx = idx * side + np.arange(side).reshape(shape)
        out.append(np.broadcast_to(idx, (side,) * grid.ndim))
    return out


def _orbit_phases(grid: Grid, K: int, theta: np.ndarray, symmetry: str):
    """Phase and sign arrays constant on permutation orbits of the mode lattice."""
    if symmetry == "none" or grid.N == 1:
        return theta, np.ones(theta.shape)
    side = 2 * K + 1
    idx = np.stack(_particle_mode_index(grid, K), axis=-1)
    canon = np.sort(idx, axis=-1)
    # canonical representative -> flat index into theta
    shape_per_particle = (side,) * grid.d
    flat = np.zeros(theta.shape, dtype=np.int64)
    for i in range(grid.N):
        sub = np.unravel_index(canon[..., i], shape_per_particle)
        for a in range(grid.d):
            flat = flat * side + sub[a]
    phases = theta.reshape(-1)[flat]
    sign = np.ones(theta.shape)
    if symmetry == "fermi":
        for i in range(grid.N):
            for j in range(i + 1, grid.N):
                sign = sign * np.sign(idx[..., j] - idx[..., i])
    return phases, sign


def thermal_coefficients(grid: Grid, spec: ThermalSpec, masses=None, hbar=1.0) -> np.ndarray:
    """Complex mode coefficients c_k = S[exp(-beta E_k) exp(i theta_k)] on the mode lattice."""
    masses = (1.0,) * grid.N if masses is None else tuple(np.broadcast_to(masses, (grid.N,)))
    K = spec.mode_cutoff
    E = mode_energies(grid, K, masses, hbar)
    rng = rng_stream(spec.seed, "thermal-phases")
    theta = rng.uniform(0.0, 2 * np.pi, size=E.shape)
    phases, sign = _orbit_phases(grid, K, theta, spec.symmetry)
    return sign * np.exp(-spec.beta * (E - E.min())) * np.exp(1j * phases)


def truncation_tail(grid: Grid, spec: ThermalSpec, mass=1.0, hbar=1.0) -> float:
    """Fraction of single-axis occupancy weight lying beyond the mode cutoff."""
    K = spec.mode_cutoff
    worst = 0.0
    for L in grid.lengths:
        n = np.arange(-8 * K, 8 * K + 1)
        w = np.exp(-2 * spec.beta * hbar**2 * (2 * np.pi * n / L) ** 2 / (2 * mass))
        worst = max(worst, float(w[np.abs(n) > K].sum() / w.sum()))
    return worst


def build_thermal_state(grid: Grid, spec: ThermalSpec, masses=None, hbar=1.0) -> ManyBodyState:
    """Symmetrized random-phase superposition of plane-wave products."""
    if not grid.periodic:
        raise ValueError("thermal states require a periodic grid")
    K = spec.mode_cutoff
    if 2 * K + 1 > grid.n:
        raise ValueError(f"mode cutoff {K} exceeds the grid's {grid.n} points per axis")
    m0 = 1.0 if masses is None else float(np.min(masses))
    for L in grid.lengths:
        EK = hbar**2 * (2 * np.pi * K / L) ** 2 / (2 * m0)
        if math.exp(-spec.beta * EK) > TRUNCATION_LIMIT:
            tail = truncation_tail(grid, spec, m0, hbar)
            warnings.warn(
                f"mode cutoff K={K} truncates the thermal weight; tail mass ~ {tail:.3g}", stacklevel=2
            )
            break
    c = thermal_coefficients(grid, spec, masses, hbar)
    full = np.zeros(grid.shape, dtype=np.complex128)
    idx = np.arange(-K, K + 1) % grid.n
    full[np.ix_(*([idx] * grid.ndim))] = c
    amp = np.fft.ifftn(full)
    return ManyBodyState.from_amplitude(grid, amp, spec.symmetry, masses, hbar)


# -- spectral helpers ---------------------------------------------------------------


def _config_wavenumbers(grid: Grid) -> list:
    ks = []
    for ax in range(grid.ndim):
        shape = [1] * grid.ndim
        shape[ax] = -1
        ks.append(grid.wavenumbers(ax % grid.d).reshape(shape))
    return ks


def kinetic_phase_energy(state: ManyBodyState) -> np.ndarray:
    """Kinetic energy of each config-space plane wave, FFT layout."""
    E = np.zeros(state.grid.shape)
    for ax, k in enumerate(_config_wavenumbers(state.grid)):
        E = E + state.hbar**2 * k**2 / (2 * state.masses[ax // state.grid.d])
    return E


def momentum_coefficients(state: ManyBodyState) -> np.ndarray:
    """Plane-wave coefficients normalized so sum |c|^2 = 1."""
    c = np.fft.fftn(state.amplitude)
    return c / math.sqrt(float(np.sum(np.abs(c) ** 2)))


@dataclass(frozen=True)
class MomentumSpectrum:
    k: np.ndarray
    occupancy: np.ndarray

    def to_csv_rows(self):
        return [("bin_center", "value")] + [(float(a), float(b)) for a, b in zip(self.k, self.occupancy)]


def momentum_marginals(state: ManyBodyState) -> list:
    """Per-particle single-particle momentum distribution (FFT layout, sums to 1)."""
    grid = state.grid
    prob = np.abs(momentum_coefficients(state)) ** 2
    out = []
    for i in range(grid.N):
        keep = range(i * grid.d, (i + 1) * grid.d)
        others = tuple(ax for ax in range(grid.ndim) if ax not in keep)
        out.append(prob.sum(axis=others) if others else prob)
    return out


def _single_particle_kmag(grid: Grid) -> np.ndarray:
    ks = np.meshgrid(*[grid.wavenumbers(a) for a in range(grid.d)], indexing="ij")
    return np.sqrt(sum(k**2 for k in ks))


def momentum_spectrum(state: ManyBodyState) -> MomentumSpectrum:
    """Occupancy binned by single-particle |k|; sums to N."""
    grid = state.grid
    kmag = _single_particle_kmag(grid)
    dk = min(2 * np.pi / L for L in grid.lengths)
    labels = np.rint(kmag / dk).astype(np.int64)
    total = sum(momentum_marginals(state))
    occ = np.bincount(labels.ravel(), weights=total.ravel())
    centers = np.bincount(labels.ravel(), weights=kmag.ravel())
    counts = np.bincount(labels.ravel())
    keep = counts > 0
    return MomentumSpectrum(centers[keep] / counts[keep], occ[keep])


def born_momentum_samples(state: ManyBodyState, count: int, seed: int) -> np.ndarray:
    """Sample config-space momentum modes from |c_k|^2; returns flat FFT indices."""
    prob = np.abs(momentum_coefficients(state)) ** 2
    p = prob.ravel() / prob.sum()
    rng = rng_stream(seed, "born-samples")
    return rng.choice(p.size, size=count, p=p)


def occupancy_law_residual(state: ManyBodyState, beta: float, floor: float = 1e-12) -> float:
    """Spread of |c_k|^2 exp(2 beta E_k) across resolved modes (relative).

    Modes below ``floor`` times the peak occupancy are skipped: FFT roundoff
    (~1e-16 in amplitude) dominates them.
    """
    prob = np.abs(momentum_coefficients(state)) ** 2
    E = kinetic_phase_energy(state)
    occupied = prob > floor * prob.max()
    w = prob[occupied] * np.exp(2 * beta * (E[occupied] - E.min()))
    return float((w.max() - w.min()) / w.mean())


# -- equilibration ------------------------------------------------------------------


@dataclass
class EquilibrationReport:
    status: str
    flux: np.ndarray
    ratios: np.ndarray
    time_window: float
    frames: int
    tolerance: float
    passed: bool | None
    pair_flux: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "flux": self.flux.tolist(),
            "ratios": np.where(np.isfinite(self.ratios), self.ratios, -1.0).tolist(),
            "time_window": self.time_window,
            "frames": self.frames,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def _band_masks(grid: Grid, width: float) -> dict:
    masks = {}
    for i in range(grid.N):
        for j in range(i + 1, grid.N):
            r2 = 0.0
            for a in range(grid.d):
                dx = grid.config_coord(i, a) - grid.config_coord(j, a)
                if grid.boundary[a] == "periodic":
                    L = grid.lengths[a]
                    dx = dx - L * np.rint(dx / L)
                r2 = r2 + dx**2
            masks[(i, j)] = np.broadcast_to(r2 < width**2, grid.shape)
    return masks


def _frame_fluxes(amp, C, ks, state, masks):
    """Band-averaged speed per pair plus the peak current and gradient scales."""
    grid = state.grid
    prob = np.abs(amp) ** 2
    out = {}
    speed = []
    jmax = gmax = 0.0
    for i in range(grid.N):
        s2 = np.zeros(grid.shape)
        for a in range(grid.d):
            ax = i * grid.d + a
            dpsi = np.fft.ifftn(1j * ks[ax] * C)
            cur = np.imag(np.conj(amp) * dpsi)
            jmax = max(jmax, float(np.abs(cur).max()))
            gmax = max(gmax, float((np.abs(amp) * np.abs(dpsi)).max()))
            s2 = s2 + (cur / state.masses[i]) ** 2
        speed.append(np.sqrt(s2))
    for (i, j), m in masks.items():
        norm = prob[m].sum()
        out[(i, j)] = (speed[i][m].sum() / norm, speed[j][m].sum() / norm)
    return out, jmax, gmax


def equilibration_report(
    state: ManyBodyState,
    diagonal_width: float,
    time_window: float | None = None,
    dt: float | None = None,
    potential=None,
    tolerance: float = 0.05,
) -> EquilibrationReport:
    """Pairwise balance of mean current magnitudes near the two-body diagonals.

    For each pair (i, j) the mean of |Im(Psi* grad_i Psi)|/m_i over the band
    |x_i - x_j| < width, divided by the band probability, is compared with the
    same quantity for j.  Values are averaged over a time window of free (or
    potential-driven) evolution.
    """
    grid = state.grid
    if state.N < 2:
        raise ValueError("equilibration needs at least two particles")
    if diagonal_width < 2 * grid.spacing.max():
        raise ValueError("diagonal_width must span at least two grid spacings")
    E = kinetic_phase_energy(state)
    C0 = np.fft.fftn(state.amplitude)
    occ = np.abs(C0) ** 2
    if time_window is None:
        order = np.argsort(E.ravel())
        cum = np.cumsum(occ.ravel()[order])
        Emed = E.ravel()[order][np.searchsorted(cum, cum[-1] / 2)]
        time_window = 10 * 2 * np.pi * state.hbar / Emed if Emed > 0 else 0.0
    frames = 1 if time_window == 0 else int(round(time_window / dt)) if dt else 32
    frames = max(frames, 1)
    times = np.linspace(0.0, time_window, frames, endpoint=frames == 1)
    ks = _config_wavenumbers(grid)
    masks = _band_masks(grid, diagonal_width)
    acc = {key: np.zeros(2) for key in masks}
    jmax = gmax = 0.0

    if potential is not None:
        from .dynamics import PropagationPlan, propagate_schrodinger

        step = times[1] - times[0] if frames > 1 else 0.0
        amps = [state.amplitude]
        if frames > 1:
            plan = PropagationPlan(dt=step, steps=frames - 1, potential=potential)
            amps = [s.amplitude for s in propagate_schrodinger(state, plan, stride=1)]
        frame_iter = ((a, np.fft.fftn(a)) for a in amps)
    else:
        frame_iter = (
            (np.fft.ifftn(C), C) for C in (C0 * np.exp(-1j * E * t / state.hbar) for t in times)
        )
    for amp, C in frame_iter:
        f, jm, gm = _frame_fluxes(amp, C, ks, state, masks)
        jmax, gmax = max(jmax, jm), max(gmax, gm)
        for key, val in f.items():
            acc[key] += val
    nframes = frames
    flux = np.zeros((grid.N, grid.N))
    ratios = np.ones((grid.N, grid.N))
    for (i, j), val in acc.items():
        fi, fj = val / nframes
        flux[i, j], flux[j, i] = fi, fj
        ratios[i, j] = fi / fj if fj > 0 else np.inf
        ratios[j, i] = fj / fi if fi > 0 else np.inf
    if jmax <= 1e-10 * gmax:
        return EquilibrationReport("no currents", flux, np.full_like(ratios, np.nan), time_window, nframes, tolerance, None)
    passed = bool(np.all(np.abs(ratios - 1) <= tolerance))
    return EquilibrationReport(
        "pass" if passed else "fail", flux, ratios, float(time_window), nframes, tolerance, passed,
        pair_flux={k: tuple(v / nframes) for k, v in acc.items()},
    )


# -- kinetic fill --------------------------------------------------------------------


def kinetic_fill_profile(potential: np.ndarray, E_thermal: float, cell_volume: float = 1.0, rtol: float = 1e-12):
    """Fill the basin U(X) with kinetic energy E_thermal.

    Returns ``(E, K)`` where ``K = max(E - U, 0)`` and ``sum(K) dV = E_thermal``.
    """
    U = np.asarray(potential, dtype=float)
    if not np.all(np.isfinite(U)):
        raise ValueError("potential must be finite (bounded below)")
    if E_thermal < 0:
        raise ValueError("E_thermal must be non-negative")
    lo = float(U.min())
    if E_thermal == 0:
        return lo, np.zeros_like(U)
    volume = U.size * cell_volume
    hi = float(U.max()) + E_thermal / volume

    def excess(E):
        return np.maximum(E - U, 0.0).sum() * cell_volume - E_thermal

    E = optimize.bisect(excess, lo, hi, xtol=1e-300, rtol=max(rtol, 4 * np.finfo(float).eps), maxiter=400)
    return E, np.maximum(E - U, 0.0)


# -- transitivity ---------------------------------------------------------------------


def fit_beta(energies: np.ndarray, occupancy: np.ndarray, floor: float = 1e-14):
    """Fit occupancy ~ A exp(-2 beta E); returns (beta, rms log residual)."""
    e = np.asarray(energies).ravel()
    p = np.asarray(occupancy).ravel()
    keep = p > floor * p.max()
    slope, intercept = np.polyfit(e[keep], np.log(p[keep]), 1)
    resid = np.log(p[keep]) - (slope * e[keep] + intercept)
    return -slope / 2, float(np.sqrt(np.mean(resid**2)))


@dataclass
class TransitivityReport:
    passed: bool
    betas: list
    beta_fit: float
    fit_residual: float
    equilibration: EquilibrationReport | None
    spectrum: MomentumSpectrum


def compose(state_A: ManyBodyState, state_B: ManyBodyState | None) -> ManyBodyState:
    """Unsymmetrized product state of two bodies on a shared spatial grid."""
    if state_B is None:
        return state_A
    ga, gb = state_A.grid, state_B.grid
    if not ga.compatible(gb):
        raise CompositionError("states live on incompatible grids")
    grid = make_grid(ga.d, ga.N + gb.N, ga.n, ga.lengths, ga.boundary)
    amp = np.multiply.outer(state_A.amplitude, state_B.amplitude)
    if not math.isclose(state_A.hbar, state_B.hbar):
        raise CompositionError("states use different hbar")
    return ManyBodyState.from_amplitude(grid, amp, "none", state_A.masses + state_B.masses, state_A.hbar)


def transitive_check(state_A, state_B, tolerance: float = 0.05, diagonal_width=None) -> TransitivityReport:
    """Compose A and B and test whether the product looks like one thermal body."""
    comp = compose(state_A, state_B)
    grid = comp.grid
    kmag = _single_particle_kmag(grid)
    betas = []
    for i, marg in enumerate(momentum_marginals(comp)):
        E = comp.hbar**2 * kmag**2 / (2 * comp.masses[i])
        betas.append(fit_beta(E, marg)[0])
    pooled_E, pooled_p = [], []
    for i, marg in enumerate(momentum_marginals(comp)):
        pooled_E.append(comp.hbar**2 * kmag.ravel() ** 2 / (2 * comp.masses[i]))
        pooled_p.append(marg.ravel())
    beta_fit, resid = fit_beta(np.concatenate(pooled_E), np.concatenate(pooled_p))
    spread = (max(betas) - min(betas)) / beta_fit
    eq = None
    if comp.N >= 2:
        w = diagonal_width if diagonal_width is not None else 4 * grid.spacing.max()
        eq = equilibration_report(comp, w, tolerance=tolerance)
    passed = bool(spread <= tolerance)
    return TransitivityReport(passed, betas, beta_fit, resid, eq, momentum_spectrum(comp))


# -- density of states ----------------------------------------------------------------


@dataclass(frozen=True)
class DensityOfStates:
    """Omega(E) stored as ln Omega on an energy table, or as a closed form."""

    energies: np.ndarray | None = None
    log_omega: np.ndarray | None = None
    log_omega_fn: object = None

    @classmethod
    def from_counts(cls, energies, counts):
        counts = np.asarray(counts, dtype=float)
        if np.any(counts <= 0):
            raise ValueError("Omega(E) must be positive on its support")
        return cls(np.asarray(energies, dtype=float), np.log(counts))

    @classmethod
    def from_log(cls, energies, log_omega):
        return cls(np.asarray(energies, dtype=float), np.asarray(log_omega, dtype=float))

    @classmethod
    def closed_form(cls, log_omega_fn):
        return cls(log_omega_fn=log_omega_fn)

    def entropy(self, E):
        if self.log_omega_fn is not None:
            return float(self.log_omega_fn(E))
        return float(np.interp(E, self.energies, self.log_omega))


def entropy_temperature(dos: DensityOfStates, E: float):
    """Return (S, T) with S = ln Omega(E) and 1/T = dS/dE (k_B = 1)."""
    if dos.log_omega_fn is not None:
        h = 1e-5 * max(abs(E), 1.0)
        dS = (dos.log_omega_fn(E + h) - dos.log_omega_fn(E - h)) / (2 * h)
        return float(dos.log_omega_fn(E)), float(1.0 / dS)
    Et, St = dos.energies, dos.log_omega
    i = int(np.argmin(np.abs(Et - E)))
    if i == 0 or i == len(Et) - 1:
        warnings.warn("energy at the edge of the tabulation; using a one-sided difference", stacklevel=2)
        j = 1 if i == 0 else i - 1
        lo, hi = min(i, j), max(i, j)
        dS = (St[hi] - St[lo]) / (Et[hi] - Et[lo])
    else:
        dS = (St[i + 1] - St[i - 1]) / (Et[i + 1] - Et[i - 1])
    return dos.entropy(E), float(1.0 / dS)


def harmonic_level_counts(particles: int, max_quanta: int, hbar_omega: float = 1.0):
    """Exact degeneracies of distinguishable 1D oscillators by enumeration."""
    counts = np.zeros(max_quanta + 1, dtype=np.int64)
    levels = np.arange(max_quanta + 1)
    total = np.zeros((1,), dtype=np.int64)
    for _ in range(particles):
        total = (total[:, None] + levels[None, :]).ravel()
        total = total[total <= max_quanta]
    np.add.at(counts, total, 1)
    energies = (levels + particles / 2) * hbar_omega
    return energies, counts


def occupancy_chi2(state: ManyBodyState, beta: float, samples: int, seed: int, min_expected: float = 5.0):
    """Chi-square test of Born-rule momentum samples against exp(-2 beta E).

    Modes are pooled by energy shell; shells with low expectation are merged
    into a tail bin.  Returns (statistic, p-value).
    """
    prob = np.abs(momentum_coefficients(state)) ** 2
    E = kinetic_phase_energy(state)
    occupied = prob > 1e-20 * prob.max()
    law = np.where(occupied, np.exp(-2 * beta * (E - E.min())), 0.0)
    law = law / law.sum()
    draws = born_momentum_samples(state, samples, seed)
    # pool modes into energy shells
    unit = E[E > 0].min() if np.any(E > 0) else 1.0
    shell = np.rint(E.ravel() / unit * 1e6).astype(np.int64)
    uniq, inv = np.unique(shell, return_inverse=True)
    expected = np.bincount(inv, weights=law.ravel(), minlength=uniq.size) * samples
    observed = np.bincount(inv[draws], minlength=uniq.size).astype(float)
    exp_b, obs_b = [], []
    e_acc = o_acc = 0.0
    for e, o in zip(expected, observed):
        e_acc += e
        o_acc += o
        if e_acc >= min_expected:
            exp_b.append(e_acc)
            obs_b.append(o_acc)
            e_acc = o_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        exp_b[-1] += e_acc
        obs_b[-1] += o_acc
    exp_b, obs_b = np.array(exp_b), np.array(obs_b)
    res = stats.chisquare(obs_b, exp_b * obs_b.sum() / exp_b.sum())
    return float(res.statistic), float(res.pvalue)
