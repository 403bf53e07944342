"""Trap potentials, classical evaporation, quantum leakage and preparation history."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from .core import Grid, ManyBodyState, rng_stream
from .dynamics import OneBodyEigenbasis, PropagationPlan, propagate_schrodinger

TRAP_KINDS = ("harmonic", "gaussian", "barrier", "tabulated")


@dataclass(frozen=True)
class TrapSpec:
    kind: str
    V0: float = 1.0
    a: float = 1.0
    omega: float = 1.0
    alpha: float = 3.0
    b: float = 2.0
    mass: float = 1.0
    table: object = None

    def __post_init__(self):
        if self.kind not in TRAP_KINDS:
            raise ValueError(f"unknown trap kind {self.kind!r}")
        if self.kind in ("gaussian", "barrier") and self.V0 <= 0:
            raise ValueError("V0 must be positive")
        if self.kind in ("gaussian", "barrier") and self.a <= 0:
            raise ValueError("a must be positive")
        if self.kind == "harmonic" and self.omega <= 0:
            raise ValueError("omega must be positive")
        if self.kind == "tabulated" and self.table is None:
            raise ValueError("tabulated trap needs a table")

    def radial(self, r):
        """Potential as a function of the single-particle radius."""
        r = np.asarray(r, dtype=float)
        if self.kind == "harmonic":
            return 0.5 * self.mass * self.omega**2 * r**2
        if self.kind == "gaussian":
            return self.V0 * (1 - np.exp(-(r**2) / self.a**2))
        if self.kind == "barrier":
            return self.V0 * (self.alpha * self._soft(r) - self._soft(r - self.b) - self._soft(r + self.b))
        raise ValueError("tabulated traps have no radial form")

    def _soft(self, u):
        # exp(-a^2/u^2), continuous at u = 0
        u2 = np.asarray(u, dtype=float) ** 2
        out = np.zeros_like(u2)
        nz = u2 > 0
        out[nz] = np.exp(-(self.a**2) / u2[nz])
        return out

    @property
    def depth(self) -> float:
        """Energy above which a particle is unbound (the far-field plateau)."""
        if self.kind == "gaussian":
            return self.V0
        if self.kind == "barrier":
            return self.V0 * (self.alpha - 2)
        return np.inf


@dataclass
class TrapPotential:
    values: np.ndarray
    report: dict = field(default_factory=dict)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def _barrier_report(spec: TrapSpec, hbar: float = 1.0, points: int = 20001) -> dict:
    r = np.linspace(0.0, spec.b + 8 * spec.a, points)
    V = spec.radial(r)
    top = int(np.argmax(V))
    inner = V[: top + 1]
    bottom = float(inner.min())
    peak = float(V[top])
    plateau = float(spec.depth)
    finite = bool(bottom < plateau and peak > plateau)
    # WKB count on the symmetric line profile through the centre, below the plateau
    level = min(plateau, peak)
    p = np.sqrt(np.clip(2 * spec.mass * (level - inner), 0, None)) / hbar
    action = 2 * np.trapezoid(p, r[: top + 1])
    return {
        "well_bottom": bottom,
        "barrier_top": peak,
        "barrier_radius": float(r[top]),
        "plateau": plateau,
        "well_depth": plateau - bottom,
        "finite_barrier": finite,
        "wkb_count": int(np.floor(action / (np.pi) + 0.5)) if finite else 0,
    }


def make_trap_potential(spec: TrapSpec, grid: Grid, hbar: float = 1.0) -> TrapPotential:
    """Sample the trap on the one-body mesh of ``grid``."""
    g1 = grid.physical()
    if spec.kind == "tabulated":
        values = np.broadcast_to(np.asarray(spec.table, dtype=float), g1.shape).copy()
        return TrapPotential(values, {"kind": "tabulated"})
    r = np.sqrt(sum(np.broadcast_to(X, g1.shape) ** 2 for X in g1.mesh()))
    report = {"kind": spec.kind, "depth": float(spec.depth)}
    if spec.kind == "barrier":
        report.update(_barrier_report(spec, hbar))
    return TrapPotential(spec.radial(r), report)


# -- classical evaporation ------------------------------------------------------------


@dataclass
class EvaporationRecord:
    times: np.ndarray
    retained: np.ndarray
    energy: np.ndarray
    escape_times: np.ndarray
    escape_energies: np.ndarray
    thermal_at_escape: np.ndarray
    bookkeeping_error: float
    collisions: int
    knudsen: float
    warnings: list = field(default_factory=list)

    def histogram(self, bins: int = 20):
        if self.escape_energies.size == 0:
            return np.zeros(bins), np.linspace(0, 1, bins + 1)
        return np.histogram(self.escape_energies, bins=bins)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "retained", "energy"])
            for row in zip(self.times, self.retained, self.energy):
                w.writerow([float(row[0]), int(row[1]), float(row[2])])


def _radial_force(spec: TrapSpec, pos: np.ndarray) -> np.ndarray:
    if spec.kind == "harmonic":
        return -spec.mass * spec.omega**2 * pos
    if spec.kind != "gaussian":
        raise ValueError("classical evaporation supports harmonic and gaussian traps")
    r2 = np.sum(pos**2, axis=1, keepdims=True)
    return -2 * spec.V0 / spec.a**2 * np.exp(-r2 / spec.a**2) * pos


def _sample_cloud(spec: TrapSpec, N: int, T0: float, rng, box: float):
    """Positions from r^2 exp(-V/T) inside the escape sphere, Maxwellian velocities."""
    r = np.linspace(0.0, box, 4001)
    w = r**2 * np.exp(-(spec.radial(r) - spec.radial(0.0)) / T0)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * np.diff(r))])
    radii = np.interp(rng.random(N), cdf / cdf[-1], r)
    direction = rng.normal(size=(N, 3))
    pos = radii[:, None] * direction / np.linalg.norm(direction, axis=1, keepdims=True)
    vel = rng.normal(scale=np.sqrt(T0 / spec.mass), size=(N, 3))
    vel -= vel.mean(axis=0)
    return pos, vel


def _collide(pos, vel, diameter, tree_pairs):
    """Elastic equal-mass hard-sphere collisions for overlapping, approaching pairs."""
    count = 0
    for i, j in tree_pairs:
        dx = pos[i] - pos[j]
        dv = vel[i] - vel[j]
        approach = dx @ dv
        if approach >= 0:
            continue
        n = dx / np.sqrt(dx @ dx)
        dvn = (dv @ n) * n
        vel[i] -= dvn
        vel[j] += dvn
        count += 1
    return count


def classical_evaporation(
    N: int,
    spec: TrapSpec,
    T0: float,
    cross_section: float,
    t_max: float,
    seed: int,
    dt: float | None = None,
    stride: int = 10,
    boundary: float | None = None,
) -> EvaporationRecord:
    """Hard spheres in a 3D trap; particles escape through a spherical boundary.

    Free flight is velocity Verlet in the trap force; collisions are applied
    to overlapping pairs that are still approaching.  A particle leaves when it
    is outside ``boundary`` (default 3a) with total energy above the depth.
    """
    rng = rng_stream(seed, "evaporation")
    m = spec.mass
    diameter = np.sqrt(cross_section / np.pi)
    box = boundary if boundary is not None else 3.0 * spec.a
    pos, vel = _sample_cloud(spec, N, T0, rng, box)
    omega = np.sqrt(2 * spec.V0 / (m * spec.a**2)) if spec.kind == "gaussian" else spec.omega
    vth = np.sqrt(T0 / m)
    if dt is None:
        dt = min(0.02 / omega, 0.2 * diameter / vth) if diameter > 0 else 0.02 / omega
    depth = spec.depth

    def energies(p, v):
        return 0.5 * m * np.sum(v**2, axis=1) + spec.radial(np.sqrt(np.sum(p**2, axis=1)))

    # mean free path against the potential scale length at the rms radius
    rms = np.sqrt(np.mean(np.sum(pos**2, axis=1)))
    n0 = N / ((2 * np.pi) ** 1.5 * (rms / np.sqrt(3)) ** 3)
    mfp = 1.0 / (n0 * cross_section) if cross_section > 0 else np.inf
    Vr = spec.radial(rms)
    force = np.linalg.norm(_radial_force(spec, np.array([[rms, 0, 0]])))
    knudsen = float(mfp / (Vr / force))
    notes = []
    if knudsen > 0.1:
        notes.append(f"mean free path {mfp:.3g} is not small against V/|grad V| = {Vr / force:.3g}")
        warnings.warn(notes[-1], stacklevel=2)

    acc = _radial_force(spec, pos) / m
    steps = int(np.ceil(t_max / dt))
    times, retained, energy = [0.0], [N], [float(energies(pos, vel).sum())]
    esc_t, esc_E, esc_T = [], [], []
    worst = 0.0
    collisions = 0
    for step in range(1, steps + 1):
        vel += 0.5 * dt * acc
        pos += dt * vel
        acc = _radial_force(spec, pos) / m
        vel += 0.5 * dt * acc
        # impulses act on full-step velocities so each collision conserves the energy exactly
        if diameter > 0 and len(pos) > 1:
            collisions += _collide(pos, vel, diameter, cKDTree(pos).query_pairs(diameter, output_type="ndarray"))
        E = energies(pos, vel)
        out = (np.sum(pos**2, axis=1) > box**2) & (E > depth)
        if out.any():
            before = float(E.sum())
            keep = ~out
            # thermal scale of the cloud the particles leave, from its kinetic energy
            kin = 0.5 * m * np.sum(vel**2, axis=1)
            Eth = float(kin.mean()) if keep.sum() == 0 else float(kin[keep].mean())
            for e in E[out]:
                esc_t.append(step * dt)
                esc_E.append(float(e))
                esc_T.append(Eth)
            after = float(E[keep].sum())
            worst = max(worst, abs(before - after - float(E[out].sum())) / max(abs(before), 1e-300))
            pos, vel, acc = pos[keep], vel[keep], acc[keep]
        if step % stride == 0 or step == steps:
            times.append(step * dt)
            retained.append(len(pos))
            energy.append(float(energies(pos, vel).sum()))
    return EvaporationRecord(
        np.array(times), np.array(retained), np.array(energy),
        np.array(esc_t), np.array(esc_E), np.array(esc_T), worst, collisions, knudsen, notes,
    )


def maxwell_speed_test(speeds: np.ndarray, T: float, mass: float = 1.0) -> float:
    """Kolmogorov-Smirnov p-value of speeds against the 3D Maxwell law at T."""
    from scipy import stats

    return float(stats.kstest(speeds, stats.maxwell(scale=np.sqrt(T / mass)).cdf).pvalue)


def sealed_relaxation(N: int, omega: float, energy_per_particle: float, cross_section: float, t_max: float, seed: int, dt=None):
    """Relax a monoenergetic gas in a harmonic trap and return (speeds, T).

    Starting speeds are all equal, so a Maxwellian at the end is produced by
    collisions alone.  T follows from equipartition of the conserved energy.
    """
    rng = rng_stream(seed, "sealed")
    spec = TrapSpec("harmonic", omega=omega)
    T = energy_per_particle / 3.0
    pos = rng.normal(scale=np.sqrt(T) / omega, size=(N, 3))
    pot = 0.5 * omega**2 * np.sum(pos**2, axis=1)
    speed = np.sqrt(np.clip(2 * (energy_per_particle - pot.mean()), 0, None))
    direction = rng.normal(size=(N, 3))
    vel = speed * direction / np.linalg.norm(direction, axis=1, keepdims=True)
    vel -= vel.mean(axis=0)
    diameter = np.sqrt(cross_section / np.pi)
    dt = dt or min(0.02 / omega, 0.2 * diameter / max(speed, 1e-12))
    E0 = 0.5 * np.sum(vel**2) + np.sum(spec.radial(np.linalg.norm(pos, axis=1)))
    acc = -(omega**2) * pos
    for _ in range(int(np.ceil(t_max / dt))):
        vel += 0.5 * dt * acc
        pos += dt * vel
        acc = -(omega**2) * pos
        vel += 0.5 * dt * acc
        _collide(pos, vel, diameter, cKDTree(pos).query_pairs(diameter, output_type="ndarray"))
    E1 = 0.5 * np.sum(vel**2) + np.sum(spec.radial(np.linalg.norm(pos, axis=1)))
    return np.linalg.norm(vel, axis=1), E1 / (3 * N), abs(E1 - E0) / abs(E0)


# -- quantum leakage ------------------------------------------------------------------


@dataclass
class LeakageReport:
    times: np.ndarray
    norm: np.ndarray
    bound_fraction: np.ndarray
    bound_count: int
    threshold: float
    initial_bound: float
    leak_rate: float
    tau_estimate: float
    tau_printed: float
    status: str
    densities: list = field(default_factory=list)

    def csv_rows(self):
        rows = [["t", "norm", "bound_fraction"]]
        rows += [[float(t), float(n), float(b)] for t, n, b in zip(self.times, self.norm, self.bound_fraction)]
        return rows


def bound_projector(grid1: Grid, V: np.ndarray, threshold: float | None = None, mass=1.0, hbar=1.0):
    """Eigenvectors of the discrete trap Hamiltonian below ``threshold``.

    The default threshold is the smallest potential value on the domain edge.
    """
    V = np.asarray(V, dtype=float)
    if threshold is None:
        edges = [np.take(V, [0, -1], axis=a) for a in range(V.ndim)]
        threshold = float(min(e.min() for e in edges))
    basis = OneBodyEigenbasis(grid1, V, mass, hbar)
    # a flat continuum bottom sits at the threshold up to roundoff
    sel = basis.energies < threshold - 1e-10 * max(1.0, abs(threshold))
    return basis, sel, threshold


def quantum_leakage(state: ManyBodyState, spec_or_V, plan: PropagationPlan, stride: int = 10, threshold: float | None = None) -> LeakageReport:
    """Track the norm and bound-state weight of a one-body packet under an absorbing edge."""
    if state.N != 1:
        raise ValueError("leakage is computed for one-body states")
    if plan.absorbing_width <= 0:
        raise ValueError("quantum leakage needs an absorbing boundary")
    grid = state.grid
    mass, hbar = state.masses[0], state.hbar
    V = np.asarray(make_trap_potential(spec_or_V, grid, hbar) if isinstance(spec_or_V, TrapSpec) else spec_or_V, dtype=float)
    if threshold is None and isinstance(spec_or_V, TrapSpec) and np.isfinite(spec_or_V.depth):
        threshold = spec_or_V.depth
    basis, sel, threshold = bound_projector(grid, V, threshold, mass, hbar)
    Pb = basis.vectors[:, sel].conj().T
    w = np.sqrt(grid.cell_volume)

    def bound(psi):
        return float(np.sum(np.abs(Pb @ psi.ravel()) ** 2) * w**2)

    run = PropagationPlan(plan.dt, plan.steps, V, plan.interaction, plan.absorbing_width, plan.absorbing_strength)
    traj = propagate_schrodinger(state, run, stride=stride, observables={"bound": bound})
    b = traj.observables["bound"]
    b0 = float(b[0])
    status = "ok" if sel.any() else "all-leak"
    if not sel.any():
        warnings.warn("the trap has no bound state; everything leaks", stacklevel=2)
    # unbound weight and its decay rate
    u = np.clip(traj.norms - b, 1e-300, None)
    live = u > 1e-3 * max(u[0], 1e-300)
    rate = float(-np.polyfit(traj.times[live], np.log(u[live]), 1)[0]) if live.sum() >= 3 else np.nan
    c = basis.vectors.conj().T @ state.amplitude.ravel() * w
    p = np.abs(c) ** 2
    un = ~sel
    E_un = float(np.sum(p[un] * basis.energies[un]) / p[un].sum()) - threshold if p[un].sum() > 1e-14 else np.nan
    return LeakageReport(
        traj.times, traj.norms, b, int(sel.sum()), float(threshold), b0, rate,
        hbar / E_un if E_un and E_un > 0 else np.inf,
        hbar * E_un if np.isfinite(E_un) else np.nan,
        status,
        [np.abs(st.amplitude) ** 2 for st in traj.states],
    )


# -- preparation history --------------------------------------------------------------


@dataclass
class RadiusShift:
    delta_R: float
    variance: float
    printed_linear: float
    tag: str


def history_radius_shift(coefficients, E0: float, delta_E: float, distribution_tag: str = "uniform_width_dE") -> RadiusShift:
    """Radius difference between a broad and a narrow energy distribution.

    With R(E0 + e) = R0 + A e + B e^2 the average over a distribution of
    zero-mean offsets shifts R by B Var(e).
    """
    R0, A, B = coefficients
    if not np.isfinite(B):
        raise ValueError("B must be finite")
    if distribution_tag in ("uniform_width_dE", "uniform_width_ΔE", "uniform"):
        var = delta_E**2 / 12.0
    elif distribution_tag == "narrow":
        var = 0.0
    else:
        raise ValueError(f"unknown distribution tag {distribution_tag!r}")
    return RadiusShift(B * var, var, B * delta_E / 12.0, distribution_tag)


def energy_moments(coeffs: np.ndarray, energies: np.ndarray):
    p = np.abs(coeffs) ** 2
    p = p / p.sum()
    mean = float(p @ energies)
    return mean, float(np.sqrt(max(p @ (energies - mean) ** 2, 0.0)))


def evaporative_path(basis: OneBodyEigenbasis, cut: float, temperature: float, rng) -> np.ndarray:
    """Hot random superposition with every component above ``cut`` removed."""
    E = basis.energies
    z = rng.normal(size=E.size) + 1j * rng.normal(size=E.size)
    c = z * np.exp(-(E - E[0]) / (2 * temperature))
    c[E > cut] = 0
    return c / np.linalg.norm(c)


def release_recapture(basis: OneBodyEigenbasis, tau: float, bound: np.ndarray, mass=1.0) -> np.ndarray:
    """Ground state released for ``tau``, recaptured, unbound part lost."""
    grid = basis.grid1
    psi = basis.vectors[:, 0].reshape(grid.shape)
    k2 = sum(np.meshgrid(*[grid.wavenumbers(a) ** 2 for a in range(grid.d)], indexing="ij"))
    psi = np.fft.ifftn(np.exp(-0.5j * basis.hbar * k2 * tau / mass) * np.fft.fftn(psi))
    c = basis.vectors.conj().T @ psi.ravel()
    c[~bound] = 0
    return c / np.linalg.norm(c)


@dataclass
class HistoryContrast:
    mean_energy: np.ndarray
    width_evaporated: np.ndarray
    width_released: np.ndarray
    release_time: np.ndarray
    separation: float

    def summary(self) -> dict:
        return {
            "width_evaporated": float(self.width_evaporated.mean()),
            "width_released": float(self.width_released.mean()),
            "separation_sigma": float(self.separation),
            "seeds": int(self.mean_energy.size),
        }


def history_contrast(spec: TrapSpec, grid1: Grid, seeds, cut_fraction: float = 0.4, temperature: float = 1e3, tau_max: float = 4.0, scan: int = 401) -> HistoryContrast:
    """Energy widths of two preparations reaching the same mean energy.

    Path A evaporates a hot superposition down to ``cut_fraction`` of the trap
    depth.  Path B releases the ground state and recaptures it after a free
    flight tuned so the mean energies agree.  The separation is Welch's
    statistic for the two sets of widths.
    """
    V = np.asarray(make_trap_potential(spec, grid1))
    basis, bound, depth = bound_projector(grid1, V, spec.depth if np.isfinite(spec.depth) else None, spec.mass)
    E = basis.energies

    def released(tau):
        return energy_moments(release_recapture(basis, tau, bound, spec.mass), E)

    taus = np.linspace(0.0, tau_max, scan)
    means = np.array([released(t)[0] for t in taus])
    rows = []
    for seed in seeds:
        cA = evaporative_path(basis, cut_fraction * depth, temperature, rng_stream(seed, "history"))
        mA, wA = energy_moments(cA, E)
        above = np.nonzero(means >= mA)[0]
        if above.size == 0 or above[0] == 0:
            raise ValueError("release scan does not reach the evaporated mean energy")
        i = above[0]
        tau = brentq(lambda t: released(t)[0] - mA, taus[i - 1], taus[i], xtol=1e-14)
        rows.append((mA, wA, released(tau)[1], tau))
    r = np.array(rows)
    n = len(r)
    if n < 2:
        sep = np.nan
    else:
        se = np.sqrt(r[:, 1].var(ddof=1) / n + r[:, 2].var(ddof=1) / n)
        sep = abs(r[:, 2].mean() - r[:, 1].mean()) / se if se > 0 else np.inf
    return HistoryContrast(r[:, 0], r[:, 1], r[:, 2], r[:, 3], float(sep))
