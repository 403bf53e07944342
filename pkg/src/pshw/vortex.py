"""Vortex wavefunctions, angular momentum accounting, GHW construction and
coherence measures."""

from __future__ import annotations

import math
import warnings
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy import constants, integrate

from .core import Grid, ManyBodyState, derivative, rng_stream
from .decompose import node_mask
from .hydro import OneBodyFields, helmholtz_decompose, one_body_moments


@dataclass(frozen=True)
class VortexSpec:
    cores: tuple
    windings: tuple
    xi: float

    def __post_init__(self):
        if self.xi <= 0:
            raise ValueError("core length must be positive")
        if len(self.cores) != len(self.windings):
            raise ValueError("one winding number per core")
        if any(int(n) != n or n == 0 for n in self.windings):
            raise ValueError("winding numbers must be nonzero integers")

    def to_dict(self) -> dict:
        return {"cores": [list(map(float, c)) for c in self.cores], "windings": [int(n) for n in self.windings], "xi": self.xi}

    @classmethod
    def from_dict(cls, data: dict) -> "VortexSpec":
        return cls(tuple(tuple(c) for c in data["cores"]), tuple(data["windings"]), float(data["xi"]))


def _plane(grid: Grid):
    if grid.d != 2 or grid.N != 1:
        raise ValueError("vortex fields live on a one-body 2D grid")
    X, Y = grid.mesh()
    return np.broadcast_to(X, grid.shape), np.broadcast_to(Y, grid.shape)


def vortex_factor(grid: Grid, spec: VortexSpec):
    """prod_i tanh(r_i/xi)^|n_i| exp(i n_i theta_i) for the cores of ``spec``."""
    X, Y = _plane(grid)
    cores = [np.asarray(c, dtype=float) for c in spec.cores]
    for a in range(len(cores)):
        for b in range(a + 1, len(cores)):
            if np.hypot(*(cores[a] - cores[b])) < 2 * spec.xi:
                warnings.warn("vortex cores closer than 2 xi overlap", stacklevel=2)
    half = np.asarray(grid.lengths) / 2
    for c in cores:
        if np.any(np.abs(c) > half):
            raise ValueError("vortex core outside the domain")
    amp = np.ones(grid.shape)
    phase = np.zeros(grid.shape)
    for c, n in zip(cores, spec.windings):
        dx, dy = X - c[0], Y - c[1]
        amp = amp * np.tanh(np.hypot(dx, dy) / spec.xi) ** abs(n)
        phase = phase + n * np.arctan2(dy, dx)
    return amp * np.exp(1j * phase)


def make_vortex_wavefunction(grid: Grid, rho0, spec: VortexSpec) -> np.ndarray:
    """sqrt(rho0) times the vortex factor; rho0 may be an array or a callable (X, Y)."""
    X, Y = _plane(grid)
    if callable(rho0):
        rho0 = rho0(X, Y)
    return np.sqrt(np.broadcast_to(np.asarray(rho0, dtype=float), grid.shape)) * vortex_factor(grid, spec)


def circulation(psi: np.ndarray, box) -> float:
    """Sum of wrapped phase increments around the index rectangle (i0, i1, j0, j1).

    Counter-clockwise in (x, y); the result is 2 pi times the enclosed winding.
    """
    i0, i1, j0, j1 = box
    path = (
        [(i, j0) for i in range(i0, i1)]
        + [(i1, j) for j in range(j0, j1)]
        + [(i, j1) for i in range(i1, i0, -1)]
        + [(i0, j) for j in range(j1, j0, -1)]
    )
    path.append(path[0])
    vals = np.array([psi[p] for p in path])
    return float(np.sum(np.angle(vals[1:] / vals[:-1])))


# -- angular momentum ------------------------------------------------------------------


def _current_and_density(obj, grid: Grid | None, mass, hbar):
    if isinstance(obj, ManyBodyState):
        if obj.grid.d != 2:
            raise ValueError("angular momentum needs a 2D physical space")
        rho, j, _ = one_body_moments(obj)
        prob = np.abs(obj.amplitude) ** 2
        masked = float(prob[node_mask(prob)].sum() * obj.grid.cell_volume)
        return obj.grid.physical(), rho, j, obj.masses[0], masked
    psi = np.asarray(obj)
    norm = float(np.sum(np.abs(psi) ** 2) * grid.one_body_cell_volume)
    psi = psi / math.sqrt(norm)
    rho = np.abs(psi) ** 2
    j = [hbar / mass * np.imag(np.conj(psi) * derivative(psi, grid, a)) for a in range(2)]
    masked = float(rho[node_mask(rho)].sum() * grid.one_body_cell_volume)
    return grid, rho, j, mass, masked


def angular_momentum_about(obj, base_point=(0.0, 0.0), grid: Grid | None = None, mass: float = 1.0, hbar: float = 1.0) -> float:
    """L_z = m int (r - r0) x j about ``base_point``.

    ``obj`` is a one-body field (normalized internally, needs ``grid``) or a
    ManyBodyState on a 2D grid, for which the one-body currents of all
    particles are summed.
    """
    g1, _, j, m, masked = _current_and_density(obj, grid, mass, hbar)
    if masked > 0.1:
        warnings.warn(f"node mask holds {masked:.1%} of the norm; L is inaccurate", stacklevel=2)
    X, Y = _plane(g1)
    x0, y0 = base_point
    return float(m * np.sum((X - x0) * j[1] - (Y - y0) * j[0]) * g1.one_body_cell_volume)


def linear_momentum(obj, grid: Grid | None = None, mass: float = 1.0, hbar: float = 1.0) -> np.ndarray:
    g1, _, j, m, _ = _current_and_density(obj, grid, mass, hbar)
    return np.array([m * np.sum(c) * g1.one_body_cell_volume for c in j])


def displaced_vortex_quadrature(b: float, R: float, edge: float, xi: float) -> float:
    """Independent polar quadrature of L/hbar for a unit vortex displaced by b
    in the disk density 0.5 (1 - tanh((r - R)/edge)), base point at the center."""

    def rho(r):
        return 0.5 * (1 - np.tanh((r - R) / edge))

    def weight(theta, r):
        x, y = r * math.cos(theta), r * math.sin(theta)
        d2 = (x - b) ** 2 + y**2
        core = math.tanh(math.sqrt(d2) / xi) ** 2
        return rho(r) * core * r, rho(r) * core * r * ((r * r - b * x) / d2 if d2 > 0 else 0.0)

    rmax = R + 12 * edge
    opts = {"limit": 200, "epsabs": 1e-11, "epsrel": 1e-10}
    norm = integrate.nquad(lambda t, r: weight(t, r)[0], [[0, 2 * math.pi], [0, rmax]], opts=opts)[0]
    lz = integrate.nquad(lambda t, r: weight(t, r)[1], [[0, 2 * math.pi], [0, rmax]], opts=opts, full_output=False)[0]
    return lz / norm


# -- closed forms -----------------------------------------------------------------------


@dataclass
class CylinderObservables:
    L: float
    K: float
    L_quadrature: float
    K_quadrature: float

    @property
    def ratio(self) -> float:
        return self.K / self.L if self.L else 0.0


def cylinder_vortex_observables(R: float, r0: float, n: int, M: float = 1.0, mass: float = 1.0, hbar: float = 1.0) -> CylinderObservables:
    """L and K of an n-fold line vortex in the annulus r0 < r < R.

    The cylinder holds M / mass particles of uniform density.
    """
    if not 0 < r0 < R:
        raise ValueError("need 0 < r0 < R")
    if n == 0:
        return CylinderObservables(0.0, 0.0, 0.0, 0.0)
    if r0 < 1e-6 * R:
        warnings.warn("kinetic energy diverges logarithmically as r0 -> 0", stacklevel=2)
    count = M / mass
    L = count * n * hbar
    K = count * n**2 * hbar**2 / (mass * (R**2 - r0**2)) * math.log(R / r0)
    dens = count / (math.pi * (R**2 - r0**2))

    def speed(r):
        return n * hbar / (mass * r)

    Lq = integrate.quad(lambda r: mass * dens * speed(r) * r * 2 * math.pi * r, r0, R, epsrel=1e-13)[0]
    Kq = integrate.quad(lambda r: 0.5 * mass * dens * speed(r) ** 2 * 2 * math.pi * r, r0, R, epsrel=1e-13, limit=200)[0]
    return CylinderObservables(L, K, Lq, Kq)


@dataclass
class LatticeDeviation:
    L_lattice: float
    L_class: float
    coefficient: float
    s_values: tuple
    gaps: np.ndarray
    printed_coefficient: float = 2.0
    printed_sum: float = float("nan")


def lattice_angular_momentum(R: float, d: float, Omega: float, M: float) -> float:
    """Exact annulus integration with v r = Omega r_k^2 on r_k <= r < r_k+1, r_k = k d."""
    s = R / d
    if s < 4:
        raise ValueError("need R/d >= 4")
    k = np.arange(int(math.floor(s)) + 1)
    r_lo = k * d
    r_hi = np.minimum((k + 1) * d, R)
    keep = r_hi > r_lo
    rho = M / (math.pi * R**2)
    # int rho (v r) 2 pi r dr with v r = Omega r_k^2
    return float(np.sum(rho * Omega * r_lo[keep] ** 2 * math.pi * (r_hi[keep] ** 2 - r_lo[keep] ** 2)))


def lattice_deviation(R: float, d: float, Omega: float, M: float, s_values=(10, 20, 50, 100, 200)) -> LatticeDeviation:
    """Lattice versus rigid-body angular momentum and the fitted c in dL/L = c/s."""
    L_lat = lattice_angular_momentum(R, d, Omega, M)
    L_cl = 0.5 * M * Omega * R**2
    s_arr = np.asarray(s_values, dtype=float)
    gaps = np.array([1 - lattice_angular_momentum(R, R / s, Omega, M) / L_cl for s in s_arr])
    x = 1 / s_arr
    c = float(np.sum(x * gaps) / np.sum(x * x))
    s = int(round(R / d))
    printed = 2 * M * Omega / R**2 * d**4 * sum(j**3 for j in range(1, s + 1))
    return LatticeDeviation(L_lat, L_cl, c, tuple(s_values), gaps, 2.0, printed)


# -- GHW construction -------------------------------------------------------------------


def _phase_from_gradient(v_irr, grid: Grid):
    ks = np.meshgrid(*[grid.wavenumbers(a) for a in range(2)], indexing="ij")
    k2 = ks[0] ** 2 + ks[1] ** 2
    div = sum(1j * k * np.fft.fftn(c) for k, c in zip(ks, v_irr))
    chi = np.where(k2 > 0, -div / np.where(k2 > 0, k2, 1.0), 0.0)
    return np.real(np.fft.ifftn(chi))


def vortex_carriers(fields: OneBodyFields, N: int, bin_cells: int = 4, mass: float = 1.0, hbar: float = 1.0, support: float = 1e-3):
    """Quantize the coarse vorticity into unit vortices, one particle each.

    A unit vortex on one of N particles adds 2 pi hbar / (m N) to the
    circulation of the projected flow, so circulation Gamma needs
    N m Gamma / (2 pi hbar) carriers.  The total of each sign is rounded once
    and the carriers sit at weighted k-means centroids of that sign's
    vorticity.
    Returns [(position, sign), ...].
    """
    grid = fields.grid
    _, v_rot = helmholtz_decompose(fields.v, grid)
    curl = derivative(v_rot[1], grid, 0) - derivative(v_rot[0], grid, 1)
    X, Y = _plane(grid)
    n = grid.n
    if n % bin_cells:
        raise ValueError("bin size must divide the grid")
    nb = n // bin_cells

    def coarse(f):
        return f.reshape(nb, bin_cells, nb, bin_cells).sum(axis=(1, 3))

    dA = grid.one_body_cell_volume
    gamma = coarse(curl) * dA
    xs = coarse(X) / bin_cells**2
    ys = coarse(Y) / bin_cells**2
    quanta = N * mass * gamma / (2 * math.pi * hbar)
    dens = coarse(fields.rho) / bin_cells**2
    quanta = np.where(dens >= support * fields.rho.max(), quanta, 0.0)
    carriers = []
    pts = np.column_stack([xs.ravel(), ys.ravel()])
    for sign in (1, -1):
        w = np.maximum(sign * quanta.ravel(), 0.0)
        count = int(np.rint(w.sum()))
        for c in _weighted_centroids(pts, w, count):
            carriers.append(((float(c[0]), float(c[1])), sign))
    return carriers


def _weighted_centroids(pts, w, count, iterations: int = 100):
    """Deterministic weighted Lloyd iteration, seeded with the heaviest points."""
    if count == 0:
        return np.zeros((0, 2))
    live = w > 0
    pts, w = pts[live], w[live]
    count = min(count, len(pts)) if len(pts) else 0
    if count == 0:
        return np.zeros((0, 2))
    order = np.argsort(-w, kind="stable")
    cent = pts[order[:count]].copy()
    for _ in range(iterations):
        lab = np.argmin(((pts[:, None, :] - cent[None]) ** 2).sum(-1), axis=1)
        new = np.array([np.average(pts[lab == k], axis=0, weights=w[lab == k]) if np.any(lab == k) else cent[k] for k in range(count)])
        if np.allclose(new, cent):
            break
        cent = new
    return cent


def assign_carriers(carriers, N: int):
    """Round-robin assignment of vortices to particles, ordered by a position hash."""
    if len(carriers) > N:
        raise ValueError(f"insufficient particles for vorticity: {len(carriers)} vortices, {N} particles")
    order = sorted(range(len(carriers)), key=lambda i: (zlib.crc32(np.asarray(carriers[i][0]).tobytes()), i))
    per_particle = [[] for _ in range(N)]
    for slot, i in enumerate(order):
        per_particle[slot % N].append(carriers[i])
    return per_particle


def fine_structure(grid: Grid, T: float, lambda_mfp: float, rng, modes: int = 32, mass: float = 1.0, hbar: float = 1.0):
    """Random-phase superposition of plane waves with Maxwell-Boltzmann momenta.

    Wavenumbers are drawn from the MB distribution at temperature T, kept
    above 2 pi / lambda_mfp and snapped to the grid lattice.  Returns a field
    with unit mean square modulus (ones when T = 0).
    """
    if T <= 0:
        return np.ones(grid.shape, dtype=complex)
    X, Y = _plane(grid)
    kmin = 2 * math.pi / lambda_mfp
    sigma = math.sqrt(mass * T) / hbar
    dk = [2 * math.pi / L for L in grid.lengths]
    kmax = [math.pi / h for h in grid.spacing]
    chosen = []
    tries = 0
    while len(chosen) < modes:
        tries += 1
        if tries > 10000 * modes:
            raise ValueError("no lattice momenta above the mean-free-path cutoff")
        k = rng.normal(0.0, sigma, size=2)
        ks = [round(k[a] / dk[a]) * dk[a] for a in range(2)]
        if np.hypot(*ks) <= kmin:
            continue
        if abs(ks[0]) >= kmax[0] or abs(ks[1]) >= kmax[1]:
            continue
        chosen.append(ks)
    phases = rng.uniform(0, 2 * math.pi, size=modes)
    f = sum(np.exp(1j * (p + k[0] * X + k[1] * Y)) for p, k in zip(phases, chosen))
    return f / math.sqrt(np.mean(np.abs(f) ** 2))


def ghw_construct(
    fields: OneBodyFields,
    N: int,
    xi: float,
    lambda_mfp: float,
    seed: int,
    config_grid: Grid | None = None,
    symmetry: str = "bose",
    bin_cells: int = 4,
    modes: int = 32,
    hbar: float = 1.0,
) -> ManyBodyState:
    """Gas hydrodynamic wavefunction for the fields (rho, v, T).

    Each particle gets psi_i = sqrt(rho/N) exp(i m chi / hbar) times its
    assigned unit vortices and an MB fine structure, and the product is
    symmetrized.  ``config_grid`` defaults to the fields' grid with N particles.
    """
    grid = fields.grid
    if grid.d != 2:
        raise ValueError("GHW construction is implemented for 2D fields")
    mass = fields.mass
    config_grid = config_grid or grid.with_particles(N)
    if not config_grid.physical().compatible(grid):
        raise ValueError("configuration grid must share the fields' axes")
    v_irr, _ = helmholtz_decompose(fields.v, grid)
    chi = _phase_from_gradient(v_irr, grid)
    base = np.sqrt(np.maximum(fields.rho, 0) / N) * np.exp(1j * mass * chi / hbar)
    per_particle = assign_carriers(vortex_carriers(fields, N, bin_cells, mass, hbar), N)
    weights = fields.rho / max(fields.rho.sum(), 1e-300)
    T_mean = float(np.sum(weights * fields.T))
    orbitals = []
    for i in range(N):
        rng = rng_stream(seed, f"ghw-particle-{i}")
        psi = base
        if per_particle[i]:
            spec = VortexSpec(tuple(c for c, _ in per_particle[i]), tuple(s for _, s in per_particle[i]), xi)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                psi = psi * vortex_factor(grid, spec)
        psi = psi * fine_structure(grid, T_mean, lambda_mfp, rng, modes, mass, hbar)
        orbitals.append(psi)
    state = ManyBodyState.product(config_grid, orbitals, symmetry if N > 1 else "none", (mass,) * N, hbar)
    # one product term: its random overall phase is the only freedom left
    phase = rng_stream(seed, "ghw-product-phase").uniform(0, 2 * math.pi)
    return state.replace(state.amplitude * np.exp(1j * phase), normalize=False)


# -- coherence measures ----------------------------------------------------------------


@dataclass
class CoherenceField:
    model: np.ndarray | None = None
    model_free: np.ndarray | None = None
    raw: np.ndarray | None = None


def localized_correlation(N: int) -> float:
    """Correlation integral of a symmetrized product of disjoint localized orbitals."""
    return math.exp(0.5 * math.lgamma(N + 1) - 0.5 * N * math.log(N))


def calibration_map(N: int):
    """Affine f_N with f_N(1) = 1 and f_N(y_localized) = 1/N."""
    y0 = localized_correlation(N)
    if N == 1:
        return lambda y: np.asarray(y, dtype=float)
    slope = (1 - 1 / N) / (1 - y0)
    return lambda y: 1 + slope * (np.asarray(y, dtype=float) - 1)


def coherence_model(components) -> np.ndarray:
    """sum_i |psi_i|^2 / max_i |psi_i|^2, zero off the support."""
    p = np.array([np.abs(c) ** 2 for c in components])
    top = p.max(axis=0)
    total = p.sum(axis=0)
    return np.where(top > 0, total / np.where(top > 0, top, 1.0), 0.0)


def coherence_model_free(state: ManyBodyState, f_N=None, floor: float = 0.0):
    """N f_N(y(x)) with y = int |Psi| prod sqrt(p(x_i)) delta(x - x_1) / p(x).

    p = rho / N is the per-particle density, so a product of identical
    orbitals gives y = 1.  The slot integral is averaged over particle labels.
    Returns (N~ field, raw y field).
    """
    grid = state.grid
    N = grid.N
    d = grid.d
    from .core import particle_marginal

    prob = np.abs(state.amplitude) ** 2
    margs = [particle_marginal(prob, grid, i) for i in range(N)]
    p = sum(margs) / N
    root = np.sqrt(np.maximum(p, 0))
    weight = np.abs(state.amplitude)
    for i in range(N):
        shape = [1] * grid.ndim
        shape[i * d : (i + 1) * d] = grid.physical().shape
        weight = weight * root.reshape(shape)
    dv = grid.one_body_cell_volume ** (N - 1)
    y_num = np.zeros(grid.physical().shape)
    for i in range(N):
        others = tuple(ax for ax in range(grid.ndim) if not i * d <= ax < (i + 1) * d)
        y_num += weight.sum(axis=others) * dv if others else weight
    y_num /= N
    live = p > floor * p.max()
    y = np.where(live & (p > 0), y_num / np.where(p > 0, p, 1.0), 0.0)
    f_N = f_N or calibration_map(N)
    Ntilde = np.where(live & (p > 0), N * f_N(y), 0.0)
    return Ntilde, y


def coherence_numbers(components=None, state: ManyBodyState | None = None, f_N=None, floor: float = 0.0) -> CoherenceField:
    out = CoherenceField()
    if components is not None:
        out.model = coherence_model(components)
    if state is not None:
        out.model_free, out.raw = coherence_model_free(state, f_N, floor)
    return out


# -- decorrelated rotation ---------------------------------------------------------------


@dataclass
class ProductState:
    """Product of explicitly listed one-body orbitals (too many particles for a config grid)."""

    grid: Grid
    orbitals: list
    symmetry: str = "bose"
    mass: float = 1.0
    hbar: float = 1.0
    angles: np.ndarray | None = None
    params: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return len(self.orbitals)

    def one_body_density(self) -> np.ndarray:
        return sum(np.abs(o) ** 2 for o in self.orbitals)

    def angular_momentum(self, base_point=(0.0, 0.0)) -> float:
        return sum(angular_momentum_about(o, base_point, self.grid, self.mass, self.hbar) for o in self.orbitals)

    def density_at(self, x, y) -> np.ndarray:
        """Analytic one-body density at arbitrary points."""
        return sum(np.abs(_elliptic_orbital(x, y, th, **self.params)) ** 2 for th in self.angles)

    def to_many_body(self, config_grid: Grid | None = None) -> ManyBodyState:
        config_grid = config_grid or self.grid.with_particles(self.N)
        return ManyBodyState.product(config_grid, self.orbitals, self.symmetry, (self.mass,) * self.N, self.hbar)


def _elliptic_orbital(x, y, theta, a, b, Omega, mass, hbar):
    c, s = math.cos(theta), math.sin(theta)
    xr = c * x + s * y
    yr = -s * x + c * y
    beta = (a * a - b * b) / (a * a + b * b)
    norm = 1 / math.sqrt(math.pi * a * b)
    # irrotational flow of a rotating ellipse: v = Omega beta grad(x' y')
    return norm * np.exp(-0.5 * (xr**2 / a**2 + yr**2 / b**2)) * np.exp(1j * mass * Omega * beta * xr * yr / hbar)


def decorrelated_rotation_state(
    grid: Grid, N: int, Omega: float, ellipticity: float, t: float, kernel_tag: str = "none",
    width: float = 1.0, coherent: bool = False, mass: float = 1.0, hbar: float = 1.0,
) -> ProductState:
    """Elliptic rotating orbitals at major-axis angles 2 pi k / N + Omega t.

    ``coherent=True`` aligns all orbitals at Omega t.  Only the identity kernel
    is implemented; the result is returned as an explicit orbital product.
    """
    if N < 2:
        raise ValueError("need at least two particles")
    if kernel_tag != "none":
        raise NotImplementedError("only the identity correlation kernel is implemented")
    if not 0 <= ellipticity < 1:
        raise ValueError("ellipticity must lie in [0, 1)")
    a, b = width * (1 + ellipticity), width * (1 - ellipticity)
    X, Y = _plane(grid)
    k = np.arange(N)
    angles = Omega * t + (0.0 if coherent else 2 * math.pi * k / N) * np.ones(N)
    params = {"a": a, "b": b, "Omega": Omega, "mass": mass, "hbar": hbar}
    orbitals = [_elliptic_orbital(X, Y, th, **params) for th in angles]
    return ProductState(grid, orbitals, "bose", mass, hbar, angles, params)


def angular_variance(state: ProductState, radii, samples: int = 256) -> float:
    """Max over radii of var_theta(rho) / mean_theta(rho)^2 from the analytic density."""
    th = np.linspace(0, 2 * math.pi, samples, endpoint=False)
    worst = 0.0
    for r in radii:
        vals = state.density_at(r * np.cos(th), r * np.sin(th))
        worst = max(worst, float(np.var(vals) / np.mean(vals) ** 2))
    return worst


# -- scale estimates -------------------------------------------------------------------


@dataclass
class ScaleReport:
    v_del_cm: float
    v_del_atom: float
    delta_x_cm: float
    atom_count: float
    omega_threshold: float
    vortex_energy: float | None
    printed: dict

    def orders(self) -> dict:
        return {
            "v_del_cm": math.log10(self.v_del_cm),
            "v_del_atom": math.log10(self.v_del_atom),
            "omega_threshold": math.log10(self.omega_threshold),
        }

    def within_order(self) -> dict:
        return {k: abs(math.log10(getattr(self, k)) - math.log10(v)) <= 1.0 for k, v in self.printed.items()}


PRINTED_SCALES = {"v_del_cm": 1e-33, "v_del_atom": 1e4, "omega_threshold": 1e12}


def delocalization_speed(mass: float, delta_x: float, hbar: float = constants.hbar) -> float:
    return hbar / (mass * delta_x)


def scale_estimates(
    body_mass: float = 1.0, atom_mass: float = 1e-25, delta_x_atom: float = 1e-11, temperature: float = 300.0,
    pressure: float | None = None, cloud_extent: float | None = None, angular_momentum: float | None = None,
    particles: float | None = None,
) -> ScaleReport:
    """SI order-of-magnitude estimates: delocalization speeds, rotation threshold, vortex energy."""
    N = body_mass / atom_mass
    dx_cm = math.sqrt(N) * delta_x_atom
    v_cm = delocalization_speed(body_mass, dx_cm)
    v_atom = delocalization_speed(atom_mass, delta_x_atom)
    omega = constants.k * temperature / constants.hbar
    dE = None
    if None not in (pressure, cloud_extent, angular_momentum, particles):
        lam = constants.h / math.sqrt(2 * math.pi * atom_mass * constants.k * temperature)
        dE = pressure * lam**2 * cloud_extent * angular_momentum / (particles * constants.hbar)
    return ScaleReport(v_cm, v_atom, dx_cm, N, omega, dE, dict(PRINTED_SCALES))
