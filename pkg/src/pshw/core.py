"""Grids, many-body wavefunction storage, symmetrization and one-body reductions.

Configuration space for N particles in d spatial dimensions is a uniform
rectangular grid with d*N axes.  Axis ``i*d + a`` is coordinate ``a`` of
particle ``i``.  Amplitudes are stored as a C-ordered (row-major) complex
array of shape ``(n,) * (d*N)``.

Natural units (hbar = m = k_B = 1) are the default throughout.
"""

from __future__ import annotations

import itertools
import math
import os
import struct
import warnings
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

DEFAULT_MEMORY_CAP = 2**25
MEMORY_CAP_ENV = "PSHW_MEMORY_CAP"

SYMMETRIES = ("none", "bose", "fermi")
SNAPSHOT_MAGIC = b"PSHW"
SNAPSHOT_VERSION = 1
_SYMMETRY_TAGS = {"none": 0, "bose": 1, "fermi": 2}


class GridSizeError(ValueError):
    """Raised when a grid would exceed the configured memory cap."""


class DegenerateAntisymmetrization(ValueError):
    """Antisymmetrizing the input produced a state of zero norm."""


def memory_cap() -> int:
    """Maximum number of complex values a configuration-space grid may hold."""
    value = os.environ.get(MEMORY_CAP_ENV)
    if value is None:
        return DEFAULT_MEMORY_CAP
    return int(value)


@dataclass(frozen=True)
class PhysicalConstants:
    hbar: float = 1.0
    k_B: float = 1.0
    mass: float = 1.0

    def __post_init__(self):
        for name in ("hbar", "k_B", "mass"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    @classmethod
    def si(cls, mass: float = 1.66053906660e-27) -> "PhysicalConstants":
        from scipy import constants

        return cls(hbar=constants.hbar, k_B=constants.k, mass=mass)


NATURAL = PhysicalConstants()


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform grid over the d*N dimensional configuration space.

    ``boundary`` is per spatial axis: ``"periodic"`` points sit at
    ``-L/2 + j*h`` with ``h = L/n``; ``"wall"`` axes carry Dirichlet walls at
    ``+-L/2`` with interior points ``-L/2 + (j+1)*h``, ``h = L/(n+1)``, and
    are handled spectrally through the odd (sine) extension.
    """

    d: int
    N: int
    n: int
    lengths: tuple
    boundary: tuple

    def __post_init__(self):
        if self.d < 1 or self.N < 1 or self.n < 2:
            raise ValueError("need d >= 1, N >= 1 and at least 2 points per axis")
        if len(self.lengths) != self.d or len(self.boundary) != self.d:
            raise ValueError("lengths and boundary need one entry per spatial axis")
        if any(L <= 0 for L in self.lengths):
            raise ValueError("axis lengths must be positive")
        for b in self.boundary:
            if b not in ("periodic", "wall"):
                raise ValueError(f"unknown boundary {b!r}")

    @property
    def ndim(self) -> int:
        return self.d * self.N

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.ndim

    @property
    def size(self) -> int:
        return self.n**self.ndim

    @property
    def spacing(self) -> np.ndarray:
        """Grid spacing per spatial axis."""
        return np.array(
            [L / (self.n + 1) if b == "wall" else L / self.n for L, b in zip(self.lengths, self.boundary)]
        )

    @property
    def cell_volume(self) -> float:
        """Volume element of configuration space."""
        return float(np.prod(self.spacing) ** self.N)

    @property
    def one_body_cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def periodic(self) -> bool:
        return all(b == "periodic" for b in self.boundary)

    def axis_coords(self, a: int) -> np.ndarray:
        """Point coordinates along spatial axis ``a``."""
        L, h = self.lengths[a], self.spacing[a]
        offset = 1 if self.boundary[a] == "wall" else 0
        return -L / 2 + (np.arange(self.n) + offset) * h

    def wavenumbers(self, a: int) -> np.ndarray:
        """Spectral duals of spatial axis ``a`` in FFT ordering.

        For wall axes these are the wavenumbers of the length ``2(n+1)`` odd
        extension.
        """
        h = self.spacing[a]
        if self.boundary[a] == "wall":
            return 2 * np.pi * np.fft.fftfreq(2 * (self.n + 1), d=h)
        return 2 * np.pi * np.fft.fftfreq(self.n, d=h)

    def physical(self) -> "Grid":
        """The one-particle grid with the same spatial axes."""
        return Grid(self.d, 1, self.n, self.lengths, self.boundary)

    def with_particles(self, N: int) -> "Grid":
        return make_grid(self.d, N, self.n, self.lengths, self.boundary)

    def compatible(self, other: "Grid") -> bool:
        return (
            self.d == other.d
            and self.n == other.n
            and np.allclose(self.lengths, other.lengths)
            and self.boundary == other.boundary
        )

    def mesh(self) -> list:
        """Open mesh of physical coordinates for the one-body grid (length d)."""
        axes = [self.axis_coords(a) for a in range(self.d)]
        return np.meshgrid(*axes, indexing="ij", sparse=True)

    def config_coord(self, particle: int, a: int) -> np.ndarray:
        """Broadcastable array of coordinate ``a`` of ``particle``."""
        shape = [1] * self.ndim
        shape[particle * self.d + a] = self.n
        return self.axis_coords(a).reshape(shape)


def make_grid(d, N, points_per_axis, axis_length, boundary="periodic", cap=None) -> Grid:
    """Build a configuration-space grid, refusing ones above the memory cap."""
    lengths = tuple(float(x) for x in np.broadcast_to(np.asarray(axis_length, float), (d,)))
    if isinstance(boundary, str):
        boundary = (boundary,) * d
    cap = memory_cap() if cap is None else cap
    total = int(points_per_axis) ** (d * N)
    if total > cap:
        raise GridSizeError(
            f"{points_per_axis}^{d * N} = {total} points exceeds the memory cap of {cap} complex values"
        )
    n = int(points_per_axis)
    if n & (n - 1):
        warnings.warn(f"{n} points per axis is not a power of two; FFTs will be slower", stacklevel=2)
    return Grid(int(d), int(N), n, lengths, tuple(boundary))


# -- spectral primitives -------------------------------------------------------------


def _odd_extend(f: np.ndarray, axis: int) -> np.ndarray:
    n = f.shape[axis]
    zero_shape = list(f.shape)
    zero_shape[axis] = 1
    z = np.zeros(zero_shape, dtype=f.dtype)
    mirrored = -np.flip(f, axis=axis)
    return np.concatenate([z, f, z, mirrored], axis=axis)


def _restrict(f: np.ndarray, axis: int, n: int) -> np.ndarray:
    return np.take(f, np.arange(1, n + 1), axis=axis)


def apply_spectral(f: np.ndarray, grid: Grid, axis: int, multiplier) -> np.ndarray:
    """Apply a diagonal Fourier multiplier ``multiplier(k)`` along one config axis."""
    a = axis % grid.d
    k = grid.wavenumbers(a)
    wall = grid.boundary[a] == "wall"
    g = _odd_extend(f, axis) if wall else f
    shape = [1] * g.ndim
    shape[axis] = k.size
    out = np.fft.ifft(np.fft.fft(g, axis=axis) * multiplier(k).reshape(shape), axis=axis)
    if wall:
        out = _restrict(out, axis, grid.n)
    if np.isrealobj(f) and np.isrealobj(multiplier(np.zeros(1))):
        # odd-order derivatives of real data stay real
        return out.real
    return out


def derivative(f: np.ndarray, grid: Grid, axis: int, order: int = 1) -> np.ndarray:
    """Spectral derivative of ``f`` along config axis ``axis``."""
    out = apply_spectral(f, grid, axis, lambda k: (1j * k) ** order)
    if np.isrealobj(f):
        return np.real(out)
    return out


def gradient(f: np.ndarray, grid: Grid) -> list:
    return [derivative(f, grid, ax) for ax in range(f.ndim)]


def laplacian(f: np.ndarray, grid: Grid) -> np.ndarray:
    out = np.zeros_like(f)
    for ax in range(f.ndim):
        out = out + apply_spectral(f, grid, ax, lambda k: -(k**2))
    return out


def integrate(f: np.ndarray, grid: Grid) -> float | complex:
    """Rectangle-rule integral over configuration space (spectrally exact)."""
    if f.ndim == grid.d:
        return f.sum() * grid.one_body_cell_volume
    return f.sum() * grid.cell_volume


# -- RNG ----------------------------------------------------------------------------


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Counter-based (Philox) generator for a named substream of ``seed``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())])
    return np.random.Generator(np.random.Philox(ss))


# -- states -------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ManyBodyState:
    """Normalized complex amplitude over a configuration-space grid.

    Instances are immutable; the amplitude array is flagged read-only.
    """

    grid: Grid
    amplitude: np.ndarray
    symmetry: str = "none"
    masses: tuple = field(default=None)
    hbar: float = 1.0

    def __post_init__(self):
        if self.symmetry not in SYMMETRIES:
            raise ValueError(f"symmetry must be one of {SYMMETRIES}")
        amp = np.asarray(self.amplitude, dtype=np.complex128)
        if amp.shape != self.grid.shape:
            raise ValueError(f"amplitude shape {amp.shape} does not match grid {self.grid.shape}")
        if self.masses is None:
            object.__setattr__(self, "masses", (1.0,) * self.grid.N)
        masses = tuple(float(m) for m in np.broadcast_to(self.masses, (self.grid.N,)))
        if any(m <= 0 for m in masses):
            raise ValueError("masses must be positive")
        if self.symmetry != "none" and len(set(masses)) > 1:
            raise ValueError("exchange symmetry requires identical masses")
        object.__setattr__(self, "masses", masses)
        if amp.flags.writeable:
            amp = amp.copy() if amp is self.amplitude else amp
            amp.flags.writeable = False
        object.__setattr__(self, "amplitude", amp)

    @classmethod
    def from_amplitude(cls, grid, amplitude, symmetry="none", masses=None, hbar=1.0):
        """Construct and normalize."""
        amp = np.array(amplitude, dtype=np.complex128)
        nrm = math.sqrt(float(np.sum(np.abs(amp) ** 2)) * grid.cell_volume)
        if nrm == 0:
            raise ValueError("cannot normalize a zero amplitude")
        return cls(grid, amp / nrm, symmetry, masses, hbar)

    @classmethod
    def product(cls, grid, orbitals, symmetry="none", masses=None, hbar=1.0):
        """Product of one-body orbitals (one per particle), then symmetrized."""
        if len(orbitals) != grid.N:
            raise ValueError("need one orbital per particle")
        amp = np.ones((), dtype=np.complex128)
        for orb in orbitals:
            amp = np.multiply.outer(amp, np.asarray(orb, dtype=np.complex128))
        state = cls.from_amplitude(grid, amp, "none", masses, hbar)
        if symmetry == "none":
            return state
        return symmetrize(state, symmetry)

    @property
    def N(self) -> int:
        return self.grid.N

    @property
    def flat(self) -> np.ndarray:
        return self.amplitude.reshape(-1)

    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitude) ** 2) * self.grid.cell_volume)

    def replace(self, amplitude, normalize=True, **kw) -> "ManyBodyState":
        params = dict(symmetry=self.symmetry, masses=self.masses, hbar=self.hbar)
        params.update(kw)
        if normalize:
            return ManyBodyState.from_amplitude(self.grid, amplitude, **params)
        return ManyBodyState(self.grid, np.array(amplitude, dtype=np.complex128), **params)

    def overlap(self, other: "ManyBodyState") -> complex:
        return complex(np.vdot(self.amplitude, other.amplitude) * self.grid.cell_volume)

    def fidelity(self, other: "ManyBodyState") -> float:
        return abs(self.overlap(other)) ** 2 / (self.norm() * other.norm())

    def one_body_density(self) -> np.ndarray:
        return one_body_density(self)


def _particle_axes(grid: Grid, perm: Sequence[int]) -> list:
    axes = []
    for p in perm:
        axes.extend(range(p * grid.d, (p + 1) * grid.d))
    return axes


def permute_particles(amplitude: np.ndarray, grid: Grid, perm: Sequence[int]) -> np.ndarray:
    """Relabel particles: result[..x_i..] = amplitude[..x_perm(i)..]."""
    return np.transpose(amplitude, _particle_axes(grid, perm))


def _perm_sign(perm) -> int:
    sign = 1
    seen = [False] * len(perm)
    for i in range(len(perm)):
        if seen[i]:
            continue
        j, length = i, 0
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


def symmetrize(state: ManyBodyState, symmetry: str) -> ManyBodyState:
    """Project onto the exchange-even (bose) or exchange-odd (fermi) subspace."""
    if symmetry not in SYMMETRIES:
        raise ValueError(f"symmetry must be one of {SYMMETRIES}")
    if symmetry == "none":
        return state.replace(state.amplitude, symmetry="none")
    grid = state.grid
    if len(set(state.masses)) > 1:
        raise ValueError("cannot symmetrize particles with different masses")
    acc = np.zeros(grid.shape, dtype=np.complex128)
    for perm in itertools.permutations(range(grid.N)):
        term = permute_particles(state.amplitude, grid, perm)
        if symmetry == "fermi" and _perm_sign(perm) < 0:
            acc -= term
        else:
            acc += term
    acc /= math.factorial(grid.N)
    norm = float(np.sum(np.abs(acc) ** 2) * grid.cell_volume)
    if norm < 1e-24 * max(state.norm(), 1e-300):
        raise DegenerateAntisymmetrization("antisymmetrized state has zero norm (Pauli exclusion)")
    return ManyBodyState.from_amplitude(grid, acc, symmetry, state.masses, state.hbar)


def exchange_residual(state: ManyBodyState, i: int = 0, j: int = 1) -> float:
    """Max deviation from the exchange law of the state's symmetry under i<->j."""
    if state.N < 2:
        return 0.0
    perm = list(range(state.N))
    perm[i], perm[j] = perm[j], perm[i]
    swapped = permute_particles(state.amplitude, state.grid, perm)
    sign = -1.0 if state.symmetry == "fermi" else 1.0
    scale = np.max(np.abs(state.amplitude))
    return float(np.max(np.abs(swapped - sign * state.amplitude)) / scale)


def particle_marginal(prob: np.ndarray, grid: Grid, particle: int) -> np.ndarray:
    """Integrate a config-space density over every particle except one."""
    keep = set(range(particle * grid.d, (particle + 1) * grid.d))
    others = tuple(ax for ax in range(grid.ndim) if ax not in keep)
    dv = grid.one_body_cell_volume ** (grid.N - 1)
    return prob.sum(axis=others) * dv if others else prob.copy()


def one_body_density(state: ManyBodyState) -> np.ndarray:
    """rho(x) = sum_i int |Psi|^2 over all coordinates but x_i; integrates to N."""
    prob = np.abs(state.amplitude) ** 2
    rho = np.zeros(state.grid.physical().shape)
    for i in range(state.N):
        rho += particle_marginal(prob, state.grid, i)
    return rho


@dataclass(frozen=True)
class DiagonalSlice:
    values: np.ndarray
    near_node: bool


def diagonal_slice(state: ManyBodyState, offsets) -> DiagonalSlice:
    """psi_d(x) = Psi(x + eps_1, ..., x + eps_N) by multilinear interpolation.

    ``offsets`` has shape (N,) for d = 1 or (N, d).
    """
    grid = state.grid
    eps = np.asarray(offsets, dtype=float).reshape(grid.N, grid.d)
    near_node = False
    if state.symmetry == "fermi":
        for i, j in itertools.combinations(range(grid.N), 2):
            if np.allclose(eps[i], eps[j]):
                near_node = True
        if near_node:
            warnings.warn("coinciding offsets on a fermionic state sample a node", stacklevel=2)
    pgrid = grid.physical()
    mesh = np.meshgrid(*[pgrid.axis_coords(a) for a in range(grid.d)], indexing="ij")
    coords = []
    for i in range(grid.N):
        for a in range(grid.d):
            x = mesh[a] + eps[i, a]
            L, h = grid.lengths[a], grid.spacing[a]
            if grid.boundary[a] == "wall":
                coords.append((x + L / 2) / h - 1)
            else:
                coords.append(((x + L / 2) / h) % grid.n)
    coords = np.array([c.ravel() for c in coords])
    modes = ["grid-wrap" if grid.boundary[ax % grid.d] == "periodic" else "constant" for ax in range(grid.ndim)]
    mode = "grid-wrap" if all(m == "grid-wrap" for m in modes) else "constant"
    re = ndimage.map_coordinates(state.amplitude.real, coords, order=1, mode=mode)
    im = ndimage.map_coordinates(state.amplitude.imag, coords, order=1, mode=mode)
    values = (re + 1j * im).reshape(pgrid.shape)
    return DiagonalSlice(values, near_node)


# -- snapshot files -----------------------------------------------------------------


def write_snapshot(path, grid: Grid, amplitude: np.ndarray, symmetry: str = "none") -> None:
    """Write the binary wavefunction snapshot format (little endian)."""
    amp = np.ascontiguousarray(amplitude, dtype="<c16")
    header = SNAPSHOT_MAGIC + struct.pack("<HIII", SNAPSHOT_VERSION, grid.d, grid.N, grid.n)
    header += struct.pack(f"<{grid.d}d", *grid.lengths)
    header += struct.pack("<B", _SYMMETRY_TAGS[symmetry])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(amp.tobytes(order="C"))


def read_snapshot(path):
    """Return ``(grid, amplitude, symmetry)`` from a snapshot file."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != SNAPSHOT_MAGIC:
        raise ValueError("not a PSHW snapshot")
    version, d, N, n = struct.unpack_from("<HIII", data, 4)
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    off = 4 + struct.calcsize("<HIII")
    lengths = struct.unpack_from(f"<{d}d", data, off)
    off += 8 * d
    (tag,) = struct.unpack_from("<B", data, off)
    off += 1
    symmetry = {v: k for k, v in _SYMMETRY_TAGS.items()}[tag]
    grid = Grid(d, N, n, tuple(lengths), ("periodic",) * d)
    amp = np.frombuffer(data, dtype="<c16", offset=off).reshape(grid.shape).astype(np.complex128)
    return grid, amp, symmetry


# -- potentials on configuration space ------------------------------------------------


def one_body_potential(grid: Grid, V1: np.ndarray) -> np.ndarray:
    """Sum_i V1(x_i) broadcast onto configuration space."""
    V1 = np.asarray(V1, dtype=float)
    if V1.shape != grid.physical().shape:
        raise ValueError("one-body potential must live on the physical grid")
    total = np.zeros((1,) * grid.ndim)
    for i in range(grid.N):
        shape = [1] * grid.ndim
        for a in range(grid.d):
            shape[i * grid.d + a] = grid.n
        total = total + V1.reshape(shape)
    return np.broadcast_to(total, grid.shape)


def pair_potential(grid: Grid, W) -> np.ndarray:
    """Sum_{i<j} W(|x_i - x_j|) with minimum-image distances on periodic axes."""
    total = np.zeros(grid.shape)
    for i in range(grid.N):
        for j in range(i + 1, grid.N):
            r2 = 0.0
            for a in range(grid.d):
                dx = grid.config_coord(i, a) - grid.config_coord(j, a)
                if grid.boundary[a] == "periodic":
                    L = grid.lengths[a]
                    dx = dx - L * np.rint(dx / L)
                r2 = r2 + dx**2
            total = total + W(np.sqrt(r2))
    return total


def as_config_potential(grid: Grid, potential) -> np.ndarray:
    """Accept None, a config-space array, or a one-body array."""
    if potential is None:
        return np.zeros(grid.shape)
    V = np.asarray(potential, dtype=float)
    if V.shape == grid.shape:
        return V
    if grid.N > 1 and V.shape == grid.physical().shape:
        return one_body_potential(grid, V)
    raise ValueError(f"potential shape {V.shape} fits neither the configuration nor the physical grid")
