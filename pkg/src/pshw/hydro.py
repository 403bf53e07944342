"""One-body hydrodynamic projection and finite-volume Euler / Navier-Stokes.

Fields use the particle-count convention: rho integrates to N, v is a
velocity, T is an energy (k_B = 1).  The solver evolves mass density m*rho,
momentum m*rho*v and, for the ideal law, total energy.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, cg, splu

from .core import Grid, ManyBodyState, derivative, one_body_density

PRESSURE_LAWS = ("ideal", "barotropic_gp")


class CFLError(RuntimeError):
    def __init__(self, message, suggested_dt):
        super().__init__(f"{message}; suggested dt <= {suggested_dt:.4g}")
        self.suggested_dt = suggested_dt


@dataclass
class OneBodyFields:
    grid: Grid
    rho: np.ndarray
    v: list
    T: np.ndarray
    mass: float = 1.0
    mask: np.ndarray | None = None
    closure: float = 0.0

    @property
    def N(self) -> float:
        return float(self.rho.sum() * self.grid.one_body_cell_volume)


@dataclass(frozen=True)
class TransportCoefficients:
    eta: float = 0.0
    pressure_law: str = "ideal"
    lambda_mfp: float | None = None
    g: float | None = None
    kinematic: bool = False

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("viscosity must be non-negative")
        if self.pressure_law not in PRESSURE_LAWS:
            raise ValueError(f"pressure law must be one of {PRESSURE_LAWS}")
        if self.pressure_law == "ideal" and self.lambda_mfp is not None and self.lambda_mfp <= 0:
            raise ValueError("mean free path must be positive")
        if self.pressure_law == "barotropic_gp" and self.g is None:
            raise ValueError("barotropic law needs the interaction g")


# -- spectral helpers on the physical grid ----------------------------------------


def _grad(f, grid1):
    return [derivative(f, grid1, a) for a in range(grid1.d)]


def _div(vec, grid1):
    return sum(derivative(vec[a], grid1, a) for a in range(grid1.d))


def _kvecs(grid1):
    """Wavenumber mesh with the Nyquist entry zeroed, as the real derivative does."""
    ks = []
    for a in range(grid1.d):
        k = grid1.wavenumbers(a).copy()
        if k.size % 2 == 0:
            k[k.size // 2] = 0.0
        ks.append(k)
    return np.meshgrid(*ks, indexing="ij")


# -- projection ---------------------------------------------------------------------


def one_body_moments(state: ManyBodyState):
    """(rho, j, kinetic density) summed over particles; j is a particle current."""
    grid = state.grid
    psi = state.amplitude
    d = grid.d
    dv = grid.one_body_cell_volume ** (grid.N - 1)
    rho = one_body_density(state)
    j = [np.zeros(grid.physical().shape) for _ in range(d)]
    k = np.zeros(grid.physical().shape)
    for i in range(grid.N):
        keep = set(range(i * d, (i + 1) * d))
        others = tuple(ax for ax in range(grid.ndim) if ax not in keep)
        m = state.masses[i]
        for a in range(d):
            dpsi = derivative(psi, grid, i * d + a)
            cur = state.hbar / m * np.imag(np.conj(psi) * dpsi)
            kin = state.hbar**2 / (2 * m) * np.abs(dpsi) ** 2
            j[a] += cur.sum(axis=others) * dv if others else cur
            k += kin.sum(axis=others) * dv if others else kin
    return rho, j, k


def order_parameter_moments(psi, grid1: Grid, mass=1.0, hbar=1.0):
    rho = np.abs(psi) ** 2
    j, k = [], np.zeros(grid1.shape)
    for a in range(grid1.d):
        dpsi = derivative(psi, grid1, a)
        j.append(hbar / mass * np.imag(np.conj(psi) * dpsi))
        k = k + hbar**2 / (2 * mass) * np.abs(dpsi) ** 2
    return rho, j, k


def _fd_operator(weight, grid1: Grid):
    """Sparse -div(w grad .) with face-averaged weights on the periodic grid."""
    shape = grid1.shape
    n = weight.size
    idx = np.arange(n).reshape(shape)
    rows, cols, vals = [], [], []
    diag = np.zeros(shape)
    for a in range(grid1.d):
        h2 = grid1.spacing[a] ** 2
        wf = 0.5 * (weight + np.roll(weight, -1, a)) / h2
        nb = np.roll(idx, -1, a)
        rows += [idx.ravel(), nb.ravel()]
        cols += [nb.ravel(), idx.ravel()]
        vals += [-wf.ravel(), -wf.ravel()]
        diag += wf + np.roll(wf, 1, a)
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append(diag.ravel())
    return sparse.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def continuity_velocity(rho, drho_dt, grid1: Grid, current=None, floor: float = 1e-6, rtol: float = 1e-12, maxiter: int = 2000, leak: float = 1e-12):
    """Minimal-norm gradient flow v = grad chi with div(rho grad chi) = -drho/dt.

    Cells with rho below ``floor * max(rho)`` are treated as vacuum: they
    carry a weight of only ``leak * max(rho)``, so each connected piece of the
    support is solved with effectively zero-flux walls.  That needs the
    one-body ``current``: the source is then -div of the masked current.  With
    only ``drho_dt`` the density is floored at ``floor * max(rho)`` instead.
    Conjugate gradients on the spectral operator, preconditioned by a sparse
    factorization of the matching finite-difference operator.  Returns
    (v, rho_eff, rhs, info).
    """
    if not grid1.periodic:
        raise ValueError("continuity solve assumes periodic axes")
    live = rho >= floor * rho.max()
    if current is not None:
        # divergence of the masked flux keeps the source consistent with the operator
        rho_eff = np.where(live, rho, leak * rho.max())
        rhs = -_div([np.where(live, c, 0.0) for c in current], grid1)
    else:
        # a sharply masked source is not representable spectrally; use the
        # floored density and the full source instead
        rho_eff = np.maximum(rho, floor * rho.max())
        rhs = np.asarray(drho_dt, dtype=float)
    # modes with a vanishing spectral gradient (mean, Nyquist) are outside the range
    null = sum(k**2 for k in _kvecs(grid1)) == 0

    def project(r):
        rh = np.fft.fftn(r)
        rh[null] = 0.0
        return np.real(np.fft.ifftn(rh))

    rhs = project(rhs)
    shape = grid1.shape
    if np.linalg.norm(rhs) == 0:
        return [np.zeros(shape) for _ in range(grid1.d)], rho_eff, rhs, 0

    def A(x):
        chi = x.reshape(shape)
        return -_div([rho_eff * g for g in _grad(chi, grid1)], grid1).ravel()

    L = _fd_operator(rho_eff, grid1)
    shift = 1e-14 * abs(L.diagonal()).max()
    lu = splu((L + shift * sparse.identity(L.shape[0], format="csc")).tocsc())

    def Minv(r):
        return project(lu.solve(project(r.reshape(shape)).ravel()).reshape(shape)).ravel()

    n = rho.size
    op = LinearOperator((n, n), matvec=A, dtype=float)
    pre = LinearOperator((n, n), matvec=Minv, dtype=float)
    # A chi = -div(rho grad chi) = +drho/dt
    chi, info = cg(op, rhs.ravel(), rtol=rtol, atol=0.0, M=pre, maxiter=maxiter)
    v = _grad(chi.reshape(shape), grid1)
    return v, rho_eff, rhs, info


def _temperature(rho, v, k, grid1, mass, hbar, floor_mask):
    safe = np.where(floor_mask, 1.0, rho)
    bulk = 0.5 * mass * rho * sum(c**2 for c in v)
    grad_rho = _grad(rho, grid1)
    quantum = hbar**2 / (8 * mass) * sum(g**2 for g in grad_rho) / safe
    residual = k - bulk - quantum
    T = np.where(floor_mask, 0.0, (2.0 / grid1.d) * residual / safe)
    return np.maximum(T, 0.0), residual


def project_moments(rho, j, k, grid1: Grid, mass=1.0, hbar=1.0, velocity="continuity", floor=1e-6, drho_dt=None):
    """Hydrodynamic fields from one-body moments.

    ``velocity='continuity'`` solves for the gradient flow reproducing
    drho/dt (default -div j); ``'current'`` uses j / rho directly.
    """
    mask = rho < floor * rho.max()
    if velocity == "continuity":
        current = j if drho_dt is None else None
        v, rho_eff, rhs, _ = continuity_velocity(rho, drho_dt, grid1, current, floor)
        resid = rhs + _div([rho_eff * c for c in v], grid1)
        nrm = np.linalg.norm(rhs)
        closure = float(np.linalg.norm(resid) / nrm) if nrm > 0 else 0.0
    elif velocity == "current":
        safe = np.where(mask, 1.0, rho)
        v = [np.where(mask, 0.0, c / safe) for c in j]
        closure = float("nan")
    else:
        raise ValueError("velocity must be 'continuity' or 'current'")
    T, _ = _temperature(rho, v, k, grid1, mass, hbar, mask)
    v = [np.where(mask, 0.0, c) for c in v]
    return OneBodyFields(grid1, rho, v, T, mass, mask, closure)


def project_fields(frames, grid1: Grid | None = None, mass=None, hbar=1.0, velocity="continuity", floor=1e-6, dt=None):
    """Project a trajectory of states (or GP order parameters) onto (rho, v, T).

    drho/dt is taken from the exact one-body continuity equation,
    -div j, unless ``dt`` is given, in which case centered frame differences
    are used (one-sided at the ends).
    """
    frames = list(frames)
    if not frames:
        raise ValueError("need at least one frame")
    moments = []
    for f in frames:
        if isinstance(f, ManyBodyState):
            grid1 = f.grid.physical()
            m = f.masses[0] if mass is None else mass
            if len(set(f.masses)) > 1:
                raise ValueError("hydrodynamic projection needs equal masses")
            moments.append(one_body_moments(f) + (m, f.hbar))
        else:
            if grid1 is None:
                raise ValueError("order-parameter frames need a grid")
            m = 1.0 if mass is None else mass
            moments.append(order_parameter_moments(f, grid1, m, hbar) + (m, hbar))
    rates = [None] * len(frames)
    if dt is not None:
        if len(frames) < 2:
            raise ValueError("frame differencing needs at least two frames")
        rhos = [mo[0] for mo in moments]
        rates = list(np.gradient(np.array(rhos), dt, axis=0))
    return [
        project_moments(r, j, k, grid1, m, hb, velocity, floor, rate)
        for (r, j, k, m, hb), rate in zip(moments, rates)
    ]


# -- Helmholtz ----------------------------------------------------------------------


def helmholtz_decompose(v, grid1: Grid):
    """Split a periodic vector field into gradient and divergence-free parts.

    The k = 0 mean flow is divergence-free and goes to the rotational part.
    """
    if not grid1.periodic:
        raise ValueError("spectral Helmholtz split assumes periodic axes")
    ks = _kvecs(grid1)
    k2 = sum(k**2 for k in ks)
    safe = np.where(k2 > 0, k2, 1.0)
    vh = [np.fft.fftn(c) for c in v]
    kdotv = sum(k * c for k, c in zip(ks, vh))
    irr = [np.real(np.fft.ifftn(np.where(k2 > 0, k * kdotv / safe, 0.0))) for k in ks]
    rot = [c - i for c, i in zip(v, irr)]
    return irr, rot


def divergence(v, grid1):
    return _div(v, grid1)


def curl_2d(v, grid1):
    return derivative(v[1], grid1, 0) - derivative(v[0], grid1, 1)


# -- finite volume ---------------------------------------------------------------------


def _minmod(a, b):
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def _mc(a, b):
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.minimum(2 * np.abs(a), 2 * np.abs(b)), 0.5 * np.abs(a + b)), 0.0)


def _faces(q, axis, limiter):
    """MUSCL left/right states at faces i+1/2 (index i) along ``axis``."""
    dl = q - np.roll(q, 1, axis)
    dr = np.roll(q, -1, axis) - q
    s = limiter(dl, dr)
    left = q + 0.5 * s
    right = np.roll(q - 0.5 * s, -1, axis)
    return left, right


@dataclass
class FieldTrajectory:
    times: np.ndarray
    fields: list
    mass: np.ndarray
    momentum: np.ndarray
    energy: np.ndarray
    knudsen: float = 0.0
    warnings: list = field(default_factory=list)


class FiniteVolume:
    """Conservative MUSCL / Rusanov scheme on a periodic physical grid."""

    def __init__(self, grid1: Grid, potential, transport: TransportCoefficients, mass=1.0, limiter="minmod", vacuum=1e-10, dry=1e-8):
        if not grid1.periodic:
            raise ValueError("finite-volume solver assumes periodic axes")
        self.grid = grid1
        self.h = grid1.spacing
        self.V = np.zeros(grid1.shape) if potential is None else np.asarray(potential, dtype=float)
        self.tc = transport
        self.m = mass
        self.limiter = _mc if limiter == "mc" else _minmod
        self.vacuum = vacuum
        self.dry = dry
        self.d = grid1.d
        self.gamma = 1.0 + 2.0 / self.d
        if transport.pressure_law == "barotropic_gp":
            # hydrostatic reconstruction: b plays the bed, G the gravity
            self.G = transport.g / mass**2
            self.b = mass * self.V / transport.g
        self.eps = None

    # state U = [rho_m, p_1..p_d, (E)]
    def to_conserved(self, f: OneBodyFields):
        shape = self.grid.shape
        rho = np.broadcast_to(f.rho, shape)
        v = [np.broadcast_to(c, shape) for c in f.v]
        rho_m = self.m * rho
        U = [rho_m] + [rho_m * c for c in v]
        if self.tc.pressure_law == "ideal":
            U.append(0.5 * rho_m * sum(c**2 for c in v) + 0.5 * self.d * rho * np.broadcast_to(f.T, shape))
        self.rho_ref = float(rho_m.max())
        self.eps = self.vacuum * self.rho_ref
        return np.array(U)

    def velocity(self, rho_m, p):
        eps = self.eps
        r4 = rho_m**4
        return p * rho_m * math.sqrt(2) / np.sqrt(r4 + np.maximum(r4, eps**4))

    def to_fields(self, U) -> OneBodyFields:
        rho_m = U[0]
        v = [self.velocity(rho_m, U[1 + a]) for a in range(self.d)]
        n = rho_m / self.m
        if self.tc.pressure_law == "ideal":
            e = U[-1] - 0.5 * rho_m * sum(c**2 for c in v)
            safe = np.where(n > self.eps / self.m, n, 1.0)
            T = np.where(n > self.eps / self.m, np.maximum(e, 0.0) * 2 / (self.d * safe), 0.0)
        else:
            T = np.zeros_like(n)
        return OneBodyFields(self.grid, n, v, T, self.m)

    def pressure(self, rho_m, p, E=None):
        n = rho_m / self.m
        if self.tc.pressure_law == "barotropic_gp":
            return 0.5 * self.tc.g * n**2
        v2 = sum(self.velocity(rho_m, q) ** 2 for q in p)
        return np.maximum((2.0 / self.d) * (E - 0.5 * rho_m * v2), 0.0)

    def sound_speed(self, rho_m, P):
        safe = np.where(rho_m > self.eps, rho_m, 1.0)
        if self.tc.pressure_law == "barotropic_gp":
            return np.where(rho_m > self.eps, np.sqrt(self.tc.g * rho_m / self.m**2 / self.m), 0.0)
        return np.where(rho_m > self.eps, np.sqrt(self.gamma * P / safe), 0.0)

    def max_speed(self, U):
        rho_m = U[0]
        p = U[1 : 1 + self.d]
        E = U[-1] if self.tc.pressure_law == "ideal" else None
        P = self.pressure(rho_m, p, E)
        c = self.sound_speed(rho_m, P)
        speed = np.sqrt(sum(self.velocity(rho_m, q) ** 2 for q in p))
        return float(np.max(speed + c))

    def viscosity_field(self, rho_m):
        if self.tc.kinematic:
            return self.tc.eta * rho_m / self.m
        return np.full_like(rho_m, self.tc.eta)

    def check_cfl(self, U, dt):
        hmin = float(self.h.min())
        a = self.max_speed(U)
        if a > 0 and dt * a >= 0.5 * hmin:
            raise CFLError(f"advective CFL violated (dt*(|v|+c) = {dt * a:.3g} >= 0.5 h)", 0.4 * hmin / a)
        if self.tc.eta > 0:
            rho_m = U[0]
            if self.tc.kinematic:
                nu = self.tc.eta
            else:
                live = rho_m > 1e-3 * rho_m.max()
                nu = self.tc.eta / (self.m * float(rho_m[live].min()) / self.m)
            if dt * nu / hmin**2 >= 0.25:
                raise CFLError("viscous CFL violated", 0.2 * hmin**2 / nu)

    # -- fluxes
    def _axis_flux(self, U, axis):
        d = self.d
        baro = self.tc.pressure_law == "barotropic_gp"
        rho_m = U[0]
        v = [self.velocity(rho_m, U[1 + a]) for a in range(d)]
        lim = self.limiter
        rl, rr = _faces(rho_m, axis, lim)
        vl, vr = zip(*[_faces(c, axis, lim) for c in v])
        if baro:
            eta_s = rho_m + self.b
            el, er = _faces(eta_s, axis, lim)
            bl, br = el - rl, er - rr
            bstar = np.maximum(bl, br)
            hl = np.maximum(0.0, rl + bl - bstar)
            hr = np.maximum(0.0, rr + br - bstar)
            Pl, Pr = 0.5 * self.G * hl**2, 0.5 * self.G * hr**2
            rl_use, rr_use = hl, hr
        else:
            E = U[-1]
            P = self.pressure(rho_m, U[1 : 1 + d], E)
            Pl, Pr = _faces(P, axis, lim)
            rl_use, rr_use = rl, rr
        ul, ur = vl[axis], vr[axis]
        cl = self.sound_speed(rl_use, Pl)
        cr = self.sound_speed(rr_use, Pr)
        a = np.maximum(np.abs(ul) + cl, np.abs(ur) + cr)
        UL = [rl_use] + [rl_use * c for c in vl]
        UR = [rr_use] + [rr_use * c for c in vr]
        FL = [rl_use * ul] + [rl_use * c * ul for c in vl]
        FR = [rr_use * ur] + [rr_use * c * ur for c in vr]
        FL[1 + axis] = FL[1 + axis] + Pl
        FR[1 + axis] = FR[1 + axis] + Pr
        if not baro:
            El = Pl / (self.gamma - 1) + 0.5 * rl_use * sum(c**2 for c in vl)
            Er = Pr / (self.gamma - 1) + 0.5 * rr_use * sum(c**2 for c in vr)
            UL.append(El)
            UR.append(Er)
            FL.append((El + Pl) * ul)
            FR.append((Er + Pr) * ur)
        F = np.array([0.5 * (fl + fr) - 0.5 * a * (ur_ - ul_) for fl, fr, ul_, ur_ in zip(FL, FR, UL, UR)])
        extra = None
        if baro:
            # hydrostatic correction terms and centered bed source
            left_corr = 0.5 * self.G * (rl**2 - hl**2)  # belongs to cell i at its right face
            right_corr = 0.5 * self.G * (rr**2 - hr**2)  # belongs to cell i+1 at its left face
            r_minus_face_right = rl  # h^-_{i+1/2}
            r_plus_face_left = np.roll(rr, 1, axis)  # h^+_{i-1/2}
            b_minus_right = bl
            b_plus_left = np.roll(br, 1, axis)
            centered = -self.G * 0.5 * (r_plus_face_left + r_minus_face_right) * (b_minus_right - b_plus_left) / self.h[axis]
            extra = (left_corr, right_corr, centered)
        return F, extra

    def _viscous_flux(self, U, axis):
        """Viscous stress and work across faces i+1/2 normal to ``axis``."""
        d = self.d
        rho_m = U[0]
        v = [self.velocity(rho_m, U[1 + a]) for a in range(d)]
        mu = self.viscosity_field(rho_m)
        mu_f = 0.5 * (mu + np.roll(mu, -1, axis))
        h = self.h
        grads = [[None] * d for _ in range(d)]  # grads[a][b] = d v_a / d x_b at faces
        for a in range(d):
            for b in range(d):
                if b == axis:
                    grads[a][b] = (np.roll(v[a], -1, axis) - v[a]) / h[axis]
                else:
                    cen = (np.roll(v[a], -1, b) - np.roll(v[a], 1, b)) / (2 * h[b])
                    grads[a][b] = 0.5 * (cen + np.roll(cen, -1, axis))
        div = sum(grads[a][a] for a in range(d))
        flux = [np.zeros_like(rho_m)]
        for a in range(d):
            sigma = mu_f * (grads[a][axis] + grads[axis][a] - (2.0 / 3.0) * div * (a == axis))
            flux.append(-sigma)
        if self.tc.pressure_law == "ideal":
            vf = [0.5 * (c + np.roll(c, -1, axis)) for c in v]
            flux.append(sum(flux[1 + a] * vf[a] for a in range(d)))
        return np.array(flux)

    def rhs(self, U):
        d = self.d
        dU = np.zeros_like(U)
        for axis in range(d):
            F, extra = self._axis_flux(U, axis)
            if self.tc.eta > 0:
                F = F + self._viscous_flux(U, axis)
            dU -= (F - np.roll(F, 1, axis + 1)) / self.h[axis]
            if extra is not None:
                left_corr, right_corr, centered = extra
                # F^L_{i+1/2} = F + corr_left ; F^R_{i-1/2} = F + corr_right (of face i-1/2)
                dU[1 + axis] -= (left_corr - np.roll(right_corr, 1, axis)) / self.h[axis]
                dU[1 + axis] += centered
        if self.tc.pressure_law != "barotropic_gp":
            n = U[0] / self.m
            gV = _fd_grad(self.V, self.h)
            for a in range(d):
                dU[1 + a] -= n * gV[a]
            if self.tc.pressure_law == "ideal":
                v = [self.velocity(U[0], U[1 + a]) for a in range(d)]
                dU[-1] -= n * sum(v[a] * gV[a] for a in range(d))
        return dU

    def sanitize(self, U):
        """Vacuum cells are put at rest and cold; internal energy is kept non-negative.

        Only momentum and energy are touched, so mass stays exactly conserved.
        """
        dry = U[0] < self.dry * self.rho_ref
        if dry.any():
            U[1 : 1 + self.d, dry] = 0.0
        if self.tc.pressure_law == "ideal":
            kin = 0.5 * sum(U[1 + a] ** 2 for a in range(self.d)) / np.where(dry, 1.0, U[0])
            kin = np.where(dry, 0.0, kin)
            U[-1] = np.where(dry, 0.0, np.maximum(U[-1], kin))
        return U

    def step(self, U, dt):
        U1 = self.sanitize(U + dt * self.rhs(U))
        return self.sanitize(0.5 * U + 0.5 * (U1 + dt * self.rhs(U1)))

    def knudsen(self, U) -> float:
        """lambda_mfp |grad v| / |v| as a density-weighted RMS ratio."""
        if self.tc.lambda_mfp is None:
            return 0.0
        rho_m = U[0]
        v = [self.velocity(rho_m, U[1 + a]) for a in range(self.d)]
        v2 = float(np.sum(rho_m * sum(c**2 for c in v)))
        if v2 == 0:
            return 0.0
        g2 = float(np.sum(rho_m * sum(sum(g**2 for g in _fd_grad(c, self.h)) for c in v)))
        return float(self.tc.lambda_mfp * math.sqrt(g2 / v2))


def _fd_grad(f, h):
    return [(np.roll(f, -1, a) - np.roll(f, 1, a)) / (2 * h[a]) for a in range(f.ndim)]


def evolve_navier_stokes(fields: OneBodyFields, trap, transport: TransportCoefficients, dt: float, steps: int, stride: int | None = None, limiter: str = "minmod") -> FieldTrajectory:
    """Finite-volume Navier-Stokes with stress -P I + eta(grad v + grad v^T - (2/3) I div v)."""
    fv = FiniteVolume(fields.grid, trap, transport, fields.mass, limiter)
    U = fv.to_conserved(fields)
    stride = stride or steps or 1
    dv = fields.grid.one_body_cell_volume
    times, out = [0.0], [fields]
    masses = [float(U[0].sum() * dv)]
    moms = [U[1 : 1 + fv.d].sum(axis=tuple(range(1, U.ndim))) * dv]
    energies = [float(U[-1].sum() * dv) if transport.pressure_law == "ideal" else float("nan")]
    kn = fv.knudsen(U)
    for step in range(1, steps + 1):
        fv.check_cfl(U, dt)
        U = fv.step(U, dt)
        if step % stride == 0 or step == steps:
            times.append(step * dt)
            out.append(fv.to_fields(U))
            masses.append(float(U[0].sum() * dv))
            moms.append(U[1 : 1 + fv.d].sum(axis=tuple(range(1, U.ndim))) * dv)
            energies.append(float(U[-1].sum() * dv) if transport.pressure_law == "ideal" else float("nan"))
            kn = max(kn, fv.knudsen(U))
    notes = []
    if kn > 0.1:
        notes.append(f"Knudsen number {kn:.3g} exceeds 0.1; continuum description is marginal")
        warnings.warn(notes[-1], stacklevel=2)
    return FieldTrajectory(np.array(times), out, np.array(masses), np.array(moms), np.array(energies), kn, notes)


def evolve_euler(fields: OneBodyFields, trap, pressure_law: str, dt: float, steps: int, g: float | None = None, stride: int | None = None, limiter: str = "minmod") -> FieldTrajectory:
    """Inviscid evolution: the Navier-Stokes solver with zero viscosity."""
    tc = TransportCoefficients(eta=0.0, pressure_law=pressure_law, g=g)
    return evolve_navier_stokes(fields, trap, tc, dt, steps, stride, limiter)


# -- diagram residual ------------------------------------------------------------------


@dataclass
class DiagramResidual:
    times: np.ndarray
    l2: np.ndarray
    linf: np.ndarray
    norm_l2: float
    norm_linf: float
    legs: dict = field(default_factory=dict)
    quantum_fidelity: np.ndarray | None = None

    def csv_rows(self):
        return [("t", "l2", "linf")] + [(float(t), float(a), float(b)) for t, a, b in zip(self.times, self.l2, self.linf)]


def density_distance(rho_a, rho_b, ref):
    nl2 = float(np.sqrt(np.sum(ref**2)))
    return float(np.sqrt(np.sum((rho_a - rho_b) ** 2)) / nl2), float(np.max(np.abs(rho_a - rho_b)) / np.max(np.abs(ref)))


@dataclass(frozen=True)
class GPInitial:
    """Gross-Pitaevskii starting point for the commuting-square test."""

    psi: np.ndarray
    grid: Grid
    g: float
    mass: float = 1.0
    hbar: float = 1.0


def diagram_residual(
    initial,
    trap,
    evolver_tag: str,
    horizon: float,
    dt: float,
    quantum_dt: float | None = None,
    samples: int = 8,
    transport: TransportCoefficients | None = None,
    velocity: str = "continuity",
    limiter: str = "minmod",
) -> DiagramResidual:
    """Evolve-then-project versus project-then-evolve, as density distances.

    ``initial`` is a ManyBodyState (linear Schrodinger leg) or a GPInitial.
    ``dt`` is the hydro step; ``quantum_dt`` the Strang step (default dt/8).
    """
    from .dynamics import PropagationPlan, propagate_gp, propagate_schrodinger

    if evolver_tag not in ("euler", "navier_stokes"):
        raise ValueError("evolver must be 'euler' or 'navier_stokes'")
    quantum_dt = quantum_dt or dt / 8
    is_gp = isinstance(initial, GPInitial)
    if is_gp:
        grid1 = initial.grid
        f0 = project_fields([initial.psi], grid1, initial.mass, initial.hbar, velocity)[0]
    else:
        grid1 = initial.grid.physical()
        f0 = project_fields([initial], velocity=velocity)[0]
    ref = f0.rho
    if horizon == 0:
        return DiagramResidual(np.array([0.0]), np.array([0.0]), np.array([0.0]), float(np.sqrt(np.sum(ref**2))), float(ref.max()))

    hydro_steps = int(round(horizon / dt))
    stride_h = max(hydro_steps // samples, 1)
    times = np.arange(0, hydro_steps + 1, stride_h) * dt
    if times[-1] < hydro_steps * dt - 1e-12:
        times = np.append(times, hydro_steps * dt)
    ratio = int(round(dt / quantum_dt))
    quantum_dt = dt / ratio
    legs = {}

    # quantum leg
    qrho = [ref]
    fidel = [1.0]
    try:
        t_prev = 0.0
        if is_gp:
            psi = initial.psi
            for t in times[1:]:
                n_steps = int(round((t - t_prev) / quantum_dt))
                plan = PropagationPlan(quantum_dt, n_steps, trap, interaction=initial.g)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    psi = propagate_gp(psi, grid1, plan, mass=initial.mass, hbar=initial.hbar).psi
                qrho.append(np.abs(psi) ** 2)
                t_prev = t
        else:
            state = initial
            for t in times[1:]:
                n_steps = int(round((t - t_prev) / quantum_dt))
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    state = propagate_schrodinger(state, PropagationPlan(quantum_dt, n_steps, trap)).states[-1]
                qrho.append(one_body_density(state))
                fidel.append(state.fidelity(initial))
                t_prev = t
        legs["quantum"] = "ok"
    except Exception as exc:  # leg failures are reported, not raised
        legs["quantum"] = f"failed: {exc}"

    # hydro leg
    if transport is None:
        if is_gp:
            transport = TransportCoefficients(0.0, "barotropic_gp", g=initial.g)
        else:
            transport = TransportCoefficients(0.0, "ideal")
    if evolver_tag == "euler":
        transport = replace(transport, eta=0.0)
    hrho = [ref]
    try:
        traj = evolve_navier_stokes(f0, trap, transport, dt, hydro_steps, stride_h, limiter)
        hrho = [f.rho for f in traj.fields]
        legs["hydro"] = "ok"
    except Exception as exc:
        legs["hydro"] = f"failed: {exc}"

    count = min(len(qrho), len(hrho))
    l2, linf = zip(*[density_distance(qrho[i], hrho[i], ref) for i in range(count)])
    return DiagramResidual(
        times[:count], np.array(l2), np.array(linf), float(np.sqrt(np.sum(ref**2))), float(ref.max()), legs,
        None if is_gp else np.array(fidel[:count]),
    )
