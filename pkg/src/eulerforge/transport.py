"""Hamiltonian orbits, period functions and the transport right inverse.

The flow of H is x' = grad-perp H in physical time.  On mapped grids all
integration happens in computational coordinates, where the velocity is
grad-perp_z H / |f'|^2.

Orbit families around an extremum are integrated with the polar angle
about the extremum as the independent variable, so every orbit closes
after exactly one turn and the whole family advances in lock step.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.integrate import solve_ivp
from scipy.interpolate import RectBivariateSpline
from scipy.optimize import brentq

from .errors import (BandContainsCriticalValue, CriticalPointInRegion, CriticalPointProximity,
                     CriticalSupport, NonClosingOrbit, NotInRange, ValidationError)
from .field_core import (EXTERIOR, Grid2D, LevelComponent, ScalarField2D, interpolant,
                         points_in_polygon)


class _Flow:
    """Bicubic model of H with velocity in computational coordinates."""

    def __init__(self, H: ScalarField2D):
        self.H = H
        self.grid = H.grid
        self.spl = interpolant(H)
        X, Y = self.grid.mesh()
        gm = np.hypot(self.spl(X, Y, dx=1), self.spl(X, Y, dy=1))
        self.grad_scale = float(np.max(gm[self.grid.interior]))

    def value(self, x, y):
        return self.spl(x, y)

    def velocity(self, x, y):
        hx = self.spl(x, y, dx=1)
        hy = self.spl(x, y, dy=1)
        J = self.grid.conformal_factor(np.asarray(x) + 1j * np.asarray(y))
        return -hy / J, hx / J

    def grad_norm(self, x, y):
        """Physical |grad H| at computational points."""
        gz = np.hypot(self.spl(x, y, dx=1), self.spl(x, y, dy=1))
        return gz / np.sqrt(self.grid.conformal_factor(np.asarray(x) + 1j * np.asarray(y)))


@dataclass
class Orbit:
    seed: tuple  # physical
    samples: np.ndarray  # (m, 2) physical, uniform in time over one period
    times: np.ndarray
    period: float
    level: float
    grid_samples: Optional[np.ndarray] = None
    drift: float = 0.0

    def to_rows(self):
        return np.column_stack([self.times, self.samples, np.full(len(self.times), self.level)])


def trace_orbit(H: ScalarField2D, x0, tol: float = 1e-6, n_samples: int = 512,
                critical_fraction: float = 1e-3, max_turns: float = 50.0,
                rtol: float = 1e-11, flow: Optional[_Flow] = None) -> Orbit:
    """Integrate x' = grad-perp H from a physical point until it closes."""
    fl = flow or _Flow(H)
    g = fl.grid
    zx, zy = (float(v) for v in g.to_computational(x0[0], x0[1]))
    thresh = critical_fraction * fl.grad_scale
    if fl.grad_norm(zx, zy) * np.sqrt(g.conformal_factor(zx + 1j * zy)) < thresh:
        raise CriticalPointProximity(f"|grad H| too small at {x0}")
    h0 = float(fl.value(zx, zy))
    v0 = np.array(fl.velocity(zx, zy), dtype=float)
    speed0 = np.linalg.norm(v0)
    hgrid = max(g.hx, g.hy)

    def rhs(t, s):
        return fl.velocity(s[0], s[1])

    def section(t, s):
        return (s[0] - zx) * v0[0] + (s[1] - zy) * v0[1]

    section.direction = 1.0
    # chunked integration; the first chunk guesses one lap of a small circle
    t_chunk = 2 * np.pi * max(hgrid * 20, 0.05) / max(speed0, 1e-12)
    state = np.array([zx, zy])
    t0 = 0.0
    arclen = 0.0
    sols = []
    T = None
    while T is None:
        sol = solve_ivp(rhs, (t0, t0 + t_chunk), state, method="DOP853", rtol=rtol,
                        atol=rtol * 1e-2, events=section, dense_output=True)
        if not sol.success:
            raise NonClosingOrbit(sol.message)
        sols.append(sol)
        gn = np.hypot(*fl.velocity(sol.y[0], sol.y[1])) * g.conformal_factor(sol.y[0] + 1j * sol.y[1])
        if np.min(gn) < thresh:
            raise CriticalPointProximity("trajectory approaches a critical point")
        for te, ye in zip(sol.t_events[0], sol.y_events[0]):
            if te > 1e-9 * t_chunk and np.hypot(ye[0] - zx, ye[1] - zy) < 10 * hgrid:
                T = float(te)
                break
        arclen += np.sum(np.hypot(np.diff(sol.y[0]), np.diff(sol.y[1])))
        if arclen > max_turns * 2 * np.pi * 2.0:
            raise NonClosingOrbit("maximum arc length exceeded")
        state = sol.y[:, -1]
        t0 = sol.t[-1]
        t_chunk *= 2.0

    def dense(t):
        out = np.empty((2, len(t)))
        for s in sols:
            m = (t >= s.t[0]) & (t <= s.t[-1])
            out[:, m] = s.sol(t[m])
        return out

    times = T * np.arange(n_samples) / n_samples
    zs = dense(times)
    drift = float(np.max(np.abs(fl.value(zs[0], zs[1]) - h0)))
    if drift > tol:
        raise NonClosingOrbit(f"H drift {drift:.2e} exceeds {tol:.0e}")
    px, py = g.to_physical(zs[0], zs[1])
    sx, sy = g.to_physical(zx, zy)
    return Orbit((float(sx), float(sy)), np.column_stack([px, py]), times, T, h0,
                 zs.T.copy(), drift)


def orbit_mean(g: ScalarField2D, orbit: Orbit) -> float:
    """Average of g over one period in normalised time."""
    spl = interpolant(g)
    zs = orbit.grid_samples
    return float(np.mean(spl(zs[:, 0], zs[:, 1])))


# ---------------------------------------------------------------------------
# period evaluations along level components

def _refine_to_level(fl: _Flow, pts: np.ndarray, level: float, steps: int = 3) -> np.ndarray:
    p = pts.copy()
    for _ in range(steps):
        hx = fl.spl(p[:, 0], p[:, 1], dx=1)
        hy = fl.spl(p[:, 0], p[:, 1], dy=1)
        r = fl.spl(p[:, 0], p[:, 1]) - level
        d = hx * hx + hy * hy
        p[:, 0] -= r * hx / d
        p[:, 1] -= r * hy / d
    return p


def _component_geometry(fl: _Flow, comp: LevelComponent):
    zp = _refine_to_level(fl, comp.grid_points, comp.level)
    px, py = fl.grid.to_physical(zp[:, 0], zp[:, 1])
    return zp, np.column_stack([px, py])


def period_coarea(H: ScalarField2D, component: LevelComponent, flow: Optional[_Flow] = None) -> float:
    """Closed-curve integral of ds / |grad H|."""
    fl = flow or _Flow(H)
    zp, pp = _component_geometry(fl, component)
    inv = 1.0 / fl.grad_norm(zp[:, 0], zp[:, 1])
    seg = np.hypot(*(np.roll(pp, -1, axis=0) - pp).T)
    return float(np.sum(seg * 0.5 * (inv + np.roll(inv, -1))))


def _flux(fl: _Flow, comp: LevelComponent) -> float:
    """Outward flux of F = grad H / |grad H|^2 through a closed component."""
    zp, pp = _component_geometry(fl, comp)
    mid_z = 0.5 * (zp + np.roll(zp, -1, axis=0))
    d = np.roll(pp, -1, axis=0) - pp
    # F in the physical plane: grad_w H / |grad_w H|^2 = f' / conj(grad_z H)
    gz = fl.spl(mid_z[:, 0], mid_z[:, 1], dx=1) + 1j * fl.spl(mid_z[:, 0], mid_z[:, 1], dy=1)
    F = fl.grid.fprime(mid_z[:, 0] + 1j * mid_z[:, 1]) / np.conj(gz)
    # counter-clockwise orientation gives the outward normal (dy, -dx)
    area2 = np.sum(pp[:, 0] * np.roll(pp[:, 1], -1) - np.roll(pp[:, 0], -1) * pp[:, 1])
    sgn = 1.0 if area2 > 0 else -1.0
    return float(sgn * np.sum(F.real * d[:, 1] - F.imag * d[:, 0]))


def period_stokes(H: ScalarField2D, component: LevelComponent,
                  inner_boundaries: Sequence[LevelComponent] = (),
                  critical_fraction: float = 1e-2, flow: Optional[_Flow] = None) -> float:
    """Period from the divergence theorem: inner fluxes plus a region integral."""
    fl = flow or _Flow(H)
    g = fl.grid
    X, Y = g.mesh()
    per = g.periodic
    cx, cy = component.grid_points.mean(axis=0)
    if per:
        L = 2 * np.pi
        X = cx + (X - cx + np.pi) % L - np.pi
        Y = cy + (Y - cy + np.pi) % L - np.pi
    hv = g.hx
    outer = points_in_polygon(X, Y, component.grid_points)
    holes = [points_in_polygon(X, Y, c.grid_points) for c in inner_boundaries]
    near = ndimage.binary_dilation(outer, iterations=2)
    region_core = outer.copy()
    for hm in holes:
        region_core &= ~hm
    Hv = H.values
    gz = fl.spl(X, Y, dx=1) + 1j * fl.spl(X, Y, dy=1)
    gabs = np.abs(gz)
    if np.any(region_core & (gabs < critical_fraction * fl.grad_scale)):
        raise CriticalPointInRegion("critical point inside the integration region")
    # smoothed indicator from the level values (cell-fraction accurate)
    delta = np.maximum(gabs * hv, 1e-300)
    inside_side = np.sign(np.median(Hv[region_core]) - component.level) if region_core.any() else 1.0
    chi = np.clip(0.5 + inside_side * (Hv - component.level) / delta, 0.0, 1.0)
    for c in inner_boundaries:
        chi *= np.clip(0.5 - inside_side * (Hv - c.level) / delta, 0.0, 1.0)
    keep = ndimage.binary_dilation(region_core, iterations=2) & near & (g.mask != EXTERIOR)
    chi = np.where(keep, chi, 0.0)
    # pulled-back field J / conj(grad_z H); its z-divergence integrates directly
    Jc = g.conformal_factor()
    with np.errstate(all="ignore"):
        Fz = np.where(gabs > 0, Jc / np.conj(gz), 0.0)
    div = _fd_div(Fz.real, Fz.imag, g)
    vol = float(np.sum(chi * div) * g.hx * g.hy)
    flux_in = sum(_flux(fl, c) for c in inner_boundaries)
    return abs(flux_in + vol)


def _fd_div(u, v, g: Grid2D):
    if g.periodic:
        du = (np.roll(u, -1, 1) - np.roll(u, 1, 1)) / (2 * g.hx)
        dv = (np.roll(v, -1, 0) - np.roll(v, 1, 0)) / (2 * g.hy)
        return du + dv
    du = np.zeros_like(u)
    dv = np.zeros_like(v)
    du[:, 1:-1] = (u[:, 2:] - u[:, :-2]) / (2 * g.hx)
    dv[1:-1, :] = (v[2:, :] - v[:-2, :]) / (2 * g.hy)
    return du + dv


# ---------------------------------------------------------------------------
# orbit families and the right inverse

@dataclass
class Tube:
    """Nested closed orbits around an extremum, parametrised by (level, angle)."""
    H: ScalarField2D
    center: np.ndarray  # computational
    theta0: float
    orientation: float  # +1 if orbits turn counter-clockwise in z
    levels: np.ndarray
    radii0: np.ndarray  # seed radius on the section ray for each level
    n_angle: int = 1024
    flow: Optional[_Flow] = field(default=None, repr=False)
    _table: Optional[dict] = field(default=None, repr=False)

    @property
    def band(self):
        return float(self.levels.min()), float(self.levels.max())

    def integrate(self, g_spl=None) -> dict:
        """RK4 in the angle phi for all levels; tabulates r, t, P and Q."""
        fl = self.flow
        c = self.center
        M = self.n_angle
        dphi = 2 * np.pi / M
        s = self.orientation

        def deriv(phi, st):
            r, t, P, Q = st
            th = self.theta0 + s * phi
            ct, sn = np.cos(th), np.sin(th)
            x, y = c[0] + r * ct, c[1] + r * sn
            vx, vy = fl.velocity(x, y)
            vr = vx * ct + vy * sn
            om = s * (-vx * sn + vy * ct) / r  # d phi / dt
            dt = 1.0 / om
            gv = g_spl(x, y) if g_spl is not None else 0.0 * r
            return np.array([vr * dt, dt, gv * dt, P * dt]), om

        K = len(self.levels)
        st = np.array([self.radii0, np.zeros(K), np.zeros(K), np.zeros(K)])
        R = np.empty((M + 1, K))
        Tt = np.empty((M + 1, K))
        Pt = np.empty((M + 1, K))
        Qt = np.empty((M + 1, K))
        om_min = np.inf
        for m in range(M + 1):
            R[m], Tt[m], Pt[m], Qt[m] = st
            if m == M:
                break
            phi = m * dphi
            k1, o1 = deriv(phi, st)
            k2, o2 = deriv(phi + dphi / 2, st + dphi / 2 * k1)
            k3, o3 = deriv(phi + dphi / 2, st + dphi / 2 * k2)
            k4, o4 = deriv(phi + dphi, st + dphi * k3)
            om_min = min(om_min, np.min(o1), np.min(o2), np.min(o3), np.min(o4))
            st = st + dphi / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not om_min > 0:
            raise CriticalSupport("orbit family is not star-shaped about its centre")
        phis = dphi * np.arange(M + 1)
        th = self.theta0 + s * phis
        X = c[0] + R * np.cos(th)[:, None]
        Y = c[1] + R * np.sin(th)[:, None]
        closure = np.abs(R[-1] - R[0])
        return {"phi": phis, "r": R, "t": Tt, "P": Pt, "Q": Qt, "x": X, "y": Y,
                "period": Tt[-1].copy(), "closure": closure}

    def orbits(self, n_samples: int = 256) -> list:
        tab = self.integrate()
        out = []
        g = self.H.grid
        for k, h in enumerate(self.levels):
            T = tab["period"][k]
            ts = T * np.arange(n_samples) / n_samples
            xs = np.interp(ts, tab["t"][:, k], tab["x"][:, k])
            ys = np.interp(ts, tab["t"][:, k], tab["y"][:, k])
            px, py = g.to_physical(xs, ys)
            sx, sy = g.to_physical(tab["x"][0, k], tab["y"][0, k])
            out.append(Orbit((float(sx), float(sy)), np.column_stack([px, py]), ts, float(T),
                             float(h), np.column_stack([xs, ys])))
        return out

    def node_coordinates(self):
        """(mask, level, phi) for grid nodes inside the tube's component."""
        g = self.H.grid
        lo, hi = self.band
        v = self.H.values
        band = (v >= lo) & (v <= hi) & g.interior
        lab, _ = ndimage.label(band, structure=np.ones((3, 3)))
        X, Y = g.mesh()
        # component picked by the seed node nearest the first section point
        sx = self.center[0] + self.radii0 * np.cos(self.theta0)
        sy = self.center[1] + self.radii0 * np.sin(self.theta0)
        ids = set()
        for px, py in zip(sx, sy):
            i = int(round((px - g.x[0]) / g.hx)) % g.nx
            j = int(round((py - g.y[0]) / g.hy)) % g.ny
            if lab[j, i]:
                ids.add(lab[j, i])
        mask = np.isin(lab, list(ids)) & (lab > 0)
        dx, dy = X - self.center[0], Y - self.center[1]
        if g.periodic:
            dx = (dx + np.pi) % (2 * np.pi) - np.pi
            dy = (dy + np.pi) % (2 * np.pi) - np.pi
        phi = np.mod(self.orientation * (np.arctan2(dy, dx) - self.theta0), 2 * np.pi)
        return mask, v, phi


def _find_extremum(fl: _Flow, start) -> np.ndarray:
    p = np.array(start, dtype=float)
    for _ in range(50):
        gx, gy = fl.spl(p[0], p[1], dx=1), fl.spl(p[0], p[1], dy=1)
        H = np.array([[fl.spl(p[0], p[1], dx=2), fl.spl(p[0], p[1], dx=1, dy=1)],
                      [fl.spl(p[0], p[1], dx=1, dy=1), fl.spl(p[0], p[1], dy=2)]])
        step = np.linalg.solve(H, [gx, gy])
        p -= step
        if np.linalg.norm(step) < 1e-12:
            break
    return p


def regular_tube(H: ScalarField2D, seed, half_width: float, n_levels: int = 64,
                 center=None, critical_values: Sequence[float] = (), n_angle: int = 1024,
                 flow: Optional[_Flow] = None) -> Tube:
    """Orbit family on levels H(seed) +- half_width around the enclosed extremum.

    ``seed`` and ``center`` are physical points; ``center`` is refined by
    Newton's method on grad H.  ``critical_values`` lists saddle values that
    the band must avoid.
    """
    fl = flow or _Flow(H)
    g = H.grid
    sz = np.array([float(v) for v in g.to_computational(seed[0], seed[1])])
    h0 = float(fl.value(*sz))
    if center is None:
        raise ValidationError("regular_tube needs the enclosed extremum as a starting guess")
    cz = _find_extremum(fl, [float(v) for v in g.to_computational(center[0], center[1])])
    hc = float(fl.value(*cz))
    lo, hi = h0 - half_width, h0 + half_width
    for cv in list(critical_values) + [hc]:
        if lo <= cv <= hi:
            raise BandContainsCriticalValue(f"critical value {cv:.6g} inside [{lo:.6g}, {hi:.6g}]")
    d = sz - cz
    rs = float(np.hypot(*d))
    theta0 = float(np.arctan2(d[1], d[0]))
    e = np.array([np.cos(theta0), np.sin(theta0)])
    # walk the section ray outward while H stays monotone
    rr = np.linspace(0.0, 3 * rs, 1201)[1:]
    hv = fl.value(cz[0] + rr * e[0], cz[1] + rr * e[1])
    sgn = np.sign(h0 - hc)
    mono = np.diff(sgn * hv) > 0
    stop = np.argmin(mono) if not mono.all() else len(mono)
    rmax = rr[stop]
    far = hi if sgn > 0 else lo
    if sgn * (hv[stop] - far) < 0:
        raise BandContainsCriticalValue("band leaves the monotone part of the section ray")
    levels = np.linspace(lo, hi, n_levels)
    ray = lambda r, lev: float(fl.value(cz[0] + r * e[0], cz[1] + r * e[1])) - lev
    radii = np.array([brentq(ray, 1e-12, rmax, args=(lev,), xtol=1e-14) for lev in levels])
    vx, vy = fl.velocity(sz[0], sz[1])
    orient = float(np.sign(-vx * e[1] + vy * e[0]))
    return Tube(H, cz, theta0, orient, levels, radii, n_angle, fl)


@dataclass
class InverseResult:
    f: ScalarField2D
    normalized: ScalarField2D
    periods: np.ndarray
    levels: np.ndarray
    orbit_means_g: np.ndarray  # normalised-time means of g per orbit
    output_means: np.ndarray
    tube_mask: np.ndarray


def transport_right_inverse(H: ScalarField2D, g: ScalarField2D, tube: Tube,
                            solvability_tol: float = 1e-3, check_support: bool = True) -> InverseResult:
    """Solve grad-perp H . grad f = g on the tube with zero mean on every orbit.

    ``f`` is the primitive of g along orbits in physical time.  The
    normalised-time primitive f / T is returned as ``normalized``.
    """
    gr = H.grid
    gmax = float(np.max(np.abs(g.values[gr.interior]))) if gr.interior.any() else 0.0
    mask, hv, phi = tube.node_coordinates()
    zeros = ScalarField2D(gr, np.zeros(gr.shape), 0.0)
    K = len(tube.levels)
    if gmax == 0.0:
        return InverseResult(zeros, zeros, np.zeros(K), tube.levels, np.zeros(K), np.zeros(K), mask)
    if check_support:
        supp = (np.abs(g.values) > 1e-12 * gmax) & gr.interior
        if np.any(supp & ~mask):
            raise CriticalSupport("support of g reaches outside the regular tube")
    gspl = interpolant(g)
    tab = tube.integrate(gspl)
    T = tab["period"]
    PT = tab["P"][-1]
    means_g = PT / T
    bad = np.abs(PT) > solvability_tol * gmax * T
    if np.any(bad):
        k = int(np.argmax(np.abs(means_g)))
        raise NotInRange(f"orbit mean {means_g[k]:.3e} at level {tube.levels[k]:.6g} "
                         f"exceeds {solvability_tol:.0e} * |g|max")
    t = tab["t"]
    f = tab["P"] - t / T * PT
    fmean = (tab["Q"][-1] - PT * T / 2.0) / T
    f = f - fmean
    # residual mean after subtraction (trapezoid in time over the samples)
    dt = np.diff(t, axis=0)
    out_means = np.sum(0.5 * (f[1:] + f[:-1]) * dt, axis=0) / T
    table = f[:-1].T  # (K, M)
    M = table.shape[1]
    pad = 4
    ph = tab["phi"][:-1]
    dphi = ph[1]
    phx = np.concatenate([ph[-pad:] - 2 * np.pi, ph, ph[:pad] + 2 * np.pi])
    tabx = np.concatenate([table[:, -pad:], table, table[:, :pad]], axis=1)
    spl = RectBivariateSpline(tube.levels, phx, tabx, kx=3, ky=3, s=0)
    splT = RectBivariateSpline(tube.levels, phx, tabx / T[:, None], kx=3, ky=3, s=0)
    vals = np.zeros(gr.shape)
    nvals = np.zeros(gr.shape)
    vals[mask] = spl.ev(hv[mask], phi[mask])
    nvals[mask] = splT.ev(hv[mask], phi[mask])
    return InverseResult(ScalarField2D(gr, vals, 0.0), ScalarField2D(gr, nvals, 0.0), T,
                         tube.levels, means_g, out_means, mask)
