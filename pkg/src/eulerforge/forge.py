"""Perturbative construction of steady states without a semilinear law.

Pipeline on a base state psi0 with Delta psi0 = F(psi0):

    eta  = G(psi0) on one connected tube of regular levels, 0 elsewhere
    psi1 = (Delta - F'(psi0))^-1 eta
    psi2 = (Delta - F'(psi0))^-1 L^-1_{psi_eps} [ -{psi1 + eps psi2, eta}
                    - F''(psi0) (psi1 + eps psi2) {psi1 + eps psi2, psi0} ]

with {a, b} = grad-perp a . grad b and psi_eps = psi0 + eps psi1 + eps^2 psi2.
The bracket in the square brackets is exactly L_{psi_eps}(-eta/eps) when F''
vanishes, so the transport inverse is always applied inside its range.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .elliptic import (EllipticProblem, invertibility_probe, kernel_projection,
                       solve_dirichlet, torus_helmholtz_apply, torus_helmholtz_solve)
from .errors import (KernelLeak, MeanViolation, NoSaddle, NotInRange, OverlappingWindows,
                     PicardDivergence, SingularOperator, ValidationError)
from .field_core import Grid2D, ScalarField2D, bracket, laplacian
from .neumann_oval import MorseReport, morse_classify
from .transport import Tube, _Flow, _find_extremum, regular_tube, transport_right_inverse


# ---------------------------------------------------------------------------
# profiles

@dataclass
class Profile:
    """Scalar function of one variable with two derivatives."""
    f: Callable
    df: Callable
    d2f: Callable
    support: tuple = (-np.inf, np.inf)
    scale: float = 0.0  # mollification scale, 0 if none
    name: str = ""

    def __call__(self, t):
        return self.f(np.asarray(t, float))

    def d1(self, t):
        return self.df(np.asarray(t, float))

    def d2(self, t):
        return self.d2f(np.asarray(t, float))

    @classmethod
    def affine(cls, a: float, b: float) -> "Profile":
        """t -> a + b t."""
        return cls(lambda t: a + b * t, lambda t: b + 0 * t, lambda t: 0 * t,
                   name=f"affine({a}, {b})")

    @classmethod
    def polynomial(cls, coeffs: Sequence[float]) -> "Profile":
        """Coefficients in increasing degree."""
        p = np.polynomial.Polynomial(coeffs)
        d1, d2 = p.deriv(1), p.deriv(2)
        return cls(p, d1, d2, name=f"poly{list(coeffs)}")

    @classmethod
    def bump(cls, center: float, half_width: float, amplitude: float = 1.0,
             power: int = 4) -> "Profile":
        """amplitude * (1 - s^2)^power with s = (t - center) / half_width."""
        c, a, A, k = center, half_width, amplitude, power

        def s_of(t):
            return (t - c) / a

        def f(t):
            s = s_of(t)
            return np.where(np.abs(s) < 1, A * np.clip(1 - s * s, 0, None) ** k, 0.0)

        def df(t):
            s = s_of(t)
            u = np.clip(1 - s * s, 0, None)
            return np.where(np.abs(s) < 1, A * k * u ** (k - 1) * (-2 * s) / a, 0.0)

        def d2f(t):
            s = s_of(t)
            u = np.clip(1 - s * s, 0, None)
            v = k * (k - 1) * u ** (k - 2) * 4 * s * s - 2 * k * u ** (k - 1)
            return np.where(np.abs(s) < 1, A * v / a**2, 0.0)

        return cls(f, df, d2f, (c - a, c + a), name=f"bump({c:.6g}, {a:.6g})")

    @classmethod
    def tilted_bump(cls, center: float, half_width: float, shift: float,
                    amplitude: float = 1.0, power: int = 4) -> "Profile":
        """amplitude * bump(t) * (t - shift); sign-changing for shift inside the support."""
        b = cls.bump(center, half_width, 1.0, power)
        A, s = amplitude, shift
        return cls(lambda t: A * b.f(t) * (t - s),
                   lambda t: A * (b.df(t) * (t - s) + b.f(t)),
                   lambda t: A * (b.d2f(t) * (t - s) + 2 * b.df(t)),
                   b.support, name=f"tilted_bump({center:.6g}, {half_width:.6g}, {shift:.6g})")


def _mollifier(a: float, nodes: int = 64):
    """Gauss nodes, weights and K, K', K'' for K = c (1 - (s/a)^2)^4 on |s| < a."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    s = a * x
    w = a * w
    c = 315.0 / 256.0 / a
    u = 1 - x * x
    K = c * u**4
    K1 = c * 4 * u**3 * (-2 * x) / a
    K2 = c * (12 * u**2 * 4 * x * x - 8 * u**3) / a**2
    return s, w, K, K1, K2


def flatten_profile(F: Profile, critical_values: Sequence[float], delta: float,
                    value_range: Optional[tuple] = None, nodes: int = 64) -> Profile:
    """Replace F by its secant on each |t - t_i| <= delta, then mollify at scale delta^2.

    Outside ``value_range`` (if given) the flattened profile continues linearly.
    """
    tc = np.sort(np.asarray(critical_values, float))
    if delta <= 0:
        raise ValidationError("delta must be positive")
    if len(tc) > 1 and np.min(np.diff(tc)) <= 2 * delta:
        raise OverlappingWindows("flattening windows overlap")
    lo_r, hi_r = value_range if value_range is not None else (-np.inf, np.inf)

    def base(t):
        t = np.asarray(t, float)
        tt = np.clip(t, lo_r, hi_r)
        out = np.asarray(F(tt), float).copy()
        for ti in tc:
            a, b = ti - delta, ti + delta
            fa, fb = F(a), F(b)
            sec = fa + (fb - fa) * (tt - a) / (b - a)
            out = np.where((tt >= a) & (tt <= b), sec, out)
        # linear continuation outside the value range
        if np.isfinite(lo_r):
            out = np.where(t < lo_r, out + _slope(F, tc, delta, lo_r) * (t - lo_r), out)
        if np.isfinite(hi_r):
            out = np.where(t > hi_r, out + _slope(F, tc, delta, hi_r) * (t - hi_r), out)
        return out

    s, w, K, K1, K2 = _mollifier(delta**2, nodes)

    def conv(kern):
        def g(t):
            t = np.asarray(t, float)
            vals = base(t[..., None] - s)
            return np.sum(vals * (w * kern), axis=-1)
        return g

    return Profile(conv(K), conv(K1), conv(K2), F.support, delta**2,
                   name=f"flat({F.name}, delta={delta})")


def _slope(F, tc, delta, t):
    for ti in tc:
        if abs(t - ti) <= delta:
            return (F(ti + delta) - F(ti - delta)) / (2 * delta)
    return float(F.d1(t))


# ---------------------------------------------------------------------------
# forcing

@dataclass
class BumpForcing:
    eta: ScalarField2D
    tube: Tube
    x0: tuple  # physical
    G: Profile
    level: float
    eps0: float
    saddle: tuple
    saddle_value: float
    center: tuple
    center_value: float


def build_bump_forcing(psi0: ScalarField2D, morse: MorseReport, eps0: Optional[float] = None,
                       bump: Optional[Profile] = None, side: float = 1.0,
                       tube_margin: float = 0.5, n_levels: int = 64,
                       n_angle: int = 1024) -> BumpForcing:
    """eta = G(psi0) on the level band around x0 inside one lobe, zero elsewhere."""
    if len(morse.critical_points) < 2 or not morse.of_kind("saddle"):
        raise NoSaddle("base state needs a saddle (more than one critical point)")
    sad = min(morse.of_kind("saddle"), key=lambda c: np.hypot(*c.location))
    ext = [c for c in morse.critical_points if c.kind in ("min", "max")
           and np.sign(c.location[0] - sad.location[0]) == np.sign(side)]
    if not ext:
        raise NoSaddle("no extremum on the requested side of the saddle")
    cen = min(ext, key=lambda c: abs(c.value - sad.value))
    gap = abs(sad.value - cen.value)
    eps0 = gap / 4.0 if eps0 is None else eps0
    h0 = 0.5 * (sad.value + cen.value)
    if abs(h0 - cen.value) <= eps0 * (1 + tube_margin) or abs(sad.value - h0) <= eps0 * (1 + tube_margin):
        raise ValidationError("eps0 too large for the gap between saddle and extremum values")
    g = psi0.grid
    fl = _Flow(psi0)
    # x0 on the segment from the extremum toward the saddle, at level h0
    cz = np.array(g.to_computational(*cen.location), dtype=float)
    sz = np.array(g.to_computational(*sad.location), dtype=float)
    from scipy.optimize import brentq
    seg = lambda u: float(fl.value(*(cz + u * (sz - cz)))) - h0
    u0 = brentq(seg, 1e-9, 1 - 1e-9)
    xz = cz + u0 * (sz - cz)
    x0 = tuple(float(v) for v in g.to_physical(*xz))
    G = bump if bump is not None else Profile.bump(h0, eps0)
    tube = regular_tube(psi0, x0, eps0 * (1 + tube_margin), n_levels=n_levels,
                        center=cen.location, critical_values=[sad.value], n_angle=n_angle, flow=fl)
    mask, hv, _ = tube.node_coordinates()
    eta_vals = np.where(mask, G(psi0.values), 0.0)
    bv = 0.0 if not g.periodic else None
    return BumpForcing(ScalarField2D(g, eta_vals, bv), tube, x0, G, h0, eps0,
                       sad.location, sad.value, cen.location, cen.value)


# ---------------------------------------------------------------------------
# linear steps

def _as_array(v, grid):
    if isinstance(v, ScalarField2D):
        return np.array(v.values)
    return np.broadcast_to(np.asarray(v, float), grid.shape).copy()


def first_order(psi0: ScalarField2D, Fprime_at_psi0, eta: ScalarField2D,
                problem: Optional[EllipticProblem] = None, kernel_tol: float = 1e-10) -> ScalarField2D:
    """psi1 = (Delta - F'(psi0))^-1 eta; on the torus the inverse of Delta + 2."""
    g = psi0.grid
    if not np.any(eta.values):
        return ScalarField2D(g, np.zeros(g.shape), None if g.periodic else 0.0)
    if g.periodic:
        leak = kernel_projection(eta).max_abs()
        if leak > kernel_tol * max(eta.max_abs(), 1e-300):
            raise KernelLeak(f"forcing has kernel component {leak:.2e}")
        return torus_helmholtz_solve(eta)
    prob = problem or EllipticProblem(g, _as_array(Fprime_at_psi0, g))
    if not invertibility_probe(prob).invertible:
        raise SingularOperator("Delta - F'(psi0) is not invertible")
    return solve_dirichlet(prob, eta)


# ---------------------------------------------------------------------------
# Picard iteration

@dataclass
class ForgeResult:
    psi0: ScalarField2D
    psi1: ScalarField2D
    psi2: ScalarField2D
    psi_eps: ScalarField2D
    eps: float
    trace: list
    eta: ScalarField2D
    diagnostics: dict = field(default_factory=dict)
    w: Optional[ScalarField2D] = None


@dataclass
class TubeSpec:
    """How to rebuild an orbit tube around the current iterate."""
    seed: tuple
    center: tuple
    half_width: float
    saddle: Optional[tuple] = None
    n_levels: int = 64
    n_angle: int = 1024


def _saddle_value(fl: _Flow, saddle, grid: Grid2D) -> float:
    p = _find_extremum(fl, [float(v) for v in grid.to_computational(*saddle)])
    return float(fl.value(*p))


def _rebuild_tubes(H: ScalarField2D, specs: Sequence[TubeSpec]) -> list:
    fl = _Flow(H)
    tubes = []
    for sp in specs:
        cv = [] if sp.saddle is None else [_saddle_value(fl, sp.saddle, H.grid)]
        tubes.append(regular_tube(H, sp.seed, sp.half_width, n_levels=sp.n_levels,
                                  center=sp.center, critical_values=cv, n_angle=sp.n_angle,
                                  flow=fl))
    return tubes


def _inverse_on_tubes(H, g_field, tubes, solvability_tol):
    grid = H.grid
    total = np.zeros(grid.shape)
    info = []
    claimed = np.zeros(grid.shape, dtype=bool)
    for tube in tubes:
        mask, _, _ = tube.node_coordinates()
        part = ScalarField2D(grid, np.where(mask, g_field.values, 0.0))
        res = transport_right_inverse(H, part, tube, solvability_tol=solvability_tol)
        total += res.f.values
        claimed |= mask
        info.append({"max_orbit_mean": float(np.max(np.abs(res.orbit_means_g))),
                     "period_range": [float(res.periods.min()), float(res.periods.max())]})
    # stencil spread can push a few values past the tube band on coarse grids;
    # they are dropped and reported
    gmax = float(np.max(np.abs(g_field.values))) or 1.0
    stray = float(np.max(np.abs(np.where(claimed, 0.0, g_field.values)))) / gmax
    for d in info:
        d["stray"] = stray
    return ScalarField2D(grid, total, None if grid.periodic else 0.0), info


def _picard(psi0, psi1, eta, F: Profile, eps, tubes_spec, solve_linear, max_iter, tol,
            solvability_tol):
    grid = psi0.grid
    bv = None if grid.periodic else 0.0
    psi2 = ScalarField2D(grid, np.zeros(grid.shape), bv)
    F2 = F.d2(psi0.values)
    has_F2 = bool(np.any(F2 != 0))
    trace = []
    tube_info = []
    w = None
    for it in range(max_iter):
        Psi = psi1 + eps * psi2
        psi_eps = psi0 + eps * Psi
        rhs = -1.0 * bracket(Psi, eta)
        if has_F2:
            rhs = rhs - ScalarField2D(grid, F2 * Psi.values * bracket(Psi, psi0).values)
        tubes = _rebuild_tubes(psi_eps, tubes_spec)
        w, tube_info = _inverse_on_tubes(psi_eps, rhs, tubes, solvability_tol)
        new = solve_linear(w)
        diff = float(np.max(np.abs(new.values - psi2.values)))
        trace.append(diff)
        psi2 = new
        if diff <= tol:
            return psi2, trace, w, tube_info, True
        if len(trace) >= 3 and trace[-1] >= trace[-2]:
            return psi2, trace, w, tube_info, False
    return psi2, trace, w, tube_info, False


def forge_remainder(psi0: ScalarField2D, psi1: ScalarField2D, eta: ScalarField2D, F: Profile,
                    eps: float, tubes_spec: Sequence[TubeSpec], max_iter: int = 30,
                    tol: float = 1e-10, solvability_tol: float = 1e-3,
                    max_halvings: int = 2, problem: Optional[EllipticProblem] = None) -> ForgeResult:
    """Picard iteration for psi2 on a Dirichlet domain; eps is halved on failure."""
    grid = psi0.grid
    prob = problem or EllipticProblem(grid, F.d1(psi0.values))
    solve = lambda rhs: solve_dirichlet(prob, rhs)
    attempts = []
    for k in range(max_halvings + 1):
        e = eps / 2**k
        if e == 0:
            rhs = -1.0 * bracket(psi1, eta)
            tubes = _rebuild_tubes(psi0, tubes_spec)
            w, info = _inverse_on_tubes(psi0, rhs, tubes, solvability_tol)
            psi2 = solve(w)
            return _result(psi0, psi1, psi2, 0.0, [0.0], eta, w, info, attempts)
        psi2, trace, w, info, ok = _picard(psi0, psi1, eta, F, e, tubes_spec, solve,
                                           max_iter, tol, solvability_tol)
        attempts.append({"eps": e, "trace": trace, "converged": ok})
        if ok:
            return _result(psi0, psi1, psi2, e, trace, eta, w, info, attempts)
    raise PicardDivergence(f"no contraction after {max_halvings} halvings of eps={eps}")


def _result(psi0, psi1, psi2, eps, trace, eta, w, info, attempts):
    psi_eps = psi0 + eps * psi1 + eps * eps * psi2
    diag = {"tubes": info, "attempts": attempts,
            "monotone": all(b <= a for a, b in zip(trace, trace[1:])),
            "psi1_max": psi1.max_abs(), "psi2_max": psi2.max_abs()}
    return ForgeResult(psi0, psi1, psi2, psi_eps, eps, trace, eta, diag, w)


# ---------------------------------------------------------------------------
# torus

def cellular_base(n: int) -> ScalarField2D:
    g = Grid2D.torus(n)
    return ScalarField2D.from_function(g, lambda x, y: np.sin(x) * np.sin(y))


@dataclass
class CellularForcing:
    eta: ScalarField2D
    G: Profile
    level: float
    half_width: float
    shift: float


def cellular_forcing(psi0: ScalarField2D, level: float = 0.5, half_width: float = 0.25,
                     power: int = 4) -> CellularForcing:
    """eta = G(psi0) on (0, pi)^2, copied to (-pi, 0) x (0, pi) by x -> x + pi.

    G(h) = bump(h) (h - c) with c chosen so that eta has zero mean on the
    cell under the grid quadrature.
    """
    g = psi0.grid
    X, Y = g.mesh()
    cell = (X > 0) & (X < np.pi) & (Y > 0) & (Y < np.pi)
    b = Profile.bump(level, half_width, 1.0, power)
    B = b(psi0.values)
    c = float(np.sum(np.where(cell, B * psi0.values, 0)) / np.sum(np.where(cell, B, 0)))
    G0 = Profile.tilted_bump(level, half_width, c, 1.0, power)
    amp = 1.0 / float(np.max(np.abs(np.where(cell, G0(psi0.values), 0))))
    G = Profile.tilted_bump(level, half_width, c, amp, power)
    e1 = np.where(cell, G(psi0.values), 0.0)
    eta = e1 + np.roll(e1, -g.nx // 2, axis=1)  # eta(x, y) = e1(x + pi, y) on the left cell
    return CellularForcing(ScalarField2D(g, eta), G, level, half_width, c)


def forge_cellular(eps: float, n: int = 128, level: float = 0.5, half_width: float = 0.25,
                   max_iter: int = 30, tol: float = 1e-10, solvability_tol: float = 1e-3,
                   max_halvings: int = 2, n_levels: int = 64, n_angle: int = 1024,
                   mean_tol: float = 1e-12) -> ForgeResult:
    psi0 = cellular_base(n)
    forcing = cellular_forcing(psi0, level, half_width)
    eta = forcing.eta
    g = psi0.grid
    mean = float(np.sum(eta.values) * g.hx * g.hy)
    if abs(mean) > mean_tol * max(eta.max_abs(), 1.0) * (2 * np.pi) ** 2:
        raise MeanViolation(f"integral of eta is {mean:.2e}")
    psi1 = first_order(psi0, -2.0, eta)
    r0 = np.arcsin(level)  # distance from the cell centre along x to the level on psi0
    hw = half_width * 1.5
    specs = [TubeSpec((np.pi / 2 + (np.pi / 2 - r0), np.pi / 2), (np.pi / 2, np.pi / 2), hw,
                      None, n_levels, n_angle),
             TubeSpec((-np.pi / 2 + (np.pi / 2 - r0), np.pi / 2), (-np.pi / 2, np.pi / 2), hw,
                      None, n_levels, n_angle)]
    leaks = []

    def solve(w):
        leaks.append(kernel_projection(w).max_abs())
        return torus_helmholtz_solve(w)

    F = Profile.affine(0.0, -2.0)
    attempts = []
    for k in range(max_halvings + 1):
        e = eps / 2**k
        if e == 0:
            break
        psi2, trace, w, info, ok = _picard(psi0, psi1, eta, F, e, specs, solve, max_iter, tol,
                                           solvability_tol)
        attempts.append({"eps": e, "trace": trace, "converged": ok})
        if ok:
            res = _result(psi0, psi1, psi2, e, trace, eta, w, info, attempts)
            res.diagnostics.update(kernel_leak=leaks[-1], forcing_shift=forcing.shift,
                                   level=level, half_width=half_width,
                                   eta_mean=mean)
            return res
    if eps == 0:
        Psi = psi1
        tubes = _rebuild_tubes(psi0, specs)
        w, info = _inverse_on_tubes(psi0, -1.0 * bracket(Psi, eta), tubes, solvability_tol)
        psi2 = solve(w)
        return _result(psi0, psi1, psi2, 0.0, [0.0], eta, w, info, attempts)
    raise PicardDivergence(f"no contraction after {max_halvings} halvings of eps={eps}")


def helmholtz_residual(psi: ScalarField2D) -> ScalarField2D:
    """(Delta + 2) psi on the torus."""
    return torus_helmholtz_apply(psi)


# ---------------------------------------------------------------------------

@dataclass
class ResidualReport:
    l2: float
    linf: float
    field: ScalarField2D


def steady_residual(psi: ScalarField2D, collar: float = 2.0) -> ResidualReport:
    """{psi, Delta psi} with a boundary collar of ``collar`` spacings left out."""
    g = psi.grid
    r = bracket(psi, laplacian(psi))
    keep = g.interior
    if not g.periodic:
        keep = keep & (g.boundary_distance() >= collar * g.hx)
    vals = np.where(keep, r.values, 0.0)
    fld = ScalarField2D(g, vals)
    return ResidualReport(fld.l2(keep), float(np.max(np.abs(vals))), fld)


def forge_oval(q: float = 0.5, lam: float = 0.1, eps: float = 1e-2, n: int = 256,
               eps0: Optional[float] = None, tol: float = 1e-10, max_iter: int = 30,
               solvability_tol: float = 1e-3, n_levels: int = 64, n_angle: int = 1024,
               power: int = 4, tube_factor: float = 1.8):
    """End-to-end oval pipeline: base solve, forcing, first order, remainder."""
    from .neumann_oval import solve_semilinear_lambda

    base = solve_semilinear_lambda(q, lam, n=n)
    psi0 = base.psi
    morse = morse_classify(psi0)
    forcing = build_bump_forcing(psi0, morse, eps0, tube_margin=tube_factor - 1,
                                 n_levels=n_levels, n_angle=n_angle)
    if power != 4:
        G = Profile.bump(forcing.level, forcing.eps0, 1.0, power)
        forcing = build_bump_forcing(psi0, morse, eps0, bump=G, tube_margin=tube_factor - 1,
                                     n_levels=n_levels, n_angle=n_angle)
    F = Profile.affine(1.0, lam)
    prob = EllipticProblem(psi0.grid, lam)
    psi1 = first_order(psi0, lam, forcing.eta, prob)
    spec = TubeSpec(forcing.x0, forcing.center, forcing.eps0 * tube_factor, forcing.saddle,
                    n_levels, n_angle)
    res = forge_remainder(psi0, psi1, forcing.eta, F, eps, [spec], max_iter, tol,
                          solvability_tol, problem=prob)
    res.diagnostics.update(x0=forcing.x0, level=forcing.level, eps0=forcing.eps0,
                           saddle=forcing.saddle, saddle_value=forcing.saddle_value,
                           center=forcing.center, center_value=forcing.center_value,
                           q=q, lam=lam, morse=morse.as_dict())
    return res, forcing, morse
