"""Diagnostics that can falsify a claimed steady state or stability property."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy import ndimage

from .elliptic import EllipticProblem, invertibility_probe
from .errors import (ArnoldViolation, AsymmetricGrid, CFLViolation, CollinearityViolation,
                     NearCriticalLevel, SymmetryViolation)
from .field_core import (EXTERIOR, Grid2D, ScalarField2D, _axis_derivative, _complex_gradient,
                         bracket, extract_level_components, interpolant, laplacian)


def _retained(g: Grid2D, collar: float = 2.0) -> np.ndarray:
    keep = g.interior.copy()
    if not g.periodic:
        keep &= g.boundary_distance() >= collar * g.hx
    return keep


def _critical_mask(g: Grid2D, points: Sequence, radius: float) -> np.ndarray:
    """Nodes within ``radius`` (computational units) of the given physical points."""
    X, Y = g.mesh()
    out = np.zeros(g.shape, dtype=bool)
    for p in points:
        cx, cy = (float(v) for v in g.to_computational(p[0], p[1]))
        dx, dy = X - cx, Y - cy
        if g.periodic:
            dx = (dx + np.pi) % (2 * np.pi) - np.pi
            dy = (dy + np.pi) % (2 * np.pi) - np.pi
        out |= np.hypot(dx, dy) <= radius
    return out


# ---------------------------------------------------------------------------
# semilinear structure

@dataclass
class LevelProbe:
    level: float
    n_components: int
    means: list
    spreads: list
    lengths: list
    gap: float


@dataclass
class ViolationReport:
    levels: list
    probes: list
    max_gap: float
    max_spread: float
    threshold: float
    verdict: str  # "semilinear" | "multivalued"
    scatter: np.ndarray = field(repr=False, default=None)  # (psi, omega) pairs

    def as_dict(self):
        return {"levels": list(self.levels), "max_gap": self.max_gap,
                "max_spread": self.max_spread, "threshold": self.threshold,
                "verdict": self.verdict,
                "probes": [p.__dict__ for p in self.probes]}


def _component_average(omega_ev, comp, g):
    pts = comp.points
    zx, zy = g.to_computational(pts[:, 0], pts[:, 1])
    vals = omega_ev(np.asarray(zx, float), np.asarray(zy, float))
    nxt = np.roll(pts, -1, axis=0) if comp.closed else pts[1:]
    seg = np.hypot(*(nxt - pts[: len(nxt)]).T)
    if comp.closed:
        w = 0.5 * (seg + np.roll(seg, 1))
    else:
        w = np.zeros(len(pts))
        w[:-1] += 0.5 * seg
        w[1:] += 0.5 * seg
    return float(np.sum(w * vals) / np.sum(w)), float(np.ptp(vals)), float(np.sum(seg)), vals


def semilinear_violation(psi: ScalarField2D, levels: Sequence[float],
                         critical_fraction: float = 1e-3) -> ViolationReport:
    """Compare arclength-averaged vorticity across the components of each level."""
    g = psi.grid
    omega = laplacian(psi)
    ev = interpolant(omega)
    probes, scatter = [], []
    for lev in levels:
        comps = extract_level_components(psi, float(lev), critical_fraction=critical_fraction)
        # open pieces touching a Dirichlet boundary are dropped; they are not level components
        comps = [c for c in comps if c.closed and len(c.points) >= 8]
        means, spreads, lengths = [], [], []
        for c in comps:
            m, s, L, vals = _component_average(ev, c, g)
            means.append(m)
            spreads.append(s)
            lengths.append(L)
            scatter.append(np.column_stack([np.full(len(vals), lev), vals]))
        gap = float(np.ptp(means)) if len(means) > 1 else 0.0
        probes.append(LevelProbe(float(lev), len(comps), means, spreads, lengths, gap))
    max_gap = max((p.gap for p in probes), default=0.0)
    max_spread = max((max(p.spreads) for p in probes if p.spreads), default=0.0)
    threshold = max(5.0 * max_spread, 10.0 * g.hx * g.hy)
    verdict = "multivalued" if max_gap > threshold else "semilinear"
    sc = np.concatenate(scatter) if scatter else np.zeros((0, 2))
    return ViolationReport([float(v) for v in levels], probes, max_gap, max_spread, threshold,
                           verdict, sc)


# ---------------------------------------------------------------------------
# collinearity and the Arnold ratio

@dataclass
class CollinearityReport:
    max: float
    field: ScalarField2D
    retained: np.ndarray


def collinearity_check(psi: ScalarField2D, grad_fraction: float = 1e-2, floor: float = 1e-12,
                       exclude: Optional[np.ndarray] = None, collar: float = 2.0) -> CollinearityReport:
    """max |grad psi x grad omega| / (|grad psi| |grad omega| + floor) over regular nodes."""
    g = psi.grid
    a = _complex_gradient(psi)
    b = _complex_gradient(laplacian(psi))
    cross = np.abs(a.real * b.imag - a.imag * b.real)
    na, nb = np.abs(a), np.abs(b)
    keep = _retained(g, collar)
    keep &= na > grad_fraction * float(np.max(na[keep]))
    if exclude is not None:
        keep &= ~exclude
    c = np.where(keep, cross / (na * nb + floor), 0.0)
    return CollinearityReport(float(np.max(c)), ScalarField2D(g, c), keep)


@dataclass
class ArnoldReport:
    min: float
    max: float
    ratio_field: ScalarField2D
    retained: np.ndarray
    collinearity: float
    verdict: bool

    def as_dict(self):
        return {"min": self.min, "max": self.max, "collinearity": self.collinearity,
                "arnold": self.verdict}


def arnold_ratio(psi: ScalarField2D, critical_points: Sequence = (), radius: float = 3.0,
                 collinearity_tol: Optional[float] = 0.25, collar: float = 2.0,
                 grad_fraction: float = 1e-2) -> ArnoldReport:
    """Signed ratio (grad psi . grad omega) / |grad psi|^2 away from critical points.

    ``radius`` is in grid spacings.  Raises CollinearityViolation when the
    gradients are too far from parallel for the ratio to mean anything.
    """
    g = psi.grid
    excl = _critical_mask(g, critical_points, radius * g.hx)
    col = collinearity_check(psi, grad_fraction, exclude=excl, collar=collar)
    if collinearity_tol is not None and col.max > collinearity_tol:
        raise CollinearityViolation(f"collinearity defect {col.max:.3g} > {collinearity_tol}")
    a = _complex_gradient(psi)
    b = _complex_gradient(laplacian(psi))
    keep = col.retained
    r = np.where(keep, (a.real * b.real + a.imag * b.imag) / np.where(keep, np.abs(a) ** 2, 1.0), 0.0)
    lo, hi = float(np.min(r[keep])), float(np.max(r[keep]))
    return ArnoldReport(lo, hi, ScalarField2D(g, r), keep, col.max, lo > 0)


def fill_ratio(rep: ArnoldReport) -> np.ndarray:
    """Ratio field extended to every node by the nearest retained value."""
    _, (jj, ii) = ndimage.distance_transform_edt(~rep.retained, return_indices=True)
    return rep.ratio_field.values[jj, ii]


# ---------------------------------------------------------------------------
# Casimir form and linearised dynamics

def _inner(g: Grid2D, a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sum(g.cell_weights() * a * b))


class _Poisson:
    def __init__(self, grid: Grid2D):
        self.grid = grid
        self.problem = EllipticProblem(grid)

    def solve(self, w: np.ndarray) -> np.ndarray:
        g = self.grid
        _, Jw, _ = self.problem.parts()
        x = self.problem.factor().solve(Jw * w[g.interior])
        out = np.zeros(g.shape)
        out[g.interior] = x
        return out

    def norm(self) -> float:
        """Operator norm of -Delta^-1 (reciprocal of the smallest Dirichlet eigenvalue)."""
        return 1.0 / abs(invertibility_probe(self.problem).eigenvalue)


def casimir_form(psi0: ScalarField2D, omega: ScalarField2D, ratio=None, coefficient: float = 0.5,
                 poisson: Optional[_Poisson] = None) -> float:
    """-1/2 <w, Delta^-1 w> + coefficient * int w^2 / r, with r the Arnold ratio.

    ``ratio`` may be a number, an array or None (computed from psi0).
    """
    g = psi0.grid
    w = np.where(g.interior, omega.values, 0.0)
    if not np.any(w):
        return 0.0
    r = _ratio_array(psi0, ratio)
    if np.min(r[g.interior]) <= 0:
        raise ArnoldViolation("Arnold ratio is not positive on the domain")
    P = poisson or _Poisson(g)
    return -0.5 * _inner(g, w, P.solve(w)) + coefficient * _inner(g, w, w / r)


def casimir_bounds(psi0: ScalarField2D, ratio=None, coefficient: float = 0.5,
                   poisson: Optional[_Poisson] = None) -> tuple[float, float]:
    """(c, C) with c |w|^2 <= J(w) <= C |w|^2."""
    g = psi0.grid
    r = _ratio_array(psi0, ratio)[g.interior]
    P = poisson or _Poisson(g)
    return coefficient / float(np.max(r)), coefficient / float(np.min(r)) + 0.5 * P.norm()


def _ratio_array(psi0, ratio) -> np.ndarray:
    g = psi0.grid
    if ratio is None:
        ratio = fill_ratio(arnold_ratio(psi0))
    r = np.broadcast_to(np.asarray(ratio, float), g.shape)
    return np.where(g.interior, r, 1.0)


def _bracket_matrix(psi0: ScalarField2D, index: np.ndarray) -> sp.csr_matrix:
    """Central-difference z-bracket {psi0, .} on interior unknowns (zero outside)."""
    g = psi0.grid
    h = g.hx
    px = _axis_derivative(psi0, 1)
    py = _axis_derivative(psi0, 0)
    jj, ii = np.nonzero(g.interior)
    p = index[jj, ii]
    rows, cols, vals = [], [], []
    for dj, di, coef in ((1, 0, px), (-1, 0, -px), (0, 1, -py), (0, -1, py)):
        q = index[jj + dj, ii + di]
        ok = q >= 0
        rows.append(p[ok])
        cols.append(q[ok])
        vals.append(coef[jj, ii][ok] / (2 * h))
    n = int(g.interior.sum())
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n))


@dataclass
class Trajectory:
    times: np.ndarray
    J: np.ndarray
    norms: np.ndarray
    final: ScalarField2D
    dt: float
    dt_max: float

    @property
    def drift(self) -> float:
        return float(np.max(np.abs(self.J - self.J[0])) / abs(self.J[0])) if self.J[0] else 0.0

    def to_rows(self):
        return [(float(t), float(j), float(n)) for t, j, n in zip(self.times, self.J, self.norms)]


def cfl_limit(psi0: ScalarField2D) -> float:
    """h / max computational speed of the base flow."""
    g = psi0.grid
    gz = _axis_derivative(psi0, 1) + 1j * _axis_derivative(psi0, 0)
    sp_ = np.abs(gz)
    if g.dforward is not None:
        sp_ = sp_ / g.conformal_factor()
    return g.hx / float(np.max(sp_[g.interior]))


def evolve_linearized(psi0: ScalarField2D, omega0: ScalarField2D, t_end: float, dt: float,
                      ratio=None, coefficient: float = 0.5, sample_every: int = 1) -> Trajectory:
    """RK4 for d w/dt = -{psi0, w - r Delta^-1 w} in skew-symmetric form.

    The bracket matrix B is replaced by the skew part of B diag(r), which is
    a consistent discretisation because {psi0, r} = 0; the discrete Casimir
    form with coefficient 1/2 is then an exact invariant of the semi-discrete
    system.
    """
    g = psi0.grid
    if g.periodic:
        raise NotImplementedError("linearised evolution is implemented on Dirichlet grids")
    dt_max = cfl_limit(psi0)
    if dt > dt_max:
        raise CFLViolation(f"dt={dt:.3g} exceeds the stability bound {dt_max:.3g}")
    r = _ratio_array(psi0, ratio)
    if np.min(r[g.interior]) <= 0:
        raise ArnoldViolation("Arnold ratio is not positive on the domain")
    P = _Poisson(g)
    _, Jw, index = P.problem.parts()
    rv = r[g.interior]
    B = _bracket_matrix(psi0, index)
    BR = B @ sp.diags(rv)
    A = (0.5 * (BR - BR.T)).tocsr()
    inside = g.interior

    def rhs(w):
        full = np.zeros(g.shape)
        full[inside] = w
        psi = P.solve(full)[inside]
        dJ = w / rv - psi
        return -(A @ dJ) / Jw

    def J_of(w):
        full = np.zeros(g.shape)
        full[inside] = w
        return casimir_form(psi0, ScalarField2D(g, full), r, coefficient, P)

    w = np.where(inside, omega0.values, 0.0)[inside]
    nsteps = int(round(t_end / dt))
    times, Js, norms = [0.0], [J_of(w)], [np.sqrt(np.sum(Jw * w * w) * g.hx * g.hy)]
    for k in range(1, nsteps + 1):
        k1 = rhs(w)
        k2 = rhs(w + 0.5 * dt * k1)
        k3 = rhs(w + 0.5 * dt * k2)
        k4 = rhs(w + dt * k3)
        w = w + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if k % sample_every == 0 or k == nsteps:
            times.append(k * dt)
            Js.append(J_of(w))
            norms.append(np.sqrt(np.sum(Jw * w * w) * g.hx * g.hy))
    full = np.zeros(g.shape)
    full[inside] = w
    return Trajectory(np.array(times), np.array(Js), np.array(norms), ScalarField2D(g, full, 0.0),
                      dt, dt_max)


# ---------------------------------------------------------------------------
# torus symmetry and the Hardy-type ratio

def _reflection_indices(g: Grid2D):
    if not g.periodic or g.nx != g.ny:
        raise AsymmetricGrid("diagonal reflections need a square torus grid")
    n = g.nx
    neg = np.mod(-np.arange(n), n)
    for ax in (g.x, g.y):
        if not np.allclose(np.mod(ax + ax[neg] + 1e-9, 2 * np.pi), 1e-9):
            raise AsymmetricGrid("grid nodes are not symmetric under x -> -x")
    return neg


def reflect(f: np.ndarray, g: Grid2D, kind: str) -> np.ndarray:
    """f composed with a reflection: 'diag' (y, x), 'anti' (-y, -x), 'x' (-x, y), 'y' (x, -y), 'point'."""
    neg = _reflection_indices(g)
    if kind == "diag":
        return f.T
    if kind == "anti":
        return f[neg][:, neg].T
    if kind == "x":
        return f[:, neg]
    if kind == "y":
        return f[neg, :]
    if kind == "point":
        return f[neg][:, neg]
    raise ValueError(kind)


@dataclass
class SymmetrySplit:
    ee: ScalarField2D
    oo: ScalarField2D
    norms: dict


def symmetry_split(psi: ScalarField2D) -> SymmetrySplit:
    """Even part under both diagonal reflections, and the remainder."""
    g = psi.grid
    v = psi.values
    ee = 0.25 * (v + reflect(v, g, "diag") + reflect(v, g, "anti") + reflect(v, g, "point"))
    oo = v - ee
    norms = {"ee": float(np.max(np.abs(ee))), "oo": float(np.max(np.abs(oo))),
             "reconstruction": float(np.max(np.abs(ee + oo - v)))}
    return SymmetrySplit(ScalarField2D(g, ee), ScalarField2D(g, oo), norms)


def symmetry_defects(psi: ScalarField2D) -> dict:
    """Max-norm failure of oddness in x and y and of evenness across both diagonals."""
    g = psi.grid
    v = psi.values
    return {"odd_x": float(np.max(np.abs(v + reflect(v, g, "x")))),
            "odd_y": float(np.max(np.abs(v + reflect(v, g, "y")))),
            "even_diag": float(np.max(np.abs(v - reflect(v, g, "diag")))),
            "even_anti": float(np.max(np.abs(v - reflect(v, g, "anti"))))}


@dataclass
class PeriodTable:
    levels: np.ndarray
    periods: np.ndarray

    def __call__(self, h):
        return np.interp(np.abs(h), self.levels, self.periods)


def cell_period_table(H: ScalarField2D, lo: float = 0.02, hi: float = 0.98, n_levels: int = 64,
                      n_angle: int = 4096, center=(np.pi / 2, np.pi / 2)) -> PeriodTable:
    """Orbit periods against level on the cell around ``center`` (torus cellular flows)."""
    from scipy.optimize import brentq

    from .transport import _Flow, regular_tube

    fl = _Flow(H)
    mid = 0.5 * (lo + hi)
    cx, cy = center
    s = np.sign(float(fl.value(cx, cy)))
    x = brentq(lambda t: s * float(fl.value(cx + t, cy)) - mid, 1e-9, np.pi / 2 - 1e-9)
    tube = regular_tube(H, (cx + x, cy), 0.5 * (hi - lo), n_levels=n_levels, center=center,
                        n_angle=n_angle, flow=fl)
    T = tube.integrate()["period"]
    lv = s * tube.levels
    order = np.argsort(lv)
    return PeriodTable(lv[order], T[order])


@dataclass
class HardyReport:
    ratio: float
    numerator: float
    denominator: float
    excluded_measure: float
    vacuous: bool


def hardy_check(H: ScalarField2D, f: ScalarField2D, period_table: Callable,
                exclusion: float = 3.0, parity_tol: float = 1e-10) -> HardyReport:
    """int f^2 / T^2 over int |{H, f}|^2 on nodes away from the separatrices.

    f must be odd under (x, y) -> (-x, -y) and odd across y = x.
    """
    g = H.grid
    v = f.values
    scale = max(float(np.max(np.abs(v))), 1e-300)
    if np.max(np.abs(v + reflect(v, g, "point"))) > parity_tol * scale or \
       np.max(np.abs(v + reflect(v, g, "diag"))) > parity_tol * scale:
        raise SymmetryViolation("test function lacks the required parity")
    a = _complex_gradient(H)
    dist = np.abs(H.values) / np.maximum(np.abs(a), 1e-300)
    keep = dist > exclusion * g.hx
    w = g.hx * g.hy
    excluded = float(np.sum(~keep) * w)
    if not np.any(v):
        return HardyReport(0.0, 0.0, 0.0, excluded, True)
    T = period_table(H.values)
    num = float(np.sum(np.where(keep, v * v / T**2, 0.0)) * w)
    den = float(np.sum(np.where(keep, bracket(H, f).values ** 2, 0.0)) * w)
    return HardyReport(num / den if den > 0 else np.inf, num, den, excluded, False)


def log_fit(levels: np.ndarray, periods: np.ndarray) -> tuple[float, float]:
    """Least-squares a, b in T = a + b |log |level||."""
    A = np.column_stack([np.ones(len(levels)), np.abs(np.log(np.abs(levels)))])
    (a, b), *_ = np.linalg.lstsq(A, np.asarray(periods, float), rcond=None)
    return float(a), float(b)
