"""Neumann oval geometry, the constant-vorticity base flow and its Morse data."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .elliptic import EllipticProblem, solve_dirichlet
from .errors import NewtonDivergence, NonContraction, OutsideDomain, PoleProximity, ValidationError
from .field_core import Grid2D, ScalarField2D, interpolant

SQRT2_MINUS_1 = np.sqrt(2.0) - 1.0


def _check_q(q):
    if not (0.0 <= q < 1.0):
        raise ValidationError(f"q must lie in [0, 1), got {q}")


def oval_forward(q: float, z):
    z = np.asarray(z, dtype=complex)
    d = 1.0 - q * z * z
    if np.any(np.abs(d) < 1e-9):
        raise PoleProximity("|1 - q z^2| < 1e-9")
    out = z / d
    return out if out.ndim else complex(out)


def oval_derivative(q: float, z):
    z = np.asarray(z, dtype=complex)
    return (1.0 + q * z * z) / (1.0 - q * z * z) ** 2


def oval_inverse(q: float, w, tol: float = 1e-9):
    w = np.asarray(w, dtype=complex)
    # rationalised principal root: the q -> 0 branch z ~ w without cancellation
    z = 2.0 * w / (1.0 + np.sqrt(1.0 + 4.0 * q * w * w))
    back = z / (1.0 - q * z * z)
    if np.any(np.abs(back - w) > tol * np.maximum(1.0, np.abs(w))) or np.any(np.abs(z) > 1 + 1e-9):
        raise OutsideDomain("round trip through the oval map failed")
    return z if z.ndim else complex(z)


@dataclass
class ConformalOvalMap:
    q: float
    n_boundary: int = 2048
    boundary: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        _check_q(self.q)
        t = 2 * np.pi * np.arange(self.n_boundary) / self.n_boundary
        w = oval_forward(self.q, np.exp(1j * t))
        self.boundary = np.column_stack([w.real, w.imag])

    def forward(self, z):
        return oval_forward(self.q, z)

    def inverse(self, w):
        return oval_inverse(self.q, w)

    def derivative(self, z):
        return oval_derivative(self.q, z)

    def grid(self, n: int) -> Grid2D:
        return oval_grid(self.q, n)


def oval_grid(q: float, n: int) -> Grid2D:
    """Masked disk grid with n nodes across the diameter, mapped by f_q."""
    _check_q(q)
    return Grid2D.disk(n, lambda z: z / (1.0 - q * z * z),
                       lambda z: (1.0 + q * z * z) / (1.0 - q * z * z) ** 2, {"q": q},
                       backward=lambda w: oval_inverse(q, w))


@dataclass
class UnivalenceReport:
    q: float
    min_re_criterion: float
    min_boundary_modulus: float
    samples: int

    @property
    def ok(self) -> bool:
        return self.min_re_criterion > 0 and self.min_boundary_modulus >= 1 / (1 + self.q) - 1e-12


def check_univalence_convexity(q: float, samples: int = 4096) -> UnivalenceReport:
    """Sample Re[f'(z)(1-z^2)] on the open disk and |f| on the circle."""
    _check_q(q)
    if samples < 1000:
        raise ValidationError("need at least 1e3 samples")
    m = int(np.ceil(np.sqrt(samples)))
    rho = (np.arange(m) + 0.5) / m  # open disk, avoids the points +-1
    th = 2 * np.pi * np.arange(m) / m
    R, T = np.meshgrid(rho, th)
    z = R * np.exp(1j * T)
    crit = np.real(oval_derivative(q, z) * (1.0 - z * z))
    tb = 2 * np.pi * np.arange(4 * m) / (4 * m)
    mod = np.abs(oval_forward(q, np.exp(1j * tb)))
    return UnivalenceReport(q, float(crit.min()), float(mod.min()), int(z.size))


def psi_q_raw(q: float, w):
    """Unnormalised closed form y^2/2 + Re Phi_q(w)."""
    w = np.asarray(w, dtype=complex)
    phi = w * w / 4.0 - (np.sqrt(1.0 + 4.0 * q * w * w) + 1.0) / (4.0 * (1.0 - q * q))
    return w.imag**2 / 2.0 + phi.real


def boundary_trace(q: float, n: int = 4096) -> tuple[float, float]:
    """Mean and spread of the raw closed form along the boundary."""
    t = 2 * np.pi * np.arange(n) / n
    v = psi_q_raw(q, oval_forward(q, np.exp(1j * t)))
    return float(v.mean()), float(v.max() - v.min())


def psi_q_closed_form(q: float, grid: Grid2D) -> ScalarField2D:
    _check_q(q)
    c, _ = boundary_trace(q)
    z = grid.complex_nodes()
    inside = grid.interior
    vals = np.zeros(grid.shape)
    vals[inside] = psi_q_raw(q, oval_forward(q, z[inside])) - c
    return ScalarField2D(grid, vals, 0.0)


def psi_q_function(q: float):
    """Normalised closed form as a callable of physical (x, y)."""
    c, _ = boundary_trace(q)
    return lambda x, y: psi_q_raw(q, np.asarray(x) + 1j * np.asarray(y)) - c


def n_q(q: float) -> Optional[float]:
    rad = (q * q + 2 * q - 1) / (q + 2 * q * q - q**3)
    return float(np.sqrt(rad)) if rad > 0 else None


def critical_points_exact(q: float) -> list[tuple[float, float]]:
    """Critical points of the closed form in the physical plane.

    n_q is the abscissa in the disk variable z, so the physical points are
    (+-f_q(n_q), 0).
    """
    _check_q(q)
    nq = n_q(q) if q > 0 else None
    if nq is None or q <= SQRT2_MINUS_1:
        return [(0.0, 0.0)]
    xp = float(np.real(oval_forward(q, nq)))
    return [(0.0, 0.0), (xp, 0.0), (-xp, 0.0)]


def origin_hessian_exact(q: float) -> np.ndarray:
    """Physical Hessian of the closed form at the origin (diagonal)."""
    a = 0.5 - q / (1.0 - q * q)
    return np.diag([a, 1.0 - a])


# ---------------------------------------------------------------------------
# Morse classification

@dataclass
class CriticalPoint:
    location: tuple[float, float]  # physical
    grid_location: tuple[float, float]  # computational
    kind: str
    eigenvalues: tuple[float, float]
    value: float

    @property
    def signs(self) -> tuple[str, str]:
        return tuple("+" if e > 0 else "-" for e in self.eigenvalues)


@dataclass
class MorseReport:
    critical_points: list
    is_morse: bool
    unresolved: list = field(default_factory=list)

    def as_dict(self):
        return {"is_morse": self.is_morse,
                "critical_points": [
                    {"location": list(c.location), "kind": c.kind,
                     "eigenvalues": list(c.eigenvalues), "signs": list(c.signs),
                     "value": c.value} for c in self.critical_points],
                "unresolved": [list(u) for u in self.unresolved]}

    def of_kind(self, kind):
        return [c for c in self.critical_points if c.kind == kind]


def morse_classify(f: ScalarField2D, newton_tol: float = 1e-10, max_iter: int = 50,
                   det_floor: float = 1e-6, margin: int = 3) -> MorseReport:
    """Locate critical points by Newton on the bicubic interpolant of grad f."""
    g = f.grid
    spl = interpolant(f)
    X, Y = g.mesh()
    gx = spl(X, Y, dx=1)
    gy = spl(X, Y, dy=1)
    gm = np.hypot(gx, gy)
    h = max(g.hx, g.hy)
    usable = g.interior & (g.boundary_distance() > margin * h)
    masked = np.where(usable, gm, np.inf)
    seeds = (masked == ndimage.minimum_filter(masked, size=3, mode="wrap" if g.periodic else "nearest"))
    seeds &= usable & (gm < 0.25 * np.max(gm[usable]))
    c2 = max(np.max(np.abs(spl(X, Y, dx=2)[usable])), np.max(np.abs(spl(X, Y, dy=2)[usable])),
             np.max(np.abs(spl(X, Y, dx=1, dy=1)[usable])), 1e-300)
    found, unresolved = [], []
    for j, i in zip(*np.nonzero(seeds)):
        p = np.array([X[j, i], Y[j, i]])
        ok = False
        for _ in range(max_iter):
            grad = np.array([spl(p[0], p[1], dx=1), spl(p[0], p[1], dy=1)])
            H = np.array([[spl(p[0], p[1], dx=2), spl(p[0], p[1], dx=1, dy=1)],
                          [spl(p[0], p[1], dx=1, dy=1), spl(p[0], p[1], dy=2)]])
            try:
                step = np.linalg.solve(H, grad)
            except np.linalg.LinAlgError:
                break
            p = p - step
            if np.linalg.norm(step) < newton_tol:
                ok = True
                break
        inside = (np.hypot(*p) < 1.0) if g.params.get("shape") == "disk" else True
        if not ok or not inside or np.linalg.norm(p - [X[j, i], Y[j, i]]) > 2 * h:
            unresolved.append((float(X[j, i]), float(Y[j, i])))
            continue
        if any(np.linalg.norm(p - q_) < 0.5 * h for q_, _ in found):
            continue
        found.append((p, H))
    cps = []
    is_morse = True
    for p, H in found:
        jac = float(g.conformal_factor(p[0] + 1j * p[1]))
        ev = np.linalg.eigvalsh(H) / jac
        if abs(np.linalg.det(H)) <= det_floor * c2 * c2:
            kind = "degenerate"
            is_morse = False
        elif ev[0] > 0:
            kind = "min"
        elif ev[1] < 0:
            kind = "max"
        else:
            kind = "saddle"
        wx, wy = g.to_physical(p[0], p[1])
        cps.append(CriticalPoint((float(wx), float(wy)), (float(p[0]), float(p[1])), kind,
                                 (float(ev[0]), float(ev[1])), float(spl(p[0], p[1]))))
    cps.sort(key=lambda c: (c.location[0], c.location[1]))
    if unresolved and not cps:
        raise NewtonDivergence(f"no seed converged ({len(unresolved)} tried)")
    return MorseReport(cps, is_morse and bool(cps), unresolved)


# ---------------------------------------------------------------------------
# semilinear base state

@dataclass
class SemilinearResult:
    psi: ScalarField2D
    psi_q: ScalarField2D
    iterations: int
    ratios: list
    bound: float


def solve_semilinear_lambda(q: float, lam: float, tol: float = 1e-12, n: int = 128,
                            grid: Optional[Grid2D] = None, max_iter: int = 200,
                            base: str = "discrete") -> SemilinearResult:
    """Fixed point of psi~ = lam L^-1 psi~ + lam L^-1 psi_q, L the Dirichlet Laplacian.

    ``base='discrete'`` uses the discrete solve of Delta psi_q = 1, so the
    returned field satisfies the discrete equation exactly at convergence.
    """
    _check_q(q)
    if lam < 0:
        raise ValidationError("lambda must be non-negative")
    grid = grid or oval_grid(q, n)
    prob = EllipticProblem(grid)
    if base == "discrete":
        psi_q = solve_dirichlet(prob, np.ones(grid.shape))
    else:
        psi_q = psi_q_closed_form(q, grid)
    if lam == 0:
        return SemilinearResult(psi_q, psi_q, 0, [], 0.0)
    forcing = lam * solve_dirichlet(prob, psi_q).values
    tilde = np.zeros(grid.shape)
    ratios, prev = [], None
    for it in range(1, max_iter + 1):
        new = lam * solve_dirichlet(prob, tilde).values + forcing
        d = np.max(np.abs(new - tilde))
        tilde = new
        if prev is not None and prev > 0:
            r = d / prev
            ratios.append(r)
            if r >= 1.0 and d > tol:
                raise NonContraction(f"successive-difference ratio {r:.3f} >= 1 at lambda={lam}")
        prev = d
        if d <= tol:
            break
    else:
        raise NonContraction(f"no convergence in {max_iter} iterations")
    psi = ScalarField2D(grid, psi_q.values + tilde, 0.0)
    return SemilinearResult(psi, psi_q, it, ratios, float(np.max(np.abs(tilde))))
