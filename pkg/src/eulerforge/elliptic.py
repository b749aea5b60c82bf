"""Linear elliptic solves on the mapped disk and on the torus.

Dirichlet problems are pulled back to the computational unit disk, where
the physical operator Delta_w - V becomes (A - J V)/J with A the symmetric
cut-cell Laplacian of Gibou et al. (ghost values by linear extrapolation
to the circle) and J = |f'|^2.  Symmetry of A makes Delta_w self-adjoint in
the physical (J-weighted) inner product.

Torus problems are solved in Fourier space.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import GridError, IterationStall, SingularOperator, SolverBreakdown
from .field_core import Grid2D, ScalarField2D, wavenumbers

log = logging.getLogger(__name__)

KERNEL_MODES = ((1, 1), (1, -1), (-1, 1), (-1, -1))


def disk_laplacian_matrix(grid: Grid2D) -> tuple[sp.csr_matrix, np.ndarray]:
    """Symmetric Laplacian in computational coordinates on interior nodes.

    Returns (A, index) where ``index`` maps grid nodes to unknowns (-1 if
    not an unknown).  Homogeneous Dirichlet data is built in.
    """
    if grid.arms is None:
        raise GridError("Dirichlet assembly needs a disk grid")
    inside = grid.interior
    index = -np.ones(grid.shape, dtype=int)
    index[inside] = np.arange(int(inside.sum()))
    jj, ii = np.nonzero(inside)
    p = index[jj, ii]
    h = grid.hx
    diag = np.zeros(len(p))
    rows, cols, vals = [p], [p], []
    for name, dj, di in (("E", 0, 1), ("W", 0, -1), ("N", 1, 0), ("S", -1, 0)):
        theta = grid.arms[name][jj, ii]
        diag -= 1.0 / (theta * h * h)
        nb = theta >= 1.0
        rows.append(p[nb])
        cols.append(index[jj[nb] + dj, ii[nb] + di])
        vals.append(np.full(int(nb.sum()), 1.0 / (h * h)))
    vals.insert(0, diag)
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(len(p), len(p)))
    return A, index


@dataclass(eq=False)
class EllipticProblem:
    grid: Grid2D
    potential: Union[None, float, np.ndarray, ScalarField2D] = None
    bc: str = "dirichlet"
    kernel_policy: str = "project"
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.grid.periodic:
            self.bc = "periodic"
        elif self.bc != "dirichlet":
            raise GridError("only homogeneous Dirichlet data on bounded grids")
        if isinstance(self.potential, ScalarField2D):
            if not self.potential.grid.same_as(self.grid):
                raise GridError("potential lives on another grid")

    def potential_array(self) -> np.ndarray:
        V = self.potential
        if V is None:
            return np.zeros(self.grid.shape)
        if isinstance(V, ScalarField2D):
            return np.array(V.values)
        return np.broadcast_to(np.asarray(V, float), self.grid.shape).copy()

    def potential_scale(self) -> float:
        V = self.potential_array()
        return float(np.max(np.abs(V[self.grid.interior]))) if V.size else 0.0

    # discrete pieces ----------------------------------------------------
    def parts(self):
        """(A, weights J at unknowns, index) for a Dirichlet problem."""
        if "A" not in self._cache:
            A, index = disk_laplacian_matrix(self.grid)
            Jw = self.grid.conformal_factor()[self.grid.interior]
            self._cache.update(A=A, index=index, J=Jw)
        return self._cache["A"], self._cache["J"], self._cache["index"]

    def operator(self) -> sp.csr_matrix:
        """Matrix of J (Delta_w - V) on unknowns (symmetric)."""
        if "K" not in self._cache:
            A, Jw, _ = self.parts()
            V = self.potential_array()[self.grid.interior]
            self._cache["K"] = (A - sp.diags(Jw * V)).tocsc()
        return self._cache["K"]

    def factor(self):
        if "lu" not in self._cache:
            self._cache["lu"] = spla.splu(self.operator())
        return self._cache["lu"]

    def apply(self, u: ScalarField2D) -> ScalarField2D:
        """(Delta - V) u with the same discretisation the solver inverts."""
        g = self.grid
        if g.periodic:
            KX, KY = wavenumbers(g)
            lap = np.real(np.fft.ifft2(-(KX**2 + KY**2) * np.fft.fft2(u.values)))
            return ScalarField2D(g, lap - self.potential_array() * u.values)
        _, Jw, index = self.parts()
        out = np.zeros(g.shape)
        out[g.interior] = (self.operator() @ u.values[g.interior]) / Jw
        return ScalarField2D(g, out)


def solve_dirichlet(problem: EllipticProblem, rhs: Union[ScalarField2D, np.ndarray],
                    rtol: float = 1e-10) -> ScalarField2D:
    """Solve (Delta - V) u = rhs with u = 0 on the boundary."""
    g = problem.grid
    if g.periodic:
        raise GridError("use torus_helmholtz_solve on periodic grids")
    r = rhs.values if isinstance(rhs, ScalarField2D) else np.asarray(rhs, float)
    if not np.all(np.isfinite(r[g.interior])):
        raise SolverBreakdown("non-finite right-hand side")
    _, Jw, _ = problem.parts()
    b = Jw * r[g.interior]
    if not np.any(b):
        return ScalarField2D(g, np.zeros(g.shape), 0.0)
    try:
        x = problem.factor().solve(b)
    except RuntimeError as exc:  # singular factor
        raise SingularOperator(str(exc)) from exc
    res = np.linalg.norm(problem.operator() @ x - b) / np.linalg.norm(b)
    if not np.isfinite(res) or res > rtol:
        raise SolverBreakdown(f"relative residual {res:.2e} exceeds {rtol:.0e}")
    log.debug(json.dumps({"solver": "splu", "unknowns": int(x.size), "residual": float(res)}))
    out = np.zeros(g.shape)
    out[g.interior] = x
    return ScalarField2D(g, out, 0.0)


@dataclass
class ProbeResult:
    eigenvalue: float
    invertible: bool
    floor: float
    iterations: int
    near_kernel_dim: int = 0

    def as_dict(self):
        return dict(self.__dict__)


def invertibility_probe(problem: EllipticProblem, floor_factor: float = 1e-6,
                        tol: float = 1e-10, max_iter: int = 500, seed: int = 0) -> ProbeResult:
    """Eigenvalue of Delta - V nearest zero, by inverse power iteration."""
    floor = floor_factor * max(problem.potential_scale(), 1.0)
    g = problem.grid
    if g.periodic:
        KX, KY = wavenumbers(g)
        sym = -(KX**2 + KY**2) - problem.potential_array().mean()
        k = np.argmin(np.abs(sym))
        lam = float(sym.flat[k])
        dim = int(np.sum(np.abs(sym) <= floor))
        return ProbeResult(lam, dim == 0, floor, 0, dim)
    K = problem.operator()
    _, Jw, _ = problem.parts()
    lu = problem.factor()
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(K.shape[0])
    lam_old = np.inf
    for it in range(1, max_iter + 1):
        y = lu.solve(Jw * x)
        y /= np.sqrt(np.dot(y, Jw * y))
        lam = float(np.dot(y, K @ y))  # Rayleigh quotient in the J inner product
        x = y
        if abs(lam - lam_old) <= tol * max(abs(lam), 1.0):
            return ProbeResult(lam, abs(lam) > floor, floor, it)
        lam_old = lam
    raise IterationStall(f"inverse iteration did not settle in {max_iter} steps")


def _kernel_mask(g: Grid2D) -> np.ndarray:
    KX, KY = wavenumbers(g)
    return (KX**2 + KY**2) == 2


def kernel_mode_count(g: Grid2D) -> int:
    """Number of Fourier modes with symbol |k|^2 = 2 on the torus grid."""
    return int(_kernel_mask(g).sum())


def kernel_projection(f: ScalarField2D) -> ScalarField2D:
    """L2 projection onto span{sin x sin y, sin x cos y, cos x sin y, cos x cos y}."""
    g = f.grid
    if not g.periodic:
        raise GridError("kernel projection is defined on the torus")
    F = np.fft.fft2(f.values)
    return ScalarField2D(g, np.real(np.fft.ifft2(np.where(_kernel_mask(g), F, 0.0))))


def kernel_coefficients(f: ScalarField2D) -> dict:
    """Discrete inner products of f with the four normalised kernel modes."""
    g = f.grid
    X, Y = g.mesh()
    basis = {"sin x sin y": np.sin(X) * np.sin(Y), "sin x cos y": np.sin(X) * np.cos(Y),
             "cos x sin y": np.cos(X) * np.sin(Y), "cos x cos y": np.cos(X) * np.cos(Y)}
    return {k: float(np.sum(f.values * b) / np.sum(b * b)) for k, b in basis.items()}


def torus_helmholtz_solve(rhs: ScalarField2D, shift: float = 2.0) -> ScalarField2D:
    """u with (Delta + 2) u = P_perp rhs and u orthogonal to the kernel."""
    g = rhs.grid
    if not g.periodic:
        raise GridError("torus_helmholtz_solve needs a torus grid")
    KX, KY = wavenumbers(g)
    sym = -(KX**2 + KY**2) + shift
    F = np.fft.fft2(rhs.values)
    kern = np.abs(sym) < 1e-12
    U = np.where(kern, 0.0, F / np.where(kern, 1.0, sym))
    return ScalarField2D(g, np.real(np.fft.ifft2(U)))


def torus_helmholtz_apply(u: ScalarField2D, shift: float = 2.0) -> ScalarField2D:
    g = u.grid
    KX, KY = wavenumbers(g)
    return ScalarField2D(g, np.real(np.fft.ifft2((-(KX**2 + KY**2) + shift) * np.fft.fft2(u.values))))
