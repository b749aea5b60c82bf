"""Grids, fields, finite-difference operators and level-set contouring.

Three grid families are supported:

* ``torus``: periodic square [-pi, pi)^2 with Fourier differentiation;
* ``cartesian-masked``: a uniform box, optionally masked to the unit disk.
  Nodes outside the disk are exterior; the first exterior ring is the
  boundary set and carries the boundary value of Dirichlet fields;
* ``oval-mapped``: a masked unit-disk grid in computational coordinates z
  together with a holomorphic map w = f(z).  Operators return physical
  (w-plane) quantities through the conformal factor |f'|^2.

Near a curved boundary every interior node knows the fractional distance
``theta`` (in units of h) along each axis arm to the circle.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import EmptyLevel, GridError, NearCriticalLevel, ValidationError

EXTERIOR, INTERIOR, BOUNDARY = 0, 1, 2
KINDS = ("disk-polar", "oval-mapped", "torus", "cartesian-masked")
_THETA_FLOOR = 1e-6


@dataclass(frozen=True, eq=False)
class Grid2D:
    kind: str
    x: np.ndarray
    y: np.ndarray
    mask: np.ndarray
    params: dict = field(default_factory=dict)
    forward: Optional[Callable] = None
    dforward: Optional[Callable] = None
    arms: Optional[dict] = None
    backward: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GridError(f"unknown grid kind {self.kind!r}")
        if self.kind == "disk-polar":
            raise GridError("polar disk grids are not provided; use a masked disk")
        if self.nx < 16 or self.ny < 16:
            raise GridError(f"grid too small: {self.nx}x{self.ny} (need >= 16)")
        if self.kind == "torus":
            if np.any(self.mask == BOUNDARY):
                raise GridError("torus grids have no boundary nodes")
        elif not np.any(self.mask == BOUNDARY):
            raise GridError("Dirichlet grids need a nonempty boundary set")

    # constructors -------------------------------------------------------
    @classmethod
    def torus(cls, nx: int, ny: Optional[int] = None) -> "Grid2D":
        ny = nx if ny is None else ny
        x = -np.pi + 2 * np.pi * np.arange(nx) / nx
        y = -np.pi + 2 * np.pi * np.arange(ny) / ny
        mask = np.full((ny, nx), INTERIOR, dtype=np.int8)
        return cls("torus", x, y, mask, {"period": 2 * np.pi})

    @classmethod
    def box(cls, n: int, lo: float = -1.0, hi: float = 1.0) -> "Grid2D":
        x = np.linspace(lo, hi, n)
        mask = np.full((n, n), INTERIOR, dtype=np.int8)
        mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = BOUNDARY
        return cls("cartesian-masked", x, x.copy(), mask, {"lo": lo, "hi": hi, "shape": "box"})

    @classmethod
    def disk(cls, n: int, forward=None, dforward=None, params=None, backward=None) -> "Grid2D":
        """Unit-disk grid; with ``forward`` given it becomes oval-mapped."""
        # two spare nodes each side so the boundary ring fits in the array
        h = 2.0 / (n - 1)
        x = -1.0 + h * np.arange(-2, n + 2)
        X, Y = np.meshgrid(x, x)
        r = np.hypot(X, Y)
        inside = r < 1.0 - 1e-12
        mask = np.where(inside, INTERIOR, EXTERIOR).astype(np.int8)
        ring = np.zeros_like(inside)
        ring[1:, :] |= inside[:-1, :]
        ring[:-1, :] |= inside[1:, :]
        ring[:, 1:] |= inside[:, :-1]
        ring[:, :-1] |= inside[:, 1:]
        mask[ring & ~inside] = BOUNDARY
        arms = _disk_arms(X, Y, inside, h)
        kind = "cartesian-masked" if forward is None else "oval-mapped"
        p = {"shape": "disk", "n": n}
        p.update(params or {})
        return cls(kind, x, x.copy(), mask, p, forward, dforward, arms, backward)

    # geometry -----------------------------------------------------------
    @property
    def nx(self) -> int:
        return len(self.x)

    @property
    def ny(self) -> int:
        return len(self.y)

    @property
    def shape(self):
        return (self.ny, self.nx)

    @property
    def hx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def hy(self) -> float:
        return float(self.y[1] - self.y[0])

    @property
    def spacing(self):
        return (self.hx, self.hy)

    @property
    def periodic(self) -> bool:
        return self.kind == "torus"

    @property
    def interior(self) -> np.ndarray:
        return self.mask == INTERIOR

    def mesh(self):
        return np.meshgrid(self.x, self.y)

    def complex_nodes(self) -> np.ndarray:
        X, Y = self.mesh()
        return X + 1j * Y

    def to_physical(self, x, y):
        """Map computational coordinates to the physical plane."""
        if self.forward is None:
            return np.asarray(x, float), np.asarray(y, float)
        w = self.forward(np.asarray(x) + 1j * np.asarray(y))
        return w.real, w.imag

    def to_computational(self, px, py):
        """Inverse of ``to_physical``."""
        if self.forward is None:
            return np.asarray(px, float), np.asarray(py, float)
        z = self.backward(np.asarray(px) + 1j * np.asarray(py))
        return np.real(z), np.imag(z)

    def physical_mesh(self):
        X, Y = self.mesh()
        return self.to_physical(X, Y)

    def fprime(self, z=None):
        if z is None:
            z = self.complex_nodes()
        if self.dforward is None:
            return np.ones(np.shape(z), dtype=complex)
        return self.dforward(z)

    def conformal_factor(self, z=None) -> np.ndarray:
        """|f'|^2 at nodes (ones for unmapped grids)."""
        return np.abs(self.fprime(z)) ** 2

    def cell_weights(self) -> np.ndarray:
        """Physical area weight per interior node."""
        w = self.hx * self.hy * self.conformal_factor()
        return np.where(self.interior, w, 0.0)

    def boundary_distance(self) -> np.ndarray:
        """Distance (computational units) of each node to the boundary."""
        if self.periodic:
            return np.full(self.shape, np.inf)
        X, Y = self.mesh()
        if self.params.get("shape") == "disk":
            return 1.0 - np.hypot(X, Y)
        lo, hi = self.params["lo"], self.params["hi"]
        return np.minimum.reduce([X - lo, hi - X, Y - lo, hi - Y])

    def same_as(self, other: "Grid2D") -> bool:
        return self is other or (
            self.kind == other.kind
            and self.shape == other.shape
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and self.params == other.params
        )

    def header(self) -> dict:
        return {"kind": self.kind, "nx": self.nx, "ny": self.ny,
                "x0": float(self.x[0]), "y0": float(self.y[0]),
                "hx": self.hx, "hy": self.hy,
                "params": {k: v for k, v in self.params.items()}}


def _disk_arms(X, Y, inside, h):
    """Fractional arm lengths to the unit circle for every interior node."""
    arms = {}
    jj, ii = np.nonzero(inside)
    xp, yp = X[jj, ii], Y[jj, ii]
    for name, dj, di in (("E", 0, 1), ("W", 0, -1), ("N", 1, 0), ("S", -1, 0)):
        theta = np.ones(X.shape)
        nb_in = inside[jj + dj, ii + di]
        if di:
            xb = di * np.sqrt(np.maximum(1.0 - yp**2, 0.0))
            t = np.abs(xb - xp) / h
        else:
            yb = dj * np.sqrt(np.maximum(1.0 - xp**2, 0.0))
            t = np.abs(yb - yp) / h
        theta[jj, ii] = np.where(nb_in, 1.0, np.clip(t, _THETA_FLOOR, 1.0))
        arms[name] = theta
    return arms


@dataclass(frozen=True, eq=False)
class ScalarField2D:
    grid: Grid2D
    values: np.ndarray
    boundary_value: Optional[float] = None

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise GridError(f"values shape {v.shape} != grid shape {self.grid.shape}")
        if self.boundary_value is not None and not self.grid.periodic:
            v[self.grid.mask == BOUNDARY] = self.boundary_value
            v[self.grid.mask == EXTERIOR] = self.boundary_value
        if not np.all(np.isfinite(v[self.grid.interior])):
            raise ValidationError("field has non-finite interior values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: Grid2D, fn, boundary_value=None, physical=True):
        X, Y = grid.physical_mesh() if physical else grid.mesh()
        with np.errstate(all="ignore"):
            v = np.asarray(fn(X, Y), dtype=float) * np.ones(grid.shape)
        if not grid.periodic:
            v = np.where(grid.mask == EXTERIOR, 0.0, v)
            if grid.params.get("shape") == "disk" and boundary_value is None:
                v = np.where(grid.interior, v, 0.0)
        return cls(grid, np.nan_to_num(v), boundary_value)

    def with_values(self, values, boundary_value="same"):
        bv = self.boundary_value if boundary_value == "same" else boundary_value
        return ScalarField2D(self.grid, values, bv)

    def interior_values(self):
        return self.values[self.grid.interior]

    def __add__(self, other):
        if isinstance(other, ScalarField2D):
            _check_same(self, other)
            bv = None if None in (self.boundary_value, other.boundary_value) \
                else self.boundary_value + other.boundary_value
            return ScalarField2D(self.grid, self.values + other.values, bv)
        return ScalarField2D(self.grid, self.values + other,
                             None if self.boundary_value is None else self.boundary_value + other)

    def __sub__(self, other):
        return self + (-1.0) * other

    def __rmul__(self, c):
        bv = None if self.boundary_value is None else c * self.boundary_value
        return ScalarField2D(self.grid, c * self.values, bv)

    __mul__ = __rmul__

    def __neg__(self):
        return (-1.0) * self

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.interior_values())))

    def l2(self, region: Optional[np.ndarray] = None) -> float:
        w = self.grid.cell_weights()
        if region is not None:
            w = np.where(region, w, 0.0)
        return float(np.sqrt(np.sum(w * self.values**2)))


@dataclass(frozen=True, eq=False)
class VectorField2D:
    grid: Grid2D
    u: np.ndarray
    v: np.ndarray

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)


@dataclass
class LevelComponent:
    level: float
    points: np.ndarray  # (m, 2) physical coordinates, first point not repeated
    closed: bool = True
    grid_points: Optional[np.ndarray] = None  # (m, 2) computational coordinates

    @property
    def enclosed_area(self) -> float:
        x, y = self.points[:, 0], self.points[:, 1]
        return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))

    @property
    def length(self) -> float:
        d = np.diff(np.vstack([self.points, self.points[:1]]), axis=0)
        return float(np.sum(np.hypot(d[:, 0], d[:, 1])))

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)


def _check_same(a: ScalarField2D, b: ScalarField2D):
    if not a.grid.same_as(b.grid):
        raise GridError("fields live on different grids")


# ---------------------------------------------------------------------------
# computational-coordinate derivatives

def _shift(v, dj, di, periodic):
    """Value of the neighbour at offset (dj, di); wraps on the torus."""
    if periodic:
        return np.roll(v, (-dj, -di), axis=(0, 1))
    out = np.zeros_like(v)
    ys = slice(max(dj, 0), v.shape[0] + min(dj, 0))
    yd = slice(max(-dj, 0), v.shape[0] + min(-dj, 0))
    xs = slice(max(di, 0), v.shape[1] + min(di, 0))
    xd = slice(max(-di, 0), v.shape[1] + min(-di, 0))
    out[yd, xd] = v[ys, xs]
    return out


def wavenumbers(g: Grid2D):
    """Integer wavenumber meshes (KX, KY) for a torus grid, FFT ordering."""
    kx = np.fft.fftfreq(g.nx, d=1.0 / g.nx)
    ky = np.fft.fftfreq(g.ny, d=1.0 / g.ny)
    return np.meshgrid(kx, ky)


def _spectral_derivative(v, g: Grid2D, axis: int) -> np.ndarray:
    KX, KY = wavenumbers(g)
    k = KX if axis == 1 else KY
    n = g.nx if axis == 1 else g.ny
    k = np.where(np.abs(k) == n // 2, 0.0, k) if n % 2 == 0 else k
    return np.real(np.fft.ifft2(1j * k * np.fft.fft2(v)))


def _axis_derivative(f: ScalarField2D, axis: int) -> np.ndarray:
    g = f.grid
    v = f.values
    h = g.hx if axis == 1 else g.hy
    step = (0, 1) if axis == 1 else (1, 0)
    if g.periodic:
        return _spectral_derivative(v, g, axis)
    vp = _shift(v, *step, False)
    vm = _shift(v, -step[0], -step[1], False)
    out = (vp - vm) / (2 * h)
    if g.arms is None:
        return np.where(g.mask == EXTERIOR, 0.0, out)
    tp = g.arms["E" if axis == 1 else "N"]
    tm = g.arms["W" if axis == 1 else "S"]
    cut = g.interior & ((tp < 1) | (tm < 1))
    if f.boundary_value is not None:
        b = f.boundary_value
        a = np.where(tp < 1, b, vp)  # value at arm end +
        c = np.where(tm < 1, b, vm)  # value at arm end -
        hp, hm = tp * h, tm * h
        d = (-hp / (hm * (hm + hp)) * c + (hp - hm) / (hm * hp) * v
             + hm / (hp * (hp + hm)) * a)
        out = np.where(cut, d, out)
    else:
        vpp = _shift(v, 2 * step[0], 2 * step[1], False)
        vmm = _shift(v, -2 * step[0], -2 * step[1], False)
        inn = g.interior
        ok_p = _shift(inn.astype(float), *step, False) * _shift(inn.astype(float), 2 * step[0], 2 * step[1], False) > 0
        ok_m = _shift(inn.astype(float), -step[0], -step[1], False) * _shift(inn.astype(float), -2 * step[0], -2 * step[1], False) > 0
        fwd = (-3 * v + 4 * vp - vpp) / (2 * h)
        bwd = (3 * v - 4 * vm + vmm) / (2 * h)
        lin_f = (vp - v) / h
        lin_b = (v - vm) / h
        alt = np.where(tm < 1, np.where(ok_p, fwd, lin_f), np.where(ok_m, bwd, lin_b))
        out = np.where(cut, alt, out)
    return np.where(g.interior, out, 0.0)


def _require_size(g: Grid2D):
    if g.nx < 3 or g.ny < 3:
        raise GridError("grid too small for finite differences")


def _complex_gradient(f: ScalarField2D) -> np.ndarray:
    """Physical gradient as a complex number f_X + i f_Y."""
    _require_size(f.grid)
    gz = _axis_derivative(f, 1) + 1j * _axis_derivative(f, 0)
    if f.grid.dforward is None:
        return gz
    return gz / np.conj(f.grid.fprime())


def gradient(f: ScalarField2D) -> VectorField2D:
    gc = _complex_gradient(f)
    return VectorField2D(f.grid, gc.real, gc.imag)


def perp_gradient(f: ScalarField2D) -> VectorField2D:
    gc = _complex_gradient(f)
    return VectorField2D(f.grid, -gc.imag, gc.real)


def divergence(v: VectorField2D) -> ScalarField2D:
    """Divergence of a physical vector field (central differences)."""
    g = v.grid
    # in computational coords: div_w V = div_z (conj(f') V) / J, with V as complex
    if g.dforward is not None:
        fp = g.fprime()
        vz = np.conj(fp) * (v.u + 1j * v.v)
        # the pulled-back field conj(f') V has components (Re, Im) in z
        du = _axis_derivative(ScalarField2D(g, np.where(g.mask == EXTERIOR, 0, vz.real)), 1)
        dv = _axis_derivative(ScalarField2D(g, np.where(g.mask == EXTERIOR, 0, vz.imag)), 0)
        return ScalarField2D(g, (du + dv) / g.conformal_factor())
    du = _axis_derivative(ScalarField2D(g, v.u), 1)
    dv = _axis_derivative(ScalarField2D(g, v.v), 0)
    return ScalarField2D(g, du + dv)


def laplacian(f: ScalarField2D) -> ScalarField2D:
    """Five-point Laplacian; Shortley-Weller arms at a curved boundary."""
    g = f.grid
    _require_size(g)
    v = f.values
    if g.periodic:
        KX, KY = wavenumbers(g)
        lap = np.real(np.fft.ifft2(-(KX**2 + KY**2) * np.fft.fft2(v)))
        return ScalarField2D(g, lap)
    out = np.zeros_like(v)
    for axis, (p, m) in ((1, ("E", "W")), (0, ("N", "S"))):
        h = g.hx if axis == 1 else g.hy
        st = (0, 1) if axis == 1 else (1, 0)
        vp = _shift(v, *st, False)
        vm = _shift(v, -st[0], -st[1], False)
        if g.arms is None:
            out += (vp + vm - 2 * v) / h**2
            continue
        tp, tm = g.arms[p], g.arms[m]
        if f.boundary_value is not None:
            b = f.boundary_value
            a = np.where(tp < 1, b, vp)
            c = np.where(tm < 1, b, vm)
        else:
            # quadratic extrapolation to a virtual neighbour at distance h
            vpp = _shift(v, 2 * st[0], 2 * st[1], False)
            vmm = _shift(v, -2 * st[0], -2 * st[1], False)
            a = np.where(tp < 1, 3 * v - 3 * vm + vmm, vp)
            c = np.where(tm < 1, 3 * v - 3 * vp + vpp, vm)
            tp = np.where(tp < 1, 1.0, tp)
            tm = np.where(tm < 1, 1.0, tm)
        hp, hm = tp * h, tm * h
        out += 2.0 * ((a - v) / hp - (v - c) / hm) / (hp + hm)
    out = np.where(g.interior, out, 0.0)
    if g.dforward is not None:
        out = out / g.conformal_factor()
    return ScalarField2D(g, np.where(g.interior, out, 0.0))


def bracket(a: ScalarField2D, b: ScalarField2D) -> ScalarField2D:
    """Poisson bracket grad-perp(a) . grad(b) = a_x b_y - a_y b_x."""
    _check_same(a, b)
    ga = _complex_gradient(a)
    gb = _complex_gradient(b)
    val = ga.real * gb.imag - ga.imag * gb.real
    return ScalarField2D(a.grid, np.where(a.grid.interior, val, 0.0))


# ---------------------------------------------------------------------------
# marching squares

def _bilinear(values, gx, gy, x0, y0, hx, hy, periodic):
    fx = (gx - x0) / hx
    fy = (gy - y0) / hy
    i0 = np.floor(fx).astype(int)
    j0 = np.floor(fy).astype(int)
    tx, ty = fx - i0, fy - j0
    ny, nx = values.shape
    if periodic:
        i0, j0 = i0 % nx, j0 % ny
        i1, j1 = (i0 + 1) % nx, (j0 + 1) % ny
    else:
        i0 = np.clip(i0, 0, nx - 2)
        j0 = np.clip(j0, 0, ny - 2)
        i1, j1 = i0 + 1, j0 + 1
    return ((1 - tx) * (1 - ty) * values[j0, i0] + tx * (1 - ty) * values[j0, i1]
            + (1 - tx) * ty * values[j1, i0] + tx * ty * values[j1, i1])


def extract_level_components(f: ScalarField2D, level: float,
                             critical_fraction: float = 1e-3,
                             check_critical: bool = True) -> list[LevelComponent]:
    """Closed level curves of ``f`` split into connected components."""
    g = f.grid
    v = f.values
    ny, nx = v.shape
    per = g.periodic
    valid = g.mask != EXTERIOR
    above = v >= level

    def edge_point(key):
        kind, j, i = key
        if kind == "h":
            j2, i2 = j, (i + 1) % nx
        else:
            j2, i2 = (j + 1) % ny, i
        a, b = v[j, i], v[j2, i2]
        t = (level - a) / (b - a)
        if kind == "h":
            return (g.x[0] + (i + t) * g.hx, g.y[0] + j * g.hy)
        return (g.x[0] + i * g.hx, g.y[0] + (j + t) * g.hy)

    ncx = nx if per else nx - 1
    ncy = ny if per else ny - 1
    jj, ii = np.meshgrid(np.arange(ncy), np.arange(ncx), indexing="ij")
    i1 = (ii + 1) % nx
    j1 = (jj + 1) % ny
    c0, c1, c2, c3 = above[jj, ii], above[jj, i1], above[j1, i1], above[j1, ii]
    ok = valid[jj, ii] & valid[jj, i1] & valid[j1, i1] & valid[j1, ii]
    mixed = ok & ~((c0 == c1) & (c1 == c2) & (c2 == c3))
    if not np.any(mixed):
        raise EmptyLevel(f"no crossings at level {level}")

    links: dict = {}

    def add(a, b):
        links.setdefault(a, []).append(b)
        links.setdefault(b, []).append(a)

    for j, i in zip(*np.nonzero(mixed)):
        ip, jp = (i + 1) % nx, (j + 1) % ny
        corners = (above[j, i], above[j, ip], above[jp, ip], above[jp, i])
        edges = (("h", j, i), ("v", j, ip), ("h", jp, i), ("v", j, i))
        crossed = [k for k in range(4) if corners[k] != corners[(k + 1) % 4]]
        if len(crossed) == 2:
            add(edges[crossed[0]], edges[crossed[1]])
        else:
            centre = 0.25 * (v[j, i] + v[j, ip] + v[jp, ip] + v[jp, i]) >= level
            # isolate the corners whose sign disagrees with the centre
            for k in range(4):
                if corners[k] != centre:
                    add(edges[(k - 1) % 4], edges[k])

    def walk(start):
        chain = [start]
        seen.add(start)
        cur = start
        while True:
            nxt = next((e for e in links[cur] if e not in seen), None)
            if nxt is None:
                break
            seen.add(nxt)
            chain.append(nxt)
            cur = nxt
        closed = len(chain) > 2 and len(links[start]) == 2 and start in links[cur]
        return chain, closed

    seen: set = set()
    comps = []
    ends = [k for k, nb in links.items() if len(nb) == 1]
    for start in ends + list(links):
        if start in seen:
            continue
        chain, closed = walk(start)
        pts = np.array([edge_point(k) for k in chain])
        if per:
            pts = _unwrap(pts, g)
        comps.append((pts, closed))

    out = []
    if check_critical:
        gm = gradient(f).magnitude()
        gmax = np.max(gm[g.interior])
        thresh = critical_fraction * gmax
    for pts, closed in comps:
        if check_critical:
            gv = _bilinear(gm, pts[:, 0], pts[:, 1], g.x[0], g.y[0], g.hx, g.hy, per)
            if np.min(gv) < thresh:
                raise NearCriticalLevel(
                    f"level {level}: |grad f| = {np.min(gv):.3e} below {thresh:.3e}")
        px, py = g.to_physical(pts[:, 0], pts[:, 1])
        out.append(LevelComponent(float(level), np.column_stack([px, py]), closed, pts))
    return out


def _unwrap(pts, g):
    """Make a periodic polyline continuous in the plane."""
    L = 2 * np.pi
    d = np.diff(pts, axis=0)
    d -= L * np.round(d / L)
    return np.vstack([pts[:1], pts[:1] + np.cumsum(d, axis=0)])


# ---------------------------------------------------------------------------
# persistence

def dump_field(f: ScalarField2D, stem, extra: Optional[dict] = None) -> tuple[Path, Path]:
    """Write ``stem.json`` (header) and ``stem.bin`` (little-endian float64)."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    head = f.grid.header()
    head["boundary_value"] = f.boundary_value
    head["dtype"] = "<f8"
    head["order"] = "row-major (y, x)"
    head["data"] = stem.name + ".bin"
    if extra:
        head.update(extra)
    jpath, bpath = stem.with_suffix(".json"), stem.with_suffix(".bin")
    bpath.write_bytes(np.ascontiguousarray(f.values, dtype="<f8").tobytes())
    jpath.write_text(json.dumps(head, indent=2, default=float))
    return jpath, bpath


def load_values(json_path) -> tuple[dict, np.ndarray]:
    """Read a dump back as (header, array); raises on size mismatch."""
    from .errors import IntegrityError

    jpath = Path(json_path)
    head = json.loads(jpath.read_text())
    raw = (jpath.parent / head["data"]).read_bytes()
    n = head["nx"] * head["ny"]
    if len(raw) != 8 * n:
        raise IntegrityError(f"{head['data']}: expected {8 * n} bytes, found {len(raw)}")
    return head, np.frombuffer(raw, dtype="<f8").reshape(head["ny"], head["nx"]).copy()


def export_csv(f: ScalarField2D, path) -> Path:
    path = Path(path)
    X, Y = f.grid.physical_mesh()
    keep = f.grid.interior
    data = np.column_stack([X[keep], Y[keep], f.values[keep]])
    np.savetxt(path, data, delimiter=",", header="x,y,value", comments="", fmt="%.17g")
    return path


def interpolant(f: ScalarField2D):
    """Bicubic interpolating spline of ``f`` in computational coordinates.

    Exterior nodes are filled with the nearest interior value so the spline
    is well behaved up to the boundary; torus data is padded periodically.
    Call as ``spl(x, y, dx=0, dy=0)`` with scattered points.
    """
    from scipy import ndimage
    from scipy.interpolate import RectBivariateSpline

    g = f.grid
    v = np.array(f.values)
    x, y = g.x, g.y
    if g.periodic:
        pad = 4
        v = np.pad(v, pad, mode="wrap")
        x = g.x[0] + g.hx * np.arange(-pad, g.nx + pad)
        y = g.y[0] + g.hy * np.arange(-pad, g.ny + pad)
    elif g.params.get("shape") == "disk":
        known = g.interior if f.boundary_value is None else g.mask != EXTERIOR
        _, (jj, ii) = ndimage.distance_transform_edt(~known, return_indices=True)
        v = v[jj, ii]
    spl = RectBivariateSpline(y, x, v, kx=3, ky=3, s=0)
    period = 2 * np.pi if g.periodic else None
    x0, y0 = g.x[0], g.y[0]

    def ev(px, py, dx=0, dy=0):
        px = np.asarray(px, float)
        py = np.asarray(py, float)
        if period is not None:
            px = x0 + np.mod(px - x0, period)
            py = y0 + np.mod(py - y0, period)
        return spl.ev(py, px, dx=dy, dy=dx)

    return ev


def points_in_polygon(px, py, poly: np.ndarray) -> np.ndarray:
    """Even-odd ray casting; ``poly`` is an (m, 2) closed vertex list."""
    px = np.asarray(px, float)
    py = np.asarray(py, float)
    inside = np.zeros(px.shape, dtype=bool)
    xa, ya = poly[:, 0], poly[:, 1]
    xb, yb = np.roll(xa, -1), np.roll(ya, -1)
    for x1, y1, x2, y2 in zip(xa, ya, xb, yb):
        cond = (y1 > py) != (y2 > py)
        if not np.any(cond):
            continue
        xc = x1 + (py - y1) * (x2 - x1) / ((y2 - y1) if y2 != y1 else 1e-300)
        inside ^= cond & (px < xc)
    return inside
