"""Staggered grid, width profiles, Lagrange tensor bases and Gauss rules.

Pressure lives on ``n`` primal cells of length ``dx``; velocity lives on
``n + 1`` dual cells whose nodes sit at the primal cell centres, with two
half-length cells touching the inlet and the outlet.  All reference
elements are the unit interval (or unit square/cube).
"""

from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "ConstantProfile",
    "LinearProfile",
    "TabulatedProfile",
    "CallableProfile",
    "as_profile",
    "StaggeredGrid",
    "build_staggered_grid",
    "Lagrange1D",
    "TensorBasis",
    "lagrange_tensor_basis",
    "gauss_quadrature",
    "quadrature_points_for",
    "transverse_integrals",
    "transverse_mass",
]


# ---------------------------------------------------------------------------
# width profiles


class _Profile:
    """Scalar positive function of the axial coordinate with a derivative."""

    def __call__(self, x):
        raise NotImplementedError

    def derivative(self, x):
        raise NotImplementedError

    def describe(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantProfile(_Profile):
    value: float

    def __call__(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.value)

    def derivative(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def describe(self) -> dict:
        return {"kind": "constant", "value": self.value}


@dataclass(frozen=True)
class LinearProfile(_Profile):
    """Linear taper from ``start`` at x=0 to ``end`` at x=length."""

    start: float
    end: float
    length: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.start + (self.end - self.start) * x / self.length

    def derivative(self, x):
        return np.full_like(np.asarray(x, dtype=float), (self.end - self.start) / self.length)

    def describe(self) -> dict:
        return {"kind": "linear", "start": self.start, "end": self.end, "length": self.length}


@dataclass(frozen=True)
class TabulatedProfile(_Profile):
    """Piecewise linear interpolant of tabulated ``(x, value)`` pairs."""

    xs: tuple
    values: tuple

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        if xs.ndim != 1 or xs.size < 2 or np.any(np.diff(xs) <= 0):
            raise ValueError("tabulated profile needs at least two strictly increasing abscissae")
        if len(self.values) != xs.size:
            raise ValueError("tabulated profile: xs and values differ in length")

    def __call__(self, x):
        return np.interp(np.asarray(x, dtype=float), self.xs, self.values)

    def derivative(self, x):
        xs = np.asarray(self.xs)
        slopes = np.diff(self.values) / np.diff(xs)
        idx = np.clip(np.searchsorted(xs, np.asarray(x, dtype=float), side="right") - 1, 0, slopes.size - 1)
        return slopes[idx]

    def describe(self) -> dict:
        return {"kind": "table", "x": list(self.xs), "values": list(self.values)}


@dataclass(frozen=True)
class CallableProfile(_Profile):
    """Wraps an arbitrary callable; derivative by central differences if absent."""

    fn: Callable
    dfn: Callable | None = None
    step: float = 1e-7

    def __call__(self, x):
        return np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float) * np.ones_like(
            np.asarray(x, dtype=float)
        )

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        if self.dfn is not None:
            return np.asarray(self.dfn(x), dtype=float) * np.ones_like(x)
        return (self(x + self.step) - self(x - self.step)) / (2 * self.step)

    def describe(self) -> dict:
        return {"kind": "callable", "name": getattr(self.fn, "__name__", "anonymous")}


def as_profile(spec) -> _Profile:
    """Coerce a number, profile or callable into a profile object."""
    if isinstance(spec, _Profile):
        return spec
    if isinstance(spec, (int, float, np.floating, np.integer)):
        return ConstantProfile(float(spec))
    if callable(spec):
        return CallableProfile(spec)
    raise TypeError(f"cannot interpret {spec!r} as a width profile")


# ---------------------------------------------------------------------------
# grid


@dataclass(frozen=True)
class StaggeredGrid:
    """Primal/dual cell layout of a quasi-1D channel.

    Attributes
    ----------
    n : int
        Number of primal (pressure) cells.
    length : float
        Channel length in metres.
    dt : float
        Time step in seconds.
    width : profile
        Channel width ``d(x)``.
    height : profile or None
        Second transverse extent for 3D channels; ``None`` in 2D.
    """

    n: int
    length: float
    dt: float
    width: _Profile
    height: _Profile | None = None

    @property
    def dx(self) -> float:
        return self.length / self.n

    @property
    def c(self) -> float:
        return self.dt / self.dx

    @property
    def is_3d(self) -> bool:
        return self.height is not None

    @property
    def dim(self) -> int:
        return 3 if self.is_3d else 2

    @property
    def primal_edges(self) -> np.ndarray:
        return np.linspace(0.0, self.length, self.n + 1)

    @property
    def primal_centers(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) * self.dx

    @property
    def dual_edges(self) -> np.ndarray:
        """Boundaries of the ``n + 1`` dual cells."""
        return np.concatenate(([0.0], self.primal_centers, [self.length]))

    @property
    def dual_lengths(self) -> np.ndarray:
        return np.diff(self.dual_edges)

    @property
    def width_samples(self) -> np.ndarray:
        return self.width(self.primal_centers)

    def area(self, x):
        """Cross-section measure: width in 2D, width times height in 3D."""
        a = self.width(x)
        if self.height is not None:
            a = a * self.height(x)
        return a

    def area_derivative(self, x):
        if self.height is None:
            return self.width.derivative(x)
        return self.width.derivative(x) * self.height(x) + self.width(x) * self.height.derivative(x)

    @property
    def area_samples(self) -> np.ndarray:
        return self.area(self.primal_centers)

    def overlaps(self, j: int) -> tuple[int, int]:
        """Dual cells meeting primal cell ``j`` (0-based): ``(j, j + 1)``."""
        if not 0 <= j < self.n:
            raise IndexError(f"primal cell {j} outside 0..{self.n - 1}")
        return j, j + 1

    def overlap_pieces(self, i: int) -> list[tuple[int, float, float]]:
        """Primal cells covering dual cell ``i`` as ``(j, x_start, x_end)``."""
        if not 0 <= i <= self.n:
            raise IndexError(f"dual cell {i} outside 0..{self.n}")
        a, b = self.dual_edges[i], self.dual_edges[i + 1]
        pieces = []
        for j in (i - 1, i):
            if 0 <= j < self.n:
                lo = max(a, j * self.dx)
                hi = min(b, (j + 1) * self.dx)
                if hi > lo:
                    pieces.append((j, lo, hi))
        return pieces

    def refined(self, factor: int = 2) -> "StaggeredGrid":
        """Same channel with ``factor`` times more cells at fixed ``c``."""
        return StaggeredGrid(self.n * factor, self.length, self.dt / factor, self.width, self.height)

    def describe(self) -> dict:
        out = {"n": self.n, "length": self.length, "dt": self.dt, "dx": self.dx, "c": self.c,
               "width": self.width.describe()}
        if self.height is not None:
            out["height"] = self.height.describe()
        return out


def build_staggered_grid(n, length, width_fn, dt, height_fn=None) -> StaggeredGrid:
    """Validate inputs and build a :class:`StaggeredGrid`.

    Parameters
    ----------
    n : int
        Primal cell count, at least 2.
    length : float
        Channel length (> 0).
    width_fn : float, callable or profile
        Channel width; must be strictly positive on ``[0, length]``.
    dt : float
        Time step (> 0).
    height_fn : float, callable or profile, optional
        Channel height for a 3D rectangular section.

    Raises
    ------
    ValueError
        For nonpositive sizes or a width that is not strictly positive.
    """
    if not isinstance(n, (int, np.integer)) or isinstance(n, bool):
        raise ValueError(f"cell count must be an integer, got {n!r}")
    if n < 2:
        raise ValueError(f"cell count must be at least 2, got {n}")
    if not length > 0:
        raise ValueError(f"length must be positive, got {length}")
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    width = as_profile(width_fn)
    height = None if height_fn is None else as_profile(height_fn)
    probe = np.linspace(0.0, length, 4 * n + 1)
    for name, prof in (("width", width), ("height", height)):
        if prof is None:
            continue
        vals = prof(probe)
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            raise ValueError(f"{name} must be strictly positive on [0, {length}]")
    return StaggeredGrid(int(n), float(length), float(dt), width, height)


# ---------------------------------------------------------------------------
# quadrature


def gauss_quadrature(n_points: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule on ``[0, 1]``.

    Exact for polynomials of degree ``2 * n_points - 1``.
    """
    if not isinstance(n_points, (int, np.integer)) or n_points < 1:
        raise ValueError(f"number of quadrature points must be >= 1, got {n_points!r}")
    x, w = _gauss_rule(int(n_points))
    return x.copy(), w.copy()


@lru_cache(maxsize=64)
def _gauss_rule(n_points: int):
    x, w = np.polynomial.legendre.leggauss(n_points)
    return 0.5 * (x + 1.0), 0.5 * w


def quadrature_points_for(*degrees: int) -> int:
    """Points per direction that integrate all products of the given degrees."""
    return max(1, math.ceil((2 * max(degrees) + 3) / 2))


# ---------------------------------------------------------------------------
# bases


class Lagrange1D:
    """Lagrange polynomials on equispaced nodes of ``[0, 1]``.

    Degree 0 uses the midpoint as its single node.
    """

    def __init__(self, degree: int):
        if degree < 0:
            raise ValueError(f"degree must be nonnegative, got {degree}")
        self.degree = int(degree)
        self.nodes = np.array([0.5]) if degree == 0 else np.linspace(0.0, 1.0, degree + 1)

    def __len__(self):
        return self.degree + 1

    def _factors(self, x):
        # factor[p, k, m] = (x_p - x_m) / (x_k - x_m), set to 1 on k == m
        diff = x[:, None, None] - self.nodes[None, None, :]
        denom = self.nodes[:, None] - self.nodes[None, :]
        np.fill_diagonal(denom, 1.0)
        out = diff / denom[None]
        idx = np.arange(self.nodes.size)
        out[:, idx, idx] = 1.0
        return out, denom

    def values(self, x) -> np.ndarray:
        """Cardinal functions at ``x``, shape ``(len(x), degree + 1)``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        factors, _ = self._factors(x)
        return factors.prod(axis=2)

    def derivatives(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        size = self.nodes.size
        if self.degree == 0:
            return np.zeros((x.size, 1))
        factors, denom = self._factors(x)
        out = np.zeros((x.size, size))
        for k in range(size):
            for j in range(size):
                if j == k:
                    continue
                rest = np.delete(factors[:, k, :], [j, k], axis=1).prod(axis=1)
                out[:, k] += rest / denom[k, j]
        return out


@dataclass(frozen=True)
class TensorBasis:
    """Tensor-product Lagrange basis on the reference cell.

    Velocity bases drop the transverse wall nodes (no-slip), pressure bases
    are constant across the section.  Local ordering is axial node outermost,
    then ``y`` node, then ``z`` node.
    """

    nx: int
    ny: int
    nz: int | None
    role: str
    x_basis: Lagrange1D = field(repr=False, compare=False)
    y_basis: Lagrange1D | None = field(repr=False, compare=False)
    z_basis: Lagrange1D | None = field(repr=False, compare=False)

    @property
    def is_3d(self) -> bool:
        return self.nz is not None

    @property
    def dim(self) -> int:
        return 3 if self.is_3d else 2

    @property
    def n_axial(self) -> int:
        return self.nx + 1

    @property
    def y_active(self) -> np.ndarray:
        if self.role == "pressure":
            return np.zeros(0, dtype=int)
        return np.arange(1, self.ny)

    @property
    def z_active(self) -> np.ndarray:
        if self.role == "pressure" or not self.is_3d:
            return np.zeros(0, dtype=int)
        return np.arange(1, self.nz)

    @property
    def n_transverse(self) -> int:
        if self.role == "pressure":
            return 1
        return (self.ny - 1) * ((self.nz - 1) if self.is_3d else 1)

    @property
    def size(self) -> int:
        """Active functions per cell (``n_u`` or ``n_p``)."""
        return self.n_axial * self.n_transverse

    @property
    def nodes(self) -> np.ndarray:
        """Reference coordinates of the active nodes, shape ``(size, dim)``."""
        xs = self.x_basis.nodes
        if self.role == "pressure":
            trans = [np.full(self.dim - 1, 0.5)]
        elif self.is_3d:
            trans = [(self.y_basis.nodes[a], self.z_basis.nodes[b])
                     for a in self.y_active for b in self.z_active]
        else:
            trans = [(self.y_basis.nodes[a],) for a in self.y_active]
        return np.array([(x, *t) for x in xs for t in trans])

    def transverse_values(self, eta, zeta=None, include_walls=False):
        """Transverse factors at points, shape ``(npts, n_transverse)``."""
        eta = np.atleast_1d(np.asarray(eta, dtype=float))
        if self.role == "pressure":
            return np.ones((eta.size, 1))
        vy = self.y_basis.values(eta)
        ya = slice(None) if include_walls else self.y_active
        vy = vy[:, ya]
        if not self.is_3d:
            return vy
        vz = self.z_basis.values(np.atleast_1d(zeta))
        vz = vz[:, slice(None) if include_walls else self.z_active]
        return (vy[:, :, None] * vz[:, None, :]).reshape(eta.size, -1)

    def transverse_gradients(self, eta, zeta=None):
        """Reference derivatives of transverse factors, shape ``(npts, n_t, dim-1)``."""
        eta = np.atleast_1d(np.asarray(eta, dtype=float))
        if self.role == "pressure":
            return np.zeros((eta.size, 1, self.dim - 1))
        vy = self.y_basis.values(eta)[:, self.y_active]
        dy = self.y_basis.derivatives(eta)[:, self.y_active]
        if not self.is_3d:
            return dy[:, :, None]
        zeta = np.atleast_1d(zeta)
        vz = self.z_basis.values(zeta)[:, self.z_active]
        dz = self.z_basis.derivatives(zeta)[:, self.z_active]
        gy = (dy[:, :, None] * vz[:, None, :]).reshape(eta.size, -1)
        gz = (vy[:, :, None] * dz[:, None, :]).reshape(eta.size, -1)
        return np.stack([gy, gz], axis=-1)

    def values(self, points, include_walls=False) -> np.ndarray:
        """Basis values at reference points ``(npts, dim)``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        vx = self.x_basis.values(pts[:, 0])
        zeta = pts[:, 2] if self.is_3d else None
        vt = self.transverse_values(pts[:, 1], zeta, include_walls=include_walls)
        return (vx[:, :, None] * vt[:, None, :]).reshape(pts.shape[0], -1)

    def gradients(self, points) -> np.ndarray:
        """Reference gradients of active functions, shape ``(npts, size, dim)``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        npts = pts.shape[0]
        vx = self.x_basis.values(pts[:, 0])
        dx = self.x_basis.derivatives(pts[:, 0])
        zeta = pts[:, 2] if self.is_3d else None
        vt = self.transverse_values(pts[:, 1], zeta)
        gt = self.transverse_gradients(pts[:, 1], zeta)
        out = np.empty((npts, self.size, self.dim))
        out[:, :, 0] = (dx[:, :, None] * vt[:, None, :]).reshape(npts, -1)
        for k in range(self.dim - 1):
            out[:, :, k + 1] = (vx[:, :, None] * gt[:, None, :, k]).reshape(npts, -1)
        return out

    def quadrature_points(self) -> int:
        degs = [self.nx, self.ny] + ([self.nz] if self.is_3d else [])
        return quadrature_points_for(*degs)

    def transverse_rule(self):
        """Tensor Gauss rule on the reference section: ``(eta, zeta, weights)``."""
        q, w = gauss_quadrature(self.quadrature_points())
        if not self.is_3d:
            return q, None, w
        eta, zeta = np.meshgrid(q, q, indexing="ij")
        return eta.ravel(), zeta.ravel(), np.outer(w, w).ravel()


def lagrange_tensor_basis(nx: int, ny: int, nz: int | None = None, role: str = "velocity") -> TensorBasis:
    """Build a velocity or pressure :class:`TensorBasis`.

    Velocity requires ``ny >= 2`` (and ``nz >= 2`` in 3D) so that at least
    one interior transverse node survives the wall elimination.
    """
    if role not in ("velocity", "pressure"):
        raise ValueError(f"role must be 'velocity' or 'pressure', got {role!r}")
    if nx < 0:
        raise ValueError(f"nx must be nonnegative, got {nx}")
    if role == "velocity":
        if ny < 2:
            raise ValueError(f"velocity basis needs ny >= 2, got {ny}")
        if nz is not None and nz < 2:
            raise ValueError(f"velocity basis needs nz >= 2, got {nz}")
    ny_b = Lagrange1D(ny) if role == "velocity" else None
    nz_b = Lagrange1D(nz) if (role == "velocity" and nz is not None) else None
    return TensorBasis(int(nx), int(ny), None if nz is None else int(nz), role,
                       Lagrange1D(nx), ny_b, nz_b)


def transverse_integrals(basis: TensorBasis) -> np.ndarray:
    """Integral of each transverse factor over the unit section."""
    eta, zeta, w = basis.transverse_rule()
    return w @ basis.transverse_values(eta, zeta)


def transverse_mass(basis: TensorBasis) -> np.ndarray:
    eta, zeta, w = basis.transverse_rule()
    v = basis.transverse_values(eta, zeta)
    return (v * w[:, None]).T @ v
