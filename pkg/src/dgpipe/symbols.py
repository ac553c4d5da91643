"""Closed-form block symbols of the discrete operators (axial degree 1).

All symbols refer to the column-scaled operators: ``L`` and ``M/dx`` for the
velocity blocks, ``G/dt`` and ``D`` for the coupling and ``E/dx`` for the
pressure penalty.  The default section is the cubic transverse basis
(``ny = 3``) with two interior nodes, which gives 4x4 velocity and 2x2
pressure blocks.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from .grid_basis import lagrange_tensor_basis, transverse_integrals, transverse_mass
from .structured import BlockSymbol

__all__ = [
    "PhysicalParams",
    "SCHUR_CONSTANT_2D",
    "SCHUR_CONSTANT_3D",
    "SCHUR_TRANSVERSE_A",
    "symbol_L",
    "symbol_M",
    "symbol_G",
    "symbol_D",
    "symbol_DG",
    "symbol_E",
    "symbol_L_inverse",
    "symbol_S",
    "symbol_S_dx",
    "symbol_S_dx_3d",
    "symbol_F",
    "schur_symbol_numeric",
    "schur_constant",
    "sample_branches",
    "branch_grid",
]

SCHUR_CONSTANT_2D = 315.0 / 1008.0
SCHUR_CONSTANT_3D = 175.0 / 672.0
SCHUR_TRANSVERSE_A = 105.0 / 2016.0

_G0 = np.array([[3.0, 1.0], [3.0, 1.0], [1.0, 3.0], [1.0, 3.0]])
_AXIAL_MASS = np.array([[2.0, 1.0], [1.0, 2.0]])
_UPPER = np.array([[0.0, 1.0], [0.0, 0.0]])


@dataclass(frozen=True)
class PhysicalParams:
    """Parameters entering the symbols.

    ``d`` is the channel width in 2D and the cross-sectional area in 3D.
    """

    d: float = 1.0
    mu: float = 1.0
    rho: float = 1.0
    c: float = 1.0
    dx: float = 0.0

    def __post_init__(self):
        for name in ("d", "mu", "rho", "c"):
            if not getattr(self, name) > 0:
                raise ValueError(f"parameter {name} must be positive, got {getattr(self, name)}")
        if self.dx < 0:
            raise ValueError(f"dx must be nonnegative, got {self.dx}")

    @property
    def b(self) -> float:
        """Scale of the inverse viscous symbol."""
        return 560.0 / (1701.0 * self.mu * self.d * self.c)

    def with_(self, **changes) -> "PhysicalParams":
        return PhysicalParams(**{**asdict(self), **changes})


# ---------------------------------------------------------------------------
# section data


@lru_cache(maxsize=None)
def _section(ny: int, nz: int | None):
    vb = lagrange_tensor_basis(1, ny, nz, "velocity")
    return transverse_mass(vb), transverse_integrals(vb)


def schur_constant(ny: int = 3, nz: int | None = None) -> float:
    """Constant of the fixed-``dx`` Schur symbol for an arbitrary section.

    Equals ``3/8 * c_t^T M_t^{-1} c_t`` with ``M_t`` the transverse mass and
    ``c_t`` the transverse integrals on the unit section; this reproduces
    315/1008 for ``ny = 3`` and 175/672 for ``ny = 3, nz = 2``.
    """
    Mt, ct = _section(ny, nz)
    return 0.375 * float(ct @ np.linalg.solve(Mt, ct))


# ---------------------------------------------------------------------------
# velocity and coupling symbols


def symbol_L(params: PhysicalParams, ny: int = 3, nz: int | None = None) -> BlockSymbol:
    """Axial viscous symbol ``d mu c (1 - cos) I_2 x M_t`` (trig polynomial of degree 1)."""
    Mt, _ = _section(ny, nz)
    base = params.d * params.mu * params.c * np.kron(np.eye(2), Mt)
    return BlockSymbol(base.shape, {0: base, 1: -0.5 * base, -1: -0.5 * base}, name="f_L")


def symbol_M(params: PhysicalParams, ny: int = 3, nz: int | None = None) -> BlockSymbol:
    """Mass symbol of ``M / dx``; constant in theta."""
    Mt, _ = _section(ny, nz)
    t0 = params.d * params.rho / 6.0 * np.kron(_AXIAL_MASS, Mt)
    return BlockSymbol(t0.shape, {0: t0}, name="f_M")


def _g0(params, ny, nz):
    if ny == 3 and nz is None:
        return 3.0 / 64.0 * params.d * _G0
    _, ct = _section(ny, nz)
    weights = np.array([[3.0, 1.0], [1.0, 3.0]]) / 8.0
    return params.d * np.einsum("ik,t->itk", weights, ct).reshape(-1, 2)


def symbol_G(params: PhysicalParams, ny: int = 3, nz: int | None = None) -> BlockSymbol:
    """Gradient symbol ``g0 (1 - e^{i theta})`` (rectangular, 2 pressure columns)."""
    g0 = _g0(params, ny, nz)
    return BlockSymbol(g0.shape, {0: g0, 1: -g0}, name="g")


def symbol_D(params: PhysicalParams, ny: int = 3, nz: int | None = None) -> BlockSymbol:
    """Divergence symbol, the conjugate transpose of :func:`symbol_G`."""
    return symbol_G(params, ny, nz).conj_transpose(name="d")


def symbol_DG(params: PhysicalParams, ny: int = 3, nz: int | None = None) -> BlockSymbol:
    """Product symbol of ``D G / dt``: ``g0^T g0 (2 - 2 cos theta)``."""
    g0 = _g0(params, ny, nz)
    P = g0.T @ g0
    return BlockSymbol(P.shape, {0: 2.0 * P, 1: -P, -1: -P}, name="dg")


def symbol_E(params: PhysicalParams) -> BlockSymbol:
    """Pressure penalty symbol ``d [[-1, e^{i t}], [e^{-i t}, -1]]``."""
    d = params.d
    return BlockSymbol((2, 2), {0: -d * np.eye(2), 1: d * _UPPER, -1: d * _UPPER.T}, name="e")


def symbol_L_inverse(params: PhysicalParams) -> BlockSymbol:
    """Inverse of :func:`symbol_L` for the cubic section, with a pole at theta = 0."""
    b = params.b
    core = np.kron(np.eye(2), np.array([[8.0, 1.0], [1.0, 8.0]]))

    def evaluate(theta):
        denom = 1.0 - np.cos(theta)
        if abs(denom) < 1e-15:
            raise ZeroDivisionError("the inverse viscous symbol has a pole at theta = 0")
        return b / denom * core

    return BlockSymbol((4, 4), evaluator=evaluate, name="f_L^-1")


# ---------------------------------------------------------------------------
# Schur symbols


def symbol_S(params: PhysicalParams) -> BlockSymbol:
    """Schur symbol without the mass contribution (limit ``dx -> 0``)."""
    k = SCHUR_TRANSVERSE_A / params.mu
    scale = params.d / params.c
    t0 = scale * np.array([[-1.0 - 5.0 * k, -3.0 * k], [-3.0 * k, -1.0 - 5.0 * k]])
    return BlockSymbol((2, 2), {0: t0, 1: scale * _UPPER, -1: scale * _UPPER.T}, name="s")


def _schur_dx(params: PhysicalParams, constant: float, name: str) -> BlockSymbol:
    mu, rho, c, dx = params.mu, params.rho, params.c, params.dx
    scale = params.d / c

    def evaluate(theta):
        one_minus = 1.0 - np.cos(theta)
        a = 6.0 * one_minus * mu * c + 2.0 * dx * rho
        den = a * a - (dx * rho) ** 2
        b = 0.0 if one_minus == 0.0 else constant * one_minus / den
        diag = -1.0 - (5.0 * a - 3.0 * dx * rho) * b * c
        off = -(3.0 * a - 5.0 * dx * rho) * b * c
        return scale * np.array([[diag, np.exp(1j * theta) + off], [np.exp(-1j * theta) + off, diag]])

    return BlockSymbol((2, 2), evaluator=evaluate, name=name)


def symbol_S_dx(params: PhysicalParams, constant: float = SCHUR_CONSTANT_2D) -> BlockSymbol:
    """Schur symbol at fixed ``dx`` keeping the mass term (2D constants)."""
    return _schur_dx(params, constant, "s_dx")


def symbol_S_dx_3d(params: PhysicalParams) -> BlockSymbol:
    """Fixed-``dx`` Schur symbol for the ``ny = 3, nz = 2`` section; ``d`` is the area."""
    return _schur_dx(params, SCHUR_CONSTANT_3D, "s_dx_3d")


def schur_symbol_numeric(params: PhysicalParams, ny: int = 3, nz: int | None = None,
                         with_mass: bool = True) -> BlockSymbol:
    """``e/c - d(theta) (f_L + dx f_M)^{-1} g(theta)`` evaluated by dense algebra.

    At ``theta = 0`` (where ``g`` vanishes) the value is ``e(0)/c``.
    """
    fl, fm = symbol_L(params, ny, nz), symbol_M(params, ny, nz)
    g, e = symbol_G(params, ny, nz), symbol_E(params)
    dx = params.dx if with_mass else 0.0

    def evaluate(theta):
        gt = g(theta)
        ev = e(theta) / params.c
        if not np.any(np.abs(gt) > 0):
            return ev
        N = fl(theta) + dx * fm(theta)
        return ev - gt.conj().T @ np.linalg.solve(N, gt)

    return BlockSymbol((2, 2), evaluator=evaluate, name="s_numeric")


def symbol_F(params: PhysicalParams, with_mass: bool = False) -> BlockSymbol:
    """6x6 symbol of the column-scaled saddle matrix.

    ``[[f_L (+ dx f_M), g], [g^H, e / c]]``; Hermitian by construction.
    """
    fl, fm = symbol_L(params), symbol_M(params)
    g, e = symbol_G(params), symbol_E(params)
    dx = params.dx if with_mass else 0.0
    coefs = {}
    for j in (-1, 0, 1):
        block = np.zeros((6, 6), dtype=complex)
        block[:4, :4] = fl.coefficient(j) + (dx * fm.coefficient(j) if j == 0 else 0.0)
        block[:4, 4:] = g.coefficient(j)
        block[4:, :4] = g.coefficient(-j).conj().T
        block[4:, 4:] = e.coefficient(j) / params.c
        coefs[j] = block
    return BlockSymbol((6, 6), coefs, name="F")


# ---------------------------------------------------------------------------
# sampling


def branch_grid(m: int) -> np.ndarray:
    """``theta_j = j pi / (m - 1)``, ``j = 0..m-1``."""
    if m < 2:
        raise ValueError(f"need at least two samples, got {m}")
    return np.linspace(0.0, np.pi, m)


def sample_branches(symbol: BlockSymbol, m: int, kind: str = "eigen", theta=None) -> np.ndarray:
    """Eigenvalue or singular value branches on ``[0, pi]``.

    Returns an array of shape ``(branches, m)``; at each angle the values are
    sorted ascending, so row ``t`` is the ``t``-th smallest branch.  Pass
    ``theta`` to sample elsewhere (the count ``m`` is then ignored).
    """
    theta = branch_grid(m) if theta is None else np.asarray(theta, dtype=float)
    vals = symbol(theta)
    if kind == "eigen":
        if not symbol.is_square:
            raise ValueError("eigenvalue branches need a square symbol")
        herm = np.allclose(vals, np.conj(np.swapaxes(vals, 1, 2)), atol=1e-12 * max(1.0, np.abs(vals).max()))
        if herm:
            out = np.linalg.eigvalsh(vals)
        else:
            out = np.linalg.eigvals(vals)
            out = np.sort_complex(out)
            if np.all(np.abs(out.imag) < 1e-12 * max(1.0, np.abs(out).max())):
                out = np.sort(out.real, axis=1)
    elif kind == "singular":
        out = np.sort(np.linalg.svd(vals, compute_uv=False), axis=1)
    else:
        raise ValueError(f"kind must be 'eigen' or 'singular', got {kind!r}")
    return out.T
