"""Assembly of the staggered DG saddle-point system.

The momentum equation is multiplied by the time step, so

* ``M``  = rho * (psi, phi)
* ``L``  = dt * mu * (grad psi, grad phi) + symmetric interior penalty faces
* ``G``  = dt * (psi, dp/dx) with pressure jumps at primal interfaces
* ``D``  = minus the weak divergence, so that ``D = G.T / dt`` in the interior
* ``E``  = minus ``dx`` times the pressure jump penalty (negative semidefinite)

Velocity dofs are numbered cell by cell over the ``n + 1`` dual cells and
pressure dofs over the ``n`` primal cells, each with the local ordering of
:class:`~dgpipe.grid_basis.TensorBasis`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid_basis import (
    StaggeredGrid,
    TensorBasis,
    gauss_quadrature,
    lagrange_tensor_basis,
    transverse_integrals,
)

__all__ = [
    "SaddleSystem",
    "assemble_mass",
    "assemble_laplacian",
    "assemble_gradient",
    "assemble_divergence",
    "assemble_pressure_penalty",
    "assemble_saddle_system",
    "apply_boundary_conditions",
    "boundary_rows",
    "inlet_traction",
    "outlet_traction",
    "parabolic_inlet",
    "poiseuille_state",
    "convective_rhs",
    "convective_tendency",
    "export_matrix_market",
    "export_vector_csv",
    "read_vector_csv",
]


# ---------------------------------------------------------------------------
# reference data


class _CellGeometry:
    """Quadrature data of the velocity basis on one physical x-interval."""

    def __init__(self, grid: StaggeredGrid, basis: TensorBasis, a: float, b: float,
                 xi_range=(0.0, 1.0), cell_start=None, cell_length=None):
        # [a, b] is the integration interval; the basis lives on the cell
        # [cell_start, cell_start + cell_length] (defaults to [a, b]).
        h = cell_length if cell_length is not None else b - a
        x0 = cell_start if cell_start is not None else a
        xq, wq = gauss_quadrature(basis.quadrature_points() + 1)
        xs = a + (b - a) * xq
        xi = (xs - x0) / h
        eta, zeta, wt = basis.transverse_rule()
        coords = [eta] if zeta is None else [eta, zeta]

        vx = basis.x_basis.values(xi)
        dvx = basis.x_basis.derivatives(xi) / h
        phi = basis.transverse_values(eta, zeta)
        dphi = basis.transverse_gradients(eta, zeta)
        nt = phi.shape[1]
        nqx, nqt = xs.size, eta.size

        scales = [grid.width(xs)]
        slopes = [grid.width.derivative(xs) / scales[0]]
        if grid.height is not None:
            scales.append(grid.height(xs))
            slopes.append(grid.height.derivative(xs) / scales[1])

        area = grid.area(xs)
        self.xs = xs
        self.weights = ((b - a) * wq * area)[:, None] * wt[None, :]
        self.val = (vx[:, None, :, None] * phi[None, :, None, :]).reshape(nqx, nqt, -1)
        # d/dx at fixed physical y picks up -eta * w'/w * d/deta
        corr = np.zeros((nqx, nqt, nt))
        for k, (crd, slope) in enumerate(zip(coords, slopes)):
            corr -= slope[:, None, None] * crd[None, :, None] * dphi[None, :, :, k]
        self.dx = (dvx[:, None, :, None] * phi[None, :, None, :]
                   + vx[:, None, :, None] * corr[:, :, None, :]).reshape(nqx, nqt, -1)
        self.dtrans = [
            (vx[:, None, :, None] * dphi[None, :, None, :, k]
             / scales[k][:, None, None, None]).reshape(nqx, nqt, -1)
            for k in range(len(coords))
        ]


def _face_traces(grid, basis, x_face, xi, h):
    """Values and x-derivatives of the velocity basis on a cross-section."""
    eta, zeta, wt = basis.transverse_rule()
    coords = [eta] if zeta is None else [eta, zeta]
    vx = basis.x_basis.values([xi])[0]
    dvx = basis.x_basis.derivatives([xi])[0] / h
    phi = basis.transverse_values(eta, zeta)
    dphi = basis.transverse_gradients(eta, zeta)
    slopes = [grid.width.derivative(x_face) / grid.width(x_face)]
    if grid.height is not None:
        slopes.append(grid.height.derivative(x_face) / grid.height(x_face))
    corr = np.zeros_like(phi)
    for k, (crd, slope) in enumerate(zip(coords, slopes)):
        corr -= float(slope) * crd[:, None] * dphi[:, :, k]
    val = (vx[None, :, None] * phi[:, None, :]).reshape(eta.size, -1)
    dx = (dvx[None, :, None] * phi[:, None, :] + vx[None, :, None] * corr[:, None, :]).reshape(eta.size, -1)
    return val, dx, wt * float(grid.area(x_face))


def _check_bases(grid, vbasis, pbasis=None):
    if vbasis.role != "velocity":
        raise ValueError("first basis must have the velocity role")
    if vbasis.is_3d != grid.is_3d:
        raise ValueError("basis dimension does not match grid dimension")
    if pbasis is not None:
        if pbasis.role != "pressure":
            raise ValueError("second basis must have the pressure role")
        if pbasis.nx != vbasis.nx:
            raise ValueError("velocity and pressure must share the axial degree")


def _coo(rows, cols, vals, shape):
    return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=shape).tocsr()


def _add_block(store, r0, c0, block):
    r, c = np.indices(block.shape)
    store[0].append((r + r0).ravel())
    store[1].append((c + c0).ravel())
    store[2].append(block.ravel())


# ---------------------------------------------------------------------------
# velocity blocks


def assemble_mass(grid: StaggeredGrid, basis: TensorBasis, rho: float = 1.0) -> sp.csr_matrix:
    """Block-diagonal velocity mass matrix scaled by the density."""
    _check_bases(grid, basis)
    nu = basis.size
    edges = grid.dual_edges
    store = ([], [], [])
    for i in range(grid.n + 1):
        geo = _CellGeometry(grid, basis, edges[i], edges[i + 1])
        block = rho * np.einsum("qt,qta,qtb->ab", geo.weights, geo.val, geo.val)
        _add_block(store, i * nu, i * nu, block)
    size = (grid.n + 1) * nu
    return _coo(*store, (size, size))


def assemble_laplacian(grid: StaggeredGrid, basis: TensorBasis, mu: float = 1.0,
                       alpha0: float = 1.0, transverse: bool = True) -> sp.csr_matrix:
    """Symmetric interior penalty viscous operator, premultiplied by ``dt``.

    Parameters
    ----------
    grid, basis
        Geometry and velocity basis.
    mu : float
        Dynamic viscosity.
    alpha0 : float
        Penalty factor; the face penalty is ``alpha0 / dx``.  Must be positive.
    transverse : bool
        Include the cross-sectional derivative terms.  Without them only the
        axial coupling remains, which is the part captured by the block
        symbol of the operator.

    Returns
    -------
    scipy.sparse.csr_matrix
        Block-tridiagonal matrix of size ``(n + 1) * n_u``.
    """
    _check_bases(grid, basis)
    if not alpha0 > 0:
        raise ValueError(f"penalty factor alpha0 must be positive for coercivity, got {alpha0}")
    nu = basis.size
    edges = grid.dual_edges
    scale = grid.dt * mu
    store = ([], [], [])
    for i in range(grid.n + 1):
        geo = _CellGeometry(grid, basis, edges[i], edges[i + 1])
        block = np.einsum("qt,qta,qtb->ab", geo.weights, geo.dx, geo.dx)
        if transverse:
            for dk in geo.dtrans:
                block += np.einsum("qt,qta,qtb->ab", geo.weights, dk, dk)
        _add_block(store, i * nu, i * nu, scale * block)

    sigma = alpha0 / grid.dx
    for i in range(grid.n):
        xf = edges[i + 1]
        vm, dm, wf = _face_traces(grid, basis, xf, 1.0, edges[i + 1] - edges[i])
        vp, dp, _ = _face_traces(grid, basis, xf, 0.0, edges[i + 2] - edges[i + 1])
        jump = np.hstack([vm, -vp])
        avg = 0.5 * np.hstack([dm, dp])
        face = (-np.einsum("q,qa,qb->ab", wf, jump, avg)
                - np.einsum("q,qa,qb->ab", wf, avg, jump)
                + sigma * np.einsum("q,qa,qb->ab", wf, jump, jump))
        _add_block(store, i * nu, i * nu, scale * face)
    size = (grid.n + 1) * nu
    return _coo(*store, (size, size))


# ---------------------------------------------------------------------------
# velocity-pressure coupling


def _axial_flux_weights(grid, vbasis, x, xi, h):
    """``q_a(x) = phi_ax(xi) * A(x) * int(phi_at)`` for every velocity dof a."""
    ct = transverse_integrals(vbasis)
    vx = vbasis.x_basis.values(np.atleast_1d(xi))
    area = np.atleast_1d(grid.area(x))
    return (vx[:, :, None] * ct[None, None, :]).reshape(vx.shape[0], -1) * area[:, None]


def _axial_flux_derivative(grid, vbasis, x, xi, h):
    ct = transverse_integrals(vbasis)
    xi = np.atleast_1d(xi)
    vx = vbasis.x_basis.values(xi)
    dvx = vbasis.x_basis.derivatives(xi) / h
    area = np.atleast_1d(grid.area(x))
    darea = np.atleast_1d(grid.area_derivative(x))
    lead = dvx * area[:, None] + vx * darea[:, None]
    return (lead[:, :, None] * ct[None, None, :]).reshape(xi.size, -1)


def assemble_gradient(grid: StaggeredGrid, vbasis: TensorBasis, pbasis: TensorBasis) -> sp.csr_matrix:
    """Pressure gradient tested against velocity functions, times ``dt``.

    Only volume and interior-interface contributions are included; boundary
    tractions are added by :func:`apply_boundary_conditions`.
    """
    _check_bases(grid, vbasis, pbasis)
    nu, npr = vbasis.size, pbasis.size
    edges = grid.dual_edges
    dx = grid.dx
    xq, wq = gauss_quadrature(vbasis.quadrature_points() + 1)
    store = ([], [], [])
    for i in range(grid.n + 1):
        h = edges[i + 1] - edges[i]
        for j, lo, hi in grid.overlap_pieces(i):
            xs = lo + (hi - lo) * xq
            q = _axial_flux_weights(grid, vbasis, xs, (xs - edges[i]) / h, h)
            dtheta = pbasis.x_basis.derivatives((xs - j * dx) / dx) / dx
            block = np.einsum("q,qa,qk->ak", (hi - lo) * wq, q, dtheta)
            _add_block(store, i * nu, j * npr, grid.dt * block)
        if 1 <= i <= grid.n - 1:
            # primal interface x = i*dx lies at the centre of dual cell i
            xg = i * dx
            q = _axial_flux_weights(grid, vbasis, xg, (xg - edges[i]) / h, h)[0]
            right = pbasis.x_basis.values([0.0])[0]
            left = pbasis.x_basis.values([1.0])[0]
            _add_block(store, i * nu, i * npr, grid.dt * np.outer(q, right))
            _add_block(store, i * nu, (i - 1) * npr, -grid.dt * np.outer(q, left))
    shape = ((grid.n + 1) * nu, grid.n * npr)
    return _coo(*store, shape)


def assemble_divergence(grid: StaggeredGrid, vbasis: TensorBasis, pbasis: TensorBasis) -> sp.csr_matrix:
    """Negated weak divergence of the axial velocity tested by pressure.

    With this sign ``D`` equals ``G.T / dt`` except in the columns of the
    inlet and outlet velocity nodes.
    """
    _check_bases(grid, vbasis, pbasis)
    nu, npr = vbasis.size, pbasis.size
    edges = grid.dual_edges
    dx = grid.dx
    xq, wq = gauss_quadrature(vbasis.quadrature_points() + 1)
    store = ([], [], [])
    for i in range(grid.n + 1):
        h = edges[i + 1] - edges[i]
        for j, lo, hi in grid.overlap_pieces(i):
            xs = lo + (hi - lo) * xq
            dq = _axial_flux_derivative(grid, vbasis, xs, (xs - edges[i]) / h, h)
            theta = pbasis.x_basis.values((xs - j * dx) / dx)
            block = np.einsum("q,qk,qa->ka", (hi - lo) * wq, theta, dq)
            _add_block(store, j * npr, i * nu, -block)
    # dual interfaces sit at primal centres: jump of the axial flux
    theta_mid = pbasis.x_basis.values([0.5])[0]
    for j in range(grid.n):
        xs = grid.primal_centers[j]
        hl = edges[j + 1] - edges[j]
        hr = edges[j + 2] - edges[j + 1]
        q_left = _axial_flux_weights(grid, vbasis, xs, 1.0, hl)[0]
        q_right = _axial_flux_weights(grid, vbasis, xs, 0.0, hr)[0]
        _add_block(store, j * npr, (j + 1) * nu, -np.outer(theta_mid, q_right))
        _add_block(store, j * npr, j * nu, np.outer(theta_mid, q_left))
    shape = (grid.n * npr, (grid.n + 1) * nu)
    return _coo(*store, shape)


def assemble_pressure_penalty(grid: StaggeredGrid, pbasis: TensorBasis) -> sp.csr_matrix:
    """Pressure jump penalty with factor ``dx``, entering with a minus sign."""
    if pbasis.role != "pressure":
        raise ValueError("pressure penalty needs a pressure basis")
    npr = pbasis.size
    left = pbasis.x_basis.values([1.0])[0]
    right = pbasis.x_basis.values([0.0])[0]
    store = ([], [], [])
    for j in range(1, grid.n):
        xg = j * grid.dx
        jump = np.concatenate([left, -right])
        block = -grid.dx * float(grid.area(xg)) * np.outer(jump, jump)
        _add_block(store, (j - 1) * npr, (j - 1) * npr, block)
    size = grid.n * npr
    return _coo(*store, (size, size))


# ---------------------------------------------------------------------------
# boundary conditions


def boundary_rows(grid: StaggeredGrid, vbasis: TensorBasis) -> tuple[np.ndarray, np.ndarray]:
    """Velocity rows of the inlet (x=0) and outlet (x=L) nodes."""
    if vbasis.nx < 1:
        raise ValueError("boundary nodes need an axial degree nx >= 1")
    nt = vbasis.n_transverse
    inlet = np.arange(nt)
    outlet = grid.n * vbasis.size + vbasis.nx * nt + np.arange(nt)
    return inlet, outlet


def _end_traction(grid, vbasis, pbasis, at_outlet):
    nu, npr = vbasis.size, pbasis.size
    if at_outlet:
        i, j, x, xi_v, xi_p, sign = grid.n, grid.n - 1, grid.length, 1.0, 1.0, -1.0
    else:
        i, j, x, xi_v, xi_p, sign = 0, 0, 0.0, 0.0, 0.0, 1.0
    q = _axial_flux_weights(grid, vbasis, x, xi_v, 1.0)[0]
    theta = pbasis.x_basis.values([xi_p])[0]
    block = sign * grid.dt * np.outer(q, theta)
    store = ([], [], [])
    _add_block(store, i * nu, j * npr, block)
    return _coo(*store, ((grid.n + 1) * nu, grid.n * npr)), q


def outlet_traction(grid, vbasis, pbasis) -> sp.csr_matrix:
    """Correction to ``G`` making the outlet a natural (traction) boundary."""
    return _end_traction(grid, vbasis, pbasis, True)[0]


def inlet_traction(grid, vbasis, pbasis) -> sp.csr_matrix:
    """Correction to ``G`` making the inlet a natural (traction) boundary."""
    return _end_traction(grid, vbasis, pbasis, False)[0]


def parabolic_inlet(flow_rate: float, width: float, height: float | None = None):
    """Poiseuille profile in reference section coordinates.

    In 2D the flow rate is per unit depth (m^2/s) and the profile is
    ``6 Q / d * eta (1 - eta)``; in 3D the separable profile
    ``36 Q / A * eta (1 - eta) zeta (1 - zeta)`` carries ``Q`` in m^3/s.
    """
    if height is None:
        peak = 6.0 * flow_rate / width

        def profile(eta, zeta=None):
            eta = np.asarray(eta, dtype=float)
            return peak * eta * (1.0 - eta)
    else:
        peak = 36.0 * flow_rate / (width * height)

        def profile(eta, zeta=None):
            eta = np.asarray(eta, dtype=float)
            zeta = np.asarray(zeta, dtype=float)
            return peak * eta * (1.0 - eta) * zeta * (1.0 - zeta)
    return profile


def _nodal_profile(vbasis, profile) -> np.ndarray:
    nt = vbasis.n_transverse
    if callable(profile):
        nodes = vbasis.nodes[:nt]
        if vbasis.is_3d:
            vals = profile(nodes[:, 1], nodes[:, 2])
        else:
            vals = profile(nodes[:, 1])
        vals = np.asarray(vals, dtype=float) * np.ones(nt)
    else:
        vals = np.asarray(profile, dtype=float).ravel()
    if vals.size != nt:
        raise ValueError(f"inlet profile has {vals.size} values, the section has {nt} nodes")
    if not np.all(np.isfinite(vals)):
        raise ValueError("inlet profile contains non-finite values")
    return vals


def poiseuille_state(grid: StaggeredGrid, vbasis: TensorBasis, flow_rate: float) -> np.ndarray:
    """Velocity coefficients of the local Poiseuille profile at every node.

    The profile is rescaled with the local section so the flow rate is
    constant along the channel.
    """
    nt = vbasis.n_transverse
    tnodes = vbasis.nodes[:nt]
    out = np.empty((grid.n + 1, vbasis.n_axial, nt))
    edges = grid.dual_edges
    for i in range(grid.n + 1):
        xs = edges[i] + vbasis.x_basis.nodes * (edges[i + 1] - edges[i])
        for ix, x in enumerate(xs):
            w = float(grid.width(x))
            hgt = None if grid.height is None else float(grid.height(x))
            prof = parabolic_inlet(flow_rate, w, hgt)
            out[i, ix] = prof(tnodes[:, 1]) if hgt is None else prof(tnodes[:, 1], tnodes[:, 2])
    return out.ravel()


@dataclass(frozen=True)
class SaddleSystem:
    """Assembled blocks of the velocity-pressure system.

    The unscaled system reads ``[[N, G], [D, E]] [u; p] = [rhs_u; rhs_p]``.
    :meth:`scaled_matrix` returns the column-scaled form acting on
    ``(u, dt * p)``, whose blocks are all of comparable magnitude.
    """

    N: sp.csr_matrix
    G: sp.csr_matrix
    D: sp.csr_matrix
    E: sp.csr_matrix
    rhs_u: np.ndarray
    rhs_p: np.ndarray
    grid: StaggeredGrid
    vbasis: TensorBasis
    pbasis: TensorBasis
    rho: float
    mu: float
    alpha0: float
    M: sp.csr_matrix = field(repr=False)
    L: sp.csr_matrix = field(repr=False)
    bc_rows: dict = field(default_factory=dict)
    inlet_values: np.ndarray | None = None
    outlet_pressure: float = 0.0
    inlet_mode: str = "none"
    outlet_rhs: np.ndarray | None = field(default=None, repr=False)

    @property
    def dt(self) -> float:
        return self.grid.dt

    @property
    def n_velocity(self) -> int:
        return self.N.shape[0]

    @property
    def n_pressure(self) -> int:
        return self.E.shape[0]

    @property
    def all_bc_rows(self) -> np.ndarray:
        if not self.bc_rows:
            return np.zeros(0, dtype=int)
        return np.unique(np.concatenate([np.asarray(v, dtype=int) for v in self.bc_rows.values()]))

    @property
    def interior_rows(self) -> np.ndarray:
        mask = np.ones(self.n_velocity, dtype=bool)
        mask[self.all_bc_rows] = False
        return np.flatnonzero(mask)

    def scaled_matrix(self) -> sp.csr_matrix:
        """``[[N, G/dt], [D, E/dt]]``."""
        return sp.bmat([[self.N, self.G / self.dt], [self.D, self.E / self.dt]], format="csr")

    def scaled_rhs(self) -> np.ndarray:
        return np.concatenate([self.rhs_u, self.rhs_p])

    def split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Velocity and physical pressure from a scaled-system solution."""
        nu = self.n_velocity
        return x[:nu], x[nu:] / self.dt

    def momentum_rhs(self, b_u: np.ndarray) -> np.ndarray:
        """Apply the boundary rows to an explicit momentum right-hand side."""
        b = np.array(b_u, dtype=float, copy=True)
        if b.shape != (self.n_velocity,):
            raise ValueError(f"momentum rhs must have length {self.n_velocity}")
        if self.outlet_rhs is not None:
            b += self.outlet_rhs
        if self.inlet_mode == "dirichlet":
            rows = self.bc_rows["inlet"]
            b[rows] = self.N.diagonal()[rows] * self.inlet_values
        return b

    def with_rhs(self, b_u: np.ndarray, rhs_p: np.ndarray | None = None) -> "SaddleSystem":
        rp = np.zeros(self.n_pressure) if rhs_p is None else np.asarray(rhs_p, dtype=float)
        return replace(self, rhs_u=self.momentum_rhs(b_u), rhs_p=rp)

    def dirichlet_projected(self, matrix: sp.spmatrix) -> sp.csr_matrix:
        """Copy of a velocity operator with inlet Dirichlet rows reduced to their diagonal."""
        if self.inlet_mode != "dirichlet":
            return sp.csr_matrix(matrix)
        return _replace_rows(sp.csr_matrix(matrix), self.bc_rows["inlet"])


def _replace_rows(A: sp.csr_matrix, rows: np.ndarray, keep_diagonal=True) -> sp.csr_matrix:
    A = sp.lil_matrix(A)
    for r in rows:
        d = A[r, r]
        A.rows[r] = []
        A.data[r] = []
        if keep_diagonal:
            A[r, r] = d
    return A.tocsr()


def apply_boundary_conditions(system: SaddleSystem, inlet_profile=None, outlet_pressure: float = 0.0,
                              inlet: str = "dirichlet") -> SaddleSystem:
    """Insert the inlet and outlet boundary rows.

    Parameters
    ----------
    system : SaddleSystem
        System assembled without boundary treatment.
    inlet_profile : callable or array_like, optional
        Axial velocity on the inlet section, either as a function of the
        reference section coordinates or as nodal values.  ``None`` means zero.
    outlet_pressure : float
        Prescribed outlet pressure (normal stress).
    inlet : {"dirichlet", "traction"}
        ``"dirichlet"`` replaces the inlet rows of ``N`` by their diagonal and
        zeroes them in ``G``; ``"traction"`` treats the inlet like the outlet,
        which keeps the system symmetric up to the column scaling.

    Returns
    -------
    SaddleSystem
        New system; ``bc_rows`` lists the modified inlet and outlet rows.
    """
    if system.inlet_mode != "none":
        raise ValueError("boundary conditions were already applied to this system")
    grid, vb, pb = system.grid, system.vbasis, system.pbasis
    rows_in, rows_out = boundary_rows(grid, vb)

    out_corr, q_out = _end_traction(grid, vb, pb, True)
    G = system.G + out_corr
    outlet_rhs = np.zeros(system.n_velocity)
    outlet_rhs[grid.n * vb.size: (grid.n + 1) * vb.size] = -grid.dt * outlet_pressure * q_out

    N = system.N
    if inlet == "dirichlet":
        values = _nodal_profile(vb, inlet_profile if inlet_profile is not None else np.zeros(vb.n_transverse))
        N = _replace_rows(N, rows_in)
        G = _replace_rows(G, rows_in, keep_diagonal=False)
    elif inlet == "traction":
        if inlet_profile is not None:
            raise ValueError("a traction inlet takes no velocity profile")
        values = None
        G = G + inlet_traction(grid, vb, pb)
    else:
        raise ValueError(f"unknown inlet treatment {inlet!r}")
    G = sp.csr_matrix(G)
    G.eliminate_zeros()

    new = replace(system, N=N, G=G, bc_rows={"inlet": rows_in, "outlet": rows_out},
                  inlet_values=values, outlet_pressure=float(outlet_pressure),
                  inlet_mode=inlet, outlet_rhs=outlet_rhs)
    return replace(new, rhs_u=new.momentum_rhs(system.rhs_u))


def assemble_saddle_system(grid: StaggeredGrid, vbasis: TensorBasis | None = None,
                           pbasis: TensorBasis | None = None, rho: float = 1000.0, mu: float = 1e-3,
                           alpha0: float = 1.0, inlet_profile=None, outlet_pressure: float = 0.0,
                           inlet: str | None = "dirichlet", transverse: bool = True) -> SaddleSystem:
    """Assemble ``N = M + L``, ``G``, ``D``, ``E`` and the boundary rows.

    ``inlet=None`` skips the boundary treatment entirely and returns the raw
    blocks.  The momentum right-hand side starts at zero; use
    :meth:`SaddleSystem.with_rhs` to insert an explicit one.
    """
    if vbasis is None:
        vbasis = lagrange_tensor_basis(1, 3, 2 if grid.is_3d else None, "velocity")
    if pbasis is None:
        pbasis = lagrange_tensor_basis(vbasis.nx, 0, None, "pressure")
    if not rho > 0 or not mu >= 0:
        raise ValueError("density must be positive and viscosity nonnegative")
    M = assemble_mass(grid, vbasis, rho)
    L = assemble_laplacian(grid, vbasis, mu, alpha0, transverse=transverse)
    G = assemble_gradient(grid, vbasis, pbasis)
    D = assemble_divergence(grid, vbasis, pbasis)
    E = assemble_pressure_penalty(grid, pbasis)
    N = (M + L).tocsr()
    system = SaddleSystem(N=N, G=G, D=D, E=E, rhs_u=np.zeros(N.shape[0]), rhs_p=np.zeros(E.shape[0]),
                          grid=grid, vbasis=vbasis, pbasis=pbasis, rho=float(rho), mu=float(mu),
                          alpha0=float(alpha0), M=M, L=L)
    if inlet is None:
        return system
    if inlet == "traction":
        return apply_boundary_conditions(system, None, outlet_pressure, inlet="traction")
    return apply_boundary_conditions(system, inlet_profile, outlet_pressure, inlet=inlet)


# ---------------------------------------------------------------------------
# convection


class _ConvectionData:
    def __init__(self, grid, basis):
        edges = grid.dual_edges
        self.cells = [_CellGeometry(grid, basis, edges[i], edges[i + 1]) for i in range(grid.n + 1)]
        self.faces = []
        for i in range(grid.n):
            xf = edges[i + 1]
            vm, _, wf = _face_traces(grid, basis, xf, 1.0, edges[i + 1] - edges[i])
            vp, _, _ = _face_traces(grid, basis, xf, 0.0, edges[i + 2] - edges[i + 1])
            self.faces.append((vm, vp, wf))
        self.inlet = _face_traces(grid, basis, 0.0, 0.0, edges[1] - edges[0])
        self.outlet = _face_traces(grid, basis, grid.length, 1.0, edges[-1] - edges[-2])


def convective_tendency(grid: StaggeredGrid, basis: TensorBasis, u_state, rho: float,
                        advecting=None, _data: _ConvectionData | None = None) -> np.ndarray:
    """Weak form of ``-rho d(a u)/dx`` with Rusanov fluxes at dual interfaces.

    ``a`` is the advecting velocity (``u_state`` itself when omitted).  The
    inlet flux uses the inlet nodal values and the outlet is transmissive.
    """
    data = _data if _data is not None else _ConvectionData(grid, basis)
    nu = basis.size
    u = np.asarray(u_state, dtype=float).reshape(grid.n + 1, nu)
    a = u if advecting is None else np.asarray(advecting, dtype=float).reshape(grid.n + 1, nu)
    out = np.zeros_like(u)
    for i, geo in enumerate(data.cells):
        uq = geo.val @ u[i]
        aq = geo.val @ a[i]
        out[i] += np.einsum("qt,qt,qta->a", geo.weights, aq * uq, geo.dx)
    for i, (vm, vp, wf) in enumerate(data.faces):
        um, up = vm @ u[i], vp @ u[i + 1]
        am, ap = vm @ a[i], vp @ a[i + 1]
        lam = 2.0 * np.maximum(np.abs(am), np.abs(ap))
        flux = 0.5 * (am * um + ap * up) - 0.5 * lam * (up - um)
        out[i] -= (wf * flux) @ vm
        out[i + 1] += (wf * flux) @ vp
    vin, _, win = data.inlet
    out[0] += (win * (vin @ a[0]) * (vin @ u[0])) @ vin
    vout, _, wout = data.outlet
    out[-1] -= (wout * (vout @ a[-1]) * (vout @ u[-1])) @ vout
    return rho * out.ravel()


def convective_rhs(grid: StaggeredGrid, basis: TensorBasis, u_state, rho: float, dt: float | None = None,
                   advecting=None, dirichlet=None, mass=None) -> np.ndarray:
    """Explicit convective contribution ``b_u(u)`` to the momentum equation.

    Without ``dt`` this is a single evaluation of the discrete flux
    divergence.  With ``dt`` the state is advanced by the three-stage TVD
    Runge-Kutta scheme over one step and the equivalent tendency
    ``M (u_rk - u) / dt`` is returned, so that ``M u + dt * b_u`` is the
    explicitly convected momentum.

    Parameters
    ----------
    dirichlet : tuple(rows, values), optional
        Nodal values held fixed between Runge-Kutta stages (the inlet).
    mass : sparse matrix, optional
        Precomputed ``assemble_mass(grid, basis, rho)``.
    """
    data = _ConvectionData(grid, basis)
    u0 = np.asarray(u_state, dtype=float).ravel()
    if u0.size != (grid.n + 1) * basis.size:
        raise ValueError("velocity state has the wrong length")
    if dt is None:
        return convective_tendency(grid, basis, u0, rho, advecting, data)
    M = mass if mass is not None else assemble_mass(grid, basis, rho)
    solve = spla.factorized(sp.csc_matrix(M))

    def stage(v):
        w = v + dt * solve(convective_tendency(grid, basis, v, rho, advecting, data))
        if dirichlet is not None:
            w[dirichlet[0]] = dirichlet[1]
        return w

    u1 = stage(u0)
    u2 = 0.75 * u0 + 0.25 * stage(u1)
    u3 = u0 / 3.0 + 2.0 / 3.0 * stage(u2)
    return M @ (u3 - u0) / dt


# ---------------------------------------------------------------------------
# export


def export_matrix_market(path, matrix, comment: str = "") -> Path:
    """Write a sparse matrix in MatrixMarket coordinate format."""
    path = Path(path)
    scipy.io.mmwrite(str(path), sp.coo_matrix(matrix), comment=comment)
    if path.suffix != ".mtx" and not path.exists():
        path = path.with_name(path.name + ".mtx")
    return path


def export_vector_csv(path, vector) -> Path:
    """Write one value per line."""
    path = Path(path)
    np.savetxt(path, np.asarray(vector).ravel(), fmt="%.17g")
    return path


def read_vector_csv(path) -> np.ndarray:
    return np.atleast_1d(np.loadtxt(path, dtype=float))
