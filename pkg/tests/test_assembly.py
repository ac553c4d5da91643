import numpy as np
import pytest
import scipy.io
from hypothesis import given, settings
from hypothesis import strategies as st

from dgpipe.assembly import (
    assemble_saddle_system,
    boundary_rows,
    convective_rhs,
    export_matrix_market,
    export_vector_csv,
    parabolic_inlet,
    poiseuille_state,
    read_vector_csv,
)
from dgpipe.grid_basis import LinearProfile, build_staggered_grid, lagrange_tensor_basis, transverse_integrals

G0 = np.array([[3, 1], [3, 1], [1, 3], [1, 3]])
X_BLOCK = np.array([[1, -1 / 8], [-1 / 8, 1]])


@pytest.fixture(scope="module")
def unit_system():
    """n=8, unit width, viscosity, density and CFL ratio, no transverse viscous term."""
    grid = build_staggered_grid(8, 1.0, 1.0, 1 / 8)
    return assemble_saddle_system(grid, rho=1.0, mu=1.0, inlet=None, transverse=False)


@pytest.fixture(scope="module")
def pipe10():
    return assemble_saddle_system(build_staggered_grid(10, 1.0, 0.025, 0.1))


def test_laplacian_stencil(unit_system):
    L = unit_system.L.toarray() / (27 / 70)
    np.testing.assert_allclose(L[8:12, 8:12], np.kron(np.eye(2), X_BLOCK), atol=1e-13)
    np.testing.assert_allclose(L[8:12, 12:16], np.kron(np.eye(2), [[-1 / 2, 1 / 16], [1 / 16, -1 / 2]]), atol=1e-13)
    np.testing.assert_allclose(L[8:12, 16:20], 0.0, atol=1e-14)


def test_mass_stencil(unit_system):
    dx = unit_system.grid.dx
    block = np.array([[1, -1 / 8, 1 / 2, -1 / 16], [-1 / 8, 1, -1 / 16, 1 / 2],
                      [1 / 2, -1 / 16, 1, -1 / 8], [-1 / 16, 1 / 2, -1 / 8, 1]])
    np.testing.assert_allclose(unit_system.M.toarray()[8:12, 8:12] / (9 / 70 * dx), block, atol=1e-13)
    # half-length end cells carry half the mass
    np.testing.assert_allclose(unit_system.M.toarray()[:4, :4] / (9 / 70 * dx), block / 2, atol=1e-13)


def test_gradient_and_divergence_stencils(unit_system):
    dt = unit_system.dt
    G = unit_system.G.toarray()
    D = unit_system.D.toarray()
    np.testing.assert_allclose(G[16:20, 6:10] / (3 / 64 * dt), np.hstack([-G0, G0]), atol=1e-13)
    np.testing.assert_allclose(D[6:8, 12:24] / (3 / 64), np.hstack([G0.T, -G0.T, 0 * G0.T]), atol=1e-13)


def test_pressure_penalty_stencil(unit_system):
    E = unit_system.E.toarray() / unit_system.grid.dx
    np.testing.assert_allclose(E[4:6, 2:8], [[0, 1, -1, 0, 0, 0], [0, 0, 0, -1, 1, 0]], atol=1e-14)


def test_block_sizes(pipe10):
    assert pipe10.N.shape == (44, 44)
    assert pipe10.G.shape == (44, 20)
    assert pipe10.D.shape == (20, 44)
    assert pipe10.E.shape == (20, 20)
    assert pipe10.scaled_matrix().shape == (64, 64)
    assert pipe10.n_velocity == 44 and pipe10.n_pressure == 20


def test_divergence_is_scaled_gradient_transpose_off_boundary():
    grid = build_staggered_grid(10, 1.0, 0.025, 0.1)
    raw = assemble_saddle_system(grid, inlet=None)
    diff = np.abs(raw.D.toarray() - raw.G.toarray().T / grid.dt).max(axis=0)
    ends = np.concatenate(boundary_rows(grid, raw.vbasis))
    assert set(np.flatnonzero(diff > 1e-12)) <= set(ends)
    # natural conditions on both ends restore the exact relation
    both = assemble_saddle_system(grid, inlet="traction")
    np.testing.assert_allclose(both.D.toarray(), both.G.toarray().T / grid.dt, atol=1e-14)


def test_velocity_block_spd_off_boundary(pipe10):
    N = pipe10.N.toarray()
    rows = pipe10.interior_rows
    inner = N[np.ix_(rows, rows)]
    np.testing.assert_allclose(inner, inner.T, atol=1e-14)
    assert np.linalg.eigvalsh(inner).min() > 0


def test_pressure_penalty_nsd_with_constant_kernel(pipe10):
    E = pipe10.E.toarray()
    np.testing.assert_allclose(E, E.T, atol=0)
    assert np.linalg.eigvalsh(E).max() < 1e-14
    np.testing.assert_allclose(E @ np.ones(E.shape[0]), 0.0, atol=1e-15)


def test_boundary_rows(pipe10):
    rows_in, rows_out = boundary_rows(pipe10.grid, pipe10.vbasis)
    np.testing.assert_array_equal(rows_in, [0, 1])
    np.testing.assert_array_equal(rows_out, [42, 43])
    np.testing.assert_array_equal(pipe10.all_bc_rows, [0, 1, 42, 43])
    N = pipe10.N.toarray()
    G = pipe10.G.toarray()
    for r in rows_in:
        assert np.count_nonzero(N[r]) == 1 and N[r, r] > 0
        assert not G[r].any()


def test_dirichlet_inlet_rhs(pipe10):
    profile = parabolic_inlet(1e-4, 0.025)
    system = assemble_saddle_system(pipe10.grid, inlet_profile=profile)
    x = system.scaled_matrix()
    rows = system.bc_rows["inlet"]
    # the Dirichlet rows decouple and reproduce the nodal inlet values
    sol = np.linalg.solve(x.toarray(), system.scaled_rhs())
    np.testing.assert_allclose(sol[rows], system.inlet_values, rtol=1e-10)
    nodes = system.vbasis.nodes[:2, 1]
    np.testing.assert_allclose(system.inlet_values, 6e-4 / 0.025 * nodes * (1 - nodes))


def test_boundary_conditions_applied_once(pipe10):
    from dgpipe.assembly import apply_boundary_conditions

    with pytest.raises(ValueError):
        apply_boundary_conditions(pipe10)
    with pytest.raises(ValueError):
        assemble_saddle_system(pipe10.grid, inlet="periodic")
    with pytest.raises(ValueError):
        assemble_saddle_system(pipe10.grid, inlet_profile=[1.0, 2.0, 3.0])


def test_poiseuille_flow_rate_constant_along_taper():
    grid = build_staggered_grid(12, 1.0, LinearProfile(0.025, 0.0125, 1.0), 1 / 12)
    vb = lagrange_tensor_basis(1, 3)
    state = poiseuille_state(grid, vb, 2e-4).reshape(grid.n + 1, 2, 2)
    weights = transverse_integrals(vb)
    edges = grid.dual_edges
    for i in range(grid.n + 1):
        for ix, xi in enumerate(vb.x_basis.nodes):
            x = edges[i] + xi * (edges[i + 1] - edges[i])
            # the cubic interpolant integrates the parabola exactly
            assert float(grid.width(x)) * weights @ state[i, ix] == pytest.approx(2e-4, rel=1e-12)


def test_convection_of_zero_and_constant_fields(pipe10):
    vb = pipe10.vbasis
    grid = pipe10.grid
    np.testing.assert_array_equal(convective_rhs(grid, vb, np.zeros(44), 1000.0), 0.0)
    np.testing.assert_allclose(convective_rhs(grid, vb, np.ones(44), 1000.0), 0.0, atol=1e-9)


def test_convection_is_local(pipe10):
    grid, vb = pipe10.grid, pipe10.vbasis
    base = np.random.default_rng(0).uniform(0.1, 0.3, 44)
    bump = base.copy()
    bump[5 * 4:6 * 4] += 0.05
    change = convective_rhs(grid, vb, bump, 1000.0) - convective_rhs(grid, vb, base, 1000.0)
    touched = np.flatnonzero(np.abs(change).reshape(11, 4).max(axis=1) > 0)
    assert set(touched) <= {4, 5, 6}
    assert 5 in touched


@settings(max_examples=10, deadline=None)
@given(st.floats(0.01, 1.0))
def test_rk_convection_preserves_constant_state(value):
    grid = build_staggered_grid(6, 1.0, 0.025, 1 / 6)
    vb = lagrange_tensor_basis(1, 3)
    out = convective_rhs(grid, vb, np.full(28, value), 1000.0, dt=grid.dt)
    np.testing.assert_allclose(out, 0.0, atol=1e-8 * value * value)


def test_convection_rejects_wrong_length(pipe10):
    with pytest.raises(ValueError):
        convective_rhs(pipe10.grid, pipe10.vbasis, np.zeros(10), 1.0)


def test_matrix_market_and_csv_round_trip(tmp_path, pipe10):
    path = export_matrix_market(tmp_path / "A.mtx", pipe10.scaled_matrix(), comment="pipe n=10")
    back = scipy.io.mmread(str(path)).tocsr()
    np.testing.assert_allclose(back.toarray(), pipe10.scaled_matrix().toarray(), rtol=1e-15)
    vec = np.random.default_rng(1).standard_normal(64)
    csv = export_vector_csv(tmp_path / "b.csv", vec)
    np.testing.assert_array_equal(read_vector_csv(csv), vec)


def test_3d_system_sizes():
    grid = build_staggered_grid(4, 1.0, 0.025, 0.25, 0.025)
    system = assemble_saddle_system(grid)
    # one interior node in each transverse direction for nz=2
    assert system.vbasis.size == 4
    assert system.N.shape == (20, 20)
    assert system.E.shape == (8, 8)
    assert len(system.bc_rows["inlet"]) == 2
    cubic = assemble_saddle_system(grid, lagrange_tensor_basis(1, 3, 3, "velocity"))
    assert cubic.N.shape == (40, 40)
