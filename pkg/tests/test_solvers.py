import json
from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from dgpipe.experiments import Scenario, initial_state
from dgpipe.solvers import (
    PRECONDITIONERS,
    ConvergenceError,
    FlowState,
    LevelConfig,
    SaddleSolver,
    SolverConfig,
    SolverReport,
    ZeroPivotError,
    build_precond_Cn,
    build_precond_Pn,
    cg,
    fgmres,
    gmres,
    ilu0,
    picard_timestep,
    schur_preconditioner_apply,
)
from dgpipe.structured import SingularBlockError
from dgpipe.symbols import PhysicalParams

WATER = PhysicalParams(d=0.025, mu=1e-3, rho=1000.0, c=1.0)


def tridiag(n, lo=-1.0, mid=4.0, hi=-1.0):
    return sp.diags([lo * np.ones(n - 1), mid * np.ones(n), hi * np.ones(n - 1)], [-1, 0, 1], format="csr")


@pytest.fixture(scope="module")
def pipe16():
    return Scenario(n=16).system()


def test_gmres_identity_one_iteration():
    b = np.arange(1.0, 6.0)
    x, res = gmres(np.eye(5), b)
    np.testing.assert_allclose(x, b)
    assert res.iterations == 1 and res.converged


def test_gmres_diagonal_finishes_in_dimension_steps():
    A = np.diag(np.arange(1.0, 9.0))
    b = np.ones(8)
    x, res = gmres(A, b, tol=1e-12)
    assert res.converged and res.iterations <= 8
    np.testing.assert_allclose(A @ x, b, atol=1e-10)


def test_gmres_zero_rhs_and_history():
    x, res = gmres(np.eye(3), np.zeros(3))
    np.testing.assert_array_equal(x, 0.0)
    assert res.iterations == 0 and res.converged
    _, res = gmres(tridiag(30), np.ones(30), tol=1e-10)
    assert np.all(np.diff(res.history) <= 1e-15)


@settings(max_examples=15, deadline=None)
@given(st.integers(5, 40), st.integers(0, 1000))
def test_gmres_restart_and_preconditioner(n, seed):
    rng = np.random.default_rng(seed)
    A = tridiag(n) + sp.diags(rng.uniform(0, 1, n))
    b = rng.standard_normal(n)
    inv_diag = 1.0 / A.diagonal()
    x, res = gmres(A, b, lambda v: inv_diag * v, tol=1e-10, maxiter=400, restart=5)
    assert res.converged
    np.testing.assert_allclose(A @ x, b, atol=1e-8 * np.linalg.norm(b))


def test_fgmres_accepts_variable_preconditioner():
    A = tridiag(40)
    b = np.ones(40)
    calls = []

    def varying(v):
        calls.append(1)
        return v / (4.0 + 0.1 * (len(calls) % 3))

    x, res = fgmres(A, b, varying, tol=1e-10)
    assert res.converged
    np.testing.assert_allclose(A @ x, b, atol=1e-8)


def test_gmres_reports_non_convergence():
    A = tridiag(50, mid=2.0)
    _, res = gmres(A, np.ones(50), tol=1e-12, maxiter=3)
    assert not res.converged and res.iterations == 3


def test_cg_matches_direct_solve():
    A = tridiag(25)
    b = np.linspace(-1, 1, 25)
    x, res = cg(A, b, tol=1e-12)
    assert res.converged
    np.testing.assert_allclose(x, np.linalg.solve(A.toarray(), b), atol=1e-10)


def test_cg_detects_indefinite_operator():
    _, res = cg(np.diag([1.0, -1.0]), np.ones(2), tol=1e-12)
    assert not res.converged


def test_ilu0_is_exact_on_tridiagonal():
    A = tridiag(12)
    fac = ilu0(A)
    np.testing.assert_allclose((fac.L @ fac.U).toarray(), A.toarray(), atol=1e-14)
    b = np.arange(12.0)
    np.testing.assert_allclose(fac.solve(b), np.linalg.solve(A.toarray(), b), atol=1e-12)


def test_ilu0_identity_and_pattern():
    fac = ilu0(sp.identity(6))
    np.testing.assert_allclose(fac.solve(np.arange(6.0)), np.arange(6.0))
    A = sp.random(30, 30, density=0.15, random_state=3) + 10 * sp.identity(30)
    fac = ilu0(A)
    pattern = (abs(A) > 0).astype(int)
    assert ((abs(fac.L - sp.identity(30)) > 0).astype(int) - pattern).max() <= 0
    assert ((abs(fac.U) > 0).astype(int) - pattern).max() <= 0


def test_ilu0_zero_pivot():
    with pytest.raises(ZeroPivotError):
        ilu0(sp.csr_matrix([[0.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(ZeroPivotError):
        ilu0(sp.csr_matrix([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(ValueError):
        ilu0(sp.csr_matrix(np.ones((2, 3))))


def test_ilu0_accelerates_velocity_solves():
    system = Scenario(n=80).system()
    b = np.random.default_rng(0).standard_normal(system.n_velocity)
    fac = ilu0(system.N)
    _, plain = gmres(system.N, b, tol=1e-5, maxiter=500)
    _, prec = gmres(system.N, b, fac.solve, tol=1e-5, maxiter=500)
    assert prec.converged and prec.iterations < plain.iterations


def test_schur_circulant_corrected_is_nonsingular():
    params = WATER.with_(dx=1 / 64)
    pre = build_precond_Cn(params, 64)
    assert np.isfinite(pre(np.ones(128))).all()
    eig = np.linalg.eigvals(pre.matrix())
    assert np.abs(eig).min() > 1e-12
    with pytest.raises(SingularBlockError):
        build_precond_Cn(params, 64, correction=False)


def test_dg_circulant_is_spd():
    params = WATER.with_(dx=1 / 32)
    C = build_precond_Pn(params, 32).matrix()
    np.testing.assert_allclose(C, C.T, atol=1e-14 * np.abs(C).max())
    assert np.linalg.eigvalsh(C).min() > 0
    with pytest.raises(SingularBlockError):
        build_precond_Pn(params, 32, correction=False)


def test_width_modes():
    widths = np.linspace(0.02, 0.01, 16)
    params = WATER.with_(dx=1 / 16)
    diag = build_precond_Cn(params, 16, "diagonal", widths)
    assert diag.left.size == 32
    avg = build_precond_Cn(params, 16, "average", widths)
    ref = build_precond_Cn(params.with_(d=float(widths.mean())), 16)
    x = np.random.default_rng(1).standard_normal(32)
    np.testing.assert_allclose(avg(x), ref(x))
    with pytest.raises(ValueError):
        build_precond_Cn(params, 16, "diagonal", widths[:5])
    with pytest.raises(ValueError):
        build_precond_Cn(params, 16, "average")
    with pytest.raises(ValueError):
        build_precond_Cn(params, 16, "median", widths)


def test_exact_preconditioner_converges_immediately():
    system = Scenario(n=8).system()
    solver = SaddleSolver(system, SolverConfig(precond="exact"))
    u, p, res = solver.solve()
    assert res.converged and res.iterations <= 2
    x = np.concatenate([u, system.dt * p])
    rel = np.linalg.norm(system.scaled_matrix() @ x - system.scaled_rhs()) / np.linalg.norm(system.scaled_rhs())
    assert rel < 1e-12


def test_zero_residual_gives_zero_correction(pipe16):
    solver = SaddleSolver(pipe16)
    out = schur_preconditioner_apply(solver, np.zeros(pipe16.n_velocity + pipe16.n_pressure))
    np.testing.assert_array_equal(out, 0.0)
    assert not solver.report.counts["K_N"]


@pytest.mark.parametrize("precond", PRECONDITIONERS)
def test_every_preconditioner_solves_the_system(pipe16, precond):
    solver = SaddleSolver(pipe16, SolverConfig(precond=precond))
    u, p, res = solver.solve()
    assert res.converged
    x = np.concatenate([u, pipe16.dt * p])
    b = pipe16.scaled_rhs()
    assert np.linalg.norm(pipe16.scaled_matrix() @ x - b) <= 1e-8 * np.linalg.norm(b) * 1.0001
    if precond == "lsc":
        assert solver.report.counts["K_DG"]
    elif precond != "exact":
        assert solver.report.counts["K_S"] and not solver.report.counts["K_DG"]


def test_lsc_is_exact_for_identity_velocity_block(pipe16):
    # with N = I and E = 0 the Schur complement is -D G / dt, which LSC inverts exactly
    system = replace(pipe16, N=sp.identity(pipe16.n_velocity, format="csr"),
                     E=sp.csr_matrix(pipe16.E.shape))
    solver = SaddleSolver(system, SolverConfig(precond="lsc").with_tolerances(dg=1e-12))
    r = np.random.default_rng(4).standard_normal(system.n_pressure)
    S = -(system.D @ system.G).toarray() / system.dt
    np.testing.assert_allclose(S @ solver.lsc_apply(r), r, atol=1e-8 * np.linalg.norm(r))


def test_picard_keeps_poiseuille_state():
    scenario = Scenario(n=16, initial="poiseuille")
    system = scenario.system()
    solver = SaddleSolver(system)
    state = initial_state(system, scenario.flow_rate, "poiseuille")
    new, report = picard_timestep(state, solver)
    assert 1 <= report.picard[0] <= 2
    np.testing.assert_allclose(new.u, state.u, rtol=1e-8, atol=1e-10 * np.abs(state.u).max())
    assert new.time == pytest.approx(system.dt)


def test_picard_with_zero_inflow_stays_at_rest():
    scenario = Scenario(n=16, flow_rate=0.0)
    system = scenario.system()
    solver = SaddleSolver(system)
    new, report = picard_timestep(initial_state(system, 0.0), solver)
    np.testing.assert_array_equal(new.u, 0.0)
    assert report.picard == [1]


def test_picard_raises_on_inner_failure(pipe16):
    config = replace(SolverConfig(), outer=LevelConfig(1e-12, 1))
    solver = SaddleSolver(pipe16, config)
    state = initial_state(pipe16, 5e-6)
    with pytest.raises(ConvergenceError):
        picard_timestep(state, solver)


def test_solver_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        SolverConfig(precond="jacobi")
    with pytest.raises(ValueError):
        LevelConfig(0.0, 10)
    with pytest.raises(ValueError):
        LevelConfig(1e-3, 0)
    config = SolverConfig(precond="lsc", schur_constant="3d").with_tolerances(outer=1e-9, dg=1e-6)
    assert config.outer.tol == 1e-9 and config.dg.tol == 1e-6 and config.schur.tol == 1e-6
    assert SolverConfig.from_dict(json.loads(json.dumps(config.to_dict()))) == config


def test_solver_defaults():
    config = SolverConfig()
    assert (config.outer.tol, config.outer.maxiter) == (1e-8, 50)
    assert (config.schur.tol, config.schur.maxiter) == (1e-6, 100)
    assert config.velocity.tol == 1e-5 and config.dg.tol == 1e-5
    assert config.precond == "circulant-dx"


def test_report_summary_and_range_text(tmp_path):
    report = SolverReport()
    from dgpipe.solvers import KrylovResult

    for it in (7, 5, 6):
        report.record("K_S", KrylovResult(it, True, 1e-7))
    assert report.range_text("K_S") == "5 -- 7"
    assert report.range_text("K_DG") == "-"
    report.record("K_S", KrylovResult(100, False, 1e-3))
    assert report.range_text("K_S") == "no conv."
    report.picard.extend([3, 2])
    summary = report.summary()
    assert summary["K_S"]["max"] == 100 and summary["picard"]["mean"] == 2.5
    text = report.to_json(tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text()) == json.loads(text)


def test_flow_state_defaults():
    state = FlowState(np.zeros(3), np.zeros(2))
    assert state.time == 0.0
