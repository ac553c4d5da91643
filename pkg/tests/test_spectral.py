import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from dgpipe.assembly import assemble_saddle_system
from dgpipe.grid_basis import build_staggered_grid
from dgpipe.spectral import (
    SPECTRUM_MATRICES,
    DenseThresholdError,
    SpectrumReport,
    distribution_discrepancy,
    fit_power_law,
    inertia,
    matrix_spectrum,
    operator_spectrum,
    permutation_indices,
    permutation_matrix,
    permute_to_block_toeplitz,
    resample_samples,
    schur_complement,
    schur_power_law,
)


@pytest.fixture(scope="module")
def pipe8():
    return assemble_saddle_system(build_staggered_grid(8, 1.0, 0.025, 1 / 8))


def test_matrix_spectrum_examples():
    np.testing.assert_allclose(matrix_spectrum(np.diag([3.0, 1.0, 2.0])), [1, 2, 3])
    np.testing.assert_allclose(matrix_spectrum(sp.csr_matrix([[2.0, 1.0], [1.0, 2.0]])), [1, 3], atol=1e-14)
    np.testing.assert_allclose(matrix_spectrum(np.array([[0.0, 2.0], [0.0, 0.0]]), "singular"), [0, 2])
    np.testing.assert_allclose(matrix_spectrum(np.array([[1.0, 5.0], [0.0, 2.0]])), [1, 2])
    with pytest.raises(ValueError):
        matrix_spectrum(np.ones((2, 3)))
    with pytest.raises(ValueError):
        matrix_spectrum(np.eye(2), "cosine")


def test_dense_threshold_error():
    with pytest.raises(DenseThresholdError):
        matrix_spectrum(sp.identity(50), threshold=10)
    with pytest.raises(DenseThresholdError, match="threshold"):
        operator_spectrum("L", 40, threshold=100)


@given(st.floats(-5, 5), st.integers(3, 40))
def test_discrepancy_of_shifted_sequence(shift, size):
    values = np.linspace(0, 1, size)
    sup, mean = distribution_discrepancy(values + shift, values, resample=False)
    assert sup == pytest.approx(abs(shift), abs=1e-12)
    assert mean == pytest.approx(abs(shift), abs=1e-12)


def test_discrepancy_exact_and_mismatch():
    values = np.random.default_rng(0).standard_normal(30)
    assert distribution_discrepancy(values, values[::-1].copy(), resample=False) == (0.0, 0.0)
    with pytest.raises(ValueError):
        distribution_discrepancy(values, values[:10], resample=False)
    with pytest.raises(ValueError):
        distribution_discrepancy(values, values, outliers=30)


def test_discrepancy_outlier_trimming():
    values = np.zeros(10)
    samples = np.zeros(10)
    values[-1] = 7.0
    assert distribution_discrepancy(values, samples, resample=False) == (7.0, 0.7)
    sup, mean = distribution_discrepancy(values, samples, resample=False, outliers=1)
    assert sup == 0.0 and mean == pytest.approx(0.7)


def test_resample_samples():
    np.testing.assert_allclose(resample_samples(np.array([[0.0, 1.0], [2.0, 3.0]]), 7), np.linspace(0, 3, 7))
    np.testing.assert_array_equal(resample_samples([3.0, 1.0], 2), [1.0, 3.0])
    with pytest.raises(ValueError):
        resample_samples([1.0], 4)


def test_schur_complement_negative_definite(pipe8):
    S = schur_complement(pipe8)
    assert S.shape == (16, 16)
    assert matrix_spectrum(S).max() < 0
    op = schur_complement(pipe8, "inner-solve")
    p = np.random.default_rng(2).standard_normal(16)
    np.testing.assert_allclose(op @ p, S @ p, rtol=1e-10, atol=1e-12 * np.abs(S @ p).max())
    with pytest.raises(ValueError):
        schur_complement(pipe8, "approximate")


def test_schur_complement_singular_velocity_block(pipe8):
    from dataclasses import replace

    singular = replace(pipe8, N=sp.csr_matrix(pipe8.N.shape))
    with pytest.raises(np.linalg.LinAlgError):
        schur_complement(singular)


def test_power_law_fit_on_exact_data():
    theta = np.linspace(0.1, 1.0, 12)
    coef, gamma = fit_power_law(theta, 3 * theta ** 2)
    assert coef == pytest.approx(3.0) and gamma == pytest.approx(2.0)
    coef, gamma = fit_power_law(theta, 5 * theta ** 1.5)
    assert coef == pytest.approx(5.0) and gamma == pytest.approx(1.5)
    with pytest.raises(ValueError):
        fit_power_law(theta[:2], theta[:2])
    with pytest.raises(ValueError):
        fit_power_law(theta, -theta)


def test_schur_power_law_small():
    coef, gamma, theta, values = schur_power_law(40)
    assert theta.size == values.size >= 3
    assert np.all(values > 0)
    assert 1.5 < gamma < 2.5


def test_permutation_small_case():
    np.testing.assert_array_equal(permutation_indices(2, 1, 1), [0, 2, 1, 3])
    np.testing.assert_array_equal(permutation_indices(2, 2, 1), [0, 1, 4, 2, 3, 5])
    with pytest.raises(ValueError):
        permutation_indices(0, 1, 1)


@given(st.integers(1, 8), st.integers(1, 4), st.integers(1, 3))
def test_permutation_is_orthogonal(n, k, q):
    Pi = permutation_matrix(n, k, q)
    np.testing.assert_array_equal((Pi @ Pi.T).toarray(), np.eye(n * (k + q)))


def test_permutation_preserves_spectrum(pipe8):
    Pi, B = permute_to_block_toeplitz(pipe8, 8, 4, 2)
    assert B.shape == (48, 48)
    keep = np.concatenate([np.arange(32), 36 + np.arange(16)])
    A = pipe8.scaled_matrix()[keep][:, keep]
    np.testing.assert_allclose(np.sort_complex(np.linalg.eigvals(B.toarray())),
                               np.sort_complex(np.linalg.eigvals(A.toarray())), atol=1e-9)
    # interior blocks of the permuted matrix repeat along the diagonal
    dense = B.toarray()
    np.testing.assert_allclose(dense[12:18, 12:18], dense[18:24, 18:24], atol=1e-14)
    with pytest.raises(ValueError):
        permute_to_block_toeplitz(pipe8, 9, 4, 2)


def test_inertia_of_symmetric_saddle_matrix():
    grid = build_staggered_grid(8, 1.0, 0.025, 1 / 8)
    system = assemble_saddle_system(grid, inlet="traction")
    A = system.scaled_matrix().toarray()
    np.testing.assert_allclose(A, A.T, atol=1e-15)
    assert inertia(A) == (system.n_pressure, 0, system.n_velocity)
    assert inertia(np.diag([-1.0, 0.0, 2.0, 3.0])) == (1, 1, 2)


@pytest.mark.parametrize("name", SPECTRUM_MATRICES)
def test_operator_spectrum_runs(name):
    report = operator_spectrum(name, 8, samples=200)
    assert report.values.size == report.symbol_values.size
    assert report.trimmed_sup <= report.sup
    assert report.mean <= report.sup


def test_operator_spectrum_unknown_name():
    with pytest.raises(ValueError):
        operator_spectrum("Q", 8)


def test_mass_spectrum_is_symbol_values_and_their_halves():
    report = operator_spectrum("M", 16, samples=400)
    branches = np.unique(np.round(report.symbol_values, 12))
    assert branches.size == 4
    # interior cells reproduce the constant symbol; the two half-length end cells carry half of it
    allowed = np.concatenate([branches, branches / 2])
    gaps = np.abs(report.values[:, None] - allowed[None, :]).min(axis=1)
    assert gaps.max() < 1e-12
    assert np.sum(np.isin(np.round(report.values, 12), np.round(branches, 12))) == 4 * 15


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 10_000))
def test_spectrum_report_round_trip(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    report = SpectrumReport("X", 5, rng.standard_normal(12), rng.standard_normal((2, 30)), params={"d": 0.5},
                            outliers=2)
    folder = tmp_path_factory.mktemp("reports")
    csv = report.to_csv(folder / "x.csv")
    meta = report.to_json(folder / "x.json")
    back = SpectrumReport.from_files(csv, meta)
    np.testing.assert_array_equal(back.values, report.values)
    np.testing.assert_array_equal(back.symbol_values, report.symbol_values)
    assert (back.name, back.n, back.outliers, back.params) == ("X", 5, 2, {"d": 0.5})
    assert back.sup == report.sup and back.mean == report.mean and back.trimmed_sup == report.trimmed_sup
