"""Dense spectra, symbol comparisons, Schur complements and power-law fits."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import SaddleSystem, assemble_saddle_system
from .grid_basis import build_staggered_grid
from .structured import BlockSymbol
from .symbols import (
    PhysicalParams,
    sample_branches,
    symbol_DG,
    symbol_E,
    symbol_F,
    symbol_G,
    symbol_L,
    symbol_M,
    symbol_S_dx,
)

__all__ = [
    "DENSE_THRESHOLD",
    "DenseThresholdError",
    "SpectrumReport",
    "matrix_spectrum",
    "resample_samples",
    "distribution_discrepancy",
    "schur_complement",
    "fit_power_law",
    "permutation_indices",
    "permutation_matrix",
    "permute_to_block_toeplitz",
    "inertia",
    "SPECTRUM_MATRICES",
    "operator_spectrum",
    "schur_power_law",
]

DENSE_THRESHOLD = 4096


class DenseThresholdError(ValueError):
    """Raised when a dense eigensolve would exceed the size cap."""


def _dense(A, threshold):
    if max(A.shape) > threshold:
        raise DenseThresholdError(
            f"matrix of size {A.shape} exceeds the dense threshold {threshold}; "
            "use iteration counts (solve/bench) for larger n or raise the threshold explicitly")
    return A.toarray() if sp.issparse(A) else np.asarray(A)


def matrix_spectrum(A, kind: str = "eigen", threshold: int = DENSE_THRESHOLD,
                    symmetric: bool | None = None) -> np.ndarray:
    """Sorted eigenvalues or singular values of a (small) matrix.

    Eigenvalues of nonsymmetric matrices are returned by their real parts;
    every operator analysed here is similar to a symmetric one up to the
    boundary rows, so imaginary parts are rounding noise.
    """
    dense = _dense(A, threshold)
    if kind == "singular":
        return np.sort(scipy.linalg.svdvals(dense))
    if kind != "eigen":
        raise ValueError(f"kind must be 'eigen' or 'singular', got {kind!r}")
    if dense.shape[0] != dense.shape[1]:
        raise ValueError("eigenvalues need a square matrix")
    if symmetric is None:
        symmetric = np.allclose(dense, dense.conj().T, atol=1e-13 * max(1.0, np.abs(dense).max()), rtol=0)
    if symmetric:
        return scipy.linalg.eigvalsh(dense)
    return np.sort(scipy.linalg.eigvals(dense).real)


def resample_samples(samples, count: int) -> np.ndarray:
    """Pool branch samples and resample their sorted union to ``count`` values.

    Uses linear interpolation of the empirical quantile function, which is
    how a symbol-driven distribution is compared with a spectrum of a
    different size.
    """
    pooled = np.sort(np.asarray(samples, dtype=float).ravel())
    if pooled.size == count:
        return pooled
    if pooled.size < 2:
        raise ValueError("need at least two symbol samples to resample")
    pos = np.linspace(0.0, 1.0, pooled.size)
    return np.interp(np.linspace(0.0, 1.0, count), pos, pooled)


def distribution_discrepancy(values, samples, resample: bool = True,
                             outliers: int = 0) -> tuple[float, float]:
    """Sup and mean absolute difference of sorted sequences.

    Parameters
    ----------
    values : array_like
        Eigenvalues or singular values of a matrix.
    samples : array_like
        Symbol samples; any shape (branches are pooled).
    resample : bool
        Interpolate the pooled samples to the length of ``values``.  With
        ``False`` the counts must already agree.
    outliers : int
        Number of largest deviations left out of the sup (the mean always
        uses every pair).  Boundary rows produce a fixed number of isolated
        eigenvalues whose deviation does not shrink with ``n``; dropping that
        many exposes the convergence of the bulk.
    """
    v = np.sort(np.asarray(values, dtype=float).ravel())
    s = np.asarray(samples, dtype=float).ravel()
    if resample:
        s = resample_samples(s, v.size)
    s = np.sort(s)
    if s.size != v.size:
        raise ValueError(f"count mismatch: {v.size} matrix values vs {s.size} symbol samples")
    if not 0 <= outliers < v.size:
        raise ValueError(f"outliers must lie in [0, {v.size}), got {outliers}")
    diff = np.abs(v - s)
    sup = np.sort(diff)[v.size - 1 - outliers]
    return float(sup), float(diff.mean())


@dataclass
class SpectrumReport:
    """Sorted matrix spectrum next to resampled symbol values.

    ``sup`` and ``mean`` compare every pair; ``trimmed_sup`` leaves out the
    ``outliers`` largest deviations.
    """

    name: str
    n: int
    values: np.ndarray
    symbol_values: np.ndarray
    kind: str = "eigen"
    params: dict = field(default_factory=dict)
    outliers: int = 0
    sup: float = field(init=False)
    mean: float = field(init=False)
    trimmed_sup: float = field(init=False)

    def __post_init__(self):
        self.values = np.sort(np.asarray(self.values, dtype=float))
        self.symbol_values = np.sort(resample_samples(self.symbol_values, self.values.size))
        self.sup, self.mean = distribution_discrepancy(self.values, self.symbol_values, resample=False)
        self.trimmed_sup, _ = distribution_discrepancy(self.values, self.symbol_values, resample=False,
                                                       outliers=min(self.outliers, self.values.size - 1))

    def metadata(self) -> dict:
        return {"name": self.name, "n": self.n, "kind": self.kind, "size": int(self.values.size),
                "discrepancy_sup": self.sup, "discrepancy_mean": self.mean,
                "discrepancy_trimmed_sup": self.trimmed_sup, "outliers": self.outliers,
                "params": self.params}

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "matrix_value", "symbol_value"])
            for k, (a, b) in enumerate(zip(self.values, self.symbol_values)):
                w.writerow([k, repr(float(a)), repr(float(b))])
        return path

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.metadata(), indent=2, sort_keys=True))
        return path

    @classmethod
    def from_files(cls, csv_path, json_path=None) -> "SpectrumReport":
        data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
        meta = json.loads(Path(json_path).read_text()) if json_path else {}
        return cls(meta.get("name", Path(csv_path).stem), int(meta.get("n", 0)), data[:, 1], data[:, 2],
                   meta.get("kind", "eigen"), meta.get("params", {}), int(meta.get("outliers", 0)))


def schur_complement(system: SaddleSystem, mode: str = "exact-dense", threshold: int = DENSE_THRESHOLD):
    """``(E - D N^{-1} G) / dt``.

    ``"exact-dense"`` returns an ndarray; ``"inner-solve"`` returns a
    :class:`scipy.sparse.linalg.LinearOperator` backed by a sparse LU of N.
    """
    dt = system.dt
    if mode == "exact-dense":
        N = _dense(system.N, threshold)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                lu = scipy.linalg.lu_factor(N)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise np.linalg.LinAlgError(f"N is singular: {exc}") from exc
        if np.any(np.abs(np.diag(lu[0])) <= 1e-14 * np.abs(N).max()):
            raise np.linalg.LinAlgError("N is singular")
        X = scipy.linalg.lu_solve(lu, system.G.toarray())
        return (system.E.toarray() - system.D @ X) / dt
    if mode == "inner-solve":
        try:
            lu = spla.splu(sp.csc_matrix(system.N))
        except RuntimeError as exc:
            raise np.linalg.LinAlgError(f"N is singular: {exc}") from exc
        E, D, G = system.E, system.D, system.G

        def matvec(p):
            p = np.asarray(p).ravel()
            return (E @ p - D @ lu.solve(G @ p)) / dt

        m = system.n_pressure
        return spla.LinearOperator((m, m), matvec=matvec, dtype=float)
    raise ValueError(f"unknown Schur mode {mode!r}")


def fit_power_law(theta, values) -> tuple[float, float]:
    """Least-squares fit of ``values = coef * theta**gamma`` in log-log scale."""
    theta = np.asarray(theta, dtype=float).ravel()
    values = np.asarray(values, dtype=float).ravel()
    if theta.size != values.size:
        raise ValueError("theta and values differ in length")
    if theta.size < 3:
        raise ValueError("a power-law fit needs at least three samples")
    if np.any(theta <= 0) or np.any(values <= 0):
        raise ValueError("power-law fit needs strictly positive samples")
    gamma, logc = np.polyfit(np.log(theta), np.log(values), 1)
    return float(np.exp(logc)), float(gamma)


def permutation_indices(n: int, k: int, q: int) -> np.ndarray:
    """Order taking ``(u_1..u_n, p_1..p_n)`` to ``(u_1, p_1, ..., u_n, p_n)``.

    ``u_j`` are blocks of size ``k`` and ``p_j`` blocks of size ``q``; entry
    ``m`` of the result is the original index placed at position ``m``.
    """
    if n < 1 or k < 1 or q < 1:
        raise ValueError("block counts and sizes must be positive")
    out = np.empty(n * (k + q), dtype=int)
    for j in range(n):
        base = j * (k + q)
        out[base: base + k] = j * k + np.arange(k)
        out[base + k: base + k + q] = n * k + j * q + np.arange(q)
    return out


def permutation_matrix(n: int, k: int, q: int) -> sp.csr_matrix:
    idx = permutation_indices(n, k, q)
    size = idx.size
    return sp.csr_matrix((np.ones(size), (np.arange(size), idx)), shape=(size, size))


def permute_to_block_toeplitz(A, n: int, k: int, q: int):
    """Interleave velocity and pressure blocks of a saddle matrix.

    Parameters
    ----------
    A : matrix or SaddleSystem
        Square matrix laid out as ``n`` velocity blocks of size ``k`` followed
        by ``n`` pressure blocks of size ``q``.  A system is first turned into
        its column-scaled matrix with the last velocity block dropped.
    n, k, q : int
        Block count and block sizes.

    Returns
    -------
    (Pi, B)
        Permutation matrix and ``Pi A Pi^T`` with ``(k + q)``-sized blocks.
    """
    if isinstance(A, SaddleSystem):
        full = A.scaled_matrix()
        nv = A.n_velocity
        if nv != (n + 1) * k or A.n_pressure != n * q:
            raise ValueError("system block counts do not match (n, k, q)")
        keep = np.concatenate([np.arange(n * k), nv + np.arange(n * q)])
        A = full[keep][:, keep]
    if A.shape != (n * (k + q), n * (k + q)):
        raise ValueError(f"matrix of shape {A.shape} is incompatible with n={n}, k={k}, q={q}")
    Pi = permutation_matrix(n, k, q)
    B = Pi @ A @ Pi.T
    return Pi, B


def inertia(A, tol: float = 1e-10, threshold: int = DENSE_THRESHOLD) -> tuple[int, int, int]:
    """Counts of negative, zero and positive eigenvalues of a symmetric matrix."""
    ev = matrix_spectrum(A, "eigen", threshold, symmetric=True)
    scale = max(1.0, np.abs(ev).max())
    neg = int(np.sum(ev < -tol * scale))
    pos = int(np.sum(ev > tol * scale))
    return neg, ev.size - neg - pos, pos


SPECTRUM_MATRICES = ("L", "M", "N", "G", "D", "E", "DG", "schur", "A")


def _sum_symbol(a: BlockSymbol, b: BlockSymbol, weight: float, name: str) -> BlockSymbol:
    return BlockSymbol(a.shape, evaluator=lambda theta: a(theta) + weight * b(theta), name=name)


def operator_spectrum(name: str, n: int, params: PhysicalParams | None = None, samples: int = 1000,
                      outliers: int = 8, threshold: int = DENSE_THRESHOLD) -> SpectrumReport:
    """Spectrum of a named assembled operator next to its sampled symbol.

    The operator is assembled on a unit-length channel of constant width
    ``params.d`` with ``dx = 1/n`` and ``dt = c dx``.  Pairings:

    ========  ==================================  =========  ========
    name      matrix                              symbol     kind
    ========  ==================================  =========  ========
    L         L with Dirichlet rows projected     f_L        eigen
    M         M / dx                              f_M        eigen
    N         N                                   f_L+dx f_M eigen
    G         G / dt                              g          singular
    D         D                                   d          singular
    E         E / dx                              e          eigen
    DG        D G / dt                            dg         eigen
    schur     (E - D N^-1 G) / dt                 s_dx       eigen
    A         column-scaled saddle matrix         F          eigen
    ========  ==================================  =========  ========
    """
    if name not in SPECTRUM_MATRICES:
        raise ValueError(f"unknown matrix {name!r}; choose from {SPECTRUM_MATRICES}")
    base = params or PhysicalParams()
    dx = 1.0 / n
    params = base.with_(dx=dx)
    grid = build_staggered_grid(n, 1.0, params.d, params.c * dx)
    size = {"schur": 2 * n, "DG": 2 * n, "E": 2 * n, "G": 4 * (n + 1), "D": 4 * (n + 1)}.get(name, 4 * (n + 1))
    if name == "A":
        size = 6 * n + 4
    if size > threshold:
        raise DenseThresholdError(
            f"{name} at n={n} has dimension {size} > dense threshold {threshold}; "
            "use iteration counts (solve/bench) for larger n or raise the threshold explicitly")
    system = assemble_saddle_system(grid, rho=params.rho, mu=params.mu)
    dt = system.dt
    kind = "eigen"
    if name == "L":
        matrix, symbol = system.dirichlet_projected(system.L), symbol_L(params)
    elif name == "M":
        matrix, symbol = system.M / dx, symbol_M(params)
    elif name == "N":
        matrix, symbol = system.N, _sum_symbol(symbol_L(params), symbol_M(params), dx, "f_L+dx f_M")
    elif name == "G":
        matrix, symbol, kind = system.G / dt, symbol_G(params), "singular"
    elif name == "D":
        matrix, symbol, kind = system.D, symbol_G(params).conj_transpose(name="d"), "singular"
    elif name == "E":
        matrix, symbol = system.E / dx, symbol_E(params)
    elif name == "DG":
        matrix, symbol = system.D @ system.G / dt, symbol_DG(params)
    elif name == "schur":
        matrix, symbol = schur_complement(system, threshold=threshold), symbol_S_dx(params)
    else:
        matrix, symbol = system.scaled_matrix(), symbol_F(params, with_mass=True)
    values = matrix_spectrum(matrix, kind, threshold)
    branches = sample_branches(symbol, samples, kind)
    meta = {"d": params.d, "mu": params.mu, "rho": params.rho, "c": params.c, "dx": dx, "symbol": symbol.name}
    return SpectrumReport(name, n, values, branches, kind, meta, outliers)


def schur_power_law(n: int, params: PhysicalParams | None = None, fraction: float = 0.1,
                    threshold: int = DENSE_THRESHOLD) -> tuple[float, float, np.ndarray, np.ndarray]:
    """Fit ``|lambda| ~ coef * theta**gamma`` to the smallest Schur eigenvalues.

    The eigenvalues of ``-(E - D N^-1 G)/dt`` on a unit channel are paired
    with the mixed-boundary frequencies ``(2k + 1) pi / (2n + 1)`` and the
    smallest ``fraction`` of them is fitted.  Defaults are water in a
    0.025 m channel.

    Returns ``(coef, gamma, theta, values)``.
    """
    params = params or PhysicalParams(d=0.025, mu=1e-3, rho=1000.0)
    dx = 1.0 / n
    grid = build_staggered_grid(n, 1.0, params.d, params.c * dx)
    system = assemble_saddle_system(grid, rho=params.rho, mu=params.mu)
    values = np.sort(-matrix_spectrum(schur_complement(system, threshold=threshold), "eigen", threshold))
    count = max(3, int(fraction * values.size / 2))
    theta = (2 * np.arange(count) + 1) * np.pi / (2 * n + 1)
    coef, gamma = fit_power_law(theta, values[:count])
    return coef, gamma, theta, values[:count]
