"""Block symbols, block Toeplitz matrices and FFT-diagonalised block circulants."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping

import numpy as np
import scipy.linalg
import scipy.sparse as sp

__all__ = [
    "BlockSymbol",
    "BlockCirculant",
    "SingularBlockError",
    "toeplitz_from_symbol",
    "leading_principal_submatrix",
    "circulant_from_symbol",
    "circulant_apply",
    "circulant_solve",
    "circulant_eigenvalues",
    "frequency_grid",
    "naive_dft",
]


class SingularBlockError(np.linalg.LinAlgError):
    """A frequency block of a circulant is singular."""

    def __init__(self, index: int, message: str | None = None):
        self.index = index
        super().__init__(message or f"frequency block r={index} is singular")


@dataclass(frozen=True)
class BlockSymbol:
    """Matrix-valued 2*pi-periodic function.

    Parameters
    ----------
    shape : (s, q)
        Block size.
    coefficients : mapping int -> ndarray, optional
        Fourier coefficients ``t_j`` so that ``f(theta) = sum_j t_j exp(i j theta)``.
    evaluator : callable, optional
        Closed form ``theta -> (s, q)`` array.  Used in preference to the
        coefficients when both exist.
    name : str
        Label used in reports.
    """

    shape: tuple[int, int]
    coefficients: Mapping[int, np.ndarray] | None = None
    evaluator: Callable[[float], np.ndarray] | None = field(default=None, compare=False)
    name: str = "f"

    def __post_init__(self):
        if self.coefficients is None and self.evaluator is None:
            raise ValueError("a symbol needs Fourier coefficients or an evaluator")
        if self.coefficients is not None:
            coefs = {int(k): np.atleast_2d(np.asarray(v, dtype=complex)) for k, v in self.coefficients.items()}
            for k, v in coefs.items():
                if v.shape != tuple(self.shape):
                    raise ValueError(f"coefficient t_{k} has shape {v.shape}, expected {self.shape}")
            object.__setattr__(self, "coefficients", coefs)

    @classmethod
    def scalar(cls, coefficients: Mapping[int, complex], name="f") -> "BlockSymbol":
        return cls((1, 1), {k: np.array([[v]]) for k, v in coefficients.items()}, name=name)

    @property
    def s(self) -> int:
        return self.shape[0]

    @property
    def q(self) -> int:
        return self.shape[1]

    @property
    def is_square(self) -> bool:
        return self.s == self.q

    @property
    def is_trig_polynomial(self) -> bool:
        return self.coefficients is not None

    @property
    def degree(self) -> int:
        if self.coefficients is None:
            raise ValueError(f"symbol {self.name} has no finite coefficient list")
        nz = [abs(k) for k, v in self.coefficients.items() if np.any(v != 0)]
        return max(nz, default=0)

    def coefficient(self, j: int) -> np.ndarray:
        if self.coefficients is None:
            raise ValueError(f"symbol {self.name} has no finite coefficient list")
        return self.coefficients.get(j, np.zeros(self.shape, dtype=complex))

    def fourier_sum(self, theta) -> np.ndarray:
        """Evaluate ``sum_j t_j e^{ij theta}``; returns ``(len(theta), s, q)``."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        out = np.zeros((theta.size, *self.shape), dtype=complex)
        for j, t in self.coefficients.items():
            out += np.exp(1j * j * theta)[:, None, None] * t[None]
        return out

    def __call__(self, theta) -> np.ndarray:
        """Value at one angle (``(s, q)``) or many (``(m, s, q)``)."""
        scalar = np.ndim(theta) == 0
        theta_arr = np.atleast_1d(np.asarray(theta, dtype=float))
        if self.evaluator is not None:
            vals = np.array([np.asarray(self.evaluator(float(t)), dtype=complex).reshape(self.shape)
                             for t in theta_arr])
        else:
            vals = self.fourier_sum(theta_arr)
        return vals[0] if scalar else vals

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        """``t_{-j} = t_j^H`` for all ``j`` (or pointwise Hermitian values)."""
        if not self.is_square:
            return False
        if self.coefficients is not None:
            keys = set(self.coefficients) | {-k for k in self.coefficients}
            return all(np.allclose(self.coefficient(-k), self.coefficient(k).conj().T, atol=tol, rtol=0)
                       for k in keys)
        probe = self(np.linspace(0.1, 2 * np.pi - 0.1, 7))
        return bool(np.allclose(probe, np.conj(np.swapaxes(probe, 1, 2)), atol=tol, rtol=0))

    def conj_transpose(self, name=None) -> "BlockSymbol":
        coefs = None
        if self.coefficients is not None:
            coefs = {-k: v.conj().T for k, v in self.coefficients.items()}
        ev = None
        if self.evaluator is not None:
            ev_f = self.evaluator

            def ev(theta):
                return np.asarray(ev_f(theta)).conj().T
        return BlockSymbol((self.q, self.s), coefs, ev, name or f"{self.name}^H")

    def scaled(self, factor: complex, name=None) -> "BlockSymbol":
        coefs = None if self.coefficients is None else {k: factor * v for k, v in self.coefficients.items()}
        ev = None
        if self.evaluator is not None:
            ev_f = self.evaluator

            def ev(theta):
                return factor * np.asarray(ev_f(theta))
        return BlockSymbol(self.shape, coefs, ev, name or self.name)


def frequency_grid(n: int) -> np.ndarray:
    """Angles ``2 pi r / n`` for ``r = 0..n-1``."""
    return 2.0 * np.pi * np.arange(n) / n


def toeplitz_from_symbol(f: BlockSymbol, n: int, m: int | None = None, sparse: bool = False):
    """Block Toeplitz matrix with blocks ``T[i, k] = t_{i-k}``.

    Parameters
    ----------
    f : BlockSymbol
        Trigonometric polynomial (finite coefficient list).
    n : int
        Number of block rows.
    m : int, optional
        Number of block columns; defaults to ``n``.
    sparse : bool
        Return a CSR matrix instead of a dense array.
    """
    if n < 1 or (m is not None and m < 1):
        raise ValueError(f"block counts must be >= 1, got {n}, {m}")
    if f.coefficients is None:
        raise ValueError("Toeplitz construction needs the Fourier coefficients of the symbol")
    m = n if m is None else m
    s, q = f.shape
    T = sp.lil_matrix((n * s, m * q), dtype=complex) if sparse else np.zeros((n * s, m * q), dtype=complex)
    for j, t in f.coefficients.items():
        if not np.any(t):
            continue
        for i in range(max(0, j), min(n, m + j)):
            k = i - j
            T[i * s:(i + 1) * s, k * q:(k + 1) * q] = t
    if sparse:
        T = T.tocsr()
        if not np.iscomplexobj(T.data) or np.all(T.data.imag == 0):
            T = T.real.tocsr()
        return T
    return T.real.copy() if np.all(T.imag == 0) else T


def leading_principal_submatrix(T, m1: int, m2: int, s: int, q: int | None = None):
    """Top-left ``m1 x m2`` block submatrix of a matrix with ``s x q`` blocks."""
    q = s if q is None else q
    rows, cols = T.shape
    if m1 < 1 or m2 < 1 or m1 * s > rows or m2 * q > cols:
        raise ValueError(f"block submatrix {m1}x{m2} outside a {rows // s}x{cols // q} block matrix")
    return T[: m1 * s, : m2 * q]


def naive_dft(x: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Direct ``O(n^2)`` DFT along axis 0 (numpy sign and scaling conventions)."""
    x = np.asarray(x, dtype=complex)
    n = x.shape[0]
    sign = 1.0 if inverse else -1.0
    W = np.exp(sign * 2j * np.pi * np.outer(np.arange(n), np.arange(n)) / n)
    y = np.tensordot(W, x, axes=(1, 0))
    return y / n if inverse else y


@dataclass(frozen=True)
class BlockCirculant:
    """Block circulant ``C = sum_r`` stored through its frequency blocks.

    ``blocks[r]`` is the ``s x s`` matrix that the circulant acts as on the
    Fourier mode ``exp(i k theta_r)``.  Application uses
    ``y = fft(blocks @ ifft(x))`` along the block index, which realises
    ``y_i = sum_k t_{i-k mod n} x_k``.
    """

    blocks: np.ndarray
    use_fft: bool = True
    _lu: list | None = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.blocks.shape[0]

    @property
    def s(self) -> int:
        return self.blocks.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n * self.s, self.n * self.s)

    def _forward(self, x):
        return np.fft.ifft(x, axis=0) if self.use_fft else naive_dft(x, inverse=True)

    def _backward(self, x):
        return np.fft.fft(x, axis=0) if self.use_fft else naive_dft(x)

    def _check(self, x):
        x = np.asarray(x)
        if x.shape[0] != self.n * self.s:
            raise ValueError(f"vector of length {x.shape[0]} does not match circulant size {self.n * self.s}")
        return x

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = self._check(x)
        X = self._forward(x.reshape(self.n, self.s))
        Y = np.einsum("rij,rj->ri", self.blocks, X)
        y = self._backward(Y).reshape(-1)
        return y.real if np.isrealobj(x) and self.is_real else y

    @cached_property
    def is_real(self) -> bool:
        """Whether the time-domain matrix is real (blocks conjugate-symmetric in r)."""
        idx = (-np.arange(self.n)) % self.n
        return bool(np.allclose(self.blocks[idx], self.blocks.conj(), atol=1e-13 * (1 + np.abs(self.blocks).max())))

    def factorize(self) -> "BlockCirculant":
        """Return a copy holding per-frequency LU factors."""
        sv = np.linalg.svd(self.blocks, compute_uv=False)
        bad = np.flatnonzero(sv[:, -1] <= 1e-13 * sv[:, 0])
        if bad.size:
            raise SingularBlockError(int(bad[0]))
        lus = [scipy.linalg.lu_factor(B, check_finite=False) for B in self.blocks]
        return BlockCirculant(self.blocks, self.use_fft, lus)

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = self._check(b)
        fac = self if self._lu is not None else self.factorize()
        B = fac._forward(b.reshape(self.n, self.s))
        X = np.empty_like(B, dtype=complex)
        for r, (lu, piv) in enumerate(fac._lu):
            X[r] = scipy.linalg.lu_solve((lu, piv), B[r], check_finite=False)
        x = fac._backward(X).reshape(-1)
        return x.real if np.isrealobj(b) and self.is_real else x

    def eigenvalues(self) -> np.ndarray:
        return np.concatenate([np.linalg.eigvals(B) for B in self.blocks])

    def to_dense(self) -> np.ndarray:
        """Time-domain matrix, built column by column (small ``n`` only)."""
        size = self.n * self.s
        out = np.column_stack([self.apply(np.eye(size, dtype=complex)[:, k]) for k in range(size)])
        return out.real if self.is_real else out

    def time_blocks(self) -> np.ndarray:
        """Blocks ``t_k`` (k = 0..n-1) of the first block column."""
        return np.fft.fft(self.blocks, axis=0) / self.n

    def __add__(self, other: "BlockCirculant") -> "BlockCirculant":
        if other.blocks.shape != self.blocks.shape:
            raise ValueError("circulant shapes differ")
        return BlockCirculant(self.blocks + other.blocks, self.use_fft)


def circulant_from_symbol(f: BlockSymbol, n: int, use_fft: bool = True) -> BlockCirculant:
    """Block circulant ``C_n(f)``.

    For trigonometric polynomials the frequency blocks are the wrapped
    Fourier sums ``sum_j t_j exp(i j theta_r)``, which coincide with
    ``f(theta_r)`` once ``n`` exceeds twice the degree.  For closed-form
    symbols without coefficients the evaluator is sampled at ``theta_r``.
    """
    if n < 1:
        raise ValueError(f"block count must be >= 1, got {n}")
    if not f.is_square:
        raise ValueError(f"circulants need a square symbol, got shape {f.shape}")
    theta = frequency_grid(n)
    if f.coefficients is not None:
        blocks = np.zeros((n, f.s, f.s), dtype=complex)
        for j, t in f.coefficients.items():
            # wrap the coefficient index into 0..n-1 so small n alias correctly
            blocks += np.exp(1j * (j % n) * theta)[:, None, None] * t[None]
    else:
        blocks = f(theta)
    return BlockCirculant(blocks, use_fft)


def circulant_apply(C: BlockCirculant, x: np.ndarray) -> np.ndarray:
    return C.apply(x)


def circulant_solve(C: BlockCirculant, b: np.ndarray) -> np.ndarray:
    return C.solve(b)


def circulant_eigenvalues(C: BlockCirculant) -> np.ndarray:
    return C.eigenvalues()
