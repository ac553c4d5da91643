"""Krylov solvers, ILU(0), circulant and LSC preconditioners, Picard stepping.

The linear solver stack mirrors a nested block preconditioner for the
column-scaled saddle system ``[[N, G/dt], [D, E/dt]]``:

* ``K_A``  outer flexible GMRES on the full system,
* ``K_S``  GMRES on the Schur operator ``(E - D N^{-1} G)/dt``, preconditioned
  by a block circulant built from the Schur symbol (or by LSC),
* ``K_N``  GMRES with ILU(0) for every action of ``N^{-1}``,
* ``K_DG`` preconditioned CG on ``D G / dt`` inside LSC.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import SaddleSystem, convective_rhs
from .structured import BlockCirculant, circulant_from_symbol
from .symbols import (
    SCHUR_CONSTANT_2D,
    SCHUR_CONSTANT_3D,
    PhysicalParams,
    symbol_DG,
    symbol_S,
    symbol_S_dx,
)

__all__ = [
    "KrylovResult",
    "ConvergenceError",
    "ZeroPivotError",
    "PicardDivergenceError",
    "gmres",
    "fgmres",
    "cg",
    "ILU0",
    "ilu0",
    "CirculantPreconditioner",
    "build_precond_Cn",
    "build_precond_Pn",
    "LevelConfig",
    "SolverConfig",
    "SolverReport",
    "SaddleSolver",
    "schur_preconditioner_apply",
    "lsc_schur_inverse_apply",
    "FlowState",
    "picard_timestep",
    "PRECONDITIONERS",
]

PRECONDITIONERS = ("circulant-dx", "circulant-s", "circulant-diag", "lsc", "exact")


class ConvergenceError(RuntimeError):
    """An inner solver failed; ``level`` names the solver in the stack."""

    def __init__(self, level: str, result: "KrylovResult"):
        self.level = level
        self.result = result
        super().__init__(f"{level} did not converge in {result.iterations} iterations "
                         f"(relative residual {result.residual:.3e})")


class ZeroPivotError(ArithmeticError):
    def __init__(self, row: int):
        self.row = row
        super().__init__(f"zero pivot in ILU(0) at row {row}")


class PicardDivergenceError(RuntimeError):
    def __init__(self, history):
        self.history = list(history)
        super().__init__("Picard iteration is not contracting; update norms: "
                         + ", ".join(f"{h:.3e}" for h in self.history))


def _as_apply(op) -> Callable[[np.ndarray], np.ndarray]:
    if op is None:
        return lambda v: v
    if isinstance(op, spla.LinearOperator):
        return op.matvec
    if sp.issparse(op) or isinstance(op, np.ndarray):
        return lambda v: op @ v
    if callable(op):
        return op
    raise TypeError(f"cannot apply an object of type {type(op).__name__}")


@dataclass
class KrylovResult:
    """Outcome of one Krylov solve."""

    iterations: int
    converged: bool
    residual: float
    history: list = field(default_factory=list)
    breakdown: str | None = None
    breakdown_iteration: int | None = None


# ---------------------------------------------------------------------------
# Krylov methods


def _gmres_core(A, b, M, x0, tol, maxiter, restart, flexible):
    apply_A = _as_apply(A)
    apply_M = _as_apply(M)
    b = np.asarray(b, dtype=float)
    n = b.size
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float, copy=True)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), KrylovResult(0, True, 0.0, [0.0])
    r = b - apply_A(x) if x0 is not None else b.copy()
    beta = np.linalg.norm(r)
    history = [beta / bnorm]
    if history[-1] <= tol:
        return x, KrylovResult(0, True, history[-1], history)
    restart = maxiter if restart is None else max(1, min(restart, maxiter))
    total = 0
    breakdown = None
    bd_iter = None
    while True:
        V = np.zeros((restart + 1, n))
        Z = np.zeros((restart, n)) if flexible else None
        H = np.zeros((restart + 1, restart))
        cs = np.zeros(restart)
        sn = np.zeros(restart)
        g = np.zeros(restart + 1)
        g[0] = beta
        V[0] = r / beta
        j_done = 0
        for j in range(restart):
            z = apply_M(V[j])
            if flexible:
                Z[j] = z
            w = apply_A(z)
            # modified Gram-Schmidt with one reorthogonalisation pass
            for _ in range(2):
                for i in range(j + 1):
                    hij = V[i] @ w
                    H[i, j] += hij
                    w = w - hij * V[i]
            hnext = np.linalg.norm(w)
            H[j + 1, j] = hnext
            for i in range(j):
                tmp = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = tmp
            denom = np.hypot(H[j, j], H[j + 1, j])
            total += 1
            j_done = j + 1
            if denom == 0.0:
                breakdown, bd_iter = "unhappy", total
                j_done = j
                break
            cs[j], sn[j] = H[j, j] / denom, H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            history.append(abs(g[j + 1]) / bnorm)
            if hnext <= 1e-14 * max(1.0, np.abs(H[: j + 1, j]).max()):
                breakdown, bd_iter = "happy", total
                break
            if history[-1] <= tol or total >= maxiter:
                break
            V[j + 1] = w / hnext
        if j_done > 0:
            y = scipy.linalg.solve_triangular(H[:j_done, :j_done], g[:j_done])
            if flexible:
                x = x + y @ Z[:j_done]
            else:
                x = x + apply_M(y @ V[:j_done])
        converged = history[-1] <= tol
        if converged or total >= maxiter or breakdown is not None:
            break
        r = b - apply_A(x)
        beta = np.linalg.norm(r)
        history.append(beta / bnorm)
        if history[-1] <= tol:
            converged = True
            break
    if breakdown == "happy" or (converged and breakdown is None):
        true_res = np.linalg.norm(b - apply_A(x)) / bnorm
        converged = converged or true_res <= tol
    return x, KrylovResult(total, bool(converged), float(history[-1]), history, breakdown, bd_iter)


def gmres(A, b, M=None, x0=None, tol: float = 1e-6, maxiter: int = 200, restart: int | None = None):
    """Right-preconditioned GMRES.

    Parameters
    ----------
    A : matrix, LinearOperator or callable
        System operator.
    b : ndarray
        Right-hand side.
    M : matrix, LinearOperator or callable, optional
        Action of the preconditioner inverse.
    x0 : ndarray, optional
        Initial guess.
    tol : float
        Relative residual target ``||b - A x|| / ||b||``.
    maxiter : int
        Maximum number of Arnoldi steps in total.
    restart : int, optional
        Restart length; ``None`` means full GMRES.

    Returns
    -------
    x : ndarray
    result : KrylovResult
    """
    return _gmres_core(A, b, M, x0, tol, maxiter, restart, flexible=False)


def fgmres(A, b, M=None, x0=None, tol: float = 1e-8, maxiter: int = 100, restart: int | None = None):
    """Flexible GMRES: the preconditioner may change between iterations."""
    return _gmres_core(A, b, M, x0, tol, maxiter, restart, flexible=True)


def cg(A, b, M=None, x0=None, tol: float = 1e-5, maxiter: int = 500):
    """Preconditioned conjugate gradients for symmetric positive definite ``A``."""
    apply_A = _as_apply(A)
    apply_M = _as_apply(M)
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float, copy=True)
    if bnorm == 0.0:
        return np.zeros_like(b), KrylovResult(0, True, 0.0, [0.0])
    r = b - apply_A(x) if x0 is not None else b.copy()
    history = [np.linalg.norm(r) / bnorm]
    if history[-1] <= tol:
        return x, KrylovResult(0, True, history[-1], history)
    z = apply_M(r)
    p = z.copy()
    rz = r @ z
    it = 0
    while it < maxiter:
        Ap = apply_A(p)
        pAp = p @ Ap
        it += 1
        if pAp <= 0.0:
            return x, KrylovResult(it, False, history[-1], history, "unhappy", it)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        history.append(np.linalg.norm(r) / bnorm)
        if history[-1] <= tol:
            return x, KrylovResult(it, True, history[-1], history)
        z = apply_M(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, KrylovResult(it, False, history[-1], history)


# ---------------------------------------------------------------------------
# ILU(0)


class ILU0:
    """Incomplete LU factors on the sparsity pattern of the input.

    ``L`` is unit lower triangular and ``U`` upper triangular; :meth:`solve`
    applies ``U^{-1} L^{-1}``.
    """

    def __init__(self, L: sp.csr_matrix, U: sp.csr_matrix):
        self.L = L
        self.U = U
        opts = dict(DiagPivotThresh=0.0, SymmetricMode=True)
        # SuperLU on a triangular matrix with natural ordering produces no fill
        self._lo = spla.splu(sp.csc_matrix(L), permc_spec="NATURAL", options=opts)
        self._up = spla.splu(sp.csc_matrix(U), permc_spec="NATURAL", options=opts)
        self.shape = L.shape

    def solve(self, b: np.ndarray) -> np.ndarray:
        return self._up.solve(self._lo.solve(np.asarray(b, dtype=float)))

    __call__ = solve

    def as_linear_operator(self) -> spla.LinearOperator:
        return spla.LinearOperator(self.shape, matvec=self.solve, dtype=float)


def ilu0(A) -> ILU0:
    """Incomplete LU factorisation without fill-in.

    Raises
    ------
    ZeroPivotError
        When a diagonal entry is missing or vanishes during elimination.
    """
    A = sp.csr_matrix(A, dtype=float, copy=True)
    A.sum_duplicates()
    A.sort_indices()
    n = A.shape[0]
    if A.shape[1] != n:
        raise ValueError("ILU(0) needs a square matrix")
    indptr, indices, data = A.indptr, A.indices, A.data
    diag = np.full(n, -1, dtype=int)
    for i in range(n):
        cols = indices[indptr[i]:indptr[i + 1]]
        pos = np.searchsorted(cols, i)
        if pos < cols.size and cols[pos] == i:
            diag[i] = indptr[i] + pos
    for i in range(n):
        start, end = indptr[i], indptr[i + 1]
        cols_i = indices[start:end]
        if diag[i] < 0:
            raise ZeroPivotError(i)
        for p in range(start, diag[i]):
            k = indices[p]
            pivot = data[diag[k]]
            if pivot == 0.0:
                raise ZeroPivotError(k)
            lik = data[p] / pivot
            data[p] = lik
            ks, ke = diag[k] + 1, indptr[k + 1]
            if ks >= ke:
                continue
            cols_k = indices[ks:ke]
            loc = np.searchsorted(cols_i, cols_k)
            loc_c = np.minimum(loc, cols_i.size - 1)
            hit = cols_i[loc_c] == cols_k
            data[start + loc_c[hit]] -= lik * data[ks:ke][hit]
        if data[diag[i]] == 0.0:
            raise ZeroPivotError(i)
    L = sp.tril(A, k=-1, format="csr") + sp.eye(n, format="csr")
    U = sp.triu(A, k=0, format="csr")
    return ILU0(L.tocsr(), U.tocsr())


# ---------------------------------------------------------------------------
# circulant preconditioners


@dataclass(frozen=True)
class CirculantPreconditioner:
    """Inverse of ``scale_left * (C + R)`` applied through per-frequency LU.

    ``left`` is an optional diagonal (one entry per unknown) multiplying the
    circulant from the left, used for the width-sampled variant.
    """

    circulant: BlockCirculant
    left: np.ndarray | None = None
    label: str = "circulant"

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.left is not None:
            x = x / self.left
        return self.circulant.solve(x)

    def matrix(self) -> np.ndarray:
        C = self.circulant.to_dense()
        return C if self.left is None else self.left[:, None] * C

    @property
    def shape(self):
        return self.circulant.shape


def _rank_one(n: int, block: np.ndarray) -> BlockCirculant:
    """Frequency form of ``(1/(2n)^2) ones(n, n) x block``."""
    blocks = np.zeros((n, *block.shape), dtype=complex)
    blocks[0] = n * block / (2 * n) ** 2
    return BlockCirculant(blocks)


def build_precond_Cn(params: PhysicalParams, n: int, width_mode: str = "constant", widths=None,
                     constant: float | str = "2d", with_dx: bool = True,
                     correction: bool = True) -> CirculantPreconditioner:
    """Corrected block-circulant approximation of the scaled Schur complement.

    Parameters
    ----------
    params : PhysicalParams
        ``d`` is used in ``"constant"`` mode; ``dx`` enters the symbol.
    n : int
        Number of pressure cells.
    width_mode : {"constant", "average", "diagonal"}
        ``"average"`` uses the mean of ``widths``; ``"diagonal"`` uses a unit
        width circulant scaled from the left by the per-cell ``widths``.
    widths : array_like, optional
        Width (2D) or area (3D) at the primal cell centres.
    constant : {"2d", "3d"} or float
        Constant of the fixed-``dx`` Schur symbol.
    with_dx : bool
        Keep the mass contribution; ``False`` gives the ``dx -> 0`` symbol.
    correction : bool
        Add the rank-one term that removes the zero eigenvalue at theta = 0.
    """
    if isinstance(constant, str):
        constant = {"2d": SCHUR_CONSTANT_2D, "3d": SCHUR_CONSTANT_3D}[constant]
    left = None
    if width_mode == "constant":
        p = params
    elif width_mode == "average":
        if widths is None:
            raise ValueError("average mode needs the width samples")
        p = params.with_(d=float(np.mean(widths)))
    elif width_mode == "diagonal":
        if widths is None:
            raise ValueError("diagonal mode needs the width samples")
        widths = np.asarray(widths, dtype=float)
        if widths.size != n:
            raise ValueError(f"expected {n} width samples, got {widths.size}")
        p = params.with_(d=1.0)
        left = np.repeat(widths, 2)
    else:
        raise ValueError(f"unknown width mode {width_mode!r}")
    sym = symbol_S_dx(p, constant) if with_dx else symbol_S(p)
    C = circulant_from_symbol(sym, n)
    if correction:
        C = C + _rank_one(n, np.ones((2, 2)))
    label = f"C_n({'s_dx' if with_dx else 's'},{width_mode})"
    return CirculantPreconditioner(C.factorize(), left, label)


def build_precond_Pn(params: PhysicalParams, n: int, correction: bool = True) -> CirculantPreconditioner:
    """Corrected circulant for ``D G / dt`` from the product symbol."""
    C = circulant_from_symbol(symbol_DG(params), n)
    if correction:
        C = C + _rank_one(n, np.eye(2))
    return CirculantPreconditioner(C.factorize(), None, "P_n")


# ---------------------------------------------------------------------------
# configuration and reports


@dataclass(frozen=True)
class LevelConfig:
    tol: float
    maxiter: int
    restart: int | None = None

    def __post_init__(self):
        if not 0 < self.tol < 1:
            raise ValueError(f"tolerance must lie in (0, 1), got {self.tol}")
        if self.maxiter < 1:
            raise ValueError("maxiter must be positive")


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and limits of every level, plus the Schur preconditioner."""

    outer: LevelConfig = LevelConfig(1e-8, 50)
    schur: LevelConfig = LevelConfig(1e-6, 100)
    velocity: LevelConfig = LevelConfig(1e-5, 200)
    dg: LevelConfig = LevelConfig(1e-5, 500)
    precond: str = "circulant-dx"
    schur_constant: str | float = "2d"

    def __post_init__(self):
        if self.precond not in PRECONDITIONERS:
            raise ValueError(f"unknown preconditioner {self.precond!r}; choose from {PRECONDITIONERS}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SolverConfig":
        kw = dict(data)
        for key in ("outer", "schur", "velocity", "dg"):
            if key in kw and isinstance(kw[key], dict):
                kw[key] = LevelConfig(**kw[key])
        return cls(**kw)

    def with_tolerances(self, outer=None, schur=None, velocity=None, dg=None) -> "SolverConfig":
        out = self
        for name, tol in (("outer", outer), ("schur", schur), ("velocity", velocity), ("dg", dg)):
            if tol is not None:
                out = replace(out, **{name: replace(getattr(out, name), tol=float(tol))})
        return out


LEVELS = ("K_A", "K_S", "K_N", "K_DG")


@dataclass
class SolverReport:
    """Iteration counts per level, residual histories and timing.

    ``counts[level]`` lists the iteration count of every call of that level.
    """

    counts: dict = field(default_factory=lambda: {k: [] for k in LEVELS})
    converged: dict = field(default_factory=lambda: {k: [] for k in LEVELS})
    histories: dict = field(default_factory=lambda: {"K_A": []})
    picard: list = field(default_factory=list)
    wall_time: float = 0.0
    meta: dict = field(default_factory=dict)

    def record(self, level: str, result: KrylovResult, keep_history: bool = False):
        self.counts[level].append(result.iterations)
        self.converged[level].append(result.converged)
        if keep_history:
            self.histories.setdefault(level, []).append(list(result.history))

    def merge(self, other: "SolverReport"):
        for k in LEVELS:
            self.counts[k].extend(other.counts[k])
            self.converged[k].extend(other.converged[k])
        for k, v in other.histories.items():
            self.histories.setdefault(k, []).extend(v)
        self.picard.extend(other.picard)
        self.wall_time += other.wall_time

    def all_converged(self, level: str) -> bool:
        return all(self.converged[level])

    def summary(self) -> dict:
        out = {}
        for k in LEVELS:
            c = self.counts[k]
            if c:
                out[k] = {"min": int(min(c)), "max": int(max(c)), "mean": float(np.mean(c)),
                          "calls": len(c), "converged": bool(all(self.converged[k]))}
        if self.picard:
            out["picard"] = {"min": int(min(self.picard)), "max": int(max(self.picard)),
                             "mean": float(np.mean(self.picard)), "steps": len(self.picard)}
        out["wall_time"] = self.wall_time
        return out

    def to_json(self, path=None) -> str:
        payload = {"summary": self.summary(), "counts": self.counts, "converged": self.converged,
                   "picard": self.picard, "histories": self.histories, "meta": self.meta}
        text = json.dumps(payload, indent=2, default=float)
        if path is not None:
            Path(path).write_text(text)
        return text

    def range_text(self, level: str) -> str:
        c = self.counts[level]
        if not c:
            return "-"
        if not self.all_converged(level):
            return "no conv."
        lo, hi = min(c), max(c)
        return f"{lo}" if lo == hi else f"{lo} -- {hi}"


# ---------------------------------------------------------------------------
# solver stack


class SaddleSolver:
    """Nested solver for the column-scaled saddle system of one grid.

    Parameters
    ----------
    system : SaddleSystem
        Assembled system with boundary rows.
    config : SolverConfig
        Level tolerances and preconditioner choice.
    """

    def __init__(self, system: SaddleSystem, config: SolverConfig | None = None):
        self.system = system
        self.config = config or SolverConfig()
        self.report = SolverReport()
        self.matrix = system.scaled_matrix()
        self.dt = system.dt
        self._N = system.N.tocsr()
        self._G = system.G.tocsr()
        self._D = system.D.tocsr()
        self._E = system.E.tocsr()
        self._ilu = ilu0(self._N)
        self.params = schur_params(system)
        self.schur_precond = None
        self.dg_precond = None
        self._exact = None
        prec = self.config.precond
        if prec == "exact":
            self._exact = spla.splu(sp.csc_matrix(self._N))
        elif prec == "lsc":
            self.dg_precond = build_precond_Pn(self.params, system.grid.n)
        else:
            widths = system.grid.area_samples
            mode = {"circulant-dx": "average", "circulant-s": "average", "circulant-diag": "diagonal"}[prec]
            self.schur_precond = build_precond_Cn(self.params, system.grid.n, mode, widths,
                                                  constant=self.config.schur_constant,
                                                  with_dx=(prec != "circulant-s"))

    # -- inner levels ------------------------------------------------------

    def solve_N(self, r: np.ndarray) -> np.ndarray:
        if self._exact is not None:
            return self._exact.solve(r)
        lvl = self.config.velocity
        x, res = gmres(self._N, r, self._ilu.solve, tol=lvl.tol, maxiter=lvl.maxiter, restart=lvl.restart)
        self.report.record("K_N", res)
        return x

    def schur_apply(self, p: np.ndarray) -> np.ndarray:
        """Matrix-free ``(E p - D N^{-1} G p) / dt`` with inner ``K_N`` solves."""
        return (self._E @ p - self._D @ self.solve_N(self._G @ p)) / self.dt

    def solve_DG(self, r: np.ndarray) -> np.ndarray:
        lvl = self.config.dg

        def op(v):
            return self._D @ (self._G @ v) / self.dt

        x, res = cg(op, r, self.dg_precond, tol=lvl.tol, maxiter=lvl.maxiter)
        self.report.record("K_DG", res)
        return x

    def lsc_apply(self, r: np.ndarray) -> np.ndarray:
        return lsc_schur_inverse_apply(self, r)

    def solve_schur(self, r: np.ndarray) -> np.ndarray:
        if self._exact is not None:
            return self._exact_schur().solve(r)
        lvl = self.config.schur
        M = self.lsc_apply if self.config.precond == "lsc" else self.schur_precond
        x, res = gmres(self.schur_apply, r, M, tol=lvl.tol, maxiter=lvl.maxiter, restart=lvl.restart)
        self.report.record("K_S", res)
        return x

    def _exact_schur(self):
        if not hasattr(self, "_schur_lu"):
            S = (self._E.toarray() - self._D @ self._exact.solve(self._G.toarray())) / self.dt
            self._schur_lu = _DenseLU(S)
        return self._schur_lu

    def precondition(self, r: np.ndarray) -> np.ndarray:
        return schur_preconditioner_apply(self, r)

    # -- outer level -------------------------------------------------------

    def solve(self, rhs: np.ndarray | None = None, x0: np.ndarray | None = None):
        """Solve the scaled system; returns ``(u, p, KrylovResult)``.

        ``p`` is the physical pressure (the scaled unknown divided by ``dt``).
        """
        b = self.system.scaled_rhs() if rhs is None else np.asarray(rhs, dtype=float)
        lvl = self.config.outer
        t0 = time.perf_counter()
        x, res = fgmres(self.matrix, b, self.precondition, x0=x0, tol=lvl.tol,
                        maxiter=lvl.maxiter, restart=lvl.restart)
        self.report.wall_time += time.perf_counter() - t0
        self.report.record("K_A", res, keep_history=True)
        u, p = self.system.split(x)
        return u, p, res


class _DenseLU:
    def __init__(self, A):
        self.lu = scipy.linalg.lu_factor(A)

    def solve(self, b):
        return scipy.linalg.lu_solve(self.lu, b)


def schur_params(system: SaddleSystem) -> PhysicalParams:
    """Symbol parameters of a system (mean width or area as ``d``)."""
    g = system.grid
    return PhysicalParams(d=float(np.mean(g.area_samples)), mu=system.mu, rho=system.rho, c=g.c, dx=g.dx)


def schur_preconditioner_apply(solver: SaddleSolver, residual: np.ndarray) -> np.ndarray:
    """Block-triangular solve with the approximate Schur complement.

    Solves ``S p = r_p - D N^{-1} r_u`` and then
    ``N u = r_u - G p / dt``; returns the stacked correction ``(u, p)``.
    """
    nu = solver.system.n_velocity
    r_u, r_p = residual[:nu], residual[nu:]
    if not np.any(residual):
        return np.zeros_like(residual)
    y = solver.solve_N(r_u)
    p_hat = solver.solve_schur(r_p - solver._D @ y)
    u_hat = solver.solve_N(r_u - solver._G @ p_hat / solver.dt)
    return np.concatenate([u_hat, p_hat])


def lsc_schur_inverse_apply(solver: SaddleSolver, r: np.ndarray) -> np.ndarray:
    """Least-squares commutator approximation of the inverse Schur operator.

    ``-(1/dt) P^{-1} D N G P^{-1} r`` with ``P = D G / dt`` solved by ``K_DG``;
    the sign makes the approximation negative like the Schur operator.
    """
    w = solver.solve_DG(r)
    w = solver._D @ (solver._N @ (solver._G @ w))
    return -solver.solve_DG(w) / solver.dt


# ---------------------------------------------------------------------------
# nonlinear time step


@dataclass
class FlowState:
    """Velocity coefficients, physical pressure and time."""

    u: np.ndarray
    p: np.ndarray
    time: float = 0.0


def picard_timestep(state: FlowState, solver: SaddleSolver, tol: float = 1e-8, max_iter: int = 30,
                    window: int = 4, convection: bool = True) -> tuple[FlowState, SolverReport]:
    """Advance one time step with Picard iterations on the convective term.

    Each pass freezes the advecting velocity at the average of the old
    state and the current iterate, evaluates the explicit convective
    right-hand side and solves the linear system with the nested solver.
    Iteration stops when the relative change of the velocity drops below
    ``tol``, or earlier when the current iterate already satisfies the
    relinearised system to the outer tolerance.  The returned count is the
    number of linear solves.

    Raises
    ------
    PicardDivergenceError
        If the update norm fails to decrease over ``window`` iterations.
    """
    system = solver.system
    grid, vb = system.grid, system.vbasis
    report_before = _snapshot(solver.report)
    dirichlet = None
    if system.inlet_mode == "dirichlet":
        dirichlet = (system.bc_rows["inlet"], system.inlet_values)
    Mu = system.M @ state.u
    u_k = state.u.copy()
    x_prev = np.concatenate([state.u, system.dt * state.p])
    updates = []
    iterations = 0
    p_new = state.p
    while True:
        if convection:
            adv = 0.5 * (state.u + u_k)
            b_u = Mu + system.dt * convective_rhs(grid, vb, state.u, system.rho, dt=system.dt,
                                                  advecting=adv, dirichlet=dirichlet, mass=system.M)
        else:
            b_u = Mu
        rhs = np.concatenate([system.momentum_rhs(b_u), np.zeros(system.n_pressure)])
        if iterations > 0:
            # the previous iterate already solves the relinearised system
            nonlinear_res = np.linalg.norm(rhs - solver.matrix @ x_prev) / max(np.linalg.norm(rhs), 1e-300)
            if nonlinear_res <= solver.config.outer.tol:
                updates.append(0.0)
                break
        iterations += 1
        u_new, p_new, res = solver.solve(rhs, x0=x_prev)
        if not res.converged:
            raise ConvergenceError("K_A", res)
        scale = max(np.linalg.norm(u_new), np.finfo(float).tiny)
        updates.append(np.linalg.norm(u_new - u_k) / scale)
        u_k = u_new
        x_prev = np.concatenate([u_new, system.dt * p_new])
        if updates[-1] < tol or not convection:
            break
        if iterations >= max_iter:
            raise PicardDivergenceError(updates)
        if len(updates) > window and updates[-1] >= updates[-1 - window]:
            raise PicardDivergenceError(updates)
    step_report = _diff(solver.report, report_before)
    step_report.picard.append(iterations)
    solver.report.picard.append(iterations)
    step_report.meta["picard_updates"] = updates
    return FlowState(u_k, p_new, state.time + system.dt), step_report


def _snapshot(report: SolverReport):
    return ({k: len(v) for k, v in report.counts.items()}, len(report.histories.get("K_A", [])),
            report.wall_time)


def _diff(report: SolverReport, snap) -> SolverReport:
    lens, nhist, wall = snap
    out = SolverReport()
    for k in LEVELS:
        out.counts[k] = report.counts[k][lens[k]:]
        out.converged[k] = report.converged[k][lens[k]:]
    out.histories["K_A"] = report.histories.get("K_A", [])[nhist:]
    out.wall_time = report.wall_time - wall
    return out
