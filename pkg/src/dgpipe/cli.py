"""Command line front end: ``dgpipe {spectrum,solve,simulate,bench}``.

Every run is described by a :class:`RunConfig`.  It can come from a JSON
file (``--config``), and any flag given on the command line overrides the
file.  The canonical form of the configuration is written next to the
results.
"""

from __future__ import annotations

import argparse
import csv
import json
import statistics
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .assembly import export_matrix_market, poiseuille_state
from .experiments import GEOMETRIES, Scenario, initial_state, load_width_table, run_steps
from .solvers import (
    PRECONDITIONERS,
    ConvergenceError,
    PicardDivergenceError,
    SaddleSolver,
    SolverConfig,
    SolverReport,
    picard_timestep,
)
from .spectral import (
    DENSE_THRESHOLD,
    SPECTRUM_MATRICES,
    DenseThresholdError,
    operator_spectrum,
    schur_power_law,
)
from .symbols import PhysicalParams

__all__ = ["RunConfig", "ConfigError", "main", "cmd_spectrum", "cmd_solve", "cmd_simulate",
           "cmd_bench", "format_table", "build_parser"]

COMMANDS = ("spectrum", "solve", "simulate", "bench")
CLI_PRECONDITIONERS = tuple(p for p in PRECONDITIONERS if p != "exact")
SCHUR_CONSTANTS = ("auto", "2d", "3d")
GROWTH_LIMIT = 2.4


class ConfigError(ValueError):
    """Invalid run configuration (reported as a usage error)."""


def _is_3d_geometry(geometry: str) -> bool:
    if geometry.startswith("custom:"):
        _, height = load_width_table(geometry.split(":", 1)[1])
        return height is not None
    return geometry.endswith("3d")


@dataclass
class RunConfig:
    """One invocation of the command line tool."""

    command: str = "solve"
    n: tuple = (40,)
    nx: int = 1
    ny: int = 3
    nz: int | None = None
    geometry: str = "pipe"
    rho: float = 1000.0
    mu: float = 1e-3
    c: float = 1.0
    length: float = 1.0
    flow_rate: float = 5e-6
    precond: str = "circulant-dx"
    schur_constant: str = "auto"
    tol_outer: float = 1e-8
    tol_schur: float = 1e-6
    tol_n: float = 1e-5
    tol_dg: float = 1e-5
    steps: int = 3
    initial: str = "rest"
    matrix: tuple = ("L",)
    samples: int = 1000
    outliers: int = 8
    threshold: int = DENSE_THRESHOLD
    repeats: int = 3
    out: str = "results"
    dump_matrices: bool = False
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.n = tuple(int(v) for v in _as_list(self.n))
        self.matrix = tuple(str(v) for v in _as_list(self.matrix))
        self.validate()

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}; choose from {COMMANDS}")
        if not self.n or any(v < 1 for v in self.n):
            raise ConfigError(f"--n needs positive cell counts, got {self.n}")
        if self.geometry not in GEOMETRIES and not self.geometry.startswith("custom:"):
            raise ConfigError(f"unknown geometry {self.geometry!r}; choose from {GEOMETRIES} or custom:<path>")
        if self.geometry.startswith("custom:") and not Path(self.geometry.split(":", 1)[1]).is_file():
            raise ConfigError(f"width table {self.geometry.split(':', 1)[1]!r} not found")
        is_3d = _is_3d_geometry(self.geometry)
        if self.nx < 1 or self.ny < 1:
            raise ConfigError("nx and ny must be at least 1")
        if self.nz is not None and not is_3d:
            raise ConfigError(f"--nz given for the 2D geometry {self.geometry!r}")
        if self.nz is not None and self.nz < 1:
            raise ConfigError("nz must be at least 1")
        if self.precond not in CLI_PRECONDITIONERS:
            raise ConfigError(f"unknown preconditioner {self.precond!r}; choose from {CLI_PRECONDITIONERS}")
        if self.schur_constant not in SCHUR_CONSTANTS:
            raise ConfigError(f"schur constant must be one of {SCHUR_CONSTANTS}")
        if self.schur_constant == "3d" and not is_3d:
            raise ConfigError("the 3D Schur preconditioner cannot be used on a 2D geometry")
        for name in ("rho", "mu", "c", "length", "flow_rate"):
            if not getattr(self, name) > 0 and not (name == "flow_rate" and self.flow_rate == 0):
                raise ConfigError(f"{name} must be positive")
        for name in ("tol_outer", "tol_schur", "tol_n", "tol_dg"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError(f"{name} must lie in (0, 1)")
        if self.steps < 1 or self.repeats < 1 or self.samples < 2 or self.outliers < 0:
            raise ConfigError("steps and repeats must be positive, samples at least 2, outliers nonnegative")
        if self.initial not in ("rest", "poiseuille"):
            raise ConfigError("initial state must be 'rest' or 'poiseuille'")
        if self.command == "spectrum":
            unknown = [m for m in self.matrix if m not in SPECTRUM_MATRICES]
            if unknown:
                raise ConfigError(f"unknown matrix {unknown[0]!r}; choose from {SPECTRUM_MATRICES}")
            if is_3d or self.nx != 1 or self.ny != 3:
                raise ConfigError("spectrum compares with the symbols of the 2D nx=1, ny=3 discretization")

    # -- serialisation -----------------------------------------------------

    def to_dict(self) -> dict:
        out = asdict(self)
        out["n"] = list(self.n)
        out["matrix"] = list(self.matrix)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {unknown}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    # -- derived objects ---------------------------------------------------

    @property
    def is_3d(self) -> bool:
        return _is_3d_geometry(self.geometry)

    def resolved_constant(self) -> str:
        if self.schur_constant == "auto":
            return "3d" if self.is_3d else "2d"
        return self.schur_constant

    def solver_config(self) -> SolverConfig:
        base = SolverConfig(precond=self.precond, schur_constant=self.resolved_constant())
        return base.with_tolerances(self.tol_outer, self.tol_schur, self.tol_n, self.tol_dg)

    def scenario(self, n: int) -> Scenario:
        return Scenario(geometry=self.geometry, n=n, nx=self.nx, ny=self.ny, nz=self.nz, rho=self.rho,
                        mu=self.mu, c=self.c, length=self.length, flow_rate=self.flow_rate,
                        initial=self.initial, steps=self.steps)


def _as_list(value):
    if isinstance(value, str):
        return [v for v in value.split(",") if v.strip()]
    if isinstance(value, (int, float)):
        return [value]
    return list(value)


# ---------------------------------------------------------------------------
# tables


def format_table(rows: list[dict], precond: str, picard: bool = False) -> str:
    """Plain-text iteration table; LSC runs get an extra ``K_DG`` column."""
    cols = ["n"] + (["Picard"] if picard else []) + ["K_A", "K_S"]
    if precond == "lsc":
        cols.append("K_DG")
    cols.append("time (s)")
    lines = [[str(r["n"])] + ([r.get("picard_text", "-")] if picard else []) + [r["K_A"], r["K_S"]]
             + ([r.get("K_DG", "-")] if precond == "lsc" else []) + [f"{r['time']:.3e}"] for r in rows]
    widths = [max(len(c), *(len(line[k]) for line in lines)) if lines else len(c) for k, c in enumerate(cols)]
    fmt = " | ".join(f"{{:>{w}}}" for w in widths)
    out = [f"preconditioner: {precond}", fmt.format(*cols), "-+-".join("-" * w for w in widths)]
    out.extend(fmt.format(*line) for line in lines)
    return "\n".join(out) + "\n"


def _row(n: int, report: SolverReport) -> dict:
    row = {"n": n, "K_A": report.range_text("K_A"), "K_S": report.range_text("K_S"),
           "K_DG": report.range_text("K_DG"), "time": report.wall_time}
    if report.picard:
        lo, hi = min(report.picard), max(report.picard)
        row["picard_text"] = str(lo) if lo == hi else f"{lo} -- {hi}"
    return row


def _dump_matrices(system, directory: Path):
    directory.mkdir(parents=True, exist_ok=True)
    for name in ("N", "G", "D", "E"):
        export_matrix_market(directory / f"{name}.mtx", getattr(system, name), comment=f"{name} block")
    export_matrix_market(directory / "A_scaled.mtx", system.scaled_matrix(), comment="column-scaled saddle matrix")


# ---------------------------------------------------------------------------
# commands


def cmd_spectrum(cfg: RunConfig) -> dict:
    """Sorted spectra against symbol samples; one CSV/JSON pair per (matrix, n)."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    width = float(cfg.scenario(cfg.n[0]).grid().width(0.0))
    params = PhysicalParams(d=width, mu=cfg.mu, rho=cfg.rho, c=cfg.c)
    summary = {"config": cfg.to_dict(), "results": []}
    for name in cfg.matrix:
        for n in cfg.n:
            rep = operator_spectrum(name, n, params, cfg.samples, cfg.outliers, cfg.threshold)
            stem = out / f"spectrum_{name}_n{n}"
            rep.to_csv(stem.with_suffix(".csv"))
            rep.to_json(stem.with_suffix(".json"))
            entry = rep.metadata()
            if name == "schur":
                coef, gamma, _, _ = schur_power_law(n, params, threshold=cfg.threshold)
                entry["power_law"] = {"coef": coef, "gamma": gamma}
            summary["results"].append(entry)
            print(f"{name:>6} n={n:<5} sup={rep.sup:.4e} trimmed={rep.trimmed_sup:.4e} mean={rep.mean:.4e}")
    (out / "spectrum_summary.json").write_text(json.dumps(summary, indent=2))
    return summary


def cmd_solve(cfg: RunConfig) -> dict:
    """Picard time steps from the initial state; iteration table per n."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    solver_cfg = cfg.solver_config()
    rows, reports = [], []
    for n in cfg.n:
        _, report, system = run_steps(cfg.scenario(n), solver_cfg)
        rows.append(_row(n, report))
        reports.append({"n": n, "summary": report.summary(), "counts": report.counts,
                        "converged": report.converged, "picard": report.picard})
        if cfg.dump_matrices:
            _dump_matrices(system, out / f"matrices_n{n}")
    table = format_table(rows, cfg.precond)
    (out / "solve_table.txt").write_text(table)
    payload = {"config": cfg.to_dict(), "reports": reports}
    (out / "solve_report.json").write_text(json.dumps(payload, indent=2, default=float))
    print(table, end="")
    return payload


def _write_snapshot(path: Path, state):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["field", "index", "value"])
        w.writerows(("u", k, repr(float(v))) for k, v in enumerate(state.u))
        w.writerows(("p", k, repr(float(v))) for k, v in enumerate(state.p))


def cmd_simulate(cfg: RunConfig) -> dict:
    """Time steps with velocity/pressure snapshots and nonlinear counts."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    solver_cfg = cfg.solver_config()
    rows, results = [], []
    for n in cfg.n:
        scenario = cfg.scenario(n)
        system = scenario.system()
        solver = SaddleSolver(system, solver_cfg)
        state = initial_state(system, cfg.flow_rate, cfg.initial)
        report = SolverReport()
        for step in range(cfg.steps):
            state, step_report = picard_timestep(state, solver)
            report.merge(step_report)
            _write_snapshot(out / f"state_n{n}_step{step + 1}.csv", state)
        entry = {"n": n, "picard": report.picard, "summary": report.summary()}
        if cfg.geometry in ("pipe", "pipe3d"):
            exact = poiseuille_state(system.grid, system.vbasis, cfg.flow_rate)
            entry["velocity_error"] = float(np.abs(state.u - exact).max() / np.abs(exact).max())
        results.append(entry)
        rows.append(_row(n, report))
        if cfg.dump_matrices:
            _dump_matrices(system, out / f"matrices_n{n}")
    table = format_table(rows, cfg.precond, picard=True)
    (out / "simulate_table.txt").write_text(table)
    payload = {"config": cfg.to_dict(), "results": results}
    (out / "simulate_report.json").write_text(json.dumps(payload, indent=2, default=float))
    print(table, end="")
    return payload


def cmd_bench(cfg: RunConfig) -> dict:
    """Median wall time of repeated linear solves after a warm-up solve."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    solver_cfg = cfg.solver_config()
    rows = []
    for n in cfg.n:
        system = cfg.scenario(n).system()
        solver = SaddleSolver(system, solver_cfg)
        solver.solve()
        times = []
        for _ in range(cfg.repeats):
            solver.report = SolverReport()
            t0 = time.perf_counter()
            solver.solve()
            times.append(time.perf_counter() - t0)
        rows.append({"n": n, "median_time": statistics.median(times), "times": times,
                     "K_A": solver.report.range_text("K_A"), "K_S": solver.report.range_text("K_S")})
    growth = []
    for a, b in zip(rows, rows[1:]):
        if a["n"] >= 160 and b["n"] == 2 * a["n"]:
            ratio = b["median_time"] / a["median_time"]
            growth.append({"from": a["n"], "to": b["n"], "ratio": ratio, "ok": ratio < GROWTH_LIMIT})
    payload = {"config": cfg.to_dict(), "rows": rows, "growth": growth}
    (out / "bench_report.json").write_text(json.dumps(payload, indent=2))
    for r in rows:
        print(f"n={r['n']:<6} median={r['median_time']:.3e}s  K_A={r['K_A']}  K_S={r['K_S']}")
    for g in growth:
        status = "ok" if g["ok"] else "SLOW"
        print(f"growth {g['from']} -> {g['to']}: x{g['ratio']:.2f} ({status}, limit {GROWTH_LIMIT})")
    return payload


COMMAND_FUNCS = {"spectrum": cmd_spectrum, "solve": cmd_solve, "simulate": cmd_simulate, "bench": cmd_bench}


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dgpipe", description="Staggered DG channel flow: spectra and solvers.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON run configuration; flags override it")
    common.add_argument("--n", help="cell count or comma separated sweep, e.g. 10,20,40")
    common.add_argument("--nx", type=int)
    common.add_argument("--ny", type=int)
    common.add_argument("--nz", type=int)
    common.add_argument("--geometry", help=f"one of {', '.join(GEOMETRIES)} or custom:<path>")
    common.add_argument("--rho", type=float)
    common.add_argument("--mu", type=float)
    common.add_argument("--c", type=float, help="dt / dx, kept fixed under refinement")
    common.add_argument("--length", type=float)
    common.add_argument("--flow-rate", dest="flow_rate", type=float)
    common.add_argument("--precond", choices=CLI_PRECONDITIONERS)
    common.add_argument("--schur-constant", dest="schur_constant", choices=SCHUR_CONSTANTS)
    common.add_argument("--tol-outer", dest="tol_outer", type=float)
    common.add_argument("--tol-schur", dest="tol_schur", type=float)
    common.add_argument("--tol-n", dest="tol_n", type=float)
    common.add_argument("--tol-dg", dest="tol_dg", type=float)
    common.add_argument("--steps", type=int)
    common.add_argument("--initial", choices=("rest", "poiseuille"))
    common.add_argument("--out", help="output directory")
    common.add_argument("--dump-matrices", dest="dump_matrices", action="store_true",
                        help="write N, G, D, E and the scaled matrix in MatrixMarket format")
    for name, helptext in (("spectrum", "sorted spectra against symbol samples"),
                           ("solve", "iteration counts of the nested solver"),
                           ("simulate", "time steps with state snapshots"),
                           ("bench", "median solve times and growth check")):
        p = sub.add_parser(name, parents=[common], help=helptext, argument_default=argparse.SUPPRESS)
        if name == "spectrum":
            p.add_argument("--matrix", help=f"comma separated subset of {', '.join(SPECTRUM_MATRICES)}")
            p.add_argument("--samples", type=int)
            p.add_argument("--outliers", type=int)
            p.add_argument("--threshold", type=int, help="dense eigensolve size cap")
        if name == "bench":
            p.add_argument("--repeats", type=int)
    return parser


def parse_config(argv=None) -> RunConfig:
    """Parse arguments into a validated :class:`RunConfig` (raises ``SystemExit`` on usage errors)."""
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    data = {}
    config_path = args.pop("config", None)
    if config_path:
        try:
            data = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {config_path}: {exc}")
    data.update(args)
    try:
        return RunConfig.from_dict(data)
    except (ConfigError, TypeError, ValueError) as exc:
        parser.error(str(exc))


def main(argv=None) -> int:
    cfg = parse_config(argv)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.json").write_text(cfg.to_json())
    try:
        COMMAND_FUNCS[cfg.command](cfg)
    except DenseThresholdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PicardDivergenceError as exc:
        print(f"error: Picard iteration diverged; update history {exc.history}", file=sys.stderr)
        return 1
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
