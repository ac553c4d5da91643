"""Channel geometries and run drivers shared by the command line and tests."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assembly import (
    SaddleSystem,
    assemble_saddle_system,
    parabolic_inlet,
    poiseuille_state,
)
from .grid_basis import (
    ConstantProfile,
    LinearProfile,
    StaggeredGrid,
    TabulatedProfile,
    build_staggered_grid,
    lagrange_tensor_basis,
)
from .solvers import FlowState, SaddleSolver, SolverConfig, SolverReport, picard_timestep

__all__ = [
    "GEOMETRIES",
    "Scenario",
    "make_grid",
    "make_system",
    "run_steps",
    "load_width_table",
]

GEOMETRIES = ("pipe", "nozzle2d", "pipe3d", "nozzle3d")

INLET_WIDTH = 0.025
OUTLET_WIDTH = 0.0125


def load_width_table(path) -> tuple[TabulatedProfile, TabulatedProfile | None]:
    """Read ``x,width[,height]`` rows (comma separated, optional header)."""
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            rows.append([float(v) for v in line.split(",")])
        except ValueError:
            if rows:
                raise
            continue  # header
    data = np.array(rows)
    if data.ndim != 2 or data.shape[1] not in (2, 3):
        raise ValueError(f"{path}: expected two or three columns (x, width[, height])")
    width = TabulatedProfile(tuple(data[:, 0]), tuple(data[:, 1]))
    height = TabulatedProfile(tuple(data[:, 0]), tuple(data[:, 2])) if data.shape[1] == 3 else None
    return width, height


def make_grid(geometry: str, n: int, length: float = 1.0, c: float = 1.0) -> StaggeredGrid:
    """Grid of a named channel; ``dt = c * dx`` keeps ``c`` fixed under refinement.

    ``custom:<path>`` reads a width table (see :func:`load_width_table`).
    """
    dt = c * length / n
    if geometry == "pipe":
        return build_staggered_grid(n, length, ConstantProfile(INLET_WIDTH), dt)
    if geometry == "nozzle2d":
        return build_staggered_grid(n, length, LinearProfile(INLET_WIDTH, OUTLET_WIDTH, length), dt)
    if geometry == "pipe3d":
        side = ConstantProfile(INLET_WIDTH)
        return build_staggered_grid(n, length, side, dt, side)
    if geometry == "nozzle3d":
        side = LinearProfile(INLET_WIDTH, OUTLET_WIDTH, length)
        return build_staggered_grid(n, length, side, dt, side)
    if geometry.startswith("custom:"):
        width, height = load_width_table(geometry.split(":", 1)[1])
        return build_staggered_grid(n, length, width, dt, height)
    raise ValueError(f"unknown geometry {geometry!r}; choose from {GEOMETRIES} or custom:<path>")


def make_system(grid: StaggeredGrid, nx: int = 1, ny: int = 3, nz: int | None = None,
                rho: float = 1000.0, mu: float = 1e-3, flow_rate: float = 5e-6,
                outlet_pressure: float = 0.0, alpha0: float = 1.0) -> SaddleSystem:
    """Saddle system with a Poiseuille inlet of the given flow rate."""
    if grid.is_3d and nz is None:
        nz = 2
    if not grid.is_3d:
        nz = None
    vb = lagrange_tensor_basis(nx, ny, nz, "velocity")
    pb = lagrange_tensor_basis(nx, 0, None, "pressure")
    w0 = float(grid.width(0.0))
    h0 = None if grid.height is None else float(grid.height(0.0))
    inlet = parabolic_inlet(flow_rate, w0, h0)
    return assemble_saddle_system(grid, vb, pb, rho, mu, alpha0, inlet_profile=inlet,
                                  outlet_pressure=outlet_pressure)


@dataclass
class Scenario:
    """Everything needed to run one configuration at one resolution."""

    geometry: str = "pipe"
    n: int = 40
    nx: int = 1
    ny: int = 3
    nz: int | None = None
    rho: float = 1000.0
    mu: float = 1e-3
    c: float = 1.0
    length: float = 1.0
    flow_rate: float = 5e-6
    initial: str = "rest"
    steps: int = 2
    extra: dict = field(default_factory=dict)

    def grid(self) -> StaggeredGrid:
        return make_grid(self.geometry, self.n, self.length, self.c)

    def system(self) -> SaddleSystem:
        return make_system(self.grid(), self.nx, self.ny, self.nz, self.rho, self.mu, self.flow_rate)


def initial_state(system: SaddleSystem, flow_rate: float, kind: str = "rest") -> FlowState:
    """``"rest"``: zero velocity with the inlet values; ``"poiseuille"``: local parabola."""
    if kind == "poiseuille":
        u = poiseuille_state(system.grid, system.vbasis, flow_rate)
    elif kind == "rest":
        u = np.zeros(system.n_velocity)
        if system.inlet_mode == "dirichlet":
            u[system.bc_rows["inlet"]] = system.inlet_values
    else:
        raise ValueError(f"unknown initial state {kind!r}")
    return FlowState(u, np.zeros(system.n_pressure), 0.0)


def run_steps(scenario: Scenario, config: SolverConfig, steps: int | None = None,
              picard_tol: float = 1e-8, callback=None):
    """Run Picard time steps and collect one merged :class:`SolverReport`.

    Returns ``(final_state, report, system)``.  ``callback(step, state)`` is
    invoked after every step.
    """
    steps = scenario.steps if steps is None else steps
    t0 = time.perf_counter()
    system = scenario.system()
    solver = SaddleSolver(system, config)
    setup = time.perf_counter() - t0
    state = initial_state(system, scenario.flow_rate, scenario.initial)
    report = SolverReport()
    for k in range(steps):
        state, step_report = picard_timestep(state, solver, tol=picard_tol)
        report.merge(step_report)
        if callback is not None:
            callback(k, state)
    report.meta.update({"n": scenario.n, "geometry": scenario.geometry, "precond": config.precond,
                        "setup_time": setup, "steps": steps})
    return state, report, system
