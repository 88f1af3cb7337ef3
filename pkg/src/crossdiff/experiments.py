"""Benchmark convergence studies, stationary states, and segregation metrics."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import SimulationConfig
from .integrators import (
    FixedPointError,
    TimeGrid,
    Trajectory,
    advance,
    integrate,
    step_implicit,
)
from .mesh import Mesh1D
from .scheme import Model
from .state import State, overlap

log = logging.getLogger(__name__)


@dataclass
class ErrorReport:
    """Errors of a grid ladder against one benchmark run."""

    grid_sizes: np.ndarray
    errors: np.ndarray
    fitted_order: float
    benchmark_descriptor: dict
    # benchmark trajectory first, then one per study grid
    runs: list = field(default_factory=list, repr=False)

    @property
    def ratios(self) -> np.ndarray:
        """Error reduction factor between consecutive grids."""
        return self.errors[:-1] / self.errors[1:]

    def rows(self):
        return [(float(h), float(e)) for h, e in zip(self.grid_sizes, self.errors)]

    def summary(self) -> dict:
        return {
            "grid_sizes": [float(h) for h in self.grid_sizes],
            "errors": [float(e) for e in self.errors],
            "fitted_order": float(self.fitted_order),
            "ratios": [float(r) for r in self.ratios],
            "benchmark": self.benchmark_descriptor,
        }


@dataclass
class StationaryReport:
    state: State
    residual: float
    time: float
    overlap: float
    supports: dict
    stationary: bool
    steps: int = 0
    residual_history: list = field(default_factory=list)
    min_value: float = 0.0
    mass_drift: float = 0.0


# ------------------------------------------------------------ error metric


def restrict_benchmark(fine: Trajectory, coarse_mesh: Mesh1D, report_times) -> tuple[np.ndarray, np.ndarray]:
    """Sample the fine piecewise-constant solution at coarse cell centers.

    For each report time the stored snapshot nearest to it is used.  Returns
    arrays of shape ``(len(report_times), coarse_mesh.n_cells)``.
    """
    fm = fine.mesh
    tol = 1e-12 * max(1.0, abs(fm.b), abs(fm.a))
    if abs(fm.a - coarse_mesh.a) > tol or abs(fm.b - coarse_mesh.b) > tol:
        raise ValueError(
            f"benchmark domain [{fm.a}, {fm.b}] differs from [{coarse_mesh.a}, {coarse_mesh.b}]"
        )
    idx = fm.cell_index(coarse_mesh.centers)
    k = np.array([int(np.argmin(np.abs(fine.times - t))) for t in np.atleast_1d(report_times)])
    return fine.rho[np.ix_(k, idx)], fine.eta[np.ix_(k, idx)]


def benchmark_error(ref_rho, ref_eta, rho, eta, mesh: Mesh1D, dt: float) -> float:
    """``(dt sum_k sum_i dx_i (|rho_ex - rho|^2 + |eta_ex - eta|^2))^(1/2)``.

    All arrays have shape ``(K, N)`` with one row per report time ``t_1..t_K``.
    """
    sq = (np.asarray(ref_rho) - rho) ** 2 + (np.asarray(ref_eta) - eta) ** 2
    return math.sqrt(dt * float(np.sum(sq @ mesh.widths)))


def fit_order(grid_sizes, errors) -> float:
    """Least-squares slope of ``log e`` against ``log dx``."""
    h = np.asarray(grid_sizes, dtype=float)
    e = np.asarray(errors, dtype=float)
    if np.any(e <= 0):
        return math.nan
    return float(np.polyfit(np.log(h), np.log(e), 1)[0])


def simulate(config: SimulationConfig, dx: float | None = None) -> Trajectory:
    """Run ``config`` (optionally on a uniform mesh of spacing ``dx``)."""
    mesh = config.build_mesh(dx)
    model = config.build_model(mesh)
    state = config.initial_state(mesh)
    grid = TimeGrid(config.dt_report, config.t_final)
    return integrate(state, model, grid, config.integrator, **config.integrator_options())


def convergence_study(
    config: SimulationConfig,
    grid_sizes=None,
    benchmark_dx: float | None = None,
    *,
    threads: int | None = None,
    benchmark: Trajectory | None = None,
) -> ErrorReport:
    """Errors of each study grid against a finer benchmark run, plus the fitted order."""
    study = config.raw.get("study", {})
    grids = np.asarray(grid_sizes if grid_sizes is not None else study["grids"], dtype=float)
    bdx = float(benchmark_dx if benchmark_dx is not None else study["benchmark"])
    if grids.size < 2 or np.any(np.diff(grids) >= 0):
        raise ValueError("grid_sizes must hold at least two strictly decreasing values")
    if not bdx < grids.min():
        raise ValueError("benchmark grid must be finer than every study grid")
    threads = threads or config.threads

    times = TimeGrid(config.dt_report, config.t_final).report_times()
    jobs = [None if benchmark is not None else bdx] + list(grids)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        runs = list(pool.map(lambda d: None if d is None else simulate(config, d), jobs))
    fine = benchmark if benchmark is not None else runs[0]

    errors = []
    for run in runs[1:]:
        ref_r, ref_e = restrict_benchmark(fine, run.mesh, times)
        errors.append(benchmark_error(ref_r, ref_e, run.rho[1:], run.eta[1:], run.mesh, config.dt_report))
    errors = np.array(errors)
    descriptor = {
        "dx": bdx,
        "n_cells": fine.mesh.n_cells,
        "domain": [fine.mesh.a, fine.mesh.b],
        "t_final": config.t_final,
        "dt_report": config.dt_report,
        "integrator": config.integrator,
        **{k: v for k, v in config.integrator_options().items()},
    }
    return ErrorReport(grids, errors, fit_order(grids, errors), descriptor, [fine] + runs[1:])


# ------------------------------------------------------------ stationarity


def stationarity_residual(model: Model, state: State) -> float:
    """``max|d rho/dt| + max|d eta/dt|`` of the semi-discrete scheme."""
    dr, de = model.rhs(state)
    return float(np.max(np.abs(dr)) + np.max(np.abs(de)))


def segregation_overlap(state: State) -> float:
    """``sum_i dx_i rho_i eta_i``; zero iff the supports are disjoint cell-wise."""
    return overlap(state.rho, state.eta, state.mesh)


def support_intervals(values, mesh: Mesh1D, threshold: float = 1e-6) -> list[tuple[float, float]]:
    """Maximal runs of cells with value above ``threshold``, as edge intervals."""
    on = np.concatenate([[False], np.asarray(values) > threshold, [False]])
    flips = np.flatnonzero(on[1:] != on[:-1])
    return [(float(mesh.edges[s]), float(mesh.edges[e])) for s, e in zip(flips[::2], flips[1::2])]


def run_to_stationary(
    config: SimulationConfig,
    tol: float | None = None,
    t_max: float | None = None,
    *,
    state: State | None = None,
    dt0: float | None = None,
    growth: float = 1.5,
    dt_max: float | None = None,
    support_threshold: float = 1e-6,
) -> StationaryReport:
    """Integrate until the rhs residual drops below ``tol`` or ``t_max`` is hit.

    The implicit integrator grows its step geometrically after each accepted
    step (and halves it on solver failure); RK4 marches by reporting
    intervals.  Reaching ``t_max`` flags the report non-stationary.
    """
    stat = config.raw.get("stationary", {})
    tol = float(tol if tol is not None else stat.get("tol", 1e-8))
    t_max = float(t_max if t_max is not None else stat.get("t_max", 1000.0))
    if not tol > 0:
        raise ValueError("tol must be positive")
    if state is None:
        mesh = config.build_mesh()
        state = config.initial_state(mesh)
    model = config.build_model(state.mesh)
    res = stationarity_residual(model, state)
    history = [(state.time, res)]
    steps = 0
    m0 = np.array([state.mass_rho, state.mass_eta])
    track = {"min": state.min_value(), "drift": 0.0}

    def observe(s: State):
        track["min"] = min(track["min"], s.min_value())
        m = np.array([s.mass_rho, s.mass_eta])
        track["drift"] = max(track["drift"], float(np.max(np.abs(m - m0) / np.maximum(m0, 1e-300))))

    if config.integrator == "implicit_euler":
        opts = config.integrator_options()
        dt = float(dt0 or opts["implicit_dt"] or config.dt_report)
        dt_max = float(dt_max or stat.get("dt_max") or max(100.0 * dt, t_max / 20))
        while res >= tol and state.time < t_max:
            step = min(dt, t_max - state.time)
            try:
                state, _ = step_implicit(state, step, model, opts["fp_tol"], opts["fp_max_iter"], opts["solver"])
            except FixedPointError:
                dt = 0.5 * step
                if dt < 1e-12:
                    raise
                continue
            steps += 1
            observe(state)
            res = stationarity_residual(model, state)
            history.append((state.time, res))
            dt = min(growth * dt, dt_max)
    else:
        opts = config.integrator_options()
        stats: dict = {}
        while res >= tol and state.time < t_max:
            target = min(state.time + config.dt_report, t_max)
            state = advance(state, model, target, "rk4", stats=stats, **opts)
            observe(state)
            track["min"] = min(track["min"], stats["min_value"])
            res = stationarity_residual(model, state)
            history.append((state.time, res))
        steps = stats.get("steps", 0)

    supports = {
        "rho": support_intervals(state.rho, state.mesh, support_threshold),
        "eta": support_intervals(state.eta, state.mesh, support_threshold),
    }
    return StationaryReport(
        state=state,
        residual=res,
        time=state.time,
        overlap=segregation_overlap(state),
        supports=supports,
        stationary=res < tol,
        steps=steps,
        residual_history=history,
        min_value=track["min"],
        mass_drift=track["drift"],
    )
