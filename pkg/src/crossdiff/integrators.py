"""Time integration: explicit RK4 with stability substepping and implicit Euler.

The implicit step solves the fully discrete scheme in which the interaction
gradients ``dV_k`` are taken at the old time level and everything else at the
new one.  Two solvers are available:

``picard``
    Iterates the linearised map: freeze ``dU`` and the diffusion viscosities
    ``eps (c_i + c_{i+1}) / 2`` at the current iterate and solve one
    tridiagonal M-matrix system per species.  Contracts only for time steps of
    roughly explicit size.
``newton``
    Newton's method on the same nonlinear system with a sparse Jacobian,
    finished by one Picard sweep.  The sweep is an M-matrix solve with
    nonnegative data, so the accepted iterate is nonnegative in floating
    point and conserves mass to roundoff.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numba
import numpy as np
from scipy.linalg import solve_banded

from .scheme import Model, negative_part, positive_part
from .state import State, discrete_gradient

log = logging.getLogger(__name__)

DEFAULT_CFL_SAFETY = 0.4
DEFAULT_FP_TOL = 1e-10
DEFAULT_FP_MAX_ITER = 200


class BlowUpError(FloatingPointError):
    pass


class SingularSystemError(ArithmeticError):
    pass


class FixedPointError(RuntimeError):
    """The implicit solve did not converge; ``report`` holds the details."""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


@dataclass
class TimeGrid:
    dt_report: float
    t_final: float

    def __post_init__(self):
        if not self.dt_report > 0 or not self.t_final > 0:
            raise ValueError("dt_report and t_final must be positive")

    @property
    def n_reports(self) -> int:
        # guard against 2.0 / 0.05 landing a hair above 40
        return int(math.ceil(self.t_final / self.dt_report - 1e-9))

    def report_times(self) -> np.ndarray:
        t = np.arange(1, self.n_reports + 1) * self.dt_report
        t[-1] = self.t_final
        return t


@dataclass
class FixedPointReport:
    iterations: int
    residual: float
    converged: bool
    cfl_ratio: float
    solver: str = "picard"
    history: list = field(default_factory=list)

    @property
    def uniqueness_guaranteed(self) -> bool:
        return self.cfl_ratio < 1.0


# --------------------------------------------------------------------- linear


@numba.njit(cache=True)
def _thomas(lower, diag, upper, rhs):
    n = diag.size
    c = np.empty(n)
    d = np.empty(n)
    x = np.empty(n)
    if diag[0] == 0.0:
        return x, 0
    c[0] = upper[0] / diag[0] if n > 1 else 0.0
    d[0] = rhs[0] / diag[0]
    for k in range(1, n):
        piv = diag[k] - lower[k - 1] * c[k - 1]
        if piv == 0.0:
            return x, k
        if k < n - 1:
            c[k] = upper[k] / piv
        d[k] = (rhs[k] - lower[k - 1] * d[k - 1]) / piv
    x[n - 1] = d[n - 1]
    for k in range(n - 2, -1, -1):
        x[k] = d[k] - c[k] * x[k + 1]
    return x, -1


def tridiagonal_solve(lower, diag, upper, rhs) -> np.ndarray:
    """Thomas algorithm for a tridiagonal system.

    ``lower`` and ``upper`` hold the N-1 sub- and super-diagonal entries.
    No pivoting: intended for diagonally dominant systems.
    """
    diag = np.ascontiguousarray(diag, dtype=float)
    n = diag.size
    lower = np.ascontiguousarray(lower, dtype=float)
    upper = np.ascontiguousarray(upper, dtype=float)
    rhs = np.ascontiguousarray(rhs, dtype=float)
    if lower.size != n - 1 or upper.size != n - 1 or rhs.size != n:
        raise ValueError("tridiagonal_solve: inconsistent sizes")
    x, failed = _thomas(lower, diag, upper, rhs)
    if failed >= 0:
        raise SingularSystemError(f"zero pivot in row {failed}")
    return x


# ---------------------------------------------------------------- explicit


def _check_finite(rho, eta, t):
    if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(eta))):
        raise BlowUpError(f"blow-up at t={t:.6g}")


def step_rk4(state: State, dt: float, model: Model) -> State:
    """One classical RK4 step of the semi-discrete scheme. Nothing is clamped."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    f = model.time_derivative
    r0, e0, t = state.rho, state.eta, state.time
    k1r, k1e = f(r0, e0, t)
    _check_finite(k1r, k1e, t)
    k2r, k2e = f(r0 + 0.5 * dt * k1r, e0 + 0.5 * dt * k1e, t + 0.5 * dt)
    _check_finite(k2r, k2e, t)
    k3r, k3e = f(r0 + 0.5 * dt * k2r, e0 + 0.5 * dt * k2e, t + 0.5 * dt)
    _check_finite(k3r, k3e, t)
    k4r, k4e = f(r0 + dt * k3r, e0 + dt * k3e, t + dt)
    _check_finite(k4r, k4e, t)
    rho = r0 + dt / 6.0 * (k1r + 2.0 * k2r + 2.0 * k3r + k4r)
    eta = e0 + dt / 6.0 * (k1e + 2.0 * k2e + 2.0 * k3e + k4e)
    _check_finite(rho, eta, t + dt)
    return state.replace(rho, eta, t + dt)


def stable_substep(
    state: State,
    model: Model,
    safety: float = DEFAULT_CFL_SAFETY,
    cap: float = math.inf,
) -> float:
    """Explicit step bound from the diffusive and advective speeds.

    ``safety * min(dx^2 / (2 eps max c + 2 nu max sigma), dx / (|nu dU| + |dV|))``
    over interfaces, capped at ``cap``.
    """
    mesh = model.mesh
    rho, eta = state.rho, state.eta
    dxh = mesh.half_widths
    cmax = max(float(rho.max()), float(eta.max()), 0.0)
    smax = max(float((rho + eta).max()), 0.0)
    diff = 2.0 * model.eps * cmax + 2.0 * model.nu * smax
    bound = math.inf
    if diff > 0:
        bound = float(np.min(dxh) ** 2 / diff)
    du = -discrete_gradient(rho + eta, mesh)
    dv1, dv2 = model.interaction_gradients(rho, eta)
    speed = model.nu * np.abs(du) + np.maximum(np.abs(dv1), np.abs(dv2))
    if np.any(speed > 0):
        bound = min(bound, float(np.min(dxh / (speed + 1e-300))))
    return min(safety * bound, cap)


# ---------------------------------------------------------------- implicit


def check_cfl(dt: float, total_mass: float, xi: float, h: float) -> float:
    """Left-hand side ``16 (m1 + m2) dt / (xi h)^3`` of the uniqueness condition."""
    if not (xi > 0 and h > 0):
        raise ValueError("xi and h must be positive")
    return 16.0 * total_mass * dt / (xi * h) ** 3


def _species_system(c_old, c_it, du, dv, model: Model, dt: float):
    """Tridiagonal rows of the linearised implicit step for one species.

    Returns ``(lower, diag, upper, rhs, a, b)`` where ``a`` and ``b`` are the
    interface coefficients of ``c_i`` and ``c_{i+1}`` in the frozen flux.
    """
    mesh = model.mesh
    dxh = mesh.half_widths
    # the viscosity of a nonnegative iterate is nonnegative; the guard only
    # matters for intermediate Newton iterates
    visc = np.maximum(0.5 * model.eps * (c_it[:-1] + c_it[1:]), 0.0) / dxh
    a = model.nu * positive_part(du) + positive_part(dv) + visc  # coefficient of c_i
    b = model.nu * negative_part(du) + negative_part(dv) - visc  # coefficient of c_{i+1}
    diag = mesh.widths / dt
    diag = diag.copy()
    diag[:-1] += a
    diag[1:] -= b
    return -a, diag, b, mesh.widths / dt * c_old, a, b


def _conservative_solve(c_old, system, widths, dt):
    """Thomas solve plus one refinement step against the flux-form residual.

    The residual ``w/dt (c - c_old) + F_{i+1/2} - F_{i-1/2}`` is evaluated in
    extended precision so that its interface terms telescope; with large
    ``dt`` this removes the mass drift left by the rounded diagonal.  The
    correction is dropped if it would make a cell negative.
    """
    lo, di, up, rh, a, b = system
    c = tridiagonal_solve(lo, di, up, rh)
    ld = np.longdouble
    cl = c.astype(ld)
    flux = a.astype(ld) * cl[:-1] + b.astype(ld) * cl[1:]
    res = -(widths.astype(ld) / ld(dt)) * (cl - c_old.astype(ld))
    res[:-1] -= flux
    res[1:] += flux
    refined = c + tridiagonal_solve(lo, di, up, res.astype(float))
    return refined if refined.min() >= 0 or refined.min() >= c.min() else c


def picard_map(state_old: State, rho, eta, dv1, dv2, model: Model, dt: float):
    """One application of the linearised implicit map to the iterate ``(rho, eta)``."""
    mesh = model.mesh
    du = -discrete_gradient(rho + eta, mesh)
    rho_new = _conservative_solve(
        state_old.rho, _species_system(state_old.rho, rho, du, dv1, model, dt), mesh.widths, dt
    )
    eta_new = _conservative_solve(
        state_old.eta, _species_system(state_old.eta, eta, du, dv2, model, dt), mesh.widths, dt
    )
    return rho_new, eta_new


def _flux_and_partials(c, du, dv, model: Model):
    """Flux of one species and its derivatives.

    Returns ``(flux, p, q, s)`` with ``p = dF/dc_i`` and ``q = dF/dc_{i+1}``
    at fixed ``du``, and ``s = dF/d(du)``.
    """
    eps, nu = model.eps, model.nu
    dxh = model.mesh.half_widths
    up = du > 0
    left = nu * np.where(up, du, 0.0) + positive_part(dv)
    right = nu * np.where(up, 0.0, du) + negative_part(dv)
    flux = left * c[:-1] + right * c[1:] - 0.5 * eps * (c[1:] ** 2 - c[:-1] ** 2) / dxh
    s = nu * np.where(up, c[:-1], c[1:])
    p = left + eps * c[:-1] / dxh
    q = right - eps * c[1:] / dxh
    return flux, p, q, s


def _divergence(flux, n):
    out = np.zeros(n)
    out[:-1] += flux
    out[1:] -= flux
    return out


def _newton_system(old: State, rho, eta, dv1, dv2, model: Model, dt: float, jacobian=True):
    """Residual of the implicit step and its Jacobian in banded storage.

    Unknowns are interleaved as ``(rho_0, eta_0, rho_1, eta_1, ...)`` so the
    Jacobian has three sub- and three super-diagonals; ``ab[3 + r - c, c]``
    holds entry ``(r, c)`` as expected by :func:`scipy.linalg.solve_banded`.
    """
    mesh = model.mesh
    n = mesh.n_cells
    dxh = mesh.half_widths
    w = mesh.widths / dt
    du = -discrete_gradient(rho + eta, mesh)
    f, pf, qf, sf = _flux_and_partials(rho, du, dv1, model)
    g, pg, qg, sg = _flux_and_partials(eta, du, dv2, model)

    res = np.empty(2 * n)
    res[0::2] = w * (rho - old.rho) + _divergence(f, n)
    res[1::2] = w * (eta - old.eta) + _divergence(g, n)
    if not jacobian:
        return res, None

    # du depends on c_i with +1/dxh and on c_{i+1} with -1/dxh, for both species
    rf, rg = sf / dxh, sg / dxh
    pf, qf = pf + rf, qf - rf
    pg, qg = pg + rg, qg - rg

    def right(v):  # value of the interface to the right of each cell
        return np.append(v, 0.0)

    def left(v):  # value of the interface to the left of each cell
        return np.insert(v, 0, 0.0)

    m = 2 * n
    ab = np.zeros((7, m))
    ab[3, 0::2] = w + right(pf) - left(qf)
    ab[3, 1::2] = w + right(pg) - left(qg)
    ab[1, 2::2] = qf
    ab[1, 3::2] = qg
    ab[5, 0 : m - 2 : 2] = -pf
    ab[5, 1 : m - 2 : 2] = -pg
    ab[2, 1::2] = right(rf) + left(rf)
    ab[2, 2::2] = -rg
    ab[4, 0::2] = right(rg) + left(rg)
    ab[4, 1 : m - 2 : 2] = -rf
    ab[0, 3::2] = -rf
    ab[6, 0 : m - 2 : 2] = -rg
    return res, ab


def _newton(old, dv1, dv2, model, dt, tol, max_iter):
    rho, eta = old.rho.copy(), old.eta.copy()
    history = []
    res, ab = _newton_system(old, rho, eta, dv1, dv2, model, dt)
    rnorm = np.linalg.norm(res)
    for it in range(1, max_iter + 1):
        try:
            delta = solve_banded((3, 3), ab, res, overwrite_ab=True, check_finite=False)
        except np.linalg.LinAlgError:
            return rho, eta, it, math.inf, history
        if not np.all(np.isfinite(delta)):
            return rho, eta, it, math.inf, history
        # backtrack on the residual norm; full steps are the norm near the root
        step = 1.0
        while True:
            r_try = rho - step * delta[0::2]
            e_try = eta - step * delta[1::2]
            res_try, _ = _newton_system(old, r_try, e_try, dv1, dv2, model, dt, jacobian=False)
            rn_try = np.linalg.norm(res_try)
            if rn_try <= rnorm or step < 1e-3:
                break
            step *= 0.5
        change = step * float(np.max(np.abs(delta)))
        history.append(change)
        rho, eta, rnorm = r_try, e_try, rn_try
        if change <= tol:
            return rho, eta, it, change, history
        res, ab = _newton_system(old, rho, eta, dv1, dv2, model, dt)
    return rho, eta, max_iter, history[-1] if history else math.inf, history


def step_implicit(
    state: State,
    dt: float,
    model: Model,
    tol: float = DEFAULT_FP_TOL,
    max_iter: int = DEFAULT_FP_MAX_ITER,
    solver: str = "picard",
) -> tuple[State, FixedPointReport]:
    """One implicit Euler step; returns the new state and a solver report.

    Raises :class:`FixedPointError` (carrying the report) when the iteration
    does not reach ``tol`` in ``max_iter`` iterations.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    mesh = model.mesh
    cfl = check_cfl(dt, state.mass_rho + state.mass_eta, mesh.xi, mesh.h)
    dv1, dv2 = model.interaction_gradients(state.rho, state.eta)

    if solver == "picard":
        rho, eta = state.rho, state.eta
        history = []
        for it in range(1, max_iter + 1):
            rho_new, eta_new = picard_map(state, rho, eta, dv1, dv2, model, dt)
            change = float(max(np.max(np.abs(rho_new - rho)), np.max(np.abs(eta_new - eta))))
            history.append(change)
            rho, eta = rho_new, eta_new
            if not math.isfinite(change):
                break
            if change <= tol:
                report = FixedPointReport(it, change, True, cfl, solver, history)
                return state.replace(rho, eta, state.time + dt), report
        report = FixedPointReport(len(history), history[-1], False, cfl, solver, history)
        raise FixedPointError(
            f"picard iteration stalled at residual {history[-1]:.3e} after {len(history)} iterations",
            report,
        )

    if solver == "newton":
        rho, eta, its, change, history = _newton(state, dv1, dv2, model, dt, tol, max_iter)
        if change <= tol:
            rho_new, eta_new = picard_map(state, rho, eta, dv1, dv2, model, dt)
            polish = float(max(np.max(np.abs(rho_new - rho)), np.max(np.abs(eta_new - eta))))
            history.append(polish)
            # the polished iterate is an M-matrix solve: nonnegative and conservative
            if polish <= max(tol, 1e3 * np.finfo(float).eps * max(1.0, float(np.max(rho_new + eta_new)))):
                report = FixedPointReport(its + 1, polish, True, cfl, solver, history)
                return state.replace(rho_new, eta_new, state.time + dt), report
            change = polish
        report = FixedPointReport(len(history), change, False, cfl, solver, history)
        raise FixedPointError(f"newton iteration failed (residual {change:.3e})", report)

    raise ValueError(f"unknown implicit solver {solver!r}")


# ------------------------------------------------------------------ driver


@dataclass
class Trajectory:
    """Snapshots at ``t = 0`` and at every reporting time."""

    times: np.ndarray
    rho: np.ndarray
    eta: np.ndarray
    mesh: object
    min_value: float
    steps: int
    cfl_history: list = field(default_factory=list)
    fp_reports: list = field(default_factory=list)

    def state(self, k: int) -> State:
        return State(self.rho[k], self.eta[k], self.mesh, float(self.times[k]))

    @property
    def final(self) -> State:
        return self.state(len(self.times) - 1)


def advance(
    state: State,
    model: Model,
    t_target: float,
    method: str = "rk4",
    *,
    cfl_safety: float = DEFAULT_CFL_SAFETY,
    implicit_dt: float | None = None,
    solver: str = "newton",
    fp_tol: float = DEFAULT_FP_TOL,
    fp_max_iter: int = DEFAULT_FP_MAX_ITER,
    stats: dict | None = None,
) -> State:
    """Integrate ``state`` up to exactly ``t_target``."""
    stats = {} if stats is None else stats
    stats.setdefault("steps", 0)
    stats.setdefault("min_value", state.min_value())
    stats.setdefault("cfl_history", [])
    stats.setdefault("fp_reports", [])
    t_span = t_target - state.time
    if method == "rk4":
        while state.time < t_target:
            remaining = t_target - state.time
            dt = stable_substep(state, model, cfl_safety, cap=remaining)
            last = dt >= remaining * (1 - 1e-12)
            state = step_rk4(state, remaining if last else dt, model)
            if last:
                state.time = t_target
            stats["steps"] += 1
            stats["min_value"] = min(stats["min_value"], state.min_value())
        return state
    if method == "implicit_euler":
        nominal = t_span if implicit_dt is None else implicit_dt
        dt = stats.get("implicit_dt_current", nominal)
        while state.time < t_target:
            remaining = t_target - state.time
            step = min(dt, remaining)
            last = step >= remaining * (1 - 1e-12)
            try:
                new, report = step_implicit(state, remaining if last else step, model, fp_tol, fp_max_iter, solver)
            except FixedPointError as exc:
                dt = 0.5 * step
                log.debug("implicit step failed at t=%g (%s); retrying with dt=%g", state.time, exc, dt)
                if dt < 1e-14 * max(1.0, t_target):
                    raise
                continue
            if last:
                new.time = t_target
            state = new
            stats["steps"] += 1
            stats["min_value"] = min(stats["min_value"], state.min_value())
            ratio = round(report.cfl_ratio, 12)
            if not stats["cfl_history"] or stats["cfl_history"][-1] != ratio:
                stats["cfl_history"].append(ratio)
                if ratio >= 1.0 and not stats.get("cfl_warned"):
                    stats["cfl_warned"] = True
                    log.warning(
                        "CFL ratio %.3g >= 1 at dt=%.3g: the implicit step may not be unique",
                        ratio,
                        step,
                    )
            stats["fp_reports"].append((report.iterations, report.residual))
            if not last:
                dt = min(nominal, 2.0 * dt) if dt < nominal else dt
        stats["implicit_dt_current"] = dt
        return state
    raise ValueError(f"unknown integrator {method!r}")


def integrate(
    state: State,
    model: Model,
    time_grid: TimeGrid,
    method: str = "rk4",
    observer: Callable[[State], None] | None = None,
    **options,
) -> Trajectory:
    """Advance through every reporting time and collect the snapshots."""
    times = [state.time]
    rhos = [state.rho.copy()]
    etas = [state.eta.copy()]
    stats: dict = {}
    if observer is not None:
        observer(state)
    for t in state.time + time_grid.report_times():
        state = advance(state, model, float(t), method, stats=stats, **options)
        times.append(state.time)
        rhos.append(state.rho.copy())
        etas.append(state.eta.copy())
        if observer is not None:
            observer(state)
    return Trajectory(
        times=np.array(times),
        rho=np.array(rhos),
        eta=np.array(etas),
        mesh=model.mesh,
        min_value=float(stats.get("min_value", state.min_value())),
        steps=int(stats.get("steps", 0)),
        cfl_history=stats.get("cfl_history", []),
        fp_reports=stats.get("fp_reports", []),
    )
