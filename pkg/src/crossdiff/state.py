"""Cell densities, initial projection, and scalar diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss

from .mesh import Mesh1D

# |log y - log x| below this switches the log-mean to the arithmetic mean
LOG_MEAN_SWITCH = 1e-10


@dataclass
class State:
    """Piecewise-constant densities of both species at one time."""

    rho: np.ndarray
    eta: np.ndarray
    mesh: Mesh1D
    time: float = 0.0

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        self.eta = np.asarray(self.eta, dtype=float)
        n = self.mesh.n_cells
        if self.rho.shape != (n,) or self.eta.shape != (n,):
            raise ValueError(f"densities must have shape ({n},)")

    @property
    def mass_rho(self) -> float:
        return float(self.mesh.widths @ self.rho)

    @property
    def mass_eta(self) -> float:
        return float(self.mesh.widths @ self.eta)

    @property
    def sigma(self) -> np.ndarray:
        return self.rho + self.eta

    @property
    def u(self) -> np.ndarray:
        return -(self.rho + self.eta)

    def replace(self, rho, eta, time) -> State:
        return State(rho, eta, self.mesh, time)

    def min_value(self) -> float:
        return float(min(self.rho.min(), self.eta.min()))


@dataclass
class DiagnosticsRecord:
    time: float
    mass_rho: float
    mass_eta: float
    min_rho: float
    min_eta: float
    entropy: float
    dissipation: float
    energy_residual: float
    overlap: float

    FIELDS = (
        "time",
        "mass_rho",
        "mass_eta",
        "min_rho",
        "min_eta",
        "entropy",
        "dissipation",
        "energy_residual",
        "overlap",
    )

    def row(self) -> list[float]:
        return [getattr(self, f) for f in self.FIELDS]


def cell_averages(
    f: Callable[[np.ndarray], np.ndarray],
    mesh: Mesh1D,
    quadrature_order: int = 8,
    breakpoints: Sequence[float] = (),
) -> np.ndarray:
    """Gauss-Legendre cell averages of ``f``.

    Cells containing a breakpoint (a kink or jump of ``f``) are split there,
    so piecewise-polynomial data is integrated exactly.
    """
    t, w = leggauss(quadrature_order)
    t, w = 0.5 * t, 0.5 * w
    lo, hi = mesh.edges[:-1], mesh.edges[1:]
    out = np.asarray(f(mesh.centers[:, None] + t[None, :] * mesh.widths[:, None]), dtype=float)
    out = out.reshape(mesh.n_cells, t.size) @ w

    cuts = sorted(float(p) for p in breakpoints if mesh.a < p < mesh.b)
    if not cuts:
        return out
    owners = mesh.cell_index(cuts)
    for i in np.unique(owners):
        pts = [lo[i]] + [p for p in cuts if lo[i] < p < hi[i]] + [hi[i]]
        if len(pts) == 2:
            continue
        total = 0.0
        for p0, p1 in zip(pts[:-1], pts[1:]):
            nodes = 0.5 * (p0 + p1) + t * (p1 - p0)
            total += (p1 - p0) * float(np.asarray(f(nodes), dtype=float) @ w)
        out[i] = total / mesh.widths[i]
    return out


def project_initial_data(
    f_rho: Callable,
    f_eta: Callable,
    mesh: Mesh1D,
    quadrature_order: int = 8,
    breakpoints: Sequence[float] = (),
) -> State:
    """Cell averages of the initial densities at time 0.

    Raises ``ValueError`` naming the first cell whose average is negative.
    """
    rho = cell_averages(f_rho, mesh, quadrature_order, breakpoints)
    eta = cell_averages(f_eta, mesh, quadrature_order, breakpoints)
    for name, arr in (("rho", rho), ("eta", eta)):
        bad = np.flatnonzero(arr < 0)
        if bad.size:
            raise ValueError(
                f"initial {name} has negative cell average {arr[bad[0]]:.3e} in cell {bad[0]}"
            )
    return State(rho, eta, mesh, 0.0)


def discrete_gradient(u: np.ndarray, mesh: Mesh1D) -> np.ndarray:
    """Interface difference quotients ``(u_{i+1} - u_i) / dx_{i+1/2}``, N-1 values."""
    u = np.asarray(u, dtype=float)
    return (u[1:] - u[:-1]) / mesh.half_widths


def xlogx(x: np.ndarray) -> np.ndarray:
    """``x log x`` with ``0 log 0 = 0``."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log(x[pos])
    return out


def entropy(rho: np.ndarray, eta: np.ndarray, mesh: Mesh1D) -> float:
    return float(mesh.widths @ (xlogx(rho) + xlogx(eta)))


def dissipation(rho, eta, mesh: Mesh1D, eps: float, nu: float) -> float:
    """``nu |dU|^2 + eps/4 (|d rho|^2 + |d eta|^2)`` summed over interfaces."""
    drho = discrete_gradient(rho, mesh)
    deta = discrete_gradient(eta, mesh)
    du = -(drho + deta)
    return float(mesh.half_widths @ (nu * du**2 + 0.25 * eps * (drho**2 + deta**2)))


def overlap(rho, eta, mesh: Mesh1D) -> float:
    """Mesh-weighted product of both species; zero iff supports are disjoint."""
    return float(mesh.widths @ (np.asarray(rho) * np.asarray(eta)))


def log_mean(x, y):
    """Logarithmic mean ``(y - x) / (log y - log x)``.

    Falls back to ``(x + y) / 2`` when the logs nearly coincide and returns 0
    when exactly one argument vanishes.  Works elementwise on arrays.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x, y = np.broadcast_arrays(x, y)
    out = 0.5 * (x + y)
    both = (x > 0) & (y > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        dlog = np.where(both, np.log(np.where(both, y, 1.0)) - np.log(np.where(both, x, 1.0)), 0.0)
        far = both & (np.abs(dlog) >= LOG_MEAN_SWITCH)
        out = np.where(far, (y - x) / np.where(far, dlog, 1.0), out)
    one_zero = (x == 0) != (y == 0)
    out = np.where(one_zero, 0.0, out)
    return float(out) if out.ndim == 0 else out


def energy_bound_constant(
    eps: float,
    masses: tuple[float, float],
    kernel_norms: tuple[float, float, float, float],
    length: float,
) -> float | None:
    """Right-hand side ``C_eps`` of the discrete energy inequality.

    ``kernel_norms`` are ``sup|W'|`` for ``(W11, W12, W21, W22)``.  Returns
    ``None`` when ``eps == 0`` and some kernel is active: there is no bound.
    """
    m1, m2 = masses
    n11, n12, n21, n22 = kernel_norms
    drive = (n11 + n21) * m1 + (n12 + n22) * m2
    if drive == 0:
        return 0.0
    if eps <= 0:
        return None
    return length / eps * drive


def compute_diagnostics(
    state: State,
    eps: float,
    nu: float,
    c_eps: float | None,
    previous: DiagnosticsRecord | None = None,
) -> DiagnosticsRecord:
    """Diagnostics of one snapshot.

    ``energy_residual`` is ``dS/dt + dissipation - C_eps`` with ``dS/dt`` a
    backward difference against ``previous``; NaN without a previous record
    or without an energy bound.
    """
    mesh = state.mesh
    s = entropy(state.rho, state.eta, mesh)
    dis = dissipation(state.rho, state.eta, mesh, eps, nu)
    resid = math.nan
    if previous is not None and c_eps is not None and state.time > previous.time:
        resid = (s - previous.entropy) / (state.time - previous.time) + dis - c_eps
    return DiagnosticsRecord(
        time=state.time,
        mass_rho=state.mass_rho,
        mass_eta=state.mass_eta,
        min_rho=float(state.rho.min()),
        min_eta=float(state.eta.min()),
        entropy=s,
        dissipation=dis,
        energy_residual=resid,
        overlap=overlap(state.rho, state.eta, mesh),
    )
