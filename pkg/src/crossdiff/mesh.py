"""One-dimensional cell decompositions of an interval [a, b]."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=float)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Mesh1D:
    """Control volumes ``C_i = [x_{i-1/2}, x_{i+1/2})`` covering ``[a, b]``.

    Build instances with :func:`build_uniform_mesh` or
    :func:`build_graded_mesh`; all arrays are read-only.

    Attributes
    ----------
    edges : (N+1,) array
        Cell interfaces, ``edges[0] == a`` and ``edges[-1] == b``.
    centers : (N,) array
        Cell midpoints ``x_i``.
    widths : (N,) array
        Cell sizes ``dx_i``.
    half_widths : (N-1,) array
        Center spacings ``dx_{i+1/2} = x_{i+1} - x_i``.
    h : float
        Largest cell size.
    xi : float
        Regularity ratio, the largest value with ``xi * h <= dx_i`` for all i.
    uniform : bool
        True when every cell has the same width.
    """

    edges: np.ndarray
    centers: np.ndarray
    widths: np.ndarray
    half_widths: np.ndarray
    uniform: bool = False
    h: float = field(init=False)
    xi: float = field(init=False)

    def __post_init__(self):
        h = float(np.max(self.widths))
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "xi", float(np.min(self.widths)) / h)

    @property
    def a(self) -> float:
        return float(self.edges[0])

    @property
    def b(self) -> float:
        return float(self.edges[-1])

    @property
    def length(self) -> float:
        return self.b - self.a

    @property
    def n_cells(self) -> int:
        return self.widths.size

    def same_as(self, other: Mesh1D) -> bool:
        """Whether ``other`` describes the same geometry."""
        return other is self or (
            other.n_cells == self.n_cells and np.array_equal(other.edges, self.edges)
        )

    def cell_index(self, x) -> np.ndarray:
        """Index of the half-open cell containing each point of ``x``."""
        idx = np.searchsorted(self.edges, np.asarray(x, dtype=float), side="right") - 1
        # the right endpoint b belongs to the last cell
        return np.clip(idx, 0, self.n_cells - 1)

    def describe(self) -> dict:
        return {
            "a": self.a,
            "b": self.b,
            "n_cells": self.n_cells,
            "uniform": self.uniform,
            "h": self.h,
            "xi": self.xi,
        }


def build_uniform_mesh(a: float, b: float, n_cells: int) -> Mesh1D:
    """Uniform mesh of ``n_cells`` cells of width ``(b - a) / n_cells``."""
    if not a < b:
        raise ValueError(f"need a < b, got a={a}, b={b}")
    if int(n_cells) != n_cells or n_cells < 2:
        raise ValueError(f"n_cells must be an integer >= 2, got {n_cells}")
    n_cells = int(n_cells)
    dx = (b - a) / n_cells
    edges = a + (b - a) * (np.arange(n_cells + 1) / n_cells)
    edges[-1] = b
    centers = 0.5 * (edges[:-1] + edges[1:])
    return Mesh1D(
        edges=_frozen(edges),
        centers=_frozen(centers),
        widths=_frozen(np.full(n_cells, dx)),
        half_widths=_frozen(np.full(n_cells - 1, dx)),
        uniform=True,
    )


def build_graded_mesh(a: float, b: float, widths) -> Mesh1D:
    """Mesh with the given relative cell widths, rescaled to fill ``[a, b]``.

    Equal widths produce the same mesh as :func:`build_uniform_mesh`.  The
    regularity ratio is reported, never enforced; callers decide whether a
    tiny ``xi`` is acceptable.
    """
    w = np.asarray(widths, dtype=float)
    if w.ndim != 1 or w.size < 2:
        raise ValueError("need at least two cell widths")
    if not a < b:
        raise ValueError(f"need a < b, got a={a}, b={b}")
    bad = np.flatnonzero(~(w > 0))
    if bad.size:
        raise ValueError(f"cell widths must be positive; offending cells {bad.tolist()}")
    if np.all(w == w[0]):
        return build_uniform_mesh(a, b, w.size)

    w = w * ((b - a) / w.sum())
    edges = np.empty(w.size + 1)
    edges[0] = a
    edges[1:] = a + np.cumsum(w)
    edges[-1] = b
    widths = np.diff(edges)
    if np.any(widths <= 0):
        raise ValueError("cell widths underflow after rescaling")
    centers = 0.5 * (edges[:-1] + edges[1:])
    return Mesh1D(
        edges=_frozen(edges),
        centers=_frozen(centers),
        widths=_frozen(widths),
        half_widths=_frozen(np.diff(centers)),
        uniform=False,
    )
