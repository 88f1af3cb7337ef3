"""Interaction potentials and their cell-averaged convolution weights.

A kernel ``W`` enters the scheme only through the weights

    W^{i-j} = (1/dx_j) * integral over C_j of W(x_i - s) ds,

which are computed once per mesh by Gauss-Legendre quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import fft as sfft
from scipy.linalg import toeplitz

from .mesh import Mesh1D

DEFAULT_QUADRATURE_ORDER = 8

# below this size a dense matvec beats the FFT round trip
_FFT_MIN_CELLS = 96


class ExtrapolationError(ValueError):
    """A tabulated kernel was evaluated outside its sample range."""


@dataclass(frozen=True)
class KernelSpec:
    """Base class for interaction potentials. Subclasses are immutable."""

    family = "base"

    def __call__(self, x):
        return evaluate_kernel(self, x)

    def _eval(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def is_zero(self) -> bool:
        return False

    @property
    def even(self) -> bool:
        return True

    def lipschitz_bound(self, diameter: float | None = None) -> float:
        raise NotImplementedError

    def second_derivative_bound(self, diameter: float | None = None) -> float | None:
        return None

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class ZeroKernel(KernelSpec):
    family = "zero"

    def _eval(self, x):
        return np.zeros_like(x)

    @property
    def is_zero(self):
        return True

    def lipschitz_bound(self, diameter=None):
        return 0.0

    def second_derivative_bound(self, diameter=None):
        return 0.0

    def to_dict(self):
        return {"family": "zero"}


@dataclass(frozen=True)
class GaussianKernel(KernelSpec):
    """``W(x) = A * (1 - exp(-|x|**p / (p * s)))``."""

    amplitude: float = 1.0
    exponent: float = 2.0
    scale: float = 0.1
    family = "gaussian"

    def __post_init__(self):
        if not self.exponent >= 2:
            raise ValueError(f"gaussian exponent must be >= 2, got {self.exponent}")
        if not self.scale > 0:
            raise ValueError(f"gaussian scale must be positive, got {self.scale}")

    def _eval(self, x):
        p, s = self.exponent, self.scale
        return self.amplitude * -np.expm1(-np.abs(x) ** p / (p * s))

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        p, s = self.exponent, self.scale
        ax = np.abs(x)
        return self.amplitude * np.sign(x) * ax ** (p - 1) / s * np.exp(-(ax**p) / (p * s))

    def lipschitz_bound(self, diameter=None):
        # |W'| peaks where |x|**p = (p - 1) * s
        p, s = self.exponent, self.scale
        peak = ((p - 1) * s) ** ((p - 1) / p) / s * math.exp(-(p - 1) / p)
        return abs(self.amplitude) * peak

    def second_derivative_bound(self, diameter=None):
        p, s = self.exponent, self.scale
        # W'' decays like exp(-|x|**p / (p s)); sample well past the peak
        reach = (p * s * 50.0) ** (1.0 / p)
        x = np.linspace(0.0, reach, 200001)
        d2 = np.exp(-(x**p) / (p * s)) * ((p - 1) * x ** (p - 2) / s - x ** (2 * p - 2) / s**2)
        return abs(self.amplitude) * float(np.max(np.abs(d2)))

    def to_dict(self):
        return {
            "family": "gaussian",
            "amplitude": self.amplitude,
            "exponent": self.exponent,
            "scale": self.scale,
        }


@dataclass(frozen=True)
class QuadraticKernel(KernelSpec):
    """``W(x) = x**2 / 2``."""

    family = "quadratic"

    def _eval(self, x):
        return 0.5 * x * x

    def lipschitz_bound(self, diameter=None):
        if diameter is None:
            raise ValueError("the quadratic kernel needs the domain diameter for |W'|")
        return float(diameter)

    def second_derivative_bound(self, diameter=None):
        return 1.0

    def to_dict(self):
        return {"family": "quadratic"}


@dataclass(frozen=True)
class AbsoluteValueKernel(KernelSpec):
    """``W(x) = sign * |x|``; not C^2, so no second-derivative bound."""

    sign: int = 1
    family = "abs"

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError(f"abs kernel sign must be +1 or -1, got {self.sign}")

    def _eval(self, x):
        return self.sign * np.abs(x)

    def lipschitz_bound(self, diameter=None):
        return 1.0

    def to_dict(self):
        return {"family": "abs", "sign": self.sign}


@dataclass(frozen=True)
class TabulatedKernel(KernelSpec):
    """Piecewise-linear interpolant of sampled values.

    With ``even=True`` the samples describe ``W`` on ``[0, L]`` and the kernel
    is evaluated at ``|x|``; otherwise the samples must cover the signed range
    queried by the mesh.
    """

    points: tuple = ()
    values: tuple = ()
    is_even: bool = True
    family = "tabulated"
    _xs: np.ndarray = field(init=False, repr=False, compare=False)
    _ys: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        xs = np.asarray(self.points, dtype=float)
        ys = np.asarray(self.values, dtype=float)
        if xs.ndim != 1 or xs.size < 2 or xs.shape != ys.shape:
            raise ValueError("tabulated kernel needs matching 1-D points and values (>= 2)")
        if np.any(np.diff(xs) <= 0):
            raise ValueError("tabulated kernel points must be strictly increasing")
        if self.is_even and xs[0] != 0.0:
            raise ValueError("even tabulated kernels are sampled on [0, L] starting at 0")
        object.__setattr__(self, "_xs", xs)
        object.__setattr__(self, "_ys", ys)

    @property
    def even(self):
        return self.is_even

    def _eval(self, x):
        q = np.abs(x) if self.is_even else x
        lo, hi = self._xs[0], self._xs[-1]
        tol = 1e-12 * max(1.0, abs(hi), abs(lo))
        if np.any(q < lo - tol) or np.any(q > hi + tol):
            raise ExtrapolationError(
                f"tabulated kernel queried outside [{lo}, {hi}]"
            )
        return np.interp(q, self._xs, self._ys)

    def lipschitz_bound(self, diameter=None):
        return float(np.max(np.abs(np.diff(self._ys) / np.diff(self._xs))))

    def to_dict(self):
        return {
            "family": "tabulated",
            "points": list(map(float, self._xs)),
            "values": list(map(float, self._ys)),
            "even": self.is_even,
        }


_FAMILIES = {
    "zero": ZeroKernel,
    "gaussian": GaussianKernel,
    "quadratic": QuadraticKernel,
    "abs": AbsoluteValueKernel,
    "tabulated": TabulatedKernel,
}


def kernel_from_dict(d: Mapping) -> KernelSpec:
    """Build a kernel from a config mapping such as ``{"family": "gaussian", ...}``."""
    d = dict(d)
    family = d.pop("family", None)
    if family not in _FAMILIES:
        raise ValueError(f"unknown kernel family {family!r}; choose from {sorted(_FAMILIES)}")
    if family == "tabulated":
        return TabulatedKernel(
            points=tuple(d.pop("points")),
            values=tuple(d.pop("values")),
            is_even=bool(d.pop("even", True)),
            **_no_extra(d, family),
        )
    if family == "gaussian":
        allowed = {"amplitude", "exponent", "scale"}
    elif family == "abs":
        allowed = {"sign"}
    else:
        allowed = set()
    extra = set(d) - allowed
    if extra:
        raise ValueError(f"unexpected keys for kernel {family!r}: {sorted(extra)}")
    return _FAMILIES[family](**d)


def _no_extra(d, family):
    if d:
        raise ValueError(f"unexpected keys for kernel {family!r}: {sorted(d)}")
    return {}


def evaluate_kernel(spec: KernelSpec, x):
    """Evaluate ``W(x)``; scalars in, scalars out."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("kernel argument must be finite")
    out = spec._eval(arr)
    return float(out) if np.ndim(x) == 0 else out


def lipschitz_norm(spec: KernelSpec, diameter: float | None = None) -> float:
    """``sup |W'|`` over ``[-diameter, diameter]`` (or the whole line when finite)."""
    return spec.lipschitz_bound(diameter)


class ConvolutionMatrix:
    """Cell-averaged kernel weights ``W^{i-j}`` on one mesh.

    Uniform meshes store the ``2N - 1`` Toeplitz coefficients and apply the
    matrix through an FFT; other meshes store the dense ``N x N`` array.
    """

    def __init__(self, mesh: Mesh1D, *, dense=None, toeplitz_coeffs=None, zero=False):
        self.mesh = mesh
        self._dense = None if dense is None else np.asarray(dense, dtype=float)
        self._coeffs = None if toeplitz_coeffs is None else np.asarray(toeplitz_coeffs, dtype=float)
        self.is_zero = zero
        self._spectrum = None
        self._fft_len = None

    @property
    def n(self) -> int:
        return self.mesh.n_cells

    @property
    def is_toeplitz(self) -> bool:
        return self._coeffs is not None

    @property
    def weights(self) -> np.ndarray:
        """Dense ``(N, N)`` weight array, materialized on demand."""
        if self._dense is None:
            if self.is_zero:
                return np.zeros((self.n, self.n))
            c = self._coeffs
            n = self.n
            # c[k + n - 1] holds the weight for i - j = k
            return toeplitz(c[n - 1 :], c[n - 1 :: -1])
        return self._dense

    def spectrum(self):
        """Real FFT of the coefficient vector, cached."""
        if self._spectrum is None:
            self._fft_len = sfft.next_fast_len(2 * self.n - 1, real=True)
            self._spectrum = sfft.rfft(self._coeffs, self._fft_len)
        return self._spectrum, self._fft_len

    def matvec(self, u: np.ndarray) -> np.ndarray:
        """Return ``sum_j W^{i-j} u_j`` for every cell i."""
        if self.is_zero:
            return np.zeros(self.n)
        if self._coeffs is not None and self.n >= _FFT_MIN_CELLS:
            spec, L = self.spectrum()
            full = sfft.irfft(sfft.rfft(u, L) * spec, L)
            return full[self.n - 1 : 2 * self.n - 1]
        return self.weights @ u


def _gauss_nodes(order: int):
    if order < 1:
        raise ValueError(f"quadrature order must be >= 1, got {order}")
    t, w = leggauss(order)
    return 0.5 * t, 0.5 * w  # nodes on [-1/2, 1/2], weights summing to 1


def precompute_weights(
    spec: KernelSpec,
    mesh: Mesh1D,
    quadrature_order: int = DEFAULT_QUADRATURE_ORDER,
    *,
    fast_path: bool = True,
) -> ConvolutionMatrix:
    """Cell averages ``(1/dx_j) int_{C_j} W(x_i - s) ds`` by Gauss-Legendre.

    The own-cell average is split at ``x_i`` so kernels with a kink at the
    origin (``|x|``) are integrated exactly.  On uniform meshes the Toeplitz
    coefficients are computed from the cell offset directly unless
    ``fast_path`` is False, which forces the coordinate-based dense array.
    """
    t, w = _gauss_nodes(quadrature_order)
    n = mesh.n_cells
    if spec.is_zero:
        return ConvolutionMatrix(mesh, zero=True)
    if not spec.even:
        raise ValueError("interaction kernels must be even")

    if mesh.uniform and fast_path:
        dx = mesh.widths[0]
        k = np.arange(-(n - 1), n, dtype=float)
        coeffs = evaluate_kernel(spec, (k[:, None] - t[None, :]) * dx) @ w
        # offset 0: two half-cells, each with the rule mapped to [0, 1/2]
        half = evaluate_kernel(spec, (0.25 + 0.5 * t) * dx) @ w
        coeffs[n - 1] = half  # even kernel: both halves agree
        return ConvolutionMatrix(mesh, toeplitz_coeffs=coeffs)

    x = mesh.centers
    dense = np.empty((n, n))
    for j in range(n):
        s = mesh.centers[j] + t * mesh.widths[j]
        dense[:, j] = evaluate_kernel(spec, x[:, None] - s[None, :]) @ w
    # own cell: split at the center so a kink at zero sits on a subinterval end
    for i in range(n):
        lo, hi = mesh.edges[i], mesh.edges[i + 1]
        left = evaluate_kernel(spec, x[i] - (0.5 * (lo + x[i]) + t * (x[i] - lo))) @ w
        right = evaluate_kernel(spec, x[i] - (0.5 * (x[i] + hi) + t * (hi - x[i]))) @ w
        dense[i, i] = (left * (x[i] - lo) + right * (hi - x[i])) / mesh.widths[i]
    return ConvolutionMatrix(mesh, dense=dense)
