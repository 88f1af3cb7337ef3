import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from crossdiff.kernels import (
    AbsoluteValueKernel,
    ExtrapolationError,
    GaussianKernel,
    QuadraticKernel,
    TabulatedKernel,
    ZeroKernel,
    evaluate_kernel,
    kernel_from_dict,
    lipschitz_norm,
    precompute_weights,
)
from crossdiff.mesh import build_graded_mesh, build_uniform_mesh


def test_evaluate_examples():
    assert evaluate_kernel(GaussianKernel(1.0, 2, 0.1), 0.0) == 0.0
    assert evaluate_kernel(GaussianKernel(1.0, 2, 0.1), 50.0) == pytest.approx(1.0)
    assert evaluate_kernel(QuadraticKernel(), 2.0) == 2.0
    assert evaluate_kernel(AbsoluteValueKernel(1), -3.0) == 3.0
    assert evaluate_kernel(AbsoluteValueKernel(-1), -3.0) == -3.0
    assert evaluate_kernel(ZeroKernel(), 1.7) == 0.0


def test_intraspecific_gaussian_formula():
    k = kernel_from_dict({"family": "gaussian", "amplitude": 1, "exponent": 4, "scale": 0.1})
    x = np.linspace(-2, 2, 41)
    np.testing.assert_allclose(k(x), 1 - np.exp(-np.abs(x) ** 4 / (4 * 0.1)), rtol=1e-14, atol=1e-16)


@given(st.floats(-50, 50))
def test_builtins_are_even(x):
    for k in (GaussianKernel(0.7, 4, 0.3), QuadraticKernel(), AbsoluteValueKernel(-1)):
        assert evaluate_kernel(k, x) == evaluate_kernel(k, -x)


def test_nonfinite_argument_rejected():
    with pytest.raises(ValueError):
        evaluate_kernel(QuadraticKernel(), math.nan)


def test_tabulated_interpolates_and_refuses_extrapolation():
    k = TabulatedKernel(points=(0.0, 1.0, 2.0), values=(0.0, 1.0, 0.0))
    assert k(0.5) == 0.5
    assert k(-1.5) == 0.5
    with pytest.raises(ExtrapolationError):
        k(2.5)


def test_kernel_from_dict_strict():
    with pytest.raises(ValueError, match="unknown kernel family"):
        kernel_from_dict({"family": "morse"})
    with pytest.raises(ValueError, match="unexpected keys"):
        kernel_from_dict({"family": "abs", "sign": 1, "scale": 2})
    for k in (GaussianKernel(2.0, 4, 0.2), QuadraticKernel(), AbsoluteValueKernel(-1), ZeroKernel()):
        assert kernel_from_dict(k.to_dict()) == k


def _numeric_sup(f, lo, hi, n=400001):
    x = np.linspace(lo, hi, n)
    return float(np.max(np.abs(f(x))))


def test_lipschitz_examples():
    assert lipschitz_norm(ZeroKernel()) == 0.0
    assert lipschitz_norm(AbsoluteValueKernel(-1)) == 1.0
    assert lipschitz_norm(QuadraticKernel(), diameter=5.0) == 5.0
    with pytest.raises(ValueError):
        lipschitz_norm(QuadraticKernel())


@pytest.mark.parametrize("p,s,amp", [(2, 0.1, 1.0), (4, 0.1, 1.0), (2, 0.5, -2.0), (3, 0.05, 0.3)])
def test_gaussian_lipschitz_matches_sampled_derivative(p, s, amp):
    k = GaussianKernel(amp, p, s)
    h = 1e-6
    sampled = _numeric_sup(lambda x: (k(x + h) - k(x - h)) / (2 * h), 0, 5)
    assert k.lipschitz_bound() == pytest.approx(sampled, rel=1e-6)


def test_gaussian_p2_closed_form():
    # W' = x/s exp(-x^2/(2s)) peaks at x = sqrt(s)
    s = 0.1
    assert GaussianKernel(1, 2, s).lipschitz_bound() == pytest.approx(math.exp(-0.5) / math.sqrt(s), rel=1e-14)


@pytest.mark.parametrize("p,s", [(2, 0.1), (4, 0.1)])
def test_gaussian_second_derivative_bound(p, s):
    k = GaussianKernel(1.0, p, s)
    h = 1e-4
    sampled = _numeric_sup(lambda x: (k(x + h) - 2 * k(x) + k(x - h)) / h**2, 0, 4)
    assert k.second_derivative_bound() == pytest.approx(sampled, rel=1e-4)
    assert AbsoluteValueKernel().second_derivative_bound() is None


# ------------------------------------------------------------------ weights


def test_zero_kernel_weights():
    m = build_graded_mesh(0, 3, [1, 2, 3])
    cm = precompute_weights(ZeroKernel(), m)
    assert cm.is_zero
    assert np.all(cm.weights == 0)
    assert np.all(cm.matvec(np.ones(3)) == 0)


def test_quadratic_diagonal_entry():
    m = build_uniform_mesh(0, 1, 4)
    w = precompute_weights(QuadraticKernel(), m).weights
    assert np.allclose(np.diag(w), 0.25**2 / 24, rtol=0, atol=1e-16)


@pytest.mark.parametrize("graded", [False, True])
def test_quadratic_weights_exact(graded, rng):
    m = build_graded_mesh(0, 2, rng.uniform(0.5, 1.5, 9)) if graded else build_uniform_mesh(0, 2, 9)
    w = precompute_weights(QuadraticKernel(), m, quadrature_order=2).weights
    x, dx = m.centers, m.widths
    # (1/dx_j) int_{C_j} (x_i - s)^2/2 ds = ((x_i - x_j)^2 + dx_j^2/12) / 2
    exact = 0.5 * ((x[:, None] - x[None, :]) ** 2 + dx[None, :] ** 2 / 12)
    np.testing.assert_allclose(w, exact, rtol=1e-13, atol=1e-16)


def test_abs_weights_exact():
    m = build_uniform_mesh(0, 1, 8)
    w = precompute_weights(AbsoluteValueKernel(1), m, quadrature_order=1).weights
    x = m.centers
    exact = np.abs(x[:, None] - x[None, :])
    np.fill_diagonal(exact, m.widths[0] / 4)
    np.testing.assert_allclose(w, exact, rtol=1e-14, atol=1e-16)


def test_gaussian_weights_against_adaptive_quadrature(rng):
    k = GaussianKernel(1.0, 4, 0.1)
    m = build_graded_mesh(0, 3, rng.uniform(0.5, 1.5, 40))
    w = precompute_weights(k, m).weights
    for i, j in rng.integers(0, 40, size=(120, 2)).tolist() + [(i, i) for i in range(0, 40, 7)]:
        lo, hi = m.edges[j], m.edges[j + 1]
        x = m.centers[i]
        val, _ = quad(lambda s: k(x - s), lo, hi, points=[x] if i == j else None, epsabs=1e-15, epsrel=1e-13)
        assert w[i, j] == pytest.approx(val / (hi - lo), rel=1e-11, abs=1e-14)


def test_quadrature_self_convergence():
    m = build_uniform_mesh(0, 9, 9 * 2**6)
    k = GaussianKernel(1.0, 2, 0.1)
    w4 = precompute_weights(k, m, 4)._coeffs
    w16 = precompute_weights(k, m, 16)._coeffs
    assert np.max(np.abs(w4 - w16)) < 1e-8
    for kk in (GaussianKernel(1.0, 4, 0.1), k):
        w8 = precompute_weights(kk, m, 8)._coeffs
        w12 = precompute_weights(kk, m, 12)._coeffs
        assert np.max(np.abs(w8 - w12)) < 1e-8


@pytest.mark.parametrize(
    "kernel", [GaussianKernel(1.0, 2, 0.1), GaussianKernel(-0.5, 4, 0.3), QuadraticKernel(), AbsoluteValueKernel(-1)]
)
def test_toeplitz_fast_path_matches_dense(kernel):
    m = build_uniform_mesh(0, 3, 24)
    fast = precompute_weights(kernel, m)
    dense = precompute_weights(kernel, m, fast_path=False)
    assert fast.is_toeplitz and not dense.is_toeplitz
    scale = max(1.0, np.max(np.abs(dense.weights)))
    assert np.max(np.abs(fast.weights - dense.weights)) <= 1e-13 * scale


def test_toeplitz_and_symmetry_brute_force():
    m = build_uniform_mesh(-1, 2, 16)
    w = precompute_weights(GaussianKernel(1.0, 2, 0.2), m, fast_path=False).weights
    for i in range(15):
        for j in range(15):
            assert w[i, j] == pytest.approx(w[i + 1, j + 1], rel=1e-12, abs=1e-15)
    np.testing.assert_allclose(w, w.T, rtol=1e-12, atol=1e-15)


@given(st.integers(96, 400), st.integers(0, 2**32 - 1))
def test_fft_matvec_matches_dense(n, seed):
    rng = np.random.default_rng(seed)
    m = build_uniform_mesh(0, 5, n)
    cm = precompute_weights(GaussianKernel(1.0, 2, 0.1), m)
    u = rng.uniform(0, 2, n)
    ref = cm.weights @ u
    assert np.max(np.abs(cm.matvec(u) - ref)) <= 1e-13 * max(1.0, np.abs(ref).max())


def test_translation_equivariance():
    m = build_uniform_mesh(0, 4, 32)
    cm = precompute_weights(GaussianKernel(1.0, 4, 0.1), m)
    u = np.zeros(32)
    u[10:14] = [1.0, 2.0, 0.5, 0.3]
    shifted = np.roll(u, 1)
    v, vs = cm.matvec(u), cm.matvec(shifted)
    # interior cells away from the boundary see a pure shift
    np.testing.assert_allclose(vs[1:], v[:-1], rtol=1e-13, atol=1e-15)


def test_odd_tabulated_kernel_rejected():
    k = TabulatedKernel(points=(-1.0, 1.0), values=(0.0, 1.0), is_even=False)
    with pytest.raises(ValueError, match="even"):
        precompute_weights(k, build_uniform_mesh(0, 1, 4))
