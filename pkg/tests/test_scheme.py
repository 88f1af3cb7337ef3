import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crossdiff.kernels import AbsoluteValueKernel, GaussianKernel, QuadraticKernel, ZeroKernel
from crossdiff.mesh import build_graded_mesh, build_uniform_mesh
from crossdiff.scheme import (
    FluxField,
    InteractionMatrices,
    KernelSet,
    Model,
    assemble_fields,
    assemble_fluxes,
    negative_part,
    positive_part,
    rhs,
)
from crossdiff.state import State, entropy, log_mean

seeds = st.integers(0, 2**32 - 1)


def _random_kernels(rng, amp=1.0):
    def one():
        return GaussianKernel(float(rng.uniform(-amp, amp)), int(rng.choice([2, 4])), float(rng.uniform(0.05, 0.5)))

    return KernelSet(one(), one(), one(), one())


def _random_problem(seed, n_max=40, positive=True, graded=None):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, n_max))
    graded = bool(rng.integers(2)) if graded is None else graded
    length = rng.uniform(0.5, 5)
    m = build_graded_mesh(0, length, rng.uniform(0.5, 1.5, n)) if graded else build_uniform_mesh(0, length, n)
    lo = 1e-3 if positive else 0.0
    rho = rng.uniform(lo, 2, n)
    eta = rng.uniform(lo, 2, n)
    if not positive:
        rho[rng.random(n) < 0.3] = 0.0
        eta[rng.random(n) < 0.3] = 0.0
    model = Model(m, rng.uniform(0, 1), rng.uniform(0, 1), _random_kernels(rng))
    return rng, model, State(rho, eta, m)


def test_positive_negative_parts():
    assert (positive_part(2.0), negative_part(2.0)) == (2.0, 0.0)
    assert (positive_part(-3.0), negative_part(-3.0)) == (0.0, -3.0)
    assert (positive_part(0.0), negative_part(0.0)) == (0.0, 0.0)
    z = np.linspace(-2, 2, 9)
    np.testing.assert_array_equal(positive_part(z) + negative_part(z), z)


# ------------------------------------------------------------ hand oracles


def _three_cells(eps, nu):
    m = build_uniform_mesh(0, 3, 3)
    model = Model(m, eps, nu)
    s = State(np.array([1.0, 2.0, 0.0]), np.zeros(3), m)
    return model, s


def test_three_cell_upwind_fluxes():
    model, s = _three_cells(0.0, 1.0)
    fl = model.fluxes(s)
    np.testing.assert_array_equal(fl.f, [0, -2, 4, 0])
    np.testing.assert_array_equal(fl.g, 0)
    dr, de = model.rhs(s)
    np.testing.assert_array_equal(dr, [2, -6, 4])
    np.testing.assert_array_equal(de, 0)


def test_three_cell_diffusion_flux():
    model, s = _three_cells(2.0, 0.0)
    assert model.fluxes(s).f[1] == -3.0


def test_uniform_state_zero_fluxes():
    m = build_uniform_mesh(0, 2, 7)
    model = Model(m, 0.3, 0.7)
    fl = model.fluxes(State(np.full(7, 0.4), np.full(7, 1.1), m))
    assert np.all(fl.f == 0) and np.all(fl.g == 0)


def test_zero_fluxes_zero_rhs():
    m = build_uniform_mesh(0, 1, 5)
    s = State(np.ones(5), np.ones(5), m)
    dr, de = rhs(s, FluxField(np.zeros(6), np.zeros(6)), m)
    assert np.all(dr == 0) and np.all(de == 0)


def test_zero_kernels_fields():
    m = build_uniform_mesh(0, 1, 6)
    s = State(np.arange(6.0), np.ones(6), m)
    fs = Model(m, 0.1, 0.1).fields(s)
    assert np.all(fs.v1 == 0) and np.all(fs.v2 == 0)
    np.testing.assert_array_equal(fs.u, -(s.rho + s.eta))


def test_single_cell_quadratic_potential():
    m = build_uniform_mesh(0, 2, 16)
    model = Model(m, 0.0, 0.0, KernelSet(w11=QuadraticKernel()))
    rho = np.zeros(16)
    j0 = 5
    rho[j0] = 1.0 / m.widths[j0]
    fs = model.fields(State(rho, np.zeros(16), m))
    x = m.centers
    # exact cell average of (x_i - s)^2/2 over C_j0
    expected = -0.5 * ((x - x[j0]) ** 2 + m.widths[j0] ** 2 / 12)
    np.testing.assert_allclose(fs.v1, expected, rtol=1e-13, atol=1e-15)
    assert np.all(fs.v2 == 0)


@given(st.integers(2, 32), seeds)
def test_reflection_symmetry_of_fields(n, seed):
    rng = np.random.default_rng(seed)
    m = build_uniform_mesh(0, 3, n)
    half = rng.uniform(0, 2, n)
    rho = 0.5 * (half + half[::-1])
    kern = KernelSet(GaussianKernel(1.0, 2, 0.2), AbsoluteValueKernel(-1), GaussianKernel(-0.4, 4, 0.1), QuadraticKernel())
    fs = Model(m, 0.1, 0.1, kern).fields(State(rho, rho.copy(), m))
    np.testing.assert_allclose(fs.v1, fs.v1[::-1], rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose(fs.v2, fs.v2[::-1], rtol=1e-12, atol=1e-13)


def test_mesh_mismatch_rejected():
    m1, m2 = build_uniform_mesh(0, 1, 4), build_uniform_mesh(0, 1, 5)
    mats = InteractionMatrices.build(KernelSet(), m1)
    with pytest.raises(ValueError):
        assemble_fields(State(np.ones(5), np.ones(5), m2), mats, m2)


def test_model_rejects_negative_coefficients():
    with pytest.raises(ValueError):
        Model(build_uniform_mesh(0, 1, 4), -0.1, 0.1)


def test_squared_diffusion_form():
    # the flux uses (c_{i+1}^2 - c_i^2), not a product with an averaged density
    m = build_graded_mesh(0, 3, [1, 2])
    s = State(np.array([1.0, 3.0]), np.zeros(2), m)
    f = Model(m, 0.6, 0.0).fluxes(s).f
    assert f[1] == pytest.approx(-0.3 * (9 - 1) / 1.5, rel=1e-15)


# ------------------------------------------------------------ properties


@given(seeds)
def test_field_identities(seed):
    _, model, s = _random_problem(seed, positive=False)
    fs = model.fields(s)
    np.testing.assert_array_equal(fs.du, -(fs.drho + fs.deta))
    fl = model.fluxes(s)
    assert fl.f[0] == fl.f[-1] == fl.g[0] == fl.g[-1] == 0.0


@given(seeds)
def test_rhs_telescopes(seed):
    _, model, s = _random_problem(seed, positive=False)
    dr, de = model.rhs(s)
    w = model.mesh.widths
    scale = max(1.0, np.abs(w * dr).max(), np.abs(w * de).max())
    assert abs(w @ dr) <= 1e-13 * scale * w.size
    assert abs(w @ de) <= 1e-13 * scale * w.size


def convective_matrix(model, s, species):
    """Columns of the frozen-field convective rhs (eps = 0) acting on unit vectors."""
    fs = model.fields(s)
    m = model.mesh
    n = m.n_cells
    cols = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        probe = State(e, e, m)
        fl = assemble_fluxes(probe, fs, 0.0, model.nu, m)
        cols.append(rhs(probe, fl, m)[species])
    return np.array(cols).T


@given(seeds)
def test_upwind_sign_structure(seed):
    _, model, s = _random_problem(seed, n_max=20, positive=False)
    for species in (0, 1):
        a = convective_matrix(model, s, species)
        off = a - np.diag(np.diag(a))
        assert np.all(np.diag(a, 1) >= 0) and np.all(np.diag(a, -1) >= 0)
        assert np.all(np.triu(off, 2) == 0) and np.all(np.tril(off, -2) == 0)
        assert np.all(np.diag(a) <= 0)


@given(seeds)
def test_sign_conditions_with_log_mean(seed):
    _, model, s = _random_problem(seed)
    fs = model.fields(s)
    nu = model.nu
    for c, dv in ((s.rho, fs.dv1), (s.eta, fs.dv2)):
        lm = log_mean(c[:-1], c[1:])
        dlog = np.log(c[1:]) - np.log(c[:-1])
        assert np.all((c[:-1] - lm) * dlog * (nu * positive_part(fs.du) + positive_part(dv)) <= 1e-15)
        assert np.all((c[1:] - lm) * dlog * (nu * negative_part(fs.du) + negative_part(dv)) <= 1e-15)


@given(seeds)
def test_entropy_rate_matches_directional_derivative(seed):
    _, model, s = _random_problem(seed)
    dr, de = model.rhs(s)
    lam = 0.5 / max(1.0, np.max(np.abs(np.concatenate([dr / s.rho, de / s.eta]))))
    h = 1e-4 * lam
    m = model.mesh
    fd = (entropy(s.rho + h * dr, s.eta + h * de, m) - entropy(s.rho - h * dr, s.eta - h * de, m)) / (2 * h)
    assert model.entropy_rate(s) == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_entropy_rate_needs_positive_state():
    m = build_uniform_mesh(0, 1, 3)
    with pytest.raises(ValueError):
        Model(m, 0.1, 0.1).entropy_rate(State(np.array([1.0, 0.0, 1.0]), np.ones(3), m))


def _gradient_terms(model, s):
    fs = model.fields(s)
    dxh = model.mesh.half_widths
    return fs, dxh


@given(seeds)
def test_entropy_balance_sharp(seed):
    # dS/dt + nu |dU|^2 + eps (|d rho|^2 + |d eta|^2) <= sum dx (dV1 d rho + dV2 d eta)
    _, model, s = _random_problem(seed)
    fs, dxh = _gradient_terms(model, s)
    lhs = model.entropy_rate(s) + dxh @ (model.nu * fs.du**2 + model.eps * (fs.drho**2 + fs.deta**2))
    rhs_ = dxh @ (fs.dv1 * fs.drho + fs.dv2 * fs.deta)
    scale = max(1.0, abs(lhs), abs(rhs_), float(dxh @ (fs.drho**2 + fs.deta**2)))
    assert lhs <= rhs_ + 1e-9 * scale


@given(seeds)
def test_energy_inequality_with_constant(seed):
    # drives sum_l |W'_kl| m_l kept <= 3: there the linear constant dominates the Young bound
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 40))
    length = rng.uniform(0.5, 5)
    m = build_graded_mesh(0, length, rng.uniform(0.5, 1.5, n))
    rho, eta = rng.uniform(1e-3, 2, n), rng.uniform(1e-3, 2, n)
    m1, m2 = m.widths @ rho, m.widths @ eta
    kern = _random_kernels(rng)
    norms = np.array(kern.lipschitz_norms(length))
    drive = max(norms[0] * m1 + norms[1] * m2, norms[3] * m2 + norms[2] * m1)
    if drive > 3:
        kern = KernelSet(*(GaussianKernel(k.amplitude * 3 / drive, k.exponent, k.scale) for k in kern))
    model = Model(m, rng.uniform(0.01, 1), rng.uniform(0, 1), kern)
    s = State(rho, eta, m)
    fs, dxh = _gradient_terms(model, s)
    lhs = model.entropy_rate(s) + dxh @ (model.nu * fs.du**2 + 0.25 * model.eps * (fs.drho**2 + fs.deta**2))
    c_eps = model.energy_bound((m1, m2))
    assert lhs <= c_eps + 1e-9 * max(1.0, abs(c_eps))


@given(seeds)
def test_pure_diffusion_dissipates_entropy(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 30))
    m = build_graded_mesh(0, 2, rng.uniform(0.5, 1.5, n))
    model = Model(m, rng.uniform(0, 1), rng.uniform(0, 1), KernelSet(ZeroKernel()))
    s = State(rng.uniform(1e-3, 2, n), rng.uniform(1e-3, 2, n), m)
    assert model.entropy_rate(s) <= 1e-12
