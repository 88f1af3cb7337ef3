"""Reference implementations written independently of the package internals."""

import numpy as np
from scipy.optimize import root


def dense_flux(c, sigma, dv, dxh, eps, nu):
    """Interface fluxes of one species, boundary zeros included, from scratch."""
    du = -(sigma[1:] - sigma[:-1]) / dxh
    vel_p = nu * np.maximum(du, 0) + np.maximum(dv, 0)
    vel_m = nu * np.minimum(du, 0) + np.minimum(dv, 0)
    inner = vel_p * c[:-1] + vel_m * c[1:] - 0.5 * eps * (c[1:] ** 2 - c[:-1] ** 2) / dxh
    return np.concatenate([[0.0], inner, [0.0]])


def backward_euler_residual(x, old_rho, old_eta, dv1, dv2, dx, dxh, eps, nu, dt):
    n = dx.size
    rho, eta = x[:n], x[n:]
    sigma = rho + eta
    f = dense_flux(rho, sigma, dv1, dxh, eps, nu)
    g = dense_flux(eta, sigma, dv2, dxh, eps, nu)
    return np.concatenate(
        [rho - old_rho + dt / dx * np.diff(f), eta - old_eta + dt / dx * np.diff(g)]
    )


def dense_newton_backward_euler(old_rho, old_eta, dv1, dv2, dx, dxh, eps, nu, dt):
    """Solve one backward Euler step with MINPACK's hybrid Newton method on the full system."""
    args = (old_rho, old_eta, dv1, dv2, dx, dxh, eps, nu, dt)
    x0 = np.concatenate([old_rho, old_eta])
    sol = root(backward_euler_residual, x0, args=args, method="hybr", options={"xtol": 1e-15})
    x = sol.x
    resid = np.max(np.abs(backward_euler_residual(x, *args)))
    n = dx.size
    return x[:n], x[n:], resid


def dense_potential_gradients(rho, eta, weights, dx, dxh):
    """``dV_k`` from explicit dense weight matrices ``(W11, W12, W21, W22)``."""
    w11, w12, w21, w22 = weights
    v1 = -(w11 @ (dx * rho) + w12 @ (dx * eta))
    v2 = -(w22 @ (dx * eta) + w21 @ (dx * rho))
    return np.diff(v1) / dxh, np.diff(v2) / dxh
