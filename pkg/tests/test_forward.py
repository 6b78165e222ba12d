"""Tests for the nonlinear minimal-surface solver and Laplace-Beltrami."""

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import brentq

from minsurf import geometry as geo
from minsurf import forward as fwd

FLAT = geo.flat_metric()

CAT_A = 0.5
CAT_R0, CAT_R1 = 1.1 * CAT_A, 3.0 * CAT_A


def catenoid_exact(r):
    return CAT_A * np.arccosh(r / CAT_A)


def catenoid_oracle_constant():
    """Independent route to the catenoid: radial shooting.

    A rotationally symmetric graph solves r u'/sqrt(1+u'^2) = C, i.e.
    u' = C / sqrt(r^2 - C^2).  Match the boundary increment by root finding
    on C, with no reference to the closed form.
    """
    target = catenoid_exact(CAT_R1) - catenoid_exact(CAT_R0)

    def increment(C):
        val, _ = quad(lambda r: C / np.sqrt(r * r - C * C), CAT_R0, CAT_R1)
        return val - target

    return brentq(increment, 1e-6, CAT_R0 - 1e-9, xtol=1e-14)


def test_catenoid_oracle_matches_closed_form():
    C = catenoid_oracle_constant()
    assert abs(C - CAT_A) < 1e-9
    # reconstruct u at interior radii by quadrature and compare
    for r in (0.7, 1.0, 1.3):
        val, _ = quad(lambda s: C / np.sqrt(s * s - C * C), CAT_R0, r)
        u_oracle = catenoid_exact(CAT_R0) + val
        assert abs(u_oracle - catenoid_exact(r)) < 1e-8


def test_affine_data_is_exact_with_zero_newton_iterations():
    m = geo.square(12)
    f = lambda x, y: 0.3 + 0.7 * x - 0.2 * y
    u, rep = fwd.solve_minimal_surface(m, FLAT, f)
    assert rep.converged
    assert rep.iterations == 0
    exact = f(m.vertices[:, 0], m.vertices[:, 1])
    assert np.abs(u.values - exact).max() < 1e-12


def test_catenoid_convergence():
    # Far outside the small-slope regime: |grad u| ~ 2.2 at the inner rim.
    errs = []
    for n_r, n_a in ((24, 48), (48, 96)):
        mesh = geo.annulus(CAT_R0, CAT_R1, n_r, n_a)
        u, rep = fwd.solve_minimal_surface(mesh, FLAT, lambda x, y: catenoid_exact(np.hypot(x, y)))
        assert rep.converged
        r = np.hypot(mesh.vertices[:, 0], mesh.vertices[:, 1])
        errs.append(np.abs(u.values - catenoid_exact(r)).max())
    assert errs[0] < 5e-4
    order = np.log2(errs[0] / errs[1])
    assert order > 1.8


def test_laplace_beltrami_reproduces_affine_exactly():
    # Affine functions are discrete-harmonic on any mesh (the weak flux of a
    # constant field vanishes on interior hats), flat metric or conformal.
    d = geo.disc(10, 60)
    c = geo.conformal_metric(FLAT, lambda x, y: 1.0 + 0.4 * x * x + 0.1 * y * y)
    f = lambda x, y: 1.0 - 0.2 * x + 0.5 * y
    u = fwd.solve_laplace_beltrami(d, c, f)
    exact = f(d.vertices[:, 0], d.vertices[:, 1])
    assert np.abs(u.values - exact).max() < 1e-12


def test_laplace_beltrami_complex_data_splits_into_parts():
    d = geo.disc(8, 48)
    f = lambda x, y: np.exp(1j * (2 * x - y))
    u = fwd.solve_laplace_beltrami(d, FLAT, f)
    ur = fwd.solve_laplace_beltrami(d, FLAT, lambda x, y: np.cos(2 * x - y))
    ui = fwd.solve_laplace_beltrami(d, FLAT, lambda x, y: np.sin(2 * x - y))
    np.testing.assert_allclose(u.values, ur.values + 1j * ui.values, atol=1e-14)


def test_residual_for_affine_is_scaled_stiffness_action():
    # For affine u the slope factor is the constant sqrt(1 + a^2 + b^2), so
    # the nonlinear residual equals (K u) / s exactly.
    m = geo.square(9)
    a, b = 0.8, -0.4
    u = a * m.vertices[:, 0] + b * m.vertices[:, 1]
    K = geo.assemble_weighted_stiffness(m, FLAT)
    s = np.sqrt(1.0 + a * a + b * b)
    r = fwd.mse_residual(m, FLAT, u)
    np.testing.assert_allclose(r, (K @ u) / s, atol=1e-14)


def test_linearized_operator_matches_finite_differences():
    d = geo.disc(8, 48)
    rng = np.random.default_rng(0)
    u0 = fwd.solve_laplace_beltrami(d, FLAT, lambda x, y: x * x - y * y + 0.5 * x).values
    delta = rng.standard_normal(d.n_vertices)
    h = 1e-6
    J = fwd.mse_linearized_operator(d, FLAT, u0)
    fd = (fwd.mse_residual(d, FLAT, u0 + h * delta) - fwd.mse_residual(d, FLAT, u0 - h * delta)) / (
        2 * h
    )
    assert np.abs(J @ delta - fd).max() / np.abs(fd).max() < 1e-7


def test_linearized_operator_at_zero_is_stiffness():
    d = geo.disc(8, 48)
    K = geo.assemble_weighted_stiffness(d, FLAT)
    J0 = fwd.mse_linearized_operator(d, FLAT, np.zeros(d.n_vertices))
    assert abs(J0 - K).max() == 0.0


def test_cg_solver_matches_direct():
    d = geo.disc(8, 48)
    f = lambda x, y: x * x - y * y
    u_direct, _ = fwd.solve_minimal_surface(d, FLAT, f)
    opts = fwd.SolveOptions(linear_solver="cg", cg_tol=1e-13)
    u_cg, _ = fwd.solve_minimal_surface(d, FLAT, f, opts)
    assert np.abs(u_direct.values - u_cg.values).max() < 1e-9


def test_newton_failure_is_actionable():
    d = geo.disc(6, 36)
    opts = fwd.SolveOptions(max_iter=1, tol=1e-14)
    with pytest.raises(RuntimeError, match="Newton did not reach"):
        fwd.solve_minimal_surface(d, FLAT, lambda x, y: 2 * (x * x - y * y), opts)


def test_complex_data_rejected_by_nonlinear_solver():
    d = geo.disc(6, 36)
    with pytest.raises(ValueError, match="real"):
        fwd.solve_minimal_surface(d, FLAT, lambda x, y: np.exp(1j * x))


def test_solve_report_history():
    d = geo.disc(10, 60)
    u, rep = fwd.solve_minimal_surface(d, FLAT, lambda x, y: x * x - y * y)
    assert rep.converged
    assert rep.final_residual <= 1e-10
    assert len(rep.residual_norms) == rep.iterations + 1
    # Newton from the harmonic guess should decrease monotonically here
    assert all(b < a for a, b in zip(rep.residual_norms, rep.residual_norms[1:]))
