"""Forward solvers: the minimal-surface equation and Laplace-Beltrami.

The graph of u over a chart (Sigma, g) is area-stationary iff

    div_g[ grad_g(u) / sqrt(1 + |grad_g u|^2) ] = 0,    u|boundary = f.

Discretely, with P1 elements, the residual entries are

    r_i(u) = integral of g(grad u, grad phi_i) / sqrt(1 + |grad_g u|^2) dV_g,

and a solution makes the interior entries vanish; the boundary entries are
the weak normal flux of the area functional and are consumed downstream by
the Dirichlet-to-Neumann machinery.  The Newton linearization is

    J_ij(u) = integral of [ g(grad phi_i, grad phi_j) / s
                            - g(grad u, grad phi_i) g(grad u, grad phi_j) / s^3 ] dV_g,

with s = sqrt(1 + |grad_g u|^2).  Because the area integrand sqrt(1+|p|^2)
is strictly convex, the damped Newton iteration from the Laplace-Beltrami
initial guess is globally convergent in practice, including far outside the
small-slope regime (see the catenoid tests).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import (
    ScalarField,
    assemble_weighted_stiffness,
    boundary_values,
    metric_at_quadrature,
    nodal_values,
    p1_gradients,
    pair_at_quadrature,
)

__all__ = [
    "SolveOptions",
    "SolveReport",
    "mse_residual",
    "mse_linearized_operator",
    "solve_laplace_beltrami",
    "solve_minimal_surface",
    "dirichlet_solve",
]

_QUAD_WEIGHTS = np.array([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0])


@dataclass
class SolveOptions:
    """Options for the nonlinear solve.

    Attributes
    ----------
    tol : float
        Absolute tolerance on the Euclidean norm of the interior residual.
    max_iter : int
        Maximum Newton iterations.
    max_halvings : int
        Maximum step halvings in the Armijo backtracking line search.
    armijo : float
        Sufficient-decrease parameter: accept u + s*delta when
        ||r_new|| <= (1 - armijo * s) ||r||.
    linear_solver : str
        "direct" (sparse LU) or "cg" (conjugate gradients on the reduced
        SPD system).
    cg_tol : float
        Relative tolerance for the CG fallback.
    initial_guess : optional
        Nodal array or ScalarField used instead of the Laplace-Beltrami
        initial guess.
    """

    tol: float = 1e-10
    max_iter: int = 30
    max_halvings: int = 30
    armijo: float = 1e-4
    linear_solver: str = "direct"
    cg_tol: float = 1e-12
    initial_guess: Optional[object] = None


@dataclass
class SolveReport:
    """Convergence record of a nonlinear solve."""

    converged: bool
    iterations: int
    final_residual: float
    residual_norms: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    message: str = ""


def _slope_factor(mesh, mq, u):
    """s = sqrt(1 + |grad_g u|^2) at quadrature points, plus the gradient."""
    grad = p1_gradients(mesh, u)
    sq = pair_at_quadrature(mesh, mq, grad, grad)
    return np.sqrt(1.0 + sq), grad


def mse_residual(mesh, metric, u, mq=None):
    """Full residual vector of the minimal-surface equation.

    Entry i is the integral of g(grad u, grad phi_i)/sqrt(1+|grad_g u|^2)
    dV_g over the support of hat function phi_i — for interior i this is the
    equation residual, for boundary i the weak normal flux of the tilted
    normal field.
    """
    u = nodal_values(mesh, u)
    if np.iscomplexobj(u):
        raise ValueError("minimal-surface residual is defined for real fields only")
    if mq is None:
        mq = metric_at_quadrature(mesh, metric)
    s, grad = _slope_factor(mesh, mq, u)
    w = (mesh.tri_areas[:, None] * _QUAD_WEIGHTS) * mq.sqrt_det / s  # (nt, 3)
    # b[t, q, i] = g^{-1}(x_q)(grad u, grad phi_i)
    hg = mesh.hat_gradients
    b = (
        mq.inv11[:, :, None] * grad[:, None, None, 0] * hg[:, None, :, 0]
        + mq.inv12[:, :, None]
        * (grad[:, None, None, 0] * hg[:, None, :, 1] + grad[:, None, None, 1] * hg[:, None, :, 0])
        + mq.inv22[:, :, None] * grad[:, None, None, 1] * hg[:, None, :, 1]
    )
    contrib = np.einsum("tq,tqi->ti", w, b)
    r = np.zeros(mesh.n_vertices)
    np.add.at(r, mesh.triangles, contrib)
    return r


def mse_linearized_operator(mesh, metric, u, mq=None):
    """Newton linearization J(u) of the minimal-surface residual.

    Symmetric sparse matrix; at u = 0 it reduces to the Laplace-Beltrami
    stiffness matrix.
    """
    u = nodal_values(mesh, u)
    if mq is None:
        mq = metric_at_quadrature(mesh, metric)
    s, grad = _slope_factor(mesh, mq, u)
    w_base = mesh.tri_areas[:, None] * _QUAD_WEIGHTS * mq.sqrt_det  # (nt, 3)
    hg = mesh.hat_gradients

    # b[t, q, i] = g^{-1}(x_q)(grad u, grad phi_i)
    b = (
        mq.inv11[:, :, None] * grad[:, None, None, 0] * hg[:, None, :, 0]
        + mq.inv12[:, :, None]
        * (grad[:, None, None, 0] * hg[:, None, :, 1] + grad[:, None, None, 1] * hg[:, None, :, 0])
        + mq.inv22[:, :, None] * grad[:, None, None, 1] * hg[:, None, :, 1]
    )
    # pair[t, q, i, j] = g^{-1}(x_q)(grad phi_i, grad phi_j)
    pair = (
        mq.inv11[:, :, None, None] * hg[:, None, :, None, 0] * hg[:, None, None, :, 0]
        + mq.inv12[:, :, None, None]
        * (hg[:, None, :, None, 0] * hg[:, None, None, :, 1]
           + hg[:, None, :, None, 1] * hg[:, None, None, :, 0])
        + mq.inv22[:, :, None, None] * hg[:, None, :, None, 1] * hg[:, None, None, :, 1]
    )
    data = np.einsum("tq,tqij->tij", w_base / s, pair) - np.einsum(
        "tq,tqi,tqj->tij", w_base / s**3, b, b
    )
    rows = np.broadcast_to(mesh.triangles[:, :, None], data.shape)
    cols = np.broadcast_to(mesh.triangles[:, None, :], data.shape)
    J = sp.coo_matrix(
        (data.ravel(), (rows.ravel(), cols.ravel())),
        shape=(mesh.n_vertices, mesh.n_vertices),
    )
    return J.tocsr()


def _solve_interior(A, rhs, options):
    """Solve the reduced interior system for one or more right-hand sides."""
    rhs = np.atleast_2d(np.asarray(rhs))
    squeeze = rhs.shape[0] == 1
    if options.linear_solver == "direct":
        lu = spla.splu(A.tocsc())
        out = np.column_stack([lu.solve(col) for col in rhs])
    elif options.linear_solver == "cg":
        cols = []
        for col in rhs:
            x, info = spla.cg(A, col, rtol=options.cg_tol, atol=0.0)
            if info != 0:
                raise RuntimeError(
                    f"CG failed to reach tolerance {options.cg_tol:g} (info={info})"
                )
            cols.append(x)
        out = np.column_stack(cols)
    else:
        raise ValueError(
            f"unknown linear_solver {options.linear_solver!r}; use 'direct' or 'cg'"
        )
    return out[:, 0] if squeeze else out


def dirichlet_solve(mesh, A, rhs, bvals, options=None):
    """Solve A u = rhs with Dirichlet values on the boundary vertices.

    Symmetric elimination: restrict to interior unknowns and move the
    boundary columns to the right-hand side.  ``bvals`` is in boundary
    ordering; ``rhs`` is a full-length load vector (may be complex).
    """
    options = options or SolveOptions()
    I = mesh.interior_vertices
    B = mesh.boundary_vertices
    bvals = np.asarray(bvals)
    rhs = np.asarray(rhs)
    A_csr = A.tocsr()
    A_II = A_csr[I][:, I]
    A_IB = A_csr[I][:, B]
    u = np.zeros(mesh.n_vertices, dtype=np.result_type(bvals, rhs, float))
    u[B] = bvals
    reduced = rhs[I] - A_IB @ bvals
    if np.iscomplexobj(reduced):
        re = _solve_interior(A_II, reduced.real, options)
        im = _solve_interior(A_II, reduced.imag, options)
        u[I] = re + 1j * im
    else:
        u[I] = _solve_interior(A_II, reduced, options)
    return u


def solve_laplace_beltrami(mesh, metric, boundary_data, options=None):
    """Discrete-harmonic extension: K u = 0 with u = f on the boundary."""
    options = options or SolveOptions()
    f = boundary_values(mesh, boundary_data)
    K = assemble_weighted_stiffness(mesh, metric)
    u = dirichlet_solve(mesh, K, np.zeros(mesh.n_vertices), f, options)
    return ScalarField(mesh, u)


def solve_minimal_surface(mesh, metric, boundary_data, options=None):
    """Damped-Newton solve of the discrete minimal-surface equation.

    Starts from the Laplace-Beltrami extension of the boundary data (unless
    ``options.initial_guess`` overrides it) and iterates Newton steps with
    Armijo backtracking on the interior residual norm.

    Returns
    -------
    (ScalarField, SolveReport)

    Raises
    ------
    RuntimeError
        If the residual stops decreasing before the tolerance is met, or a
        non-finite value appears; the message reports the iteration and
        residual history tail.
    """
    options = options or SolveOptions()
    f = boundary_values(mesh, boundary_data)
    if np.iscomplexobj(f):
        raise ValueError(
            "minimal-surface boundary data must be real (complex data is only "
            "supported by solve_laplace_beltrami)"
        )
    mq = metric_at_quadrature(mesh, metric)

    if options.initial_guess is not None:
        u = nodal_values(mesh, options.initial_guess).astype(float).copy()
        u[mesh.boundary_vertices] = f
    else:
        u = solve_laplace_beltrami(mesh, metric, f, options).values.copy()

    I = mesh.interior_vertices
    residual_norms = []
    step_sizes = []

    r = mse_residual(mesh, metric, u, mq)
    rnorm = float(np.linalg.norm(r[I]))
    residual_norms.append(rnorm)

    for it in range(options.max_iter):
        if not np.isfinite(rnorm):
            raise RuntimeError(
                f"minimal-surface residual became non-finite at iteration {it}"
            )
        if rnorm <= options.tol:
            report = SolveReport(
                converged=True,
                iterations=it,
                final_residual=rnorm,
                residual_norms=residual_norms,
                step_sizes=step_sizes,
                message=f"converged in {it} Newton iterations",
            )
            return ScalarField(mesh, u), report

        J = mse_linearized_operator(mesh, metric, u, mq)
        delta = np.zeros(mesh.n_vertices)
        delta[I] = _solve_interior(J[I][:, I], -r[I], options)

        # Armijo backtracking on the residual norm.
        step = 1.0
        accepted = False
        for _ in range(options.max_halvings + 1):
            u_trial = u + step * delta
            r_trial = mse_residual(mesh, metric, u_trial, mq)
            rnorm_trial = float(np.linalg.norm(r_trial[I]))
            if np.isfinite(rnorm_trial) and rnorm_trial <= (1.0 - options.armijo * step) * rnorm:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            raise RuntimeError(
                f"line search failed at Newton iteration {it}: residual {rnorm:.3e} "
                f"did not decrease (history tail {residual_norms[-3:]}); the "
                f"boundary data may be too rough for this mesh"
            )
        u, r, rnorm = u_trial, r_trial, rnorm_trial
        residual_norms.append(rnorm)
        step_sizes.append(step)

    if rnorm <= options.tol:
        report = SolveReport(
            converged=True,
            iterations=options.max_iter,
            final_residual=rnorm,
            residual_norms=residual_norms,
            step_sizes=step_sizes,
            message=f"converged in {options.max_iter} Newton iterations",
        )
        return ScalarField(mesh, u), report
    raise RuntimeError(
        f"Newton did not reach tol={options.tol:g} in {options.max_iter} "
        f"iterations (final residual {rnorm:.3e}); residual history tail "
        f"{residual_norms[-3:]}"
    )
