"""Linearizations of the minimal-surface solution map in the boundary data.

For boundary data f_eps = sum_j eps_j f_j let u(eps) be the discrete
minimal-surface solution.  At eps = 0:

* First derivative in direction f_j: the discrete-harmonic extension
  v_j (Laplace-Beltrami with data f_j).
* Second mixed derivatives vanish.  Discretely this is exact, not just
  O(tolerance): the residual map is odd in u (every term carries an odd
  power of grad u), so u(-f) = -u(f) bit-for-bit and all even derivatives
  of the solution map at 0 are zero.  The central second-difference
  estimator therefore measures pure rounding noise.
* Third mixed derivative w_{jkl}: solves the linear problem

      K w = L,   w|boundary = 0,

  where K is the Laplace-Beltrami stiffness matrix and the load is the
  cubic correction from expanding 1/sqrt(1 + |grad u|^2):

      L_i = integral of [ g(grad v_j, grad phi_i) g(grad v_k, grad v_l)
                        + g(grad v_k, grad phi_i) g(grad v_j, grad v_l)
                        + g(grad v_l, grad phi_i) g(grad v_j, grad v_k) ] dV_g.

Finite-difference versions of all three are provided for cross-checking;
they difference full nonlinear solves on the centered stencils

    first:   (u(+h) - u(-h)) / (2h)
    second:  (u(++) - u(+-) - u(-+) + u(--)) / (4 h^2)
    third:   sum over sign triples of s1 s2 s3 u(s1 h, s2 h, s3 h) / (8 h^3).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import (
    ScalarField,
    assemble_weighted_stiffness,
    boundary_values,
    metric_at_quadrature,
    nodal_values,
    p1_gradients,
    pair_at_quadrature,
)
from .forward import SolveOptions, dirichlet_solve, solve_laplace_beltrami, solve_minimal_surface

__all__ = [
    "EpsilonCombination",
    "first_linearization",
    "first_linearization_fd",
    "second_linearization_fd",
    "third_linearization_source",
    "third_linearization_pde",
    "third_linearization_fd",
]

_QUAD_WEIGHTS = np.array([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0])


@dataclass
class EpsilonCombination:
    """Boundary-data family f_eps = sum_j eps_j f_j with cached solves.

    Parameters
    ----------
    mesh, metric
        Chart the family lives on.
    directions : sequence
        Boundary data f_j (callables, nodal arrays, or boundary arrays).
    options : SolveOptions, optional
        Passed to every nonlinear solve.

    Nonlinear solves are cached by the eps tuple, so stencil evaluations
    shared between finite-difference estimators are not repeated.
    """

    mesh: object
    metric: object
    directions: Sequence
    options: Optional[SolveOptions] = None
    _boundary: list = field(init=False, repr=False)
    _cache: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        if len(self.directions) == 0:
            raise ValueError("EpsilonCombination needs at least one direction")
        self._boundary = [boundary_values(self.mesh, f) for f in self.directions]

    @property
    def n_directions(self):
        return len(self._boundary)

    def boundary_data(self, eps):
        """Boundary values of f_eps for a coefficient vector eps."""
        eps = np.asarray(eps, dtype=float)
        if eps.shape != (self.n_directions,):
            raise ValueError(
                f"eps has shape {eps.shape}, expected ({self.n_directions},)"
            )
        out = np.zeros_like(self._boundary[0], dtype=float)
        for e, b in zip(eps, self._boundary):
            out = out + e * b
        return out

    def solve(self, eps):
        """Nonlinear solution u(eps) as a nodal array (cached)."""
        key = tuple(np.asarray(eps, dtype=float))
        if key not in self._cache:
            u, _ = solve_minimal_surface(
                self.mesh, self.metric, self.boundary_data(eps), self.options
            )
            self._cache[key] = u.values
        return self._cache[key]


def first_linearization(mesh, metric, f, options=None):
    """Derivative of the solution map at 0 in direction f.

    This is the discrete-harmonic extension of f (the tilt factor
    1/sqrt(1+|grad u|^2) is 1 to first order).
    """
    return solve_laplace_beltrami(mesh, metric, f, options)


def _basis_eps(combo, idx, h, signs):
    eps = np.zeros(combo.n_directions)
    for j, s in zip(idx, signs):
        eps[j] += s * h
    return eps


def first_linearization_fd(combo, j, h_eps):
    """Centered first difference of the nonlinear solution map."""
    up = combo.solve(_basis_eps(combo, (j,), h_eps, (+1,)))
    dn = combo.solve(_basis_eps(combo, (j,), h_eps, (-1,)))
    return ScalarField(combo.mesh, (up - dn) / (2.0 * h_eps))


def second_linearization_fd(combo, pair, h_eps):
    """Centered mixed second difference (u_{++} - u_{+-} - u_{-+} + u_{--})/4h^2.

    The exact value is zero (odd solution map); the return quantifies how
    close to zero the solver path keeps the even Taylor terms.
    """
    j, k = pair
    acc = np.zeros(combo.mesh.n_vertices)
    for s1 in (+1, -1):
        for s2 in (+1, -1):
            acc += s1 * s2 * combo.solve(_basis_eps(combo, (j, k), h_eps, (s1, s2)))
    return ScalarField(combo.mesh, acc / (4.0 * h_eps**2))


def third_linearization_fd(combo, triple, h_eps):
    """Centered mixed third difference over the 8-point sign stencil."""
    j, k, l = triple
    acc = np.zeros(combo.mesh.n_vertices)
    for s1 in (+1, -1):
        for s2 in (+1, -1):
            for s3 in (+1, -1):
                acc += s1 * s2 * s3 * combo.solve(
                    _basis_eps(combo, (j, k, l), h_eps, (s1, s2, s3))
                )
    return ScalarField(combo.mesh, acc / (8.0 * h_eps**3))


def third_linearization_source(mesh, metric, v_j, v_k, v_l, mq=None):
    """Load vector L of the third-linearization problem K w = L.

    Symmetric in the three first-linearization fields; see the module
    docstring for the integrand.  Returns a full-length nodal vector whose
    boundary entries also carry the boundary part of the weak form (they
    are ignored by the Dirichlet solve but used by the flux bookkeeping of
    the DN third derivative).
    """
    if mq is None:
        mq = metric_at_quadrature(mesh, metric)
    gj = p1_gradients(mesh, nodal_values(mesh, v_j))
    gk = p1_gradients(mesh, nodal_values(mesh, v_k))
    gl = p1_gradients(mesh, nodal_values(mesh, v_l))
    pair_kl = pair_at_quadrature(mesh, mq, gk, gl)
    pair_jl = pair_at_quadrature(mesh, mq, gj, gl)
    pair_jk = pair_at_quadrature(mesh, mq, gj, gk)

    w = mesh.tri_areas[:, None] * _QUAD_WEIGHTS * mq.sqrt_det  # (nt, 3)
    hg = mesh.hat_gradients

    def hat_pair(grad):
        # out[t, q, i] = g^{-1}(x_q)(grad, grad phi_i)
        return (
            mq.inv11[:, :, None] * grad[:, None, None, 0] * hg[:, None, :, 0]
            + mq.inv12[:, :, None]
            * (grad[:, None, None, 0] * hg[:, None, :, 1]
               + grad[:, None, None, 1] * hg[:, None, :, 0])
            + mq.inv22[:, :, None] * grad[:, None, None, 1] * hg[:, None, :, 1]
        )

    integrand = (
        hat_pair(gj) * pair_kl[:, :, None]
        + hat_pair(gk) * pair_jl[:, :, None]
        + hat_pair(gl) * pair_jk[:, :, None]
    )
    contrib = np.einsum("tq,tqi->ti", w, integrand)
    L = np.zeros(mesh.n_vertices)
    np.add.at(L, mesh.triangles, contrib)
    return L


def third_linearization_pde(mesh, metric, v_j, v_k, v_l, options=None, stiffness=None):
    """Third mixed derivative w_{jkl} of the solution map at 0.

    Solves K w = L with homogeneous Dirichlet data, where L is
    :func:`third_linearization_source` of the three harmonic fields.
    """
    options = options or SolveOptions()
    if stiffness is None:
        stiffness = assemble_weighted_stiffness(mesh, metric)
    L = third_linearization_source(mesh, metric, v_j, v_k, v_l)
    zero = np.zeros(len(mesh.boundary_vertices))
    w = dirichlet_solve(mesh, stiffness, L, zero, options)
    return ScalarField(mesh, w)
