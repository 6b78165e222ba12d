"""Dirichlet-to-Neumann traces, area functionals, and their derivatives.

Two boundary fields of the minimal-surface solution u with data f:

* the plain normal derivative  Lambda_g f = d_nu u,
* the tilted normal flux       N_g f = g(nu, grad u)/sqrt(1+|grad_g u|^2),

linked algebraically through the tangential slope of the data.  In the
g-orthonormal boundary frame |grad u|^2 = |d_tau f|^2 + (d_nu u)^2, so

    N = Lambda / sqrt(1 + |d_tau f|^2 + Lambda^2),
    Lambda = sign(N) sqrt( N^2 (1 + |d_tau f|^2) / (1 - N^2) ),

with |N| < 1 always (the tilted flux of a graph normal).  The
discretization natively produces *weak* fluxes: the boundary rows of the
nonlinear residual are exactly integral of N_g phi_b dS_g against the
boundary hats, and for the linear map the rows of K v.  Nodal values
divide by the lumped boundary measure, which is second-order accurate on
smooth boundaries; Lambda values then come from the algebraic inversion.

The third derivative of the DN map at zero boundary data is available two
ways, which agree to O(h_eps^2):

* ``method="fd"``: third centered differences of full nonlinear traces;
* ``method="exact"``: from the third-linearization solution w via
  <d^3 N, phi_b> = (K w - L)_b  plus the boundary correction
  d^3 Lambda = d^3 N + [ d_nu v_j g(grad v_k, grad v_l) + (cyc) ],
  where the pairings on the boundary are evaluated in the orthonormal
  frame from tangential data derivatives and weak normal fluxes.

Area functional and its first variation:

    Area(u)  = integral of sqrt(1 + |grad_g u|^2) dV_g,
    dA(u; v) = integral of g(grad u, grad v)/sqrt(1+|grad_g u|^2) dV_g.

For P1 fields the first variation equals v . r(u) with the residual vector
r — exactly, at quadrature level.  Consequently differencing the area
under boundary-hat perturbations of the data recovers the weak N_g flux up
to pure FD truncation in t; ``dn_from_area_data`` implements that pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .geometry import (
    BoundaryGeometry,
    ScalarField,
    assemble_weighted_stiffness,
    boundary_geometry,
    boundary_values,
    integrate_quadrature,
    metric_at_quadrature,
    nodal_values,
    p1_gradients,
    pair_at_quadrature,
    riemannian_gradient,
    tangential_derivative,
)
from .forward import (
    SolveOptions,
    mse_residual,
    solve_laplace_beltrami,
    solve_minimal_surface,
)
from .linearize import third_linearization_pde, third_linearization_source

__all__ = [
    "DNTrace",
    "AreaData",
    "dn_linear",
    "dn_nonlinear",
    "dn_third_derivative",
    "ng_map",
    "area",
    "area_first_variation",
    "dn_from_area_data",
    "lambda_from_ng",
    "ng_from_lambda",
]


@dataclass(frozen=True, eq=False)
class DNTrace:
    """Boundary trace of a DN-type map, in ``boundary_vertices`` ordering.

    Attributes
    ----------
    bg : BoundaryGeometry
        Frame and measure the trace lives on.
    values : ndarray
        Nodal values of the map output (Lambda-type normal derivative for
        the linear/nonlinear maps, third derivative thereof for the third-
        derivative kinds).
    flux : ndarray
        The weak flux vector the discretization provides natively:
        rows of K v for ``linear``; boundary residual rows (the N_g flux)
        for ``nonlinear`` and ``area``; (K w - L) rows (the d^3 N flux) for
        the third-derivative kinds.
    ng : ndarray or None
        Nodal N_g values (tilted flux), where meaningful.
    tangential_sq : ndarray or None
        |d_tau f|^2 of the boundary data, used by the algebraic inversion.
    data : ndarray or None
        Boundary values of the Dirichlet data f.
    kind : str
        One of ``linear``, ``nonlinear``, ``third_fd``, ``third_exact``,
        ``area``.
    """

    bg: BoundaryGeometry
    values: np.ndarray
    flux: np.ndarray
    kind: str
    ng: Optional[np.ndarray] = None
    tangential_sq: Optional[np.ndarray] = None
    data: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class AreaData:
    """Record of the area-differencing route to the N_g flux.

    Attributes
    ----------
    probe_indices : ndarray
        Boundary-vertex positions probed (into the boundary ordering).
    t : float
        Centered FD step in the probe amplitude.
    areas_base : float
        Area of the unperturbed solution.
    flux : ndarray
        FD estimates of integral N_g phi_b dS_g per probed hat.
    ng : ndarray
        Nodal N_g from the flux (validated |N_g| < 1).
    """

    probe_indices: np.ndarray
    t: float
    areas_base: float
    flux: np.ndarray
    ng: np.ndarray


def lambda_from_ng(ng, tangential_sq):
    """Algebraic inversion N_g -> Lambda given |d_tau f|^2.

    Raises
    ------
    ValueError
        If any |N_g| >= 1 (not realizable by a graph normal).
    """
    ng = np.asarray(ng, dtype=float)
    tangential_sq = np.broadcast_to(np.asarray(tangential_sq, dtype=float), ng.shape)
    bad = np.abs(ng) >= 1.0
    if np.any(bad):
        k = int(np.argmax(np.abs(ng)))
        raise ValueError(
            f"|N_g| must be < 1 for a graph flux; got {ng[k]:.6f} at boundary "
            f"position {k} — mesh too coarse or data too rough"
        )
    return np.sign(ng) * np.sqrt(ng**2 * (1.0 + tangential_sq) / (1.0 - ng**2))


def ng_from_lambda(lam, tangential_sq):
    """Algebraic map Lambda -> N_g given |d_tau f|^2 (inverse of the above)."""
    lam = np.asarray(lam, dtype=float)
    tangential_sq = np.broadcast_to(np.asarray(tangential_sq, dtype=float), lam.shape)
    return lam / np.sqrt(1.0 + tangential_sq + lam**2)


def _tangential_sq(mesh, bg, f_boundary):
    df = tangential_derivative(bg, f_boundary)
    return df * df


def dn_linear(mesh, metric, f, options=None, bg=None, stiffness=None):
    """DN trace of the Laplace-Beltrami extension: Lambda_0 f = d_nu v.

    The weak flux is exactly the boundary rows of K v; nodal values divide
    by the lumped boundary measure.  The map is self-adjoint at the weak
    level: flux(f) . g|_b == flux(g) . f|_b for any data f, g.
    """
    bg = bg or boundary_geometry(mesh, metric)
    fb = boundary_values(mesh, f)
    if stiffness is None:
        stiffness = assemble_weighted_stiffness(mesh, metric)
    v = solve_laplace_beltrami(mesh, metric, fb, options)
    flux = (stiffness @ v.values)[bg.vertex_indices]
    return DNTrace(
        bg=bg,
        values=flux / bg.ds,
        flux=flux,
        kind="linear",
        tangential_sq=_tangential_sq(mesh, bg, fb.real if np.iscomplexobj(fb) else fb),
        data=fb,
    )


def dn_nonlinear(mesh, metric, f, options=None, bg=None):
    """DN trace of the minimal-surface solution: Lambda_g f = d_nu u.

    Solves the nonlinear problem, reads the N_g weak flux off the boundary
    residual rows, and recovers Lambda by the algebraic inversion with the
    tangential slope of the data.
    """
    bg = bg or boundary_geometry(mesh, metric)
    fb = boundary_values(mesh, f)
    u, report = solve_minimal_surface(mesh, metric, fb, options)
    flux = mse_residual(mesh, metric, u.values)[bg.vertex_indices]
    ng = flux / bg.ds
    tq = _tangential_sq(mesh, bg, fb)
    lam = lambda_from_ng(ng, tq)
    return DNTrace(
        bg=bg,
        values=lam,
        flux=flux,
        kind="nonlinear",
        ng=ng,
        tangential_sq=tq,
        data=fb,
    )


def ng_map(mesh, metric, u, bg=None):
    """Pointwise N_g trace of a solution field by gradient recovery.

    Averages the Riemannian gradients of the triangles around each
    boundary vertex (area-weighted) and evaluates
    g(nu, grad u)/sqrt(1+|grad_g u|^2) with the metric at the vertex.
    First-order accurate; serves as an independent cross-check of the
    superconvergent weak-flux route used by :func:`dn_nonlinear`.
    """
    bg = bg or boundary_geometry(mesh, metric)
    uvals = nodal_values(mesh, u)
    grads = riemannian_gradient(mesh, metric, uvals)  # per-triangle, g^{-1} grad
    acc = np.zeros((mesh.n_vertices, 2))
    wsum = np.zeros(mesh.n_vertices)
    for c in range(3):
        np.add.at(acc, mesh.triangles[:, c], grads * mesh.tri_areas[:, None])
        np.add.at(wsum, mesh.triangles[:, c], mesh.tri_areas)
    recovered = acc / wsum[:, None]

    idx = bg.vertex_indices
    p = mesh.vertices[idx]
    from .geometry import _metric_entries

    g11, g12, g22 = _metric_entries(metric, p[:, 0], p[:, 1])
    gv = recovered[idx]

    def form(a, b):
        return (
            g11 * a[:, 0] * b[:, 0]
            + g12 * (a[:, 0] * b[:, 1] + a[:, 1] * b[:, 0])
            + g22 * a[:, 1] * b[:, 1]
        )

    normal_part = form(bg.normal, gv)
    slope_sq = form(gv, gv)
    return normal_part / np.sqrt(1.0 + slope_sq)


def _nodal_normal_derivatives(mesh, stiffness, bg, v):
    """Nodal d_nu v for a discrete-harmonic field, from its weak flux."""
    return (stiffness @ np.asarray(v))[bg.vertex_indices] / bg.ds


def _boundary_pairings(mesh, stiffness, bg, vs, fbs):
    """Normal and tangential first-derivative data of harmonic fields.

    Returns (dnu, dtau): lists of nodal d_nu v_j and d_tau f_j along the
    boundary.  The g-pairing of two gradients on the boundary is then
    g(grad v_a, grad v_b) = dtau_a dtau_b + dnu_a dnu_b in the orthonormal
    frame.
    """
    dnu = [_nodal_normal_derivatives(mesh, stiffness, bg, v) for v in vs]
    dtau = [tangential_derivative(bg, fb) for fb in fbs]
    return dnu, dtau


def dn_third_derivative(
    mesh,
    metric,
    directions,
    h_eps=0.02,
    method="fd",
    options=None,
    bg=None,
):
    """Third mixed derivative of the DN map at zero data.

    Parameters
    ----------
    directions : sequence of three boundary data (f_j, f_k, f_l)
    h_eps : float
        Step for the centered third-difference stencil (``method="fd"``).
    method : str
        ``"fd"`` differences eight full nonlinear traces;
        ``"exact"`` uses the third-linearization solution w and the
        boundary correction (no epsilon differencing).

    Returns
    -------
    DNTrace with kind ``third_fd`` or ``third_exact``; ``values`` holds the
    nodal d^3 Lambda trace and ``flux`` the weak d^3 N flux.
    """
    from .linearize import EpsilonCombination

    if len(directions) != 3:
        raise ValueError(f"need exactly three directions, got {len(directions)}")
    bg = bg or boundary_geometry(mesh, metric)
    fbs = [boundary_values(mesh, f) for f in directions]

    if method == "fd":
        combo = EpsilonCombination(mesh, metric, fbs, options=options)
        lam_acc = np.zeros(len(bg.vertex_indices))
        flux_acc = np.zeros(len(bg.vertex_indices))
        for s1 in (+1, -1):
            for s2 in (+1, -1):
                for s3 in (+1, -1):
                    eps = np.array([s1, s2, s3]) * h_eps
                    trace = dn_nonlinear(
                        mesh, metric, combo.boundary_data(eps), options=options, bg=bg
                    )
                    sign = s1 * s2 * s3
                    lam_acc += sign * trace.values
                    flux_acc += sign * trace.flux
        scale = 8.0 * h_eps**3
        return DNTrace(
            bg=bg, values=lam_acc / scale, flux=flux_acc / scale, kind="third_fd"
        )

    if method == "exact":
        stiffness = assemble_weighted_stiffness(mesh, metric)
        vs = [
            solve_laplace_beltrami(mesh, metric, fb, options).values for fb in fbs
        ]
        w = third_linearization_pde(
            mesh, metric, *vs, options=options, stiffness=stiffness
        )
        L = third_linearization_source(mesh, metric, *vs)
        flux = (stiffness @ w.values - L)[bg.vertex_indices]
        d3n = flux / bg.ds
        dnu, dtau = _boundary_pairings(mesh, stiffness, bg, vs, fbs)
        pair = lambda a, b: dtau[a] * dtau[b] + dnu[a] * dnu[b]
        nu_dot_F = (
            dnu[0] * pair(1, 2) + dnu[1] * pair(0, 2) + dnu[2] * pair(0, 1)
        )
        return DNTrace(
            bg=bg, values=d3n + nu_dot_F, flux=flux, kind="third_exact"
        )

    raise ValueError(f"unknown method {method!r}; use 'fd' or 'exact'")


# ---------------------------------------------------------------------------
# Area functionals
# ---------------------------------------------------------------------------


def area(mesh, metric, u):
    """Graph area: integral of sqrt(1 + |grad_g u|^2) dV_g."""
    uvals = nodal_values(mesh, u)
    mq = metric_at_quadrature(mesh, metric)
    grad = p1_gradients(mesh, uvals)
    slope_sq = pair_at_quadrature(mesh, mq, grad, grad)
    return float(integrate_quadrature(mesh, mq, np.sqrt(1.0 + slope_sq)))


def area_first_variation(mesh, metric, u, v):
    """Directional derivative of the area at u in the nodal direction v.

    Equals v . r(u) with the residual vector r exactly (the quadrature
    rules coincide); evaluated here by direct quadrature.
    """
    uvals = nodal_values(mesh, u)
    vvals = nodal_values(mesh, v)
    mq = metric_at_quadrature(mesh, metric)
    gu = p1_gradients(mesh, uvals)
    gv = p1_gradients(mesh, vvals)
    slope_sq = pair_at_quadrature(mesh, mq, gu, gu)
    integrand = pair_at_quadrature(mesh, mq, gu, gv) / np.sqrt(1.0 + slope_sq)
    return float(integrate_quadrature(mesh, mq, integrand))


def dn_from_area_data(
    mesh,
    metric,
    f,
    probes=None,
    t=1e-4,
    options=None,
    bg=None,
):
    """Recover the DN trace purely from area measurements.

    Perturbs the boundary data along boundary-hat directions, differences
    the resulting areas to estimate integral N_g phi_b dS_g per hat, and
    runs the algebraic inversion to Lambda.  Produces the same discrete
    object as :func:`dn_nonlinear` up to the O(t^2) differencing error,
    because the area first variation along the solution path reduces to the
    boundary flux pairing exactly (the interior residual vanishes).

    Parameters
    ----------
    probes : sequence of int, optional
        Positions (into the boundary ordering) to probe; default all.
    t : float
        Centered FD step for the area differences.

    Returns
    -------
    (DNTrace, AreaData)
    """
    options = options or SolveOptions()
    bg = bg or boundary_geometry(mesh, metric)
    fb = boundary_values(mesh, f)
    n_b = len(bg.vertex_indices)
    if probes is None:
        probes = np.arange(n_b)
    else:
        probes = np.asarray(probes, dtype=int)
        if probes.size == 0 or probes.min() < 0 or probes.max() >= n_b:
            raise ValueError(
                f"probe indices must lie in [0, {n_b}); got range "
                f"[{probes.min() if probes.size else '-'}, "
                f"{probes.max() if probes.size else '-'}]"
            )

    u0, _ = solve_minimal_surface(mesh, metric, fb, options)
    base_area = area(mesh, metric, u0.values)

    from dataclasses import replace

    warm = replace(options, initial_guess=u0.values)
    flux = np.full(n_b, np.nan)
    for b in probes:
        pert = np.zeros(n_b)
        pert[b] = t
        up, _ = solve_minimal_surface(mesh, metric, fb + pert, warm)
        dn_, _ = solve_minimal_surface(mesh, metric, fb - pert, warm)
        flux[b] = (area(mesh, metric, up.values) - area(mesh, metric, dn_.values)) / (
            2.0 * t
        )

    if len(probes) < n_b:
        measured = np.zeros(n_b)
        measured[probes] = flux[probes]
        flux = measured
    ng = flux / bg.ds
    tq = _tangential_sq(mesh, bg, fb)
    lam = lambda_from_ng(ng, tq)
    record = AreaData(
        probe_indices=probes,
        t=t,
        areas_base=base_area,
        flux=flux.copy(),
        ng=ng,
    )
    trace = DNTrace(
        bg=bg,
        values=lam,
        flux=flux,
        kind="area",
        ng=ng,
        tangential_sq=tq,
        data=fb,
    )
    return trace, record
