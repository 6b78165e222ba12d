"""Triangulated 2D charts with Riemannian metrics.

This module provides the geometric substrate for the rest of the package:
meshes of linear (P1) triangles, metric fields evaluated at quadrature
points, weighted stiffness/mass assembly, and boundary frames that are
orthonormal with respect to the metric.

Conventions
-----------
* Triangles are stored positively oriented (counterclockwise); construction
  re-orients where necessary and rejects degenerate elements.
* All volume integrals use the order-2 quadrature rule with the three
  interior points at barycentric coordinates (2/3, 1/6, 1/6) and weights
  1/3.  The metric is sampled at the quadrature points, so conformal
  rescalings g -> c*g act on assembled operators exactly at quadrature
  level (in 2D, sqrt(det(c*g)) * (c*g)^{-1} == sqrt(det g) * g^{-1}
  pointwise, which makes the stiffness matrix conformally invariant to
  machine precision).
* Gradients of P1 fields are constant per triangle; the Riemannian
  gradient g^{-1} grad(u) is reported per triangle with the metric at the
  centroid, while quadrature-accurate pairings sample the metric at the
  quadrature points.
* Metric pairings of complex fields are *bilinear*, not Hermitian:
  g(grad u, grad v) = (grad u)^T g^{-1} (grad v) with no conjugation.
  Several downstream functionals rely on this; conjugate explicitly at the
  call site when a Hermitian quantity is wanted.
* Boundary edges are oriented with the domain on the left, so the outer
  loop runs counterclockwise and interior hole loops run clockwise.  The
  Euclidean outward normal is then (t_y, -t_x) for forward tangent t, and
  the g-orthonormal frame is built by raising that normal with g^{-1},
  which keeps g(nu, tau) = 0 exact.

Mesh JSON format: an object with keys ``vertices`` (list of [x, y]) and
``triangles`` (list of [i, j, k]); an optional ``boundary_markers`` object
maps vertex indices to integer labels and is preserved on round-trip.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Mesh",
    "MetricField",
    "ScalarField",
    "BoundaryGeometry",
    "square",
    "disc",
    "annulus",
    "save_mesh",
    "load_mesh",
    "flat_metric",
    "explicit_metric",
    "conformal_metric",
    "metric_eval",
    "riemannian_gradient",
    "inner_product",
    "pair_at_quadrature",
    "interpolate_at_quadrature",
    "integrate_quadrature",
    "assemble_weighted_stiffness",
    "assemble_mass",
    "boundary_geometry",
    "boundary_values",
    "tangential_derivative",
    "lift_boundary",
]

# Order-2 rule: three interior points, exact for quadratics.
_QUAD_BARY = np.array(
    [
        [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
        [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
        [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
    ]
)
_QUAD_WEIGHTS = np.array([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0])

# Two-point Gauss rule on [0, 1], used for g-lengths of boundary edges.
_EDGE_QUAD_T = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
_EDGE_QUAD_W = np.array([0.5, 0.5])


def _cross2(a, b):
    """z-component of the cross product of stacked 2D vectors."""
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


# ---------------------------------------------------------------------------
# Mesh
# ---------------------------------------------------------------------------


class Mesh:
    """Conforming triangulation of a planar chart.

    Parameters
    ----------
    vertices : (n_vertices, 2) array_like
        Vertex coordinates.
    triangles : (n_triangles, 3) array_like of int
        Vertex indices per triangle.  Orientation is normalized to
        counterclockwise on construction.
    boundary_markers : dict, optional
        Optional integer labels per boundary vertex index; carried through
        JSON round-trips but not interpreted here.

    Attributes
    ----------
    tri_areas : (n_triangles,) ndarray
        Euclidean triangle areas (all positive).
    hat_gradients : (n_triangles, 3, 2) ndarray
        Euclidean gradients of the three P1 hat functions per triangle.
    quad_points : (n_triangles, 3, 2) ndarray
        Physical coordinates of the volume quadrature points.
    centroids : (n_triangles, 2) ndarray
    boundary_edges : (n_boundary_edges, 2) ndarray
        Directed boundary edges, domain on the left.
    boundary_loops : list of ndarray
        Boundary vertex indices per closed loop, in traversal order.  The
        outer loop (largest enclosed signed area) comes first; each loop is
        rotated to start at its smallest vertex index.
    boundary_vertices : (n_boundary,) ndarray
        Concatenation of the loops; this ordering is the canonical one for
        boundary traces throughout the package.
    is_boundary : (n_vertices,) bool ndarray
    interior_vertices : ndarray
    h : float
        Longest edge in the mesh (Euclidean).
    """

    def __init__(self, vertices, triangles, boundary_markers=None):
        vertices = np.ascontiguousarray(vertices, dtype=float)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise ValueError(
                f"vertices must have shape (n, 2), got {vertices.shape}"
            )
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise ValueError(
                f"triangles must have shape (m, 3), got {triangles.shape}"
            )
        if not np.all(np.isfinite(vertices)):
            raise ValueError("vertices contain non-finite coordinates")
        if triangles.min(initial=0) < 0 or triangles.max(initial=-1) >= len(vertices):
            raise ValueError("triangle indices out of range")

        # Normalize orientation: flip clockwise triangles.
        p = vertices[triangles]
        signed = 0.5 * _cross2(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        flip = signed < 0.0
        if np.any(flip):
            triangles = triangles.copy()
            triangles[flip] = triangles[flip][:, [0, 2, 1]]
            p = vertices[triangles]
            signed = 0.5 * _cross2(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        scale = max(np.abs(vertices).max(), 1.0)
        if np.any(signed <= 1e-14 * scale**2):
            bad = int(np.argmin(signed))
            raise ValueError(
                f"degenerate triangle {bad} (vertices {triangles[bad].tolist()}, "
                f"area {signed[bad]:.3e})"
            )

        self.vertices = vertices
        self.triangles = triangles
        self.boundary_markers = dict(boundary_markers) if boundary_markers else {}
        self.tri_areas = signed

        # P1 hat gradients: grad(phi_i) = perp(p_{i+2} - p_{i+1}) / (2A).
        grads = np.empty((len(triangles), 3, 2))
        for i in range(3):
            e = p[:, (i + 2) % 3] - p[:, (i + 1) % 3]
            grads[:, i, 0] = -e[:, 1]
            grads[:, i, 1] = e[:, 0]
        grads /= (2.0 * signed)[:, None, None]
        self.hat_gradients = grads

        self.quad_points = np.einsum("qi,tic->tqc", _QUAD_BARY, p)
        self.centroids = p.mean(axis=1)

        edges = np.concatenate([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]])
        self.h = float(np.sqrt((edges**2).sum(axis=1).max()))

        self._build_boundary()

    # -- derived structure ---------------------------------------------------

    def _build_boundary(self):
        """Extract directed boundary edges and assemble closed loops."""
        t = self.triangles
        directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        # An edge is on the boundary iff its reversal never occurs.
        keys = set(map(tuple, directed.tolist()))
        boundary = [e for e in directed.tolist() if (e[1], e[0]) not in keys]
        if not boundary:
            raise ValueError("mesh has no boundary edges (closed surface?)")
        self.boundary_edges = np.array(boundary, dtype=np.int64)

        succ = {}
        for a, b in boundary:
            if a in succ:
                raise ValueError(
                    f"non-manifold boundary at vertex {a} (two outgoing edges)"
                )
            succ[a] = b
        loops = []
        remaining = set(succ)
        while remaining:
            start = min(remaining)
            loop = [start]
            remaining.discard(start)
            v = succ[start]
            while v != start:
                loop.append(v)
                remaining.discard(v)
                v = succ[v]
            loops.append(np.array(loop, dtype=np.int64))

        def loop_area(loop):
            q = self.vertices[loop]
            return 0.5 * float(_cross2(q, np.roll(q, -1, axis=0)).sum())

        loops.sort(key=lambda lp: -loop_area(lp))
        self.boundary_loops = loops
        self.boundary_vertices = np.concatenate(loops)
        self.is_boundary = np.zeros(len(self.vertices), dtype=bool)
        self.is_boundary[self.boundary_vertices] = True
        self.interior_vertices = np.flatnonzero(~self.is_boundary)

    # -- basic queries -------------------------------------------------------

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def __repr__(self):
        return (
            f"Mesh(n_vertices={self.n_vertices}, n_triangles={self.n_triangles}, "
            f"n_boundary={len(self.boundary_vertices)}, h={self.h:.4g})"
        )


# ---------------------------------------------------------------------------
# Mesh generators
# ---------------------------------------------------------------------------


def square(n):
    """Uniform right-triangle mesh of the unit square [0,1]^2.

    ``n`` cells per side, (n+1)^2 vertices, 2 n^2 triangles.
    """
    if n < 1:
        raise ValueError(f"square(n) needs n >= 1, got {n}")
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    tris = []
    for j in range(n):
        for i in range(n):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    return Mesh(vertices, np.array(tris))


def disc(n_radial, n_angular):
    """Quasi-uniform mesh of the unit disc.

    Vertices sit on ``n_radial`` concentric rings (radius i/n_radial) whose
    angular count grows linearly to ``n_angular`` on the outermost ring, with
    alternate rings staggered by half a step; connectivity is the Delaunay
    triangulation of that point set.  This keeps triangles close to
    equilateral all the way to the center, where a fixed angular count would
    produce badly stretched elements.
    """
    from scipy.spatial import Delaunay

    if n_radial < 2 or n_angular < 6:
        raise ValueError(
            f"disc(n_radial, n_angular) needs n_radial >= 2 and n_angular >= 6, "
            f"got ({n_radial}, {n_angular})"
        )
    pts = [(0.0, 0.0)]
    for i in range(1, n_radial + 1):
        r = i / n_radial
        m = max(6, int(round(n_angular * i / n_radial)))
        if i == n_radial:
            m = n_angular
        offset = (np.pi / m) * (i % 2)
        theta = 2.0 * np.pi * np.arange(m) / m + offset
        pts.extend(zip(r * np.cos(theta), r * np.sin(theta)))
    vertices = np.array(pts)
    tri = Delaunay(vertices)
    return Mesh(vertices, tri.simplices)


def annulus(r0, r1, n_radial, n_angular):
    """Structured tensor-product mesh of the annulus r0 <= r <= r1."""
    if not (0.0 < r0 < r1):
        raise ValueError(f"annulus needs 0 < r0 < r1, got r0={r0}, r1={r1}")
    if n_radial < 1 or n_angular < 3:
        raise ValueError(
            f"annulus needs n_radial >= 1, n_angular >= 3, got "
            f"({n_radial}, {n_angular})"
        )
    rs = np.linspace(r0, r1, n_radial + 1)
    th = 2.0 * np.pi * np.arange(n_angular) / n_angular
    R, T = np.meshgrid(rs, th, indexing="ij")
    vertices = np.column_stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()])

    def vid(i, j):
        return i * n_angular + (j % n_angular)

    tris = []
    for i in range(n_radial):
        for j in range(n_angular):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v11, v01 = vid(i + 1, j + 1), vid(i, j + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    return Mesh(vertices, np.array(tris))


def save_mesh(mesh, path):
    """Write a mesh to JSON (``vertices``/``triangles``/``boundary_markers``)."""
    obj = {
        "vertices": mesh.vertices.tolist(),
        "triangles": mesh.triangles.tolist(),
    }
    if mesh.boundary_markers:
        obj["boundary_markers"] = {str(k): int(v) for k, v in mesh.boundary_markers.items()}
    with open(path, "w") as fh:
        json.dump(obj, fh)


def load_mesh(path):
    """Read a mesh from the JSON format written by :func:`save_mesh`."""
    with open(path) as fh:
        obj = json.load(fh)
    for key in ("vertices", "triangles"):
        if key not in obj:
            raise ValueError(f"mesh file {path!r} is missing required key {key!r}")
    markers = obj.get("boundary_markers")
    if markers is not None:
        markers = {int(k): int(v) for k, v in markers.items()}
    return Mesh(obj["vertices"], obj["triangles"], boundary_markers=markers)


# ---------------------------------------------------------------------------
# Metric fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricField:
    """Riemannian metric on a chart.

    Two variants:

    * ``kind == "explicit"``: ``entries(x, y)`` returns the matrix entries
      ``(g11, g12, g22)`` for arrays of coordinates.
    * ``kind == "conformal"``: a positive ``factor(x, y)`` multiplying a
      ``base`` metric, i.e. g = c * g_base.  Keeping the factor symbolic (
      rather than folding it into explicit entries) lets conformal pairs
      share quadrature data exactly.

    Use :func:`flat_metric`, :func:`explicit_metric`,
    :func:`conformal_metric` to construct instances.
    """

    kind: str
    entries: Optional[Callable] = None
    base: Optional["MetricField"] = None
    factor: Optional[Callable] = None

    def __post_init__(self):
        if self.kind == "explicit":
            if self.entries is None:
                raise ValueError("explicit metric requires an entries callable")
        elif self.kind == "conformal":
            if self.base is None or self.factor is None:
                raise ValueError("conformal metric requires base and factor")
        else:
            raise ValueError(f"unknown metric kind {self.kind!r}")


def flat_metric():
    """The Euclidean metric."""
    return explicit_metric(
        lambda x, y: (np.ones_like(x), np.zeros_like(x), np.ones_like(x))
    )


def explicit_metric(entries):
    """Metric from a callable ``entries(x, y) -> (g11, g12, g22)``."""
    return MetricField(kind="explicit", entries=entries)


def conformal_metric(base, factor):
    """Metric c * g_base with a positive scalar ``factor(x, y)``."""
    return MetricField(kind="conformal", base=base, factor=factor)


def _metric_entries(metric, x, y):
    """Evaluate (g11, g12, g22) on coordinate arrays, resolving conformal nesting."""
    if metric.kind == "explicit":
        g11, g12, g22 = metric.entries(x, y)
        shape = np.shape(x)
        g11 = np.broadcast_to(np.asarray(g11, dtype=float), shape)
        g12 = np.broadcast_to(np.asarray(g12, dtype=float), shape)
        g22 = np.broadcast_to(np.asarray(g22, dtype=float), shape)
        return g11, g12, g22
    b11, b12, b22 = _metric_entries(metric.base, x, y)
    c = np.broadcast_to(np.asarray(metric.factor(x, y), dtype=float), np.shape(x))
    if np.any(c <= 0.0):
        k = np.unravel_index(int(np.argmin(c)), np.shape(c))
        raise ValueError(
            f"conformal factor must be positive; got {np.min(c):.3e} at "
            f"point ({np.asarray(x)[k]:.4g}, {np.asarray(y)[k]:.4g})"
        )
    return c * b11, c * b12, c * b22


def conformal_factor(metric, x, y):
    """Evaluate the conformal factor of a ``conformal`` metric on arrays."""
    if metric.kind != "conformal":
        raise ValueError("metric has no conformal factor (kind is not 'conformal')")
    return np.broadcast_to(np.asarray(metric.factor(x, y), dtype=float), np.shape(x))


def metric_eval(metric, point):
    """Evaluate the metric at one point as a 2x2 matrix.

    Raises
    ------
    ValueError
        If the matrix is not symmetric positive definite there.
    """
    x = np.asarray([float(point[0])])
    y = np.asarray([float(point[1])])
    g11, g12, g22 = _metric_entries(metric, x, y)
    g = np.array([[g11[0], g12[0]], [g12[0], g22[0]]])
    det = g[0, 0] * g[1, 1] - g[0, 1] ** 2
    if not (np.isfinite(g).all() and g[0, 0] > 0.0 and det > 0.0):
        raise ValueError(
            f"metric is not SPD at point ({point[0]:.4g}, {point[1]:.4g}): "
            f"g11={g[0, 0]:.4g}, det={det:.4g}"
        )
    return g


@dataclass(frozen=True)
class _MetricQuad:
    """Metric data at the volume quadrature points (each array (n_tri, 3))."""

    g11: np.ndarray
    g12: np.ndarray
    g22: np.ndarray
    det: np.ndarray
    sqrt_det: np.ndarray
    inv11: np.ndarray
    inv12: np.ndarray
    inv22: np.ndarray


def metric_at_quadrature(mesh, metric):
    """Evaluate metric entries, determinant, and inverse at quadrature points."""
    x = mesh.quad_points[..., 0]
    y = mesh.quad_points[..., 1]
    g11, g12, g22 = _metric_entries(metric, x, y)
    det = g11 * g22 - g12**2
    if not (np.all(np.isfinite(det)) and np.all(det > 0.0) and np.all(g11 > 0.0)):
        bad = np.unravel_index(int(np.argmin(det)), det.shape)
        raise ValueError(
            f"metric is not SPD at quadrature point {bad} "
            f"(x={x[bad]:.4g}, y={y[bad]:.4g}): g11={g11[bad]:.4g}, det={det[bad]:.4g}"
        )
    return _MetricQuad(
        g11=g11,
        g12=g12,
        g22=g22,
        det=det,
        sqrt_det=np.sqrt(det),
        inv11=g22 / det,
        inv12=-g12 / det,
        inv22=g11 / det,
    )


# ---------------------------------------------------------------------------
# Scalar fields and P1 calculus
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nodal P1 field on a mesh (real or complex values)."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.shape != (self.mesh.n_vertices,):
            raise ValueError(
                f"field has {values.shape} values for a mesh with "
                f"{self.mesh.n_vertices} vertices"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("field contains non-finite values")
        object.__setattr__(self, "values", values)


def nodal_values(mesh, field):
    """Coerce a ScalarField / nodal array / callable(x, y) to a nodal array."""
    if isinstance(field, ScalarField):
        if field.mesh is not mesh:
            raise ValueError("field is attached to a different mesh")
        return field.values
    if callable(field):
        vals = np.asarray(field(mesh.vertices[:, 0], mesh.vertices[:, 1]))
        return np.broadcast_to(vals, (mesh.n_vertices,)).copy()
    vals = np.asarray(field)
    if vals.shape != (mesh.n_vertices,):
        raise ValueError(
            f"expected {mesh.n_vertices} nodal values, got shape {vals.shape}"
        )
    return vals


def p1_gradients(mesh, values):
    """Euclidean gradient of the P1 interpolant, one constant vector per triangle."""
    v = np.asarray(values)[mesh.triangles]  # (nt, 3)
    return np.einsum("ti,tic->tc", v, mesh.hat_gradients)


def riemannian_gradient(mesh, metric, field):
    """Riemannian gradient g^{-1} grad(u) per triangle (metric at centroids)."""
    grad = p1_gradients(mesh, nodal_values(mesh, field))
    x, y = mesh.centroids[:, 0], mesh.centroids[:, 1]
    g11, g12, g22 = _metric_entries(metric, x, y)
    det = g11 * g22 - g12**2
    gx = (g22 * grad[:, 0] - g12 * grad[:, 1]) / det
    gy = (-g12 * grad[:, 0] + g11 * grad[:, 1]) / det
    return np.column_stack([gx, gy])


def inner_product(mesh, metric, field_u, field_v):
    """Per-triangle g(grad u, grad v) with the metric at centroids.

    Bilinear in both arguments (no conjugation for complex fields).
    """
    gu = p1_gradients(mesh, nodal_values(mesh, field_u))
    gv = p1_gradients(mesh, nodal_values(mesh, field_v))
    x, y = mesh.centroids[:, 0], mesh.centroids[:, 1]
    g11, g12, g22 = _metric_entries(metric, x, y)
    det = g11 * g22 - g12**2
    return (
        g22 * gu[:, 0] * gv[:, 0]
        - g12 * (gu[:, 0] * gv[:, 1] + gu[:, 1] * gv[:, 0])
        + g11 * gu[:, 1] * gv[:, 1]
    ) / det


def pair_at_quadrature(mesh, mq, grad_u, grad_v):
    """g(grad u, grad v) at quadrature points, (n_tri, 3).

    ``grad_u``/``grad_v`` are per-triangle Euclidean gradients (n_tri, 2);
    ``mq`` is the output of :func:`metric_at_quadrature`.  Bilinear (no
    conjugation).
    """
    return (
        mq.inv11 * (grad_u[:, 0] * grad_v[:, 0])[:, None]
        + mq.inv12 * (grad_u[:, 0] * grad_v[:, 1] + grad_u[:, 1] * grad_v[:, 0])[:, None]
        + mq.inv22 * (grad_u[:, 1] * grad_v[:, 1])[:, None]
    )


def interpolate_at_quadrature(mesh, values):
    """P1 interpolation of nodal values to the quadrature points, (n_tri, 3)."""
    v = np.asarray(values)[mesh.triangles]
    return np.einsum("qi,ti->tq", _QUAD_BARY, v)


def integrate_quadrature(mesh, mq, qvals):
    """Integrate a quadrature-point sampled function against dV_g."""
    w = (mesh.tri_areas[:, None] * _QUAD_WEIGHTS) * mq.sqrt_det
    return (w * qvals).sum()


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


def assemble_weighted_stiffness(mesh, metric, weights=None):
    """Assemble K_ij = integral of W * g(grad phi_i, grad phi_j) dV_g.

    Parameters
    ----------
    weights : None, (n_tri,) or (n_tri, 3) array
        Scalar weight W, per triangle or per quadrature point.  ``None``
        means W = 1 (the Laplace-Beltrami stiffness matrix).

    Returns
    -------
    scipy.sparse.csr_matrix, symmetric.
    """
    mq = metric_at_quadrature(mesh, metric)
    w = (mesh.tri_areas[:, None] * _QUAD_WEIGHTS) * mq.sqrt_det  # (nt, 3)
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        if weights.shape == (mesh.n_triangles,):
            w = w * weights[:, None]
        elif weights.shape == (mesh.n_triangles, 3):
            w = w * weights
        else:
            raise ValueError(
                f"weights must have shape ({mesh.n_triangles},) or "
                f"({mesh.n_triangles}, 3), got {weights.shape}"
            )
    hg = mesh.hat_gradients  # (nt, 3, 2)
    # pair[t, q, i, j] = g^{-1}(x_q)(grad phi_i, grad phi_j)
    pair = (
        mq.inv11[:, :, None, None] * hg[:, None, :, None, 0] * hg[:, None, None, :, 0]
        + mq.inv12[:, :, None, None]
        * (hg[:, None, :, None, 0] * hg[:, None, None, :, 1]
           + hg[:, None, :, None, 1] * hg[:, None, None, :, 0])
        + mq.inv22[:, :, None, None] * hg[:, None, :, None, 1] * hg[:, None, None, :, 1]
    )
    data = np.einsum("tq,tqij->tij", w, pair)
    rows = np.broadcast_to(mesh.triangles[:, :, None], data.shape)
    cols = np.broadcast_to(mesh.triangles[:, None, :], data.shape)
    K = sp.coo_matrix(
        (data.ravel(), (rows.ravel(), cols.ravel())),
        shape=(mesh.n_vertices, mesh.n_vertices),
    )
    return K.tocsr()


def assemble_mass(mesh, metric, lumped=False):
    """Assemble the mass matrix M_ij = integral of phi_i phi_j dV_g.

    With ``lumped=True`` returns the diagonal row-sum lumping as a 1D array.
    """
    mq = metric_at_quadrature(mesh, metric)
    w = (mesh.tri_areas[:, None] * _QUAD_WEIGHTS) * mq.sqrt_det  # (nt, 3)
    # phi_i(x_q) = _QUAD_BARY[q, i]
    data = np.einsum("tq,qi,qj->tij", w, _QUAD_BARY, _QUAD_BARY)
    rows = np.broadcast_to(mesh.triangles[:, :, None], data.shape)
    cols = np.broadcast_to(mesh.triangles[:, None, :], data.shape)
    M = sp.coo_matrix(
        (data.ravel(), (rows.ravel(), cols.ravel())),
        shape=(mesh.n_vertices, mesh.n_vertices),
    ).tocsr()
    if lumped:
        return np.asarray(M.sum(axis=1)).ravel()
    return M


# ---------------------------------------------------------------------------
# Boundary geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BoundaryGeometry:
    """g-orthonormal frame and measure on the mesh boundary.

    All per-vertex arrays follow the ``mesh.boundary_vertices`` ordering
    (loops concatenated, outer loop first).

    Attributes
    ----------
    vertex_indices : (n_b,) ndarray
        Global vertex index per boundary vertex.
    normal, tangent : (n_b, 2) ndarray
        Outward g-unit normal nu and forward g-unit tangent tau:
        g(nu, nu) = g(tau, tau) = 1 and g(nu, tau) = 0.
    ds : (n_b,) ndarray
        Lumped boundary measure dS_g (half the g-length of the two adjacent
        edges); sums to the total g-perimeter.
    arclength : (n_b,) ndarray
        Cumulative g-arclength, restarting at 0 on each loop.
    mass : csr_matrix (n_b, n_b)
        Consistent boundary mass matrix for dS_g pairings.
    loop_slices : list of slice
        Position of each loop inside the concatenated arrays.
    loop_lengths : list of float
        Total g-length per loop.
    """

    mesh: Mesh
    vertex_indices: np.ndarray
    normal: np.ndarray
    tangent: np.ndarray
    ds: np.ndarray
    arclength: np.ndarray
    mass: sp.csr_matrix
    loop_slices: list
    loop_lengths: list

    def integrate(self, values):
        """Lumped boundary integral of nodal values against dS_g."""
        return (self.ds * np.asarray(values)).sum()

    def pair(self, a, b):
        """Consistent pairing integral of (P1 traces) a * b dS_g (bilinear)."""
        return np.asarray(a) @ (self.mass @ np.asarray(b))

    def restrict(self, full_values):
        """Restrict a full nodal vector to the boundary ordering."""
        return np.asarray(full_values)[self.vertex_indices]


def boundary_geometry(mesh, metric):
    """Build the g-orthonormal boundary frame and boundary measure.

    The Euclidean forward tangent at a vertex averages the two adjacent
    edge directions; the outward normal is the raised Euclidean normal
    g^{-1} n (which is automatically g-orthogonal to the tangent), and both
    are normalized to unit g-length.  Edge g-lengths use two-point Gauss
    quadrature along each edge.
    """
    verts = mesh.vertices
    x = verts[:, 0]
    y = verts[:, 1]

    n_b = len(mesh.boundary_vertices)
    normal = np.empty((n_b, 2))
    tangent = np.empty((n_b, 2))
    ds = np.empty(n_b)
    arclength = np.empty(n_b)
    loop_slices = []
    loop_lengths = []

    rows, cols, vals = [], [], []
    pos = 0
    local_of = {}
    for loop in mesh.boundary_loops:
        m = len(loop)
        sl = slice(pos, pos + m)
        loop_slices.append(sl)
        for k, v in enumerate(loop):
            local_of[v] = pos + k

        p = verts[loop]
        nxt = np.roll(p, -1, axis=0)
        edge = nxt - p  # edge k: loop[k] -> loop[k+1]

        # g-length of each edge by 2-point Gauss.
        elen = np.zeros(m)
        for t, wq in zip(_EDGE_QUAD_T, _EDGE_QUAD_W):
            q = p + t * edge
            g11, g12, g22 = _metric_entries(metric, q[:, 0], q[:, 1])
            quad = g11 * edge[:, 0] ** 2 + 2 * g12 * edge[:, 0] * edge[:, 1] + g22 * edge[:, 1] ** 2
            elen += wq * np.sqrt(quad)

        # Vertex frame from averaged adjacent edge directions.
        unit = edge / np.linalg.norm(edge, axis=1)[:, None]
        t_avg = unit + np.roll(unit, 1, axis=0)  # prev edge is k-1
        n_euclid = np.column_stack([t_avg[:, 1], -t_avg[:, 0]])

        g11, g12, g22 = _metric_entries(metric, p[:, 0], p[:, 1])
        det = g11 * g22 - g12**2
        # tangent: normalize t_avg in g
        tnorm = np.sqrt(
            g11 * t_avg[:, 0] ** 2 + 2 * g12 * t_avg[:, 0] * t_avg[:, 1] + g22 * t_avg[:, 1] ** 2
        )
        tau = t_avg / tnorm[:, None]
        # normal: raise the Euclidean normal covector, then normalize in g
        nu = np.column_stack(
            [
                (g22 * n_euclid[:, 0] - g12 * n_euclid[:, 1]) / det,
                (-g12 * n_euclid[:, 0] + g11 * n_euclid[:, 1]) / det,
            ]
        )
        nnorm = np.sqrt(
            g11 * nu[:, 0] ** 2 + 2 * g12 * nu[:, 0] * nu[:, 1] + g22 * nu[:, 1] ** 2
        )
        nu = nu / nnorm[:, None]

        tangent[sl] = tau
        normal[sl] = nu
        ds[sl] = 0.5 * (elen + np.roll(elen, 1))
        arclength[sl] = np.concatenate([[0.0], np.cumsum(elen[:-1])])
        loop_lengths.append(float(elen.sum()))

        # Consistent boundary mass: per edge, elen * [[1/3, 1/6], [1/6, 1/3]].
        for k in range(m):
            a = pos + k
            b = pos + (k + 1) % m
            rows.extend([a, a, b, b])
            cols.extend([a, b, a, b])
            vals.extend([elen[k] / 3.0, elen[k] / 6.0, elen[k] / 6.0, elen[k] / 3.0])
        pos += m

    mass = sp.coo_matrix((vals, (rows, cols)), shape=(n_b, n_b)).tocsr()
    bg = BoundaryGeometry(
        mesh=mesh,
        vertex_indices=mesh.boundary_vertices.copy(),
        normal=normal,
        tangent=tangent,
        ds=ds,
        arclength=arclength,
        mass=mass,
        loop_slices=loop_slices,
        loop_lengths=loop_lengths,
    )
    _check_frame(bg, metric)
    return bg


def _check_frame(bg, metric, tol=1e-12):
    """Verify g-orthonormality of the boundary frame (construction invariant)."""
    p = bg.mesh.vertices[bg.vertex_indices]
    g11, g12, g22 = _metric_entries(metric, p[:, 0], p[:, 1])

    def form(a, b):
        return g11 * a[:, 0] * b[:, 0] + g12 * (a[:, 0] * b[:, 1] + a[:, 1] * b[:, 0]) + g22 * a[:, 1] * b[:, 1]

    err = max(
        np.abs(form(bg.normal, bg.normal) - 1.0).max(),
        np.abs(form(bg.tangent, bg.tangent) - 1.0).max(),
        np.abs(form(bg.normal, bg.tangent)).max(),
    )
    if err > tol:
        raise AssertionError(
            f"boundary frame failed g-orthonormality check: max error {err:.3e}"
        )


def boundary_values(mesh, data):
    """Evaluate boundary data as an array in ``boundary_vertices`` order.

    ``data`` may be a callable(x, y), a full nodal array/ScalarField, or an
    array already in boundary ordering.
    """
    bidx = mesh.boundary_vertices
    if isinstance(data, ScalarField):
        return data.values[bidx]
    if callable(data):
        p = mesh.vertices[bidx]
        vals = np.asarray(data(p[:, 0], p[:, 1]))
        return np.broadcast_to(vals, (len(bidx),)).copy()
    vals = np.asarray(data)
    if vals.shape == (mesh.n_vertices,):
        return vals[bidx]
    if vals.shape == (len(bidx),):
        return vals
    raise ValueError(
        f"boundary data has shape {vals.shape}; expected callable, "
        f"({mesh.n_vertices},) nodal array, or ({len(bidx)},) boundary array"
    )


def tangential_derivative(bg, values):
    """d(values)/ds_g along the boundary by centered differences per loop.

    ``values`` is in boundary ordering; second-order accurate on smooth
    loops with smoothly varying edge lengths.
    """
    values = np.asarray(values)
    out = np.empty_like(values)
    for sl, total in zip(bg.loop_slices, bg.loop_lengths):
        v = values[sl]
        s = bg.arclength[sl]
        fwd = np.roll(v, -1) - v
        ds_fwd = np.roll(s, -1) - s
        ds_fwd[-1] += total
        bwd = v - np.roll(v, 1)
        ds_bwd = s - np.roll(s, 1)
        ds_bwd[0] += total
        # centered difference on a nonuniform grid
        out[sl] = (ds_bwd * fwd / ds_fwd + ds_fwd * bwd / ds_bwd) / (ds_bwd + ds_fwd)
    return out


def lift_boundary(mesh, bvals, interior=0.0):
    """Full nodal vector with given boundary values and constant interior fill."""
    bvals = np.asarray(bvals)
    full = np.full(mesh.n_vertices, interior, dtype=np.result_type(bvals, float))
    full[mesh.boundary_vertices] = bvals
    return full
