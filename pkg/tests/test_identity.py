"""Tests for the third-order integral identity and the weighted functional."""

import numpy as np
import pytest

from minsurf import geometry as geo
from minsurf import forward as fwd
from minsurf import identity as idn

FLAT = geo.flat_metric()
CURVED = geo.explicit_metric(
    lambda x, y: (1.0 + 0.3 * x * x, 0.1 * x * y, 1.0 + 0.2 * y * y)
)

DIRS = [
    lambda x, y: x,
    lambda x, y: y,
    lambda x, y: x * y,
    lambda x, y: x * x - y * y,
]


def interior_bump(x, y, r0=0.7):
    # smooth, compactly supported inside r < r0, identically zero beyond
    r2 = (x * x + y * y) / (r0 * r0)
    out = np.zeros_like(np.asarray(r2, dtype=float))
    inside = r2 < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return out


def test_q_functional_flat_identity_data_gives_three_areas():
    # all four fields x on the flat unit square: every pairing is 1, the
    # symmetric combination is 3, and the weighted integral is 3 * area
    mesh = geo.square(8)
    x = mesh.vertices[:, 0]
    val = idn.q_functional(mesh, FLAT, None, x, x, x, x)
    assert abs(val - 3.0) < 1e-13


def test_q_functional_symmetric_under_field_permutations():
    mesh = geo.disc(8, 48)
    rng = np.random.default_rng(11)
    fields = [rng.standard_normal(len(mesh.vertices)) for _ in range(4)]
    base = idn.q_functional(mesh, CURVED, None, *fields)
    for perm in [(1, 0, 2, 3), (0, 2, 1, 3), (3, 1, 2, 0), (2, 3, 0, 1)]:
        permuted = idn.q_functional(mesh, CURVED, None, *[fields[p] for p in perm])
        assert abs(permuted - base) < 1e-12 * max(1.0, abs(base))


def test_q_functional_is_bilinear_in_complex_fields():
    # grad(x + iy) pairs to zero with itself under the bilinear (unconjugated)
    # pairing, while grad(x + iy) . grad(x - iy) = 2
    mesh = geo.square(6)
    z = mesh.vertices[:, 0] + 1j * mesh.vertices[:, 1]
    zbar = np.conj(z)
    assert abs(idn.q_functional(mesh, FLAT, None, z, z, z, z)) < 1e-13
    val = idn.q_functional(mesh, FLAT, None, z, z, zbar, zbar)
    assert abs(val - 8.0) < 1e-13


def test_q_functional_weight_coercion_agrees_for_linear_weight():
    # a linear weight is interpolated exactly, so callable and nodal forms match
    mesh = geo.disc(8, 48)
    q_call = lambda x, y: 1.0 + 0.3 * x + 0.1 * y
    q_nodal = q_call(mesh.vertices[:, 0], mesh.vertices[:, 1])
    fields = [mesh.vertices[:, 0], mesh.vertices[:, 1]] * 2
    a = idn.q_functional(mesh, CURVED, q_call, *fields)
    b = idn.q_functional(mesh, CURVED, q_nodal, *fields)
    c = idn.q_functional(mesh, CURVED, geo.ScalarField(mesh, q_nodal), *fields)
    assert abs(a - b) < 1e-13 * abs(a)
    assert abs(a - c) < 1e-13 * abs(a)


def test_identity_holds_on_curved_disc():
    mesh = geo.disc(16, 96)
    rep = idn.integral_identity_check(mesh, CURVED, DIRS)
    assert rep.t2 == 0.0  # w vanishes on the boundary, the pairing is exact
    assert abs(rep.rhs) > 1e-3  # non-degenerate configuration
    assert rep.relative_residual < 6e-3
    # report is self-consistent
    assert rep.residual == rep.lhs - rep.rhs
    assert rep.h == mesh.h
    assert rep.h_eps == pytest.approx(0.25 * mesh.h)


def test_identity_residual_contracts_under_refinement():
    rels = []
    for n_r, n_a in [(16, 96), (32, 192)]:
        rep = idn.integral_identity_check(geo.disc(n_r, n_a), CURVED, DIRS)
        rels.append(rep.relative_residual)
    # with h_eps scaled proportionally to h both error sources are O(h^2)
    assert rels[1] < rels[0] / 3.0


def test_dn_difference_matches_weighted_functional_for_conformal_pair():
    mesh = geo.disc(16, 96)
    c_fun = lambda x, y: 1.0 + 0.5 * interior_bump(x, y)
    cg = geo.conformal_metric(FLAT, c_fun)
    weight = lambda x, y: 1.0 - 1.0 / c_fun(x, y)

    fx = lambda x, y: x
    fy = lambda x, y: y
    dirs = [fx, fx, fy, fy]
    diff = idn.dn_difference_functional(mesh, FLAT, cg, dirs)

    opts = fwd.SolveOptions(tol=1e-13)
    vs = [fwd.solve_laplace_beltrami(mesh, FLAT, f, opts).values for f in dirs]
    target = idn.q_functional(mesh, FLAT, weight, *vs)
    assert abs(target) > 0.1  # non-degenerate direction set
    assert abs(diff - target) < 5e-3 * abs(target)


def test_identity_functions_validate_direction_count():
    mesh = geo.disc(6, 36)
    with pytest.raises(ValueError, match="four directions"):
        idn.integral_identity_check(mesh, FLAT, DIRS[:3])
    with pytest.raises(ValueError, match="four directions"):
        idn.dn_difference_functional(mesh, FLAT, FLAT, DIRS + DIRS[:1])
