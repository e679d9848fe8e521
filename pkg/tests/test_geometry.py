import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from regge_einstein import geometry as geo
from regge_einstein.fields import GraphMetric, Polynomial, PolynomialTensorField, euclidean, random_polynomial
from regge_einstein.functionals import angle_defect
from regge_einstein.harness import GraphMetric3D
from regge_einstein.mesh import SimplicialMesh, generate_box_mesh
from regge_einstein.regge import interpolate
from regge_einstein.samples import QuadSpec, mesh_samples
from regge_einstein.tensorcalc import Metric, S_map


def jet_of(field, x, order=2):
    return geo.MetricJet.from_tensor_jet(field.jet(None, x, order))


def flat_jet(P, N=3):
    return geo.MetricJet(np.broadcast_to(np.eye(N), (P, N, N)).copy(), np.zeros((P, N, N, N)),
                         np.zeros((P, N, N, N, N)))


def test_christoffel_flat():
    ch = geo.christoffel(flat_jet(4))
    assert np.all(ch.gam == 0) and np.all(ch.dgam == 0)


def test_christoffel_diagonal_example():
    # g = diag(1, (1 + x)^2) at x = 0
    g = np.eye(2)[None]
    dg = np.zeros((1, 2, 2, 2))
    dg[0, 0, 1, 1] = 2.0
    d2g = np.zeros((1, 2, 2, 2, 2))
    d2g[0, 0, 0, 1, 1] = 2.0
    gam = geo.christoffel(geo.MetricJet(g, dg, d2g)).gam[0]
    want = np.zeros((2, 2, 2))
    want[1, 0, 1] = want[1, 1, 0] = 1.0
    want[0, 1, 1] = -1.0
    assert np.allclose(gam, want)


def test_christoffel_fd_oracle(rng):
    f = random_polynomial(3, 3, rng, 0.4)
    g = GraphMetric(f)
    x = rng.uniform(-0.5, 0.5, (5, 3))
    ch = geo.christoffel(jet_of(g, x))
    h = 1e-5
    for l in range(3):
        e = np.zeros(3)
        e[l] = h
        fd = (geo.christoffel(jet_of(g, x + e)).gam - geo.christoffel(jet_of(g, x - e)).gam) / (2 * h)
        assert np.allclose(fd, ch.dgam[:, l], atol=1e-7)
    assert np.allclose(ch.gam, np.swapaxes(ch.gam, 2, 3))


def test_curvature_flat_and_2d():
    c = geo.curvature(flat_jet(3))
    assert np.all(c.riem == 0) and np.all(c.einstein == 0)
    x = Polynomial.coordinate
    g2 = GraphMetric(x(0, 2) ** 2 + x(1, 2) ** 2)
    c2 = geo.curvature(jet_of(g2, np.array([[0.0, 0.0], [0.3, -0.2]])))
    assert np.all(c2.einstein == 0)
    # paraboloid z = x^2 + y^2 has Gauss curvature 4 at the apex, R = 2K
    assert c2.scalar[0] == pytest.approx(8.0)


def test_curvature_conventions(rng):
    g = GraphMetric3D()
    x = rng.uniform(-1, 1, (20, 3))
    jet = jet_of(g, x)
    c = geo.curvature(jet)
    gi = np.linalg.inv(jet.g)
    assert np.allclose(np.einsum("pik,pijkl->pjl", gi, c.riem), c.ric, atol=1e-12)
    assert np.allclose(np.einsum("pjk,pijkl->pil", gi, c.riem), -c.ric, atol=1e-12)
    assert np.allclose(c.ric, np.swapaxes(c.ric, 1, 2))
    assert np.allclose(c.einstein, g.einstein(x), atol=1e-12)


def test_graph_metric_determinant(rng):
    x = rng.uniform(-1, 1, (1000, 3))
    g = GraphMetric3D()
    det = np.linalg.det(g.jet(None, x, 0).value)
    assert np.allclose(det * 9, 9 + np.sum(x**2 * (x**2 - 3) ** 2, axis=1), rtol=1e-12)
    assert np.allclose(det, g.det(x), rtol=1e-12)


def test_bianchi_identity(rng):
    x = rng.uniform(-1, 1, (50, 3))
    div = geo.einstein_divergence(jet_of(GraphMetric3D(), x, 3))
    assert np.max(np.abs(div)) < 1e-10
    with pytest.raises(ValueError):
        geo.einstein_divergence(jet_of(GraphMetric3D(), x, 2))


def _outward_covector(rng, P=6):
    return rng.standard_normal((P, 3))


def test_unit_normal_scaling(rng):
    N = _outward_covector(rng)
    unit = N / np.linalg.norm(N, axis=1)[:, None]
    I = Metric(np.broadcast_to(np.eye(3), (6, 3, 3)).copy())
    assert np.allclose(geo.g_unit_normal(I, N), unit)
    M4 = Metric(np.broadcast_to(4 * np.eye(3), (6, 3, 3)).copy())
    assert np.allclose(geo.g_unit_normal(M4, N), unit / 2)


def test_unit_normal_random_metric(rng):
    A = rng.standard_normal((6, 3, 3))
    g = A @ np.swapaxes(A, 1, 2) + np.eye(3)
    X = rng.standard_normal((6, 3, 2))
    # Euclidean covector annihilating the facet tangents, oriented by a chosen outward vector
    N = np.cross(X[:, :, 0], X[:, :, 1])
    n = geo.g_unit_normal(Metric(g), N)
    assert np.allclose(np.einsum("pi,pij,pj->p", n, g, n), 1.0)
    assert np.allclose(np.einsum("pi,pij,pja->pa", n, g, X), 0.0, atol=1e-12)
    assert np.all(np.einsum("pi,pi->p", n, N) > 0)
    # oracle: g-orthogonal complement of the tangents by least squares
    for p in range(6):
        B = np.linalg.svd((g[p] @ X[p]).T)[2][-1]
        B = B / math.sqrt(B @ g[p] @ B)
        assert np.allclose(abs(B @ g[p] @ n[p]), 1.0)


def test_dihedral_regular_tetrahedron():
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    m = SimplicialMesh(v, np.array([[0, 1, 2, 3]]))
    S = mesh_samples(m, QuadSpec(2, 2, 2)).ridge_cells
    I = np.broadcast_to(np.eye(3), (len(S.cells), 3, 3)).copy()
    n1 = geo.g_unit_normal(Metric(I), S.conormals[:, 0])
    n2 = geo.g_unit_normal(Metric(I), S.conormals[:, 1])
    th = geo.dihedral_angle(I, n1, n2)
    assert np.allclose(th, math.acos(1 / 3))
    assert np.allclose(geo.dihedral_angle(9 * I, n1 / 3, n2 / 3), th)


def test_angles_around_body_diagonal(cube0):
    th = angle_defect(euclidean(3), cube0)
    assert np.allclose(th[~cube0.topology.boundary_ridge], 0.0, atol=1e-12)


def _on_box_edge(mesh):
    v = mesh.vertices[mesh.topology.ridges]  # (R, 2, 3)
    both = np.abs(np.abs(v) - 1) < 1e-12
    return np.sum(np.all(both, axis=1), axis=1) >= 2


def test_flat_angle_defects(cube1):
    th = angle_defect(euclidean(3), cube1)
    corner = _on_box_edge(cube1)
    assert np.allclose(th[~corner], 0.0, atol=1e-12)
    assert np.allclose(th[corner], math.pi / 2)


def test_angle_defect_decays_for_lowest_order():
    g = GraphMetric3D()
    worst = []
    for k in (2, 3):
        m = generate_box_mesh(3, k)
        th = angle_defect(interpolate(g, m, 0), m)
        worst.append(np.max(np.abs(th[~m.topology.boundary_ridge])))
    assert worst[0] / worst[1] > 1.5


def test_conormal_properties(rng):
    A = rng.standard_normal((8, 3, 3))
    g = A @ np.swapaxes(A, 1, 2) + np.eye(3)
    XS = rng.standard_normal((8, 3, 1))
    w = rng.standard_normal((8, 3))
    nu = geo.conormal_nu(g, XS, w)
    assert np.allclose(np.einsum("pi,pij,pj->p", nu, g, nu), 1.0)
    assert np.allclose(np.einsum("pi,pij,pja->pa", nu, g, XS), 0.0, atol=1e-12)
    # tangent to span(XS, w) with positive w-component
    for p in range(8):
        M = np.column_stack([XS[p, :, 0], w[p]])
        c = np.linalg.lstsq(M, nu[p], rcond=None)[0]
        assert np.allclose(M @ c, nu[p]) and c[1] > 0
    I = np.broadcast_to(np.eye(3), (1, 3, 3))
    right = geo.conormal_nu(I, np.array([[[0.0], [0.0], [1.0]]]), np.array([[2.0, 0.0, 0.5]]))
    assert np.allclose(right, [[1.0, 0.0, 0.0]])


def _ein_sympy(rho, xs):
    N = len(xs)
    tr = sum(rho[i, i] for i in range(N))
    J = rho - sp.Rational(1, 2) * tr * sp.eye(N)
    div = [sum(sp.diff(J[a, j], xs[a]) for a in range(N)) for j in range(N)]
    df = sp.Matrix(N, N, lambda i, j: (sp.diff(div[j], xs[i]) + sp.diff(div[i], xs[j])) / 2)
    lap = sp.Matrix(N, N, lambda i, j: sum(sp.diff(rho[i, j], xs[a], 2) for a in range(N)))
    M = df - lap / 2
    trM = sum(M[i, i] for i in range(N))
    return M - sp.Rational(1, 2) * trM * sp.eye(N)


def _euclid_ein(field, x):
    P = x.shape[0]
    jet = flat_jet(P)
    ch = geo.christoffel(jet)
    tj = field.jet(None, x, 2)
    nn = geo.second_covariant_derivative(tj.value, tj.d1, tj.d2, ch)
    return geo.ein_operator(nn, ch.metric)


def test_ein_matches_symbolic_oracle(rng):
    xs = sp.symbols("x0:3")
    X = Polynomial.coordinate
    cases = [
        (PolynomialTensorField.from_scalar_times(X(0, 3) ** 2, np.diag([1.0, 0, 0])),
         sp.Matrix(3, 3, lambda i, j: xs[0] ** 2 if i == j == 0 else 0)),
    ]
    p = random_polynomial(3, 3, rng)
    expr = sum(c * sp.Mul(*[xs[i] ** e[i] for i in range(3)]) for e, c in zip(p.exps, p.coefs))
    E = np.zeros((3, 3))
    E[0, 1] = E[1, 0] = 1.0
    cases.append((PolynomialTensorField.from_scalar_times(p, E), sp.Matrix(3, 3, lambda i, j: expr * E[i, j])))
    x = rng.uniform(-1, 1, (7, 3))
    for field, sym_rho in cases:
        ein = sp.lambdify(xs, _ein_sympy(sym_rho, xs), "numpy")
        want = np.stack([np.array(ein(*pt), dtype=float) for pt in x])
        assert np.allclose(_euclid_ein(field, x), want, atol=1e-11)


def test_ein_of_scalar_multiple_of_identity(rng):
    p = random_polynomial(3, 3, rng)
    field = PolynomialTensorField.from_scalar_times(p, np.eye(3))
    x = rng.uniform(-1, 1, (9, 3))
    H = np.stack([[p.diff(i).diff(j)(x) for j in range(3)] for i in range(3)]).transpose(2, 0, 1)
    want = -(3 - 2) / 2 * S_map(H, np.eye(3))
    assert np.allclose(_euclid_ein(field, x), want, atol=1e-11)


def test_ein_annihilates_metric(rng):
    g = GraphMetric3D()
    x = rng.uniform(-1, 1, (10, 3))
    jet = jet_of(g, x)
    ch = geo.christoffel(jet)
    tj = g.jet(None, x, 2)
    nn = geo.second_covariant_derivative(tj.value, tj.d1, tj.d2, ch)
    assert np.max(np.abs(nn)) < 1e-12
    assert np.max(np.abs(geo.ein_operator(nn, ch.metric))) < 1e-12


@given(st.floats(0.2, 5.0))
def test_dihedral_conformal_invariance(c):
    rng = np.random.default_rng(0)
    A = rng.standard_normal((4, 3, 3))
    g = A @ np.swapaxes(A, 1, 2) + np.eye(3)
    N1, N2 = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    t1 = geo.dihedral_angle(g, geo.g_unit_normal(Metric(g), N1), geo.g_unit_normal(Metric(g), N2))
    gc = c * c * g
    t2 = geo.dihedral_angle(gc, geo.g_unit_normal(Metric(gc), N1), geo.g_unit_normal(Metric(gc), N2))
    assert np.allclose(t1, t2, atol=1e-12)


def test_surface_stokes_on_curved_facet(rng):
    """int_F div_F a = int_dF a(nu) + int_F H a(n) for an ambient one-form a."""
    from regge_einstein.polyquad import GaussLegendre01, simplex_rule
    g = GraphMetric3D()
    V = np.array([[0.1, -0.2, 0.3], [0.9, 0.0, 0.2], [0.2, 0.8, -0.1], [0.0, 0.1, 0.9]])
    F = V[:3]
    X = np.stack([F[1] - F[0], F[2] - F[0]], axis=1)
    N = np.cross(X[:, 0], X[:, 1])
    N = N if N @ (V[3] - F[0]) < 0 else -N
    alpha = [random_polynomial(3, 2, rng) for _ in range(3)]

    def a_val(x):
        return np.stack([p(x) for p in alpha], axis=1)

    def a_grad(x):
        return np.stack([np.stack([p.diff(l)(x) for p in alpha], axis=1) for l in range(3)], axis=1)

    rule = simplex_rule(2, 20)
    x = rule.points @ F
    P = len(x)
    jet = jet_of(g, x, 1)
    ch = geo.christoffel(jet, order=0)
    m = Metric(jet.g)
    XX = np.broadcast_to(X, (P, 3, 2))
    gF = Metric(np.swapaxes(XX, 1, 2) @ jet.g @ XX)
    nab = a_grad(x) - np.einsum("pkab,pk->pab", ch.gam, a_val(x))  # nabla_a alpha_b
    divF = np.einsum("pcd,pac,pbd,pab->p", gF.inv, XX, XX, nab)
    n = geo.g_unit_normal(m, np.broadcast_to(N, (P, 3)))
    H = geo.mean_curvature(geo.second_fundamental_form(ch.gam, jet.g, n, XX), gF)
    w = rule.weights * gF.sqrt_det
    lhs = np.sum(w * divF)
    normal_term = np.sum(w * H * np.einsum("pi,pi->p", a_val(x), n))

    gl = GaussLegendre01(20)
    edge_term = 0.0
    for i, j, k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        E = F[j] - F[i]
        xe = F[i] + gl.points[:, None] * E
        ge = g.jet(None, xe, 0).value
        # outward conormal by Gram-Schmidt of (edge vertex - opposite vertex) against E
        u = F[i] - F[k]
        u = u - (np.einsum("i,pij,j->p", u, ge, E) / np.einsum("i,pij,j->p", E, ge, E))[:, None] * E
        nu = u / np.sqrt(np.einsum("pi,pij,pj->p", u, ge, u))[:, None]
        a_nu = np.einsum("pi,pi->p", a_val(xe), nu)
        edge_term += np.sum(gl.weights * a_nu * np.sqrt(np.einsum("i,pij,j->p", E, ge, E)))
    assert abs(normal_term) > 1e-3
    assert abs(lhs - edge_term - normal_term) <= 1e-8 * max(1.0, abs(lhs))


def test_conormal_single_valued_for_tt_continuous_metric(pcube1):
    gh = interpolate(GraphMetric3D(), pcube1, 1)
    top = pcube1.topology
    inner = np.nonzero(~top.boundary_facet)[0][:40]
    for f in inner:
        c0, c1 = top.facet_cells[f]
        v = pcube1.vertices[top.facets[f]]
        XS = (v[1] - v[0])[None, :, None]
        w = (v[2] - v[0])[None]
        x = (0.3 * v[0] + 0.7 * v[1])[None]
        nus = [geo.conormal_nu(gh.jet(np.array([c]), x, 0).value, XS, w) for c in (c0, c1)]
        assert np.allclose(nus[0], nus[1], atol=1e-12)


def test_arccos_clamp_stays_negligible(pcube1):
    for r in (0, 1):
        angle_defect(interpolate(GraphMetric3D(), pcube1, r), pcube1)
    angle_defect(euclidean(3), pcube1)
    assert geo._CLAMP_WORST[0] <= 1e-12
