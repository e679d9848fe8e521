import math

import numpy as np
import pytest
import scipy.sparse as sps
import sympy as sp

from regge_einstein import dualnorm as dn
from regge_einstein.fields import ConstantScalar, Polynomial, PolynomialScalarField
from regge_einstein.functionals import TensorDensity, direct_error_density
from regge_einstein.harness import GraphMetric3D
from regge_einstein.mesh import generate_box_mesh
from regge_einstein.polyquad import simplex_rule
from regge_einstein.regge import interpolate
from regge_einstein.samples import QuadSpec


def test_solve_identity():
    b = np.arange(5.0)
    x, info = dn.solve_spd(sps.identity(5), b)
    assert np.allclose(x, b) and info["method"] == "direct"


def test_solve_two_by_two():
    x, _ = dn.solve_spd(sps.csr_matrix([[2.0, 1.0], [1.0, 2.0]]), np.array([1.0, 0.0]))
    assert np.allclose(x, [2 / 3, -1 / 3], atol=1e-14)


def _random_spd(rng, n=100):
    A = rng.standard_normal((n, n))
    return A @ A.T + n * np.eye(n)


def test_solve_random_spd(rng):
    A = _random_spd(rng)
    B = rng.standard_normal((100, 3))
    X, info = dn.solve_spd(sps.csr_matrix(A), B)
    assert np.allclose(X, np.linalg.solve(A, B), rtol=1e-10, atol=1e-12)
    assert max(info["backward_errors"]) <= 1e-10


def test_iterative_path(rng, monkeypatch):
    monkeypatch.setattr(dn, "DIRECT_LIMIT", 10)
    A = _random_spd(rng)
    b = rng.standard_normal(100)
    x, info = dn.solve_spd(sps.csr_matrix(A), b, tol=1e-12)
    assert info["method"] == "pcg-jacobi"
    assert np.allclose(x, np.linalg.solve(A, b), rtol=1e-8)


def test_singular_matrix_reported():
    with pytest.raises(dn.SolverError):
        dn.solve_spd(sps.csr_matrix(np.zeros((3, 3))), np.ones(3))


def _lagrange_count(mesh, p):
    top = mesh.topology
    return sum(top.count(d) * math.comb(p - 1, d) for d in range(mesh.dim + 1))


@pytest.mark.parametrize("p", [2, 3, 4])
def test_lagrange_space_size(cube1, p):
    assert dn.LagrangeSpace(cube1, p).ndof == _lagrange_count(cube1, p)


def test_lagrange_order_validated(cube0):
    with pytest.raises(ValueError):
        dn.LagrangeSpace(cube0, 1)


def test_partition_of_unity(cube1):
    space = dn.LagrangeSpace(cube1, 3)
    loads = dn.apply_functional_to_basis(dn.scalar_volume_density(ConstantScalar(1.0, 3), cube1, 4), space)
    assert loads.sum() == pytest.approx(8.0, rel=1e-13)


def test_system_symmetric_positive(cube1):
    mats = dn.assemble_biharmonic(cube1, 2)
    S = mats.system
    assert abs(S - S.T).max() < 1e-10 * abs(S).max()
    free = ~dn.LagrangeSpace(cube1, 2).boundary
    ev = np.linalg.eigvalsh(S[free][:, free].toarray())
    assert ev[0] > 0


def _to_poly(expr, xs):
    P = sp.Poly(expr, *xs)
    return Polynomial(np.array(P.monoms()), np.array([float(c) for c in P.coeffs()]), len(xs))


def test_manufactured_biharmonic_2d():
    x, y = sp.symbols("x y")
    phi = (1 - x**2) ** 2 * (1 - y**2) ** 2
    lap2 = sp.expand(sp.diff(phi, x, 4) + 2 * sp.diff(phi, x, 2, y, 2) + sp.diff(phi, y, 4))
    f = PolynomialScalarField(_to_poly(lap2, (x, y)))
    exact = _to_poly(sp.expand(phi), (x, y))
    errs = []
    for k in (2, 3):
        m = generate_box_mesh(2, k)
        S = dn.BiharmonicSolver(m, 3)
        u, _ = S.solve(dn.apply_functional_to_basis(dn.scalar_volume_density(f, m, 12), S.space))
        rule = simplex_rule(2, 10)
        X = np.einsum("qk,ckn->cqn", rule.points, m.vertices[m.cells]).reshape(-1, 2)
        c = np.repeat(np.arange(m.n_cells), len(rule.weights))
        w = (np.abs(np.linalg.det(m.cell_jacobians))[:, None] * rule.weights).ravel()
        val = np.einsum("pj,pj->p", S.space.jets(c, X, 0)[0], u[S.space.l2g[c]])
        errs.append(math.sqrt(np.sum(w * (val - exact(X)) ** 2)))
    assert errs[0] / errs[1] > 6.0
    # exact norm sqrt(|phi|_0^2 + |phi|_1^2 + |phi|_2^2), integrated symbolically
    assert S.h2_norms(u)[0] == pytest.approx(7.623786885808241, rel=0.02)


@pytest.fixture(scope="module")
def error_density(cube1):
    g = GraphMetric3D()
    return direct_error_density(g, interpolate(g, cube1, 0), cube1, QuadSpec.for_order(0))


def test_zero_functional(cube1):
    rep = dn.hminus2_norm(TensorDensity(3), cube1, 0)
    assert rep.combined == 0.0 and len(rep.component_norms) == 6


def test_homogeneous(cube1, error_density):
    solver = dn.BiharmonicSolver(cube1, 2)
    a = dn.hminus2_norm(error_density, cube1, 0, solver=solver)
    b = dn.hminus2_norm(error_density.scaled(-3.0), cube1, 0, solver=solver)
    assert b.combined == pytest.approx(3.0 * a.combined, rel=1e-10)
    assert a.combined > 0 and a.order == 2 and a.penalty == 40.0
    d = a.to_dict()
    assert d["solver"]["method"] == "direct" and max(d["solver"]["backward_errors"]) <= 1e-10
