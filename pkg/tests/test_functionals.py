import numpy as np
import pytest

from regge_einstein import functionals as fn
from regge_einstein.fields import (ConstantTensor, LinearCombination, PolynomialScalarField, bump, euclidean,
                                   random_tensor_field)
from regge_einstein.harness import GraphMetric3D, fixed_test_fields
from regge_einstein.regge import interpolate
from regge_einstein.samples import QuadSpec


def test_flat_metric_has_no_interior_curvature(pcube1, rng):
    rho = random_tensor_field(3, 2, rng, compact=True)
    rep = fn.pair_einstein_dist(euclidean(3), rho, pcube1)
    assert max(abs(rep.volume_part), abs(rep.facet_part), abs(rep.ridge_part)) < 1e-12


def test_flat_boundary_edges_carry_defects(cube1, rng):
    # box edges have dihedral pi/2 and m_S = 1, so the ridge part survives without compact support
    rho = ConstantTensor(np.eye(3))
    rep = fn.pair_einstein_dist(euclidean(3), rho, cube1, interior_only=False)
    assert rep.volume_part == 0.0
    assert abs(rep.ridge_part) > 1.0


def test_smooth_metric_jumps_cancel(pcube1, rng):
    # each side contributes with its own outward normal; for a smooth metric they cancel
    g = GraphMetric3D()
    rho = random_tensor_field(3, 1, rng, compact=True)
    quad = QuadSpec.for_order(2)
    rep = fn.pair_einstein_dist(g, rho, pcube1, quad)
    assert abs(rep.facet_part) < 1e-11
    assert abs(rep.ridge_part) < 1e-11
    assert rep.volume_part == pytest.approx(fn.pair_classical(g, rho, pcube1, quad), rel=1e-13)


def test_one_sided_facet_terms_do_not_cancel(pcube1):
    g = GraphMetric3D()
    rho = fixed_test_fields(3)[0]
    dens = fn.einstein_density(g, pcube1, QuadSpec.for_order(1))
    cells, x, M = dens.arrays("facet")
    w = np.einsum("pij,pij->p", M, rho.jet(cells, x, 0).value)
    # sides come in matching pairs whose contributions are opposite
    assert np.sum(np.abs(w)) > 1e3 * abs(np.sum(w))


def test_linear_in_test_field(pcube1, rng):
    gh = interpolate(GraphMetric3D(), pcube1, 1)
    r1, r2 = random_tensor_field(3, 1, rng, compact=True), random_tensor_field(3, 2, rng, compact=True)
    dens = fn.einstein_density(gh, pcube1, QuadSpec.for_order(1), interior_only=True)
    combo = LinearCombination([(2.0, r1), (-0.5, r2)])
    assert dens.apply(combo).total == pytest.approx(2.0 * dens.apply(r1).total - 0.5 * dens.apply(r2).total,
                                                    rel=1e-12, abs=1e-14)


def test_scalar_functional_of_smooth_metric(pcube1):
    g = GraphMetric3D()
    v = PolynomialScalarField(bump(3), compact_support=True)
    quad = QuadSpec.for_order(2)
    rep = fn.pair_scalar_dist(g, v, pcube1, quad)
    assert abs(rep.facet_part) < 1e-11 and abs(rep.ridge_part) < 1e-11
    assert rep.volume_part > 0


@pytest.fixture(scope="module")
def err_setup(pcube1):
    g = GraphMetric3D()
    return g, interpolate(g, pcube1, 1), fixed_test_fields(3)[:3]


def test_error_representation_matches_direct_difference(err_setup, pcube1):
    g, gh, fields = err_setup
    quad = QuadSpec.for_order(1)
    for rho in fields:
        direct = fn.pair_einstein_dist(gh, rho, pcube1, quad).total - fn.pair_classical(g, rho, pcube1, quad)
        e5 = fn.error_pairing(g, gh, rho, pcube1, 5, quad)
        e7 = fn.error_pairing(g, gh, rho, pcube1, 7, quad)
        assert abs(e5 - direct) <= 1e-7 * abs(direct)
        assert abs(e5 - e7) <= 1e-7 * abs(direct)


def test_gauss_count_validated(err_setup, pcube1):
    g, gh, fields = err_setup
    with pytest.raises(ValueError):
        fn.error_pairing(g, gh, fields[0], pcube1, 6)


def test_codim2_split(err_setup, pcube1):
    g, gh, fields = err_setup
    d = fn.codim2_densities(g, gh, pcube1, 5, QuadSpec.for_order(1))
    for rho in fields:
        f1, f2 = d.F1.apply(rho).total, d.F2.apply(rho).total
        assert d.F3.apply(rho).total == pytest.approx(f1 + f2, rel=1e-12, abs=1e-15)
        assert fn.codim2_functionals(g, gh, rho, pcube1, 5, QuadSpec.for_order(1))[2] == pytest.approx(f1 + f2)
        assert d.F1.apply(rho).volume_part == 0.0 and d.F2.apply(rho).facet_part == 0.0


def test_codim2_vanish_when_interpolation_is_exact(pcube1):
    g = euclidean(3)
    gh = interpolate(g, pcube1, 0)
    rho = fixed_test_fields(3)[1]
    assert max(abs(v) for v in fn.codim2_functionals(g, gh, rho, pcube1)) < 1e-13
    assert abs(fn.error_pairing(g, gh, rho, pcube1)) < 1e-13


def test_interior_only_requires_compact_support(cube1):
    with pytest.raises(ValueError):
        fn.pair_einstein_dist(euclidean(3), ConstantTensor(np.eye(3)), cube1, interior_only=True)


def test_indefinite_metric_names_the_cell(cube1):
    bad = ConstantTensor(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(fn.SPDError, match="cell"):
        fn.pair_einstein_dist(bad, fixed_test_fields(3)[0], cube1)


def test_euclidean_ein_pairing_symmetric(cube1, rng):
    a, b = random_tensor_field(3, 2, rng, compact=True), random_tensor_field(3, 2, rng, compact=True)
    quad = QuadSpec(26, 26, 26)  # sigma has degree 14, ein(rho) degree 12
    ab = fn.euclidean_ein_pairing(a, b, cube1, quad)
    ba = fn.euclidean_ein_pairing(b, a, cube1, quad)
    assert ab == pytest.approx(ba, rel=1e-10)
