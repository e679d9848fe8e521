import json
import math

import numpy as np
import pytest

from regge_einstein.fields import euclidean, random_tensor_field
from regge_einstein.harness import GraphMetric3D
from regge_einstein.mesh import generate_box_mesh
from regge_einstein.regge import (ReggeMetric, convex_combination, count_dofs, dofs_per_entity, eval_metric_jet,
                                  interpolate, layout)
from regge_einstein.samples import QuadSpec, mesh_samples


@pytest.mark.parametrize("r,expected", [(0, (0, 1, 0, 0)), (1, (0, 2, 3, 0)), (2, (0, 3, 9, 6))])
def test_dofs_per_entity(r, expected):
    assert tuple(dofs_per_entity(d, r) for d in range(4)) == expected


@pytest.mark.parametrize("r", [0, 1, 2, 3])
def test_single_cell_dofs_span_full_space(r):
    m = generate_box_mesh(3, 0)
    per_cell = sum(math.comb(4, d + 1) * dofs_per_entity(d, r) for d in range(4))
    assert per_cell == 6 * math.comb(r + 3, 3)
    assert layout(m, r).per_entity == tuple(dofs_per_entity(d, r) for d in range(4))


@pytest.mark.parametrize("k,r,n", [(0, 0, 19), (0, 1, 92), (1, 0, 98), (1, 1, 556)])
def test_global_dof_counts(k, r, n):
    assert count_dofs(generate_box_mesh(3, k), r) == n


@pytest.mark.parametrize("r", [0, 1, 2])
def test_reproduces_polynomials(r, pcube1, rng):
    f = random_tensor_field(3, r, rng)
    gh = interpolate(f, pcube1, r)
    vs = mesh_samples(pcube1, QuadSpec.for_order(r)).volume
    a, b = gh.jet(vs.cells, vs.x, 2), f.jet(vs.cells, vs.x, 2)
    assert np.max(np.abs(a.value - b.value)) < 1e-11
    assert np.max(np.abs(a.d1 - b.d1)) < 1e-9


def _facet_jumps(gh, mesh):
    fs = mesh_samples(mesh, QuadSpec(4, 4, 4)).facet_sides
    inner = ~fs.boundary
    fid, cells, x, X = fs.facet[inner], fs.cells[inner], fs.x[inner], fs.X[inner]
    # sides come sorted by facet; pair them up
    order = np.lexsort((cells, fid, x[:, 2], x[:, 1], x[:, 0]))
    a, b = order[0::2], order[1::2]
    assert np.all(fid[a] == fid[b]) and np.allclose(x[a], x[b])
    ga = gh.jet(cells[a], x[a], 0).value
    gb = gh.jet(cells[b], x[b], 0).value
    tt = np.einsum("pia,pij,pjb->pab", X[a], ga - gb, X[a])
    n = np.cross(X[a][:, :, 0], X[a][:, :, 1])
    nn = np.einsum("pi,pij,pj->p", n, ga - gb, n)
    return tt, nn


@pytest.mark.parametrize("r", [0, 1, 2])
def test_tangential_continuity(r, pcube1):
    tt, nn = _facet_jumps(interpolate(GraphMetric3D(), pcube1, r), pcube1)
    assert np.max(np.abs(tt)) < 1e-11
    if r == 0:
        assert np.max(np.abs(nn)) > 1e-3


@pytest.mark.parametrize("r,rate", [(0, 2.0), (1, 4.0)])
def test_interpolation_error_rate(r, rate):
    # L2 error O(h^(r+1)); compared between levels 2 and 3 to stay asymptotic
    g = GraphMetric3D()
    errs = []
    for k in (2, 3):
        m = generate_box_mesh(3, k)
        vs = mesh_samples(m, QuadSpec(6, 6, 6)).volume
        d = interpolate(g, m, r).jet(vs.cells, vs.x, 0).value - g.jet(vs.cells, vs.x, 0).value
        errs.append(math.sqrt(np.sum(vs.w * np.sum(d * d, axis=(1, 2)))))
    assert errs[0] / errs[1] == pytest.approx(rate, rel=0.15)


def test_derivative_jets_match_differences(pcube1):
    gh = interpolate(GraphMetric3D(), pcube1, 2)
    cells = np.arange(5)
    x = pcube1.vertices[pcube1.cells[cells]].mean(axis=1)
    jet = gh.jet(cells, x, 2)
    h = 1e-6
    for l in range(3):
        e = np.zeros(3)
        e[l] = h
        fd = (gh.jet(cells, x + e, 1).d1 - gh.jet(cells, x - e, 1).d1) / (2 * h)
        assert np.allclose(fd, jet.d2[:, l], atol=1e-6)
    mj = eval_metric_jet(gh, cells, x)
    assert np.allclose(mj.g, jet.value)


def test_from_dofs_roundtrip(cube1, tmp_path):
    gh = interpolate(GraphMetric3D(), cube1, 1)
    again = ReggeMetric.from_dofs(cube1, 1, gh.dofs)
    assert np.allclose(again.coeffs, gh.coeffs, atol=1e-12)
    path = tmp_path / "gh.json"
    gh.dump(path)
    data = json.loads(path.read_text())
    assert data["ndof"] == 556 and data["degree"] == 1
    assert np.allclose(np.array(data["coefficients"]), gh.coeffs)


def test_unsupported_degree(cube0):
    with pytest.raises(ValueError):
        interpolate(euclidean(3), cube0, 7)


def test_convex_combination_endpoints(cube1):
    g = GraphMetric3D()
    gh = interpolate(g, cube1, 0)
    cells = np.arange(cube1.n_cells)
    x = cube1.vertices[cube1.cells].mean(axis=1)
    assert np.allclose(convex_combination(g, gh, 0.0).jet(cells, x, 1).value, g.jet(cells, x, 1).value)
    assert np.allclose(convex_combination(g, gh, 1.0).jet(cells, x, 1).value, gh.jet(cells, x, 1).value)
    mid = convex_combination(g, gh, 0.25).jet(cells, x, 1).d1
    assert np.allclose(mid, 0.75 * g.jet(cells, x, 1).d1 + 0.25 * gh.jet(cells, x, 1).d1)
    with pytest.raises(ValueError):
        convex_combination(g, gh, 1.5)
