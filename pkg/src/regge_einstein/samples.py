"""Quadrature point sets on cells, facet sides and ridges of a mesh.

All sets are flat arrays over points, ordered by entity in canonical
(lexicographic) order, so reductions are deterministic. Integrals over an
entity E with metric g are computed as

    int_E f omega_E = sum_q w_q f(x_q) sqrt(det(X^T g X))

with X the edge frame of E and w_q reference-simplex weights (for cells
the frame is the cell Jacobian).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .mesh import SimplicialMesh
from .polyquad import simplex_rule


@dataclass(frozen=True)
class QuadSpec:
    volume: int
    facet: int
    ridge: int

    @classmethod
    def for_order(cls, r: int, extra: int = 0) -> "QuadSpec":
        return cls(2 * r + 6 + extra, 2 * r + 6 + extra, 2 * r + 4 + extra)


def _frame(verts: np.ndarray) -> np.ndarray:
    """Edge frame (E, N, d) of entities given their vertex coordinates (E, d+1, N)."""
    return np.transpose(verts[:, 1:] - verts[:, :1], (0, 2, 1))


@dataclass
class VolumeSet:
    cells: np.ndarray
    x: np.ndarray
    w: np.ndarray  # reference weight times |det J|


@dataclass
class FacetSideSet:
    facet: np.ndarray  # per point
    cells: np.ndarray
    x: np.ndarray
    w: np.ndarray  # reference weights
    X: np.ndarray  # (P, N, N-1) facet frame
    conormal: np.ndarray  # (P, N) Euclidean outward covector of the cell
    boundary: np.ndarray  # per point flag


@dataclass
class RidgeCellSet:
    ridge_point: np.ndarray  # index into RidgeSet points
    ridge: np.ndarray
    cells: np.ndarray
    x: np.ndarray
    w: np.ndarray
    XS: np.ndarray  # (P, N, N-2)
    conormals: np.ndarray  # (P, 2, N) of the two cell facets containing the ridge
    into_facet: np.ndarray  # (P, 2, N) edge from a ridge vertex to the facet's other vertex
    boundary: np.ndarray


@dataclass
class RidgeSet:
    ridge: np.ndarray
    cells: np.ndarray  # an incident cell used to evaluate tangential quantities
    x: np.ndarray
    w: np.ndarray
    XS: np.ndarray
    multiplicity: np.ndarray  # m_S per point
    boundary: np.ndarray


class MeshSamples:
    def __init__(self, mesh: SimplicialMesh, quad: QuadSpec):
        self.mesh = mesh
        self.quad = quad

    @cached_property
    def volume(self) -> VolumeSet:
        m = self.mesh
        rule = simplex_rule(m.dim, self.quad.volume)
        Q = rule.points.shape[0]
        verts = m.vertices[m.cells]
        x = np.einsum("qk,ckn->cqn", rule.points, verts).reshape(-1, m.dim)
        w = (np.abs(np.linalg.det(m.cell_jacobians))[:, None] * rule.weights[None, :]).ravel()
        return VolumeSet(np.repeat(np.arange(m.n_cells), Q), x, w)

    @cached_property
    def facet_sides(self) -> FacetSideSet:
        m = self.mesh
        top = m.topology
        N = m.dim
        A = m.barycentric_maps[0]
        rule = simplex_rule(N - 1, self.quad.facet)
        Q = rule.points.shape[0]
        fid, side = np.nonzero(top.facet_cells >= 0)
        order = np.lexsort((side, fid))
        fid, side = fid[order], side[order]
        cells = top.facet_cells[fid, side]
        lf = top.facet_local[fid, side]
        local = top.local_entities[N - 1]
        opp = np.array([sorted(set(range(N + 1)) - set(f.tolist()))[0] for f in local])[lf]
        conormal = -A[cells, opp]
        fverts = m.vertices[top.facets[fid]]
        X = _frame(fverts)
        x = np.einsum("qk,ekn->eqn", rule.points, fverts).reshape(-1, N)
        rep = lambda a: np.repeat(a, Q, axis=0)
        return FacetSideSet(rep(fid), rep(cells), x, np.tile(rule.weights, len(fid)), rep(X),
                            rep(conormal), rep(top.boundary_facet[fid]))

    @cached_property
    def _ridge_rule(self):
        return simplex_rule(self.mesh.dim - 2, self.quad.ridge)

    @cached_property
    def ridges(self) -> RidgeSet:
        m = self.mesh
        top = m.topology
        N = m.dim
        rule = self._ridge_rule
        Q = rule.points.shape[0]
        nr = top.count(N - 2)
        ce = top.cell_entities[N - 2]
        # smallest incident cell index owns the ridge
        owner = np.full(nr, np.iinfo(np.int64).max, dtype=np.int64)
        for lr in range(ce.shape[1]):
            np.minimum.at(owner, ce[:, lr], np.arange(m.n_cells))
        rverts = m.vertices[top.ridges]
        XS = _frame(rverts)
        x = np.einsum("qk,ekn->eqn", rule.points, rverts).reshape(-1, N)
        rep = lambda a: np.repeat(a, Q, axis=0)
        mult = np.where(top.boundary_ridge, 1, 2)
        return RidgeSet(rep(np.arange(nr)), rep(owner), x, np.tile(rule.weights, nr), rep(XS),
                        rep(mult), rep(top.boundary_ridge))

    @cached_property
    def ridge_cells(self) -> RidgeCellSet:
        m = self.mesh
        top = m.topology
        N = m.dim
        A = m.barycentric_maps[0]
        rule = self._ridge_rule
        Q = rule.points.shape[0]
        ce = top.cell_entities[N - 2]
        nloc = ce.shape[1]
        cells = np.repeat(np.arange(m.n_cells), nloc)
        lr = np.tile(np.arange(nloc), m.n_cells)
        rid = ce.ravel()
        order = np.lexsort((cells, rid))
        cells, lr, rid = cells[order], lr[order], rid[order]
        miss = top.ridge_opposite[lr]  # (E, 2) local vertices off the ridge
        s0 = top.local_entities[N - 2][lr, 0]
        cv = m.vertices[m.cells[cells]]  # (E, N+1, N)
        E = len(cells)
        ar = np.arange(E)
        # facet j omits vertex miss[:, j]; its outward conormal is -grad lambda_miss_j
        conormals = np.stack([-A[cells, miss[:, 0]], -A[cells, miss[:, 1]]], axis=1)
        into = np.stack([cv[ar, miss[:, 1]] - cv[ar, s0], cv[ar, miss[:, 0]] - cv[ar, s0]], axis=1)
        rverts = m.vertices[top.ridges[rid]]
        XS = _frame(rverts)
        x = np.einsum("qk,ekn->eqn", rule.points, rverts).reshape(-1, N)
        rp = (rid[:, None] * Q + np.arange(Q)[None, :]).ravel()
        rep = lambda a: np.repeat(a, Q, axis=0)
        return RidgeCellSet(rp, rep(rid), rep(cells), x, np.tile(rule.weights, E), rep(XS),
                            rep(conormals), rep(into), rep(top.boundary_ridge[rid]))


_CACHE: dict = {}


def mesh_samples(mesh: SimplicialMesh, quad: QuadSpec) -> MeshSamples:
    key = (id(mesh), quad)
    hit = _CACHE.get(key)
    if hit is None or hit.mesh is not mesh:
        if len(_CACHE) > 16:
            _CACHE.clear()
        hit = _CACHE[key] = MeshSamples(mesh, quad)
    return hit
