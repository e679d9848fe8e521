"""Degree-r Regge finite elements: DOF layout, interpolation, evaluation.

Degrees of freedom on a d-dimensional sub-simplex E (1 <= d <= N) are the
moments

    int_E g(X_a, X_b) q dxi,   1 <= a <= b <= d,  q a degree-(r+1-d)
                               barycentric monomial of E,

where X_a = v_a - v_0 are the edge vectors of E in sorted vertex order and
dxi is the reference measure of E. Because the functionals depend only on
the sorted global vertex tuple of E, they are single-valued on shared
entities, and agreement of all DOFs on a facet and its sub-simplices gives
tangential-tangential continuity.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .fields import LinearCombination, TensorField, TensorJet
from .mesh import SimplicialMesh
from .polyquad import PolyBasis, eval_poly_jet, l2_project_element, simplex_rule

SUPPORTED_DEGREES = (0, 1, 2, 3)


def dofs_per_entity(d: int, r: int) -> int:
    if d < 1 or d > r + 1:
        return 0
    return d * (d + 1) // 2 * math.comb(r + 1, d)


@dataclass(frozen=True)
class DofLayout:
    dim: int
    degree: int
    entity_counts: tuple[int, ...]

    @property
    def per_entity(self) -> tuple[int, ...]:
        return tuple(dofs_per_entity(d, self.degree) for d in range(self.dim + 1))

    @property
    def offsets(self) -> tuple[int, ...]:
        off, out = 0, []
        for d in range(self.dim + 1):
            out.append(off)
            off += self.per_entity[d] * self.entity_counts[d]
        return tuple(out)

    @property
    def ndof(self) -> int:
        return sum(k * n for k, n in zip(self.per_entity, self.entity_counts))


def count_dofs(mesh: SimplicialMesh, r: int) -> int:
    return layout(mesh, r).ndof


def layout(mesh: SimplicialMesh, r: int) -> DofLayout:
    top = mesh.topology
    return DofLayout(mesh.dim, r, tuple(top.count(d) for d in range(mesh.dim + 1)))


def _sym_pairs(N: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(N) for j in range(i, N)]


@dataclass(frozen=True)
class _LocalDof:
    dim: int  # entity dimension
    local_entity: int  # index into local_entities[dim]
    k: int  # index within the entity
    a: int
    b: int
    q: int


@lru_cache(maxsize=None)
def _local_dofs(N: int, r: int) -> tuple[_LocalDof, ...]:
    out = []
    for d in range(1, N + 1):
        if dofs_per_entity(d, r) == 0:
            continue
        nloc = math.comb(N + 1, d + 1)
        nq = len(PolyBasis(d, r + 1 - d))
        for e in range(nloc):
            k = 0
            for a, b in _sym_pairs(d):
                for q in range(nq):
                    out.append(_LocalDof(d, e, k, a, b, q))
                    k += 1
    return tuple(out)


@lru_cache(maxsize=None)
def _moment_tables(N: int, r: int):
    """I[d][e] (nq, M): int_E q * phi_m over the reference entity."""
    basis = PolyBasis(N, r)
    tables = {}
    for d in range(1, N + 1):
        if dofs_per_entity(d, r) == 0:
            continue
        local = np.array(list(itertools.combinations(range(N + 1), d + 1)))
        qb = PolyBasis(d, r + 1 - d)
        rule = simplex_rule(d, 2 * r + 2)
        qv = qb.bary_jets(rule.points, 0)[0]  # (Q, nq)
        per = []
        for verts in local:
            lam = np.zeros((rule.points.shape[0], N + 1))
            lam[:, verts] = rule.points
            phi = basis.bary_jets(lam, 0)[0]  # (Q, M)
            per.append(np.einsum("q,qk,qm->km", rule.weights, qv, phi))
        tables[d] = (local, np.array(per))
    return tables


def dof_matrices(mesh: SimplicialMesh, r: int, cells: np.ndarray | None = None) -> np.ndarray:
    """Per-cell matrices mapping (monomial, sym component) unknowns to local DOFs."""
    N = mesh.dim
    if cells is None:
        cells = np.arange(mesh.n_cells)
    verts = mesh.vertices[mesh.cells[cells]]  # (C, N+1, N)
    pairs = _sym_pairs(N)
    M = len(PolyBasis(N, r))
    tables = _moment_tables(N, r)
    ldofs = _local_dofs(N, r)
    D = np.zeros((len(cells), len(ldofs), M * len(pairs)))
    # K[c, a, b, s] = X_a^T E_s X_b per entity
    for row, ld in enumerate(ldofs):
        local, I = tables[ld.dim]
        ev = local[ld.local_entity]
        Xa = verts[:, ev[ld.a + 1]] - verts[:, ev[0]]
        Xb = verts[:, ev[ld.b + 1]] - verts[:, ev[0]]
        K = np.empty((len(cells), len(pairs)))
        for s, (i, j) in enumerate(pairs):
            if i == j:
                K[:, s] = Xa[:, i] * Xb[:, i]
            else:
                K[:, s] = Xa[:, i] * Xb[:, j] + Xa[:, j] * Xb[:, i]
        Iq = I[ld.local_entity][ld.q]  # (M,)
        D[:, row, :] = (Iq[None, :, None] * K[:, None, :]).reshape(len(cells), -1)
    return D


def local_to_global(mesh: SimplicialMesh, r: int) -> np.ndarray:
    """Global DOF index of every local DOF, shape (C, nloc)."""
    top = mesh.topology
    lay = layout(mesh, r)
    ldofs = _local_dofs(mesh.dim, r)
    out = np.empty((mesh.n_cells, len(ldofs)), dtype=np.int64)
    for row, ld in enumerate(ldofs):
        ent = top.cell_entities[ld.dim][:, ld.local_entity]
        out[:, row] = lay.offsets[ld.dim] + ent * lay.per_entity[ld.dim] + ld.k
    return out


def _unknowns_to_coeffs(u: np.ndarray, N: int) -> np.ndarray:
    pairs = _sym_pairs(N)
    C, L = u.shape
    M = L // len(pairs)
    u = u.reshape(C, M, len(pairs))
    c = np.empty((C, M, N, N))
    for s, (i, j) in enumerate(pairs):
        c[:, :, i, j] = c[:, :, j, i] = u[:, :, s]
    return c


def _coeffs_to_unknowns(c: np.ndarray) -> np.ndarray:
    N = c.shape[-1]
    pairs = _sym_pairs(N)
    return np.stack([c[:, :, i, j] for i, j in pairs], axis=2).reshape(c.shape[0], -1)


class ReggeMetric(TensorField):
    """Piecewise polynomial symmetric tensor with single-valued tt-moments."""

    def __init__(self, mesh: SimplicialMesh, degree: int, coeffs: np.ndarray, dofs: np.ndarray | None = None):
        self.mesh = mesh
        self.degree = degree
        self.dim = mesh.dim
        self.coeffs = coeffs
        self.dofs = dofs
        self.basis = PolyBasis(mesh.dim, degree)
        self.compact_support = False

    @classmethod
    def from_dofs(cls, mesh: SimplicialMesh, degree: int, dofs: np.ndarray) -> "ReggeMetric":
        D = dof_matrices(mesh, degree)
        l2g = local_to_global(mesh, degree)
        u = np.linalg.solve(D, dofs[l2g][..., None])[..., 0]
        return cls(mesh, degree, _unknowns_to_coeffs(u, mesh.dim), np.asarray(dofs, dtype=float))

    @property
    def layout(self) -> DofLayout:
        return layout(self.mesh, self.degree)

    def jet(self, cells, x, order: int = 2) -> TensorJet:
        cells = np.asarray(cells)
        lam = self.mesh.barycentric(cells, x)
        A = self.mesh.barycentric_maps[0][cells]
        out = eval_poly_jet(self.coeffs[cells], self.basis, lam, A, min(order, 3))
        return TensorJet(*out)

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "degree": self.degree,
            "ndof": self.layout.ndof,
            "basis_exponents": self.basis.exponents.tolist(),
            "coefficients": self.coeffs.tolist(),
            "dofs": None if self.dofs is None else self.dofs.tolist(),
        }

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)


def eval_metric_jet(gh: TensorField, cells, x, order: int = 2):
    """Metric jet of any metric source at points x of the given cells."""
    from .geometry import MetricJet
    return MetricJet.from_tensor_jet(gh.jet(np.asarray(cells), np.asarray(x), order))


def interpolate(metric: TensorField, mesh: SimplicialMesh, r: int, quad_degree: int | None = None) -> ReggeMetric:
    """Local L2 projection followed by averaging of shared tt-moments."""
    if r not in SUPPORTED_DEGREES:
        raise ValueError(f"unsupported Regge degree {r}")
    coeffs = l2_project_element(metric, mesh, r, quad_degree=quad_degree)
    D = dof_matrices(mesh, r)
    local = np.einsum("cij,cj->ci", D, _coeffs_to_unknowns(coeffs))
    l2g = local_to_global(mesh, r)
    ndof = layout(mesh, r).ndof
    sums = np.bincount(l2g.ravel(), weights=local.ravel(), minlength=ndof)
    counts = np.bincount(l2g.ravel(), minlength=ndof)
    dofs = sums / counts
    u = np.linalg.solve(D, dofs[l2g][..., None])[..., 0]
    return ReggeMetric(mesh, r, _unknowns_to_coeffs(u, mesh.dim), dofs)


def convex_combination(g: TensorField, gh: TensorField, t: float) -> LinearCombination:
    """g~(t) = (1 - t) g + t gh; positivity is checked where it is evaluated."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    return LinearCombination([(1.0 - t, g), (t, gh)])
