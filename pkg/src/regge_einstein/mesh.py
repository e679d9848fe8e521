"""Simplicial triangulations of boxes with full sub-simplex connectivity.

Entities of every dimension are stored as lexicographically sorted tuples of
sorted vertex indices; all global reductions iterate in that order.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    pass


class MeshFormatError(MeshError):
    pass


_GAMMA = np.uint64(0x9E3779B97F4A7C15)


def splitmix64(x: np.ndarray) -> np.ndarray:
    """Vectorized splitmix64 finalizer on uint64 arrays (wrapping arithmetic)."""
    z = np.asarray(x, dtype=np.uint64) + _GAMMA
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def counter_uniform(seed: int, stream: np.ndarray, counter: int | np.ndarray) -> np.ndarray:
    """Uniform [0, 1) doubles from a counter-based generator.

    Each ``stream`` id is an independent sequence; ``counter`` indexes into it.
    """
    key = splitmix64(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))[0]
    s = splitmix64(np.asarray(stream, dtype=np.uint64) ^ key)
    z = splitmix64(s + np.asarray(counter, dtype=np.uint64) * _GAMMA)
    return (z >> np.uint64(11)).astype(np.float64) * 2.0**-53


def _encode_rows(rows: np.ndarray, base: int) -> np.ndarray:
    code = np.zeros(rows.shape[0], dtype=np.int64)
    for j in range(rows.shape[1]):
        code = code * base + rows[:, j]
    return code


@dataclass(frozen=True)
class Topology:
    """Derived incidence data; see :func:`build_connectivity`."""

    dim: int
    entities: tuple[np.ndarray, ...]  # entities[d]: (n_d, d+1)
    cell_entities: tuple[np.ndarray, ...]  # cell_entities[d]: (n_cells, C(N+1, d+1))
    local_entities: tuple[np.ndarray, ...]  # local vertex positions of each local sub-entity
    facet_cells: np.ndarray  # (n_facets, 2), -1 where absent
    facet_local: np.ndarray  # (n_facets, 2) local facet index inside each adjacent cell
    boundary_facet: np.ndarray
    boundary_ridge: np.ndarray
    boundary_vertex: np.ndarray
    ridge_local_facets: np.ndarray  # (n_local_ridges, 2) local facets containing each local ridge
    ridge_opposite: np.ndarray  # (n_local_ridges, 2) local vertices not on the ridge

    @property
    def facets(self) -> np.ndarray:
        return self.entities[self.dim - 1]

    @property
    def ridges(self) -> np.ndarray:
        return self.entities[self.dim - 2]

    @property
    def ridge_multiplicity(self) -> np.ndarray:
        return np.where(self.boundary_ridge, 1, 2)

    def count(self, d: int) -> int:
        return self.entities[d].shape[0]


def build_connectivity(dim: int, cells: np.ndarray, n_vertices: int) -> Topology:
    """Enumerate all sub-simplices and their incidences.

    Cells must have sorted rows. Rejects non-manifold facets (three or more
    adjacent cells).
    """
    ncell = cells.shape[0]
    entities, cell_entities, local_entities = [], [], []
    for d in range(dim + 1):
        local = np.array(list(itertools.combinations(range(dim + 1), d + 1)), dtype=np.int64)
        rows = cells[:, local].reshape(-1, d + 1)
        uniq, inv = np.unique(rows, axis=0, return_inverse=True)
        entities.append(uniq)
        cell_entities.append(inv.reshape(ncell, local.shape[0]))
        local_entities.append(local)

    nfacet = entities[dim - 1].shape[0]
    flat = cell_entities[dim - 1].ravel()
    counts = np.bincount(flat, minlength=nfacet)
    if np.any(counts > 2):
        bad = int(np.argmax(counts > 2))
        raise MeshError(f"non-manifold facet {entities[dim - 1][bad].tolist()} has {counts[bad]} cells")
    order = np.argsort(flat, kind="stable")
    facet_cells = -np.ones((nfacet, 2), dtype=np.int64)
    facet_local = -np.ones((nfacet, 2), dtype=np.int64)
    nloc = dim + 1
    slot = np.zeros(nfacet, dtype=np.int64)
    for pos in order:
        f = flat[pos]
        facet_cells[f, slot[f]] = pos // nloc
        facet_local[f, slot[f]] = pos % nloc
        slot[f] += 1
    boundary_facet = counts == 1

    base = n_vertices + 1
    bfac = entities[dim - 1][boundary_facet]
    boundary_vertex = np.zeros(n_vertices, dtype=bool)
    boundary_vertex[np.unique(bfac)] = True
    if dim >= 2:
        ridges = entities[dim - 2]
        sub = np.array(list(itertools.combinations(range(dim), dim - 1)), dtype=np.int64)
        bridge_rows = bfac[:, sub].reshape(-1, dim - 1)
        codes = _encode_rows(ridges, base)
        hit = np.searchsorted(codes, _encode_rows(bridge_rows, base))
        boundary_ridge = np.zeros(ridges.shape[0], dtype=bool)
        boundary_ridge[hit] = True
    else:
        boundary_ridge = np.zeros(0, dtype=bool)

    # Local tables: which local facets contain a local ridge, and the two
    # local vertices missing from it.
    lf = local_entities[dim - 1]
    lr = local_entities[dim - 2] if dim >= 2 else np.zeros((0, 0), dtype=np.int64)
    ridge_local_facets = np.zeros((lr.shape[0], 2), dtype=np.int64)
    ridge_opposite = np.zeros((lr.shape[0], 2), dtype=np.int64)
    for i, r in enumerate(lr):
        missing = sorted(set(range(dim + 1)) - set(r.tolist()))
        ridge_opposite[i] = missing
        for j, m in enumerate(missing):
            fverts = sorted(set(range(dim + 1)) - {m})
            ridge_local_facets[i, j] = next(k for k, f in enumerate(lf) if f.tolist() == fverts)

    return Topology(
        dim=dim,
        entities=tuple(entities),
        cell_entities=tuple(cell_entities),
        local_entities=tuple(local_entities),
        facet_cells=facet_cells,
        facet_local=facet_local,
        boundary_facet=boundary_facet,
        boundary_ridge=boundary_ridge,
        boundary_vertex=boundary_vertex,
        ridge_local_facets=ridge_local_facets,
        ridge_opposite=ridge_opposite,
    )


class SimplicialMesh:
    """A conforming simplicial mesh; immutable once constructed."""

    def __init__(self, vertices: np.ndarray, cells: np.ndarray):
        vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        cells = np.sort(np.asarray(cells, dtype=np.int64), axis=1)
        if vertices.ndim != 2:
            raise MeshError("vertices must be a 2-d array")
        self.dim = vertices.shape[1]
        if cells.ndim != 2 or cells.shape[1] != self.dim + 1:
            raise MeshError(f"cells must have {self.dim + 1} vertices each")
        if cells.shape[0] == 0:
            raise MeshError("no cells")
        if cells.min() < 0 or cells.max() >= vertices.shape[0]:
            raise MeshError("cell vertex index out of range")
        self.vertices = vertices
        self.cells = cells
        self.vertices.setflags(write=False)
        self.cells.setflags(write=False)
        vol = self.signed_volumes
        if np.any(np.abs(vol) <= 1e-14 * np.max(np.abs(vol))):
            raise MeshError("degenerate cell")

    @cached_property
    def topology(self) -> Topology:
        return build_connectivity(self.dim, self.cells, self.vertices.shape[0])

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @cached_property
    def cell_jacobians(self) -> np.ndarray:
        """Edge matrices ``[v1-v0, ..., vN-v0]`` per cell, shape (C, N, N)."""
        v = self.vertices[self.cells]
        return np.transpose(v[:, 1:] - v[:, :1], (0, 2, 1))

    @cached_property
    def signed_volumes(self) -> np.ndarray:
        return np.linalg.det(self.cell_jacobians) / math.factorial(self.dim)

    @property
    def volumes(self) -> np.ndarray:
        return np.abs(self.signed_volumes)

    @cached_property
    def barycentric_maps(self) -> tuple[np.ndarray, np.ndarray]:
        """(A, b) with ``lambda = A @ x + b``; A has shape (C, N+1, N)."""
        jinv = np.linalg.inv(self.cell_jacobians)
        A = np.concatenate([-jinv.sum(axis=1, keepdims=True), jinv], axis=1)
        v0 = self.vertices[self.cells[:, 0]]
        b = -np.einsum("cij,cj->ci", A, v0)
        b[:, 0] += 1.0
        return A, b

    def barycentric(self, cells: np.ndarray, x: np.ndarray) -> np.ndarray:
        A, b = self.barycentric_maps
        return np.einsum("pij,pj->pi", A[cells], x) + b[cells]

    def edge_lengths(self) -> np.ndarray:
        e = self.topology.entities[1]
        return np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1)

    @property
    def hmax(self) -> float:
        return float(self.edge_lengths().max())

    def entity_measure(self, d: int) -> np.ndarray:
        ent = self.topology.entities[d]
        if d == 0:
            return np.ones(ent.shape[0])
        X = np.transpose(self.vertices[ent[:, 1:]] - self.vertices[ent[:, :1]], (0, 2, 1))
        gram = np.einsum("eia,eib->eab", X, X)
        return np.sqrt(np.linalg.det(gram)) / math.factorial(d)


def generate_box_mesh(dim: int, level: int) -> SimplicialMesh:
    """Kuhn triangulation of (-1, 1)^dim with 2^level subdivisions per axis.

    Every subcube is split into dim! simplices sharing its (0,..,0)-(1,..,1)
    diagonal.
    """
    if dim not in (2, 3):
        raise MeshError(f"dim must be 2 or 3, got {dim}")
    if level < 0:
        raise MeshError("level must be nonnegative")
    n = 2**level
    axis = np.linspace(-1.0, 1.0, n + 1)
    grid = np.stack(np.meshgrid(*([axis] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    strides = np.array([(n + 1) ** (dim - 1 - i) for i in range(dim)], dtype=np.int64)
    corners = np.stack(np.meshgrid(*([np.arange(n)] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    cells = []
    for perm in itertools.permutations(range(dim)):
        offs = [np.zeros(dim, dtype=np.int64)]
        for ax in perm:
            step = offs[-1].copy()
            step[ax] += 1
            offs.append(step)
        cells.append(np.stack([(corners + o) @ strides for o in offs], axis=1))
    cells = np.concatenate(cells, axis=0)
    return SimplicialMesh(grid, cells)


def default_perturbation_exponent(dim: int) -> float:
    """Exponent e in the amplitude ``hmax * 2**(-e)``; (2N+1)/2 by default."""
    return (2 * dim + 1) / 2


def perturb_interior_vertices(
    mesh: SimplicialMesh,
    hmax: float,
    seed: int,
    exponent: float | None = None,
    max_retries: int = 100,
) -> SimplicialMesh:
    """Move every interior vertex coordinate by U(-a, a), a = hmax * 2**-exponent.

    Draws come from per-vertex, per-coordinate counter streams so the result
    depends only on (mesh, seed). Vertices of cells whose orientation flips
    are redrawn from the next counter, at most ``max_retries`` times.
    """
    if exponent is None:
        exponent = default_perturbation_exponent(mesh.dim)
    amp = hmax * 2.0 ** (-exponent)
    dim = mesh.dim
    interior = np.flatnonzero(~mesh.topology.boundary_vertex)
    streams = (interior[:, None] * dim + np.arange(dim)[None, :]).astype(np.uint64)
    sign0 = np.sign(mesh.signed_volumes)
    verts = mesh.vertices.copy()
    attempt = np.zeros(interior.shape[0], dtype=np.int64)
    pending = np.ones(interior.shape[0], dtype=bool)
    slot = -np.ones(mesh.vertices.shape[0], dtype=np.int64)
    slot[interior] = np.arange(interior.shape[0])
    for _ in range(max_retries + 1):
        idx = np.flatnonzero(pending)
        u = counter_uniform(seed, streams[idx], attempt[idx][:, None])
        verts[interior[idx]] = mesh.vertices[interior[idx]] + amp * (2.0 * u - 1.0)
        v = verts[mesh.cells]
        J = np.transpose(v[:, 1:] - v[:, :1], (0, 2, 1))
        vol = np.linalg.det(J)
        bad = np.sign(vol) != sign0
        if not np.any(bad):
            return SimplicialMesh(verts, mesh.cells)
        offenders = np.unique(mesh.cells[bad])
        offenders = slot[offenders]
        offenders = offenders[offenders >= 0]
        pending[:] = False
        pending[offenders] = True
        attempt[offenders] += 1
    raise MeshError(f"could not restore positive cell volumes within {max_retries} retries")


def write_mesh(mesh: SimplicialMesh, path: str | Path) -> None:
    lines = [f"dim {mesh.dim}", f"vertices {mesh.vertices.shape[0]}"]
    lines += [" ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    lines.append(f"cells {mesh.n_cells}")
    lines += [" ".join(str(int(i)) for i in c) for c in mesh.cells]
    Path(path).write_text("\n".join(lines) + "\n")


def _header(line: str, key: str, lineno: int) -> int:
    parts = line.split()
    if len(parts) != 2 or parts[0] != key:
        raise MeshFormatError(f"line {lineno}: expected '{key} <count>', got {line!r}")
    try:
        return int(parts[1])
    except ValueError:
        raise MeshFormatError(f"line {lineno}: bad count in {line!r}") from None


def read_mesh(path: str | Path) -> SimplicialMesh:
    lines = Path(path).read_text().splitlines()
    pos = 0

    def take() -> tuple[str, int]:
        nonlocal pos
        if pos >= len(lines):
            raise MeshFormatError(f"line {pos + 1}: unexpected end of file")
        pos += 1
        return lines[pos - 1], pos

    line, no = take()
    dim = _header(line, "dim", no)
    if dim not in (2, 3):
        raise MeshFormatError(f"line {no}: unsupported dim {dim}")
    line, no = take()
    nv = _header(line, "vertices", no)
    verts = np.empty((nv, dim))
    for i in range(nv):
        line, no = take()
        parts = line.split()
        if len(parts) != dim:
            raise MeshFormatError(f"line {no}: expected {dim} coordinates")
        try:
            verts[i] = [float(p) for p in parts]
        except ValueError:
            raise MeshFormatError(f"line {no}: bad coordinate") from None
    line, no = take()
    nc = _header(line, "cells", no)
    if nc == 0:
        raise MeshFormatError("no cells")
    cells = np.empty((nc, dim + 1), dtype=np.int64)
    for i in range(nc):
        line, no = take()
        parts = line.split()
        if len(parts) != dim + 1:
            raise MeshFormatError(f"line {no}: expected {dim + 1} indices")
        try:
            idx = [int(p) for p in parts]
        except ValueError:
            raise MeshFormatError(f"line {no}: bad index") from None
        if min(idx) < 0 or max(idx) >= nv:
            raise MeshFormatError(f"line {no}: vertex index out of range (have {nv} vertices)")
        cells[i] = idx
    return SimplicialMesh(verts, cells)
