"""H^-2 norm estimates of curvature functionals via biharmonic solves.

A functional f acting on symmetric tensor fields is split into scalar
functionals f_(ab)(phi) = f(phi e_(ab)) over an orthonormal basis e_(ab) of
symmetric matrices. For each one we solve the biharmonic problem

    find u in V_h:  a_h(u, v) = f_(ab)(v)  for all v in V_h

with V_h continuous Lagrange elements of degree r + 2 vanishing on the
boundary and a_h the C0 interior penalty form

    sum_T int_T D^2u : D^2v
    - sum_F int_F ({d_nn u} [[d_n v]] + {d_nn v} [[d_n u]])
    + sum_F eta / h_F int_F [[d_n u]] [[d_n v]],

jumps including boundary facets (one-sided). The reported value is the
broken H^2 norm of the solutions, root-sum-square over components.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .functionals import ScalarDensity, TensorDensity
from .mesh import SimplicialMesh
from .polyquad import PolyBasis, _exponents, simplex_rule

log = logging.getLogger(__name__)

DIRECT_LIMIT = 200_000


class SolverError(RuntimeError):
    pass


def sym_pairs(N: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(N) for j in range(i, N)]


class LagrangeSpace:
    """Continuous P_p on a simplicial mesh with nodes at the barycentric lattice."""

    def __init__(self, mesh: SimplicialMesh, order: int):
        if order < 2:
            raise ValueError("the biharmonic space needs order >= 2")
        self.mesh = mesh
        self.order = order
        N = mesh.dim
        self.alpha = _exponents(N + 1, order)  # (nloc, N+1)
        self.basis = PolyBasis(N, order)
        V = self.basis.bary_jets(self.alpha / order, 0)[0]
        self.C = np.linalg.inv(V)  # monomial -> nodal
        self.nloc = self.alpha.shape[0]
        # a lattice node is identified by the multiset of global vertices it weights
        local = [np.repeat(np.arange(N + 1), a) for a in self.alpha]
        keys = np.sort(mesh.cells[:, np.array(local)], axis=2)  # (C, nloc, p)
        uniq, inv = np.unique(keys.reshape(-1, order), axis=0, return_inverse=True)
        self.l2g = inv.reshape(mesh.n_cells, self.nloc)
        self.ndof = uniq.shape[0]
        top = mesh.topology
        bnd = np.zeros(self.ndof, dtype=bool)
        fid = np.nonzero(top.boundary_facet)[0]
        cells = top.facet_cells[fid, 0]
        lf = top.facet_local[fid, 0]
        local_f = top.local_entities[N - 1]
        opp = np.array([sorted(set(range(N + 1)) - set(f.tolist()))[0] for f in local_f])[lf]
        on_face = self.alpha[None, :, :] == 0  # (1, nloc, N+1)
        mask = on_face[0][:, opp].T  # (nb, nloc)
        bnd[self.l2g[cells][mask]] = True
        self.boundary = bnd

    def jets(self, cells: np.ndarray, x: np.ndarray, order: int = 2) -> list[np.ndarray]:
        """Nodal basis jets at points: [val (P,nloc), grad (P,nloc,N), hess (P,nloc,N,N)]."""
        lam = self.mesh.barycentric(cells, x)
        A = self.mesh.barycentric_maps[0][cells]
        mj = self.basis.physical_jets(lam, A, order)
        return [np.einsum("pm...,mj->pj...", j, self.C) for j in mj]


def _coo(rows, cols, vals, n):
    return sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()


@dataclass
class BiharmonicMatrices:
    system: sp.csr_matrix
    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    hessian: sp.csr_matrix


def _volume_matrices(space: LagrangeSpace, chunk: int = 256):
    mesh = space.mesh
    N = mesh.dim
    p = space.order
    rule = simplex_rule(N, 2 * p)
    n, nl = space.ndof, space.nloc
    rows = np.repeat(space.l2g[:, :, None], nl, axis=2)
    cols = np.repeat(space.l2g[:, None, :], nl, axis=1)
    Mv = np.empty((mesh.n_cells, nl, nl))
    Kv = np.empty_like(Mv)
    Hv = np.empty_like(Mv)
    Q = rule.points.shape[0]
    detJ = np.abs(np.linalg.det(mesh.cell_jacobians))
    verts = mesh.vertices[mesh.cells]
    for a in range(0, mesh.n_cells, chunk):
        c = np.arange(a, min(a + chunk, mesh.n_cells))
        x = np.einsum("qk,ckn->cqn", rule.points, verts[c]).reshape(-1, N)
        cc = np.repeat(c, Q)
        val, grad, hess = space.jets(cc, x, 2)
        w = (rule.weights[None, :] * detJ[c, None]).ravel()
        shp = (len(c), Q)
        val = val.reshape(*shp, nl)
        grad = grad.reshape(*shp, nl, N)
        hess = hess.reshape(*shp, nl, N, N)
        w = w.reshape(shp)
        Mv[c] = np.einsum("cq,cqi,cqj->cij", w, val, val)
        Kv[c] = np.einsum("cq,cqil,cqjl->cij", w, grad, grad)
        Hv[c] = np.einsum("cq,cqikl,cqjkl->cij", w, hess, hess)
    return tuple(_coo(rows, cols, X, n) for X in (Mv, Kv, Hv))


def _facet_matrix(space: LagrangeSpace, eta: float) -> sp.csr_matrix:
    mesh = space.mesh
    top = mesh.topology
    N = mesh.dim
    p = space.order
    nl = space.nloc
    rule = simplex_rule(N - 1, 2 * p)
    Q = rule.points.shape[0]
    A = mesh.barycentric_maps[0]
    local_f = top.local_entities[N - 1]
    opp_of = np.array([sorted(set(range(N + 1)) - set(f.tolist()))[0] for f in local_f])
    fac = top.facets
    nf = fac.shape[0]
    fverts = mesh.vertices[fac]
    x = np.einsum("qk,fkn->fqn", rule.points, fverts)  # (F, Q, N)
    X = np.transpose(fverts[:, 1:] - fverts[:, :1], (0, 2, 1))
    area = np.sqrt(np.linalg.det(np.einsum("fia,fib->fab", X, X)))  # |F| * (N-1)!
    edges = fverts[:, :, None, :] - fverts[:, None, :, :]
    hF = np.sqrt((edges**2).sum(-1)).max(axis=(1, 2))
    w = rule.weights[None, :] * area[:, None]  # (F, Q)
    c0 = top.facet_cells[:, 0]
    nF = -A[c0, opp_of[top.facet_local[:, 0]]]
    nF = nF / np.linalg.norm(nF, axis=1, keepdims=True)
    interior = top.facet_cells[:, 1] >= 0
    jump = np.zeros((nf, Q, 2 * nl))
    avg = np.zeros((nf, Q, 2 * nl))
    dofs = np.zeros((nf, 2 * nl), dtype=np.int64)
    for s in range(2):
        fs = np.nonzero(top.facet_cells[:, s] >= 0)[0]
        cells = top.facet_cells[fs, s]
        sign = 1.0 if s == 0 else -1.0
        _, grad, hess = space.jets(np.repeat(cells, Q), x[fs].reshape(-1, N), 2)
        grad = grad.reshape(len(fs), Q, nl, N)
        hess = hess.reshape(len(fs), Q, nl, N, N)
        n = nF[fs]
        jump[fs, :, s * nl:(s + 1) * nl] = sign * np.einsum("fqil,fl->fqi", grad, n)
        wt = np.where(interior[fs], 0.5, 1.0)
        avg[fs, :, s * nl:(s + 1) * nl] = wt[:, None, None] * np.einsum("fqikl,fk,fl->fqi", hess, n, n)
        dofs[fs, s * nl:(s + 1) * nl] = space.l2g[cells]
    pen = eta / hF
    Fm = (-np.einsum("fq,fqi,fqj->fij", w, avg, jump)
          - np.einsum("fq,fqi,fqj->fij", w, jump, avg)
          + pen[:, None, None] * np.einsum("fq,fqi,fqj->fij", w, jump, jump))
    rows = np.repeat(dofs[:, :, None], 2 * nl, axis=2)
    cols = np.repeat(dofs[:, None, :], 2 * nl, axis=1)
    # boundary facets have no second side: drop those rows and columns
    live = np.concatenate([np.ones((nf, nl), bool), np.repeat(interior[:, None], nl, axis=1)], axis=1)
    keep = live[:, :, None] & live[:, None, :]
    return _coo(rows[keep], cols[keep], Fm[keep], space.ndof)


def default_penalty(order: int) -> float:
    return 10.0 * order**2


def assemble_biharmonic(mesh: SimplicialMesh, order: int, eta: float | None = None,
                        space: LagrangeSpace | None = None) -> BiharmonicMatrices:
    space = space or LagrangeSpace(mesh, order)
    eta = default_penalty(order) if eta is None else eta
    M, K, H = _volume_matrices(space)
    S = H + _facet_matrix(space, eta)
    return BiharmonicMatrices(S, M, K, H)


def _backward_error(A, X, B, anorm: float) -> np.ndarray:
    R = B - A @ X
    den = anorm * np.linalg.norm(X, axis=0) + np.linalg.norm(B, axis=0)
    return np.linalg.norm(R, axis=0) / np.where(den > 0, den, 1.0)


def _relative_residual(A, X, B) -> np.ndarray:
    bn = np.linalg.norm(B, axis=0)
    return np.linalg.norm(B - A @ X, axis=0) / np.where(bn > 0, bn, 1.0)


def _refined(lu, A, B, tol: float, steps: int = 4):
    """LU solve with iterative refinement; returns (X, normwise backward errors).

    The plain residual |b - Ax| / |b| of an ill-conditioned system cannot be
    evaluated below roughly eps * |A| |x| / |b| in floating point, so the
    stopping test uses the backward error |b - Ax| / (|A| |x| + |b|).
    """
    anorm = spla.norm(A, 1)
    X = lu.solve(B)
    for _ in range(steps):
        be = _backward_error(A, X, B, anorm)
        if np.all(be <= tol):
            break
        X = X + lu.solve(B - A @ X)
    return X, _backward_error(A, X, B, anorm)


def solve_spd(A, b: np.ndarray, tol: float = 1e-10, maxiter: int | None = None):
    """Solve A x = b for SPD A; b may have several columns.

    Returns (x, info) with info holding the method and relative residuals.
    """
    A = sp.csc_matrix(A)
    b = np.asarray(b, dtype=float)
    multi = b.ndim == 2
    B = b if multi else b[:, None]
    n = A.shape[0]
    if n <= DIRECT_LIMIT:
        try:
            lu = spla.splu(A)
        except RuntimeError as e:
            raise SolverError(f"factorization failed: {e}") from None
        Xs, be = _refined(lu, A, B, tol)
        if np.any(be > tol):
            raise SolverError(f"backward error {be.max():.2e} above tolerance")
        method, iters = "direct", [0] * B.shape[1]
    else:
        d = A.diagonal()
        if np.any(d <= 0):
            raise SolverError("non-positive diagonal")
        prec = spla.LinearOperator(A.shape, matvec=lambda v: v / d)
        Xs = np.zeros_like(B)
        iters = []
        cap = maxiter or 20 * n
        for k in range(B.shape[1]):
            count = [0]

            def cb(_):
                count[0] += 1

            x, info = spla.cg(A, B[:, k], rtol=tol, atol=0.0, M=prec, maxiter=cap, callback=cb)
            if info != 0:
                raise SolverError(f"conjugate gradients did not converge in {cap} iterations")
            Xs[:, k] = x
            iters.append(count[0])
        method = "pcg-jacobi"
    if not np.all(np.isfinite(Xs)):
        raise SolverError("solution is not finite")
    info = {"method": method, "iterations": iters,
            "relative_residuals": _relative_residual(A, Xs, B).tolist(),
            "backward_errors": _backward_error(A, Xs, B, spla.norm(A, 1)).tolist()}
    return (Xs if multi else Xs[:, 0]), info


def apply_functional_to_basis(density, space: LagrangeSpace) -> np.ndarray:
    """Load vectors <f, phi_i e_(ab)>, shape (ndof, N(N+1)/2); (ndof,) for scalar densities."""
    N = space.mesh.dim
    if isinstance(density, ScalarDensity):
        out = np.zeros(space.ndof)
        for p in density.blocks:
            for ce, x, c in density.blocks[p]:
                phi = space.jets(ce, x, 0)[0]
                out += np.bincount(space.l2g[ce].ravel(), weights=(phi * c[:, None]).ravel(),
                                   minlength=space.ndof)
        return out
    if not isinstance(density, TensorDensity):
        raise TypeError("expected a tensor or scalar density")
    pairs = sym_pairs(N)
    out = np.zeros((space.ndof, len(pairs)))
    ce, x, M = density.arrays()
    if len(ce) == 0:
        return out
    step = 65536
    for a in range(0, len(ce), step):
        sl = slice(a, a + step)
        phi = space.jets(ce[sl], x[sl], 0)[0]
        idx = space.l2g[ce[sl]].ravel()
        for k, (i, j) in enumerate(pairs):
            m = M[sl, i, i] if i == j else np.sqrt(2.0) * M[sl, i, j]
            out[:, k] += np.bincount(idx, weights=(phi * m[:, None]).ravel(), minlength=space.ndof)
    return out


@dataclass
class DualNormReport:
    component_norms: list
    combined: float
    order: int
    ndof: int
    penalty: float
    solver: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"component_norms": self.component_norms, "combined": self.combined, "order": self.order,
                "ndof": self.ndof, "penalty": self.penalty, "solver": self.solver}


class BiharmonicSolver:
    """Assembled and factorized biharmonic problem on a mesh, reusable across loads."""

    def __init__(self, mesh: SimplicialMesh, order: int, eta: float | None = None, tol: float = 1e-10):
        self.space = LagrangeSpace(mesh, order)
        self.eta = default_penalty(order) if eta is None else eta
        self.tol = tol
        self.mats = assemble_biharmonic(mesh, order, self.eta, self.space)
        free = np.nonzero(~self.space.boundary)[0]
        self.free = free
        A = self.mats.system[free][:, free]
        self.A = sp.csc_matrix(0.5 * (A + A.T))
        self._lu = spla.splu(self.A) if len(free) <= DIRECT_LIMIT else None
        N = self.mats.mass + self.mats.stiffness + self.mats.hessian
        self.norm_matrix = N[free][:, free]

    def solve(self, loads: np.ndarray):
        b = loads[self.free]
        multi = b.ndim == 2
        B = b if multi else b[:, None]
        if self._lu is not None:
            X, be = _refined(self._lu, self.A, B, self.tol)
            info = {"method": "direct", "iterations": [0] * B.shape[1],
                    "relative_residuals": _relative_residual(self.A, X, B).tolist(),
                    "backward_errors": be.tolist()}
        else:
            X, info = solve_spd(self.A, B, self.tol)
        if max(info["backward_errors"], default=0.0) > self.tol:
            raise SolverError(f"backward error {max(info['backward_errors']):.2e} above tolerance")
        U = np.zeros((self.space.ndof, B.shape[1]))
        U[self.free] = X
        return (U if multi else U[:, 0]), info

    def h2_norms(self, U: np.ndarray) -> np.ndarray:
        """Broken H^2 norms (L2 + H1 + element Hessians) of the columns of U."""
        Uf = U[self.free] if U.ndim == 2 else U[self.free, None]
        return np.sqrt(np.maximum(np.einsum("ik,ik->k", Uf, self.norm_matrix @ Uf), 0.0))

    def dual_norm(self, density) -> DualNormReport:
        loads = apply_functional_to_basis(density, self.space)
        U, info = self.solve(loads)
        comp = self.h2_norms(U)
        return DualNormReport(comp.tolist(), float(np.sqrt(np.sum(comp**2))), self.space.order,
                              self.space.ndof, self.eta, info)


def hminus2_norm(density, mesh: SimplicialMesh, r: int, eta: float | None = None,
                 solver: BiharmonicSolver | None = None) -> DualNormReport:
    """H^-2 norm estimate of a functional on P_{r+2} (degree two above the metric)."""
    solver = solver or BiharmonicSolver(mesh, r + 2, eta)
    return solver.dual_norm(density)


def scalar_volume_density(f, mesh: SimplicialMesh, quad_degree: int) -> ScalarDensity:
    """v -> int f v dx for a scalar field f."""
    rule = simplex_rule(mesh.dim, quad_degree)
    Q = rule.points.shape[0]
    verts = mesh.vertices[mesh.cells]
    x = np.einsum("qk,ckn->cqn", rule.points, verts).reshape(-1, mesh.dim)
    cells = np.repeat(np.arange(mesh.n_cells), Q)
    w = (np.abs(np.linalg.det(mesh.cell_jacobians))[:, None] * rule.weights[None, :]).ravel()
    out = ScalarDensity()
    out.add("volume", cells, x, f.jet(cells, x, 0).value * w)
    return out
