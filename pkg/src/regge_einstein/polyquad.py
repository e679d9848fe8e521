"""Barycentric monomial bases, L2 projection and simplex quadrature."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import modepy


class QuadratureError(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    """Rule on the reference simplex conv(0, e_1, ..., e_d).

    ``points`` are barycentric coordinates (Q, d+1), ``weights`` sum to 1/d!.
    """

    dim: int
    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int

    @property
    def reference_points(self) -> np.ndarray:
        return self.points[:, 1:]


@lru_cache(maxsize=None)
def simplex_rule(dim: int, exactness_degree: int) -> QuadratureRule:
    """Rule exact to the requested polynomial degree.

    Dimension 0 is the unit point mass, dimension 1 is Gauss-Legendre and
    dimensions 2 and 3 use positive-weight Xiao-Gimbutas rules where they
    exist, falling back to Grundmann-Moeller rules (some negative weights)
    for higher degrees.
    """
    deg = max(int(exactness_degree), 0)
    if dim == 0:
        return QuadratureRule(0, np.ones((1, 1)), np.ones(1), deg)
    if dim == 1:
        n = deg // 2 + 1
        x, w = np.polynomial.legendre.leggauss(n)
        t = 0.5 * (x + 1.0)
        pts = np.stack([1.0 - t, t], axis=1)
        return QuadratureRule(1, pts, 0.5 * w, 2 * n - 1)
    if dim in (2, 3):
        try:
            q = modepy.XiaoGimbutasSimplexQuadrature(max(deg, 1), dim)
        except modepy.QuadratureRuleUnavailable:
            if deg > 41:
                raise QuadratureError(f"no rule of degree {deg} in dimension {dim}") from None
            q = modepy.GrundmannMoellerSimplexQuadrature(deg // 2, dim)
        ref = 0.5 * (q.nodes.T + 1.0)
        pts = np.concatenate([1.0 - ref.sum(axis=1, keepdims=True), ref], axis=1)
        w = q.weights * 2.0**-dim
        return QuadratureRule(dim, pts, w, int(q.exact_to))
    raise QuadratureError(f"unsupported simplex dimension {dim}")


@dataclass(frozen=True)
class GaussLegendre01:
    """n-point Gauss-Legendre rule on [0, 1]."""

    n: int

    @property
    def points(self) -> np.ndarray:
        x, _ = np.polynomial.legendre.leggauss(self.n)
        return 0.5 * (x + 1.0)

    @property
    def weights(self) -> np.ndarray:
        _, w = np.polynomial.legendre.leggauss(self.n)
        return 0.5 * w


@lru_cache(maxsize=None)
def _exponents(nvars: int, degree: int) -> np.ndarray:
    out = [a for a in itertools.product(range(degree + 1), repeat=nvars) if sum(a) == degree]
    out.sort(reverse=True)
    return np.array(out, dtype=np.int64).reshape(-1, nvars)


class PolyBasis:
    """Homogeneous degree-r monomials in the dim+1 barycentric coordinates.

    They span P_r on the simplex and number C(dim + r, r).
    """

    def __init__(self, dim: int, degree: int):
        self.dim = dim
        self.degree = degree
        self.exponents = _exponents(dim + 1, degree)

    def __len__(self) -> int:
        return self.exponents.shape[0]

    def bary_jets(self, lam: np.ndarray, order: int = 2) -> list[np.ndarray]:
        """Values and lambda-derivatives up to ``order``.

        Returns [D0 (P,M), D1 (P,M,K), D2 (P,M,K,K), ...] with K = dim+1.
        """
        lam = np.asarray(lam, dtype=float)
        P, K = lam.shape
        r = self.degree
        pw = np.ones((r + 1, P, K))
        for k in range(1, r + 1):
            pw[k] = pw[k - 1] * lam
        E = self.exponents

        def mono(shift: np.ndarray) -> np.ndarray:
            # shift: (K,) derivative multi-index; returns (P, M)
            e = E - shift[None, :]
            coef = np.ones(E.shape[0])
            for a in range(K):
                for s in range(shift[a]):
                    coef = coef * (E[:, a] - s)
            ok = np.all(e >= 0, axis=1)
            e = np.where(e >= 0, e, 0)
            val = np.ones((P, E.shape[0]))
            for a in range(K):
                val = val * pw[e[:, a], :, a].T
            return val * (coef * ok)[None, :]

        out = [mono(np.zeros(K, dtype=np.int64))]
        for o in range(1, order + 1):
            D = np.zeros((P, E.shape[0]) + (K,) * o)
            for idx in itertools.product(range(K), repeat=o):
                shift = np.bincount(np.array(idx), minlength=K)
                D[(slice(None), slice(None)) + idx] = mono(shift)
            out.append(D)
        return out

    def physical_jets(self, lam: np.ndarray, A: np.ndarray, order: int = 2) -> list[np.ndarray]:
        """Jets in Euclidean coordinates; A (P, K, N) is d(lambda)/dx."""
        bj = self.bary_jets(lam, order)
        out = [bj[0]]
        if order >= 1:
            out.append(np.einsum("pma,pal->pml", bj[1], A))
        if order >= 2:
            out.append(np.einsum("pmab,pal,pbk->pmlk", bj[2], A, A))
        if order >= 3:
            out.append(np.einsum("pmabc,pal,pbk,pcj->pmlkj", bj[3], A, A, A))
        return out


@lru_cache(maxsize=None)
def reference_mass(dim: int, degree: int) -> np.ndarray:
    """Gram matrix of the basis on the reference simplex (volume 1/dim!)."""
    basis = PolyBasis(dim, degree)
    q = simplex_rule(dim, 2 * degree)
    phi = basis.bary_jets(q.points, 0)[0]
    return np.einsum("q,qi,qj->ij", q.weights, phi, phi)


def l2_project_element(field, mesh, degree: int, cells: np.ndarray | None = None,
                       quad_degree: int | None = None) -> np.ndarray:
    """Per-cell L2 projection of a tensor field onto P_r, component-wise.

    Returns coefficients of shape (C, M, N, N).
    """
    if cells is None:
        cells = np.arange(mesh.n_cells)
    N = mesh.dim
    qd = 2 * degree + 4 if quad_degree is None else quad_degree
    q = simplex_rule(N, qd)
    basis = PolyBasis(N, degree)
    phi = basis.bary_jets(q.points, 0)[0]  # (Q, M)
    G = reference_mass(N, degree)
    try:
        np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("singular element Gram matrix") from None
    verts = mesh.vertices[mesh.cells[cells]]  # (C, N+1, N)
    x = np.einsum("qk,ckn->cqn", q.points, verts).reshape(-1, N)
    cc = np.repeat(cells, q.points.shape[0])
    vals = field.jet(cc, x, 0).value.reshape(len(cells), -1, N, N)
    rhs = np.einsum("q,qm,cqij->cmij", q.weights, phi, vals)
    Ginv = np.linalg.inv(G)
    # The |T| factors cancel between mass matrix and load.
    return np.einsum("mk,ckij->cmij", Ginv, rhs)


def eval_poly_jet(coeffs: np.ndarray, basis: PolyBasis, lam: np.ndarray, A: np.ndarray,
                  order: int = 2) -> list[np.ndarray]:
    """Exact jets of per-point polynomial tensors.

    coeffs (P, M, ...) are basis coefficients of the owning cell at each point.
    Returns [value, grad, hess, ...] with derivative indices placed first
    after the point axis, e.g. grad[p, l, ...] = d/dx_l.
    """
    jets = basis.physical_jets(lam, A, order)
    out = [np.einsum("pm,pm...->p...", jets[0], coeffs)]
    if order >= 1:
        out.append(np.einsum("pml,pm...->pl...", jets[1], coeffs))
    if order >= 2:
        out.append(np.einsum("pmlk,pm...->plk...", jets[2], coeffs))
    if order >= 3:
        out.append(np.einsum("pmlkj,pm...->plkj...", jets[3], coeffs))
    return out


def reference_monomial_integral(exps) -> float:
    """Closed form of the integral of prod(x_i^a_i) over the reference simplex."""
    exps = list(exps)
    d = len(exps)
    return math.prod(math.factorial(a) for a in exps) / math.factorial(sum(exps) + d)
