"""Analytic and composite fields with exact derivative jets.

Every field implements ``jet(cells, x, order)`` where ``cells`` names the
mesh cell that owns each evaluation point (ignored by globally defined
fields) and ``x`` has shape (P, N). Tensor jets store the derivative indices
first: ``d1[p, l, i, j] = d_l T_ij`` and ``d2[p, l, m, i, j]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.polynomial import polynomial as P


@dataclass
class TensorJet:
    value: np.ndarray
    d1: np.ndarray | None = None
    d2: np.ndarray | None = None
    d3: np.ndarray | None = None

    def scaled(self, c: float) -> "TensorJet":
        return TensorJet(*(None if a is None else c * a for a in (self.value, self.d1, self.d2, self.d3)))


@dataclass
class ScalarJet:
    value: np.ndarray
    d1: np.ndarray | None = None
    d2: np.ndarray | None = None


class Polynomial:
    """Multivariate polynomial sum_k c_k prod_i x_i^{e_ki} with exact derivatives."""

    def __init__(self, exps, coefs, nvars: int | None = None):
        exps = np.asarray(exps, dtype=np.int64)
        coefs = np.asarray(coefs, dtype=float)
        if exps.ndim == 1:
            exps = exps.reshape(-1, nvars if nvars is not None else exps.size)
        if nvars is None:
            nvars = exps.shape[1]
        exps = exps.reshape(-1, nvars)
        # merge duplicates, drop zeros
        if exps.shape[0]:
            uniq, inv = np.unique(exps, axis=0, return_inverse=True)
            c = np.zeros(uniq.shape[0])
            np.add.at(c, inv.ravel(), coefs)
            keep = c != 0.0
            exps, coefs = uniq[keep], c[keep]
        self.nvars = nvars
        self.exps = exps
        self.coefs = coefs
        self._dense = None

    @classmethod
    def constant(cls, c: float, nvars: int) -> "Polynomial":
        return cls(np.zeros((1, nvars), dtype=np.int64), [c], nvars)

    @classmethod
    def coordinate(cls, i: int, nvars: int) -> "Polynomial":
        e = np.zeros((1, nvars), dtype=np.int64)
        e[0, i] = 1
        return cls(e, [1.0], nvars)

    @property
    def degree(self) -> int:
        return int(self.exps.sum(axis=1).max()) if self.exps.shape[0] else 0

    def __add__(self, other):
        if np.isscalar(other):
            other = Polynomial.constant(float(other), self.nvars)
        return Polynomial(np.vstack([self.exps, other.exps]),
                          np.concatenate([self.coefs, other.coefs]), self.nvars)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.exps, -self.coefs, self.nvars)

    def __sub__(self, other):
        return self + (-other if isinstance(other, Polynomial) else -float(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if np.isscalar(other):
            return Polynomial(self.exps, self.coefs * float(other), self.nvars)
        e = (self.exps[:, None, :] + other.exps[None, :, :]).reshape(-1, self.nvars)
        c = (self.coefs[:, None] * other.coefs[None, :]).ravel()
        return Polynomial(e, c, self.nvars)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        out = Polynomial.constant(1.0, self.nvars)
        for _ in range(k):
            out = out * self
        return out

    def diff(self, i: int) -> "Polynomial":
        e = self.exps.copy()
        c = self.coefs * e[:, i]
        e[:, i] = np.maximum(e[:, i] - 1, 0)
        return Polynomial(e, c, self.nvars)

    @property
    def dense(self) -> np.ndarray:
        """Coefficients as a dense array c[a_1, ..., a_n]."""
        if self._dense is None:
            dmax = int(self.exps.max()) if self.exps.shape[0] else 0
            c = np.zeros((dmax + 1,) * self.nvars)
            np.add.at(c, tuple(self.exps.T), self.coefs)
            self._dense = c
        return self._dense

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.exps.shape[0] == 0:
            return np.zeros(x.shape[0])
        c = self.dense
        if self.nvars == 1:
            return P.polyval(x[:, 0], c)
        if self.nvars == 2:
            return P.polyval2d(x[:, 0], x[:, 1], c)
        if self.nvars == 3:
            return P.polyval3d(x[:, 0], x[:, 1], x[:, 2], c)
        terms = np.prod(x[:, None, :] ** self.exps[None], axis=2)
        return terms @ self.coefs


class _PolyJetCache:
    """Derivative tables of a polynomial up to third order."""

    def __init__(self, p: Polynomial):
        self.p = p
        n = p.nvars
        self.d1 = [p.diff(i) for i in range(n)]
        self.d2 = [[self.d1[i].diff(j) for j in range(n)] for i in range(n)]
        self._d3 = None

    @property
    def d3(self):
        if self._d3 is None:
            n = self.p.nvars
            self._d3 = [[[self.d2[i][j].diff(k) for k in range(n)] for j in range(n)] for i in range(n)]
        return self._d3


class ScalarField:
    compact_support = False

    def jet(self, cells, x, order: int = 2) -> ScalarJet:
        raise NotImplementedError


class PolynomialScalarField(ScalarField):
    def __init__(self, poly: Polynomial, compact_support: bool = False):
        self.poly = poly
        self.compact_support = compact_support
        self._c = _PolyJetCache(poly)

    def jet(self, cells, x, order: int = 2) -> ScalarJet:
        n = self.poly.nvars
        v = self.poly(x)
        d1 = d2 = None
        if order >= 1:
            d1 = np.stack([q(x) for q in self._c.d1], axis=1)
        if order >= 2:
            d2 = np.empty((x.shape[0], n, n))
            for i in range(n):
                for j in range(i, n):
                    d2[:, i, j] = d2[:, j, i] = self._c.d2[i][j](x)
        return ScalarJet(v, d1, d2)


class ConstantScalar(ScalarField):
    def __init__(self, c: float, dim: int):
        self.c = float(c)
        self.dim = dim

    def jet(self, cells, x, order: int = 2) -> ScalarJet:
        P, N = x.shape
        return ScalarJet(np.full(P, self.c), np.zeros((P, N)), np.zeros((P, N, N)))


class TensorField:
    """Symmetric (0,2)-tensor field protocol."""

    compact_support = False
    dim: int

    def jet(self, cells, x, order: int = 2) -> TensorJet:
        raise NotImplementedError

    def __add__(self, other):
        return LinearCombination([(1.0, self), (1.0, other)])

    def __sub__(self, other):
        return LinearCombination([(1.0, self), (-1.0, other)])

    def __rmul__(self, c):
        return LinearCombination([(float(c), self)])


class PolynomialTensorField(TensorField):
    """Symmetric tensor field with polynomial components.

    ``comps`` is an N x N nested list of Polynomials (only i <= j is read).
    """

    def __init__(self, comps, compact_support: bool = False):
        self.dim = len(comps)
        self.comps = [[comps[min(i, j)][max(i, j)] for j in range(self.dim)] for i in range(self.dim)]
        self.compact_support = compact_support
        self._caches = {(i, j): _PolyJetCache(self.comps[i][j])
                        for i in range(self.dim) for j in range(i, self.dim)}

    @classmethod
    def from_scalar_times(cls, p: Polynomial, mat) -> "PolynomialTensorField":
        mat = np.asarray(mat, dtype=float)
        n = mat.shape[0]
        return cls([[p * mat[i, j] for j in range(n)] for i in range(n)])

    def jet(self, cells, x, order: int = 2) -> TensorJet:
        N = self.dim
        P = x.shape[0]
        val = np.empty((P, N, N))
        d1 = np.empty((P, N, N, N)) if order >= 1 else None
        d2 = np.empty((P, N, N, N, N)) if order >= 2 else None
        d3 = np.empty((P, N, N, N, N, N)) if order >= 3 else None
        for (i, j), c in self._caches.items():
            val[:, i, j] = val[:, j, i] = c.p(x)
            if order >= 1:
                for l in range(N):
                    d1[:, l, i, j] = d1[:, l, j, i] = c.d1[l](x)
            if order >= 2:
                for l in range(N):
                    for m in range(l, N):
                        v = c.d2[l][m](x)
                        d2[:, l, m, i, j] = d2[:, l, m, j, i] = v
                        d2[:, m, l, i, j] = d2[:, m, l, j, i] = v
            if order >= 3:
                for l in range(N):
                    for m in range(N):
                        for k in range(N):
                            d3[:, l, m, k, i, j] = d3[:, l, m, k, j, i] = c.d3[l][m][k](x)
        return TensorJet(val, d1, d2, d3)


class ConstantTensor(TensorField):
    def __init__(self, mat):
        self.mat = np.asarray(mat, dtype=float)
        self.dim = self.mat.shape[0]

    def jet(self, cells, x, order: int = 2) -> TensorJet:
        P, N = x.shape
        val = np.broadcast_to(self.mat, (P, N, N)).copy()
        z = [np.zeros((P,) + (N,) * (k + 2)) for k in range(1, order + 1)]
        return TensorJet(val, *z)


def euclidean(dim: int) -> ConstantTensor:
    return ConstantTensor(np.eye(dim))


class LinearCombination(TensorField):
    """sum_k c_k T_k; supports piecewise members (cells are forwarded)."""

    def __init__(self, terms):
        flat = []
        for c, f in terms:
            if isinstance(f, LinearCombination):
                flat.extend((c * c2, f2) for c2, f2 in f.terms)
            else:
                flat.append((float(c), f))
        self.terms = flat
        self.dim = flat[0][1].dim
        self.compact_support = all(f.compact_support for _, f in flat)

    def jet(self, cells, x, order: int = 2) -> TensorJet:
        out = None
        for c, f in self.terms:
            j = f.jet(cells, x, order)
            if out is None:
                out = j.scaled(c)
            else:
                for name in ("value", "d1", "d2", "d3"):
                    a, b = getattr(out, name), getattr(j, name)
                    if a is not None and b is not None:
                        setattr(out, name, a + c * b)
                    elif a is not None:
                        setattr(out, name, None)
        return out


def convex_combination(g: TensorField, gh: TensorField, t: float) -> LinearCombination:
    """(1 - t) g + t gh."""
    return LinearCombination([(1.0 - t, g), (t, gh)])


class ScalarTimesTensor(TensorField):
    """Pointwise product v * T via the product rule."""

    def __init__(self, v: ScalarField, T: TensorField):
        self.v = v
        self.T = T
        self.dim = T.dim
        self.compact_support = bool(v.compact_support or T.compact_support)

    def jet(self, cells, x, order: int = 2) -> TensorJet:
        s = self.v.jet(cells, x, min(order, 2))
        t = self.T.jet(cells, x, order)
        val = s.value[:, None, None] * t.value
        d1 = d2 = None
        if order >= 1:
            d1 = s.d1[:, :, None, None] * t.value[:, None] + s.value[:, None, None, None] * t.d1
        if order >= 2:
            d2 = (s.d2[:, :, :, None, None] * t.value[:, None, None]
                  + s.d1[:, :, None, None, None] * t.d1[:, None]
                  + s.d1[:, None, :, None, None] * t.d1[:, :, None]
                  + s.value[:, None, None, None, None] * t.d2)
        if order >= 3:
            raise NotImplementedError("third derivatives of products are not needed")
        return TensorJet(val, d1, d2)


def bump(dim: int, power: int = 2) -> Polynomial:
    """((1 - x_1^2) ... (1 - x_N^2))^power: vanishes with its first power-1
    derivatives on the boundary of (-1, 1)^N."""
    p = Polynomial.constant(1.0, dim)
    for i in range(dim):
        xi = Polynomial.coordinate(i, dim)
        p = p * (1.0 - xi * xi)
    return p**power


def random_polynomial(dim: int, degree: int, rng: np.random.Generator, scale: float = 1.0) -> Polynomial:
    exps = [e for e in np.ndindex(*(degree + 1,) * dim) if sum(e) <= degree]
    return Polynomial(np.array(exps), scale * rng.standard_normal(len(exps)), dim)


def random_tensor_field(dim: int, degree: int, rng: np.random.Generator, scale: float = 1.0,
                        compact: bool = False) -> PolynomialTensorField:
    """Random symmetric polynomial field; optionally multiplied by the bump."""
    B = bump(dim) if compact else Polynomial.constant(1.0, dim)
    comps = [[None] * dim for _ in range(dim)]
    for i in range(dim):
        for j in range(i, dim):
            comps[i][j] = B * random_polynomial(dim, degree, rng, scale)
    return PolynomialTensorField(comps, compact_support=compact)


def random_scalar_field(dim: int, degree: int, rng: np.random.Generator, scale: float = 1.0,
                        compact: bool = False) -> PolynomialScalarField:
    B = bump(dim) if compact else Polynomial.constant(1.0, dim)
    return PolynomialScalarField(B * random_polynomial(dim, degree, rng, scale), compact_support=compact)


def as_tensor_field(obj) -> TensorField:
    return obj


@dataclass
class GraphMetric(TensorField):
    """Metric g = I + grad f grad f^T induced by the graph of a polynomial f."""

    f: Polynomial

    def __post_init__(self):
        self.dim = self.f.nvars
        self.compact_support = False

    @cached_property
    def _fc(self) -> _PolyJetCache:
        return _PolyJetCache(self.f)

    def f_jets(self, x: np.ndarray, order: int):
        """Derivatives of f of orders 1..order+1 as dense arrays."""
        n = self.dim
        c = self._fc
        f1 = np.stack([q(x) for q in c.d1], axis=1)
        out = [f1]
        if order >= 1:
            f2 = np.empty((x.shape[0], n, n))
            for i in range(n):
                for j in range(i, n):
                    f2[:, i, j] = f2[:, j, i] = c.d2[i][j](x)
            out.append(f2)
        if order >= 2:
            f3 = np.empty((x.shape[0], n, n, n))
            for i in range(n):
                for j in range(n):
                    for k in range(n):
                        f3[:, i, j, k] = c.d3[i][j][k](x)
            out.append(f3)
        if order >= 3:
            f4 = np.empty((x.shape[0], n, n, n, n))
            for i in range(n):
                for j in range(n):
                    for k in range(n):
                        d = c.d3[i][j][k]
                        for l in range(n):
                            f4[:, i, j, k, l] = d.diff(l)(x)
            out.append(f4)
        return out

    def jet(self, cells, x, order: int = 2) -> TensorJet:
        fj = self.f_jets(x, order)
        f1 = fj[0]
        n = self.dim
        g = np.eye(n)[None] + f1[:, :, None] * f1[:, None, :]
        dg = d2g = d3g = None
        if order >= 1:
            f2 = fj[1]
            dg = np.einsum("pli,pj->plij", f2, f1)
            dg = dg + np.swapaxes(dg, 2, 3)
        if order >= 2:
            f3 = fj[2]
            a = np.einsum("pmli,pj->pmlij", f3, f1)
            b = np.einsum("pli,pmj->pmlij", f2, f2)
            d2g = a + np.swapaxes(a, 3, 4) + b + np.swapaxes(b, 3, 4)
        if order >= 3:
            f4 = fj[3]
            a = np.einsum("pnmli,pj->pnmlij", f4, f1)
            b = (np.einsum("pmli,pnj->pnmlij", f3, f2)
                 + np.einsum("pnli,pmj->pnmlij", f3, f2)
                 + np.einsum("pnmi,plj->pnmlij", f3, f2))
            d3g = a + np.swapaxes(a, 4, 5) + b + np.swapaxes(b, 4, 5)
        return TensorJet(g, dg, d2g, d3g)
