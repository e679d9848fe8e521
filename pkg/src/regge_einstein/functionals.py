"""Distributional curvature functionals and the bilinear forms of their variation.

Every functional that is linear in a tensor test field rho and needs only
the values of rho is represented as a :class:`TensorDensity`: a list of
points (with owning cells) and weight matrices M such that

    f(rho) = sum_p M_p : rho(x_p).

This covers the distributional Einstein functional, the bilinear forms
B_h(g; sigma, .) and A_h(g; sigma, .), the error representation and the
codimension-2 functionals, and lets the same objects be paired with smooth
test fields or assembled against finite element bases.

Jumps across facets are sums over the adjacent cells, each with its own
outward g-unit normal; boundary facets contribute one term. Angle defects
use m_S = 1 on boundary ridges and 2 otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .fields import LinearCombination, ScalarField, ScalarTimesTensor, TensorField
from .mesh import SimplicialMesh
from .polyquad import GaussLegendre01
from .regge import convex_combination
from .samples import MeshSamples, QuadSpec, mesh_samples
from .tensorcalc import Metric, NotSPDError

CHUNK = 16384
PARTS = ("volume", "facet", "ridge")


class SPDError(NotSPDError):
    pass


@dataclass
class PairingReport:
    volume_part: float
    facet_part: float
    ridge_part: float

    @property
    def total(self) -> float:
        return (self.volume_part + self.facet_part) + self.ridge_part

    def to_dict(self) -> dict:
        return {"volume_part": self.volume_part, "facet_part": self.facet_part,
                "ridge_part": self.ridge_part, "total": self.total}


@dataclass
class TensorDensity:
    dim: int
    blocks: dict = field(default_factory=lambda: {p: [] for p in PARTS})

    def add(self, part: str, cells, x, M) -> None:
        if len(cells):
            self.blocks[part].append((np.asarray(cells), np.asarray(x), np.asarray(M)))

    def scaled(self, c: float) -> "TensorDensity":
        out = TensorDensity(self.dim)
        for p in PARTS:
            out.blocks[p] = [(ce, x, c * M) for ce, x, M in self.blocks[p]]
        return out

    def extend(self, other: "TensorDensity", c: float = 1.0) -> "TensorDensity":
        for p in PARTS:
            self.blocks[p].extend((ce, x, c * M) for ce, x, M in other.blocks[p])
        return self

    def arrays(self, part: str | None = None):
        parts = PARTS if part is None else (part,)
        bl = [b for p in parts for b in self.blocks[p]]
        if not bl:
            N = self.dim
            return np.zeros(0, dtype=np.int64), np.zeros((0, N)), np.zeros((0, N, N))
        return tuple(np.concatenate(a) for a in zip(*bl))

    def apply(self, rho: TensorField) -> PairingReport:
        vals = []
        for p in PARTS:
            parts = []
            for ce, x, M in self.blocks[p]:
                for a in range(0, len(ce), CHUNK):
                    sl = slice(a, a + CHUNK)
                    r = rho.jet(ce[sl], x[sl], 0).value
                    parts.append(np.einsum("pij,pij->p", M[sl], r))
            s = float(np.sum(np.concatenate(parts))) if parts else 0.0
            vals.append(s)
        return PairingReport(*vals)


@dataclass
class ScalarDensity:
    blocks: dict = field(default_factory=lambda: {p: [] for p in PARTS})

    def add(self, part: str, cells, x, c) -> None:
        if len(cells):
            self.blocks[part].append((np.asarray(cells), np.asarray(x), np.asarray(c)))

    def apply(self, v: ScalarField) -> PairingReport:
        vals = []
        for p in PARTS:
            parts = [c * v.jet(ce, x, 0).value for ce, x, c in self.blocks[p]]
            vals.append(float(np.sum(np.concatenate(parts))) if parts else 0.0)
        return PairingReport(*vals)


# ---------------------------------------------------------------------------
# evaluation helpers

def _chunks(n: int):
    for a in range(0, n, CHUNK):
        yield slice(a, min(a + CHUNK, n))


def _metric(gsrc: TensorField, cells, x, order: int):
    tj = gsrc.jet(cells, x, order)
    try:
        m = Metric(tj.value)
    except NotSPDError:
        ev = np.linalg.eigvalsh(tj.value)[:, 0]
        bad = int(np.argmax(ev <= 0))
        raise SPDError(f"metric is not positive definite in cell {int(cells[bad])} "
                       f"at x={x[bad].tolist()}") from None
    chris = None
    if order >= 1:
        jet = geo.MetricJet(tj.value, tj.d1, tj.d2 if order >= 2 else None)
        chris = geo.christoffel(jet, order=1 if order >= 2 else 0)
        return jet, m, chris
    return geo.MetricJet(tj.value, None, None), m, chris


def _restrict(s, X):
    return np.swapaxes(X, 1, 2) @ s @ X


def _raise(s, m: Metric):
    return m.inv @ s @ m.inv


def _sym(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _push(K, X):
    """X K X^T: tangential (0,2)-coefficient to ambient weight matrix."""
    return X @ K @ np.swapaxes(X, 1, 2)


def _interior_flag(interior_only, *fields) -> bool:
    compact = any(getattr(f, "compact_support", False) for f in fields)
    if interior_only is None:
        return compact
    if interior_only and not compact:
        raise ValueError("interior-only sums require a compactly supported test field")
    return bool(interior_only)


@dataclass
class FacetGeometry:
    metric: Metric
    jet: geo.MetricJet
    chris: geo.ChristoffelJet
    n: np.ndarray
    gF: Metric
    omega: np.ndarray
    II: np.ndarray
    IIbar: np.ndarray
    H: np.ndarray


def _facet_geometry(gsrc, fs, sl) -> FacetGeometry:
    jet, m, chris = _metric(gsrc, fs.cells[sl], fs.x[sl], 1)
    X = fs.X[sl]
    n = geo.unit_normal(m, fs.conormal[sl])
    gF = Metric(_restrict(m.g, X))
    II = geo.second_fundamental_form(chris.gam, m.g, n, X)
    H = geo.mean_curvature(II, gF)
    IIbar = II - H[:, None, None] * gF.g
    return FacetGeometry(m, jet, chris, n, gF, gF.sqrt_det, II, IIbar, H)


def _angle_defects(gsrc, S: MeshSamples) -> np.ndarray:
    """Theta at every ridge point (indexed like S.ridges)."""
    rc = S.ridge_cells
    R = S.ridges
    theta_sum = np.zeros(len(R.ridge))
    for sl in _chunks(len(rc.cells)):
        _, m, _ = _metric(gsrc, rc.cells[sl], rc.x[sl], 0)
        n0 = geo.unit_normal(m, rc.conormals[sl, 0])
        n1 = geo.unit_normal(m, rc.conormals[sl, 1])
        th = geo.dihedral_angle(m.g, n0, n1)
        theta_sum += np.bincount(rc.ridge_point[sl], weights=th, minlength=len(R.ridge))
    return R.multiplicity * np.pi - theta_sum


def angle_defect(gsrc: TensorField, mesh: SimplicialMesh, quad: QuadSpec | None = None) -> np.ndarray:
    """Angle defect at the ridge quadrature points, shape (n_ridges, Q)."""
    S = mesh_samples(mesh, quad or QuadSpec.for_order(0))
    Th = _angle_defects(gsrc, S)
    return Th.reshape(mesh.topology.count(mesh.dim - 2), -1)


def _ridge_normals(gsrc, rc, sl, order=0):
    jet, m, chris = _metric(gsrc, rc.cells[sl], rc.x[sl], order)
    ns = [geo.unit_normal(m, rc.conormals[sl, j]) for j in range(2)]
    # outward conormal of each facet along the ridge (points from the facet to the ridge)
    nus = [-geo.conormal_nu(m.g, rc.XS[sl], rc.into_facet[sl, j]) for j in range(2)]
    gS = Metric(_restrict(m.g, rc.XS[sl]), check=rc.XS.shape[-1] > 0)
    return m, ns, nus, gS


def _samples(mesh, quad, r_hint=1) -> MeshSamples:
    return mesh_samples(mesh, quad or QuadSpec.for_order(r_hint))


# ---------------------------------------------------------------------------
# distributional Einstein and scalar curvature

def einstein_density(gsrc: TensorField, mesh: SimplicialMesh, quad: QuadSpec | None = None,
                     interior_only: bool = False) -> TensorDensity:
    S = _samples(mesh, quad)
    N = mesh.dim
    out = TensorDensity(N)
    vs = S.volume
    for sl in _chunks(len(vs.cells)):
        jet, m, chris = _metric(gsrc, vs.cells[sl], vs.x[sl], 2)
        G = geo.curvature(jet, chris).einstein
        out.add("volume", vs.cells[sl], vs.x[sl], (m.sqrt_det * vs.w[sl])[:, None, None] * _raise(G, m))
    fs = S.facet_sides
    for sl in _chunks(len(fs.cells)):
        keep = ~fs.boundary[sl] if interior_only else slice(None)
        fg = _facet_geometry(gsrc, fs, sl)
        M = (fg.omega * fs.w[sl])[:, None, None] * _push(_raise(fg.IIbar, fg.gF), fs.X[sl])
        out.add("facet", fs.cells[sl][keep], fs.x[sl][keep], M[keep])
    if N >= 3:
        Th = _angle_defects(gsrc, S)
        R = S.ridges
        for sl in _chunks(len(R.cells)):
            keep = ~R.boundary[sl] if interior_only else slice(None)
            _, m, _ = _metric(gsrc, R.cells[sl], R.x[sl], 0)
            gS = Metric(_restrict(m.g, R.XS[sl]))
            M = -(Th[sl] * gS.sqrt_det * R.w[sl])[:, None, None] * _push(gS.inv, R.XS[sl])
            out.add("ridge", R.cells[sl][keep], R.x[sl][keep], M[keep])
    return out


def classical_density(g: TensorField, mesh: SimplicialMesh, quad: QuadSpec | None = None) -> TensorDensity:
    """rho -> int <G(g), rho> omega(g) by cell quadrature."""
    S = _samples(mesh, quad)
    out = TensorDensity(mesh.dim)
    vs = S.volume
    for sl in _chunks(len(vs.cells)):
        jet, m, chris = _metric(g, vs.cells[sl], vs.x[sl], 2)
        G = geo.curvature(jet, chris).einstein
        out.add("volume", vs.cells[sl], vs.x[sl], (m.sqrt_det * vs.w[sl])[:, None, None] * _raise(G, m))
    return out


def pair_einstein_dist(gsrc, rho: TensorField, mesh, quad=None, interior_only=None) -> PairingReport:
    io = _interior_flag(interior_only, rho)
    return einstein_density(gsrc, mesh, quad, io).apply(rho)


def pair_classical(g, rho: TensorField, mesh, quad=None) -> float:
    return classical_density(g, mesh, quad).apply(rho).total


def scalar_density(gsrc: TensorField, mesh: SimplicialMesh, quad: QuadSpec | None = None,
                   interior_only: bool = False) -> ScalarDensity:
    """v -> sum int R v omega + 2 sum int [[H]] v + 2 sum int Theta v."""
    S = _samples(mesh, quad)
    out = ScalarDensity()
    vs = S.volume
    for sl in _chunks(len(vs.cells)):
        jet, m, chris = _metric(gsrc, vs.cells[sl], vs.x[sl], 2)
        R = geo.curvature(jet, chris).scalar
        out.add("volume", vs.cells[sl], vs.x[sl], R * m.sqrt_det * vs.w[sl])
    fs = S.facet_sides
    for sl in _chunks(len(fs.cells)):
        keep = ~fs.boundary[sl] if interior_only else slice(None)
        fg = _facet_geometry(gsrc, fs, sl)
        out.add("facet", fs.cells[sl][keep], fs.x[sl][keep], (2.0 * fg.H * fg.omega * fs.w[sl])[keep])
    Th = _angle_defects(gsrc, S)
    R = S.ridges
    for sl in _chunks(len(R.cells)):
        keep = ~R.boundary[sl] if interior_only else slice(None)
        _, m, _ = _metric(gsrc, R.cells[sl], R.x[sl], 0)
        gS = Metric(_restrict(m.g, R.XS[sl]), check=R.XS.shape[-1] > 0)
        out.add("ridge", R.cells[sl][keep], R.x[sl][keep], (2.0 * Th[sl] * gS.sqrt_det * R.w[sl])[keep])
    return out


def pair_scalar_dist(gsrc, v: ScalarField, mesh, quad=None, interior_only=None) -> PairingReport:
    io = _interior_flag(interior_only, v)
    return scalar_density(gsrc, mesh, quad, io).apply(v)


# ---------------------------------------------------------------------------
# bilinear forms

def Bh_density(gsrc: TensorField, sigma: TensorField, mesh: SimplicialMesh, quad: QuadSpec | None = None,
               form: str = "simpler", interior_only: bool = False) -> TensorDensity:
    """rho -> B_h(g; sigma, rho)."""
    if form not in ("simpler", "expanded"):
        raise ValueError(f"unknown B_h form {form!r}")
    S = _samples(mesh, quad)
    N = mesh.dim
    out = TensorDensity(N)
    vs = S.volume
    for sl in _chunks(len(vs.cells)):
        jet, m, chris = _metric(gsrc, vs.cells[sl], vs.x[sl], 2)
        sj = sigma.jet(vs.cells[sl], vs.x[sl], 2)
        nn = geo.second_covariant_derivative(sj.value, sj.d1, sj.d2, chris)
        ein = geo.ein_operator(nn, m)
        out.add("volume", vs.cells[sl], vs.x[sl], (m.sqrt_det * vs.w[sl])[:, None, None] * _raise(ein, m))
    fs = S.facet_sides
    for sl in _chunks(len(fs.cells)):
        keep = ~fs.boundary[sl] if interior_only else slice(None)
        fg = _facet_geometry(gsrc, fs, sl)
        X = fs.X[sl]
        sj = sigma.jet(fs.cells[sl], fs.x[sl], 1)
        ns = geo.covariant_derivative(sj.value, sj.d1, fg.chris.gam)
        snn = np.einsum("pi,pij,pj->p", fg.n, sj.value, fg.n)
        grad_n = np.einsum("pc,pcij,pia,pjb->pab", fg.n, ns, X, X)
        gradF_n = np.einsum("pla,plij,pi,pjb->pab", X, ns, fg.n, X)
        if form == "simpler":
            dn = geo.unit_normal_derivative(fg.metric, fg.chris.dginv, fs.conormal[sl])
            sd = geo.surface_derivatives(sj.value, sj.d1, ns, fg.chris.gam, fg.n, dn, X, fg.gF)
            tau = snn[:, None, None] * fg.II + grad_n - gradF_n - sd.gradF_sn
            tau = _sym(tau)
            K = _raise(tau - fg.gF.g * np.einsum("pab,pab->p", fg.gF.inv, tau)[:, None, None], fg.gF)
        else:
            t2 = _sym(grad_n - 2.0 * gradF_n)
            St2 = t2 - fg.gF.g * np.einsum("pab,pab->p", fg.gF.inv, t2)[:, None, None]
            sF = _restrict(sj.value, X)
            K = _raise(snn[:, None, None] * fg.IIbar + St2, fg.gF)
            K = K + np.einsum("pab,pab->p", _raise(sF, fg.gF), fg.II)[:, None, None] * fg.gF.inv
            K = K - _sym(fg.gF.inv @ sF @ fg.gF.inv @ fg.II @ fg.gF.inv)
        M = (0.5 * fg.omega * fs.w[sl])[:, None, None] * _push(K, X)
        out.add("facet", fs.cells[sl][keep], fs.x[sl][keep], M[keep])
    if N >= 3:
        rc = S.ridge_cells
        for sl in _chunks(len(rc.cells)):
            keep = ~rc.boundary[sl] if interior_only else slice(None)
            m, ns_, nus, gS = _ridge_normals(gsrc, rc, sl)
            sv = sigma.jet(rc.cells[sl], rc.x[sl], 0).value
            jump = sum(np.einsum("pi,pij,pj->p", ns_[j], sv, nus[j]) for j in range(2))
            M = -(0.5 * jump * gS.sqrt_det * rc.w[sl])[:, None, None] * _push(gS.inv, rc.XS[sl])
            out.add("ridge", rc.cells[sl][keep], rc.x[sl][keep], M[keep])
    return out


def Ah_density(gsrc: TensorField, sigma: TensorField, mesh: SimplicialMesh, quad: QuadSpec | None = None,
               interior_only: bool = False) -> TensorDensity:
    """rho -> A_h(g; sigma, rho)."""
    S = _samples(mesh, quad)
    N = mesh.dim
    out = TensorDensity(N)
    vs = S.volume
    for sl in _chunks(len(vs.cells)):
        jet, m, chris = _metric(gsrc, vs.cells[sl], vs.x[sl], 2)
        cv = geo.curvature(jet, chris)
        s = sigma.jet(vs.cells[sl], vs.x[sl], 0).value
        gi = m.inv
        s_up = _raise(s, m)
        trs = np.einsum("pij,pij->p", gi, s)
        ric_s = np.einsum("pij,pij->p", _raise(cv.ric, m), s)
        T = np.einsum("pabjl,pal->pbj", cv.riem, s_up)
        K = 2.0 * _sym(gi @ T @ gi)
        K += ric_s[:, None, None] * gi
        K += trs[:, None, None] * _raise(cv.ric, m)
        Js = s - 0.5 * trs[:, None, None] * m.g
        K += cv.scalar[:, None, None] * _raise(Js, m)
        K -= 2.0 * _sym(gi @ s @ gi @ cv.ric @ gi)
        out.add("volume", vs.cells[sl], vs.x[sl], (0.5 * m.sqrt_det * vs.w[sl])[:, None, None] * K)
    fs = S.facet_sides
    for sl in _chunks(len(fs.cells)):
        keep = ~fs.boundary[sl] if interior_only else slice(None)
        fg = _facet_geometry(gsrc, fs, sl)
        X = fs.X[sl]
        sF = _restrict(sigma.jet(fs.cells[sl], fs.x[sl], 0).value, X)
        gFi = fg.gF.inv
        I = fg.IIbar
        trsF = np.einsum("pab,pab->p", gFi, sF)
        K = -3.0 * _sym(gFi @ sF @ gFi @ I @ gFi)
        K += np.einsum("pab,pab->p", _raise(I, fg.gF), sF)[:, None, None] * gFi
        K += trsF[:, None, None] * _raise(I, fg.gF)
        SFs = sF - trsF[:, None, None] * fg.gF.g
        K -= fg.H[:, None, None] * _raise(SFs, fg.gF)
        M = (0.5 * fg.omega * fs.w[sl])[:, None, None] * _push(K, X)
        out.add("facet", fs.cells[sl][keep], fs.x[sl][keep], M[keep])
    if N >= 3:
        Th = _angle_defects(gsrc, S)
        R = S.ridges
        for sl in _chunks(len(R.cells)):
            keep = ~R.boundary[sl] if interior_only else slice(None)
            _, m, _ = _metric(gsrc, R.cells[sl], R.x[sl], 0)
            XS = R.XS[sl]
            gS = Metric(_restrict(m.g, XS))
            sS = _restrict(sigma.jet(R.cells[sl], R.x[sl], 0).value, XS)
            trsS = np.einsum("pab,pab->p", gS.inv, sS)
            th = Th[sl]
            K = 2.0 * th[:, None, None] * _raise(sS, gS) - (th * trsS)[:, None, None] * gS.inv
            M = (0.5 * gS.sqrt_det * R.w[sl])[:, None, None] * _push(K, XS)
            out.add("ridge", R.cells[sl][keep], R.x[sl][keep], M[keep])
    return out


def _io_pair(interior_only, sigma, rho):
    if interior_only is None:
        return bool(getattr(sigma, "compact_support", False) or getattr(rho, "compact_support", False))
    return _interior_flag(interior_only, sigma, rho)


def bilinear_Bh(gsrc, sigma, rho, mesh, quad=None, form="simpler", interior_only=None) -> float:
    io = _io_pair(interior_only, sigma, rho)
    return Bh_density(gsrc, sigma, mesh, quad, form, io).apply(rho).total


def bilinear_Ah(gsrc, sigma, rho, mesh, quad=None, interior_only=None) -> float:
    io = _io_pair(interior_only, sigma, rho)
    return Ah_density(gsrc, sigma, mesh, quad, io).apply(rho).total


def bilinear_ah(gsrc, sigma: TensorField, v: ScalarField, mesh, quad=None) -> float:
    """a_h(g; sigma, v), the distributional Einstein functional applied to v sigma."""
    io = bool(getattr(v, "compact_support", False) or getattr(sigma, "compact_support", False))
    return einstein_density(gsrc, mesh, quad, io).apply(ScalarTimesTensor(v, sigma)).total


def bh_divdiv_density(gsrc: TensorField, sigma: TensorField, mesh: SimplicialMesh,
                      quad: QuadSpec | None = None, interior_only: bool = False) -> ScalarDensity:
    S = _samples(mesh, quad)
    N = mesh.dim
    out = ScalarDensity()
    vs = S.volume
    for sl in _chunks(len(vs.cells)):
        jet, m, chris = _metric(gsrc, vs.cells[sl], vs.x[sl], 2)
        sj = sigma.jet(vs.cells[sl], vs.x[sl], 2)
        nn = geo.second_covariant_derivative(sj.value, sj.d1, sj.d2, chris)
        out.add("volume", vs.cells[sl], vs.x[sl], geo.divdiv_S(nn, m) * m.sqrt_det * vs.w[sl])
    fs = S.facet_sides
    for sl in _chunks(len(fs.cells)):
        keep = ~fs.boundary[sl] if interior_only else slice(None)
        fg = _facet_geometry(gsrc, fs, sl)
        sj = sigma.jet(fs.cells[sl], fs.x[sl], 1)
        ns = geo.covariant_derivative(sj.value, sj.d1, fg.chris.gam)
        gi = fg.metric.inv
        div_s = geo.divergence(ns, fg.metric)
        dtr = np.einsum("pkl,pbkl->pb", gi, ns)
        divS_n = np.einsum("pj,pj->p", div_s - dtr, fg.n)
        dn = geo.unit_normal_derivative(fg.metric, fg.chris.dginv, fs.conormal[sl])
        sd = geo.surface_derivatives(sj.value, sj.d1, ns, fg.chris.gam, fg.n, dn, fs.X[sl], fg.gF)
        snn = np.einsum("pi,pij,pj->p", fg.n, sj.value, fg.n)
        c = -(divS_n + sd.divF_sn - fg.H * snn) * fg.omega * fs.w[sl]
        out.add("facet", fs.cells[sl][keep], fs.x[sl][keep], c[keep])
    rc = S.ridge_cells
    for sl in _chunks(len(rc.cells)):
        keep = ~rc.boundary[sl] if interior_only else slice(None)
        m, ns_, nus, gS = _ridge_normals(gsrc, rc, sl)
        sv = sigma.jet(rc.cells[sl], rc.x[sl], 0).value
        jump = sum(np.einsum("pi,pij,pj->p", ns_[j], sv, nus[j]) for j in range(2))
        out.add("ridge", rc.cells[sl][keep], rc.x[sl][keep], (jump * gS.sqrt_det * rc.w[sl])[keep])
    return out


def bh_hessian(gsrc: TensorField, sigma: TensorField, v: ScalarField, mesh: SimplicialMesh,
               quad: QuadSpec | None = None, interior_only: bool = False) -> PairingReport:
    S = _samples(mesh, quad)
    vs = S.volume
    vol = []
    for sl in _chunks(len(vs.cells)):
        jet, m, chris = _metric(gsrc, vs.cells[sl], vs.x[sl], 1)
        s = sigma.jet(vs.cells[sl], vs.x[sl], 0).value
        vj = v.jet(vs.cells[sl], vs.x[sl], 2)
        hess = geo.scalar_hessian(vj.d1, vj.d2, chris.gam)
        Ss = s - np.einsum("pij,pij->p", m.inv, s)[:, None, None] * m.g
        vol.append(np.einsum("pij,pij->p", _raise(Ss, m), hess) * m.sqrt_det * vs.w[sl])
    fs = S.facet_sides
    fac = []
    for sl in _chunks(len(fs.cells)):
        fg = _facet_geometry(gsrc, fs, sl)
        s = sigma.jet(fs.cells[sl], fs.x[sl], 0).value
        vj = v.jet(fs.cells[sl], fs.x[sl], 1)
        Ss = s - np.einsum("pij,pij->p", fg.metric.inv, s)[:, None, None] * fg.metric.g
        Snn = np.einsum("pi,pij,pj->p", fg.n, Ss, fg.n)
        dvn = np.einsum("pi,pi->p", vj.d1, fg.n)
        c = -Snn * dvn * fg.omega * fs.w[sl]
        if interior_only:
            c = c[~fs.boundary[sl]]
        fac.append(c)
    return PairingReport(float(np.sum(np.concatenate(vol))), float(np.sum(np.concatenate(fac))), 0.0)


def bilinear_bh(gsrc, sigma, v, mesh, quad=None, form="divdiv", interior_only=None) -> float:
    io = _io_pair(interior_only, sigma, v)
    if form == "divdiv":
        return bh_divdiv_density(gsrc, sigma, mesh, quad, io).apply(v).total
    if form == "hessian":
        return bh_hessian(gsrc, sigma, v, mesh, quad, io).total
    raise ValueError(f"unknown b_h form {form!r}")


# ---------------------------------------------------------------------------
# evolution, error representation, codimension-2 functionals

@dataclass
class EvolutionCheck:
    fd_derivative: float
    forms: float

    @property
    def residual(self) -> float:
        return abs(self.fd_derivative - self.forms)


def evolution_check(g0: TensorField, g1: TensorField, rho: TensorField, mesh: SimplicialMesh,
                    t: float, dt: float, quad: QuadSpec | None = None) -> EvolutionCheck:
    """Central difference of <(G omega)_dist(g(t)), rho> along g(t) = (1-t) g0 + t g1
    against B_h + A_h with sigma = g1 - g0."""
    io = bool(rho.compact_support)
    sigma = g1 - g0

    def fam(s):
        return LinearCombination([(1.0 - s, g0), (s, g1)])

    fp = einstein_density(fam(t + dt), mesh, quad, io).apply(rho).total
    fm = einstein_density(fam(t - dt), mesh, quad, io).apply(rho).total
    g = fam(t)
    forms = (Bh_density(g, sigma, mesh, quad, "simpler", io).apply(rho).total
             + Ah_density(g, sigma, mesh, quad, io).apply(rho).total)
    return EvolutionCheck((fp - fm) / (2.0 * dt), forms)


def _t_nodes(n_gauss: int):
    if n_gauss not in (5, 7):
        raise ValueError("n_gauss must be 5 or 7")
    q = GaussLegendre01(n_gauss)
    return q.points, q.weights


def error_density(g: TensorField, gh: TensorField, mesh: SimplicialMesh, n_gauss: int = 5,
                  quad: QuadSpec | None = None, interior_only: bool = False) -> TensorDensity:
    """rho -> int_0^1 (B_h + A_h)(g~(t); gh - g, rho) dt by Gauss-Legendre in t."""
    sigma = gh - g
    out = TensorDensity(mesh.dim)
    for t, w in zip(*_t_nodes(n_gauss)):
        gt = convex_combination(g, gh, float(t))
        try:
            out.extend(Bh_density(gt, sigma, mesh, quad, "simpler", interior_only), w)
            out.extend(Ah_density(gt, sigma, mesh, quad, interior_only), w)
        except NotSPDError as e:
            raise SPDError(f"{e} (t = {t:.6f})") from None
    return out


def error_pairing(g, gh, rho, mesh, n_gauss=5, quad=None) -> float:
    return error_density(g, gh, mesh, n_gauss, quad, bool(rho.compact_support)).apply(rho).total


def direct_error_density(g: TensorField, gh: TensorField, mesh: SimplicialMesh,
                         quad: QuadSpec | None = None) -> TensorDensity:
    """rho -> <(G omega)_dist(gh) - (G omega)(g), rho>."""
    return einstein_density(gh, mesh, quad).extend(classical_density(g, mesh, quad), -1.0)


@dataclass
class Codim2Densities:
    F1: TensorDensity
    F2: TensorDensity

    @property
    def F3(self) -> TensorDensity:
        return TensorDensity(self.F1.dim).extend(self.F1).extend(self.F2)


def codim2_densities(g: TensorField, gh: TensorField, mesh: SimplicialMesh, n_gauss: int = 5,
                     quad: QuadSpec | None = None) -> Codim2Densities:
    """Interior-ridge functionals F1 (normal-conormal jumps) and F2 (angle-defect terms)."""
    sigma = gh - g
    S = _samples(mesh, quad)
    N = mesh.dim
    F1 = TensorDensity(N)
    F2 = TensorDensity(N)
    rc = S.ridge_cells
    R = S.ridges
    for t, wt in zip(*_t_nodes(n_gauss)):
        gt = convex_combination(g, gh, float(t))
        try:
            for sl in _chunks(len(rc.cells)):
                keep = ~rc.boundary[sl]
                m, ns_, nus, gS = _ridge_normals(gt, rc, sl)
                sS = _restrict(sigma.jet(rc.cells[sl], rc.x[sl], 0).value, rc.XS[sl])
                trsS = np.einsum("pab,pab->p", gS.inv, sS)
                c = -0.5 * wt * trsS * gS.sqrt_det * rc.w[sl]
                for j in range(2):
                    M = c[:, None, None] * _sym(ns_[j][:, :, None] * nus[j][:, None, :])
                    F1.add("ridge", rc.cells[sl][keep], rc.x[sl][keep], M[keep])
            Th = _angle_defects(gt, S)
            for sl in _chunks(len(R.cells)):
                keep = ~R.boundary[sl]
                _, m, _ = _metric(gt, R.cells[sl], R.x[sl], 0)
                XS = R.XS[sl]
                gS = Metric(_restrict(m.g, XS))
                sS = _restrict(sigma.jet(R.cells[sl], R.x[sl], 0).value, XS)
                trsS = np.einsum("pab,pab->p", gS.inv, sS)
                th = Th[sl]
                K = 2.0 * th[:, None, None] * _raise(sS, gS) - (th * trsS)[:, None, None] * gS.inv
                M = (0.5 * wt * gS.sqrt_det * R.w[sl])[:, None, None] * _push(K, XS)
                F2.add("ridge", R.cells[sl][keep], R.x[sl][keep], M[keep])
        except NotSPDError as e:
            raise SPDError(f"{e} (t = {t:.6f})") from None
    return Codim2Densities(F1, F2)


def codim2_functionals(g, gh, rho: TensorField, mesh, n_gauss: int = 5, quad=None) -> tuple[float, float, float]:
    d = codim2_densities(g, gh, mesh, n_gauss, quad)
    f1 = d.F1.apply(rho).total
    f2 = d.F2.apply(rho).total
    return f1, f2, f1 + f2


def euclidean_ein_pairing(sigma: TensorField, rho: TensorField, mesh: SimplicialMesh,
                          quad: QuadSpec | None = None) -> float:
    """sum_T int_T sigma : ein rho dx for the Euclidean metric."""
    vs = _samples(mesh, quad).volume
    N = mesh.dim
    parts = []
    for sl in _chunks(len(vs.cells)):
        P = sl.stop - sl.start
        m = Metric(np.broadcast_to(np.eye(N), (P, N, N)).copy())
        chris = geo.ChristoffelJet(np.zeros((P, N, N, N)), np.zeros((P, N, N, N, N)), m,
                                   np.zeros((P, N, N, N)), np.zeros((P, N, N, N)), None)
        rj = rho.jet(vs.cells[sl], vs.x[sl], 2)
        ein = geo.ein_operator(geo.second_covariant_derivative(rj.value, rj.d1, rj.d2, chris), m)
        s = sigma.jet(vs.cells[sl], vs.x[sl], 0).value
        parts.append(np.einsum("pij,pij->p", s, ein) * vs.w[sl])
    return float(np.sum(np.concatenate(parts)))
