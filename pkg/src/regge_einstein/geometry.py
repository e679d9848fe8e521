"""Curvature and hypersurface kernels evaluated from metric jets.

Index conventions (batched over a leading point axis p):
  dg[p, l, i, j]      = d_l g_ij
  gam[p, k, i, j]     = Gamma^k_ij
  dgam[p, l, k, i, j] = d_l Gamma^k_ij
  riem[p, i, j, k, l] = R_ijkl = g((nabla_Y nabla_X - nabla_X nabla_Y + nabla_[X,Y]) Z, W)
                        with X, Y, Z, W = d_i, d_j, d_k, d_l
With this sign Ric_jl = g^ik R_ijkl is positive on round spheres, and the
trace over the middle pair is -Ric.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .tensorcalc import J_map, Metric, S_map

log = logging.getLogger(__name__)


@dataclass
class MetricJet:
    g: np.ndarray
    dg: np.ndarray
    d2g: np.ndarray
    d3g: np.ndarray | None = None

    @classmethod
    def from_tensor_jet(cls, tj) -> "MetricJet":
        return cls(tj.value, tj.d1, tj.d2, tj.d3)

    @property
    def dim(self) -> int:
        return self.g.shape[-1]


@dataclass
class ChristoffelJet:
    gam: np.ndarray
    dgam: np.ndarray | None
    metric: Metric
    dginv: np.ndarray
    gam1: np.ndarray
    dgam1: np.ndarray | None


def christoffel(jet: MetricJet, order: int = 1) -> ChristoffelJet:
    """Gamma^k_ij = 1/2 g^kl (d_i g_jl + d_j g_il - d_l g_ij) and its first partials."""
    m = Metric(jet.g)
    gi = m.inv
    dg = jet.dg
    g1 = 0.5 * (np.einsum("pijl->plij", dg) + np.einsum("pjil->plij", dg) - dg)
    gam = np.einsum("pkl,plij->pkij", gi, g1)
    dginv = -np.einsum("pka,pmab,pbl->pmkl", gi, dg, gi)
    dgam = dg1 = None
    if order >= 1:
        d2 = jet.d2g
        dg1 = 0.5 * (np.einsum("pmijl->pmlij", d2) + np.einsum("pmjil->pmlij", d2) - d2)
        dgam = np.einsum("pmkl,plij->pmkij", dginv, g1) + np.einsum("pkl,pmlij->pmkij", gi, dg1)
    return ChristoffelJet(gam, dgam, m, dginv, g1, dg1)


def _riemann_std(gam: np.ndarray, dgam: np.ndarray) -> np.ndarray:
    """Rs[p, r, s, m, n]: d_m Gam^r_ns - d_n Gam^r_ms + Gam^r_ml Gam^l_ns - Gam^r_nl Gam^l_ms."""
    t1 = np.einsum("pmrns->prsmn", dgam)
    quad = np.einsum("prml,plns->prsmn", gam, gam)
    return t1 - np.swapaxes(t1, 3, 4) + quad - np.swapaxes(quad, 3, 4)


@dataclass
class Curvature:
    riem: np.ndarray
    ric: np.ndarray
    scalar: np.ndarray
    einstein: np.ndarray


def curvature(jet: MetricJet, chris: ChristoffelJet | None = None) -> Curvature:
    if chris is None:
        chris = christoffel(jet)
    N = jet.dim
    Rs = _riemann_std(chris.gam, chris.dgam)
    # Rm_abcd = g(R_std(d_a, d_b) d_c, d_d);  R_ijkl (our sign) = Rm_jikl
    Rm = np.einsum("pdr,prcab->pabcd", jet.g, Rs)
    riem = np.swapaxes(Rm, 1, 2)
    gi = chris.metric.inv
    ric = np.einsum("pik,pijkl->pjl", gi, riem)
    ric = 0.5 * (ric + np.swapaxes(ric, 1, 2))
    R = np.einsum("pjl,pjl->p", gi, ric)
    if N == 2:
        G = np.zeros_like(ric)
    else:
        G = ric - 0.5 * R[:, None, None] * jet.g
    return Curvature(riem, ric, R, G)


def einstein_divergence(jet: MetricJet) -> np.ndarray:
    """div_g G from exact third-order metric jets, shape (P, N)."""
    if jet.d3g is None:
        raise ValueError("third derivatives of the metric are required")
    chris = christoffel(jet)
    gi = chris.metric.inv
    dg, d2g, d3g = jet.dg, jet.d2g, jet.d3g
    g1, dg1, dginv = chris.gam1, chris.dgam1, chris.dginv
    d2g1 = 0.5 * (np.einsum("pmnijl->pmnlij", d3g) + np.einsum("pmnjil->pmnlij", d3g) - d3g)
    A = np.einsum("pka,pmab,pbc,pncd,pdl->pmnkl", gi, dg, gi, dg, gi)
    d2ginv = A + np.swapaxes(A, 1, 2) - np.einsum("pka,pmnab,pbl->pmnkl", gi, d2g, gi)
    d2gam = (np.einsum("pmnkl,plij->pmnkij", d2ginv, g1)
             + np.einsum("pnkl,pmlij->pmnkij", dginv, dg1)
             + np.einsum("pmkl,pnlij->pmnkij", dginv, dg1)
             + np.einsum("pkl,pmnlij->pmnkij", gi, d2g1))
    gam, dgam = chris.gam, chris.dgam
    # dRs[p, q, r, s, m, n] = d_q Rs^r_smn
    t1 = np.einsum("pqmrns->pqrsmn", d2gam)
    quad = np.einsum("pqrml,plns->pqrsmn", dgam, gam) + np.einsum("prml,pqlns->pqrsmn", gam, dgam)
    dRs = t1 - np.swapaxes(t1, 4, 5) + quad - np.swapaxes(quad, 4, 5)
    Rs = _riemann_std(gam, dgam)
    ric = np.einsum("pkjkl->pjl", Rs)
    dric = np.einsum("pqkjkl->pqjl", dRs)
    R = np.einsum("pjl,pjl->p", gi, ric)
    dR = np.einsum("pqjl,pjl->pq", dginv, ric) + np.einsum("pjl,pqjl->pq", gi, dric)
    G = ric - 0.5 * R[:, None, None] * jet.g
    dG = dric - 0.5 * dR[:, :, None, None] * jet.g[:, None] - 0.5 * R[:, None, None, None] * dg
    nabG = dG - np.einsum("pmij,pml->pijl", gam, G) - np.einsum("pmil,pjm->pijl", gam, G)
    return np.einsum("pij,pijl->pl", gi, nabG)


# ---------------------------------------------------------------------------
# hypersurface quantities

def unit_normal(metric: Metric, conormal: np.ndarray) -> np.ndarray:
    """g-unit vector g^-1 N / |N|_g for a Euclidean outward covector N."""
    v = np.einsum("pij,pj->pi", metric.inv, conormal)
    s = np.sqrt(np.einsum("pi,pi->p", v, conormal))
    return v / s[:, None]


def unit_normal_derivative(metric: Metric, dginv: np.ndarray, conormal: np.ndarray) -> np.ndarray:
    """dn[p, l, i] = d_l n^i for n = g^-1 N / sqrt(N^T g^-1 N) with N constant."""
    v = np.einsum("pij,pj->pi", metric.inv, conormal)
    s2 = np.einsum("pi,pi->p", v, conormal)
    s = np.sqrt(s2)
    dv = np.einsum("plij,pj->pli", dginv, conormal)
    ds2 = np.einsum("pli,pi->pl", dv, conormal)
    n = v / s[:, None]
    return dv / s[:, None, None] - 0.5 * n[:, None, :] * (ds2 / s2[:, None])[:, :, None]


def second_fundamental_form(gam: np.ndarray, g: np.ndarray, n: np.ndarray, X: np.ndarray) -> np.ndarray:
    """II_ab = -g(n, nabla_{X_a} X_b) = -n_j Gamma^j_kl X_a^k X_b^l (constant frame)."""
    nlow = np.einsum("pij,pj->pi", g, n)
    return -np.einsum("pj,pjkl,pka,plb->pab", nlow, gam, X, X)


def mean_curvature(II: np.ndarray, gF: Metric) -> np.ndarray:
    return np.einsum("pab,pab->p", gF.inv, II)


def trace_reversed_sff(II: np.ndarray, gF: Metric) -> np.ndarray:
    H = mean_curvature(II, gF)
    return II - H[:, None, None] * gF.g


_CLAMP_WORST = [0.0]


def dihedral_angle(g: np.ndarray, n1: np.ndarray, n2: np.ndarray) -> np.ndarray:
    """theta = arccos(-g(n1, n2)), argument clamped to [-1, 1]."""
    c = -np.einsum("pi,pij,pj->p", n1, g, n2)
    excess = float(np.max(np.abs(c)) - 1.0) if c.size else 0.0
    if excess > 0.0:
        _CLAMP_WORST[0] = max(_CLAMP_WORST[0], excess)
        if excess > 1e-12:
            log.warning("dihedral cosine exceeds 1 by %.3e", excess)
    return np.arccos(np.clip(c, -1.0, 1.0))


def conormal_nu(g: np.ndarray, XS: np.ndarray, w: np.ndarray) -> np.ndarray:
    """g-unit vector in span(XS, w), g-orthogonal to XS, with positive w-component.

    ``w`` is the edge from a ridge vertex to the facet vertex off the ridge,
    so the result points from the ridge into the facet.
    """
    if XS.shape[-1] > 0:
        gS = np.swapaxes(XS, 1, 2) @ g @ XS
        rhs = np.einsum("pia,pij,pj->pa", XS, g, w)
        coef = np.linalg.solve(gS, rhs[..., None])[..., 0]
        v = w - np.einsum("pia,pa->pi", XS, coef)
    else:
        v = w
    nrm = np.sqrt(np.einsum("pi,pij,pj->p", v, g, v))
    return v / nrm[:, None]


# ---------------------------------------------------------------------------
# covariant derivatives of tensor fields

def covariant_derivative(val: np.ndarray, d1: np.ndarray, gam: np.ndarray) -> np.ndarray:
    """(nabla s)[p, b, i, j] = nabla_b s_ij."""
    return (d1 - np.einsum("pmbi,pmj->pbij", gam, val)
            - np.einsum("pmbj,pim->pbij", gam, val))


def second_covariant_derivative(val, d1, d2, chris: ChristoffelJet) -> np.ndarray:
    """(nabla nabla s)[p, a, b, i, j] = (nabla_a nabla s)_bij."""
    gam, dgam = chris.gam, chris.dgam
    ns = covariant_derivative(val, d1, gam)
    da = (d2
          - np.einsum("pambi,pmj->pabij", dgam, val) - np.einsum("pmbi,pamj->pabij", gam, d1)
          - np.einsum("pambj,pim->pabij", dgam, val) - np.einsum("pmbj,paim->pabij", gam, d1))
    return (da - np.einsum("pmab,pmij->pabij", gam, ns)
            - np.einsum("pmai,pbmj->pabij", gam, ns)
            - np.einsum("pmaj,pbim->pabij", gam, ns))


def scalar_hessian(d1: np.ndarray, d2: np.ndarray, gam: np.ndarray) -> np.ndarray:
    return d2 - np.einsum("pkab,pk->pab", gam, d1)


def _J_last(t: np.ndarray, metric: Metric, c: float) -> np.ndarray:
    tr = np.einsum("pkl,p...kl->p...", metric.inv, t)
    shape = (t.shape[0],) + (1,) * (t.ndim - 3) + t.shape[-2:]
    return t - c * tr[..., None, None] * metric.g.reshape(shape)


def ein_operator(nn: np.ndarray, metric: Metric) -> np.ndarray:
    """ein s = J df div J s - 1/2 J Laplace s from the second covariant derivative."""
    gi = metric.inv
    nnJ = _J_last(nn, metric, 0.5)
    ddiv = np.einsum("pab,pcabj->pcj", gi, nnJ)  # nabla_c (div J s)_j
    df = 0.5 * (ddiv + np.swapaxes(ddiv, 1, 2))
    lap = np.einsum("pab,pabij->pij", gi, nn)
    return J_map(df - 0.5 * lap, metric)


def divdiv_S(nn: np.ndarray, metric: Metric) -> np.ndarray:
    """div div (S s) from the second covariant derivative of s."""
    gi = metric.inv
    nnS = _J_last(nn, metric, 1.0)
    return np.einsum("pcj,pab,pcabj->p", gi, gi, nnS)


def divergence(ns: np.ndarray, metric: Metric) -> np.ndarray:
    """(div s)_j = g^ab nabla_a s_bj."""
    return np.einsum("pab,pabj->pj", metric.inv, ns)


@dataclass
class SurfaceDerivatives:
    grad_n: np.ndarray  # (nabla_n s)|_F
    gradF_n: np.ndarray  # (nabla_F s)(n, .)|_F, [a, b] = (nabla_{X_a} s)(n, X_b)
    gradF_sn: np.ndarray  # nabla_F (s(n, .))|_F
    divF_sn: np.ndarray  # div_F (s(n, .))


def surface_derivatives(val, d1, ns, gam, n, dn, X, gF: Metric) -> SurfaceDerivatives:
    grad_n = np.einsum("pc,pcij,pia,pjb->pab", n, ns, X, X)
    gradF_n = np.einsum("pla,plij,pi,pjb->pab", X, ns, n, X)
    # d_l (s_ij n^i) - Gamma^m_lj s_im n^i
    beta_d = np.einsum("plij,pi->plj", d1, n) + np.einsum("pij,pli->plj", val, dn)
    beta = np.einsum("pij,pi->pj", val, n)
    nab_beta = beta_d - np.einsum("pmlj,pm->plj", gam, beta)
    gradF_sn = np.einsum("pla,plj,pjb->pab", X, nab_beta, X)
    divF_sn = np.einsum("pab,pab->p", gF.inv, gradF_sn)
    return SurfaceDerivatives(grad_n, gradF_n, gradF_sn, divF_sn)


def S_of(val: np.ndarray, metric: Metric) -> np.ndarray:
    return S_map(val, metric)


g_unit_normal = unit_normal


def angle_defect(metric_source, mesh, quad=None) -> np.ndarray:
    """Theta_S at the ridge quadrature points, shape (n_ridges, Q)."""
    from .functionals import angle_defect as _ad
    return _ad(metric_source, mesh, quad)
