"""Invariant batteries with fixed inputs and tolerances.

Each check returns a :class:`CheckResult`; ``run_suite`` collects them for
the ``regge check`` command and the acceptance tests. Identities are always
evaluated along two independent routes and compared.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import functionals as fn
from .fields import ConstantScalar, ScalarTimesTensor, euclidean, random_scalar_field, random_tensor_field
from .geometry import MetricJet, curvature, einstein_divergence
from .harness import GraphMetric3D, StudyConfig, graph_metric_2d, level_mesh, run_convergence, run_stagnation_study
from .mesh import generate_box_mesh
from .regge import ReggeMetric, count_dofs, interpolate, layout
from .samples import QuadSpec

SEED = 42


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: str
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: {self.value:.3e} (required {self.tolerance}) [{self.seconds:.1f}s]"

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "value": self.value,
                "tolerance": self.tolerance, "detail": self.detail, "seconds": self.seconds}


def _rel(a: float, b: float) -> float:
    s = max(abs(a), abs(b))
    return abs(a - b) / s if s > 0 else 0.0


def _timed(fun):
    def wrapper(*args, **kw):
        t0 = time.perf_counter()
        res = fun(*args, **kw)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fun.__name__
    wrapper.__doc__ = fun.__doc__
    return wrapper


def _graph3d_interpolant(r: int, level: int = 1):
    mesh = level_mesh(3, level, SEED)
    return mesh, interpolate(GraphMetric3D(), mesh, r)


# ---------------------------------------------------------------------------

@_timed
def curvature_oracle(n_points: int = 100, tol: float = 1e-9) -> CheckResult:
    """Ricci and scalar curvature of the graph metric against closed forms."""
    g = GraphMetric3D()
    rng = np.random.default_rng(SEED)
    x = rng.uniform(-1.0, 1.0, (n_points, 3))
    cv = curvature(MetricJet.from_tensor_jet(g.jet(None, x, 2)))
    ric, R = g.ricci(x), g.scalar_curvature(x)
    e_ric = np.max(np.abs(cv.ric - ric)) / np.max(np.abs(ric))
    e_R = np.max(np.abs(cv.scalar - R)) / np.max(np.abs(R))
    c0 = curvature(MetricJet.from_tensor_jet(g.jet(None, np.zeros((1, 3)), 2)))
    spot = max(abs(c0.scalar[0] - 6.0), np.max(np.abs(c0.ric[0] - 2 * np.eye(3))),
               np.max(np.abs(c0.einstein[0] + np.eye(3))))
    worst = max(e_ric, e_R, spot)
    return CheckResult("curvature oracle", worst <= tol, worst, f"<= {tol:g} relative",
                       {"ricci": e_ric, "scalar": e_R, "origin": spot})


@_timed
def dof_counts() -> CheckResult:
    """Regge dofs on the structured cube meshes."""
    want = {(0, 0): 19, (1, 0): 98, (0, 1): 92, (1, 1): 556}
    got = {k: count_dofs(generate_box_mesh(3, k[0]), k[1]) for k in want}
    bad = sum(got[k] != want[k] for k in want)
    return CheckResult("dof counts", bad == 0, float(bad), "0 mismatches",
                       {f"k={k[0]} r={k[1]}": got[k] for k in want})


@_timed
def gauss_bonnet(tol_flat: float = 1e-12, tol_regge: float = 1e-6) -> CheckResult:
    """Half the distributional scalar curvature of a disc-type square is 2 pi."""
    one = ConstantScalar(1.0, 2)
    m = generate_box_mesh(2, 2)
    flat = 0.5 * fn.pair_scalar_dist(euclidean(2), one, m).total - 2 * math.pi
    mp = level_mesh(2, 2, SEED)
    gh = interpolate(graph_metric_2d(), mp, 1)
    curved = 0.5 * fn.pair_scalar_dist(gh, one, mp, QuadSpec.for_order(1, 6)).total - 2 * math.pi
    ok = abs(flat) <= tol_flat and abs(curved) <= tol_regge
    return CheckResult("Gauss-Bonnet", ok, max(abs(flat), abs(curved)),
                       f"flat <= {tol_flat:g}, r=1 <= {tol_regge:g}",
                       {"flat": flat, "regge_r1": curved})


@_timed
def consistency(tol: float = 1e-8, n_fields: int = 3) -> CheckResult:
    """Exact smooth metric: no facet or ridge contributions, total equals the classical pairing."""
    g = GraphMetric3D()
    mesh = level_mesh(3, 1, SEED)
    rng = np.random.default_rng(SEED)
    quad = QuadSpec.for_order(2)
    worst, rows = 0.0, []
    for _ in range(n_fields):
        rho = random_tensor_field(3, 1, rng, compact=True)
        rep = fn.pair_einstein_dist(g, rho, mesh, quad)
        cl = fn.pair_classical(g, rho, mesh, quad)
        e = max(abs(rep.facet_part), abs(rep.ridge_part), abs(rep.total - cl))
        worst = max(worst, e)
        rows.append({**rep.to_dict(), "classical": cl})
    return CheckResult("consistency", worst <= tol, worst, f"<= {tol:g}", {"pairings": rows})


@_timed
def trace_identities(tol: float = 1e-9, n_pairs: int = 5) -> CheckResult:
    """Pairing with v g_h turns G into -R/2, B_h into -b_h/2 and A_h into -a_h/2.

    The B_h identity holds only after integration by parts over rational
    integrands, so it needs high-degree rules (degree 8 leaves ~2e-6).
    """
    mesh, gh = _graph3d_interpolant(1, 1)
    rng = np.random.default_rng(SEED)
    quad, fine = QuadSpec.for_order(1), QuadSpec(20, 20, 20)
    worst, rows = 0.0, []
    for _ in range(n_pairs):
        sigma = random_tensor_field(3, 2, rng, 0.3)
        v = random_scalar_field(3, 2, rng)
        vg = ScalarTimesTensor(v, gh)
        tg = _rel(fn.pair_einstein_dist(gh, vg, mesh, quad).total,
                  -0.5 * fn.pair_scalar_dist(gh, v, mesh, quad).total)
        tb = _rel(fn.bilinear_Bh(gh, sigma, vg, mesh, fine),
                  -0.5 * fn.bilinear_bh(gh, sigma, v, mesh, fine, form="hessian"))
        ta = _rel(fn.bilinear_Ah(gh, sigma, vg, mesh, quad), -0.5 * fn.bilinear_ah(gh, sigma, v, mesh, quad))
        rows.append({"G": tg, "B": tb, "A": ta})
        worst = max(worst, tg, tb, ta)
    return CheckResult("trace identities", worst <= tol, worst, f"<= {tol:g} relative", {"pairs": rows})


@_timed
def symmetry_and_dual_forms(tol: float = 1e-9) -> CheckResult:
    """A_h and B_h symmetric, two B_h formulas agree, two b_h formulas agree, b_h(., 1) = 0.

    Uses the lowest-order interpolant and bump-times-constant fields so that
    every integrand is polynomial on each cell and the rules are exact up to
    rounding.
    """
    mesh, g0 = _graph3d_interpolant(0, 1)
    rng = np.random.default_rng(SEED)
    quad = QuadSpec(22, 23, 24)
    sigma = random_tensor_field(3, 0, rng, compact=True)
    rho = random_tensor_field(3, 0, rng, compact=True)
    v = random_scalar_field(3, 0, rng, compact=True)
    one = ConstantScalar(1.0, 3)
    out = {}
    out["A_sym"] = _rel(fn.bilinear_Ah(g0, sigma, rho, mesh, quad), fn.bilinear_Ah(g0, rho, sigma, mesh, quad))
    b1 = fn.bilinear_Bh(g0, sigma, rho, mesh, quad)
    out["B_sym"] = _rel(b1, fn.bilinear_Bh(g0, rho, sigma, mesh, quad))
    out["B_forms"] = _rel(b1, fn.bilinear_Bh(g0, sigma, rho, mesh, quad, form="expanded"))
    out["b_forms"] = _rel(fn.bilinear_bh(g0, sigma, v, mesh, quad, form="divdiv"),
                          fn.bilinear_bh(g0, sigma, v, mesh, quad, form="hessian"))
    parts = fn.bh_divdiv_density(g0, sigma, mesh, quad, True).apply(one)
    scale = abs(parts.volume_part) + abs(parts.facet_part) + abs(parts.ridge_part)
    out["b_const"] = abs(parts.total) / scale
    worst = max(out.values())
    return CheckResult("symmetry and dual forms", worst <= tol, worst, f"<= {tol:g} relative", out)


@_timed
def euclidean_ein(tol: float = 1e-8, n_fields: int = 3) -> CheckResult:
    """B_h at the flat metric equals the volume integral of sigma : ein rho."""
    mesh = level_mesh(3, 1, SEED)
    rng = np.random.default_rng(SEED)
    E = euclidean(3)
    sigma = ReggeMetric.from_dofs(mesh, 2, rng.standard_normal(layout(mesh, 2).ndof))
    quad = QuadSpec(15, 16, 16)
    worst, rows = 0.0, []
    for _ in range(n_fields):
        rho = random_tensor_field(3, 1, rng, compact=True)
        a = fn.bilinear_Bh(E, sigma, rho, mesh, quad)
        b = fn.euclidean_ein_pairing(sigma, rho, mesh, quad)
        rows.append({"Bh": a, "volume": b})
        worst = max(worst, _rel(a, b))
    return CheckResult("Euclidean ein", worst <= tol, worst, f"<= {tol:g} relative", {"pairings": rows})


@_timed
def evolution(lo: float = 3.3, hi: float = 4.7, dts=(1e-2, 5e-3)) -> CheckResult:
    """Central differences of the Einstein pairing against B_h + A_h."""
    mesh, gh = _graph3d_interpolant(1, 1)
    rng = np.random.default_rng(SEED)
    quad = QuadSpec.for_order(2)
    g1 = gh + random_tensor_field(3, 1, rng, 0.3)
    rho = random_tensor_field(3, 1, rng, compact=True)
    res = [fn.evolution_check(gh, g1, rho, mesh, 0.5, dt, quad) for dt in dts]
    ratio = res[0].residual / res[1].residual
    return CheckResult("evolution consistency", lo <= ratio <= hi, ratio, f"in [{lo}, {hi}]",
                       {"dt": list(dts), "fd": [r.fd_derivative for r in res], "forms": res[0].forms,
                        "residuals": [r.residual for r in res]})


@_timed
def headline_rates(levels=(0, 1, 2, 3)) -> CheckResult:
    """Biharmonic-norm convergence studies for r = 1 and r = 2."""
    bounds = {1: (1.8, 2.2), 2: (2.7, 3.3)}
    detail, ok, last = {}, True, []
    for r, (lo, hi) in bounds.items():
        tab = run_convergence(StudyConfig(order=r, levels=list(levels)))
        eoc = tab.column("eoc")[-1]
        detail[f"r={r}"] = {"error": tab.column("error"), "eoc": tab.column("eoc"), "h": tab.column("h")}
        ok = ok and eoc is not None and lo <= eoc <= hi
        last.append(eoc)
    return CheckResult("headline rates", ok, min(last), "r=1 in [1.8, 2.2], r=2 in [2.7, 3.3]", detail)


@_timed
def codim2_stagnation(levels=(0, 1, 2, 3), min_ratio: float = 0.5, eoc_bounds=(1.6, 2.4),
                      max_gauss_gap: float = 0.05) -> CheckResult:
    """r = 0 F3 must not decay between the two finest levels, r = 1 F3 must decay like h^2."""
    detail = {}
    tabs = {r: run_stagnation_study(StudyConfig(order=r, levels=list(levels), gauss=[5, 7])) for r in (0, 1)}
    gap = 0.0
    for r, tab in tabs.items():
        f5 = [row["F3"] for row in tab.rows if row["gauss"] == 5]
        f7 = [row["F3"] for row in tab.rows if row["gauss"] == 7]
        gap = max(gap, max(abs(a - b) / abs(a) for a, b in zip(f5, f7)))
        detail[f"r={r}"] = {"F1": [row["F1"] for row in tab.rows if row["gauss"] == 5],
                            "F2": [row["F2"] for row in tab.rows if row["gauss"] == 5],
                            "F3": f5, "eoc": [row["eoc_F3"] for row in tab.rows if row["gauss"] == 5]}
    f0 = detail["r=0"]["F3"]
    ratio = f0[-1] / f0[-2]
    eoc = detail["r=1"]["eoc"][-1]
    detail.update(ratio_r0=ratio, eoc_r1=eoc, gauss_gap=gap)
    ok = ratio >= min_ratio and eoc is not None and eoc_bounds[0] <= eoc <= eoc_bounds[1] and gap < max_gauss_gap
    return CheckResult("codim-2 stagnation", ok, ratio,
                       f"r=0 ratio >= {min_ratio}, r=1 EOC in {list(eoc_bounds)}, 5 vs 7 gap < {max_gauss_gap}",
                       detail)


@_timed
def bianchi(n_points: int = 100, tol: float = 1e-8) -> CheckResult:
    """div_g G of the graph metric from exact third-order jets."""
    g = GraphMetric3D()
    x = np.random.default_rng(SEED).uniform(-1.0, 1.0, (n_points, 3))
    div = einstein_divergence(MetricJet.from_tensor_jet(g.jet(None, x, 3)))
    worst = float(np.max(np.abs(div)))
    return CheckResult("contracted Bianchi", worst <= tol, worst, f"<= {tol:g}")


CRITERIA = {
    1: curvature_oracle,
    2: dof_counts,
    3: gauss_bonnet,
    4: consistency,
    5: trace_identities,
    6: symmetry_and_dual_forms,
    7: euclidean_ein,
    8: evolution,
    9: headline_rates,
    10: codim2_stagnation,
    11: bianchi,
}

SUITES = {
    "fast": [1, 2, 3, 11],
    "identities": [1, 2, 3, 4, 5, 6, 7, 8, 11],
    "studies": [9, 10],
    "all": list(CRITERIA),
}


def run_suite(name: str = "all", echo=None) -> list[CheckResult]:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    out = []
    for k in SUITES[name]:
        res = CRITERIA[k]()
        res.name = f"[{k}] {res.name}"
        if echo is not None:
            echo(res.line())
        out.append(res)
    return out
