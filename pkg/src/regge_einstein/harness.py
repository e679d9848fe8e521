"""Convergence studies for the distributional Einstein tensor.

The reference problem is the metric induced on (-1, 1)^3 by the graph of
f(x) = |x|^2 / 2 - (x^4 + y^4 + z^4) / 12, whose curvature is known in
closed form. Each level builds a perturbed structured mesh, interpolates
the metric into Regge elements of degree r, forms the error functional
rho -> <(G omega)_dist(g_h) - (G omega)(g), rho> and measures it in an
H^-2 type norm.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import functionals as fn
from .dualnorm import BiharmonicSolver, sym_pairs
from .fields import GraphMetric, Polynomial, PolynomialTensorField, TensorField, bump, euclidean
from .mesh import generate_box_mesh, perturb_interior_vertices, splitmix64
from .regge import count_dofs, interpolate
from .samples import QuadSpec

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# reference metrics

def q(x):
    return x**2 * (x**2 - 3.0) ** 2


def graph_potential(dim: int) -> Polynomial:
    f = Polynomial.constant(0.0, dim)
    for i in range(dim):
        xi = Polynomial.coordinate(i, dim)
        f = f + 0.5 * xi * xi - (1.0 / 12.0) * xi**4
    return f


class GraphMetric3D(GraphMetric):
    """g = I + grad f grad f^T with closed-form curvature."""

    def __init__(self):
        super().__init__(graph_potential(3))

    @staticmethod
    def det(x: np.ndarray) -> np.ndarray:
        return (9.0 + q(x[:, 0]) + q(x[:, 1]) + q(x[:, 2])) / 9.0

    @staticmethod
    def scalar_curvature(x: np.ndarray) -> np.ndarray:
        X, Y, Z = x[:, 0], x[:, 1], x[:, 2]
        den = (9.0 + q(X) + q(Y) + q(Z)) ** 2
        num = ((1 - X**2) * (1 - Y**2) * (9 + q(Z)) + (1 - Y**2) * (1 - Z**2) * (9 + q(X))
               + (1 - Z**2) * (1 - X**2) * (9 + q(Y)))
        return 18.0 * num / den

    @staticmethod
    def ricci(x: np.ndarray) -> np.ndarray:
        X, Y, Z = x[:, 0], x[:, 1], x[:, 2]
        den = (9.0 + q(X) + q(Y) + q(Z)) ** 2
        out = np.empty((x.shape[0], 3, 3))
        out[:, 0, 0] = 9 * (X**2 - 1) * ((Y**2 + Z**2 - 2) * (q(X) + 9) + (Z**2 - 1) * q(Y) + q(Z) * (Y**2 - 1))
        out[:, 1, 1] = 9 * (Y**2 - 1) * ((X**2 + Z**2 - 2) * (q(Y) + 9) + (Z**2 - 1) * q(X) + q(Z) * (X**2 - 1))
        out[:, 2, 2] = 9 * (Z**2 - 1) * ((Y**2 + X**2 - 2) * (q(Z) + 9) + (X**2 - 1) * q(Y) + q(X) * (Y**2 - 1))
        out[:, 0, 1] = out[:, 1, 0] = 9 * (Y**2 - 3) * Y * (X**2 - 3) * X * (X**2 - 1) * (Y**2 - 1)
        out[:, 0, 2] = out[:, 2, 0] = 9 * (Z**2 - 3) * Z * (X**2 - 3) * X * (X**2 - 1) * (Z**2 - 1)
        out[:, 1, 2] = out[:, 2, 1] = 9 * (Y**2 - 3) * Y * (Z**2 - 3) * Z * (Z**2 - 1) * (Y**2 - 1)
        return out / den[:, None, None]

    def einstein(self, x: np.ndarray) -> np.ndarray:
        g = self.jet(None, x, 0).value
        return self.ricci(x) - 0.5 * self.scalar_curvature(x)[:, None, None] * g


def graph_metric_2d() -> GraphMetric:
    return GraphMetric(graph_potential(2))


def make_metric(name: str, dim: int = 3) -> TensorField:
    if name == "graph3d":
        if dim != 3:
            raise ValueError("graph3d is three-dimensional")
        return GraphMetric3D()
    if name == "graph2d":
        return graph_metric_2d()
    if name == "euclidean":
        return euclidean(dim)
    raise ValueError(f"unknown metric {name!r}")


# ---------------------------------------------------------------------------
# tables

def compute_eoc(errors, hs) -> list:
    """eoc_k = log(e_{k-1} / e_k) / log(h_{k-1} / h_k); None where undefined."""
    if len(errors) != len(hs):
        raise ValueError("errors and mesh sizes differ in length")
    out = [None]
    for k in range(1, len(errors)):
        e0, e1, h0, h1 = errors[k - 1], errors[k], hs[k - 1], hs[k]
        if e0 is None or e1 is None or e0 <= 0 or e1 <= 0 or h0 <= 0 or h1 <= 0 or h0 == h1:
            out.append(None)
        else:
            out.append(math.log(e0 / e1) / math.log(h0 / h1))
    return out


@dataclass
class ConvergenceTable:
    rows: list = field(default_factory=list)  # dicts with the keys in `columns`
    metadata: dict = field(default_factory=dict)
    columns: tuple = ("level", "h", "ndof", "error", "eoc")

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow(["" if r[c] is None else r[c] for c in self.columns])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"columns": list(self.columns), "rows": self.rows, "metadata": self.metadata},
                          indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ConvergenceTable":
        d = json.loads(text)
        return cls(d["rows"], d["metadata"], tuple(d["columns"]))


def emit(table: ConvergenceTable, fmt: str, path) -> None:
    if fmt == "csv":
        text = table.to_csv()
    elif fmt == "json":
        text = table.to_json()
    else:
        raise ValueError(f"unknown format {fmt!r}")
    Path(path).write_text(text)


# ---------------------------------------------------------------------------
# studies

@dataclass
class StudyConfig:
    metric: str = "graph3d"
    order: int = 1
    levels: list = field(default_factory=lambda: [0, 1, 2, 3])
    seed: int = 42
    norm: str = "biharmonic"  # or "fixed-test-fields"
    gauss: list = field(default_factory=lambda: [5])
    penalty: float | None = None
    quad_extra: int = 0
    dim: int = 3

    def __post_init__(self):
        if isinstance(self.levels, int):
            self.levels = list(range(self.levels + 1))
        if isinstance(self.gauss, int):
            self.gauss = [self.gauss]
        if self.norm not in ("biharmonic", "fixed-test-fields"):
            raise ValueError(f"unknown norm mode {self.norm!r}")
        for n in self.gauss:
            if n not in (5, 7):
                raise ValueError("gauss must be 5 or 7")


def level_seed(seed: int, level: int) -> int:
    """Independent per-level seed derived from the study seed."""
    z = splitmix64(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64) ^ np.uint64(level + 1))
    return int(z[0])


def level_mesh(dim: int, level: int, seed: int):
    m = generate_box_mesh(dim, level)
    return perturb_interior_vertices(m, m.hmax, level_seed(seed, level))


def _box_integral(p: Polynomial) -> float:
    """Exact integral of a polynomial over (-1, 1)^N."""
    tot = 0.0
    for e, c in zip(p.exps, p.coefs):
        if np.all(e % 2 == 0):
            tot += c * float(np.prod(2.0 / (e + 1.0)))
    return tot


def polynomial_h2_norm(field: PolynomialTensorField) -> float:
    """sqrt(sum ||p||^2 + |p|_1^2 + |p|_2^2) over (-1, 1)^N, exact."""
    N = field.dim
    tot = 0.0
    for i in range(N):
        for j in range(N):
            p = field.comps[i][j]
            parts = [p] + [p.diff(a) for a in range(N)] + [p.diff(a).diff(b) for a in range(N) for b in range(N)]
            tot += sum(_box_integral(d * d) for d in parts)
    return math.sqrt(tot)


def fixed_test_fields(dim: int) -> list[PolynomialTensorField]:
    """Six compactly supported fields B(x) (1 + c.x) e_(ab) with B the squared bump."""
    B = bump(dim)
    out = []
    for k, (a, b) in enumerate(sym_pairs(dim)):
        lin = Polynomial.constant(1.0, dim)
        for i in range(dim):
            lin = lin + (0.25 * ((k + 2 * i) % 3 - 1)) * Polynomial.coordinate(i, dim)
        E = np.zeros((dim, dim))
        E[a, b] = E[b, a] = 1.0
        f = PolynomialTensorField.from_scalar_times(B * lin, E)
        f.compact_support = True
        out.append(f)
    return out


class _FixedNorm:
    def __init__(self, dim: int):
        self.fields = fixed_test_fields(dim)
        self.norms = [polynomial_h2_norm(f) for f in self.fields]

    def __call__(self, density: fn.TensorDensity) -> dict:
        vals = [abs(density.apply(f).total) / n for f, n in zip(self.fields, self.norms)]
        return {"value": max(vals), "ratios": vals}


def _measure(density, mesh, order, cfg: StudyConfig, cache: dict):
    if cfg.norm == "biharmonic":
        if "solver" not in cache:
            cache["solver"] = BiharmonicSolver(mesh, order + 2, cfg.penalty)
        rep = cache["solver"].dual_norm(density)
        return rep.combined, rep.to_dict()
    if "fixed" not in cache:
        cache["fixed"] = _FixedNorm(mesh.dim)
    out = cache["fixed"](density)
    return out["value"], out


def run_convergence(cfg: StudyConfig) -> ConvergenceTable:
    g = make_metric(cfg.metric, cfg.dim)
    quad = QuadSpec.for_order(cfg.order, cfg.quad_extra)
    rows = []
    for k in cfg.levels:
        t0 = time.perf_counter()
        try:
            mesh = level_mesh(cfg.dim, k, cfg.seed)
            gh = interpolate(g, mesh, cfg.order)
            dens = fn.direct_error_density(g, gh, mesh, quad)
            err, detail = _measure(dens, mesh, cfg.order, cfg, {})
        except Exception as e:
            raise type(e)(f"level {k}: {e}") from e
        rows.append({"level": k, "h": mesh.hmax, "ndof": count_dofs(mesh, cfg.order), "error": err,
                     "eoc": None, "seconds": time.perf_counter() - t0, "norm_detail": detail})
        log.info("level %d: h=%.4f error=%.4e (%.1fs)", k, mesh.hmax, err, rows[-1]["seconds"])
    for r, e in zip(rows, compute_eoc([r["error"] for r in rows], [r["h"] for r in rows])):
        r["eoc"] = e
    meta = {"config": asdict(cfg), "quad": asdict(quad), "error_form": "direct",
            "note": "absolute errors depend on the dual-norm discretization and the perturbation; "
                    "only rates are comparable across implementations"}
    if cfg.norm == "biharmonic" and rows:
        meta["penalty"] = rows[0]["norm_detail"]["penalty"]
    return ConvergenceTable(rows, meta)


STAGNATION_COLUMNS = ("level", "h", "ndof", "gauss", "F1", "F2", "F3", "eoc_F3")


def run_stagnation_study(cfg: StudyConfig) -> ConvergenceTable:
    """Norms of the codimension-2 functionals F1, F2, F3 per level and Gauss rule."""
    g = make_metric(cfg.metric, cfg.dim)
    quad = QuadSpec.for_order(cfg.order, cfg.quad_extra)
    rows = []
    for k in cfg.levels:
        t0 = time.perf_counter()
        mesh = level_mesh(cfg.dim, k, cfg.seed)
        gh = interpolate(g, mesh, cfg.order)
        cache: dict = {}
        for ng in cfg.gauss:
            try:
                d = fn.codim2_densities(g, gh, mesh, ng, quad)
                vals = [_measure(x, mesh, cfg.order, cfg, cache)[0] for x in (d.F1, d.F2, d.F3)]
            except Exception as e:
                raise type(e)(f"level {k}, {ng} Gauss points: {e}") from e
            rows.append({"level": k, "h": mesh.hmax, "ndof": count_dofs(mesh, cfg.order), "gauss": ng,
                         "F1": vals[0], "F2": vals[1], "F3": vals[2], "eoc_F3": None,
                         "seconds": time.perf_counter() - t0})
            log.info("level %d gauss %d: F1=%.3e F2=%.3e F3=%.3e", k, ng, *vals)
    for ng in cfg.gauss:
        sub = [r for r in rows if r["gauss"] == ng]
        for r, e in zip(sub, compute_eoc([r["F3"] for r in sub], [r["h"] for r in sub])):
            r["eoc_F3"] = e
    meta = {"config": asdict(cfg), "quad": asdict(quad)}
    return ConvergenceTable(rows, meta, STAGNATION_COLUMNS)
