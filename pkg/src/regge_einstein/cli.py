"""Command line entry points: ``regge`` and ``mesh-gen``.

Every ``regge`` flag can also be given in a JSON file passed with
``--config``; keys are the long flag names with dashes or underscores.
Explicit flags win over the file. ``REGGE_THREADS`` caps BLAS threads.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

if "REGGE_THREADS" in os.environ:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["REGGE_THREADS"])

log = logging.getLogger("regge_einstein")


def _int_list(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(t) for t in text]
    return [int(t) for t in str(text).split(",") if t.strip()]


def _levels(text) -> list[int]:
    """``3`` means levels 0..3, ``1,2,3`` lists them."""
    if isinstance(text, int):
        return list(range(text + 1))
    vals = _int_list(text)
    return list(range(vals[0] + 1)) if len(vals) == 1 else vals


def _write(path, text: str) -> None:
    if path is None or str(path) == "-":
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(path).write_text(text)
        log.info("wrote %s", path)


def _emit_table(table, out) -> None:
    fmt = "json" if out is not None and str(out).endswith(".json") else "csv"
    _write(out, table.to_json() if fmt == "json" else table.to_csv())


def _json_default(o):
    import numpy as np
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, default=_json_default)


def _study_config(a):
    from .harness import StudyConfig
    return StudyConfig(metric=a.metric, order=a.order, levels=_levels(a.levels), seed=a.seed, norm=a.norm,
                       gauss=_int_list(a.gauss), penalty=a.penalty, quad_extra=a.quad_extra, dim=a.dim)


def _setup(a):
    from .harness import level_mesh, make_metric
    from .regge import interpolate
    g = make_metric(a.metric, a.dim)
    mesh = level_mesh(a.dim, a.level, a.seed)
    gh = interpolate(g, mesh, a.order)
    if a.dump_coeffs:
        gh.dump(a.dump_coeffs)
        log.info("wrote coefficients to %s", a.dump_coeffs)
    return g, mesh, gh


# ---------------------------------------------------------------------------
# subcommands

def cmd_converge(a) -> int:
    from .harness import run_convergence
    table = run_convergence(_study_config(a))
    _emit_table(table, a.out)
    if a.dump_coeffs:
        a.level = table.rows[-1]["level"]
        _setup(a)
    return 0


def cmd_f123(a) -> int:
    from .harness import run_stagnation_study
    _emit_table(run_stagnation_study(_study_config(a)), a.out)
    return 0


def cmd_pair(a) -> int:
    from . import functionals as fn
    from .fields import PolynomialScalarField, bump
    from .harness import fixed_test_fields
    from .samples import QuadSpec
    g, mesh, gh = _setup(a)
    quad = QuadSpec.for_order(a.order, a.quad_extra)
    gauss = _int_list(a.gauss)[0]
    report = {"metric": a.metric, "order": a.order, "level": a.level, "seed": a.seed, "gauss": gauss,
              "functional": a.functional, "quad": vars(quad), "h": mesh.hmax, "fields": []}
    if a.functional == "scalar":
        v = PolynomialScalarField(bump(a.dim), compact_support=True)
        report["fields"].append({"test": "bump",
                                 "discrete": fn.pair_scalar_dist(gh, v, mesh, quad).to_dict(),
                                 "exact": fn.pair_scalar_dist(g, v, mesh, quad).to_dict()})
    elif a.functional == "einstein":
        dist = fn.einstein_density(gh, mesh, quad, True)
        err = fn.error_density(g, gh, mesh, gauss, quad)
        for i, rho in enumerate(fixed_test_fields(a.dim)):
            d = dist.apply(rho)
            cl = fn.pair_classical(g, rho, mesh, quad)
            report["fields"].append({"test": i, "discrete": d.to_dict(), "classical": cl,
                                     "direct_error": d.total - cl, "integrated_error": err.apply(rho).total})
    else:
        dens = fn.codim2_densities(g, gh, mesh, gauss, quad)
        for i, rho in enumerate(fixed_test_fields(a.dim)):
            f1, f2 = dens.F1.apply(rho).total, dens.F2.apply(rho).total
            report["fields"].append({"test": i, "F1": f1, "F2": f2, "F3": f1 + f2})
    _write(a.out, _dump(report))
    return 0


def cmd_norm(a) -> int:
    from . import functionals as fn
    from .dualnorm import hminus2_norm
    from .samples import QuadSpec
    g, mesh, gh = _setup(a)
    quad = QuadSpec.for_order(a.order, a.quad_extra)
    if a.functional == "einstein":
        dens = fn.direct_error_density(g, gh, mesh, quad)
    else:
        dens = getattr(fn.codim2_densities(g, gh, mesh, _int_list(a.gauss)[0], quad), a.functional)
    rep = hminus2_norm(dens, mesh, a.order, a.penalty).to_dict()
    rep["lagrange_order"] = rep.pop("order")
    _write(a.out, _dump({"metric": a.metric, "order": a.order, "level": a.level, "seed": a.seed,
                         "functional": a.functional, "h": mesh.hmax, **rep}))
    return 0


def cmd_check(a) -> int:
    from .checks import run_suite
    results = run_suite(a.suite, echo=print)
    if a.out:
        _write(a.out, _dump([r.to_dict() for r in results]))
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


# ---------------------------------------------------------------------------

def _common(p, study: bool) -> None:
    p.add_argument("--config", help="JSON file with default values for the flags")
    p.add_argument("--metric", default="graph3d", choices=["graph3d", "graph2d", "euclidean"])
    p.add_argument("--order", type=int, default=1, help="Regge degree r")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--gauss", default="5", help="Gauss points in t, 5 or 7 (comma list for studies)")
    p.add_argument("--penalty", type=float, default=None, help="interior penalty eta (default 10 p^2)")
    p.add_argument("--quad-extra", type=int, default=0, help="extra quadrature degree")
    p.add_argument("--dump-coeffs", default=None, help="write interpolant coefficients as JSON")
    p.add_argument("--out", default=None, help="output file (.csv or .json), stdout if omitted")
    if study:
        p.add_argument("--levels", default="3", help="finest level k (runs 0..k) or a comma list")
        p.add_argument("--norm", default="biharmonic", choices=["biharmonic", "fixed-test-fields"])
    else:
        p.add_argument("--level", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="regge", description="Distributional Einstein curvature of Regge metrics")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("converge", help="error convergence study")
    _common(p, True)
    p.set_defaults(func=cmd_converge)
    p = sub.add_parser("f123", help="codimension-2 functionals F1, F2, F3 per level")
    _common(p, True)
    p.set_defaults(func=cmd_f123, order=0, gauss="5,7")
    p = sub.add_parser("pair", help="pair functionals with the fixed test fields")
    _common(p, False)
    p.add_argument("--functional", default="einstein", choices=["einstein", "scalar", "F123"])
    p.set_defaults(func=cmd_pair)
    p = sub.add_parser("norm", help="H^-2 type norm of the error or a codimension-2 functional")
    _common(p, False)
    p.add_argument("--functional", default="einstein", choices=["einstein", "F1", "F2", "F3"])
    p.set_defaults(func=cmd_norm)
    p = sub.add_parser("check", help="run invariant batteries")
    p.add_argument("--suite", default="fast", choices=["fast", "identities", "studies", "all"])
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_check)
    return ap


def _apply_config(ap, argv):
    a = ap.parse_args(argv)
    if getattr(a, "config", None):
        cfg = json.loads(Path(a.config).read_text())
        sub = ap._subparsers._group_actions[0].choices[a.command]
        known = {act.dest for act in sub._actions}
        defaults = {}
        for k, v in cfg.items():
            dest = k.replace("-", "_")
            if dest not in known:
                ap.error(f"unknown config key {k!r}")
            defaults[dest] = ",".join(map(str, v)) if isinstance(v, list) else v
        sub.set_defaults(**defaults)
        a = ap.parse_args(argv)
    return a


def main(argv=None) -> int:
    ap = build_parser()
    a = _apply_config(ap, argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return a.func(a)
    except (ValueError, OSError, RuntimeError) as e:
        print(f"regge: error: {e}", file=sys.stderr)
        return 2


def mesh_gen_main(argv=None) -> int:
    from .mesh import generate_box_mesh, perturb_interior_vertices, write_mesh
    ap = argparse.ArgumentParser(prog="mesh-gen", description="Structured box mesh of (-1, 1)^N")
    ap.add_argument("--dim", type=int, default=3, choices=[2, 3])
    ap.add_argument("--level", type=int, default=0)
    ap.add_argument("--perturb", action="store_true", help="randomly move interior vertices")
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--out", required=True)
    a = ap.parse_args(argv)
    m = generate_box_mesh(a.dim, a.level)
    if a.perturb:
        m = perturb_interior_vertices(m, m.hmax, a.seed)
    write_mesh(m, a.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
