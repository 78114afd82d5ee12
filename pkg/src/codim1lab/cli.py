"""Command line runner: ``codim1lab <subcommand> --config PATH [overrides]``.

Config file (YAML)::

    geometry:            # passed to build_geometry
      kind: sphere
      radius: 1.0
      normal_orientation: 1
    grids: {n_u: 96, n_s: 96}
    epsilons: [0.2, 0.1, 0.05, 0.025]
    modes: {m_max: 4.5, sweep: [0.5]}
    t_grid: 11
    k: 4
    seed: 0
    trials: 100
    tolerances: {hermiticity: 1.0e-12, residual: 1.0e-8, gap_ratio: 10.0}
    output: {directory: out, formats: [csv, json]}

Each run writes ``<subcommand>.csv`` and ``summary.json`` into the output
directory.  Exit status: 0 ok, 2 when a check is flagged or indeterminate,
1 on any error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import sys
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import __version__
from .analysis import (
    a_term_norm_sweep,
    curvature_convergence,
    divergent_term_check,
    expansion_sweep,
    homotopy_scan,
    lambda_trace_check,
)
from .errors import Codim1Error, ConfigError, FocalViolationError
from .geometry import OffsetGeometry, build_geometry
from .operators import (
    assemble_mode_dirac,
    assemble_normal_T,
    assemble_product,
    meridian_grid,
    normal_grading,
    normal_grid,
    product_parts,
    verify_twist_unitary,
)
from .spectral import anticommutator_probe, eig_symmetric, graded_index

SUBCOMMANDS = ("spectrum", "index", "expansion", "curvature", "homotopy", "probe", "validate")
MIN_ORDER = 0.9

DEFAULTS: dict[str, Any] = {
    "grids": {"n_u": 96, "n_s": 96},
    "modes": {"m_max": 4.5},
    "t_grid": 11,
    "k": 4,
    "seed": 0,
    "trials": 100,
    "tolerances": {"hermiticity": 1e-12, "residual": 1e-8, "gap_ratio": 10.0},
    "output": {"directory": "out", "formats": ["csv", "json"]},
}


class Flagged(Exception):
    pass


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

def _merge(base, extra):
    out = copy.deepcopy(base)
    for key, val in (extra or {}).items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def _positive_int(cfg, *path):
    node = cfg
    for p in path:
        node = node[p]
    if isinstance(node, bool) or not isinstance(node, int) or node <= 0:
        raise ConfigError(f"{'.'.join(path)} must be a positive integer")
    return node


def admissible_modes(g: OffsetGeometry, m_max: float) -> list[float]:
    half = g.profile.has_poles or g.profile.spin_structure == "antiperiodic"
    start = 0.5 if half else 0.0
    pos = list(np.arange(start, m_max + 1e-9, 1.0))
    out = sorted({float(m) for m in pos} | {-float(m) for m in pos})
    return out


def load_config(path: str | None, overrides: dict | None = None) -> tuple[dict, OffsetGeometry]:
    """Parse, apply overrides, validate; returns (config, geometry)."""
    if path is None:
        raise ConfigError("no --config given")
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {str(exc).splitlines()[0]}") from None
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping")
    cfg = _merge(DEFAULTS, raw)
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key in ("n_u", "n_s"):
            cfg["grids"][key] = val
        elif key == "m_max":
            cfg["modes"]["m_max"] = val
        elif key == "out":
            cfg["output"]["directory"] = val
        elif key == "format":
            cfg["output"]["formats"] = val
        else:
            cfg[key] = val
    return validate_config(cfg)


def validate_config(cfg: dict) -> tuple[dict, OffsetGeometry]:
    if "geometry" not in cfg or not isinstance(cfg["geometry"], dict):
        raise ConfigError("geometry section missing")
    try:
        g = build_geometry(cfg["geometry"])
    except Codim1Error as exc:
        raise ConfigError(f"geometry: {exc}") from None
    eps = cfg.get("epsilons")
    if not isinstance(eps, list) or not eps:
        raise ConfigError("epsilons must be non-empty")
    try:
        eps = [float(e) for e in eps]
    except (TypeError, ValueError):
        raise ConfigError("epsilons must be numbers") from None
    for e in eps:
        if not e > 0:
            raise ConfigError(f"epsilon {e!r} must be positive")
        if e > g.max_offset * (1 + 1e-12):
            raise ConfigError(f"epsilon {e!r} exceeds focal validity limit {g.max_offset!r}")
    cfg["epsilons"] = eps
    for p in (("grids", "n_u"), ("grids", "n_s"), ("t_grid",), ("k",), ("trials",)):
        _positive_int(cfg, *p)
    if cfg["grids"]["n_u"] % 2:
        raise ConfigError("grids.n_u must be even")
    if cfg["grids"]["n_s"] < 2:
        raise ConfigError("grids.n_s must be at least 2")
    if cfg["t_grid"] < 2:
        raise ConfigError("t_grid must be at least 2")
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool):
        raise ConfigError("seed must be an integer")
    m_max = cfg["modes"].get("m_max")
    if not isinstance(m_max, (int, float)) or m_max < 0:
        raise ConfigError("modes.m_max must be a nonnegative number")
    modes = admissible_modes(g, float(m_max))
    if not modes:
        raise ConfigError("modes.m_max admits no modes for this geometry")
    sweep = cfg["modes"].get("sweep")
    if sweep is None:
        sweep = [min(m for m in modes if m > 0 or (m == 0 and 0.0 in modes))]
    try:
        sweep = [float(m) for m in sweep]
        for m in sweep:
            assemble_mode_dirac(g, m, 0.0, meridian_grid(g, 4))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"modes.sweep: {exc}") from None
    cfg["modes"] = {"m_max": float(m_max), "sweep": sweep, "list": modes}
    fmts = cfg["output"]["formats"]
    if isinstance(fmts, str):
        fmts = [f.strip() for f in fmts.split(",") if f.strip()]
    if not fmts or any(f not in ("csv", "json") for f in fmts):
        raise ConfigError("output.formats must be a non-empty subset of {csv, json}")
    cfg["output"]["formats"] = sorted(set(fmts))
    tol = cfg["tolerances"]
    for key in ("hermiticity", "residual", "gap_ratio"):
        if not isinstance(tol.get(key), (int, float)) or tol[key] <= 0:
            raise ConfigError(f"tolerances.{key} must be positive")
    return cfg, g


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _plain(x):
    """numpy scalars/arrays to JSON-ready builtins."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if v is None:
        return ""
    return str(v)


def emit_report(out_dir: Path, name: str, columns: list[str], records: list[dict],
                summary: dict, flags: list[str], cfg: dict) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    fmts = cfg["output"]["formats"]
    if "csv" in fmts:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for rec in records:
            w.writerow([_cell(rec.get(c)) for c in columns])
        p = out_dir / f"{name}.csv"
        p.write_text(buf.getvalue())
        written.append(p)
    if "json" in fmts:
        echo = {k: v for k, v in cfg.items() if k != "modes"}
        echo["modes"] = {"m_max": cfg["modes"]["m_max"], "sweep": cfg["modes"]["sweep"]}
        doc = {"subcommand": name, "version": __version__, "config": echo,
               "columns": columns, "records": records, "summary": summary, "flags": flags}
        p = out_dir / "summary.json"
        p.write_text(json.dumps(_plain(doc), indent=2, sort_keys=True) + "\n")
        written.append(p)
    return written


# ---------------------------------------------------------------------------
# pipelines; each returns (columns, records, summary, flags)
# ---------------------------------------------------------------------------

def _grids(cfg, g, eps):
    return meridian_grid(g, cfg["grids"]["n_u"]), normal_grid(eps, cfg["grids"]["n_s"])


def _solve(cfg, H, k):
    spec = eig_symmetric(H, k, seed=cfg["seed"], method="sparse" if H.shape[0] > 2000 else "dense")
    return spec


def run_spectrum(cfg, g, dump_dir=None):
    k, flags, recs = cfg["k"], [], []
    gu = meridian_grid(g, cfg["grids"]["n_u"])
    tol = cfg["tolerances"]["residual"]
    for m in cfg["modes"]["list"]:
        d0 = assemble_mode_dirac(g, m, 0.0, gu)
        spec = eig_symmetric(d0, k, seed=cfg["seed"], method="dense")
        for i, (lam, res) in enumerate(zip(spec.eigenvalues, spec.residuals)):
            recs.append({"mode": m, "k": i, "eigenvalue": lam, "residual": res, "epsilon": 0.0, "t": 0.0})
        for eps in cfg["epsilons"]:
            H, _ = assemble_product(g, m, eps, gu, normal_grid(eps, cfg["grids"]["n_s"]))
            if dump_dir is not None:
                dump_matrix(H.matrix, dump_dir / f"H_m{m:+g}_eps{eps:g}.txt")
            spec = _solve(cfg, H, k)
            if spec.residual_bound > tol * spec.norm:
                flags.append(f"residual above tolerance for m={m:g}, eps={eps:g}")
            for i, (lam, res) in enumerate(zip(spec.eigenvalues, spec.residuals)):
                recs.append({"mode": m, "k": i, "eigenvalue": lam, "residual": res, "epsilon": eps, "t": 1.0})
    cols = ["mode", "k", "eigenvalue", "residual", "epsilon", "t"]
    return cols, recs, {"n_records": len(recs)}, flags


def dump_matrix(mat, path: Path):
    """Text dump, one nonzero per line: row col re im."""
    coo = mat.tocoo()
    order = np.lexsort((coo.col, coo.row))
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for i in order:
            v = coo.data[i]
            fh.write(f"{coo.row[i]} {coo.col[i]} {v.real:.17g} {v.imag:.17g}\n")


def run_index(cfg, g):
    recs, flags = [], []
    gap_min = cfg["tolerances"]["gap_ratio"]
    n_s = cfg["grids"]["n_s"]
    for eps in cfg["epsilons"]:
        t = assemble_normal_T(eps, normal_grid(eps, n_s))
        res = graded_index(t, normal_grading(t), eig_symmetric(t),
                           scale=math.pi / (2 * eps) * math.sqrt(3), gap_min=gap_min)
        recs.append(_index_row("T", eps, res))
        if res.indeterminate:
            flags.append(f"indeterminate index of T at eps={eps:g}")
    for eps in cfg["epsilons"]:
        gu, gs = _grids(cfg, g, eps)
        plus = minus = 0
        worst, indet = math.inf, False
        for m in cfg["modes"]["list"]:
            H, G = assemble_product(g, m, eps, gu, gs)
            res = graded_index(H, G, _solve(cfg, H, max(cfg["k"], 6)), gap_min=gap_min)
            plus += res.kernel_dim_plus
            minus += res.kernel_dim_minus
            worst = min(worst, res.gap_ratio)
            indet = indet or res.indeterminate
        recs.append({"operator": "H", "epsilon": eps, "index": plus - minus, "ker_plus": plus,
                     "ker_minus": minus, "gap_ratio": worst, "indeterminate": indet})
        if indet:
            flags.append(f"indeterminate index of H at eps={eps:g}")
    cols = ["operator", "epsilon", "index", "ker_plus", "ker_minus", "gap_ratio", "indeterminate"]
    return cols, recs, {"n_records": len(recs)}, flags


def _index_row(op, eps, res):
    return {"operator": op, "epsilon": eps, "index": res.index, "ker_plus": res.kernel_dim_plus,
            "ker_minus": res.kernel_dim_minus, "gap_ratio": res.gap_ratio,
            "indeterminate": res.indeterminate}


CONV_COLS = ["param_name", "param_value", "error"]


def _conv_flags(rep, label):
    flags = [f"{label}: {f}" for f in rep.flags]
    if not rep.exact and (rep.fitted_order is None or rep.fitted_order < MIN_ORDER):
        flags.append(f"{label}: fitted order below {MIN_ORDER}")
    return flags


def _need_three(cfg):
    if len(cfg["epsilons"]) < 3:
        raise ConfigError("this subcommand needs at least 3 epsilons")


def run_expansion(cfg, g):
    _need_three(cfg)
    rep = expansion_sweep(g, cfg["modes"]["sweep"], cfg["epsilons"], cfg["grids"]["n_u"],
                          cfg["grids"]["n_s"], cfg["k"], seed=cfg["seed"])
    div = divergent_term_check(cfg["epsilons"], cfg["grids"]["n_s"])
    summary = rep.summary()
    summary["divergent_order"] = div.fitted_order
    flags = _conv_flags(rep, "expansion")
    if div.fitted_order is None or abs(div.fitted_order + 1) > 0.05:
        flags.append("divergent term: order not -1")
    return CONV_COLS, rep.records(), summary, flags


def run_curvature(cfg, g):
    _need_three(cfg)
    rep = curvature_convergence(g, cfg["epsilons"])
    a_rep = a_term_norm_sweep(g, cfg["epsilons"])
    summary = rep.convergence.summary()
    summary["a_term"] = a_rep.summary()
    summary["a_term"]["errors"] = a_rep.errors
    summary["field_sup"] = rep.field_sup
    flags = _conv_flags(rep.convergence, "curvature") + _conv_flags(a_rep, "a_term")
    return CONV_COLS, rep.convergence.records(), summary, flags


def run_homotopy(cfg, g):
    recs, flags, summ = [], [], {}
    ts = np.linspace(0.0, 1.0, cfg["t_grid"])
    n_u, n_s = cfg["grids"]["n_u"], cfg["grids"]["n_s"]
    for eps in cfg["epsilons"]:
        rep = homotopy_scan(g, cfg["modes"]["sweep"], eps, ts, n_u, n_s, max(cfg["k"], 6), seed=cfg["seed"])
        for t, idx, bad in zip(rep.t, rep.index, rep.indeterminate):
            recs.append({"epsilon": eps, "t": t, "index": idx, "indeterminate": bad})
        summ[f"{eps:g}"] = {"max_jump": rep.max_jump, "jump_constant": rep.jump_constant,
                           "min_gap": rep.min_gap}
        flags += [f"eps={eps:g}: {f}" for f in rep.flags]
        if rep.jump_to_gap > 0.5:
            flags.append(f"eps={eps:g}: eigenvalue jump exceeds half the gap")
    return ["epsilon", "t", "index", "indeterminate"], recs, summ, flags


def run_probe(cfg, g):
    recs, flags = [], []
    n_u, n_s = cfg["grids"]["n_u"], cfg["grids"]["n_s"]
    for eps in cfg["epsilons"]:
        for m in cfg["modes"]["sweep"]:
            prev = None
            for lev in (1, 2):
                parts = product_parts(g, m, eps, meridian_grid(g, lev * n_u), normal_grid(eps, lev * n_s))
                pr = anticommutator_probe(parts.d1, parts.normal, cfg["trials"], cfg["seed"])
                recs.append({"mode": m, "epsilon": eps, "n_u": lev * n_u, "n_s": lev * n_s,
                             "max_anticommutator": pr.max_anticommutator,
                             "max_domination": pr.max_domination})
                if not pr.finite:
                    flags.append(f"m={m:g}, eps={eps:g}: non-finite ratio")
                if prev is not None:
                    for a, b, name in ((prev.max_anticommutator, pr.max_anticommutator, "anticommutator"),
                                       (prev.max_domination, pr.max_domination, "domination")):
                        if b > 2 * a:
                            flags.append(f"m={m:g}, eps={eps:g}: {name} ratio grew more than 2x")
                prev = pr
    cols = ["mode", "epsilon", "n_u", "n_s", "max_anticommutator", "max_domination"]
    return cols, recs, {"trials": cfg["trials"]}, flags


def run_validate(cfg, g):
    recs = []

    def check(name, value, tol, ok=None):
        passed = value <= tol if ok is None else ok
        recs.append({"check": name, "value": value, "tolerance": tol, "passed": passed})

    herm = cfg["tolerances"]["hermiticity"]
    eps = cfg["epsilons"][0]
    gu = meridian_grid(g, min(cfg["grids"]["n_u"], 64))
    gs = normal_grid(eps, min(cfg["grids"]["n_s"], 32))
    m = cfg["modes"]["sweep"][0]
    d = assemble_mode_dirac(g, m, 0.0, gu)
    check("leaf_hermitian", d.symmetry_error(), herm)
    H, G = assemble_product(g, m, eps, gu, gs)
    check("product_hermitian", H.symmetry_error(), herm)
    check("product_grading_odd", G.anticommutator_error(H), herm)
    t = assemble_normal_T(eps, gs)
    check("normal_hermitian", t.symmetry_error(), herm)
    idx = graded_index(t, normal_grading(t), eig_symmetric(t))
    check("normal_index", float(abs(idx.index - 1)), 0.0)
    worst = max(max(r.operator_error, r.grading_error, r.unitarity_error)
                for r in (verify_twist_unitary(cfg["seed"] + i) for i in range(5)))
    check("twist_unitary", worst, 1e-13)
    lt = lambda_trace_check(g, [4e-3, 2e-3, 1e-3])
    check("lambda_trace_order", lt.fitted_order, 0.2, ok=1.8 <= lt.fitted_order <= 2.2)
    flags = [f"check failed: {r['check']}" for r in recs if not r["passed"]]
    return ["check", "value", "tolerance", "passed"], recs, {"n_checks": len(recs)}, flags


PIPELINES = {
    "spectrum": run_spectrum,
    "index": run_index,
    "expansion": run_expansion,
    "curvature": run_curvature,
    "homotopy": run_homotopy,
    "probe": run_probe,
    "validate": run_validate,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _float_list(values):
    out = []
    for v in values:
        out.extend(float(x) for x in str(v).split(",") if x.strip())
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="codim1lab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--epsilons", nargs="+", default=None)
        p.add_argument("--n-u", type=int, default=None)
        p.add_argument("--n-s", type=int, default=None)
        p.add_argument("--m-max", type=float, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--format", default=None)
        if name == "spectrum":
            p.add_argument("--dump-matrices", action="store_true",
                           help="also write each product matrix as 'row col re im' lines")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = {
            "epsilons": _float_list(args.epsilons) if args.epsilons is not None else None,
            "n_u": args.n_u, "n_s": args.n_s, "m_max": args.m_max, "seed": args.seed,
            "out": args.out, "format": args.format,
        }
    except ValueError:
        print("config: --epsilons must be numbers", file=sys.stderr)
        return 1
    try:
        cfg, g = load_config(args.config, overrides)
        out_dir = Path(cfg["output"]["directory"])
        if args.subcommand == "spectrum" and args.dump_matrices:
            cols, recs, summary, flags = run_spectrum(cfg, g, out_dir / "matrices")
        else:
            cols, recs, summary, flags = PIPELINES[args.subcommand](cfg, g)
        emit_report(out_dir, args.subcommand, cols, recs, summary, flags, cfg)
    except ConfigError as exc:
        print(f"config: {exc}", file=sys.stderr)
        return 1
    except FocalViolationError as exc:
        print(f"geometry: {exc}", file=sys.stderr)
        return 1
    except (Codim1Error, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io: {exc}", file=sys.stderr)
        return 1
    for f in flags:
        print(f"flag: {f}", file=sys.stderr)
    return 2 if flags else 0


if __name__ == "__main__":
    sys.exit(main())
