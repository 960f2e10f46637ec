"""Command-line pipelines: generation, solving, escape rates, ensembles,
cluster analysis, basin maps, and scaling tables.

Every run resolves its parameters (defaults < config file < flags) into a
canonical config whose hash names the run directory; the resolved config is
echoed there so any artifact can be regenerated bit-exactly.  Worker counts
change wall time only, never output bytes.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import basin as basin_mod
from . import clusters as clusters_mod
from . import scaling as scaling_mod
from .dynamics import IntegratorConfig, integrate
from .escape import (DEFAULT_WINDOW, escape_config, fit_kappa, run_batch,
                     sample_initial, survival_csv)
from .formula import (EnsembleSpec, SatStatus, dimacs_read, dimacs_write,
                      dpll_sat, formula_hash_hex, random_ksat)
from .util import canonical_json, fnv1a64, hash_hex

CONFIG_SCHEMA_VERSION = 1
OUT_ROOT_ENV = "CTDSAT_OUT"

EXIT_OK = 0
EXIT_USER_ERROR = 1
EXIT_INTERNAL_ERROR = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits with code 2
        raise UsageError(message)


def _progress(args, event: str, **fields):
    if getattr(args, "json", False):
        print(canonical_json({"event": event, **fields}))
        sys.stdout.flush()
    else:
        detail = " ".join(f"{k}={v}" for k, v in fields.items())
        print(f"[{event}] {detail}", file=sys.stderr)


def _out_root(args) -> Path:
    if args.out_dir:
        return Path(args.out_dir)
    return Path(os.environ.get(OUT_ROOT_ENV, "runs"))


def _resolve_config(args, keys: list[str]) -> dict:
    """Merge config-file values under explicit flags; echo-ready dict."""
    file_cfg = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file: {exc}") from exc
        if raw.get("schema_version") != CONFIG_SCHEMA_VERSION:
            raise UsageError(
                f"config schema_version {raw.get('schema_version')!r} != "
                f"{CONFIG_SCHEMA_VERSION}")
        file_cfg = raw.get(args.command, {})
        unknown = set(file_cfg) - set(keys)
        if unknown:
            raise UsageError(f"unknown config keys for {args.command}: {sorted(unknown)}")
    resolved = {}
    for key in keys:
        value = getattr(args, key)
        if value is None and key in file_cfg:
            value = file_cfg[key]
        resolved[key] = value
    return resolved


def _run_dir(args, command: str, resolved: dict) -> tuple[Path, str]:
    # worker count changes wall time only, never results: keep it out of
    # the run identity so reruns at any degree land on the same artifacts
    params = {k: v for k, v in resolved.items() if k != "workers"}
    payload = canonical_json({"command": command, "schema_version": CONFIG_SCHEMA_VERSION,
                              "params": params})
    run_id = hash_hex(fnv1a64(payload.encode("ascii")))
    run_dir = _out_root(args) / f"{command}-{run_id}"
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(payload + "\n")
    return run_dir, run_id


def _require(resolved: dict, *names):
    for name in names:
        if resolved[name] is None:
            raise UsageError(f"missing required parameter --{name.replace('_', '-')}")


def _integrator_config(resolved: dict, n: int) -> IntegratorConfig:
    overrides = {}
    if resolved.get("t_max") is not None:
        overrides["t_max"] = resolved["t_max"]
    if resolved.get("rel_tol") is not None:
        overrides["rel_tol"] = resolved["rel_tol"]
    return escape_config(n, **overrides)


def _load_formula(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    return dimacs_read(text)


def _float_list(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok]


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    keys = ["n", "k", "alpha", "count", "seed"]
    resolved = _resolve_config(args, keys)
    _require(resolved, "n", "k", "alpha", "count", "seed")
    run_dir, run_id = _run_dir(args, "generate", resolved)
    spec = EnsembleSpec(n=resolved["n"], k=resolved["k"], alpha=resolved["alpha"],
                        count=resolved["count"], seed=resolved["seed"])
    for idx in range(spec.count):
        f = random_ksat(spec, idx)
        name = f"ksat_n{spec.n}_k{spec.k}_m{f.m}_{idx:04d}.cnf"
        (run_dir / name).write_text(dimacs_write(f))
    _progress(args, "generate.done", run_id=run_id, files=spec.count,
              out=str(run_dir))
    return EXIT_OK


def cmd_solve(args) -> int:
    keys = ["dimacs", "seed", "t_max", "rel_tol"]
    resolved = _resolve_config(args, keys)
    _require(resolved, "dimacs", "seed")
    f = _load_formula(resolved["dimacs"])
    run_dir, run_id = _run_dir(args, "solve", resolved)
    cfg = _integrator_config(resolved, f.n)
    state = sample_initial(f, resolved["seed"], 0)
    out = integrate(f, state, cfg)
    record = {
        "formula_hash": formula_hash_hex(f),
        "n": f.n, "m": f.m, "k": f.k,
        "status": out.status.value,
        "solution": ("".join("1" if b else "0" for b in out.solution)
                     if out.solution is not None else None),
        "t_solve": out.t_solve,
        "steps": out.steps,
        "seed": resolved["seed"],
    }
    (run_dir / "outcome.json").write_text(canonical_json(record) + "\n")
    _progress(args, "solve.done", run_id=run_id, status=out.status.value)
    return EXIT_OK


def cmd_escape(args) -> int:
    keys = ["dimacs", "trajectories", "seed", "t_max", "rel_tol", "window",
            "min_points", "workers"]
    resolved = _resolve_config(args, keys)
    _require(resolved, "dimacs", "trajectories", "seed")
    f = _load_formula(resolved["dimacs"])
    run_dir, run_id = _run_dir(args, "escape", resolved)
    cfg = _integrator_config(resolved, f.n)
    window = tuple(_float_list(resolved["window"])) if resolved["window"] else DEFAULT_WINDOW
    min_points = resolved["min_points"] if resolved["min_points"] is not None else 200
    curve = run_batch(f, resolved["trajectories"], cfg, resolved["seed"],
                      workers=resolved["workers"] or 1)
    (run_dir / "survival.csv").write_text(survival_csv(curve))
    est = fit_kappa(curve, f.n, window=window, min_points=min_points)
    record = {
        "formula_hash": formula_hash_hex(f),
        "n": f.n, "m": f.m, "k": f.k, "alpha": f.alpha,
        "kappa": est.kappa, "eta": est.eta, "r2": est.r_squared,
        "stderr": est.stderr_kappa, "censored": curve.censored,
        "launched": curve.launched, "seed": resolved["seed"],
    }
    (run_dir / "estimate.json").write_text(canonical_json(record) + "\n")
    _progress(args, "escape.done", run_id=run_id, kappa=est.kappa, eta=est.eta)
    return EXIT_OK


def cmd_ensemble(args) -> int:
    keys = ["n", "k", "alphas", "count", "trajectories", "seed", "t_max",
            "rel_tol", "min_points", "workers"]
    resolved = _resolve_config(args, keys)
    _require(resolved, "n", "k", "alphas", "count", "seed")
    run_dir, run_id = _run_dir(args, "ensemble", resolved)
    n = resolved["n"]
    cfg = _integrator_config(resolved, n)
    min_points = resolved["min_points"] if resolved["min_points"] is not None else 200
    all_records, all_quarantined = [], []
    for alpha in _float_list(resolved["alphas"]):
        point_seed = fnv1a64(
            f"ens:{resolved['seed']}:{n}:{resolved['k']}:{alpha!r}".encode("ascii"))
        sample = scaling_mod.hardness_ensemble(
            alpha, n, resolved["count"], point_seed, k=resolved["k"],
            n_traj=resolved["trajectories"], cfg=cfg, min_points=min_points,
            workers=resolved["workers"] or 1)
        all_records.extend(sample.records)
        all_quarantined.extend(
            {"alpha": alpha, **q} for q in sample.quarantined)
        _progress(args, "ensemble.point", alpha=alpha, records=len(sample.records))
    (run_dir / "records.jsonl").write_text(scaling_mod.records_to_jsonl(all_records))
    (run_dir / "quarantine.jsonl").write_text(
        "".join(canonical_json(q) + "\n" for q in all_quarantined))
    _progress(args, "ensemble.done", run_id=run_id, records=len(all_records))
    return EXIT_OK


def cmd_clusters(args) -> int:
    keys = ["dimacs", "alphas", "ns", "count", "seed", "k", "satisfiable_only"]
    resolved = _resolve_config(args, keys)
    run_dir, run_id = _run_dir(args, "clusters", resolved)
    if resolved["dimacs"]:
        f = _load_formula(resolved["dimacs"])
        report = clusters_mod.cluster_report(f)
        payload = {
            "formula_hash": formula_hash_hex(f),
            "n": f.n, "m": f.m, "k": f.k,
            "n_solutions": len(report.solutions),
            "n_clusters": report.n_clusters,
            "clusters": [
                {
                    "solutions": ["".join("1" if b else "0" for b in report.solutions[i])
                                  for i in members],
                    "frozen_vars": list(report.frozen_vars[ci]),
                    "free_vars": list(report.free_vars[ci]),
                }
                for ci, members in enumerate(report.clusters)
            ],
        }
        (run_dir / "report.json").write_text(canonical_json(payload) + "\n")
        _progress(args, "clusters.done", run_id=run_id,
                  n_clusters=report.n_clusters)
        return EXIT_OK
    _require(resolved, "alphas", "ns", "count", "seed")
    rows = clusters_mod.cluster_sweep(
        _float_list(resolved["alphas"]), _int_list(resolved["ns"]),
        resolved["count"], resolved["seed"], k=resolved["k"] or 3,
        satisfiable_only=bool(resolved["satisfiable_only"]))
    (run_dir / "sweep.csv").write_text(clusters_mod.sweep_csv(rows))
    _progress(args, "clusters.done", run_id=run_id, rows=len(rows))
    return EXIT_OK


def cmd_basin(args) -> int:
    keys = ["dimacs", "resolution", "background_seed", "t_max", "rel_tol",
            "workers", "bounds"]
    resolved = _resolve_config(args, keys)
    _require(resolved, "dimacs")
    f = _load_formula(resolved["dimacs"])
    cert = dpll_sat(f)
    if cert.status is not SatStatus.SAT:
        raise UsageError(f"basin maps need a certified-satisfiable formula "
                         f"(DPLL says {cert.status.value})")
    run_dir, run_id = _run_dir(args, "basin", resolved)
    resolution = resolved["resolution"] or 600
    cfg = _integrator_config(resolved, f.n)
    bounds = ((-1.0, 1.0), (-1.0, 1.0))
    if resolved["bounds"]:
        vals = _float_list(resolved["bounds"])
        if len(vals) != 4:
            raise UsageError("--bounds needs lo1,hi1,lo2,hi2")
        bounds = ((vals[0], vals[1]), (vals[2], vals[3]))
    bmap = basin_mod.basin_map(f, resolution=resolution,
                               background_seed=resolved["background_seed"] or 0,
                               cfg=cfg, bounds=bounds,
                               workers=resolved["workers"] or 1)
    (run_dir / "time_map.pgm").write_bytes(basin_mod.render_time_pgm(bmap))
    (run_dir / "solution_map.ppm").write_bytes(basin_mod.render_solution_ppm(bmap))
    (run_dir / "map.csv").write_text(basin_mod.map_csv(bmap))
    _progress(args, "basin.done", run_id=run_id,
              solutions=len(bmap.assignments),
              censored=int(bmap.censored.sum()),
              low_confidence=bmap.low_confidence)
    return EXIT_OK


def cmd_scaling(args) -> int:
    keys = ["records", "eta_c", "d_alpha", "alpha_chi"]
    resolved = _resolve_config(args, keys)
    _require(resolved, "records")
    run_dir, run_id = _run_dir(args, "scaling", resolved)
    records = []
    for path in resolved["records"].split(","):
        try:
            records.extend(scaling_mod.records_from_jsonl(Path(path).read_text()))
        except OSError as exc:
            raise UsageError(f"cannot read records: {exc}") from exc
    if not records:
        raise UsageError("no records found")
    eta_c = resolved["eta_c"] if resolved["eta_c"] is not None else scaling_mod.ETA_C
    by_k: dict[int, list] = {}
    for r in records:
        by_k.setdefault(r.k, []).append(r)
    summary = {"eta_c": eta_c, "run_id": run_id, "k": {}}
    for k, recs in sorted(by_k.items()):
        summary["k"][str(k)] = _scaling_for_k(run_dir, k, recs, eta_c, resolved)
    (run_dir / "scaling_result.json").write_text(canonical_json(summary) + "\n")
    _progress(args, "scaling.done", run_id=run_id, records=len(records))
    return EXIT_OK


def _scaling_for_k(run_dir: Path, k: int, records, eta_c: float, resolved) -> dict:
    mean_rows = scaling_mod.mean_hardness(records)
    rho_rows = scaling_mod.rho_fraction(records, eta_c=eta_c)
    out: dict = {"n_records": len(records)}

    mean_name = "fig3a.csv" if k == 3 else "fig7.csv" if k == 2 else f"mean_eta_k{k}.csv"
    _write_csv(run_dir / mean_name, ["alpha", "n", "mean_eta", "stderr", "sigma", "count"],
               mean_rows)
    _write_csv(run_dir / ("fig3b.csv" if k == 3 else f"rho_k{k}.csv"),
               ["alpha", "n", "rho", "stderr", "count"], rho_rows)

    # per-(alpha, n) hardness histograms
    groups = scaling_mod._group_records(records)
    ns = sorted({n for _, n in groups})
    for n in ns:
        alphas = sorted(a for a, nn in groups if nn == n)
        if not alphas:
            continue
        edges, _ = scaling_mod.eta_histogram(groups[(alphas[0], n)])
        centers = 0.5 * (edges[:-1] + edges[1:])
        cols = {"eta": centers}
        for a in alphas:
            _, density = scaling_mod.eta_histogram(groups[(a, n)])
            cols[f"alpha_{a:g}"] = density
        name = f"fig2_{n}.csv" if k == 3 else f"hist_k{k}_{n}.csv"
        _write_columns(run_dir / name, cols)

    # escape-rate decay with N, per alpha (three or more sizes needed)
    alphas_all = sorted({a for a, _ in groups})
    beta_rows = []
    fig1_rows = []
    for a in alphas_all:
        kappa_by_n = []
        for n in sorted(n for aa, n in groups if aa == a):
            kappas = [r.kappa for r in groups[(a, n)]]
            fig1_rows.append({"alpha": a, "n": n,
                              "mean_log10_kappa": float(np.mean(np.log10(kappas)))})
            kappa_by_n.append((n, kappas))
        if len(kappa_by_n) >= 3:
            fit = scaling_mod.fit_beta(kappa_by_n)
            beta_rows.append({"alpha": a, "beta": fit.exponent, "stderr": fit.stderr})
    _write_csv(run_dir / ("fig1.csv" if k == 3 else f"mean_log_kappa_k{k}.csv"),
               ["alpha", "n", "mean_log10_kappa"], fig1_rows)
    if beta_rows:
        out["beta"] = beta_rows

    if len(ns) >= 2 and len(rho_rows) >= 4:
        fit = scaling_mod.collapse_fit(rho_rows)
        out["collapse"] = {"nu": fit.nu, "alpha_chi": fit.alpha_chi, "b": fit.b,
                           "y0": fit.y0, "residual": fit.residual}
        collapse_rows = [{"alpha": r["alpha"], "n": r["n"],
                          "y": r["n"] ** fit.nu * (r["alpha"] - fit.alpha_chi) / fit.alpha_chi,
                          "rho": r["rho"]} for r in rho_rows]
        _write_csv(run_dir / ("fig3c.csv" if k == 3 else f"collapse_k{k}.csv"),
                   ["alpha", "n", "y", "rho"], collapse_rows)
    alpha_chi = resolved["alpha_chi"]
    if alpha_chi is None and "collapse" in out:
        alpha_chi = out["collapse"]["alpha_chi"]

    d_alpha = resolved["d_alpha"]
    chi_rows = []
    if d_alpha:
        for n in ns:
            rows_n = [r for r in mean_rows if r["n"] == n]
            try:
                chi_rows.extend(scaling_mod.susceptibility(rows_n, d_alpha))
            except ValueError:
                continue
        if chi_rows:
            _write_csv(run_dir / ("fig3d.csv" if k == 3 else f"chi_k{k}.csv"),
                       ["alpha", "n", "chi"], chi_rows)
        if chi_rows and alpha_chi is not None:
            gammas = {}
            for n in ns:
                rows_n = [r for r in chi_rows if r["n"] == n]
                try:
                    fit = scaling_mod.fit_gamma(rows_n, alpha_chi)
                    gammas[str(n)] = {"gamma": fit.exponent, "stderr": fit.stderr}
                except ValueError:
                    continue
            if gammas:
                out["gamma"] = gammas
    return out


def _write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_csv_cell(row[c]) for c in columns))
    path.write_text("\n".join(lines) + "\n")


def _write_columns(path: Path, cols: dict) -> None:
    names = list(cols)
    length = len(next(iter(cols.values())))
    lines = [",".join(names)]
    for i in range(length):
        lines.append(",".join(_csv_cell(cols[name][i]) for name in names))
    path.write_text("\n".join(lines) + "\n")


def _csv_cell(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="ctdsat", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out-dir", default=None, help="run directory root")
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--json", action="store_true",
                       help="machine-readable progress on stdout")

    p = sub.add_parser("generate", help="write random k-SAT DIMACS files")
    common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve", help="run one trajectory on a DIMACS formula")
    common(p)
    p.add_argument("--dimacs")
    p.add_argument("--seed", type=int)
    p.add_argument("--t-max", dest="t_max", type=float)
    p.add_argument("--rel-tol", dest="rel_tol", type=float)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("escape", help="survival curve and escape-rate fit")
    common(p)
    p.add_argument("--dimacs")
    p.add_argument("--trajectories", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--t-max", dest="t_max", type=float)
    p.add_argument("--rel-tol", dest="rel_tol", type=float)
    p.add_argument("--window", help="q_hi,q_lo survival fit window")
    p.add_argument("--min-points", dest="min_points", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_escape)

    p = sub.add_parser("ensemble", help="hardness records over an alpha grid")
    common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--alphas", help="comma-separated alpha values")
    p.add_argument("--count", type=int, help="certified instances per point")
    p.add_argument("--trajectories", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--t-max", dest="t_max", type=float)
    p.add_argument("--rel-tol", dest="rel_tol", type=float)
    p.add_argument("--min-points", dest="min_points", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("clusters", help="solution-cluster report or sweep")
    common(p)
    p.add_argument("--dimacs", help="single-formula report mode")
    p.add_argument("--alphas", help="sweep alphas")
    p.add_argument("--ns", help="sweep variable counts")
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--satisfiable-only", dest="satisfiable_only",
                   action="store_const", const=True)
    p.set_defaults(func=cmd_clusters)

    p = sub.add_parser("basin", help="basin-of-attraction map images")
    common(p)
    p.add_argument("--dimacs")
    p.add_argument("--resolution", type=int)
    p.add_argument("--background-seed", dest="background_seed", type=int)
    p.add_argument("--t-max", dest="t_max", type=float)
    p.add_argument("--rel-tol", dest="rel_tol", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--bounds", help="lo1,hi1,lo2,hi2 zoom window")
    p.set_defaults(func=cmd_basin)

    p = sub.add_parser("scaling", help="figure tables from hardness records")
    common(p)
    p.add_argument("--records", help="comma-separated records.jsonl paths")
    p.add_argument("--eta-c", dest="eta_c", type=float)
    p.add_argument("--d-alpha", dest="d_alpha", type=float)
    p.add_argument("--alpha-chi", dest="alpha_chi", type=float)
    p.set_defaults(func=cmd_scaling)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER_ERROR
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER_ERROR
    except Exception as exc:  # noqa: BLE001 - report and exit 2
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL_ERROR


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
