"""Command-line front end.

Subcommands ``check``, ``solve``, ``compare``, ``truncation`` and
``simulate`` read one TOML config and write a run directory holding
``config.echo``, the CSV tables the command produces and ``diagnostics.json``.
CSV files start with a ``# config <digest>`` comment and contain no
timestamps, so the same config and seeds give byte-identical tables.

Exit codes: 0 success, 1 admissibility or existence failure, 2 solver
failure, 3 config or usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import kernels
from .config import ConfigError, ExperimentConfig, load_config
from .evaluation import (
    ExistenceError,
    average_cost_exact,
    simulate,
    truncation_sweep,
)
from .mdp import ConstructionError, build
from .policies import (
    BaselineSpec,
    NotSwitching,
    SwitchingPolicy,
    extract_thresholds,
    label_error,
    make_baseline,
)
from .significance import Constant, check_existence
from .solvers import SolverError, grid_search_baseline, solve
from .source import validate

EXIT_OK, EXIT_INADMISSIBLE, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2, 3

COMPARE_ORDER = (
    "randomized",
    "periodic",
    "reactive",
    "error_triggered",
    "threshold",
    "distortion_proxy",
    "aoi_reference",
    "aoii_reference",
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


class Run:
    """Output directory of one command invocation."""

    def __init__(self, cfg: ExperimentConfig, out: Path, command: str):
        self.cfg = cfg
        self.out = out
        self.digest = cfg.digest()
        self.diag = {
            "command": command,
            "config_digest": self.digest,
            "backend": kernels.BACKEND,
            "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "records": [],
        }
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.echo").write_text(cfg.to_toml())

    def write_csv(self, name: str, header: list[str], rows: list[list], notes: tuple[str, ...] = ()):
        buf = io.StringIO()
        buf.write(f"# config {self.digest}\n")
        for n in notes:
            buf.write(f"# {n}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows([[_fmt(v) for v in r] for r in rows])
        (self.out / name).write_text(buf.getvalue())

    def finish(self, status: int) -> int:
        self.diag["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        self.diag["exit_status"] = status
        (self.out / "diagnostics.json").write_text(json.dumps(self.diag, indent=2, default=_json_default) + "\n")
        return status


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        return f"{v:.10g}"
    return str(v)


def _tau_str(v: float) -> str:
    return "inf" if math.isinf(v) else str(int(v))


def _matrix_str(sw: SwitchingPolicy) -> str:
    return ";".join(" ".join(_tau_str(v) for v in row) for row in sw.tau)


def _class_thresholds(sw: SwitchingPolicy, mdp) -> dict[str, str]:
    """Common threshold per error class, or ``mixed``."""
    vals: dict[str, set] = {"missed": set(), "false": set(), "normal": set()}
    for i, j in mdp.errors:
        vals[label_error(mdp, i, j)].add(sw.tau[i, j])
    return {k: ("-" if not v else _tau_str(v.pop()) if len(v) == 1 else "mixed") for k, v in vals.items()}


def _uniform(sw: SwitchingPolicy, mdp) -> str:
    v = {sw.tau[i, j] for i, j in mdp.errors}
    return _tau_str(v.pop()) if len(v) == 1 else "mixed"


def _solver_kwargs(cfg: ExperimentConfig) -> dict:
    sv = cfg.solver
    kw = {"max_iter": int(sv["max_iter"])}
    if sv["method"] == "rvi":
        kw = {"tol": float(sv["tol"]), "max_iter": max(int(sv["max_iter"]), 200_000)}
    if cfg.s_ref() is not None:
        kw["s_ref"] = cfg.s_ref()
    return kw


def _grid(cfg):
    return [(p, lam, N) for p in cfg.p_s_values for lam in cfg.lambdas for N in cfg.N_values]


def _pmap(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _existence_ok(cfg: ExperimentConfig, quiet: bool = False) -> bool:
    src, prof = cfg.source_model(), cfg.profile()
    ok = True
    for p_s in cfg.p_s_values:
        rep = check_existence(prof, src, 1.0 - p_s)
        ok &= rep.passed
        if not rep.passed and not quiet:
            for e in rep.failures():
                print(f"existence fails for error ({e.i + 1},{e.j + 1}) at p_s={p_s:g}: "
                      f"ratio {e.ratio:.4f} >= bound {e.bound:.4f}", file=sys.stderr)
    return ok


def _admissible(cfg: ExperimentConfig) -> bool:
    rep = validate(cfg.source_model())
    for v in rep.violations:
        print(f"source inadmissible: {v}", file=sys.stderr)
    return rep.admissible


# --- subcommands -------------------------------------------------------------


def cmd_check(cfg: ExperimentConfig, run: Run, args) -> int:
    if not _admissible(cfg):
        return EXIT_INADMISSIBLE
    src, prof = cfg.source_model(), cfg.profile()
    ok = True
    rows = []
    print(f"{'p_s':>5} {'error':>7} {'class':>7} {'ratio':>10} {'bound':>10}  result")
    for p_s in cfg.p_s_values:
        rep = check_existence(prof, src, 1.0 - p_s)
        ok &= rep.passed
        for e in rep.entries:
            cls = "missed" if e.i in src.alarm_states and e.j not in src.alarm_states else (
                "false" if e.j in src.alarm_states and e.i not in src.alarm_states else "normal")
            res = "pass" if e.passed else "FAIL"
            print(f"{p_s:>5g} ({e.i + 1},{e.j + 1})".ljust(13) + f" {cls:>7} {e.ratio:>10.4f} {e.bound:>10.4f}  {res}")
            rows.append({"p_s": p_s, "i": e.i + 1, "j": e.j + 1, "ratio": e.ratio, "bound": e.bound, "pass": e.passed})
    run.diag["records"] = rows
    print("existence condition holds" if ok else "existence condition FAILS")
    return EXIT_OK if ok else EXIT_INADMISSIBLE


def cmd_solve(cfg: ExperimentConfig, run: Run, args) -> int:
    if not _admissible(cfg):
        return EXIT_INADMISSIBLE
    if not _existence_ok(cfg) and not args.force:
        print("refusing to solve; pass --force to override", file=sys.stderr)
        return EXIT_INADMISSIBLE
    src, prof = cfg.source_model(), cfg.profile()
    method = cfg.solver["method"]
    kw = _solver_kwargs(cfg)
    refs = bool(cfg.solver.get("references"))

    def job(point):
        p_s, lam, N = point
        mdp = build(src, prof, p_s, lam, N)
        res = solve(mdp, method, **kw)
        sw = res.thresholds
        rec = {"p_s": p_s, "lambda": lam, "N": N, "mdp": mdp.summary(), "solver": res.diagnostics()}
        if isinstance(sw, NotSwitching):
            rec["not_switching"] = [sw.i + 1, sw.j + 1, sw.delta]
            return rec, None, mdp
        rec["thresholds"] = _matrix_str(sw)
        if refs:
            proxy = mdp.with_cost(profile=prof.with_age_function(Constant(1.0)))
            rec["distortion"] = _uniform(solve(proxy, "spi").thresholds, mdp)
            rec["aoi"] = make_baseline(BaselineSpec("aoi_reference"), mdp).label.removeprefix("tau=")
            rec["aoii"] = make_baseline(BaselineSpec("aoii_reference"), mdp).label.removeprefix("tau=")
        return rec, sw, mdp

    results = _pmap(job, _grid(cfg), args.threads)
    header = ["p_s", "lambda", "N", "L_star", "missed", "false", "normal"]
    if refs:
        header += ["distortion", "aoi", "aoii"]
    header.append("matrix")
    rows = []
    status = EXIT_OK
    print("  ".join(f"{h:>8}" for h in header[:-1]))
    for rec, sw, mdp in results:
        run.diag["records"].append(rec)
        if sw is None:
            print(f"policy is not switching at {rec['not_switching']}", file=sys.stderr)
            status = EXIT_SOLVER
            continue
        cls = _class_thresholds(sw, mdp)
        row = [rec["p_s"], rec["lambda"], rec["N"], rec["solver"]["L_star"], cls["missed"], cls["false"], cls["normal"]]
        if refs:
            row += [rec["distortion"], rec["aoi"], rec["aoii"]]
        print("  ".join(f"{_fmt(v) if not isinstance(v, float) or k != 3 else f'{v:.4f}':>8}" for k, v in enumerate(row)))
        if "mixed" in (cls["missed"], cls["false"], cls["normal"]):
            print(_matrix_display(sw))
        rows.append(row + [_matrix_str(sw)])
    run.write_csv("thresholds.csv", header, rows)
    return status


def _matrix_display(sw: SwitchingPolicy) -> str:
    lines = []
    for i, row in enumerate(sw.tau):
        cells = ["-" if i == j else _tau_str(v) for j, v in enumerate(row)]
        lines.append("    [" + " ".join(f"{c:>4}" for c in cells) + " ]")
    return "\n".join(lines)


def _baseline_cell(kind: str, mdp, cfg: ExperimentConfig) -> tuple[float, str, str]:
    """(cost, parameter, evaluation method) of one baseline."""
    cp, sim = cfg.compare, cfg.simulation
    if kind in ("randomized", "periodic", "threshold"):
        default = {
            "randomized": [round(0.05 * k, 2) for k in range(21)],
            "periodic": list(range(1, 21)),
            "threshold": list(range(1, mdp.N + 1)),
        }[kind]
        grid = cp.get(f"{kind}_grid", default)
        res = grid_search_baseline(kind, grid, mdp, int(sim["horizon"]), sim["seeds"])
        return res.cost, _fmt(float(res.best)) if kind == "randomized" else str(int(res.best)), (
            "exact" if res.exact else "sim")
    pol = make_baseline(BaselineSpec(kind), mdp)
    param = getattr(pol, "label", "") or ""
    if kind == "distortion_proxy":
        param = "tau=" + _uniform(extract_thresholds(pol, mdp), mdp)
    return average_cost_exact(mdp, pol), param, "exact"


def cmd_compare(cfg: ExperimentConfig, run: Run, args) -> int:
    if not _admissible(cfg):
        return EXIT_INADMISSIBLE
    if not _existence_ok(cfg) and not args.force:
        return EXIT_INADMISSIBLE
    src, prof = cfg.source_model(), cfg.profile()
    wanted = [k for k in COMPARE_ORDER if k in cfg.compare["baselines"]]
    N = cfg.N_values[0]
    method = cfg.solver["method"]
    kw = _solver_kwargs(cfg)

    def job(point):
        p_s, lam = point
        mdp = build(src, prof, p_s, lam, N)
        cells = {}
        errors = {}
        for kind in wanted:
            try:
                cells[kind] = _baseline_cell(kind, mdp, cfg)
            except Exception as e:  # reported per cell, the run continues
                errors[kind] = f"{type(e).__name__}: {e}"
                cells[kind] = (math.nan, "", "error")
        res = solve(mdp, method, **kw)
        cells["switching"] = (average_cost_exact(mdp, res.policy), _matrix_str(res.thresholds), "exact")
        return p_s, lam, cells, errors

    points = [(p, lam) for p in cfg.p_s_values for lam in cfg.lambdas]
    try:
        results = _pmap(job, points, args.threads)
    except SolverError as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER
    cols = wanted + ["switching"]
    header = ["p_s", "lambda", "N"]
    for c in cols:
        header += [c, f"{c}_param", f"{c}_eval"]
    rows = []
    print(f"{'p_s':>5} {'lambda':>6} " + " ".join(f"{c[:10]:>10}" for c in cols))
    status = EXIT_OK
    for p_s, lam, cells, errors in results:
        row = [p_s, lam, N]
        shown = []
        for c in cols:
            cost, param, how = cells[c]
            row += [cost, param, how]
            mark = "*" if how == "sim" else ""
            shown.append(("error" if how == "error" else f"{cost:.3f}{mark}").rjust(10))
        rows.append(row)
        print(f"{p_s:>5g} {lam:>6g} " + " ".join(shown))
        run.diag["records"].append({"p_s": p_s, "lambda": lam, "cells": cells, "errors": errors})
        for k, msg in errors.items():
            print(f"  {k}: {msg}", file=sys.stderr)
    print("(* simulated)")
    run.write_csv("compare.csv", header, rows)
    return status


def cmd_truncation(cfg: ExperimentConfig, run: Run, args) -> int:
    Ns = cfg.N_values
    if len(Ns) < 3:
        raise ConfigError("problem.N: the truncation sweep needs at least 3 values of N")
    if not _admissible(cfg):
        return EXIT_INADMISSIBLE
    src, prof = cfg.source_model(), cfg.profile()
    method = cfg.solver["method"]

    def job(point):
        p_s, lam = point
        return p_s, lam, truncation_sweep(src, prof, p_s, lam, Ns, method)

    try:
        results = _pmap(job, [(p, lam) for p in cfg.p_s_values for lam in cfg.lambdas], args.threads)
    except ExistenceError as e:
        print(str(e), file=sys.stderr)
        return EXIT_INADMISSIBLE
    rows = []
    notes = []
    for p_s, lam, sw in results:
        fit = "none" if sw.fitted_ratio is None else f"{sw.fitted_ratio:.6g}"
        notes.append(f"p_s={p_s:g} lambda={lam:g} fitted_ratio={fit} "
                     f"max_Qii_pf={sw.predicted_ratio:.6g} asymptotic_ratio={sw.asymptotic_ratio:.6g}")
        print(notes[-1])
        for N, L, gap in sw.rows():
            rows.append([p_s, lam, N, L, gap])
            print(f"  N={N:>3}  L*={L:.12f}  gap={gap:.3e}")
        run.diag["records"].append({
            "p_s": p_s, "lambda": lam, "fitted_ratio": sw.fitted_ratio, "slope": sw.slope,
            "predicted_ratio": sw.predicted_ratio, "asymptotic_ratio": sw.asymptotic_ratio,
            "fit_points": [list(p) for p in sw.fit_points],
        })
    run.write_csv("sweep.csv", ["p_s", "lambda", "N", "L_star", "gap"], rows, tuple(notes))
    return EXIT_OK


SIMULATABLE = ("reactive", "error_triggered", "distortion_proxy", "aoi_reference", "aoii_reference")


def cmd_simulate(cfg: ExperimentConfig, run: Run, args) -> int:
    if not _admissible(cfg):
        return EXIT_INADMISSIBLE
    if not _existence_ok(cfg) and not args.force:
        return EXIT_INADMISSIBLE
    src, prof = cfg.source_model(), cfg.profile()
    sim = cfg.simulation
    T = int(sim["horizon"])
    seeds = sim["seeds"]
    extra = [k for k in COMPARE_ORDER if k in cfg.compare["baselines"] and k in SIMULATABLE]
    kw = _solver_kwargs(cfg)

    def job(point):
        p_s, lam, N = point
        mdp = build(src, prof, p_s, lam, N)
        pols = [("switching", solve(mdp, cfg.solver["method"], **kw).policy)]
        pols += [(k, make_baseline(BaselineSpec(k), mdp)) for k in extra]
        out = []
        for name, pol in pols:
            exact = average_cost_exact(mdp, pol)
            for seed in seeds:
                rep = simulate(mdp, pol, T, seed)
                out.append([p_s, lam, N, name, seed, T, rep.mean_cost, rep.half_width_95,
                            rep.transmissions_per_slot, exact])
        return out

    rows = [r for chunk in _pmap(job, _grid(cfg), args.threads) for r in chunk]
    header = ["p_s", "lambda", "N", "policy", "seed", "horizon", "mean_cost", "half_width_95", "tx_per_slot", "exact"]
    print(f"{'p_s':>5} {'lambda':>6} {'policy':>16} {'seed':>5} {'simulated':>10} {'+-':>8} {'exact':>9}")
    for r in rows:
        print(f"{r[0]:>5g} {r[1]:>6g} {r[3]:>16} {r[4]:>5} {r[6]:>10.4f} {r[7]:>8.4f} {r[9]:>9.4f}")
    run.write_csv("simulation.csv", header, rows)
    run.diag["records"] = [dict(zip(header, r)) for r in rows]
    return EXIT_OK


COMMANDS = {
    "check": cmd_check,
    "solve": cmd_solve,
    "compare": cmd_compare,
    "truncation": cmd_truncation,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="aoce", description="Optimal transmission under significance-aware age of consecutive error.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, fn in COMMANDS.items():
        s = sub.add_parser(name, help=(fn.__doc__ or name).strip().splitlines()[0])
        s.add_argument("--config", required=True, help="experiment TOML file")
        s.add_argument("--out", help="run directory (default: output.dir from the config, else runs/<name>)")
        s.add_argument("--seed", type=int, help="override simulation seeds with this single seed")
        s.add_argument("--horizon", type=int, help="override the simulation horizon")
        s.add_argument("--force", action="store_true", help="solve even if the existence check fails")
        s.add_argument("--threads", type=int, default=1, help="worker threads for sweeps")
    return p


cmd_check.__doc__ = "Check the existence condition for every error."
cmd_solve.__doc__ = "Solve for the optimal switching policy over the config grid."
cmd_compare.__doc__ = "Compare the optimal policy against the listed baselines."
cmd_truncation.__doc__ = "Sweep the truncation size N and fit the decay of the gaps."
cmd_simulate.__doc__ = "Simulate the optimal policy (and simple baselines)."


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        over = {}
        if args.seed is not None:
            over["seeds"] = [args.seed]
        if args.horizon is not None:
            if args.horizon < 1:
                raise ConfigError("--horizon must be >= 1")
            over["horizon"] = args.horizon
        if over:
            cfg = cfg.with_overrides(simulation=over)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        out = Path(args.out or cfg.output_dir or f"runs/{cfg.name}")
        run = Run(cfg, out, args.command)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        status = COMMANDS[args.command](cfg, run, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        status = EXIT_CONFIG
    except ConstructionError as e:
        print(f"config error: {e}", file=sys.stderr)
        status = EXIT_CONFIG
    except ExistenceError as e:
        print(str(e), file=sys.stderr)
        status = EXIT_INADMISSIBLE
    except SolverError as e:
        print(f"solver failure: {e}", file=sys.stderr)
        status = EXIT_SOLVER
    return run.finish(status)


if __name__ == "__main__":
    sys.exit(main())
