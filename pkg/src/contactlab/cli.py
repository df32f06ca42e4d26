"""Batch experiment runner.

Each subcommand resolves its configuration (flags, optionally merged over a
JSON config file), runs the corresponding library routine, and writes two
artifacts: <out>.json with the full structured report (resolved config,
seed, package version, every estimate with its error budget) and <out>.csv
with plot-ready rows.  Outputs carry no timestamps and reductions are
ordered by replica index, so a rerun with the same arguments, at any worker
count, is byte-identical.

Exit status: 0 on success, 2 when a checked model claim is violated, 1 on
operational errors (bad usage, domain errors, resource caps).
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, analysis, estimators, geometry, oracle, forward
from . import rng
from .errors import ContactLabError, DomainError, QualityError
from .parallel import default_workers

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VIOLATED = 2


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; 2 is reserved for
    model-claim violations here, so remap usage errors to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _floats(val) -> list:
    if val is None:
        return []
    if isinstance(val, (list, tuple)):
        return [float(v) for v in val]
    return [float(tok) for tok in str(val).split(",") if tok.strip()]


def _graph(args) -> geometry.GraphSpec:
    fam = args.family
    if fam == "lattice":
        return geometry.lattice(args.d)
    if fam == "tree":
        return geometry.tree(args.k)
    if fam == "complete":
        return geometry.complete(args.n)
    if fam == "cycle":
        return geometry.cycle(args.n)
    if fam == "path":
        return geometry.path(args.n)
    raise DomainError(f"unknown family {fam!r}")


def _lam_grid(args) -> list:
    grid = _floats(getattr(args, "lambda_grid", None))
    if not grid and getattr(args, "lam", None) is not None:
        grid = [args.lam]
    if not grid:
        raise DomainError("need --lambda or --lambda-grid")
    return grid


def _h_grid(args) -> list:
    grid = _floats(getattr(args, "h_grid", None))
    if not grid and getattr(args, "h", None) is not None:
        grid = [args.h]
    if not grid:
        raise DomainError("need --h or --h-grid")
    return grid


def _write(out, payload, header, rows):
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out.with_suffix(".json"), "w") as f:
        json.dump(payload, f, sort_keys=True, indent=2, allow_nan=True)
        f.write("\n")
    with open(out.with_suffix(".csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def _config(args, skip=("config", "out", "func", "command", "workers")) -> dict:
    # workers is an execution detail with no effect on any result, so it is
    # left out to keep reruns byte-identical at any parallelism
    return {k: v for k, v in sorted(vars(args).items())
            if k not in skip and not callable(v)}


def _payload(args, results) -> dict:
    return {"command": args.command, "version": __version__,
            "config": _config(args), "results": results}


def _est_dict(e) -> dict:
    return {"mean": e.mean, "stderr": e.stderr, "n": e.n,
            "bias_bound": e.bias_bound, "flagged": e.flagged,
            "step_bias": e.step_bias}


# ---------------------------------------------------------------------------
# subcommands


def cmd_estimate(args):
    spec = _graph(args)
    lams, hs = _lam_grid(args), _h_grid(args)
    kw = dict(budget=args.budget, workers=args.workers)
    table, failures = [], []
    for idx, (lam, h) in enumerate((l_, h_) for l_ in lams for h_ in hs):
        row = {"lam": lam, "h": h}
        try:
            row["theta"] = _est_dict(estimators.theta(
                spec, lam, h, args.T, args.L, args.replicas,
                rng.subseed(args.seed, 1, idx), **kw))
            row["chi"] = _est_dict(estimators.chi(
                spec, lam, h, args.T, args.L, args.replicas,
                rng.subseed(args.seed, 2, idx), **kw))
            if h > 0:
                row["dtheta_dlambda"] = _est_dict(estimators.dtheta_dlambda(
                    spec, lam, h, args.T, args.L, args.replicas,
                    rng.subseed(args.seed, 3, idx), **kw))
                row["prob_one_green"] = _est_dict(estimators.prob_one_green(
                    spec, lam, h, args.T, args.L, args.replicas,
                    rng.subseed(args.seed, 4, idx), **kw))
        except (QualityError, ContactLabError) as exc:
            row["error"] = str(exc)
            failures.append(row)
        table.append(row)
    header = ["lam", "h", "theta", "theta_se", "theta_bias", "chi",
              "chi_se", "dtheta_dlambda", "dtheta_dlambda_se",
              "prob_one_green", "prob_one_green_se"]
    rows = []
    for r in table:
        th, ch = r.get("theta"), r.get("chi")
        dl, p1 = r.get("dtheta_dlambda"), r.get("prob_one_green")
        rows.append([r["lam"], r["h"],
                     th and th["mean"], th and th["stderr"],
                     th and th["bias_bound"],
                     ch and ch["mean"], ch and ch["stderr"],
                     dl and dl["mean"], dl and dl["stderr"],
                     p1 and p1["mean"], p1 and p1["stderr"]])
    _write(args.out, _payload(args, {"table": table, "failures": failures}),
           header, rows)
    return EXIT_ERROR if failures else EXIT_OK


def cmd_oracle(args):
    spec = _graph(args)
    lams, hs = _lam_grid(args), _h_grid(args)
    table, rows = [], []
    for lam, h in ((l_, h_) for l_ in lams for h_ in hs):
        gen = oracle.build_generator(spec, lam, h)
        th = oracle.stationary_theta(gen)
        dl, dh = oracle.exact_derivatives(spec, lam, h)
        row = {"lam": lam, "h": h, "theta": th, "dtheta_dlambda": dl,
               "dtheta_dh": dh}
        if args.T is not None:
            row["theta_T"] = oracle.transient_theta(gen, args.T)
        table.append(row)
        rows.append([lam, h, th, dl, dh, row.get("theta_T")])
    _write(args.out, _payload(args, {"table": table}),
           ["lam", "h", "theta", "dtheta_dlambda", "dtheta_dh", "theta_T"],
           rows)
    return EXIT_OK


def _ineq_rows(report):
    header = ["name", "lam", "h", "lhs", "rhs", "margin", "sigma", "zscore",
              "verdict"]
    rows = [[r.name, r.lam, r.h, r.lhs, r.rhs, r.margin, r.sigma, r.zscore,
             r.verdict] for r in report.rows]
    return header, rows


def cmd_pdi_check(args):
    spec = _graph(args)
    report = analysis.pdi_check(spec, _lam_grid(args), _h_grid(args),
                                args.T, args.L, args.replicas, args.seed,
                                engine=args.engine,
                                theta_max_mode=args.theta_max_mode,
                                budget=args.budget, workers=args.workers)
    header, rows = _ineq_rows(report)
    _write(args.out, _payload(args, report.to_dict()), header, rows)
    return EXIT_VIOLATED if report.violated else EXIT_OK


def cmd_chi_check(args):
    spec = _graph(args)
    report = analysis.chi_ineq_check(spec, _lam_grid(args), args.T, args.L,
                                     args.replicas, args.seed,
                                     step=args.step, budget=args.budget,
                                     workers=args.workers,
                                     lam_T=args.lambda_t,
                                     lam_T_ci=args.lambda_t_ci)
    header, rows = _ineq_rows(report)
    _write(args.out, _payload(args, report.to_dict()), header, rows)
    return EXIT_VIOLATED if report.violated else EXIT_OK


def cmd_critical_scan(args):
    spec = _graph(args)
    interval = _floats(args.interval)
    if len(interval) != 2:
        raise DomainError("--interval needs two comma-separated values")
    scan = analysis.estimate_lambda_c(spec, interval, args.precision,
                                      args.eval_replicas, args.seed,
                                      workers=args.workers)
    header = ["pipeline", "lam", "horizon", "ratio", "sigma", "level",
              "flag_fraction", "verdict"]
    rows = []
    for r in scan.records:
        horizon = r.get("T", r.get("t_max"))
        level = r.get("chi_T", r.get("S"))
        rows.append([r["pipeline"], r["lam"], horizon, r["ratio"],
                     r["sigma"], level,
                     r.get("flag_fraction", r.get("suppressed_fraction")),
                     r["verdict"]])
    _write(args.out, _payload(args, scan.to_dict()), header, rows)
    if scan.no_transition:
        print(scan.message)
        return EXIT_OK
    return EXIT_OK if scan.consistent else EXIT_VIOLATED


def cmd_exponents(args):
    spec = _graph(args)
    hs = _floats(args.h_grid) or list(np.geomspace(0.01, 1.0, 7))
    delta = analysis.fit_delta(spec, args.lambda_c, hs, args.T, args.L,
                               args.replicas, rng.subseed(args.seed, 71),
                               lam_ci=args.lambda_c_ci, budget=args.budget,
                               workers=args.workers)
    deltas = _floats(args.deltas) or list(np.geomspace(0.15, 1.0, 5))
    beta = analysis.fit_beta(spec, args.lambda_c, deltas, args.t_max,
                             args.replicas, rng.subseed(args.seed, 72),
                             lam_ci=args.lambda_c_ci, workers=args.workers)
    results = {"delta_fit": delta.to_dict(), "beta_fit": beta.to_dict()}
    ok = delta.records["bound_ok"] and beta.records["bound_ok"]
    if args.control_lambda is not None:
        chs = _floats(args.control_h_grid) or [0.02, 0.2]
        if len(chs) == 2:
            chs = list(np.geomspace(chs[0], chs[1], 6))
        control = analysis.fit_delta(spec, args.control_lambda, chs, args.T,
                                     args.L, args.replicas,
                                     rng.subseed(args.seed, 73),
                                     budget=args.budget,
                                     workers=args.workers)
        results["control_fit"] = control.to_dict()
        results["control_ok"] = abs(control.slope - 1.0) <= args.control_tol
        ok = ok and results["control_ok"]
    header = ["fit", "x", "y", "se"]
    rows = [["delta", r["h"], r["theta"], r["se"]]
            for r in delta.records["table"]]
    rows += [["beta", r["delta"], r["theta_plus"], r["se"]]
             for r in beta.records["table"]]
    if "control_fit" in results:
        rows += [["control", r["h"], r["theta"], r["se"]]
                 for r in results["control_fit"]["records"]["table"]]
    _write(args.out, _payload(args, results), header, rows)
    return EXIT_OK if ok else EXIT_VIOLATED


def cmd_decay(args):
    spec = _graph(args)
    t_grid = _floats(args.t_grid)
    r_grid = [int(v) for v in _floats(args.r_grid)]
    fit = analysis.decay_fit(spec, args.lam, t_grid, r_grid, args.replicas,
                             rng.subseed(args.seed, 81),
                             workers=args.workers)
    results = {"decay_fit": fit.to_dict()}
    ok = fit.records["subadditivity_ok"] and fit.records["branching"]["ok"]
    if args.eta_grid:
        win = _floats(args.eta_window)
        scan = analysis.eta_sign_scan(spec, _floats(args.eta_grid), win,
                                      args.replicas,
                                      rng.subseed(args.seed, 82),
                                      lam_c=args.lambda_c,
                                      lam_c_ci=args.lambda_c_ci,
                                      workers=args.workers)
        results["eta_scan"] = scan.to_dict()
        ok = ok and scan.records["nondecreasing_ok"]
        if args.lambda_c is not None:
            ok = ok and bool(scan.records["contains_lam_c"])
    header = ["kind", "x", "y", "se"]
    rows = [["size", r["t"], r["mean"], r["se"]]
            for r in fit.records["size_curve"]]
    rows += [["reach", r["r"], r["prob"], r["se"]]
             for r in fit.records["reach_curve"]]
    rows += [["eta", r["lam"], r["eta"], r["eta_se"]]
             for r in results.get("eta_scan", {})
             .get("records", {}).get("scan", [])]
    _write(args.out, _payload(args, results), header, rows)
    return EXIT_OK if ok else EXIT_VIOLATED


def cmd_forward_sim(args):
    spec = _graph(args)
    t_grid = np.linspace(0.0, args.t_max, args.grid_points)
    fs = forward.forward_sample(spec, args.lam, args.h, t_grid, args.L,
                                args.replicas, args.seed,
                                initial=args.initial, workers=args.workers)
    alive = fs.alive.astype(np.float64)
    occ = fs.origin_infected.astype(np.float64)
    size = fs.n_infected.astype(np.float64)
    rt = np.sqrt(fs.n)
    results = {
        "suppressed_fraction": float(np.mean(fs.suppressed > 0)),
        "curve": [{"t": float(t),
                   "survival": float(alive[:, i].mean()),
                   "survival_se": float(alive[:, i].std(ddof=1) / rt),
                   "origin_occupancy": float(occ[:, i].mean()),
                   "origin_occupancy_se": float(occ[:, i].std(ddof=1) / rt),
                   "mean_size": float(size[:, i].mean()),
                   "mean_size_se": float(size[:, i].std(ddof=1) / rt)}
                  for i, t in enumerate(t_grid)]}
    header = ["t", "survival", "survival_se", "origin_occupancy",
              "origin_occupancy_se", "mean_size", "mean_size_se"]
    rows = [[c["t"], c["survival"], c["survival_se"], c["origin_occupancy"],
             c["origin_occupancy_se"], c["mean_size"], c["mean_size_se"]]
            for c in results["curve"]]
    _write(args.out, _payload(args, results), header, rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_common(p, *, graph=True, mc=True):
    p.add_argument("--config", default=None,
                   help="JSON file of defaults (flags override)")
    p.add_argument("--out", required=True,
                   help="output path prefix (.json and .csv are written)")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--workers", type=int, default=default_workers())
    if graph:
        p.add_argument("--family", default="lattice",
                       choices=["lattice", "tree", "complete", "cycle",
                                "path"])
        p.add_argument("--d", type=int, default=1, help="lattice dimension")
        p.add_argument("--k", type=int, default=3, help="tree degree")
        p.add_argument("--n", type=int, default=2,
                       help="vertex count for complete/cycle/path")
    if mc:
        p.add_argument("--replicas", type=int, default=10000)
        p.add_argument("--budget", type=int, default=10 ** 6,
                       help="per-replica exploration event cap")


def build_parser():
    parser = _Parser(prog="contactlab",
                     description="contact process simulation laboratory")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)
    parsers = {}

    def new(name, fn, **kw):
        p = sub.add_parser(name, **kw)
        p.set_defaults(func=fn)
        parsers[name] = p
        return p

    p = new("estimate", cmd_estimate,
            help="Monte Carlo theta/chi/derivative table")
    _add_common(p)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--lambda-grid", dest="lambda_grid", default=None)
    p.add_argument("--h", type=float, default=None)
    p.add_argument("--h-grid", dest="h_grid", default=None)
    p.add_argument("--T", type=float, default=40.0)
    p.add_argument("--L", type=int, default=60)

    p = new("oracle", cmd_oracle, help="exact small-graph values")
    _add_common(p, mc=False)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--lambda-grid", dest="lambda_grid", default=None)
    p.add_argument("--h", type=float, default=None)
    p.add_argument("--h-grid", dest="h_grid", default=None)
    p.add_argument("--T", type=float, default=None,
                   help="also report the transient theta at this window")
    p.set_defaults(family="complete")

    p = new("pdi-check", cmd_pdi_check,
            help="theta differential-inequality grid")
    _add_common(p)
    p.add_argument("--lambda-grid", dest="lambda_grid", required=True)
    p.add_argument("--h-grid", dest="h_grid", required=True)
    p.add_argument("--T", type=float, default=40.0)
    p.add_argument("--L", type=int, default=60)
    p.add_argument("--engine", choices=["mc", "oracle"], default="mc")
    p.add_argument("--theta-max-mode", dest="theta_max_mode",
                   choices=["surrogate", "exact"], default="surrogate")

    p = new("chi-check", cmd_chi_check,
            help="susceptibility inequality at h=0")
    _add_common(p)
    p.add_argument("--lambda-grid", dest="lambda_grid", required=True)
    p.add_argument("--T", type=float, default=40.0)
    p.add_argument("--L", type=int, default=60)
    p.add_argument("--step", type=float, default=0.05)
    p.add_argument("--lambda-t", dest="lambda_t", type=float, default=None,
                   help="adds integrated-bound rows against this lambda_T")
    p.add_argument("--lambda-t-ci", dest="lambda_t_ci", type=float,
                   default=0.0)

    p = new("critical-scan", cmd_critical_scan,
            help="bracket lambda_T and lambda_H")
    _add_common(p, mc=False)
    p.add_argument("--interval", required=True,
                   help="comma pair, e.g. 1.0,2.2")
    p.add_argument("--precision", type=float, default=0.05)
    p.add_argument("--eval-replicas", dest="eval_replicas", type=int,
                   default=1500)

    p = new("exponents", cmd_exponents,
            help="critical exponent bound fits")
    _add_common(p)
    p.add_argument("--lambda-c", dest="lambda_c", type=float, required=True)
    p.add_argument("--lambda-c-ci", dest="lambda_c_ci", type=float,
                   default=0.0)
    p.add_argument("--h-grid", dest="h_grid", default=None)
    p.add_argument("--T", type=float, default=400.0)
    p.add_argument("--L", type=int, default=320)
    p.add_argument("--deltas", default=None,
                   help="lambda offsets above lambda_c for the beta fit")
    p.add_argument("--t-max", dest="t_max", type=float, default=160.0)
    p.add_argument("--control-lambda", dest="control_lambda", type=float,
                   default=None,
                   help="deep-subcritical level for the slope=1 control")
    p.add_argument("--control-h-grid", dest="control_h_grid", default=None)
    p.add_argument("--control-tol", dest="control_tol", type=float,
                   default=0.15)

    p = new("decay", cmd_decay, help="subcritical decay fits")
    _add_common(p)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--t-grid", dest="t_grid", default="3,5,7,9,11,13")
    p.add_argument("--r-grid", dest="r_grid", default="2,3,4,5,6,7,8")
    p.add_argument("--eta-grid", dest="eta_grid", default=None,
                   help="lambda grid for the growth-rate sign scan")
    p.add_argument("--eta-window", dest="eta_window", default="8,28")
    p.add_argument("--lambda-c", dest="lambda_c", type=float, default=None)
    p.add_argument("--lambda-c-ci", dest="lambda_c_ci", type=float,
                   default=0.0)

    p = new("forward-sim", cmd_forward_sim, help="forward trajectory curves")
    _add_common(p)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--h", type=float, default=0.0)
    p.add_argument("--t-max", dest="t_max", type=float, default=20.0)
    p.add_argument("--grid-points", dest="grid_points", type=int, default=41)
    p.add_argument("--L", type=int, default=60)
    p.add_argument("--initial", default="origin", choices=["origin", "full"])

    return parser, parsers


def main(argv=None) -> int:
    parser, parsers = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cfg = json.loads(Path(args.config).read_text())
        parsers[args.command].set_defaults(**cfg)
        args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ContactLabError as exc:
        print(f"contactlab: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
