"""Acceptance gate: one test and one printed PASS/FAIL line per criterion.

Run with `pytest tests/test_acceptance.py -v -s`.  Seeds and windows are
frozen; the full gate takes roughly 10 to 15 minutes on one core.  The
critical-point scan (criterion 6) is shared with the exponent and decay
criteria through a module-scoped fixture.
"""

import json
import math

import numpy as np
import pytest

from contactlab import analysis as A
from contactlab import cli
from contactlab import estimators as E
from contactlab import forward as F
from contactlab import geometry as G
from contactlab import oracle as O
from contactlab.cluster import sample_masses

ONE = G.complete(1)
LAT = G.lattice(1)


def _report(num, title, ok, detail):
    mark = "PASS" if ok else "FAIL"
    print(f"criterion {num} ({title}): {mark} - {detail}", flush=True)
    return ok


@pytest.fixture(scope="module")
def scan():
    return A.estimate_lambda_c(LAT, (1.0, 2.2), 0.05, 2000, 101)


def test_criterion_1_closed_forms():
    n, T = 100000, 60.0
    worst = 0.0
    for i, h in enumerate((0.2, 1.0, 5.0)):
        th = E.theta(ONE, 0.0, h, T, 0, n, 1001 + i)
        worst = max(worst, abs(th.mean - h / (1 + h)) / th.stderr)
        ch = E.chi(ONE, 0.0, h, T, 0, n, 1011 + i)
        worst = max(worst, abs(ch.mean - 1 / (1 + h) ** 2) / ch.stderr)
        tt = E.theta(ONE, 0.0, h, 1.0, 0, n, 1021 + i)
        exact = (h / (1 + h)) * (1 - math.exp(-(1 + h)))
        worst = max(worst, abs(tt.mean - exact) / tt.stderr)
    ok = worst < 3.0
    assert _report(1, "single-vertex closed forms", ok,
                   f"9 checks at n={n}, worst z = {worst:.2f} (< 3)")


def test_criterion_2_oracle_equivalence():
    n, T = 100000, 30.0
    lams, hs = (0.3, 0.8, 1.5), (0.25, 1.0, 3.0)
    graphs = [("complete-2", G.complete(2)), ("path-3", G.path(3)),
              ("cycle-3", G.cycle(3))]
    worst_z, worst_gap, fails = 0.0, 0.0, []
    for gi, (name, spec) in enumerate(graphs):
        for li, lam in enumerate(lams):
            ms = sample_masses(spec, [lam], 0.0, T, 3, n, 2001 + 10 * gi + li)
            m = ms.mass[0]
            for h in hs:
                gen = O.build_generator(spec, lam, h)
                th_exact = O.stationary_theta(gen)
                _, ch_exact = O.exact_derivatives(spec, lam, h)
                y = 1.0 - np.exp(-h * m)
                tol = math.exp(-h * T)
                z = (abs(y.mean() - th_exact) - tol) \
                    / (y.std(ddof=1) / math.sqrt(n))
                worst_z = max(worst_z, z)
                c = m * np.exp(-h * m)
                z = (abs(c.mean() - ch_exact) - tol) \
                    / (c.std(ddof=1) / math.sqrt(n))
                worst_z = max(worst_z, z)
                if worst_z >= 3.0 and not fails:
                    fails.append((name, lam, h))
    # forward long-run occupancy against the stationary law
    nf = 10000
    for gi, (name, spec) in enumerate(graphs):
        for lam in lams:
            for h in hs:
                fs = F.forward_sample(spec, lam, h, [T], 3, nf,
                                      3001 + gi, initial="full")
                occ = fs.origin_infected[:, 0].astype(np.float64)
                exact = O.stationary_theta(O.build_generator(spec, lam, h))
                z = abs(occ.mean() - exact) / (occ.std(ddof=1)
                                               / math.sqrt(nf) + 1e-12)
                worst_z = max(worst_z, z)
    # transient window bound
    for name, spec in graphs:
        for lam in lams:
            for h in hs:
                gen = O.build_generator(spec, lam, h)
                stat = O.stationary_theta(gen)
                for Tw in (1.0, 2.0, 5.0, 10.0):
                    gap = abs(O.transient_theta(gen, Tw) - stat) \
                        - math.exp(-h * Tw)
                    worst_gap = max(worst_gap, gap)
    ok = worst_z < 3.0 and worst_gap <= 1e-10
    assert _report(2, "oracle equivalence", ok,
                   f"3 graphs x 9 points: worst z = {worst_z:.2f} (< 3), "
                   f"worst transient-bound excess = {worst_gap:.2e}")


def test_criterion_3_identities():
    n, T, L = 100000, 25.0, 50
    worst = 0.0
    # P(exactly one green) = h * chi on the same realization
    for i, (lam, h) in enumerate([(0.4, 0.3), (0.4, 0.8), (0.4, 1.5),
                                  (0.9, 0.3), (0.9, 0.8), (0.9, 1.5)]):
        ms = sample_masses(LAT, [lam], h, T, L, n, 4001 + i)
        d = (ms.green[0] == 1).astype(np.float64) \
            - h * ms.mass[0] * np.exp(-h * ms.mass[0])
        worst = max(worst, abs(d.mean()) / (d.std(ddof=1) / math.sqrt(n)))
    # exponential-mass theta against the green-indicator theta
    a = E.theta(LAT, 0.9, 0.6, T, L, n, 4101)
    b = E.theta_indicator(LAT, 0.9, 0.6, T, L, n, 4102)
    z_theta = abs(a.mean - b.mean) / math.hypot(a.stderr, b.stderr)
    # duality: single-seed survival equals origin occupancy from full
    t = [8.0]
    p, se, _ = F.survival_curve(LAT, 1.2, 0.0, t, 30, 40000, 4201)
    fs = F.forward_sample(LAT, 1.2, 0.0, t, 30, 40000, 4202, initial="full")
    occ = fs.origin_infected[:, 0].astype(np.float64)
    z_dual = abs(p[0] - occ.mean()) / math.hypot(
        se[0], occ.std(ddof=1) / math.sqrt(fs.n))
    ok = worst < 3.0 and z_theta < 3.0 and z_dual < 3.0
    assert _report(3, "green-site identities and duality", ok,
                   f"one-green worst z = {worst:.2f}, estimator z = "
                   f"{z_theta:.2f}, duality z = {z_dual:.2f} (all < 3)")


def test_criterion_4_exact_differential_inequalities():
    lams = [0.0, 0.5, 1.0, 1.5, 2.0]
    hs = [0.2, 0.6, 1.0, 1.6, 2.5]
    min_margin, n_rows = math.inf, 0
    for spec in (G.complete(2), G.cycle(3)):
        rep = A.pdi_check(spec, lams, hs, 10.0, 1, 10, 1, engine="oracle")
        n_rows += len(rep.rows)
        min_margin = min(min_margin, min(r.margin for r in rep.rows))
    ref = A.pdi_check(G.complete(2), [1.0], [1.0], 10.0, 1, 10, 1,
                      engine="oracle")
    m = {r.name: r.margin for r in ref.rows}
    ref_ok = (abs(m["deriv-vs-chi"] - 0.04) < 1e-6
              and abs(m["theta-vs-derivs"] - 0.136) < 1e-6)
    ok = min_margin >= -1e-9 and ref_ok and n_rows == 100
    assert _report(4, "exact differential inequalities", ok,
                   f"{n_rows} oracle rows, min margin = {min_margin:.2e} "
                   f"(>= -1e-9); reference margins 0.04/0.136 reproduced: "
                   f"{ref_ok}")


def test_criterion_5_monte_carlo_differential_inequalities():
    rep = A.pdi_check(LAT, [0.5, 1.0, 1.5], [0.05, 0.2], 40.0, 60,
                      100000, 5001)
    chi = A.chi_ineq_check(LAT, [0.3, 0.6, 0.9], 40.0, 80, 100000, 5002)
    bad = [r for r in rep.rows + chi.rows if r.verdict == A.VIOLATED]
    worst = min(r.zscore for r in rep.rows + chi.rows)
    ok = not bad and not rep.excluded and not chi.excluded
    assert _report(5, "Monte Carlo differential inequalities", ok,
                   f"{len(rep.rows)} theta rows + {len(chi.rows)} chi rows "
                   f"at n=1e5: 0 violated (worst z = {worst:.2f})")


def test_criterion_6_threshold_consistency(scan):
    ok_scan = (not scan.no_transition) and scan.consistent
    half = 0.5 * (scan.lambda_T_ci[1] - scan.lambda_T_ci[0])
    chi = A.chi_ineq_check(LAT, [0.5, 0.9, 1.3], 40.0, 80, 20000, 102,
                           lam_T=scan.lambda_T, lam_T_ci=half)
    rows = [r for r in chi.rows if r.name == "chi-integrated"]
    ok_int = all(r.verdict != A.VIOLATED for r in rows)
    ok = ok_scan and ok_int and len(rows) == 3
    assert _report(
        6, "threshold consistency", ok,
        f"lambda_T = {scan.lambda_T:.4f} {tuple(scan.lambda_T_ci)}, "
        f"lambda_H = {scan.lambda_H:.4f} {tuple(scan.lambda_H_ci)}, "
        f"CIs overlap: {scan.consistent}; integrated chi bound holds at "
        f"3 subcritical points: {ok_int}")


def test_criterion_7_exponent_bounds(scan):
    lam_c = scan.lambda_T
    lam_ci = 0.5 * (scan.lambda_T_ci[1] - scan.lambda_T_ci[0])
    delta = A.fit_delta(LAT, lam_c, np.geomspace(0.01, 1.0, 7), 400.0, 320,
                        2000, 7001, lam_ci=lam_ci)
    beta = A.fit_beta(LAT, lam_c, list(np.geomspace(0.15, 1.0, 5)), 80.0,
                      4000, 7002, lam_ci=lam_ci)
    control = A.fit_delta(LAT, 0.4, np.geomspace(0.003, 0.03, 6), 2400.0,
                          30, 8000, 7003)
    ok_d = delta.records["bound_ok"]
    ok_b = beta.records["bound_ok"] and beta.records["monotone_ok"]
    ok_c = abs(control.slope - 1.0) <= 0.15
    ok = ok_d and ok_b and ok_c
    assert _report(
        7, "critical exponent bounds", ok,
        f"delta slope {delta.slope:.3f} <= {delta.records['bound']:.3f}: "
        f"{ok_d}; beta slope {beta.slope:.3f} <= "
        f"{beta.records['bound']:.3f}: {ok_b}; control slope "
        f"{control.slope:.3f} = 1 +/- 0.15: {ok_c}")


def test_criterion_8_subcritical_decay(scan):
    lam = 0.5 * scan.lambda_T
    lam_ci = 0.5 * (scan.lambda_T_ci[1] - scan.lambda_T_ci[0])
    fit = A.decay_fit(LAT, lam, [3, 5, 7, 9, 11, 13, 15],
                      [2, 3, 4, 5, 6, 7, 8], 100000, 8001)
    r = fit.records
    ok_fit = fit.slope < 0 and r["r2_time"] >= 0.99
    ok_sub = r["subadditivity_ok"] and len(r["subadditivity"]) == 16
    sign = A.eta_sign_scan(LAT, [1.2, 1.5, 1.8, 2.1], (8.0, 28.0), 20000,
                           8002, lam_c=scan.lambda_T, lam_c_ci=lam_ci)
    s = sign.records
    ok_sign = (s["bracket_ok"] and s["contains_lam_c"]
               and s["nondecreasing_ok"])
    ok = ok_fit and ok_sub and ok_sign and r["branching"]["ok"]
    assert _report(
        8, "subcritical decay", ok,
        f"at lam = {lam:.3f}: slope {fit.slope:.4f} < 0 with R^2 = "
        f"{r['r2_time']:.5f} (>= 0.99); subadditivity 16/16: "
        f"{ok_sub}; growth-rate sign change brackets lambda_c in "
        f"{tuple(s['bracket'])}: {ok_sign}")


def test_criterion_9_cli_determinism(tmp_path):
    runs = [
        ["estimate", "--family", "lattice", "--d", "1", "--lambda-grid",
         "0.6,1.1", "--h", "0.4", "--T", "15", "--L", "25", "--replicas",
         "2000", "--seed", "9001"],
        ["chi-check", "--family", "lattice", "--d", "1", "--lambda-grid",
         "0.5", "--T", "15", "--L", "25", "--replicas", "2000",
         "--seed", "9002"],
    ]
    identical = True
    for i, argv in enumerate(runs):
        outs = []
        for w in ("1", "4"):
            out = tmp_path / f"run{i}w{w}"
            rc = cli.main(argv + ["--workers", w, "--out", str(out)])
            assert rc == 0
            outs.append((out.with_suffix(".json").read_bytes(),
                         out.with_suffix(".csv").read_bytes()))
        identical &= outs[0] == outs[1]
    ok = identical
    assert _report(9, "engineering determinism", ok,
                   "2 subcommands x {1,4} workers: result files byte-"
                   f"identical: {identical}")
