"""Monte Carlo estimators built on backward cluster exploration.

All estimators work from the same per-replica quantity: the truncated
cluster mass m and green-hit count of the exploration window.  The two dual
routes to the infection probability are

* theta            mean of 1 - exp(-h * m)   (exponential-mass form),
* theta_indicator  mean of 1{green_hits >= 1}  (hit form, exactly the
                   finite-window finite-volume probability).

Both have expectation theta_{T,L}; the window bias against the stationary
value is bounded by exp(-h*T), and space/budget truncation is accounted for
pessimistically (see Estimate.bias_bound).

Flagged replicas (space- or budget-truncated) are kept at their observed
value for theta-like estimates, with the worst-case headroom mean((1-y)*flag)
added to bias_bound; for chi they are excluded and reported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from . import geometry
from .cluster import FLAG_BUDGET, FLAG_SPACE, sample_masses
from .errors import DomainError, QualityError, ResourceError


@dataclass(frozen=True)
class Estimate:
    """A Monte Carlo estimate with its error budget.

    stderr is the sampling standard error; bias_bound is a deterministic
    bound on |E[estimator] - target| from window/space/budget truncation;
    flagged is the fraction of truncated replicas; step_bias is step**2 for
    finite-difference estimates (the O(step^2) systematic scale, zero
    otherwise).
    """

    mean: float
    stderr: float
    n: int
    bias_bound: float = 0.0
    flagged: float = 0.0
    step_bias: float = 0.0


def _reduce(y, n_total, bias_bound, flagged, step_bias=0.0) -> Estimate:
    y = np.asarray(y, np.float64)
    se = float(np.std(y, ddof=1) / np.sqrt(len(y))) if len(y) > 1 else np.inf
    return Estimate(mean=float(np.mean(y)), stderr=se, n=int(n_total),
                    bias_bound=float(bias_bound), flagged=float(flagged),
                    step_bias=float(step_bias))


def _check_quality(frac, flag_tol, what):
    if frac > flag_tol:
        raise QualityError(
            f"{what}: flagged-replica fraction {frac:.3f} exceeds {flag_tol}")


def theta(spec, lam, h, T, L, n, seed, *, lam_max=None, budget=10**6,
          workers=1, flag_tol=0.05, replica0=0) -> Estimate:
    """Estimate theta(lam, h) as mean of 1 - exp(-h * mass).

    bias_bound = exp(-h*T) (window truncation, zero at h=0 where theta is
    exactly 0) plus the observed worst-case headroom of flagged replicas.
    """
    ms = sample_masses(spec, [lam], h, T, L, n, seed, lam_max=lam_max,
                       budget=budget, workers=workers, replica0=replica0)
    y = 1.0 - np.exp(-h * ms.mass[0])
    flagged = ms.flagged(0)
    frac = float(np.mean(flagged))
    _check_quality(frac, flag_tol, "theta")
    surcharge = float(np.mean((1.0 - y) * flagged))
    window = float(np.exp(-h * T)) if h > 0 else 0.0
    return _reduce(y, n, window + surcharge, frac)


def theta_indicator(spec, lam, h, T, L, n, seed, *, lam_max=None,
                    budget=10**6, workers=1, flag_tol=0.05,
                    replica0=0, root=None) -> Estimate:
    """Estimate theta_{T,L} = P(green_hits >= 1), the exact finite-window
    finite-volume infection probability (no window bias by construction;
    only budget truncation can bias it, bounded pessimistically)."""
    ms = sample_masses(spec, [lam], h, T, L, n, seed, lam_max=lam_max,
                       budget=budget, workers=workers, replica0=replica0,
                       root=root)
    y = (ms.green[0] >= 1).astype(np.float64)
    budget_flag = (ms.flags[0] & FLAG_BUDGET) != 0
    frac = float(np.mean(ms.flagged(0)))
    _check_quality(frac, flag_tol, "theta_indicator")
    surcharge = float(np.mean((1.0 - y) * budget_flag))
    return _reduce(y, n, surcharge, frac)


def chi(spec, lam, h, T, L, n, seed, *, lam_max=None, budget=10**6,
        workers=1, flag_tol=0.05, replica0=0) -> Estimate:
    """Estimate chi(lam, h) = E[mass * exp(-h * mass)].

    At h=0 this is the truncated susceptibility E[mass_{T,L}], the workhorse
    for locating lambda_T.  Flagged replicas are excluded (their mass is a
    lower bound, which would bias the mean down) and reported; a heavy
    flagged fraction at h=0 signals a near- or super-critical level.
    """
    ms = sample_masses(spec, [lam], h, T, L, n, seed, lam_max=lam_max,
                       budget=budget, workers=workers, replica0=replica0)
    flagged = ms.flagged(0)
    frac = float(np.mean(flagged))
    _check_quality(frac, flag_tol, "chi")
    m = ms.mass[0][~flagged]
    if len(m) == 0:
        raise QualityError("chi: every replica was truncated")
    y = m * np.exp(-h * m)
    return _reduce(y, len(m), 0.0, frac)


def dtheta_dh(spec, lam, h, T, L, n, seed, **kw) -> Estimate:
    """d theta / d h: analytically equal to chi(lam, h) for the
    exponential-mass estimator (the mass does not depend on h)."""
    return chi(spec, lam, h, T, L, n, seed, **kw)


def prob_one_green(spec, lam, h, T, L, n, seed, *, lam_max=None,
                   budget=10**6, workers=1, flag_tol=0.05,
                   replica0=0) -> Estimate:
    """Estimate P(exactly one green site in the cluster) = h * dtheta/dh."""
    ms = sample_masses(spec, [lam], h, T, L, n, seed, lam_max=lam_max,
                       budget=budget, workers=workers, replica0=replica0)
    y = (ms.green[0] == 1).astype(np.float64)
    flagged = ms.flagged(0)
    frac = float(np.mean(flagged))
    _check_quality(frac, flag_tol, "prob_one_green")
    return _reduce(y, n, frac, frac)


def dtheta_dlambda(spec, lam, h, T, L, n, seed, *, step=None, lam_max=None,
                   budget=10**6, workers=1, flag_tol=0.05,
                   replica0=0) -> Estimate:
    """Common-random-number central difference of theta in lambda.

    Both levels share one field realization per replica (thinning coupling),
    so the difference has far lower variance than independent runs.  The
    O(step^2) systematic is reported via step_bias.
    """
    if h <= 0:
        raise DomainError("dtheta_dlambda needs h > 0 (theta vanishes at h=0)")
    if step is None:
        step = max(0.05, 0.1 * lam)
    lo, hi = max(lam - step, 0.0), lam + step
    if lam_max is None:
        lam_max = hi
    if lam_max < hi:
        raise DomainError("lam_max must cover lam + step")
    ms = sample_masses(spec, [lo, hi], h, T, L, n, seed, lam_max=lam_max,
                       budget=budget, workers=workers, replica0=replica0)
    y = 1.0 - np.exp(-h * ms.mass)
    d = (y[1] - y[0]) / (hi - lo)
    flagged = ms.flagged(0) | ms.flagged(1)
    frac = float(np.mean(flagged))
    _check_quality(frac, flag_tol, "dtheta_dlambda")
    return _reduce(d, n, 0.0, frac, step_bias=step * step)


@dataclass
class ThetaMaxResult:
    """Per-site enumeration of theta_{T,L}(x, 0) over the ball.

    max_estimate carries a union-bound-inflated stderr (a 3-sigma band on it
    covers the maximum of all per-site bands at the original confidence);
    surrogate is theta_{T,2L}(o), an upper bound on the true maximum.
    """

    max_estimate: Estimate
    argmax: object
    surrogate: Estimate
    per_site: list


def theta_max(spec, lam, h, T, L, n, seed, *, site_cap=400, lam_max=None,
              budget=10**6, workers=1, flag_tol=0.05,
              replica0=0) -> ThetaMaxResult:
    """Enumerate theta_{T,L}(x,0) for every x in ball(L); also estimate the
    doubled-ball surrogate upper bound theta_{T,2L}(o).

    Raises ResourceError when the ball exceeds site_cap vertices; callers
    should then use the surrogate alone.
    """
    bi = geometry.materialize(spec, int(L))
    inside = [v for i, v in enumerate(bi.vertices) if bi.dist[i] <= L]
    if len(inside) > site_cap:
        raise ResourceError(
            f"ball has {len(inside)} sites, above site_cap={site_cap}; "
            "use the theta_{T,2L} surrogate instead")
    per_site = []
    for x in inside:
        est = theta_indicator(spec, lam, h, T, L, n, seed, lam_max=lam_max,
                              budget=budget, workers=workers,
                              flag_tol=flag_tol, replica0=replica0, root=x)
        per_site.append((x, est))
    means = np.array([e.mean for _, e in per_site])
    k = int(np.argmax(means))
    best = per_site[k][1]
    m = len(inside)
    p3 = norm.sf(3.0)
    inflate = float(norm.isf(p3 / m) / 3.0) if m > 1 else 1.0
    max_est = Estimate(mean=best.mean, stderr=best.stderr * inflate,
                       n=best.n, bias_bound=best.bias_bound,
                       flagged=best.flagged)
    surrogate = theta_indicator(spec, lam, h, T, 2 * L, n, seed,
                                lam_max=lam_max, budget=budget,
                                workers=workers, flag_tol=flag_tol,
                                replica0=replica0)
    return ThetaMaxResult(max_estimate=max_est, argmax=per_site[k][0],
                          surrogate=surrogate, per_site=per_site)
