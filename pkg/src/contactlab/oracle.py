"""Exact finite-graph reference values via the full CTMC generator.

States are subsets of the vertex set encoded as bitmasks.  Transition rates
follow the generator: an infected vertex heals at rate 1; an uninfected
vertex y becomes infected at rate h + lam * sum_{x in A} J_{x,y}.  Intended
for graphs with at most 12 vertices (4096 states); tests and acceptance use
far smaller ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import DomainError, NumericalError

STATE_CAP_VERTICES = 12


@dataclass
class GeneratorMatrix:
    """Dense generator Q over the 2^n subset states of a finite graph."""

    spec: geometry.GraphSpec
    lam: float
    h: float
    Q: np.ndarray

    @property
    def n_vertices(self) -> int:
        return self.spec.n


def build_generator(spec, lam, h) -> GeneratorMatrix:
    if spec.family in ("lattice", "tree"):
        raise DomainError("oracle needs a finite graph (complete or explicit)")
    if spec.n > STATE_CAP_VERTICES:
        raise DomainError(
            f"oracle caps at {STATE_CAP_VERTICES} vertices (2^12 states)")
    if lam < 0 or h < 0:
        raise DomainError("rates must be nonnegative")
    n = spec.n
    in_rows = [geometry.in_neighbors(spec, v) for v in range(n)]
    nstates = 1 << n
    Q = np.zeros((nstates, nstates))
    for s in range(nstates):
        for v in range(n):
            bit = 1 << v
            if s & bit:
                Q[s, s ^ bit] += 1.0
            else:
                rate = h + lam * sum(w for y, w in in_rows[v] if s >> y & 1)
                if rate > 0.0:
                    Q[s, s | bit] += rate
        Q[s, s] = -Q[s].sum()
    return GeneratorMatrix(spec=spec, lam=lam, h=h, Q=Q)


def stationary_distribution(gen: GeneratorMatrix, *, tol=1e-12) -> np.ndarray:
    """Stationary distribution pi with residual ||pi Q||_inf <= tol.

    At h=0 the empty set is absorbing and pi is its point mass.
    """
    nstates = gen.Q.shape[0]
    if gen.h == 0.0:
        pi = np.zeros(nstates)
        pi[0] = 1.0
        return pi
    A = gen.Q.T.copy()
    A[-1, :] = 1.0
    b = np.zeros(nstates)
    b[-1] = 1.0
    pi = np.linalg.solve(A, b)
    # one step of iterative refinement, then verify
    pi += np.linalg.solve(A, b - A @ pi)
    res = float(np.max(np.abs(pi @ gen.Q)))
    if res > tol:
        raise NumericalError(f"stationary residual {res:.2e} above {tol}")
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def stationary_theta(gen: GeneratorMatrix, vertex=None) -> float:
    """Stationary probability that `vertex` (default origin) is infected."""
    vertex = geometry.origin(gen.spec) if vertex is None else vertex
    pi = stationary_distribution(gen)
    states = np.arange(gen.Q.shape[0])
    return float(pi[(states >> vertex) & 1 == 1].sum())


def _initial_state(gen, initial):
    nstates = gen.Q.shape[0]
    if initial == "empty":
        return 0
    if initial == "full":
        return nstates - 1
    s = int(initial)
    if not 0 <= s < nstates:
        raise DomainError("initial state out of range")
    return s


def transient_distribution(gen: GeneratorMatrix, T, *, initial="empty",
                           tol=1e-12) -> np.ndarray:
    """Distribution at time T by uniformization, absolute tolerance tol.

    Poisson weights are carried in log space so large uniformization rates
    do not underflow the leading terms.
    """
    if T < 0:
        raise DomainError("T must be nonnegative")
    nstates = gen.Q.shape[0]
    p = np.zeros(nstates)
    p[_initial_state(gen, initial)] = 1.0
    lam_u = float(np.max(-np.diag(gen.Q)))
    mu = lam_u * T
    if mu == 0.0:
        return p
    K = np.eye(nstates) + gen.Q / lam_u
    acc = np.zeros(nstates)
    log_mu = math.log(mu)
    lw = -mu  # log Poisson weight at k=0
    covered = 0.0
    k = 0
    k_cap = int(mu + 50.0 * math.sqrt(mu + 10.0) + 1000.0)
    v = p
    while covered < 1.0 - tol:
        if k > k_cap:
            raise NumericalError("uniformization series did not converge")
        w = math.exp(lw)
        if w > 0.0:
            acc += w * v
            covered += w
        v = v @ K
        lw += log_mu - math.log(k + 1)
        k += 1
    return acc


def transient_theta(gen: GeneratorMatrix, T, *, initial="empty", vertex=None,
                    tol=1e-12) -> float:
    """P(vertex infected at time T | A_0 = initial)."""
    vertex = geometry.origin(gen.spec) if vertex is None else vertex
    p = transient_distribution(gen, T, initial=initial, tol=tol)
    states = np.arange(gen.Q.shape[0])
    return float(p[(states >> vertex) & 1 == 1].sum())


def exact_derivatives(spec, lam, h, *, step=1e-4, vertex=None):
    """(dtheta/dlam, dtheta/dh) of the stationary theta, Richardson-refined
    central differences (accuracy ~1e-8 at the default step).

    Within step of the lam >= 0 / h >= 0 boundary a one-sided second-order
    stencil is used instead.
    """
    if lam < 0 or h < 0:
        raise DomainError("need lam >= 0 and h >= 0")

    def f(l_, h_):
        return stationary_theta(build_generator(spec, l_, h_), vertex)

    def central(g, x, s):
        c1 = (g(x + s) - g(x - s)) / (2 * s)
        c2 = (g(x + s / 2) - g(x - s / 2)) / s
        return (4.0 * c2 - c1) / 3.0

    def one_sided(g, x, s):
        d1 = (-3.0 * g(x) + 4.0 * g(x + s) - g(x + 2 * s)) / (2 * s)
        d2 = (-3.0 * g(x) + 4.0 * g(x + s / 2) - g(x + s)) / s
        return (4.0 * d2 - d1) / 3.0

    dstencil = one_sided if lam < step else central
    hstencil = one_sided if h < step else central
    dlam = dstencil(lambda v: f(v, h), lam, step)
    dh = hstencil(lambda v: f(lam, v), h, step)
    return dlam, dh
