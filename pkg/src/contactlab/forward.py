"""Forward event-driven simulation on a finite ball.

Rejection-free next-reaction scheme: every site carries one exponential
clock (heal at rate 1 when infected, infection at rate h + inflow when not),
tentative firing times live in a binary heap, and a version counter per site
lazily invalidates stale entries whenever a rate changes.  Memorylessness
makes resampling on change exact.

Vertices on the outer shell (distance L+1) never become infected; an
infection clock firing there counts a suppressed transmission across the
cutoff, so runs that touched the boundary are identifiable.

The sampler consumes its own counter-based stream (FORWARD_STREAM) and never
shares realizations with an event field.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from . import geometry, rng
from .errors import DomainError
from .parallel import map_blocks


@njit(cache=True)
def _heap_push(ht, hs, hv, n, t, s, v):
    if n == len(ht):
        cap = 2 * len(ht)
        nt = np.empty(cap, np.float64)
        ns = np.empty(cap, np.int32)
        nw = np.empty(cap, np.int32)
        nt[:n] = ht
        ns[:n] = hs
        nw[:n] = hv
        ht, hs, hv = nt, ns, nw
    i = n
    ht[i] = t
    hs[i] = s
    hv[i] = v
    while i > 0:
        p = (i - 1) >> 1
        if ht[p] <= ht[i]:
            break
        ht[p], ht[i] = ht[i], ht[p]
        hs[p], hs[i] = hs[i], hs[p]
        hv[p], hv[i] = hv[i], hv[p]
        i = p
    return ht, hs, hv, n + 1


@njit(cache=True)
def _heap_pop(ht, hs, hv, n):
    t, s, v = ht[0], hs[0], hv[0]
    n -= 1
    ht[0], hs[0], hv[0] = ht[n], hs[n], hv[n]
    i = 0
    while True:
        l = 2 * i + 1
        if l >= n:
            break
        m = l
        r = l + 1
        if r < n and ht[r] < ht[l]:
            m = r
        if ht[i] <= ht[m]:
            break
        ht[i], ht[m] = ht[m], ht[i]
        hs[i], hs[m] = hs[m], hs[i]
        hv[i], hv[m] = hv[m], hv[i]
        i = m
    return t, s, v, n


@njit(cache=True)
def _forward_one(out_indptr, out_nbr, out_w, dist, L, lam, h, t_grid,
                 init, seed, replica, n_inf_g, o_inf_g, maxd_g):
    nv = len(dist)
    key = rng.stream_key(seed, replica, 0, rng.FORWARD_STREAM)
    cnt = 0
    infected = init.copy()
    inflow = np.zeros(nv, np.float64)
    ver = np.zeros(nv, np.int32)
    n_inf = 0
    maxd = -1
    for x in range(nv):
        if infected[x]:
            n_inf += 1
            if dist[x] > maxd:
                maxd = dist[x]
            for p in range(out_indptr[x], out_indptr[x + 1]):
                inflow[out_nbr[p]] += lam * out_w[p]
    cap = max(4 * nv, 64)
    ht = np.empty(cap, np.float64)
    hs = np.empty(cap, np.int32)
    hv = np.empty(cap, np.int32)
    hn = 0
    for x in range(nv):
        if infected[x]:
            rate = 1.0
        elif dist[x] <= L:
            rate = h + inflow[x]
        else:
            rate = inflow[x]
        if rate > 0.0:
            tnext = rng.exponential(key, cnt, rate)
            cnt += 1
            ht, hs, hv, hn = _heap_push(ht, hs, hv, hn, tnext, x, ver[x])

    t_max = t_grid[len(t_grid) - 1]
    g = 0
    suppressed = 0
    ext_time = np.nan
    now = 0.0
    while hn > 0:
        te, x, v, hn = _heap_pop(ht, hs, hv, hn)
        if v != ver[x]:
            continue
        if te > t_max:
            break
        while g < len(t_grid) and t_grid[g] < te:
            n_inf_g[g] = n_inf
            o_inf_g[g] = infected[0]
            maxd_g[g] = maxd
            g += 1
        now = te
        if infected[x]:
            # heal
            infected[x] = 0
            n_inf -= 1
            if n_inf == 0 and np.isnan(ext_time):
                ext_time = now
            for p in range(out_indptr[x], out_indptr[x + 1]):
                y = out_nbr[p]
                inflow[y] -= lam * out_w[p]
                if not infected[y]:
                    ver[y] += 1
                    r = inflow[y] + (h if dist[y] <= L else 0.0)
                    if r > 1e-12:
                        tn = now + rng.exponential(key, cnt, r)
                        cnt += 1
                        ht, hs, hv, hn = _heap_push(ht, hs, hv, hn, tn, y, ver[y])
            ver[x] += 1
            r = inflow[x] + (h if dist[x] <= L else 0.0)
            if r > 1e-12:
                tn = now + rng.exponential(key, cnt, r)
                cnt += 1
                ht, hs, hv, hn = _heap_push(ht, hs, hv, hn, tn, x, ver[x])
            if n_inf == 0 and h == 0.0:
                break
        elif dist[x] > L:
            # suppressed transmission across the cutoff; clock re-arms
            suppressed += 1
            ver[x] += 1
            if inflow[x] > 1e-12:
                tn = now + rng.exponential(key, cnt, inflow[x])
                cnt += 1
                ht, hs, hv, hn = _heap_push(ht, hs, hv, hn, tn, x, ver[x])
        else:
            # infection
            infected[x] = 1
            n_inf += 1
            if dist[x] > maxd:
                maxd = dist[x]
            ver[x] += 1
            tn = now + rng.exponential(key, cnt, 1.0)
            cnt += 1
            ht, hs, hv, hn = _heap_push(ht, hs, hv, hn, tn, x, ver[x])
            for p in range(out_indptr[x], out_indptr[x + 1]):
                y = out_nbr[p]
                inflow[y] += lam * out_w[p]
                if not infected[y]:
                    ver[y] += 1
                    r = inflow[y] + (h if dist[y] <= L else 0.0)
                    if r > 1e-12:
                        tn = now + rng.exponential(key, cnt, r)
                        cnt += 1
                        ht, hs, hv, hn = _heap_push(ht, hs, hv, hn, tn, y, ver[y])
    while g < len(t_grid):
        n_inf_g[g] = n_inf
        o_inf_g[g] = infected[0]
        maxd_g[g] = maxd
        g += 1
    return suppressed, ext_time


@njit(cache=True)
def _forward_batch(out_indptr, out_nbr, out_w, dist, L, lam, h, t_grid, init,
                   seed, rep0, n_rep):
    ng = len(t_grid)
    n_inf = np.empty((n_rep, ng), np.int32)
    o_inf = np.empty((n_rep, ng), np.uint8)
    maxd = np.empty((n_rep, ng), np.int32)
    suppressed = np.empty(n_rep, np.int64)
    ext = np.empty(n_rep, np.float64)
    for r in range(n_rep):
        sup, et = _forward_one(out_indptr, out_nbr, out_w, dist, L, lam, h,
                               t_grid, init, seed, rep0 + r,
                               n_inf[r], o_inf[r], maxd[r])
        suppressed[r] = sup
        ext[r] = et
    return n_inf, o_inf, maxd, suppressed, ext


@dataclass
class TrajectorySummary:
    """Statistics of one forward run on a fixed time grid."""

    t_grid: np.ndarray
    n_infected: np.ndarray
    alive: np.ndarray
    origin_infected: np.ndarray
    max_dist: np.ndarray
    suppressed: int
    extinction_time: float

    @property
    def hit_space_boundary(self) -> bool:
        return self.suppressed > 0


@dataclass
class ForwardSample:
    """Per-replica forward statistics; arrays are (n, len(t_grid))."""

    t_grid: np.ndarray
    n_infected: np.ndarray
    origin_infected: np.ndarray
    max_dist: np.ndarray
    suppressed: np.ndarray
    extinction_time: np.ndarray
    lam: float
    h: float
    L: int
    seed: int

    @property
    def n(self) -> int:
        return self.n_infected.shape[0]

    @property
    def alive(self) -> np.ndarray:
        return self.n_infected > 0


def _initial_mask(spec, bi, initial, L):
    init = np.zeros(len(bi.dist), np.uint8)
    if initial == "origin":
        init[0] = 1
    elif initial == "full":
        init[bi.dist <= L] = 1
    else:
        for v in initial:
            i = bi.index.get(v)
            if i is None or bi.dist[i] > L:
                raise DomainError(f"initial vertex {v!r} outside ball(L)")
            init[i] = 1
    return init


def _forward_block(args):
    spec, lam, h, t_grid, L, seed, rep0, n_rep, initial = args
    bi = geometry.materialize(spec, L)
    init = _initial_mask(spec, bi, initial, L)
    return _forward_batch(bi.out_indptr, bi.out_nbr, bi.out_w, bi.dist, L,
                          lam, h, np.asarray(t_grid, np.float64), init,
                          seed, rep0, n_rep)


_BLOCK = 4096


def forward_sample(spec, lam, h, t_grid, L, n, seed, *, initial="origin",
                   workers=1, replica0=0) -> ForwardSample:
    """Run n independent forward replicas, recording stats on t_grid.

    initial is 'origin', 'full' (the whole ball), or an iterable of vertices.
    Replica r is a pure function of (seed, replica0 + r): bit-identical
    results for any worker count.
    """
    t_grid = np.asarray(t_grid, np.float64)
    if len(t_grid) == 0 or np.any(np.diff(t_grid) < 0) or t_grid[0] < 0:
        raise DomainError("t_grid must be nonnegative and nondecreasing")
    if lam < 0 or h < 0:
        raise DomainError("rates must be nonnegative")
    if isinstance(initial, str):
        if initial not in ("origin", "full"):
            raise DomainError("initial must be 'origin', 'full', or vertices")
    else:
        initial = tuple(initial)
    tasks = []
    r = 0
    while r < n:
        blk = min(_BLOCK, n - r)
        tasks.append((spec, float(lam), float(h), tuple(t_grid), int(L),
                      int(seed), replica0 + r, blk, initial))
        r += blk
    parts = map_blocks(_forward_block, tasks, workers)
    return ForwardSample(
        t_grid=t_grid,
        n_infected=np.concatenate([p[0] for p in parts]),
        origin_infected=np.concatenate([p[1] for p in parts]),
        max_dist=np.concatenate([p[2] for p in parts]),
        suppressed=np.concatenate([p[3] for p in parts]),
        extinction_time=np.concatenate([p[4] for p in parts]),
        lam=float(lam), h=float(h), L=int(L), seed=int(seed))


def run(spec, lam, h, t_max, L, seed, *, initial="origin", t_grid=None,
        replica=0) -> TrajectorySummary:
    """Single forward trajectory summarized on a time grid (default 0..t_max
    in 64 steps)."""
    if t_grid is None:
        t_grid = np.linspace(0.0, float(t_max), 65)
    fs = forward_sample(spec, lam, h, t_grid, L, 1, seed, initial=initial,
                        replica0=replica)
    return TrajectorySummary(t_grid=fs.t_grid, n_infected=fs.n_infected[0],
                             alive=fs.n_infected[0] > 0,
                             origin_infected=fs.origin_infected[0].astype(bool),
                             max_dist=fs.max_dist[0],
                             suppressed=int(fs.suppressed[0]),
                             extinction_time=float(fs.extinction_time[0]))


def survival_curve(spec, lam, h, t_grid, L, n, seed, *, initial="origin",
                   workers=1, replica0=0):
    """P(A_t nonempty) on t_grid: (fractions, stderrs, sample)."""
    fs = forward_sample(spec, lam, h, t_grid, L, n, seed, initial=initial,
                        workers=workers, replica0=replica0)
    alive = fs.alive.astype(np.float64)
    p = alive.mean(axis=0)
    se = alive.std(axis=0, ddof=1) / np.sqrt(n)
    return p, se, fs


def coupled_forward(spec, lam, h, t_max, L, seed, initials, t_grid,
                    replica=0):
    """Replay one shared forward field realization from several initial sets.

    Builds per-site Heal/Green/Arrow-out streams (counter-based, FWD_*
    streams) and evolves every initial set through the identical event list,
    so A_t is pointwise monotone in the initial set by construction.  Test
    and diagnostic use only; production estimates use the next-reaction
    kernel.
    """
    bi = geometry.materialize(spec, int(L))
    inside = [i for i in range(len(bi.vertices)) if bi.dist[i] <= L]
    events = []  # (time, priority, kind, site, target)
    for i in inside:
        code = bi.codes[i]
        heal = rng.poisson_times(
            np.uint64(rng.stream_key(seed, replica, code, rng.FWD_HEAL_STREAM)),
            1.0, float(t_max), 1)
        for t in heal:
            events.append((-t, 0, i, -1))
        green = rng.poisson_times(
            np.uint64(rng.stream_key(seed, replica, code, rng.FWD_GREEN_STREAM)),
            h, float(t_max), 1)
        for t in green:
            events.append((-t, 1, i, -1))
        p0, p1 = bi.out_indptr[i], bi.out_indptr[i + 1]
        wts = bi.out_w[p0:p1]
        if len(wts) and wts.sum() > 0:
            akey = np.uint64(rng.stream_key(seed, replica, code,
                                            rng.FWD_ARROW_STREAM))
            cumw = np.cumsum(wts)
            at = rng.poisson_times(akey, lam * cumw[-1], float(t_max), 2)
            for j, t in enumerate(at):
                tgt = bi.out_nbr[p0 + rng.categorical(akey, 2 * j + 1, cumw)]
                events.append((-t, 2, i, int(tgt)))
    events.sort()
    t_grid = np.asarray(t_grid, np.float64)
    results = []
    for initial in initials:
        init = _initial_mask(spec, bi, initial, L)
        A = {i for i in range(len(init)) if init[i]}
        snaps = []
        g = 0
        for t, kind, site, tgt in events:
            while g < len(t_grid) and t_grid[g] < t:
                snaps.append({bi.vertices[i] for i in A})
                g += 1
            if kind == 0:
                A.discard(site)
            elif kind == 1:
                A.add(site)
            else:
                if site in A and bi.dist[tgt] <= L:
                    A.add(tgt)
        while g < len(t_grid):
            snaps.append({bi.vertices[i] for i in A})
            g += 1
        results.append(snaps)
    return results
