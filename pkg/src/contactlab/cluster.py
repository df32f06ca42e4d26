"""Backward cluster exploration on the event field.

The cluster of (root, 0) is the set of space-time points from which an
upward, healing-free, active-arrow path reaches the root.  Exploration keeps
a worklist of heads (site, time); scanning a head walks the site timeline
down to the first Heal event (or -T) and emits that vertical segment, any
active arrow inside the segment spawning a head at its source.  Coverage is
tracked per site as a union of disjoint intervals, each keyed by the Heal
event that bounds it below, so no space-time point is ever scanned twice and
the result is independent of worklist order.

mass is the total length of the segment union; green_hits counts the Green
events inside it.  Flags record the three truncation modes (window bottom
reached, cutoff ball left, segment budget exhausted).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, int64
from numba.core import types
from numba.typed import Dict, List

from . import geometry, rng
from .errors import DomainError
from .parallel import map_blocks

FLAG_TIME = 1
FLAG_SPACE = 2
FLAG_BUDGET = 4

_F8_1D = types.float64[::1]
_I4_1D = types.int32[::1]


@dataclass
class ClusterResult:
    """Outcome of one exploration at one interaction level."""

    mass: float
    green_hits: int
    segments: int
    hit_time_boundary: bool
    hit_space_boundary: bool
    budget_exhausted: bool
    segment_list: list | None = None

    @property
    def flagged(self) -> bool:
        """True when the cluster was truncated in space or by budget."""
        return self.hit_space_boundary or self.budget_exhausted


@njit(cache=True, inline="always")
def _first_leq(a, v):
    # a strictly decreasing: first index with a[i] <= v
    lo, hi = 0, len(a)
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] <= v:
            hi = mid
        else:
            lo = mid + 1
    return lo


@njit(cache=True, inline="always")
def _first_lt(a, v):
    # a strictly decreasing: first index with a[i] < v
    lo, hi = 0, len(a)
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] < v:
            hi = mid
        else:
            lo = mid + 1
    return lo


@njit(cache=True)
def _sample_site(seed, replica, code, T, h, lam_max, nbr_row, cumw_row):
    heal = rng.poisson_times(
        rng.stream_key(seed, replica, code, rng.HEAL_STREAM), 1.0, T, 1)
    green = rng.poisson_times(
        rng.stream_key(seed, replica, code, rng.GREEN_STREAM), h, T, 1)
    total_w = cumw_row[len(cumw_row) - 1] if len(cumw_row) > 0 else 0.0
    akey = rng.stream_key(seed, replica, code, rng.ARROW_STREAM)
    at = rng.poisson_times(akey, lam_max * total_w, T, 3)
    na = len(at)
    asrc = np.empty(na, np.int32)
    amark = np.empty(na, np.float64)
    for i in range(na):
        asrc[i] = nbr_row[rng.categorical(akey, 3 * i + 1, cumw_row)]
        amark[i] = rng.u01(akey, 3 * i + 2)
    return heal, green, at, asrc, amark


@njit(cache=True)
def _run_level(in_indptr, in_nbr, in_cumw, dist, codes, L, T, h, lam_max,
               level, seed, replica, budget, root_idx, record,
               slot, heal_l, green_l, at_l, asrc_l, amark_l):
    cover = Dict.empty(types.int64, types.float64)
    cap = 256
    st_site = np.empty(cap, np.int32)
    st_time = np.empty(cap, np.float64)
    st_site[0] = root_idx
    st_time[0] = 0.0
    sp = 1
    mass = 0.0
    greens = 0
    segs = 0
    flags = 0
    rcap = 64 if record else 1
    rsite = np.empty(rcap, np.int32)
    rlo = np.empty(rcap, np.float64)
    rhi = np.empty(rcap, np.float64)
    rn = 0

    while sp > 0:
        sp -= 1
        x = st_site[sp]
        t = st_time[sp]
        s = slot[x]
        if s < 0:
            p0, p1 = in_indptr[x], in_indptr[x + 1]
            heal, green, at, asrc, amark = _sample_site(
                seed, replica, codes[x], T, h, lam_max,
                in_nbr[p0:p1], in_cumw[p0:p1])
            s = len(heal_l)
            heal_l.append(heal)
            green_l.append(green)
            at_l.append(at)
            asrc_l.append(asrc)
            amark_l.append(amark)
            slot[x] = s
        heal = heal_l[s]
        hidx = _first_lt(heal, t)
        floor = heal[hidx] if hidx < len(heal) else -T
        key = (int64(s) << 32) | int64(hidx)
        fresh_to_bottom = False
        if key in cover:
            top = cover[key]
            if t <= top:
                continue
            lo = top
        else:
            lo = floor
            fresh_to_bottom = hidx == len(heal)
        if segs >= budget:
            flags |= FLAG_BUDGET
            break
        if fresh_to_bottom:
            flags |= FLAG_TIME
        cover[key] = t
        segs += 1
        mass += t - lo
        if record:
            if rn == rcap:
                rcap *= 2
                ns_, nl_, nh_ = (np.empty(rcap, np.int32),
                                 np.empty(rcap, np.float64),
                                 np.empty(rcap, np.float64))
                ns_[:rn] = rsite[:rn]
                nl_[:rn] = rlo[:rn]
                nh_[:rn] = rhi[:rn]
                rsite, rlo, rhi = ns_, nl_, nh_
            rsite[rn] = x
            rlo[rn] = lo
            rhi[rn] = t
            rn += 1
        green_t = green_l[s]
        greens += _first_leq(green_t, lo) - _first_leq(green_t, t)
        at = at_l[s]
        asrc = asrc_l[s]
        amark = amark_l[s]
        i1 = _first_leq(at, lo)
        for i in range(_first_leq(at, t), i1):
            if amark[i] * lam_max < level:
                y = asrc[i]
                if dist[y] > L:
                    flags |= FLAG_SPACE
                else:
                    if sp == cap:
                        cap *= 2
                        gs = np.empty(cap, np.int32)
                        gt = np.empty(cap, np.float64)
                        gs[:sp] = st_site[:sp]
                        gt[:sp] = st_time[:sp]
                        st_site, st_time = gs, gt
                    st_site[sp] = y
                    st_time[sp] = at[i]
                    sp += 1
    return mass, greens, segs, flags, rsite[:rn], rlo[:rn], rhi[:rn]


@njit(cache=True)
def _explore_batch(in_indptr, in_nbr, in_cumw, dist, codes, L, T, h, lam_max,
                   levels, seed, rep0, n_rep, budget, root_idx):
    nl = len(levels)
    mass = np.empty((nl, n_rep), np.float64)
    green = np.empty((nl, n_rep), np.int64)
    segs = np.empty((nl, n_rep), np.int64)
    flags = np.empty((nl, n_rep), np.uint8)
    for r in range(n_rep):
        slot = np.full(len(codes), -1, np.int32)
        heal_l = List.empty_list(_F8_1D)
        green_l = List.empty_list(_F8_1D)
        at_l = List.empty_list(_F8_1D)
        asrc_l = List.empty_list(_I4_1D)
        amark_l = List.empty_list(_F8_1D)
        for li in range(nl):
            m, g, sg, fl, _, _, _ = _run_level(
                in_indptr, in_nbr, in_cumw, dist, codes, L, T, h, lam_max,
                levels[li], seed, rep0 + r, budget, root_idx, False,
                slot, heal_l, green_l, at_l, asrc_l, amark_l)
            mass[li, r] = m
            green[li, r] = g
            segs[li, r] = sg
            flags[li, r] = fl
    return mass, green, segs, flags


def explore(field, level=None, *, L, budget=10**6, root=None,
            record_segments=False) -> ClusterResult:
    """Explore the cluster of (root, 0) on one event-field replica.

    Parameters
    ----------
    field : gfield.EventField
    level : float, optional
        Interaction level, <= field.lam_max.  Defaults to field.lam.
    L : int
        Spatial cutoff: heads outside ball(L) are dropped (and flagged).
    budget : int
        Maximum number of segments scanned before giving up (flagged).
    root : vertex, optional
        Defaults to the origin; must lie inside ball(L).
    record_segments : bool
        Keep the explicit segment list (tests/diagnostics only).
    """
    level = field.lam if level is None else float(level)
    if level < 0 or level > field.lam_max:
        raise DomainError("level must lie in [0, lam_max]")
    if budget < 1:
        raise DomainError("budget must be positive")
    bi = geometry.materialize(field.spec, int(L))
    root = geometry.origin(field.spec) if root is None else root
    if root not in bi.index or bi.dist[bi.index[root]] > L:
        raise DomainError("root must lie inside ball(L)")
    slot = np.full(len(bi.codes), -1, np.int32)
    heal_l = List.empty_list(_F8_1D)
    green_l = List.empty_list(_F8_1D)
    at_l = List.empty_list(_F8_1D)
    asrc_l = List.empty_list(_I4_1D)
    amark_l = List.empty_list(_F8_1D)
    mass, greens, segs, flags, rsite, rlo, rhi = _run_level(
        bi.in_indptr, bi.in_nbr, bi.in_cumw, bi.dist, bi.codes, int(L),
        field.T, field.h, field.lam_max, level, field.seed, field.replica,
        int(budget), bi.index[root], bool(record_segments),
        slot, heal_l, green_l, at_l, asrc_l, amark_l)
    seg_list = None
    if record_segments:
        seg_list = [(bi.vertices[rsite[i]], rlo[i], rhi[i])
                    for i in range(len(rsite))]
    return ClusterResult(mass=float(mass), green_hits=int(greens),
                         segments=int(segs),
                         hit_time_boundary=bool(flags & FLAG_TIME),
                         hit_space_boundary=bool(flags & FLAG_SPACE),
                         budget_exhausted=bool(flags & FLAG_BUDGET),
                         segment_list=seg_list)


@dataclass
class MassSample:
    """Per-replica exploration outcomes at one or more coupled levels.

    Arrays have shape (n_levels, n); replicas are columns and share one
    event-field realization across levels (thinning coupling).
    """

    levels: np.ndarray
    mass: np.ndarray
    green: np.ndarray
    segments: np.ndarray
    flags: np.ndarray
    T: float
    L: int
    h: float
    lam_max: float
    seed: int
    replica0: int

    @property
    def n(self) -> int:
        return self.mass.shape[1]

    def flagged(self, li=0) -> np.ndarray:
        """Space- or budget-truncated replicas at level index li."""
        return (self.flags[li] & (FLAG_SPACE | FLAG_BUDGET)) != 0


_BLOCK = 8192


def _mass_block(args):
    (spec, levels, h, T, L, seed, rep0, n_rep, budget, root, lam_max) = args
    bi = geometry.materialize(spec, L)
    root_idx = bi.index[root]
    return _explore_batch(bi.in_indptr, bi.in_nbr, bi.in_cumw, bi.dist,
                          bi.codes, L, T, h, lam_max,
                          np.asarray(levels, np.float64), seed, rep0, n_rep,
                          budget, root_idx)


def sample_masses(spec, levels, h, T, L, n, seed, *, lam_max=None,
                  budget=10**6, workers=1, root=None,
                  replica0=0) -> MassSample:
    """Explore n independent replicas at the given coupled levels.

    Replica r uses the event field keyed by (seed, replica0 + r); results are
    bit-identical for any worker count because every replica is a pure
    function of its key.
    """
    levels = np.atleast_1d(np.asarray(levels, np.float64))
    if levels.size == 0:
        raise DomainError("need at least one level")
    if np.min(levels) < 0:
        raise DomainError("levels must be nonnegative")
    lam_max = float(np.max(levels)) if lam_max is None else float(lam_max)
    if lam_max < np.max(levels):
        raise DomainError("lam_max must cover every level")
    if h < 0 or T <= 0 or n < 1:
        raise DomainError("need h >= 0, T > 0, n >= 1")
    L = int(L)
    root = geometry.origin(spec) if root is None else root
    bi = geometry.materialize(spec, L)
    if root not in bi.index or bi.dist[bi.index[root]] > L:
        raise DomainError("root must lie inside ball(L)")

    tasks = []
    r = 0
    while r < n:
        blk = min(_BLOCK, n - r)
        tasks.append((spec, tuple(levels), float(h), float(T), L, int(seed),
                      replica0 + r, blk, int(budget), root, lam_max))
        r += blk
    parts = map_blocks(_mass_block, tasks, workers)
    mass = np.concatenate([p[0] for p in parts], axis=1)
    green = np.concatenate([p[1] for p in parts], axis=1)
    segs = np.concatenate([p[2] for p in parts], axis=1)
    flags = np.concatenate([p[3] for p in parts], axis=1)
    return MassSample(levels=levels, mass=mass, green=green, segments=segs,
                      flags=flags, T=float(T), L=L, h=float(h),
                      lam_max=lam_max, seed=int(seed), replica0=replica0)
