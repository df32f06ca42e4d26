"""Space-time event field on V x (-T, 0].

Graphical representation for the backward construction: each site carries
three independent Poisson streams,

* Heal at rate 1,
* Green (spontaneous-infection marks) at rate h,
* ArrowIn at the ceiling rate lam_max * |J_in(x)|, each arrow decorated with
  a source drawn proportionally to J_{y,x} and a uniform thinning mark u;
  the arrow is active at interaction level lam iff u * lam_max < lam.

Streams are counter-based (see rng), so a site's timeline is a pure function
of (seed, replica, site code, T, h, lam_max): independent of query order, of
which other sites were touched, and reproducible inside compiled kernels.
Because the three streams are separate, changing h changes only the Green
events, and one field realization couples every interaction level
lam <= lam_max through the thinning marks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry, rng
from .errors import DomainError

EVENT_HEAL = 0
EVENT_GREEN = 1
EVENT_ARROW = 2


@dataclass
class SiteTimeline:
    """Events at one site, times strictly decreasing in (-T, 0).

    sources[i] is the arrow source vertex (None for non-arrow events);
    marks[i] is the thinning mark in [0, 1) (NaN for non-arrow events).
    """

    times: np.ndarray
    kinds: np.ndarray
    sources: list
    marks: np.ndarray

    def __len__(self):
        return len(self.times)


class EventField:
    """Lazily sampled event field for one replica.

    Parameters
    ----------
    spec : geometry.GraphSpec
    seed : int
        Experiment seed; fields with distinct (seed, replica) are independent.
    T : float
        Window depth; events live on (-T, 0].
    lam : float
        Default interaction level used by explorations of this field.
    h : float
        Green (spontaneous-infection) rate.
    lam_max : float, optional
        Thinning ceiling, >= lam.  Defaults to lam.  All levels <= lam_max
        share this realization.
    replica : int
        Replica index within the experiment.
    """

    def __init__(self, spec, seed, T, lam, h, lam_max=None, replica=0):
        if T <= 0:
            raise DomainError("window depth T must be positive")
        if h < 0:
            raise DomainError("h must be nonnegative")
        if lam < 0:
            raise DomainError("lam must be nonnegative")
        lam_max = lam if lam_max is None else lam_max
        if lam_max < lam:
            raise DomainError("lam_max must be >= lam")
        self.spec = spec
        self.seed = int(seed)
        self.T = float(T)
        self.lam = float(lam)
        self.h = float(h)
        self.lam_max = float(lam_max)
        self.replica = int(replica)
        self._cache = {}

    def timeline(self, x) -> SiteTimeline:
        """Sampled (idempotent) event timeline of site x."""
        if x in self._cache:
            return self._cache[x]
        code = geometry.site_code(self.spec, x)
        heal = rng.poisson_times(
            np.uint64(rng.stream_key(self.seed, self.replica, code,
                                     rng.HEAL_STREAM)), 1.0, self.T, 1)
        green = rng.poisson_times(
            np.uint64(rng.stream_key(self.seed, self.replica, code,
                                     rng.GREEN_STREAM)), self.h, self.T, 1)
        inn = geometry.in_neighbors(self.spec, x)
        akey = np.uint64(rng.stream_key(self.seed, self.replica, code,
                                        rng.ARROW_STREAM))
        rate = self.lam_max * sum(w for _, w in inn)
        arrows = rng.poisson_times(akey, rate, self.T, 3)
        na = len(arrows)
        src_idx = np.empty(na, np.int64)
        marks = np.empty(na, np.float64)
        if na:
            cumw = np.cumsum([w for _, w in inn])
            for i in range(na):
                src_idx[i] = rng.categorical(akey, 3 * i + 1, cumw)
                marks[i] = rng.u01(akey, 3 * i + 2)

        times = np.concatenate([heal, green, arrows])
        kinds = np.concatenate([
            np.full(len(heal), EVENT_HEAL, np.uint8),
            np.full(len(green), EVENT_GREEN, np.uint8),
            np.full(na, EVENT_ARROW, np.uint8)])
        sources = [None] * (len(heal) + len(green)) + [inn[j][0] for j in src_idx]
        allmarks = np.concatenate([
            np.full(len(heal) + len(green), np.nan), marks])
        order = np.argsort(-times, kind="stable")
        tl = SiteTimeline(times=times[order], kinds=kinds[order],
                          sources=[sources[j] for j in order],
                          marks=allmarks[order])
        self._cache[x] = tl
        return tl

    def events_between(self, x, t0, t1) -> SiteTimeline:
        """Events of site x with time in (t0, t1]; -T <= t0 <= t1 <= 0."""
        if not (-self.T <= t0 <= t1 <= 0.0):
            raise DomainError("need -T <= t0 <= t1 <= 0")
        tl = self.timeline(x)
        sel = (tl.times > t0) & (tl.times <= t1)
        idx = np.nonzero(sel)[0]
        return SiteTimeline(times=tl.times[sel], kinds=tl.kinds[sel],
                            sources=[tl.sources[j] for j in idx],
                            marks=tl.marks[sel])

    def is_active(self, mark, lam=None) -> bool:
        """Whether an arrow with thinning mark is active at level lam."""
        lam = self.lam if lam is None else lam
        if lam > self.lam_max:
            raise DomainError("level exceeds the field ceiling lam_max")
        return bool(mark * self.lam_max < lam)
