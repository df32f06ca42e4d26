"""Transitive graph families and finite balls.

Vertices are plain values: coordinate tuples for lattices, root-path tuples
for trees, integers for complete and explicit graphs.  Every vertex has a
stable 64-bit site code used to key its random streams, so event streams are
a property of the vertex itself, not of any particular enumeration.

``materialize`` flattens a ball around the origin into index arrays (CSR
in/out adjacency, distances, codes) that the compiled kernels consume.  The
materialized radius is one larger than the requested cutoff L: the outer
shell exists only so that transmissions across the cutoff can be detected
and counted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DomainError, ResourceError

_LATTICE_COORD_BITS = 16
_LATTICE_COORD_OFF = 1 << (_LATTICE_COORD_BITS - 1)


@dataclass(frozen=True)
class GraphSpec:
    """Immutable description of a kernel J on a graph family.

    family is one of 'lattice', 'tree', 'complete', 'explicit'.  Weights are
    1 per directed edge for lattices and trees; complete graphs default to
    1/(n-1) (1 for n=2) unless ``weight`` overrides; explicit graphs carry
    user weights per directed edge.
    """

    family: str
    d: int = 1
    k: int = 3
    n: int = 2
    weight: float | None = None
    edges: tuple = ()
    ball_cap: int = 2_000_000

    def __post_init__(self):
        if self.family not in ("lattice", "tree", "complete", "explicit"):
            raise DomainError(f"unknown family {self.family!r}")
        if self.family == "lattice" and not 1 <= self.d <= 4:
            raise DomainError("lattice dimension must be in 1..4")
        if self.family == "tree" and self.k < 3:
            raise DomainError("tree degree must be >= 3")
        if self.family in ("complete", "explicit") and self.n < 1:
            raise DomainError("need at least one vertex")
        if self.family == "explicit":
            for u, v, w in self.edges:
                if not (0 <= u < self.n and 0 <= v < self.n):
                    raise DomainError(f"edge ({u},{v}) outside vertex range")
                if u == v:
                    raise DomainError("self-loops are not allowed")
                if w < 0:
                    raise DomainError("edge weights must be nonnegative")


def lattice(d: int = 1, ball_cap: int = 2_000_000) -> GraphSpec:
    """Hypercubic lattice Z^d with nearest-neighbour weight 1."""
    return GraphSpec(family="lattice", d=d, ball_cap=ball_cap)


def tree(k: int = 3, ball_cap: int = 2_000_000) -> GraphSpec:
    """k-regular tree (every vertex has degree k), weight 1 per edge."""
    return GraphSpec(family="tree", k=k, ball_cap=ball_cap)


def complete(n: int, weight: float | None = None) -> GraphSpec:
    """Complete graph on n vertices.

    Default weight keeps the total rate at 1: 1/(n-1) for n >= 2.  A single
    vertex is allowed and has no edges.
    """
    if weight is not None and weight < 0:
        raise DomainError("weight must be nonnegative")
    return GraphSpec(family="complete", n=n, weight=weight)


def explicit(n: int, edges) -> GraphSpec:
    """Finite graph with explicit directed weighted edges ((u, v, w), ...)."""
    return GraphSpec(family="explicit", n=n,
                     edges=tuple((int(u), int(v), float(w)) for u, v, w in edges))


def cycle(n: int, weight: float = 1.0) -> GraphSpec:
    """Undirected n-cycle (weight-regular, so |J| = 2 * weight)."""
    if n < 3:
        raise DomainError("cycle needs at least 3 vertices")
    edges = []
    for v in range(n):
        u = (v + 1) % n
        edges.append((v, u, weight))
        edges.append((u, v, weight))
    return explicit(n, edges)


def path(n: int, weight: float = 1.0) -> GraphSpec:
    """Undirected path on n vertices (not weight-regular for n >= 3)."""
    if n < 2:
        raise DomainError("path needs at least 2 vertices")
    edges = []
    for v in range(n - 1):
        edges.append((v, v + 1, weight))
        edges.append((v + 1, v, weight))
    return explicit(n, edges)


def origin(spec: GraphSpec):
    if spec.family == "lattice":
        return (0,) * spec.d
    if spec.family == "tree":
        return ()
    return 0


def _complete_weight(spec):
    if spec.weight is not None:
        return spec.weight
    return 1.0 if spec.n <= 2 else 1.0 / (spec.n - 1)


@lru_cache(maxsize=64)
def _explicit_adj(spec):
    out = {v: [] for v in range(spec.n)}
    inc = {v: [] for v in range(spec.n)}
    for u, v, w in spec.edges:
        if w > 0.0:
            out[u].append((v, w))
            inc[v].append((u, w))
    for v in range(spec.n):
        out[v].sort()
        inc[v].sort()
    return out, inc


def neighbors(spec: GraphSpec, v) -> list:
    """Out-neighbours of v as (vertex, weight) pairs in canonical order."""
    if spec.family == "lattice":
        out = []
        for off in _lattice_offsets(spec.d):
            out.append((tuple(a + b for a, b in zip(v, off)), 1.0))
        return out
    if spec.family == "tree":
        out = []
        if len(v) > 0:
            out.append((v[:-1], 1.0))
        nkids = spec.k if len(v) == 0 else spec.k - 1
        for c in range(nkids):
            out.append((v + (c,), 1.0))
        return out
    if spec.family == "complete":
        w = _complete_weight(spec)
        return [(u, w) for u in range(spec.n) if u != v]
    return list(_explicit_adj(spec)[0][v])


def in_neighbors(spec: GraphSpec, v) -> list:
    """In-neighbours of v as (vertex, weight) pairs; J_{y,v} feeds infection of v."""
    if spec.family == "explicit":
        return list(_explicit_adj(spec)[1][v])
    return neighbors(spec, v)  # built-in families are symmetric


@lru_cache(maxsize=8)
def _lattice_offsets(d):
    offs = []
    for i in range(d):
        for s in (-1, 1):
            e = [0] * d
            e[i] = s
            offs.append(tuple(e))
    offs.sort()
    return tuple(offs)


def total_rate(spec: GraphSpec) -> float:
    """|J|: the out-weight sum, identical at every vertex.

    For explicit graphs the row sums are checked and a DomainError is raised
    if the graph is not weight-regular (the global |J| appearing in the
    inequality checks is undefined there).
    """
    if spec.family == "explicit":
        sums = [sum(w for _, w in neighbors(spec, v)) for v in range(spec.n)]
        if max(sums) - min(sums) > 1e-12 * max(1.0, max(sums)):
            raise DomainError("explicit graph is not weight-regular; |J| undefined")
        return sums[0]
    return sum(w for _, w in neighbors(spec, origin(spec)))


def distance(spec: GraphSpec, x, y) -> int:
    if spec.family == "lattice":
        return sum(abs(a - b) for a, b in zip(x, y))
    if spec.family == "tree":
        common = 0
        for a, b in zip(x, y):
            if a != b:
                break
            common += 1
        return len(x) + len(y) - 2 * common
    if spec.family == "complete":
        return 0 if x == y else 1
    return _explicit_distances(spec)[x][y]


@lru_cache(maxsize=64)
def _explicit_distances(spec):
    # BFS on the undirected support, per source
    out, inc = _explicit_adj(spec)
    support = {v: sorted({u for u, _ in out[v]} | {u for u, _ in inc[v]})
               for v in range(spec.n)}
    dist = {}
    for s in range(spec.n):
        d = {s: 0}
        frontier = [s]
        while frontier:
            nxt = []
            for v in frontier:
                for u in support[v]:
                    if u not in d:
                        d[u] = d[v] + 1
                        nxt.append(u)
            frontier = nxt
        for v in range(spec.n):
            if v not in d:
                d[v] = np.iinfo(np.int32).max  # disconnected
        dist[s] = d
    return dist


def ball(spec: GraphSpec, L: int) -> list:
    """Vertices within graph distance L of the origin, in canonical order.

    Order is by distance shell, lexicographic within each shell; the origin
    is first.  Raises ResourceError when the ball exceeds spec.ball_cap.
    """
    if L < 0:
        raise DomainError("radius must be nonnegative")
    o = origin(spec)
    seen = {o}
    shells = [[o]]
    for _ in range(L):
        nxt = set()
        for v in shells[-1]:
            # interaction support is undirected: an in-edge matters to the
            # dynamics even when the vertex is not forward-reachable
            for u, _ in neighbors(spec, v) + in_neighbors(spec, v):
                if u not in seen:
                    nxt.add(u)
        if not nxt:
            break
        seen.update(nxt)
        if len(seen) > spec.ball_cap:
            raise ResourceError(
                f"ball would exceed cap of {spec.ball_cap} vertices")
        shells.append(sorted(nxt))
    return [v for shell in shells for v in shell]


def site_code(spec: GraphSpec, v) -> int:
    """Stable 64-bit code of a vertex, injective within the family instance."""
    if spec.family == "lattice":
        code = 0
        for c in v:
            if not -_LATTICE_COORD_OFF <= c < _LATTICE_COORD_OFF:
                raise ResourceError("lattice coordinate out of 16-bit range")
            code = (code << _LATTICE_COORD_BITS) | (c + _LATTICE_COORD_OFF)
        return code
    if spec.family == "tree":
        code = 1
        for i, c in enumerate(v):
            base = spec.k if i == 0 else spec.k - 1
            code = code * base + c
            if code >= 1 << 62:
                raise ResourceError("tree address too deep to encode")
        return code
    return int(v)


@dataclass
class BallIndex:
    """Flattened ball of radius L+1 around the origin.

    Vertices with dist <= L are "inside" (subject to the dynamics); the
    outer shell exists to detect transmissions across the cutoff.  CSR rows
    are filled for inside vertices only and follow the canonical neighbour
    order of the family, so stream consumption matches the per-vertex API.
    """

    spec: GraphSpec
    L: int
    vertices: list
    index: dict
    codes: np.ndarray      # uint64[nV]
    dist: np.ndarray       # int32[nV]
    in_indptr: np.ndarray  # int64[nV+1]
    in_nbr: np.ndarray     # int32[] ball index of each in-neighbour
    in_cumw: np.ndarray    # float64[] inclusive cumulative weights per row
    out_indptr: np.ndarray
    out_nbr: np.ndarray
    out_w: np.ndarray

    @property
    def n_inside(self) -> int:
        return int(np.sum(self.dist <= self.L))


@lru_cache(maxsize=32)
def materialize(spec: GraphSpec, L: int) -> BallIndex:
    verts = ball(spec, L + 1)
    index = {v: i for i, v in enumerate(verts)}
    nv = len(verts)
    codes = np.empty(nv, np.uint64)
    dist = np.empty(nv, np.int32)
    o = origin(spec)
    for i, v in enumerate(verts):
        codes[i] = site_code(spec, v)
        dist[i] = distance(spec, o, v)

    in_indptr = np.zeros(nv + 1, np.int64)
    out_indptr = np.zeros(nv + 1, np.int64)
    in_rows, out_rows = [], []
    for i, v in enumerate(verts):
        if dist[i] <= L:
            irow = in_neighbors(spec, v)
            orow = neighbors(spec, v)
        else:
            irow, orow = [], []
        in_rows.append(irow)
        out_rows.append(orow)
        in_indptr[i + 1] = in_indptr[i] + len(irow)
        out_indptr[i + 1] = out_indptr[i] + len(orow)

    in_nbr = np.empty(in_indptr[-1], np.int32)
    in_cumw = np.empty(in_indptr[-1], np.float64)
    out_nbr = np.empty(out_indptr[-1], np.int32)
    out_w = np.empty(out_indptr[-1], np.float64)
    for i in range(nv):
        p = in_indptr[i]
        row = in_rows[i]
        if row:
            in_nbr[p:p + len(row)] = [index[u] for u, _ in row]
            in_cumw[p:p + len(row)] = np.cumsum([w for _, w in row])
        p = out_indptr[i]
        row = out_rows[i]
        if row:
            out_nbr[p:p + len(row)] = [index[u] for u, _ in row]
            out_w[p:p + len(row)] = [w for _, w in row]

    return BallIndex(spec=spec, L=L, vertices=verts, index=index, codes=codes,
                     dist=dist, in_indptr=in_indptr, in_nbr=in_nbr,
                     in_cumw=in_cumw, out_indptr=out_indptr, out_nbr=out_nbr,
                     out_w=out_w)
