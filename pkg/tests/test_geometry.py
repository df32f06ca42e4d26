import numpy as np
import pytest

from contactlab import geometry as G
from contactlab.errors import DomainError, ResourceError


def test_lattice_1d_neighbors():
    sp = G.lattice(1)
    assert G.origin(sp) == (0,)
    assert G.neighbors(sp, (0,)) == [((-1,), 1.0), ((1,), 1.0)]
    assert G.neighbors(sp, (5,)) == [((4,), 1.0), ((6,), 1.0)]
    assert G.total_rate(sp) == 2.0


def test_lattice_ball_sizes():
    for L in (0, 1, 3, 7):
        assert len(G.ball(G.lattice(1), L)) == 2 * L + 1
        assert len(G.ball(G.lattice(2), L)) == 2 * L * L + 2 * L + 1


def test_lattice_distance():
    sp = G.lattice(2)
    assert G.distance(sp, (0, 0), (3, -2)) == 5
    assert G.distance(sp, (1, 1), (1, 1)) == 0


def test_tree_regularity_and_ball():
    k = 3
    sp = G.tree(k)
    o = G.origin(sp)
    assert len(G.neighbors(sp, o)) == k
    child = G.neighbors(sp, o)[0][0]
    assert len(G.neighbors(sp, child)) == k
    assert G.total_rate(sp) == float(k)
    # |ball(L)| = 1 + k ((k-1)^L - 1)/(k-2) on the k-regular tree
    for L in (0, 1, 2, 3):
        expect = 1 + k * ((k - 1) ** L - 1) // (k - 2)
        assert len(G.ball(sp, L)) == expect


def test_tree_neighbor_symmetry():
    sp = G.tree(4)
    o = G.origin(sp)
    for v, w in G.neighbors(sp, o):
        assert w == 1.0
        back = [u for u, _ in G.neighbors(sp, v)]
        assert o in back


def test_complete_total_rate_normalization():
    # default weight 1/(n-1) keeps |J| = 1 for every n
    for n in (2, 3, 5):
        sp = G.complete(n)
        assert G.total_rate(sp) == pytest.approx(1.0)
    sp = G.complete(2)
    assert G.neighbors(sp, 0) == [(1, 1.0)]
    assert G.ball(sp, 0) == [0]
    assert sorted(G.ball(sp, 1)) == [0, 1]


def test_cycle_factory():
    sp = G.cycle(5)
    assert G.total_rate(sp) == 2.0
    assert sorted(v for v, _ in G.neighbors(sp, 0)) == [1, 4]
    assert len(G.ball(sp, 10)) == 5
    with pytest.raises(DomainError):
        G.cycle(2)


def test_path_not_weight_regular():
    sp = G.path(3)
    assert sorted(v for v, _ in G.neighbors(sp, 1)) == [0, 2]
    assert [v for v, _ in G.neighbors(sp, 0)] == [1]
    # the endpoint in-rate differs from the middle one, so there is no
    # single total interaction rate
    with pytest.raises(DomainError):
        G.total_rate(sp)


def test_explicit_directed_weights():
    sp = G.explicit(3, [(0, 1, 2.0), (1, 2, 0.5), (2, 0, 1.0)])
    assert G.neighbors(sp, 0) == [(1, 2.0)]
    assert G.in_neighbors(sp, 1) == [(0, 2.0)]
    assert G.in_neighbors(sp, 0) == [(2, 1.0)]
    ball = G.ball(sp, 2)
    assert sorted(ball) == [0, 1, 2]


def test_site_code_injective():
    for sp, L in [(G.lattice(1), 50), (G.lattice(2), 12), (G.tree(3), 6),
                  (G.complete(4), 1), (G.cycle(9), 5)]:
        vs = G.ball(sp, L)
        codes = {G.site_code(sp, v) for v in vs}
        assert len(codes) == len(vs)


def test_site_code_deterministic_across_specs():
    a = G.lattice(2)
    b = G.lattice(2)
    for v in G.ball(a, 3):
        assert G.site_code(a, v) == G.site_code(b, v)


def test_materialize_index_roundtrip():
    sp = G.lattice(2)
    bi = G.materialize(sp, 4)
    for v in G.ball(sp, 4):
        i = bi.index[v]
        assert bi.vertices[i] == v
        assert bi.dist[i] == G.distance(sp, G.origin(sp), v)
    # in-neighbor lists in the CSR match the spec
    for v in G.ball(sp, 3):
        i = bi.index[v]
        lo, hi = bi.in_indptr[i], bi.in_indptr[i + 1]
        got = sorted(bi.vertices[j] for j in bi.in_nbr[lo:hi])
        assert got == sorted(u for u, _ in G.in_neighbors(sp, v))


def test_ball_cap_enforced():
    sp = G.lattice(2, ball_cap=50)
    with pytest.raises(ResourceError):
        G.ball(sp, 100)


def test_invalid_graphs_rejected():
    with pytest.raises(DomainError):
        G.lattice(0)
    with pytest.raises(DomainError):
        G.tree(1)
    with pytest.raises(DomainError):
        G.complete(0)
    with pytest.raises(DomainError):
        G.explicit(2, [(0, 1, -1.0)])
    with pytest.raises(DomainError):
        G.explicit(2, [(0, 5, 1.0)])
