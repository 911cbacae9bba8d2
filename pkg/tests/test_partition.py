import itertools

import numpy as np
import pytest

from lmf import gpes_bisect, gpvs_bisect, to_bipartite
from lmf.errors import NoSplitError, TooSmallError
from lmf.partition import BipartiteGraph

from conftest import figure_bridge_matrix


def graph(n_r, n_c, pairs):
    return BipartiteGraph.from_entries(
        n_r, n_c, [p[0] for p in pairs], [p[1] for p in pairs])


def components_without(edges, nodes, removed=frozenset()):
    """Brute-force component search after deleting ``removed`` nodes."""
    alive = [v for v in nodes if v not in removed]
    adj = {v: set() for v in alive}
    for u, v in edges:
        if u in adj and v in adj:
            adj[u].add(v)
            adj[v].add(u)
    seen, comps = set(), []
    for v in alive:
        if v in seen:
            continue
        stack, comp = [v], set()
        while stack:
            x = stack.pop()
            if x in comp:
                continue
            comp.add(x)
            stack.extend(adj[x] - comp)
        seen |= comp
        comps.append(comp)
    return comps


def brute_min_cut_2way(edges, nodes, max_imbalance):
    """Minimum cut over all 2-partitions within the imbalance budget."""
    nodes = sorted(nodes)
    best = None
    for r in range(1, len(nodes)):
        for part0 in itertools.combinations(nodes, r):
            p0 = set(part0)
            if abs(len(p0) - (len(nodes) - len(p0))) > max_imbalance:
                continue
            cut = sum(1 for u, v in edges if (u in p0) != (v in p0))
            if best is None or cut < best:
                best = cut
    return best


def brute_min_separator_size(edges, nodes):
    """Smallest vertex set whose removal leaves >= 2 components, or None."""
    nodes = sorted(nodes)
    for size in range(0, len(nodes) - 1):
        for sep in itertools.combinations(nodes, size):
            comps = components_without(edges, nodes, frozenset(sep))
            if len(comps) >= 2:
                return size, set(sep)
    return None


# -- edge separator -----------------------------------------------------------------

def test_gpes_two_disjoint_edges():
    g = graph(2, 2, [(0, 0), (1, 1)])
    part = gpes_bisect(g, 0.2, seed=0)
    assert part.cut_edges.shape[0] == 0
    assert sorted(len(p) for p in part.parts) == [2, 2]


def test_gpes_path_minimum_cut():
    # R0 - C0 - R1: brute force says the best balanced 2-cut severs one edge
    edges = [(0, 2), (1, 2)]
    assert brute_min_cut_2way(edges, [0, 1, 2], max_imbalance=1) == 1
    g = graph(2, 1, [(0, 0), (1, 0)])
    part = gpes_bisect(g, 0.2, seed=0)
    assert part.cut_edges.shape[0] == 1
    sizes = sorted(p.size for p in part.parts)
    assert sizes == [1, 2]


def test_gpes_figure_matrix_severs_the_cross_entries():
    m = figure_bridge_matrix()
    part = gpes_bisect(to_bipartite(m), 0.2, seed=0)
    cut = {tuple(e) for e in part.cut_edges.tolist()}
    # cross-community entries: R4/R9 shopping in B, C7 bought from B
    # (node ids: row i -> i, col j -> 10 + j)
    assert cut == {(3, 17), (3, 19), (8, 14), (8, 15), (7, 16), (9, 16)}


def test_gpes_too_small():
    g = graph(1, 0, [])
    with pytest.raises(TooSmallError):
        gpes_bisect(g, 0.2, seed=0)


def test_gpes_determinism():
    rng = np.random.default_rng(0)
    pairs = {(int(rng.integers(12)), int(rng.integers(15))) for _ in range(90)}
    g = graph(12, 15, sorted(pairs))
    a = gpes_bisect(g, 0.2, seed=5)
    b = gpes_bisect(g, 0.2, seed=5)
    assert [p.tolist() for p in a.parts] == [p.tolist() for p in b.parts]
    assert a.cut_edges.tolist() == b.cut_edges.tolist()


# -- vertex separator ------------------------------------------------------------------

def test_gpvs_star():
    # brute force: {R0} is the unique minimum separator of the 2-star
    edges = [(0, 1), (0, 2)]
    size, sep = brute_min_separator_size(edges, [0, 1, 2])
    assert size == 1 and sep == {0}
    g = graph(1, 2, [(0, 0), (0, 1)])
    part = gpvs_bisect(g, 0.2, seed=0)
    assert part.separator.tolist() == [0]
    assert sorted(sorted(p.tolist()) for p in part.parts) == [[1], [2]]


def test_gpvs_two_disjoint_edges():
    g = graph(2, 2, [(0, 0), (1, 1)])
    part = gpvs_bisect(g, 0.2, seed=0)
    assert part.separator.size == 0
    assert sorted(len(p) for p in part.parts) == [2, 2]


def test_gpvs_figure_matrix_finds_bridge_separator():
    m = figure_bridge_matrix()
    g = to_bipartite(m)
    # the engineered instance has {R4, R9, C7} (ids 3, 8, 16) as its unique
    # minimum separator: every cross path runs through one of them twice
    edges = list(zip(g.edge_r.tolist(), g.edge_c.tolist()))
    size, sep = brute_min_separator_size(edges, range(20))
    assert size == 3 and sep == {3, 8, 16}
    for seed in range(3):
        part = gpvs_bisect(g, 0.2, seed=seed)
        assert sorted(part.separator.tolist()) == [3, 8, 16]


def test_gpvs_dense_3x3_cannot_split():
    # brute force over all vertex subsets: nothing of size < 3 disconnects
    # K33, and every size-3 separator that does is an entire side, which
    # leaves every matrix entry inside the border
    edges = [(i, 3 + j) for i in range(3) for j in range(3)]
    for size in range(3):
        for sep in itertools.combinations(range(6), size):
            assert len(components_without(edges, range(6), frozenset(sep))) < 2
    for sep in itertools.combinations(range(6), 3):
        if len(components_without(edges, range(6), frozenset(sep))) >= 2:
            assert set(sep) in ({0, 1, 2}, {3, 4, 5})
    g = graph(3, 3, [(i, j) for i in range(3) for j in range(3)])
    for seed in range(4):
        with pytest.raises(NoSplitError):
            gpvs_bisect(g, 0.2, seed=seed)


def test_gpvs_single_edge_no_split():
    g = graph(1, 1, [(0, 0)])
    with pytest.raises(NoSplitError):
        gpvs_bisect(g, 0.2, seed=0)


def test_gpvs_separator_minimal_wrt_single_moves():
    rng = np.random.default_rng(7)
    for trial in range(25):
        nr, nc = int(rng.integers(4, 10)), int(rng.integers(4, 10))
        pairs = {(int(rng.integers(nr)), int(rng.integers(nc)))
                 for _ in range(int(rng.integers(8, 40)))}
        g = graph(nr, nc, sorted(pairs))
        try:
            part = gpvs_bisect(g, 0.3, seed=trial)
        except (NoSplitError, TooSmallError):
            continue
        tag = np.full(g.n_nodes, -1)
        for k, p in enumerate(part.parts):
            tag[p] = k
        for v in part.separator:
            nbr_tags = {int(tag[u]) for u in g.neighbors(v) if tag[u] >= 0}
            # moving v back into a part must reconnect the two parts
            assert len(nbr_tags) >= 2


def test_gpvs_soundness_random():
    rng = np.random.default_rng(123)
    for trial in range(60):
        nr, nc = int(rng.integers(2, 14)), int(rng.integers(2, 14))
        pairs = {(int(rng.integers(nr)), int(rng.integers(nc)))
                 for _ in range(int(rng.integers(2, 60)))}
        g = graph(nr, nc, sorted(pairs))
        try:
            part = gpvs_bisect(g, 0.25, seed=trial)
        except (NoSplitError, TooSmallError):
            continue
        edges = list(zip(g.edge_r.tolist(), g.edge_c.tolist()))
        comps = components_without(edges, range(g.n_nodes),
                                   frozenset(part.separator.tolist()))
        part_of = {}
        for k, p in enumerate(part.parts):
            for v in p.tolist():
                part_of[v] = k
        for comp in comps:
            assert len({part_of[v] for v in comp}) == 1
        assert all(p.size > 0 for p in part.parts)


def test_gpvs_determinism_across_calls():
    m = figure_bridge_matrix()
    g = to_bipartite(m)
    runs = [gpvs_bisect(g, 0.2, seed=9) for _ in range(3)]
    for r in runs[1:]:
        assert r.separator.tolist() == runs[0].separator.tolist()
        assert [p.tolist() for p in r.parts] == [p.tolist() for p in runs[0].parts]


def test_min_vertex_cover_is_minimum():
    """The matching-based cover used to derive separators must be a true
    vertex cover of minimum size (brute-force oracle on small graphs)."""
    from lmf.partition import _hopcroft_karp, _min_vertex_cover

    rng = np.random.default_rng(77)
    for trial in range(60):
        nl, nr = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        edges = sorted({(int(rng.integers(nl)), int(rng.integers(nr)))
                        for _ in range(int(rng.integers(1, 14)))})
        adj = [[] for _ in range(nl)]
        for u, v in edges:
            adj[u].append(v)
        pair_l, pair_r = _hopcroft_karp(adj, nr)
        cover_l, cover_r = _min_vertex_cover(adj, nr, pair_l, pair_r)
        cl, cr = set(cover_l.tolist()), set(cover_r.tolist())
        assert all(u in cl or v in cr for u, v in edges), "not a cover"
        # brute force the minimum cover size over all node subsets
        best = nl + nr
        for mask in range(1 << (nl + nr)):
            ls = {u for u in range(nl) if mask & (1 << u)}
            rs = {v for v in range(nr) if mask & (1 << (nl + v))}
            if len(ls) + len(rs) >= best:
                continue
            if all(u in ls or v in rs for u, v in edges):
                best = len(ls) + len(rs)
        assert len(cl) + len(cr) == best
        # matching size equals cover size (sanity on the matching itself)
        assert int((pair_l >= 0).sum()) == best


def test_planted_two_community_recovery():
    """Recovered parts must agree with planted communities on >= 90% of
    nodes over 50 random instances (intra-density 10x inter)."""
    rng = np.random.default_rng(2024)
    total_nodes = 0
    matched_nodes = 0
    for trial in range(50):
        nr, nc = int(rng.integers(12, 20)), int(rng.integers(12, 20))
        half_r, half_c = nr // 2, nc // 2
        pairs = set()
        for i in range(nr):
            for j in range(nc):
                same = (i < half_r) == (j < half_c)
                p = 0.4 if same else 0.04
                if rng.random() < p:
                    pairs.add((i, j))
        g = graph(nr, nc, sorted(pairs))
        planted = np.array([0 if i < half_r else 1 for i in range(nr)]
                           + [0 if j < half_c else 1 for j in range(nc)])
        part = gpes_bisect(g, 0.2, seed=trial)
        side = np.empty(g.n_nodes, dtype=int)
        for k, p in enumerate(part.parts):
            side[p] = k
        agree = int((side == planted).sum())
        agree = max(agree, g.n_nodes - agree)  # label symmetry
        total_nodes += g.n_nodes
        matched_nodes += agree
    assert matched_nodes / total_nodes >= 0.9
