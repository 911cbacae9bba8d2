import os

import numpy as np
import pytest

from lmf import RatingMatrix

ML100K_ENV = "LMF_ML100K"
_HERE = os.path.dirname(__file__)
_ML100K_CANDIDATES = [
    os.environ.get(ML100K_ENV, ""),
    os.path.join(_HERE, "data", "ml-100k", "u.data"),
    os.path.join(_HERE, "..", "data", "ml-100k", "u.data"),
]


def ml100k_path():
    for p in _ML100K_CANDIDATES:
        if p and os.path.exists(p):
            return p
    return None


requires_ml100k = pytest.mark.skipif(
    ml100k_path() is None,
    reason="MovieLens-100K not available: place u.data at data/ml-100k/ or "
           f"set ${ML100K_ENV} (no network in this environment)")


@pytest.fixture(scope="session")
def ml100k():
    path = ml100k_path()
    if path is None:
        pytest.skip("MovieLens-100K not available")
    from lmf import load_ratings

    return load_ratings(path)


def random_sparse(rng, n_rows, n_cols, density, values=(1, 6)):
    """Uniform random sparse matrix with at least one entry."""
    mask = rng.random((n_rows, n_cols)) < density
    if not mask.any():
        mask[rng.integers(n_rows), rng.integers(n_cols)] = True
    r, c = np.nonzero(mask)
    vals = rng.integers(values[0], values[1], size=r.size).astype(float)
    return RatingMatrix(n_rows, n_cols, r, c, vals)


def planted_blocks(rng, sizes, density_in, density_cross=0.0, values=(1, 6),
                   bridge_rows=0, bridge_deg=2):
    """Block-diagonal community matrix, optionally with noise entries
    crossing blocks and extra bridge rows touching every block."""
    row_off, col_off = [0], [0]
    for nr, nc in sizes:
        row_off.append(row_off[-1] + nr)
        col_off.append(col_off[-1] + nc)
    n_rows, n_cols = row_off[-1] + bridge_rows, col_off[-1]
    entries = set()
    for b, (nr, nc) in enumerate(sizes):
        got = False
        for i in range(nr):
            for j in range(nc):
                if rng.random() < density_in:
                    entries.add((row_off[b] + i, col_off[b] + j))
                    got = True
        if not got:
            entries.add((row_off[b], col_off[b]))
    if density_cross > 0:
        for a in range(len(sizes)):
            for b in range(len(sizes)):
                if a == b:
                    continue
                nr, nc = sizes[a][0], sizes[b][1]
                for i in range(nr):
                    for j in range(nc):
                        if rng.random() < density_cross:
                            entries.add((row_off[a] + i, col_off[b] + j))
    for t in range(bridge_rows):
        i = row_off[-1] + t
        for b in range(len(sizes)):
            cols = rng.choice(sizes[b][1], size=min(bridge_deg, sizes[b][1]),
                              replace=False)
            for j in cols:
                entries.add((i, col_off[b] + int(j)))
    entries = sorted(entries)
    r = [e[0] for e in entries]
    c = [e[1] for e in entries]
    vals = rng.integers(values[0], values[1], size=len(entries)).astype(float)
    return RatingMatrix(n_rows, n_cols, r, c, vals)


def figure_bridge_matrix():
    """Two dense communities joined by one bridge row (R9), one bridge
    column (C7) and one cross-shopping row (R4); the unique minimum vertex
    separator of its bipartite graph is {R4, R9, C7} (0-based: 3, 8, 16).
    Community A: rows {0,1,2,3} x cols {0,1,2,6}; community B:
    rows {4,5,6,7,9} x cols {3,4,5,7,8,9}; row 8 bridges both."""
    pairs = set()
    for i in range(3):
        for j in range(3):
            pairs.add((i, j))
    pairs |= {(0, 6), (1, 6), (2, 6)}          # C7's community-A entries
    pairs |= {(3, 0), (3, 1), (3, 2)}          # R4 inside A
    pairs |= {(3, 7), (3, 9)}                  # R4 shopping in B
    pairs |= {(8, 0), (8, 1), (8, 2)}          # R9 inside A
    pairs |= {(8, 4), (8, 5)}                  # R9 shopping in B
    pairs |= {(7, 6), (9, 6)}                  # C7 bought by B rows
    for i in (4, 5, 6, 7, 9):
        for j in (3, 4, 5, 7, 8, 9):
            pairs.add((i, j))
    pairs = sorted(pairs)
    r = [p[0] for p in pairs]
    c = [p[1] for p in pairs]
    return RatingMatrix(10, 10, r, c, np.ones(len(pairs)))


def block_diag_matrix(rng, block_shapes, density=0.6, values=(1, 6),
                      connected=True):
    """Exactly block-diagonal matrix; with ``connected`` each block's
    bipartite graph is one component (spanning path added)."""
    row_off, col_off = 0, 0
    rows, cols, vals = [], [], []
    for nr, nc in block_shapes:
        seen = set()
        if connected:
            # zig-zag chain R0-C0-R1-C1-... plus tails: one component
            for i in range(nr):
                seen.add((i, min(i, nc - 1)))
                if i >= 1:
                    seen.add((i, min(i - 1, nc - 1)))
            for j in range(nc):
                seen.add((min(j, nr - 1), j))
        for i in range(nr):
            for j in range(nc):
                if rng.random() < density:
                    seen.add((i, j))
        for (i, j) in sorted(seen):
            rows.append(row_off + i)
            cols.append(col_off + j)
            vals.append(float(rng.integers(values[0], values[1])))
        row_off += nr
        col_off += nc
    return RatingMatrix(row_off, col_off, rows, cols, vals)
