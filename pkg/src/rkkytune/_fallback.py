"""Pure-numpy versions of the compiled kernels in ``_core``."""
import numpy as np


def pair_sum(pocc, pvir, eocc, evir, degen_tol, exclude):
    gap = np.asarray(evir)[None, :] - np.asarray(eocc)[:, None]
    bad = gap < degen_tol
    n_deg = int(bad.sum())
    out = np.zeros(pocc.shape[0])
    if n_deg and not exclude:
        return out, n_deg
    w = np.where(bad, 0.0, 1.0 / np.where(bad, 1.0, gap))
    inner = pvir @ w.T
    out = -np.einsum("kn,kn->k", pocc, inner)
    return out, n_deg


def enumerate_states(L, n):
    if n == 0:
        return np.zeros(1, dtype=np.uint64)
    words = np.arange(1 << L, dtype=np.uint64)
    counts = np.zeros(words.shape, dtype=np.int64)
    for j in range(L):
        counts += ((words >> np.uint64(j)) & np.uint64(1)).astype(np.int64)
    return words[counts == n]


def rank_states(states, binom):
    states = np.asarray(states, dtype=np.uint64)
    r = np.zeros(states.shape, dtype=np.int64)
    cnt = np.zeros(states.shape, dtype=np.int64)
    for pos in range(binom.shape[0] - 1):
        bit = ((states >> np.uint64(pos)) & np.uint64(1)).astype(bool)
        cnt = cnt + bit
        r = r + np.where(bit, binom[pos, np.minimum(cnt, binom.shape[1] - 1)], 0)
    return r


def _popcount(x):
    y = np.array(x, dtype=np.uint64)
    c = np.zeros(y.shape, dtype=np.int64)
    while y.any():
        c += (y & np.uint64(1)).astype(np.int64)
        y >>= np.uint64(1)
    return c


def diagonal_energies(states, L, couplings, periodic):
    x = np.asarray(states, dtype=np.uint64)
    mask = np.uint64((1 << L) - 1)
    e = np.zeros(x.shape)
    for s, v in enumerate(couplings, start=1):
        if periodic:
            sh = ((x >> np.uint64(s)) | (x << np.uint64(L - s))) & mask
        else:
            sh = x >> np.uint64(s)
        e += v * _popcount(x & sh)
    return e


def hopping_entries(states, L, periodic, binom):
    x = np.asarray(states, dtype=np.uint64)
    idx = np.arange(x.size, dtype=np.int64)
    nb = L if periodic else L - 1
    rows, cols, kinds, bonds = [], [], [], []
    for j in range(nb):
        a, b = j, (j + 1) % L
        ba = (x >> np.uint64(a)) & np.uint64(1)
        bb = (x >> np.uint64(b)) & np.uint64(1)
        hit = ba != bb
        y = x[hit] ^ np.uint64((1 << a) | (1 << b))
        rows.append(rank_states(y, binom))
        cols.append(idx[hit])
        bonds.append(np.full(int(hit.sum()), j))
        if j == L - 1:
            kinds.append(np.where(bb[hit] == 1, 1, 2).astype(np.int8))
        else:
            kinds.append(np.zeros(int(hit.sum()), dtype=np.int8))
    rows, cols, kinds, bonds = (np.concatenate(v) for v in (rows, cols, kinds, bonds))
    # same ordering as the compiled loop: by source state, then bond
    order = np.lexsort((bonds, cols))
    return rows[order], cols[order], kinds[order]
