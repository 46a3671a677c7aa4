"""Pure numpy version of the Gibbs kernel.

Vectorizes across geographies: at step k of a sweep every geography with
more than k records updates its k-th record at once.  Each geography keeps
its own splitmix64 stream, so results are bit-identical to the compiled
kernel.
"""
from __future__ import annotations

import numpy as np

J = 5
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def splitmix_next(state: np.ndarray):
    """Advance uint64 `state` in place; return the output words."""
    with np.errstate(over="ignore"):
        state += _GOLDEN
        z = state.copy()
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def uniform(state: np.ndarray) -> np.ndarray:
    return (splitmix_next(state) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def run_chains(weights, starts, base, seeds, labels, tallies, geos,
               n_iter, burn_in, rao_blackwell, final_counts):
    geos = np.asarray(geos, dtype=np.int64)
    if geos.size == 0:
        return
    lo = starts[geos]
    sizes = starts[geos + 1] - lo
    keep = sizes > 0
    geos, lo, sizes = geos[keep], lo[keep], sizes[keep]
    if geos.size == 0:
        return
    # longest geographies first so each step's active set is a prefix
    order = np.argsort(-sizes, kind="stable")
    geos, lo, sizes = geos[order], lo[order], sizes[order]
    n_active = np.searchsorted(-sizes, -np.arange(sizes.max()), side="left")

    n = np.zeros((geos.size, J), dtype=np.int64)
    for k in range(sizes.max()):
        a = n_active[k]
        np.add.at(n, (np.arange(a), labels[lo[:a] + k]), 1)
    state = seeds[geos].copy()
    gbase = base[geos]
    rows_all = np.arange(geos.size)

    for it in range(n_iter):
        kept = it >= burn_in
        for k in range(sizes.max()):
            a = n_active[k]
            rows = rows_all[:a]
            idx = lo[:a] + k
            cur = labels[idx]
            n[rows, cur] -= 1
            c = weights[idx] * (n[:a] + gbase[:a])
            cum = np.cumsum(c, axis=1)
            total = cum[:, -1]
            u = uniform(state[:a]) * total
            hit = u[:, None] < cum
            new = np.argmax(hit, axis=1)
            miss = ~hit.any(axis=1)
            if miss.any():
                pos = c[miss] > 0.0
                new[miss] = J - 1 - np.argmax(pos[:, ::-1], axis=1)
            labels[idx] = new
            n[rows, new] += 1
            if kept:
                if rao_blackwell:
                    tallies[idx] += c / total[:, None]
                else:
                    tallies[idx, new] += 1.0
    final_counts[geos] = n
