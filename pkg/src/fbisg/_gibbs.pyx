# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled collapsed Gibbs sweeps, one independent chain per geography."""
from libc.stdint cimport uint64_t, int64_t

import numpy as np

DEF J = 5


cdef inline uint64_t _splitmix_next(uint64_t* state) noexcept nogil:
    cdef uint64_t z
    state[0] += 0x9E3779B97F4A7C15ULL
    z = state[0]
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t* state) noexcept nogil:
    return <double>(_splitmix_next(state) >> 11) * (1.0 / 9007199254740992.0)


cdef void _run(const double[:, ::1] weights, const int64_t[::1] starts,
               const double[:, ::1] base, const uint64_t[::1] seeds,
               int64_t[::1] labels, double[:, ::1] tallies, const int64_t[::1] geos,
               int64_t n_iter, int64_t burn_in, bint rao_blackwell,
               int64_t[:, ::1] final_counts) noexcept nogil:
    cdef int64_t gi, g, lo, hi, i, it, r, cur, new
    cdef int64_t n[J]
    cdef double cum[J]
    cdef double cw[J]
    cdef double c, total, u
    cdef uint64_t state
    for gi in range(geos.shape[0]):
        g = geos[gi]
        lo = starts[g]
        hi = starts[g + 1]
        for r in range(J):
            n[r] = 0
        for i in range(lo, hi):
            n[labels[i]] += 1
        state = seeds[g]
        for it in range(n_iter):
            for i in range(lo, hi):
                cur = labels[i]
                n[cur] -= 1
                total = 0.0
                for r in range(J):
                    c = weights[i, r] * (<double>n[r] + base[g, r])
                    cw[r] = c
                    total = total + c
                    cum[r] = total
                u = _uniform(&state) * total
                new = -1
                for r in range(J):
                    if u < cum[r]:
                        new = r
                        break
                if new < 0:
                    # u rounded up to total: take the last race with mass
                    new = J - 1
                    while new > 0 and cw[new] <= 0.0:
                        new -= 1
                labels[i] = new
                n[new] += 1
                if it >= burn_in:
                    if rao_blackwell:
                        for r in range(J):
                            tallies[i, r] += cw[r] / total
                    else:
                        tallies[i, new] += 1.0
        for r in range(J):
            final_counts[g, r] = n[r]


def run_chains(const double[:, ::1] weights, const int64_t[::1] starts,
               const double[:, ::1] base, const uint64_t[::1] seeds,
               int64_t[::1] labels, double[:, ::1] tallies, const int64_t[::1] geos,
               int64_t n_iter, int64_t burn_in, bint rao_blackwell,
               int64_t[:, ::1] final_counts):
    """Run the chains of the geographies listed in `geos`, in place.

    Records must be grouped by geography: geography g owns rows
    ``starts[g]:starts[g+1]``.  `base` holds ``N_g + alpha``.  The GIL is
    released for the whole call.
    """
    with nogil:
        _run(weights, starts, base, seeds, labels, tallies, geos, n_iter, burn_in,
             rao_blackwell, final_counts)
