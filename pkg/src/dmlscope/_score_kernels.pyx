# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled scoring kernels for the blocked neighbor pass.

Each kernel accumulates per-pair sums in eight float64 lanes (lane j takes
terms with index congruent to j mod 8, in increasing order) and combines the
lanes in a fixed balanced tree. The reduction order therefore never depends
on block boundaries or thread count, so a given (query, candidate) pair
always produces the same float32 score bit for bit. Similarities are negated
so every metric is minimized. See kernels.py for the dispatch layer.
"""

from cython.parallel import prange
from libc.stdint cimport int64_t, uint64_t


cdef inline double _combine(double* a) noexcept nogil:
    return ((a[0] + a[1]) + (a[2] + a[3])) + ((a[4] + a[5]) + (a[6] + a[7]))


cdef void _row_sqeuclid(const float* q, const float* x, int64_t c0, int64_t c1,
                        int64_t m, float* out) noexcept nogil:
    cdef int64_t c, i, base
    cdef double acc[8]
    cdef double d0, d1, d2, d3, d4, d5, d6, d7
    for c in range(c0, c1):
        base = c * m
        for i in range(8):
            acc[i] = 0.0
        i = 0
        while i + 8 <= m:
            d0 = <double>q[i]     - <double>x[base + i]
            d1 = <double>q[i + 1] - <double>x[base + i + 1]
            d2 = <double>q[i + 2] - <double>x[base + i + 2]
            d3 = <double>q[i + 3] - <double>x[base + i + 3]
            d4 = <double>q[i + 4] - <double>x[base + i + 4]
            d5 = <double>q[i + 5] - <double>x[base + i + 5]
            d6 = <double>q[i + 6] - <double>x[base + i + 6]
            d7 = <double>q[i + 7] - <double>x[base + i + 7]
            acc[0] += d0 * d0
            acc[1] += d1 * d1
            acc[2] += d2 * d2
            acc[3] += d3 * d3
            acc[4] += d4 * d4
            acc[5] += d5 * d5
            acc[6] += d6 * d6
            acc[7] += d7 * d7
            i += 8
        while i < m:
            d0 = <double>q[i] - <double>x[base + i]
            acc[i & 7] += d0 * d0
            i += 1
        out[c - c0] = <float>_combine(acc)


cdef void _row_dot(const float* q, const float* x, int64_t c0, int64_t c1,
                   int64_t m, double qs, const double* xs, int negcos,
                   float* out) noexcept nogil:
    # negcos: divide by qs * xs[c] (precomputed norms) before negating
    cdef int64_t c, i, base
    cdef double acc[8]
    cdef double s
    for c in range(c0, c1):
        base = c * m
        for i in range(8):
            acc[i] = 0.0
        i = 0
        while i + 8 <= m:
            acc[0] += <double>q[i]     * <double>x[base + i]
            acc[1] += <double>q[i + 1] * <double>x[base + i + 1]
            acc[2] += <double>q[i + 2] * <double>x[base + i + 2]
            acc[3] += <double>q[i + 3] * <double>x[base + i + 3]
            acc[4] += <double>q[i + 4] * <double>x[base + i + 4]
            acc[5] += <double>q[i + 5] * <double>x[base + i + 5]
            acc[6] += <double>q[i + 6] * <double>x[base + i + 6]
            acc[7] += <double>q[i + 7] * <double>x[base + i + 7]
            i += 8
        while i < m:
            acc[i & 7] += <double>q[i] * <double>x[base + i]
            i += 1
        s = _combine(acc)
        if negcos:
            s = s / (qs * xs[c])
        out[c - c0] = <float>(-s)


cdef void _row_snr(const float* q, const float* x, int64_t c0, int64_t c1,
                   int64_t m, double q_mean, const double* x_mean,
                   double q_var, float* out) noexcept nogil:
    cdef int64_t c, i, base
    cdef double acc[8]
    cdef double dm, d0, d1, d2, d3, d4, d5, d6, d7
    for c in range(c0, c1):
        base = c * m
        dm = q_mean - x_mean[c]
        for i in range(8):
            acc[i] = 0.0
        i = 0
        while i + 8 <= m:
            d0 = (<double>q[i]     - <double>x[base + i])     - dm
            d1 = (<double>q[i + 1] - <double>x[base + i + 1]) - dm
            d2 = (<double>q[i + 2] - <double>x[base + i + 2]) - dm
            d3 = (<double>q[i + 3] - <double>x[base + i + 3]) - dm
            d4 = (<double>q[i + 4] - <double>x[base + i + 4]) - dm
            d5 = (<double>q[i + 5] - <double>x[base + i + 5]) - dm
            d6 = (<double>q[i + 6] - <double>x[base + i + 6]) - dm
            d7 = (<double>q[i + 7] - <double>x[base + i + 7]) - dm
            acc[0] += d0 * d0
            acc[1] += d1 * d1
            acc[2] += d2 * d2
            acc[3] += d3 * d3
            acc[4] += d4 * d4
            acc[5] += d5 * d5
            acc[6] += d6 * d6
            acc[7] += d7 * d7
            i += 8
        while i < m:
            d0 = (<double>q[i] - <double>x[base + i]) - dm
            acc[i & 7] += d0 * d0
            i += 1
        out[c - c0] = <float>((_combine(acc) / <double>m) / q_var)


def score_block(int metric, const float[:, ::1] q, const float[:, ::1] x,
                int64_t c0, int64_t c1, const double[::1] q_aux,
                const double[::1] x_aux, const double[::1] q_var,
                float[:, ::1] out, int threads):
    """Fill out[b, c-c0] with the minimized score of query b vs candidate c.

    metric: 0 squared euclidean (also orders plain euclidean), 1 negated
    cosine, 2 negated dot product, 3 SNR distance. q_aux/x_aux carry L2 norms
    for metric 1 and row means for metric 3; q_var carries per-query
    population variances for metric 3.
    """
    cdef int64_t nq = q.shape[0]
    cdef int64_t m = q.shape[1]
    cdef int64_t b
    if x.shape[1] != m:
        raise ValueError("dimension mismatch between queries and candidates")
    if not (0 <= c0 <= c1 <= x.shape[0]):
        raise ValueError("candidate range out of bounds")
    if out.shape[0] < nq or out.shape[1] < c1 - c0:
        raise ValueError("output block too small")
    if q_aux.shape[0] < nq or q_var.shape[0] < nq or x_aux.shape[0] < x.shape[0]:
        raise ValueError("aux arrays too small")
    if metric < 0 or metric > 3:
        raise ValueError(f"unknown metric id {metric}")
    if threads < 1:
        threads = 1
    if c1 == c0 or nq == 0:
        return
    for b in prange(nq, num_threads=threads, schedule='static', nogil=True):
        if metric == 0:
            _row_sqeuclid(&q[b, 0], &x[0, 0], c0, c1, m, &out[b, 0])
        elif metric == 1:
            _row_dot(&q[b, 0], &x[0, 0], c0, c1, m, q_aux[b], &x_aux[0], 1,
                     &out[b, 0])
        elif metric == 2:
            _row_dot(&q[b, 0], &x[0, 0], c0, c1, m, 0.0, &x_aux[0], 0,
                     &out[b, 0])
        elif metric == 3:
            _row_snr(&q[b, 0], &x[0, 0], c0, c1, m, q_aux[b], &x_aux[0],
                     q_var[b], &out[b, 0])
