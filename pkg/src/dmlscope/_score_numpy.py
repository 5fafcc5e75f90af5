"""Pure-numpy scoring backend with the same contract as _score_kernels.

Scores are accumulated in float64 and cast to float32 once. All reductions
run over the fixed-length feature axis of small fixed-size chunks, so a given
(query, candidate) pair yields the same float32 bit pattern regardless of how
callers block the pass. BLAS matmul is deliberately avoided: its internal
blocking depends on operand shapes, which would make scores change with block
size.
"""

from __future__ import annotations

import numpy as np

# fixed internal chunk sizes bound temp memory to a few tens of MB
_Q_CHUNK = 32
_C_CHUNK = 512


def score_block(metric, q, x, c0, c1, q_aux, x_aux, q_var, out, threads):
    """Fill out[b, c-c0] with the minimized score of query b vs candidate c.

    Metric ids and aux semantics match _score_kernels.score_block. threads is
    accepted for signature parity and ignored.
    """
    nq, m = q.shape
    if x.shape[1] != m:
        raise ValueError("dimension mismatch between queries and candidates")
    if not (0 <= c0 <= c1 <= x.shape[0]):
        raise ValueError("candidate range out of bounds")
    if out.shape[0] < nq or out.shape[1] < c1 - c0:
        raise ValueError("output block too small")
    if metric not in (0, 1, 2, 3):
        raise ValueError(f"unknown metric id {metric}")
    for qs in range(0, nq, _Q_CHUNK):
        qe = min(qs + _Q_CHUNK, nq)
        qb = q[qs:qe].astype(np.float64)
        for cs in range(c0, c1, _C_CHUNK):
            ce = min(cs + _C_CHUNK, c1)
            xb = x[cs:ce].astype(np.float64)
            if metric == 0:
                d = qb[:, None, :] - xb[None, :, :]
                s = np.sum(d * d, axis=2)
            elif metric == 1:
                s = np.sum(qb[:, None, :] * xb[None, :, :], axis=2)
                s = -(s / (q_aux[qs:qe, None] * x_aux[None, cs:ce]))
            elif metric == 2:
                s = -np.sum(qb[:, None, :] * xb[None, :, :], axis=2)
            else:
                d = qb[:, None, :] - xb[None, :, :]
                dm = q_aux[qs:qe, None] - x_aux[None, cs:ce]
                d -= dm[:, :, None]
                s = (np.sum(d * d, axis=2) / m) / q_var[qs:qe, None]
            out[qs:qe, cs - c0 : ce - c0] = s.astype(np.float32)
