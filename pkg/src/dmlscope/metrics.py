"""Exact top-R retrieval and the R-Precision family.

Retrieval is exact for all five metrics: candidate scores (float32, smaller is
closer) are packed together with the candidate index into one uint64 key per
pair, so selection and ordering are total, deterministic, and break score ties
by ascending candidate index. Because keys are unique, the selected sets are
identical for every block size and thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import EmbeddingSet, MetricKind, PropertyTable, check_same_ids
from .errors import ToolkitError
from .kernels import METRIC_IDS, metric_aux, score_block

SIGNIFICANCE_THRESHOLD = 2.576

DEFAULT_QUERY_BLOCK = 256
DEFAULT_CAND_BLOCK = 8192

_LOW32 = np.uint64(0xFFFFFFFF)
_SENTINEL = np.uint64(0xFFFFFFFFFFFFFFFF)


def pairwise_score(metric: MetricKind | str, a, b) -> float:
    """Score of a single pair under the given metric, computed in float64.

    Distances: euclidean, squared_euclidean, snr_distance (population
    variances, Var(a-b)/Var(a)). Similarities: cosine_similarity,
    dot_product_similarity.
    """
    if isinstance(metric, str):
        metric = MetricKind.parse(metric)
    va = np.asarray(a, dtype=np.float64).ravel()
    vb = np.asarray(b, dtype=np.float64).ravel()
    if va.size == 0 or va.size != vb.size:
        raise ToolkitError(f"pairwise_score: dimension mismatch ({va.size} vs {vb.size})")
    if not (np.isfinite(va).all() and np.isfinite(vb).all()):
        raise ToolkitError("pairwise_score: non-finite input")
    if metric is MetricKind.EUCLIDEAN:
        d = va - vb
        return float(np.sqrt(np.sum(d * d)))
    if metric is MetricKind.SQUARED_EUCLIDEAN:
        d = va - vb
        return float(np.sum(d * d))
    if metric is MetricKind.COSINE_SIMILARITY:
        na = float(np.sqrt(np.sum(va * va)))
        nb = float(np.sqrt(np.sum(vb * vb)))
        if na == 0.0 or nb == 0.0:
            raise ToolkitError("cosine similarity undefined for a zero vector")
        return float(np.sum(va * vb)) / (na * nb)
    if metric is MetricKind.DOT_PRODUCT_SIMILARITY:
        return float(np.sum(va * vb))
    # snr_distance
    var_a = float(np.mean((va - va.mean()) ** 2))
    if var_a == 0.0:
        raise ToolkitError("snr_distance undefined: zero-variance anchor")
    d = va - vb
    var_d = float(np.mean((d - d.mean()) ** 2))
    return var_d / var_a


@dataclass(frozen=True)
class NeighborList:
    """Indices of the R closest candidates to a query, closest first."""

    query_index: int
    neighbor_indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.neighbor_indices)
        object.__setattr__(self, "neighbor_indices", idx)
        if len(set(idx)) != len(idx):
            raise ToolkitError(f"NeighborList[{self.query_index}]: duplicate neighbors")
        if self.query_index in idx:
            raise ToolkitError(f"NeighborList[{self.query_index}]: contains the query itself")


def _score_keys(scores: np.ndarray, c0: int) -> np.ndarray:
    """Pack float32 scores and candidate indices into order-preserving uint64 keys."""
    s = scores + np.float32(0.0)  # folds -0.0 into +0.0 so equal scores get equal keys
    bits = s.view(np.uint32)
    mono = np.where(bits & np.uint32(0x80000000), ~bits, bits | np.uint32(0x80000000))
    cand = np.arange(c0, c0 + scores.shape[1], dtype=np.uint64)
    return (mono.astype(np.uint64) << np.uint64(32)) | cand[None, :]


def _ranked_neighbors(
    matrix: np.ndarray,
    metric: MetricKind,
    r_max: int,
    q_block: int,
    c_block: int,
    include_query: bool = False,
    query_rows: np.ndarray | None = None,
    threads: int = 1,
    backend: str | None = None,
):
    """Yield (start, stop, ranked int64[stop-start, r_max]) over query blocks.

    ranked[b] lists the global candidate indices of query block row b from
    closest to farthest. The query itself is masked out with a sentinel key
    unless include_query is set.
    """
    n, _ = matrix.shape
    limit = n if include_query else n - 1
    if not (1 <= r_max <= limit):
        raise ToolkitError(f"r_max must be in [1, {limit}], got {r_max}")
    if q_block < 1 or c_block < 1:
        raise ToolkitError("block sizes must be >= 1")
    aux, var = metric_aux(metric, matrix)
    if METRIC_IDS[metric] == 3:
        qvar_all = var if query_rows is None else var[query_rows]
        if not (qvar_all > 0.0).all():
            bad = np.flatnonzero(qvar_all <= 0.0)[0]
            row = int(bad) if query_rows is None else int(query_rows[int(bad)])
            raise ToolkitError(f"snr_distance undefined: zero-variance anchor at row {row}")
    total_q = n if query_rows is None else len(query_rows)
    # headroom >= r_max keeps compaction amortized O(1) per candidate even
    # when r_max dwarfs c_block; compaction points never change the result
    # because selection keeps the exact top r_max under the total key order
    cap = r_max + max(c_block, r_max)
    out = np.empty((min(q_block, total_q), c_block), dtype=np.float32)
    for s0 in range(0, total_q, q_block):
        s1 = min(s0 + q_block, total_q)
        b = s1 - s0
        if query_rows is None:
            qmat = matrix[s0:s1]
            qg = np.arange(s0, s1, dtype=np.int64)
            qaux, qvar = aux[s0:s1], var[s0:s1]
        else:
            idx = np.asarray(query_rows[s0:s1], dtype=np.int64)
            qmat = np.ascontiguousarray(matrix[idx])
            qg = idx
            qaux = np.ascontiguousarray(aux[idx])
            qvar = np.ascontiguousarray(var[idx])
        buf = np.empty((b, cap), dtype=np.uint64)
        fill = 0
        for c0 in range(0, n, c_block):
            c1 = min(c0 + c_block, n)
            k = c1 - c0
            if fill + k > cap:
                buf[:, :r_max] = np.partition(buf[:, :fill], r_max - 1, axis=1)[:, :r_max]
                fill = r_max
            score_block(metric, qmat, matrix, c0, c1, qaux, aux, qvar, out[:b], threads, backend)
            keys = _score_keys(out[:b, :k], c0)
            if not include_query:
                inside = np.flatnonzero((qg >= c0) & (qg < c1))
                if inside.size:
                    keys[inside, qg[inside] - c0] = _SENTINEL
            buf[:, fill : fill + k] = keys
            fill += k
        if fill > r_max:
            buf[:, :r_max] = np.partition(buf[:, :fill], r_max - 1, axis=1)[:, :r_max]
        ranked = np.sort(buf[:, :r_max], axis=1)
        yield s0, s1, (ranked & _LOW32).astype(np.int64)


def top_r(
    embeddings: EmbeddingSet,
    query_index: int,
    R: int,
    threads: int = 1,
    backend: str | None = None,
) -> NeighborList:
    """The R closest candidates to one query, exact, ties by ascending index."""
    n = embeddings.n
    if not (0 <= query_index < n):
        raise ToolkitError(f"query_index {query_index} out of range [0, {n})")
    if not (0 <= R <= n - 1):
        raise ToolkitError(f"R must be in [0, {n - 1}], got {R}")
    if R == 0:
        return NeighborList(query_index=query_index, neighbor_indices=())
    rows = np.asarray([query_index], dtype=np.int64)
    for _, _, ranked in _ranked_neighbors(
        embeddings.matrix,
        embeddings.metric,
        R,
        q_block=1,
        c_block=DEFAULT_CAND_BLOCK,
        query_rows=rows,
        threads=threads,
        backend=backend,
    ):
        return NeighborList(query_index=query_index, neighbor_indices=tuple(ranked[0]))
    raise AssertionError("unreachable")


def blocked_neighbor_pass(
    embeddings: EmbeddingSet,
    r_max: int,
    block_size: int,
    threads: int = 1,
    backend: str | None = None,
) -> list[NeighborList]:
    """Top-r_max neighbors for every query, identical to n calls of top_r.

    Scores are computed in block_size x block_size tiles so peak memory stays
    O(block_size^2) plus the per-query selection buffers.
    """
    n = embeddings.n
    if not (0 <= r_max <= n - 1):
        raise ToolkitError(f"r_max must be in [0, {n - 1}], got {r_max}")
    if block_size < 1:
        raise ToolkitError(f"block_size must be >= 1, got {block_size}")
    if r_max == 0:
        return [NeighborList(query_index=q, neighbor_indices=()) for q in range(n)]
    result: list[NeighborList] = []
    for s0, _, ranked in _ranked_neighbors(
        embeddings.matrix,
        embeddings.metric,
        r_max,
        q_block=block_size,
        c_block=block_size,
        threads=threads,
        backend=backend,
    ):
        for b in range(ranked.shape[0]):
            result.append(
                NeighborList(query_index=s0 + b, neighbor_indices=tuple(ranked[b]))
            )
    return result


@dataclass(frozen=True)
class NrPrecQueryStat:
    """Per-query binomial normalization of the retrieval match count."""

    query_index: int
    R: int
    p: float
    mu: float
    sigma: float
    matches: int
    normalized: float


@dataclass(frozen=True, eq=False)
class NrPrecReport:
    """Normalized R-Precision of one property over all usable queries."""

    property_name: str
    mean_nrprec: float
    mean_rprec: float
    n_queries: int
    n_skipped: int
    query_indices: np.ndarray
    R_values: np.ndarray
    p_values: np.ndarray
    match_counts: np.ndarray
    normalized: np.ndarray

    @property
    def significant(self) -> bool:
        return abs(self.mean_nrprec) > SIGNIFICANCE_THRESHOLD

    @property
    def per_query(self) -> list[NrPrecQueryStat]:
        stats = []
        for i in range(self.n_queries):
            r = int(self.R_values[i])
            p = float(self.p_values[i])
            mu = r * p
            sigma = math.sqrt(r * p * (1.0 - p))
            stats.append(
                NrPrecQueryStat(
                    query_index=int(self.query_indices[i]),
                    R=r,
                    p=p,
                    mu=mu,
                    sigma=sigma,
                    matches=int(self.match_counts[i]),
                    normalized=float(self.normalized[i]),
                )
            )
        return stats


def _label_codes(embeddings: EmbeddingSet, labels) -> tuple[np.ndarray, np.ndarray]:
    """Integer-code a property column aligned with the embedding rows."""
    col = np.asarray([str(v) for v in labels])
    if col.shape[0] != embeddings.n:
        raise ToolkitError(
            f"labels not aligned: {col.shape[0]} values for {embeddings.n} embeddings"
        )
    _, codes = np.unique(col, return_inverse=True)
    codes = codes.astype(np.int64)
    counts = np.bincount(codes)
    return codes, counts[codes]


def _match_counts(
    embeddings: EmbeddingSet,
    codes_list: list[np.ndarray],
    R_list: list[np.ndarray],
    r_needed_list: list[int],
    include_query: bool,
    block_size: int | None,
    threads: int,
    backend: str | None,
) -> list[np.ndarray]:
    """Count same-label items among each query's top R_q, for many properties at once.

    Returns one int64[n] array per property. Entries of queries whose R_q is 0
    (or exceeds that property's r_needed, which can only happen for skipped
    queries) are meaningless and must be masked by the caller.
    """
    n = embeddings.n
    r_global = max(r_needed_list)
    q_block = DEFAULT_QUERY_BLOCK if block_size is None else block_size
    c_block = DEFAULT_CAND_BLOCK if block_size is None else block_size
    matches = [np.zeros(n, dtype=np.int64) for _ in codes_list]
    for s0, s1, ranked in _ranked_neighbors(
        embeddings.matrix,
        embeddings.metric,
        r_global,
        q_block=q_block,
        c_block=c_block,
        include_query=include_query,
        threads=threads,
        backend=backend,
    ):
        for pi, codes in enumerate(codes_list):
            rn = r_needed_list[pi]
            same = codes[ranked[:, :rn]] == codes[s0:s1, None]
            cum = np.cumsum(same, axis=1, dtype=np.int64)
            take = np.clip(R_list[pi][s0:s1], 1, rn) - 1
            matches[pi][s0:s1] = np.take_along_axis(cum, take[:, None], axis=1)[:, 0]
    return matches


def r_precision(
    embeddings: EmbeddingSet,
    labels,
    include_query: bool = False,
    block_size: int | None = None,
    threads: int = 1,
    backend: str | None = None,
) -> tuple[float, list[float]]:
    """Mean fraction of same-label items within each query's top R_q.

    Returns (mean, per_query); skipped queries (label occurs only once) carry
    NaN in per_query and are excluded from the mean.
    """
    codes, cnt = _label_codes(embeddings, labels)
    R = cnt if include_query else cnt - 1
    kept = R >= 1
    if not kept.any():
        raise ToolkitError("property has no repeated values")
    r_needed = int(R[kept].max())
    matches = _match_counts(
        embeddings, [codes], [R], [r_needed], include_query, block_size, threads, backend
    )[0]
    per_query = np.full(embeddings.n, np.nan, dtype=np.float64)
    per_query[kept] = matches[kept] / R[kept]
    mean = float(per_query[kept].mean())
    return mean, per_query.tolist()


def _nr_report(
    name: str,
    n: int,
    codes: np.ndarray,
    R: np.ndarray,
    matches: np.ndarray,
    include_query: bool,
) -> NrPrecReport:
    denom = n if include_query else n - 1
    p = R / denom
    kept = (R >= 1) & (p < 1.0)
    if not kept.any():
        raise ToolkitError(
            f"property {name!r}: every query is degenerate (p is 0 or 1 throughout)"
        )
    qidx = np.flatnonzero(kept).astype(np.int64)
    rk = R[kept].astype(np.int64)
    pk = p[kept]
    mk = matches[kept].astype(np.int64)
    mu = rk * pk
    sigma = np.sqrt(rk * pk * (1.0 - pk))
    normalized = (mk - mu) / sigma
    return NrPrecReport(
        property_name=name,
        mean_nrprec=float(normalized.mean()),
        mean_rprec=float((mk / rk).mean()),
        n_queries=int(kept.sum()),
        n_skipped=int(n - kept.sum()),
        query_indices=qidx,
        R_values=rk,
        p_values=pk,
        match_counts=mk,
        normalized=normalized,
    )


def nr_precision(
    embeddings: EmbeddingSet,
    labels,
    property_name: str = "property",
    include_query: bool = False,
    block_size: int | None = None,
    threads: int = 1,
    backend: str | None = None,
) -> NrPrecReport:
    """Normalized R-Precision of one property column.

    Per query: p = R / (n - 1) with the query excluded everywhere (R counts
    other same-label items); include_query switches to the literal convention
    p = R / n with the query among the candidates. Queries with p of 0 or 1
    are skipped; the property is significant when |mean| > 2.576.
    """
    codes, cnt = _label_codes(embeddings, labels)
    n = embeddings.n
    R = cnt if include_query else cnt - 1
    denom = n if include_query else n - 1
    p = R / denom
    kept = (R >= 1) & (p < 1.0)
    if not kept.any():
        raise ToolkitError(
            f"property {property_name!r}: every query is degenerate (p is 0 or 1 throughout)"
        )
    r_needed = int(R[kept].max())
    matches = _match_counts(
        embeddings, [codes], [R], [r_needed], include_query, block_size, threads, backend
    )[0]
    return _nr_report(property_name, n, codes, R, matches, include_query)


def nr_precision_all(
    embeddings: EmbeddingSet,
    table: PropertyTable,
    include_query: bool = False,
    block_size: int | None = None,
    threads: int = 1,
    backend: str | None = None,
) -> list[NrPrecReport]:
    """One NrPrecReport per property, sharing a single neighbor pass.

    Reports are ordered by descending |mean_nrprec|, the most influential
    property first.
    """
    if tuple(table.ids) != tuple(embeddings.ids):
        check_same_ids(table.ids, embeddings.ids, "PropertyTable vs EmbeddingSet ids")
        table = table.reordered(embeddings.ids)
    names = table.property_names
    if not names:
        raise ToolkitError("property table has no properties")
    n = embeddings.n
    codes_list, R_list, r_needed_list = [], [], []
    for name in names:
        codes, cnt = _label_codes(embeddings, table.column(name))
        R = cnt if include_query else cnt - 1
        denom = n if include_query else n - 1
        kept = (R >= 1) & (R / denom < 1.0)
        if not kept.any():
            raise ToolkitError(
                f"property {name!r}: every query is degenerate (p is 0 or 1 throughout)"
            )
        codes_list.append(codes)
        R_list.append(R)
        r_needed_list.append(int(R[kept].max()))
    matches = _match_counts(
        embeddings,
        codes_list,
        R_list,
        r_needed_list,
        include_query,
        block_size,
        threads,
        backend,
    )
    reports = [
        _nr_report(names[pi], n, codes_list[pi], R_list[pi], matches[pi], include_query)
        for pi in range(len(names))
    ]
    reports.sort(key=lambda rep: -abs(rep.mean_nrprec))
    return reports
