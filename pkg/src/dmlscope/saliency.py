"""Saliency pipeline: SmoothGrad averaging, post-processing and model comparison.

Post-processing applies, in this exact order: absolute value, mean over the
channel axis, clipping above the 99th percentile (nearest-rank), then an
affine min-max rescale to [0, 1]. Model pairs are compared per image with
Pearson correlation (averaged in Fisher-Z space) and Jensen-Shannon
Divergence under a base-2 logarithm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import GradientStack, SaliencyMap, check_tensor
from .errors import DegenerateMapError, IdMismatchError, ToolkitError
from .stats import population_std

FISHER_EPS = 1e-7


def smoothgrad_mean(stack: GradientStack) -> np.ndarray:
    """Mean over the sample axis of an [l, H, W, C] gradient stack."""
    return stack.samples.mean(axis=0, dtype=np.float64).astype(np.float32)


def _nearest_rank_p99(flat: np.ndarray) -> float:
    # 1-based nearest-rank index ceil(0.99 * N), in exact integer arithmetic
    n = flat.size
    idx = (99 * n + 99) // 100
    return float(np.partition(flat, idx - 1)[idx - 1])


def postprocess(raw, image_id: str = "") -> SaliencyMap:
    """Turn a raw [H, W, C] gradient tensor into a SaliencyMap.

    Steps: abs, channel mean, clip above the nearest-rank 99th percentile,
    min-max rescale. A constant map after clipping becomes all zeros.
    """
    arr = check_tensor(raw, "postprocess", ndim=3)
    grid = np.abs(arr, dtype=np.float64).mean(axis=2)
    p99 = _nearest_rank_p99(grid.ravel())
    grid = np.minimum(grid, p99)
    lo = float(grid.min())
    hi = float(grid.max())
    if hi == lo:
        scaled = np.zeros_like(grid)
    else:
        scaled = (grid - lo) / (hi - lo)
    return SaliencyMap(image_id=image_id, values=scaled.astype(np.float32))


def _flat_values(m) -> np.ndarray:
    values = m.values if isinstance(m, SaliencyMap) else np.asarray(m)
    return np.asarray(values, dtype=np.float64).ravel()


def pearson(a, b) -> float:
    """Pearson r over the flattened pixel vectors. Maps must be non-constant."""
    va, vb = _flat_values(a), _flat_values(b)
    if va.shape != vb.shape:
        raise ToolkitError(f"pearson: shape mismatch {va.size} vs {vb.size}")
    ca = va - va.mean()
    cb = vb - vb.mean()
    # one sqrt of the product keeps perfectly dependent inputs at exactly +-1
    denom = math.sqrt(float(ca @ ca) * float(cb @ cb))
    if denom == 0.0:
        raise DegenerateMapError("degenerate map: zero variance, correlation undefined")
    r = float(ca @ cb) / denom
    return min(1.0, max(-1.0, r))


def fisher_z(r: float) -> float:
    """atanh with the argument clamped to ±(1 − 1e-7) so ±1 stays finite."""
    return math.atanh(min(1.0 - FISHER_EPS, max(-1.0 + FISHER_EPS, r)))


def inv_fisher_z(z: float) -> float:
    return math.tanh(z)


def mean_correlation(rs) -> float:
    """Mean of correlations taken in Fisher-Z space, mapped back through tanh."""
    rs = list(rs)
    if not rs:
        raise ToolkitError("mean_correlation of empty list")
    return inv_fisher_z(sum(fisher_z(r) for r in rs) / len(rs))


def jsd(a, b) -> float:
    """Jensen-Shannon Divergence between sum-normalized maps, base-2 log."""
    va, vb = _flat_values(a), _flat_values(b)
    if va.shape != vb.shape:
        raise ToolkitError(f"jsd: shape mismatch {va.size} vs {vb.size}")
    if (va < 0).any() or (vb < 0).any():
        raise ToolkitError("jsd: negative values cannot form a distribution")
    sa, sb = float(va.sum()), float(vb.sum())
    if sa <= 0.0 or sb <= 0.0:
        raise DegenerateMapError("degenerate map: zero sum, cannot normalize")
    p = va / sa
    q = vb / sb
    m = 0.5 * (p + q)
    # 0·log(0) = 0; m > 0 wherever p > 0 or q > 0
    pk = p > 0
    qk = q > 0
    kl_pm = float(np.sum(p[pk] * np.log2(p[pk] / m[pk])))
    kl_qm = float(np.sum(q[qk] * np.log2(q[qk] / m[qk])))
    return min(1.0, max(0.0, 0.5 * kl_pm + 0.5 * kl_qm))


def _is_degenerate(m: SaliencyMap) -> bool:
    v = m.values
    return float(v.min()) == float(v.max())


@dataclass(frozen=True)
class ComparisonCell:
    mean_correlation: float
    std_correlation: float
    mean_jsd: float
    std_jsd: float
    n_images: int
    n_skipped: int = 0

    def __post_init__(self):
        if self.n_images < 0 or self.n_skipped < 0:
            raise ToolkitError("ComparisonCell: negative counts")
        if self.n_images == 0 and not math.isnan(self.mean_correlation):
            raise ToolkitError("ComparisonCell: statistics without images")


@dataclass(frozen=True)
class ComparisonMatrix:
    model_names: tuple
    cells: dict = field(default_factory=dict)  # (i, j) with i < j -> ComparisonCell

    def _index(self, model) -> int:
        if isinstance(model, str):
            try:
                return self.model_names.index(model)
            except ValueError:
                raise ToolkitError(f"unknown model {model!r}") from None
        return int(model)

    def cell(self, a, b) -> ComparisonCell:
        i, j = self._index(a), self._index(b)
        if i == j:
            raise ToolkitError("comparison matrix diagonal is empty")
        return self.cells[(min(i, j), max(i, j))]

    def pairs(self):
        """Yield (model_a, model_b, cell) for every unordered pair, row-major."""
        for i in range(len(self.model_names)):
            for j in range(i + 1, len(self.model_names)):
                yield self.model_names[i], self.model_names[j], self.cells[(i, j)]


def _ordered_maps(name: str, maps, ref_ids) -> list:
    by_id = {}
    for m in maps:
        if m.image_id in by_id:
            raise ToolkitError(f"model {name!r}: duplicate image id {m.image_id!r}")
        by_id[m.image_id] = m
    if ref_ids is None:
        return list(maps)
    got = set(by_id)
    want = set(ref_ids)
    if got != want:
        diff = sorted(got.symmetric_difference(want))
        shown = ", ".join(diff[:20])
        more = "" if len(diff) <= 20 else f" (+{len(diff) - 20} more)"
        raise IdMismatchError(f"model {name!r}: image id mismatch: {shown}{more}")
    return [by_id[i] for i in ref_ids]


def compare_models(maps_by_model) -> ComparisonMatrix:
    """Pairwise model comparison over a shared ordered image set.

    Every model must cover the same image ids; maps are aligned to the first
    model's order. Images degenerate (constant map) for either model of a pair
    are skipped for that pair and counted in the cell's n_skipped.
    """
    names = tuple(maps_by_model.keys())
    if len(names) < 2:
        raise ToolkitError("compare_models needs at least two models")
    ref = _ordered_maps(names[0], maps_by_model[names[0]], None)
    if not ref:
        raise ToolkitError("compare_models: no images supplied")
    ref_ids = [m.image_id for m in ref]
    if len(set(ref_ids)) != len(ref_ids):
        raise ToolkitError(f"model {names[0]!r}: duplicate image ids")
    aligned = {names[0]: ref}
    for name in names[1:]:
        aligned[name] = _ordered_maps(name, maps_by_model[name], ref_ids)

    cells = {}
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            rs: list[float] = []
            js: list[float] = []
            skipped = 0
            # accumulate in image-index order so results never depend on scheduling
            for ma, mb in zip(aligned[names[i]], aligned[names[j]]):
                if _is_degenerate(ma) or _is_degenerate(mb):
                    skipped += 1
                    continue
                rs.append(pearson(ma, mb))
                js.append(jsd(ma, mb))
            if rs:
                cell = ComparisonCell(
                    mean_correlation=mean_correlation(rs),
                    std_correlation=population_std(rs),
                    mean_jsd=float(np.mean(js)),
                    std_jsd=population_std(js),
                    n_images=len(rs),
                    n_skipped=skipped,
                )
            else:
                nan = float("nan")
                cell = ComparisonCell(nan, nan, nan, nan, n_images=0, n_skipped=skipped)
            cells[(i, j)] = cell
    return ComparisonMatrix(model_names=names, cells=cells)
