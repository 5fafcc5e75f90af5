"""dmlscope: feature analysis for deep metric learning models.

Post-processes and compares gradient-based saliency maps across models, and
measures how strongly image properties influence embeddings via R-Precision
and Normalized R-Precision with significance testing, backed by an exact
blocked nearest-neighbor pass.
"""

from .data import (
    EmbeddingSet,
    GradientStack,
    MetricKind,
    PropertyTable,
    SaliencyMap,
    check_same_ids,
    check_tensor,
)
from .errors import (
    CorruptTensorError,
    DegenerateMapError,
    IdMismatchError,
    NonFiniteDataError,
    ToolkitError,
)
from .kernels import available_backends, default_backend
from .metrics import (
    SIGNIFICANCE_THRESHOLD,
    NeighborList,
    NrPrecQueryStat,
    NrPrecReport,
    blocked_neighbor_pass,
    nr_precision,
    nr_precision_all,
    pairwise_score,
    r_precision,
    top_r,
)
from .saliency import (
    ComparisonCell,
    ComparisonMatrix,
    compare_models,
    fisher_z,
    inv_fisher_z,
    jsd,
    mean_correlation,
    pearson,
    postprocess,
    smoothgrad_mean,
)
from .stats import MwuResult, mann_whitney_u, population_std
from .synth import (
    Manifest,
    emit_render_jobs,
    grid_cardinalities,
    grid_combination_count,
    property_grid,
    sample_manifest,
    synth_embed,
)
from .tensorio import (
    load_embedding_set,
    read_property_table,
    read_tensor,
    save_embedding_set,
    write_property_table,
    write_tensor,
)

__version__ = "0.1.0"

__all__ = [
    "EmbeddingSet",
    "GradientStack",
    "MetricKind",
    "PropertyTable",
    "SaliencyMap",
    "check_same_ids",
    "check_tensor",
    "ToolkitError",
    "CorruptTensorError",
    "DegenerateMapError",
    "IdMismatchError",
    "NonFiniteDataError",
    "available_backends",
    "default_backend",
    "SIGNIFICANCE_THRESHOLD",
    "NeighborList",
    "NrPrecQueryStat",
    "NrPrecReport",
    "blocked_neighbor_pass",
    "nr_precision",
    "nr_precision_all",
    "pairwise_score",
    "r_precision",
    "top_r",
    "ComparisonCell",
    "ComparisonMatrix",
    "compare_models",
    "fisher_z",
    "inv_fisher_z",
    "jsd",
    "mean_correlation",
    "pearson",
    "postprocess",
    "smoothgrad_mean",
    "MwuResult",
    "mann_whitney_u",
    "population_std",
    "Manifest",
    "emit_render_jobs",
    "grid_cardinalities",
    "grid_combination_count",
    "property_grid",
    "sample_manifest",
    "synth_embed",
    "read_tensor",
    "write_tensor",
    "read_property_table",
    "write_property_table",
    "load_embedding_set",
    "save_embedding_set",
    "__version__",
]
