"""Protocol analyses: efficiency, consistency, bit structure, projections, grounding."""

from .bits import (
    FLIP_SPECS,
    BitProfile,
    PerturbationResult,
    classify_bits,
    flip_pool,
    perturb_and_eval,
)
from .consistency import (
    CrossConsistency,
    SimilarityMatrix,
    class_consistency,
    cosine_similarity,
    cross_consistency,
    within_between_gap,
)
from .efficiency import (
    EFFICIENCY_COLUMNS,
    MODALITY_PAIRS,
    EfficiencyRow,
    evaluate_system,
    length_sweep,
    pair_source,
    write_efficiency_csv,
)
from .grounding import (
    AMP_BINS,
    FREQ_BANDS,
    GroundingFactor,
    GroundingReport,
    constrained_audio_messages,
    grounding_experiment,
)
from .messages import MessageSet, collect_messages, sender_messages
from .projection import (
    ProjectionResult,
    cluster_separation,
    pca_project_2d,
    permutation_null,
    tsne_project,
)

__all__ = [
    "AMP_BINS",
    "BitProfile",
    "CrossConsistency",
    "EFFICIENCY_COLUMNS",
    "EfficiencyRow",
    "FLIP_SPECS",
    "FREQ_BANDS",
    "GroundingFactor",
    "GroundingReport",
    "MODALITY_PAIRS",
    "MessageSet",
    "PerturbationResult",
    "ProjectionResult",
    "SimilarityMatrix",
    "class_consistency",
    "classify_bits",
    "cluster_separation",
    "collect_messages",
    "constrained_audio_messages",
    "cosine_similarity",
    "cross_consistency",
    "evaluate_system",
    "flip_pool",
    "grounding_experiment",
    "length_sweep",
    "pair_source",
    "pca_project_2d",
    "permutation_null",
    "perturb_and_eval",
    "sender_messages",
    "tsne_project",
    "within_between_gap",
    "write_efficiency_csv",
]
