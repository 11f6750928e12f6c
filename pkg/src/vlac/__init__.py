"""Compact video-segment descriptors via two-stage feature aggregation.

Trains VLAD, VLAC and hyper-pooling encoders over per-frame local feature
vectors, compacts groups of frames to low-dimensional descriptors, matches
segments by max-over-alignment inner products, and evaluates retrieval
quality with precision-recall curves and mAP.
"""

from .aggregation import (
    CompactDescriptor,
    FrameFeatures,
    GroupOfFrames,
    METHOD_HP,
    METHOD_VLAC,
    METHOD_VLAD,
    ModelParams,
    RawDescriptor,
    TrainedModel,
    compute_lfcs,
    encode_video,
    fit_clfcs,
    hp_encode,
    load_model,
    save_model,
    split_gofs,
    train_hp,
    train_vlac,
    train_vlad,
    vlac_encode,
    vlad_encode,
)
from .core_math import (
    Codebook,
    ProjectionBasis,
    basis_alignment_score,
    kmeans_fit,
    pca_fit,
    pca_project,
    pca_reconstruct,
    quantize,
)
from .errors import DataError, NumericError, VlacError
from .evaluation import (
    GroundTruth,
    PRCurve,
    PRPoint,
    average_precision,
    map_from_retrievals,
    mean_average_precision,
    pr_curve,
    sign_aligned_alignment_score,
    stability_experiment,
)
from .ingestion import (
    DatasetManifest,
    PerturbationSpec,
    QueryManifest,
    load_features,
    load_manifest,
    load_query_manifest,
    make_queries,
    perturb,
    perturb_videos,
    synthesize_dataset,
    synthesize_videos,
    write_features,
)
from .search import (
    DescriptorSequence,
    RankedMatch,
    RetrievalResult,
    aligned_similarity,
    load_store,
    retrieve,
    sequence_from_descriptors,
    similarity,
    write_store,
)

__version__ = "0.1.0"
