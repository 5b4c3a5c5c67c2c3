"""Rotation-based perturbation (single and multiple rotations) for
privacy-preserving clustering, the AK-ICA reconstruction attack, and the
evaluation harness that measures one against the other."""

from .attack import (
    Alignment,
    AttackReport,
    DivergenceConfig,
    IcaResult,
    KdeModel,
    ak_ica_attack,
    align_components,
    density_divergence,
    fast_ica,
    kde_fit,
    reconstruction_accuracy,
    rescale_to_bounds,
    whiten,
)
from .evaluate import (
    ClusteringResult,
    SweepCell,
    cluster_agreement,
    kmeans,
    run_application3,
    run_experiment1,
    run_figure1_sweep,
)
from .linalg import frobenius_norm, mat_mul, qr_decompose, random_orthogonal, sym_eig
from .transform import (
    Dataset,
    Partitioning,
    PerturbationKey,
    corresponding_distances,
    difference_covariance,
    distance_from_inner,
    inner_product_block,
    invert,
    make_key,
    make_partitioning,
    normalize_to_unit,
    perturb,
)

__all__ = [
    "Alignment",
    "AttackReport",
    "ClusteringResult",
    "Dataset",
    "DivergenceConfig",
    "IcaResult",
    "KdeModel",
    "Partitioning",
    "PerturbationKey",
    "SweepCell",
    "ak_ica_attack",
    "align_components",
    "cluster_agreement",
    "corresponding_distances",
    "density_divergence",
    "difference_covariance",
    "distance_from_inner",
    "fast_ica",
    "frobenius_norm",
    "inner_product_block",
    "invert",
    "kde_fit",
    "kmeans",
    "make_key",
    "make_partitioning",
    "mat_mul",
    "normalize_to_unit",
    "perturb",
    "qr_decompose",
    "random_orthogonal",
    "reconstruction_accuracy",
    "rescale_to_bounds",
    "run_application3",
    "run_experiment1",
    "run_figure1_sweep",
    "sym_eig",
    "whiten",
]

__version__ = "0.1.0"
