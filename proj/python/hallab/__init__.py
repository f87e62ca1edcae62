"""Hallucination lab: toy spherical regression, detectors and dataset generators."""

from ._core import (
    ArticleIndex,
    FitModel,
    auroc,
    cap_measure,
    confidence_scores,
    consensus,
    cross_matrix,
    evaluate_traces,
    fill_distance,
    fit_krr,
    gram,
    kernel_gd_predict,
    make_dataset,
    run,
    sample_uniform_sphere,
    separation_distance,
    sweep,
    tpr_at_fpr,
)

__all__ = [
    "ArticleIndex",
    "FitModel",
    "auroc",
    "cap_measure",
    "confidence_scores",
    "consensus",
    "cross_matrix",
    "evaluate_traces",
    "fill_distance",
    "fit_krr",
    "gram",
    "kernel_gd_predict",
    "make_dataset",
    "run",
    "sample_uniform_sphere",
    "separation_distance",
    "sweep",
    "tpr_at_fpr",
]


def kernel(variant, **params):
    """Kernel description accepted by gram, fit_krr and friends."""
    return {"variant": variant, "params": params}
