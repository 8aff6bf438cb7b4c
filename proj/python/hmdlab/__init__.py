"""Hardware malware detector lab: detectors, FGSM-style counter injection and
moving target defense over hardware performance counters."""

from ._core import (
    COUNTERS,
    Classifier,
    Dataset,
    HmdlabError,
    Lfsr,
    __version__,
    attack_dataset,
    chi2_scores,
    classify_stream,
    combinatorics_report,
    compute_metrics,
    correlation_matrix,
    figures,
    importance_scores,
    plot_data,
    propose_groups,
    recipes,
    resolve_config,
    reverse_engineer,
    run,
    total_classifiers,
    total_combinations,
)

__all__ = [
    "COUNTERS",
    "Classifier",
    "Dataset",
    "HmdlabError",
    "Lfsr",
    "__version__",
    "attack_dataset",
    "chi2_scores",
    "classify_stream",
    "combinatorics_report",
    "compute_metrics",
    "correlation_matrix",
    "figures",
    "importance_scores",
    "plot_data",
    "propose_groups",
    "recipes",
    "resolve_config",
    "reverse_engineer",
    "run",
    "total_classifiers",
    "total_combinations",
]
