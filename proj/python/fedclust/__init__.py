"""Cluster-contrastive federated clustering (C++ core with numpy bindings)."""

from ._core import (
    ConfigError,
    Error,
    calinski_harabasz,
    gaussian_mixture,
    kappa,
    knn_probe,
    lloyd,
    nmi,
    partition,
    run_experiment,
    run_on_arrays,
    summarize_csv,
)

__all__ = [
    "ConfigError",
    "Error",
    "calinski_harabasz",
    "gaussian_mixture",
    "kappa",
    "knn_probe",
    "lloyd",
    "nmi",
    "partition",
    "run_experiment",
    "run_on_arrays",
    "summarize_csv",
]
