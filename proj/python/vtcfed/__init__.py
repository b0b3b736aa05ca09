"""Federated learning with a variational transposed-convolution decoder.

Thin Python surface over the C++ core: the loss/sampling primitives, the
Dirichlet partitioner, synthetic-sample generation and the full experiment
runner.
"""

from ._core import (
    SIGMA_FLOOR,
    classification_loss,
    dirichlet_partition,
    dm_loss,
    generate_synthetic,
    kl_gaussian,
    reconstruction_loss,
    reparameterize,
    run_experiment,
    run_experiment_file,
)

__all__ = [
    "SIGMA_FLOOR",
    "classification_loss",
    "dirichlet_partition",
    "dm_loss",
    "generate_synthetic",
    "kl_gaussian",
    "reconstruction_loss",
    "reparameterize",
    "run_experiment",
    "run_experiment_file",
]
