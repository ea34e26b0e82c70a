"""Study pipelines, figures and the ``qd-reach`` command line."""
from .experiments import (
    EXPERIMENT_KINDS,
    ExperimentSpec,
    gap_crossing,
    qd_vs_random,
    random_validity,
    reach_study,
    repertoire_update,
    sample_targets,
)

__all__ = [
    "EXPERIMENT_KINDS",
    "ExperimentSpec",
    "gap_crossing",
    "qd_vs_random",
    "random_validity",
    "reach_study",
    "repertoire_update",
    "sample_targets",
]
