"""Stage graph from raw CLIF tables to report bundles."""

from .config import DEFAULTS, ConfigError, RunConfig
from .manifest import Manifest, MissingArtifactError, StaleArtifactError, hash_path
from .stages import (
    STAGE_NAMES,
    STAGES,
    LeakageError,
    lr_urt_train,
    report_hashes,
    run_experiment,
    run_stage,
)

__all__ = [
    "DEFAULTS",
    "ConfigError",
    "RunConfig",
    "Manifest",
    "MissingArtifactError",
    "StaleArtifactError",
    "hash_path",
    "STAGE_NAMES",
    "STAGES",
    "LeakageError",
    "lr_urt_train",
    "report_hashes",
    "run_experiment",
    "run_stage",
]
