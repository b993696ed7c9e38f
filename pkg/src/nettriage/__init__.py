"""Rank the blocks of a small convolutional classifier by compressing
each one to a single layer, re-initializing it, retraining under frozen
or thawed regimes, and measuring what recovers.
"""

__version__ = "1.0.0"

from .errors import NetTriageError
from .model import (TAP_POST_POOL, TAP_POST_RELU, BlockSpec, ModelSpec,
                    Network, build, mini_vgg_spec)
from .triage import (ExperimentResult, SuiteSettings, TriageConfig,
                     init_mean_parent, init_random, init_stn,
                     run_triage_suite, structural_compress, train_compressed)

__all__ = [
    "__version__",
    "NetTriageError",
    "TAP_POST_POOL", "TAP_POST_RELU",
    "BlockSpec", "ModelSpec", "Network", "build", "mini_vgg_spec",
    "ExperimentResult", "SuiteSettings", "TriageConfig",
    "init_mean_parent", "init_random", "init_stn",
    "run_triage_suite", "structural_compress", "train_compressed",
]
