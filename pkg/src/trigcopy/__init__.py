"""One-step training of a single attention layer on a trigger-output copying task.

Modules: ``datagen`` (sequences), ``model`` (forward pass), ``trainer`` (the
two-stage one-step update), ``oracle`` (population-limit weights and OOD
certification), ``diversity`` (max-sum ratio and the pretraining LP),
``evalkit`` (metrics, mechanism probe, heatmaps), ``cli``.
"""

__version__ = "0.1.0"

from .datagen import LengthDistribution, SamplerConfig, TokenSequence
from .model import ModelParams
from .trainer import TrainConfig, run_algorithm1

__all__ = [
    "LengthDistribution",
    "ModelParams",
    "SamplerConfig",
    "TokenSequence",
    "TrainConfig",
    "run_algorithm1",
    "__version__",
]
