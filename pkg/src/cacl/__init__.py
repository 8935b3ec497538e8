"""Community-aware hard-sample mining with supervised graph contrastive learning for bot detection."""

from .pipeline import MetricsReport, Model, TrainConfig, evaluate, train
from .synth import SynthSpec, generate_synth

__all__ = ["MetricsReport", "Model", "SynthSpec", "TrainConfig", "evaluate", "generate_synth", "train"]
__version__ = "0.1.0"
