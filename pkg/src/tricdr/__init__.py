"""Tri-domain cross-domain sequential recommendation on a small numpy autodiff core."""

from .config import RunConfig, TrainConfig
from .corpus import Corpus, SynthConfig, generate_synthetic, prepare_corpus
from .metrics import MetricsReport, evaluate_model
from .model import TriCDR, load_checkpoint, save_checkpoint
from .trainer import fit

__all__ = ["RunConfig", "TrainConfig", "Corpus", "SynthConfig", "generate_synthetic", "prepare_corpus",
           "MetricsReport", "evaluate_model", "TriCDR", "load_checkpoint", "save_checkpoint", "fit"]
__version__ = "0.1.0"
