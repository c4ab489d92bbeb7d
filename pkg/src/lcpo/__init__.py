"""EM denoising of pairwise preference data with latent annotator reliabilities."""

from .losses import LossKind, LossSpec, ScorePair, loss_forward, loss_reverse, pref_probability
from .score_model import Features, OptimizerConfig, PolicyParams
from .em import AnnotatorTable, EmConfig, UpdateMode, run_lcpo
from .synth import GeneratorSpec, PStarLaw, generate, inject_noise

__all__ = [
    "AnnotatorTable",
    "EmConfig",
    "Features",
    "GeneratorSpec",
    "LossKind",
    "LossSpec",
    "OptimizerConfig",
    "PStarLaw",
    "PolicyParams",
    "ScorePair",
    "UpdateMode",
    "generate",
    "inject_noise",
    "loss_forward",
    "loss_reverse",
    "pref_probability",
    "run_lcpo",
]
