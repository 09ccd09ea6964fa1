"""Edge-guided, contrastively aligned text-to-image diffusion on a
synthetic shapes corpus. Small enough to train on a CPU in minutes,
deterministic enough to diff checkpoints byte for byte.
"""

from .config import Config, ConfigError, load_config
from .corpus import CorpusManifest, CorpusRecord, generate_corpus, load_arrays, load_manifest
from .diffusion import (
    Denoiser,
    DiffusionState,
    NoiseSchedule,
    build_schedule,
    forward_noise,
    predict_x0,
    reverse_step,
    sample,
)
from .encoders import (
    ImageEncoder,
    SemanticEncoder,
    TextEncoder,
    encode_image,
    encode_text,
    pretrain_semantic_encoder,
    semantic_features,
    structure_features,
)
from .losses import (
    ContrastiveConfig,
    LossReport,
    LossWeights,
    clip_loss,
    cosine_sim,
    sem_loss,
    struct_loss,
    total_loss,
)
from .metrics import FeatureStats, MetricReport, clip_score, evaluate, feature_stats, frechet_distance, ssim
from .training import Models, build_models, gradcheck, load_checkpoint, train, train_step

__version__ = "0.1.0"

__all__ = [
    "Config", "ConfigError", "load_config",
    "CorpusManifest", "CorpusRecord", "generate_corpus", "load_arrays", "load_manifest",
    "Denoiser", "DiffusionState", "NoiseSchedule", "build_schedule",
    "forward_noise", "predict_x0", "reverse_step", "sample",
    "ImageEncoder", "SemanticEncoder", "TextEncoder",
    "encode_image", "encode_text", "pretrain_semantic_encoder",
    "semantic_features", "structure_features",
    "ContrastiveConfig", "LossReport", "LossWeights",
    "clip_loss", "cosine_sim", "sem_loss", "struct_loss", "total_loss",
    "FeatureStats", "MetricReport", "clip_score", "evaluate", "feature_stats",
    "frechet_distance", "ssim",
    "Models", "build_models", "gradcheck", "load_checkpoint", "train", "train_step",
    "__version__",
]
