"""Order-enhanced contrastive learning on synthetic ordinal data.

Feature spaces are shaped so that the direction between two samples'
embeddings mirrors the direction between their labels' proxies along a
learned ordinal chain. The package bundles a small reverse-mode autodiff
engine, the objective stack, proxy banks, synthetic data, training
pipelines for age estimation and age-invariant identity recognition, and
evaluation plus a CLI around them.
"""

from .autodiff import GradMap, Tape, Tensor, cosine_sim, dot, grad_check, grad_reverse, l2_normalize
from .checkpoints import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, default_config_dict, load_config, resolve_config
from .encoder import EncoderParams, EncoderSpec, RegressionHead, forward, init_encoder, init_head, predict_age
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DivisionByZeroError,
    DomainError,
    LabelRangeError,
    MissingGradientError,
    NearZeroNormError,
    NumericalError,
    OrdconError,
    RelationError,
    ShapeMismatchError,
)
from .evaluation import (
    Metrics,
    age_probe_accuracy,
    evaluate,
    export_features,
    export_metrics,
    mae,
    order_consistency,
    pca_project,
    rank1_accuracy,
    split_gallery_probe,
)
from .gradcheck import CheckResult, run_check, run_suite
from .losses import (
    LabeledBatch,
    LossConfig,
    ablation_config,
    age_l1_loss,
    contrast_loss,
    grl_strength,
    identity_contrastive_loss,
    metric_loss,
    order_loss,
    progressive_loss,
    proxy_match_term,
    regressive_loss,
    soft_negative_weight,
)
from .proxies import AgeGroupScheme, ProxyBank, Relation, init_proxies, proxy_direction, reference_directions
from .seeding import derive_rng, derive_seed
from .synth import Batch, Dataset, Sample, SyntheticSpec, Warp, generate, load_csv, sample_batch, save_csv, synth_across_groups
from .training import (
    SgdState,
    TrainConfig,
    finetune_age,
    finetune_identity,
    pretrain_age,
    reversal_strength_at,
    sgd_step,
    train_aifr,
)

__version__ = "0.1.0"
