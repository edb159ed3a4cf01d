"""Desk-scale exemplar-based image editing with a conditional diffusion model."""

from .augment import AugmentationPolicy, augment_reference, identity_policy
from .datasets import (
    AnnotatedImage,
    TrainingSample,
    generate_toy_dataset,
    load_annotations,
    make_training_sample,
    save_dataset,
)
from .denoiser import Denoiser, DenoiserConfig, init_denoiser, predict_noise
from .diffusion import NoiseSchedule, build_schedule, forward_noise, training_loss
from .encoder import (
    Adapter,
    ConditionTokens,
    EncoderPretrainConfig,
    NullCondition,
    ToyImageEncoder,
    adapt,
    encode_reference,
    init_adapter,
    init_null_condition,
    null_tokens,
    pretrain_encoder,
)
from .masks import BBox, box_mask, distort_mask
from .metrics import (
    FeatureSet,
    MetricsReport,
    evaluate_benchmark,
    extract_features,
    fid,
    quality_score,
    similarity_score,
)
from .sampling import GuidanceConfig, denoise_step, edit_image, guided_noise_prediction
from .training import (
    EditModel,
    TrainConfig,
    TrainState,
    ema_update,
    init_train_state,
    load_checkpoint,
    load_edit_model,
    preset_config,
    pretrain_prior,
    run_training,
    save_checkpoint,
    to_edit_model,
    train_step,
)

__version__ = "0.1.0"
