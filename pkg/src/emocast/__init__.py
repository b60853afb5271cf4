"""Desk-scale emotional talking-head diffusion on a synthetic face world."""

from .rng import Rng
from .tensor import (
    ShapeError,
    Tape,
    Tensor,
    add,
    as_tensor,
    avg_pool2,
    backward,
    concat,
    conv2d,
    index_rows,
    log_softmax,
    mask_apply,
    matmul,
    mse_loss,
    mul,
    no_grad,
    ones,
    reshape,
    scale,
    silu,
    softmax,
    sub,
    tmean,
    transpose,
    tsum,
    upsample2,
    zeros,
)
from .optim import OptimizerState, optimizer_step
from .diffusion import (
    LatentCodec,
    NoiseSchedule,
    ddim_step,
    ddpm_step,
    make_linear_schedule,
    q_sample,
    sample_loop,
    training_loss,
)
from .manifest import (
    EMOTIONS,
    SOURCE_TAGS,
    ArrayStore,
    ClipRecord,
    Manifest,
    ManifestError,
    SyntheticAnnotator,
    annotate,
    lip_sync_filter,
    load_manifest,
    save_manifest,
)
from .world import SyntheticWorld, SyntheticWorldConfig, build_dataset, synth_generate
from .sampling import (
    CurriculumConfig,
    NoNeutralReferenceError,
    Phase,
    SamplerConfig,
    TrainingPair,
    batch_sample,
    curriculum_phase,
    emotion_aware_sample,
    progressive_curriculum,
    single_phase_curriculum,
)
from .attention import (
    CrossAttentionParams,
    DecoupledEmotiveParams,
    EmbeddingBank,
    EmotiveAudioParams,
    RegionMasks,
    cross_attention,
    decoupled_emotive_attention,
    emotive_audio_feature,
    reference_inject,
    region_audio_attention,
    temporal_attention,
)
from .model import ArchConfig, Conditions, EmoCastModel, build_conditions, build_model, predict_noise
from .training import (
    StagedTrainResult,
    TrainConfig,
    TrainerState,
    TrainingDivergedError,
    default_stage_configs,
    generate,
    run_staged_training,
    train,
)
from .checkpoint import (
    Checkpoint,
    CheckpointChecksumError,
    CheckpointError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    load_checkpoint,
    load_model,
    restore_model,
    save_checkpoint,
)

__version__ = "0.1.0"
