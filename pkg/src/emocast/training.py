"""Staged (spatial then temporal) and phased (curriculum) training, plus
audio/emotion-conditioned generation from a trained model.

Each step: sample a batch under the active phase, corrupt targets with fresh
noise at a random timestep, predict the noise, take one optimizer step.
Everything is driven by named RNG streams, so a run is a pure function of
(seed, manifest, config) and can be resumed bit-exactly from a checkpoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .diffusion import LatentCodec, NoiseSchedule, make_linear_schedule, sample_loop, training_loss
from .manifest import ArrayStore, Manifest
from .model import Conditions, EmoCastModel, build_conditions
from .optim import OptimizerState, optimizer_step
from .rng import Rng
from .sampling import CurriculumConfig, SamplerConfig, batch_sample, progressive_curriculum
from .tensor import Tensor, backward, no_grad


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    stage: str
    steps: int
    curriculum: CurriculumConfig
    batch_size: int = 4
    window: int = 1
    optimizer_mode: str = "adam"
    lr: float = 2e-3
    seed: int = 0
    finetune_spatial: bool = False
    schedule_T: int = 50
    schedule_beta_1: float = 1.5e-3
    schedule_beta_T: float = 0.30

    def __post_init__(self):
        if self.stage not in ("spatial", "temporal"):
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.stage == "spatial" and self.window != 1:
            raise ValueError("the spatial stage trains single frames (window must be 1)")
        if self.curriculum.total_steps < self.steps:
            raise ValueError(
                f"curriculum covers {self.curriculum.total_steps} steps, config asks for {self.steps}"
            )

    def make_schedule(self) -> NoiseSchedule:
        return make_linear_schedule(self.schedule_T, self.schedule_beta_1, self.schedule_beta_T)


@dataclass
class TrainerState:
    """Everything beyond the parameters needed to resume a run exactly."""

    stage: str
    step: int
    optimizer: OptimizerState
    rng_data: Rng
    rng_noise: Rng
    loss_trace: list[float] = field(default_factory=list)

    def rng_state_arrays(self) -> dict[str, np.ndarray]:
        return {"data": self.rng_data.get_state(), "noise": self.rng_noise.get_state()}

    def optimizer_entries(self, trainable_names) -> dict[str, np.ndarray]:
        out = {"step": np.array([self.optimizer.step_count], dtype=np.uint64)}
        if self.optimizer.m is not None:
            for name, m, v in zip(trainable_names, self.optimizer.m, self.optimizer.v):
                out[f"m/{name}"] = m
                out[f"v/{name}"] = v
        return out


def init_trainer_state(cfg: TrainConfig) -> TrainerState:
    root = Rng.from_seed(cfg.seed).split("train")
    return TrainerState(
        stage=cfg.stage,
        step=0,
        optimizer=OptimizerState(mode=cfg.optimizer_mode, lr=cfg.lr),
        rng_data=root.split("data"),
        rng_noise=root.split("noise"),
    )


def restore_trainer_state(cfg: TrainConfig, ckpt_entries: dict, trainable_names) -> TrainerState:
    state = init_trainer_state(cfg)
    state.step = int(ckpt_entries["meta/global_step"][0])
    state.stage = ckpt_entries["meta/stage"].tobytes().decode()
    state.rng_data.set_state(ckpt_entries["rng/data"])
    state.rng_noise.set_state(ckpt_entries["rng/noise"])
    state.optimizer.step_count = int(ckpt_entries["opt/step"][0])
    m_key = f"opt/m/{trainable_names[0]}" if trainable_names else None
    if m_key and m_key in ckpt_entries:
        state.optimizer.m = [np.array(ckpt_entries[f"opt/m/{n}"]) for n in trainable_names]
        state.optimizer.v = [np.array(ckpt_entries[f"opt/v/{n}"]) for n in trainable_names]
    return state


def train(
    model: EmoCastModel,
    manifest: Manifest,
    store: ArrayStore,
    cfg: TrainConfig,
    state: Optional[TrainerState] = None,
    until_step: Optional[int] = None,
) -> TrainerState:
    """Run (or continue) one stage; returns the trainer state with the loss
    trace of the steps executed in this call appended."""
    model.set_stage(cfg.stage, cfg.finetune_spatial)
    trainable = model.trainable()
    params = [p for _, p in trainable]
    if state is None:
        state = init_trainer_state(cfg)
    sched = cfg.make_schedule()
    sampler_cfg = SamplerConfig(curriculum=cfg.curriculum, batch_size=cfg.batch_size, window=cfg.window)
    include_temporal = cfg.stage == "temporal"
    stop = cfg.steps if until_step is None else min(cfg.steps, until_step)
    dt = model.config.np_dtype

    ab = np.concatenate([[1.0], sched.alpha_bar])  # alpha_bar indexed by t

    while state.step < stop:
        pairs = batch_sample(state.step, manifest, store, sampler_cfg, state.rng_data)
        z0 = np.stack([p.target_window for p in pairs]).astype(dt)  # [B,F,C,H,W]
        cond = build_conditions(
            model,
            np.stack([p.reference_frame for p in pairs]).astype(dt),
            [p.e_t_key for p in pairs],
            [p.e_a_window for p in pairs],
        )
        B = z0.shape[0]
        t_arr = state.rng_noise.integers(1, sched.T + 1, size=B)
        eps = state.rng_noise.normal(z0.shape).astype(dt)
        coeff = ab[t_arr].reshape(B, 1, 1, 1, 1)
        z_t = Tensor((np.sqrt(coeff) * z0 + np.sqrt(1.0 - coeff) * eps).astype(dt))
        eps_pred = model.predict_noise_batch(z_t, t_arr, cond, include_temporal)
        loss = training_loss(eps_pred, Tensor(eps))
        loss_val = loss.item()
        if not math.isfinite(loss_val):
            raise TrainingDivergedError(
                f"non-finite loss {loss_val} at step {state.step} (stage {cfg.stage})"
            )
        backward(loss)
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
        optimizer_step(params, grads, state.optimizer)
        for p in params:
            p.grad = None
        state.loss_trace.append(loss_val)
        state.step += 1
    return state


@dataclass
class StagedTrainResult:
    spatial: TrainerState
    temporal: Optional[TrainerState]

    @property
    def loss_trace(self) -> list[float]:
        trace = list(self.spatial.loss_trace)
        if self.temporal is not None:
            trace += self.temporal.loss_trace
        return trace


def default_stage_configs(
    total_steps: int,
    seed: int = 0,
    batch_size: int = 4,
    window: int = 8,
    lr: float = 2e-3,
    progressive: bool = True,
    sampling_mode: str = "emotion_aware",
    spatial_fraction: float = 0.7,
    schedule=(50, 1.5e-3, 0.30),
) -> tuple[TrainConfig, TrainConfig]:
    """The staged + phased recipe: spatial steps first, temporal steps after,
    each stage running the three-phase curriculum (or one mixed phase)."""
    from .sampling import single_phase_curriculum

    spatial_steps = int(round(total_steps * spatial_fraction))
    temporal_steps = total_steps - spatial_steps
    T, b1, bT = schedule

    def curriculum(steps: int) -> CurriculumConfig:
        if progressive:
            return progressive_curriculum(steps, sampler_mode=sampling_mode)
        return single_phase_curriculum(steps, sampler_mode=sampling_mode)

    spatial = TrainConfig(
        stage="spatial",
        steps=spatial_steps,
        curriculum=curriculum(spatial_steps),
        batch_size=batch_size,
        window=1,
        lr=lr,
        seed=seed,
        schedule_T=T,
        schedule_beta_1=b1,
        schedule_beta_T=bT,
    )
    temporal = TrainConfig(
        stage="temporal",
        steps=temporal_steps,
        curriculum=curriculum(temporal_steps),
        batch_size=batch_size,
        window=window,
        lr=lr,
        seed=seed + 1,
        schedule_T=T,
        schedule_beta_1=b1,
        schedule_beta_T=bT,
    )
    return spatial, temporal


def run_staged_training(
    model: EmoCastModel,
    manifest: Manifest,
    store: ArrayStore,
    spatial_cfg: TrainConfig,
    temporal_cfg: Optional[TrainConfig],
) -> StagedTrainResult:
    spatial_state = train(model, manifest, store, spatial_cfg)
    temporal_state = None
    if temporal_cfg is not None and temporal_cfg.steps > 0:
        temporal_state = train(model, manifest, store, temporal_cfg)
    return StagedTrainResult(spatial=spatial_state, temporal=temporal_state)


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def generate(
    model: EmoCastModel,
    reference_frame: np.ndarray,
    audio_features: np.ndarray,
    emotion: str,
    intensity: float,
    seed: int,
    frames: Optional[int] = None,
    sampler: str = "ddim",
    steps: int = 25,
    eta: float = 0.0,
    schedule=(50, 1.5e-3, 0.30),
    codec: Optional[LatentCodec] = None,
    include_temporal: bool = True,
) -> np.ndarray:
    """Emotion- and audio-conditioned frame window from a reference image.

    audio_features is [n, d_audio] with n >= frames; the first `frames` rows
    drive the window.
    """
    cfg = model.config
    F = cfg.frames if frames is None else frames
    audio_features = np.asarray(audio_features, dtype=cfg.np_dtype)
    if audio_features.ndim != 2 or audio_features.shape[0] < F:
        raise ValueError(
            f"audio features must be [n>={F}, {cfg.audio_dim}], got {audio_features.shape}"
        )
    sched = make_linear_schedule(*schedule)
    with no_grad():
        cond = build_conditions(
            model,
            np.asarray(reference_frame, dtype=cfg.np_dtype)[None],
            [(emotion, float(intensity))],
            [audio_features[:F]],
        )

        def model_fn(z, t):
            return model.predict_noise_batch(z, np.array([t]), cond, include_temporal)

        shape = (1, F, cfg.channels_world, cfg.grid[0], cfg.grid[1])
        out = sample_loop(
            model_fn, shape, sched, sampler=sampler, steps=steps, seed=seed, eta=eta,
            codec=codec, dtype=cfg.np_dtype,
        )
    return out[0]
