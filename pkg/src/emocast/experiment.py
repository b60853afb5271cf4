"""End-to-end experiment orchestration: world -> staged training -> report.

One `ExperimentConfig` describes a full run (world, architecture, training
recipe, sampler, evaluation protocol). Ablations are config transforms, so
a paired ablation run shares every seed with its base run.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .evaluate import (
    EvalReport,
    lip_sync_correlation,
    reconstruction_mse,
    train_probe,
)
from .manifest import EMOTIONS
from .model import ArchConfig, EmoCastModel, build_model
from .rng import Rng
from .training import StagedTrainResult, default_stage_configs, generate, run_staged_training
from .world import SyntheticWorld, SyntheticWorldConfig, synth_generate

ABLATIONS = ("no_decoupled", "no_emotive_audio", "no_emotion_aware_sampling", "no_progressive")


@dataclass
class ExperimentConfig:
    seed: int = 0
    world: SyntheticWorldConfig = field(default_factory=SyntheticWorldConfig)
    level_channels: tuple = (8, 16, 32)
    attn_dim: int = 32
    time_dim: int = 32
    audio_context: int = 1
    window: int = 8
    total_steps: int = 2000
    spatial_fraction: float = 0.8
    spatial_batch: int = 6
    temporal_batch: int = 2
    lr: float = 2e-3
    progressive: bool = True
    sampling_mode: str = "emotion_aware"
    use_decoupled: bool = True
    use_emotive_audio: bool = True
    schedule_T: int = 50
    schedule_beta_1: float = 1.5e-3
    schedule_beta_T: float = 0.30
    sampler: str = "ddim"
    sampler_steps: int = 25
    sampler_eta: float = 0.0
    eval_frames: int = 12
    eval_generations_per_combo: int = 2
    eval_intensity: float = 0.8

    def arch(self) -> ArchConfig:
        return ArchConfig(
            grid=tuple(self.world.grid),
            channels_world=self.world.channels,
            level_channels=tuple(self.level_channels),
            attn_dim=self.attn_dim,
            cond_dim=self.attn_dim,
            time_dim=self.time_dim,
            audio_dim=self.world.audio_dim,
            audio_context=self.audio_context,
            frames=self.window,
            emotions=tuple(self.world.emotions),
            identities=tuple(self.world.identity_ids),
            regions=self.world.regions,
            use_decoupled=self.use_decoupled,
            use_emotive_audio=self.use_emotive_audio,
        )

    def schedule(self) -> tuple:
        return (self.schedule_T, self.schedule_beta_1, self.schedule_beta_T)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["world"] = asdict(self.world)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        w = dict(d.pop("world", {}))
        for key in ("emotions", "grid", "intensity_range"):
            if key in w:
                w[key] = tuple(w[key])
        d["world"] = SyntheticWorldConfig(**w)
        for key in ("level_channels",):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def base_hash(self) -> str:
        """Hash over everything except the ablation toggles, so a base run
        and its ablated twin report the same hash."""
        d = self.to_dict()
        for key in ("use_decoupled", "use_emotive_audio", "sampling_mode", "progressive"):
            d.pop(key)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_experiment_config(path, seed_override: Optional[int] = None) -> ExperimentConfig:
    cfg = ExperimentConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    if seed_override is not None:
        cfg = replace(cfg, seed=seed_override)
        cfg.world.seed = seed_override
    return cfg


def apply_ablation(cfg: ExperimentConfig, name: str) -> ExperimentConfig:
    if name == "no_decoupled":
        return replace(cfg, use_decoupled=False)
    if name == "no_emotive_audio":
        return replace(cfg, use_emotive_audio=False)
    if name == "no_emotion_aware_sampling":
        return replace(cfg, sampling_mode="intra_video")
    if name == "no_progressive":
        return replace(cfg, progressive=False)
    raise ValueError(f"unknown ablation {name!r}; choose from {ABLATIONS}")


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    world: SyntheticWorld
    model: EmoCastModel
    training: StagedTrainResult
    report: EvalReport


def train_pipeline(cfg: ExperimentConfig, world: Optional[SyntheticWorld] = None):
    world = world or synth_generate(cfg.world)
    model = build_model(cfg.arch(), seed=cfg.seed)
    spatial_cfg, temporal_cfg = default_stage_configs(
        total_steps=cfg.total_steps,
        seed=cfg.seed,
        batch_size=cfg.spatial_batch,
        window=cfg.window,
        lr=cfg.lr,
        progressive=cfg.progressive,
        sampling_mode=cfg.sampling_mode,
        spatial_fraction=cfg.spatial_fraction,
        schedule=cfg.schedule(),
    )
    temporal_cfg.batch_size = cfg.temporal_batch
    result = run_staged_training(model, world.manifest, world.store, spatial_cfg, temporal_cfg)
    return world, model, result


def neutral_reference_frame(world: SyntheticWorld, identity: str) -> np.ndarray:
    """A fixed neutral frame per identity, preferring high-sync clips."""
    neutrals = world.manifest.neutral_clips(identity)
    if not neutrals:
        raise ValueError(f"identity {identity!r} has no neutral clip")
    chosen = sorted(neutrals, key=lambda r: (r.source_tag != "neutral_highsync", r.clip_id))[0]
    return world.store.frames(chosen)[0]


def evaluate_model(
    model: EmoCastModel,
    world: SyntheticWorld,
    cfg: ExperimentConfig,
    config_hash: Optional[str] = None,
    ablation: Optional[str] = None,
) -> EvalReport:
    """Generate held-out-audio windows per (identity, emotion) and score
    emotion accuracy, lip sync, and training-clip reconstruction."""
    manifest, store = world.manifest, world.store
    probe = train_probe(manifest, store, world.config.regions["exp"], seed=cfg.seed)
    lip_mask = np.zeros(world.config.grid)
    rows, cols = world.region_slices("lip")
    lip_mask[rows, cols] = 1.0

    labels = [e for e in world.config.emotions]
    confusion: dict[str, dict[str, int]] = {lbl: {} for lbl in labels}
    corrs: list[float] = []
    audio_rng = Rng.from_seed(cfg.seed).split("eval_audio")
    gen_counter = 0
    n_frames = 0
    for identity in manifest.identities:
        ref = neutral_reference_frame(world, identity)
        for label in labels:
            intensity = 0.0 if label == "neutral" else cfg.eval_intensity
            for g in range(cfg.eval_generations_per_combo):
                energy = world.new_audio_track(
                    cfg.eval_frames, audio_rng.split(f"{identity}/{label}/{g}")
                )
                feats = world.featurize_audio(energy)
                frames = generate(
                    model, ref, feats, label, intensity,
                    seed=cfg.seed * 7919 + gen_counter,
                    frames=cfg.eval_frames,
                    sampler=cfg.sampler, steps=cfg.sampler_steps, eta=cfg.sampler_eta,
                    schedule=cfg.schedule(),
                )
                gen_counter += 1
                for pred in probe.predict(frames):
                    confusion[label][pred] = confusion[label].get(pred, 0) + 1
                n_frames += frames.shape[0]
                corrs.append(lip_sync_correlation(energy, frames, lip_mask))

    total = sum(sum(row.values()) for row in confusion.values())
    diag = sum(confusion[lbl].get(lbl, 0) for lbl in confusion)
    accuracy = diag / total if total else 0.0
    mean_corr = float(np.mean(corrs)) if corrs else 0.0

    # reconstruction of one emotional training window per identity
    recon_scores = []
    for identity in manifest.identities:
        emotional = [
            r for r in manifest.by_identity[identity]
            if r.emotion_label != "neutral" and r.source_tag == "lab_emotional"
        ]
        if not emotional:
            continue
        rec = sorted(emotional, key=lambda r: r.clip_id)[0]
        F = min(cfg.eval_frames, rec.frame_count)
        target = store.frames(rec)[:F]
        frames = generate(
            model, neutral_reference_frame(world, identity), store.audio(rec)[:F],
            rec.emotion_label, rec.intensity,
            seed=cfg.seed * 7919 + 500 + len(recon_scores),
            frames=F, sampler=cfg.sampler, steps=cfg.sampler_steps, eta=cfg.sampler_eta,
            schedule=cfg.schedule(),
        )
        recon_scores.append(reconstruction_mse(frames, target))
    recon = float(np.mean(recon_scores)) if recon_scores else None

    return EvalReport(
        config_hash=config_hash or cfg.base_hash(),
        seed=cfg.seed,
        emotion_accuracy=accuracy,
        lip_sync_correlation=mean_corr,
        reconstruction_mse=recon,
        confusion=confusion,
        probe_heldout_accuracy=probe.heldout_accuracy,
        n_generated_frames=n_frames,
        ablation=ablation,
        metadata={"identities": manifest.identities, "labels": labels},
    )


def run_experiment(
    cfg: ExperimentConfig,
    ablation: Optional[str] = None,
    world: Optional[SyntheticWorld] = None,
    config_hash: Optional[str] = None,
) -> ExperimentResult:
    run_cfg = apply_ablation(cfg, ablation) if ablation else cfg
    world, model, training = train_pipeline(run_cfg, world=world)
    report = evaluate_model(
        model, world, run_cfg, config_hash=config_hash or cfg.base_hash(), ablation=ablation
    )
    return ExperimentResult(config=run_cfg, world=world, model=model, training=training, report=report)


def run_ablation(name: str, base_config: ExperimentConfig) -> tuple[EvalReport, EvalReport]:
    """Base and ablated runs under identical seeds; reports share the base
    config hash and differ in the ablation field."""
    if name not in ABLATIONS:
        raise ValueError(f"unknown ablation {name!r}; choose from {ABLATIONS}")
    h = base_config.base_hash()
    base = run_experiment(base_config, config_hash=h)
    ablated = run_experiment(base_config, ablation=name, config_hash=h)
    return base.report, ablated.report
