"""Training-pair samplers and the three-phase curriculum.

The emotion-aware sampler pairs an emotional target window with a neutral
reference frame of the same identity, drawn from a different clip; the
intra-video sampler (the ablation baseline) takes both from one clip. The
curriculum restricts which source tags and sampler each training step may
use, over contiguous half-open step intervals.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .manifest import ArrayStore, ClipRecord, Manifest
from .rng import Rng

SAMPLER_MODES = ("emotion_aware", "neutral_only", "intra_video")


class SamplingError(ValueError):
    pass


class NoNeutralReferenceError(SamplingError):
    """The identity offers no neutral clip to serve as reference."""


@dataclass
class TrainingPair:
    reference_frame: np.ndarray  # [C, H, W]
    target_window: np.ndarray  # [F, C, H, W]
    e_f_key: str  # identity id
    e_t_key: tuple  # (emotion label, intensity)
    e_a_window: np.ndarray  # [F, d_audio]
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Phase:
    name: str
    start_step: int
    end_step: int
    allowed_source_tags: frozenset
    sampler_mode: str

    def __post_init__(self):
        if self.end_step <= self.start_step:
            raise ValueError(f"phase {self.name!r} has empty range")
        if self.sampler_mode not in SAMPLER_MODES:
            raise ValueError(f"phase {self.name!r}: unknown sampler mode {self.sampler_mode!r}")
        if not self.allowed_source_tags:
            raise ValueError(f"phase {self.name!r} allows no source tags")


@dataclass
class CurriculumConfig:
    phases: list[Phase]

    def __post_init__(self):
        if not self.phases:
            raise ValueError("curriculum needs at least one phase")
        for prev, cur in zip(self.phases, self.phases[1:]):
            if cur.start_step != prev.end_step:
                raise ValueError(
                    f"phases must be contiguous and non-overlapping: "
                    f"{prev.name!r} ends at {prev.end_step}, {cur.name!r} starts at {cur.start_step}"
                )
        if len(self.phases) == 3 and self.phases[2].allowed_source_tags != frozenset({"neutral_highsync"}):
            raise ValueError("a three-phase curriculum must end on neutral_highsync data only")

    @property
    def total_steps(self) -> int:
        return self.phases[-1].end_step


def progressive_curriculum(
    total_steps: int, fractions=(0.5, 0.3, 0.2), sampler_mode: str = "emotion_aware"
) -> CurriculumConfig:
    """Mixed data, then lab + high-sync, then high-sync neutral only."""
    a = int(round(total_steps * fractions[0]))
    b = a + int(round(total_steps * fractions[1]))
    final_mode = "neutral_only" if sampler_mode == "emotion_aware" else sampler_mode
    return CurriculumConfig(
        phases=[
            Phase("generalization", 0, a, frozenset({"wild", "lab_emotional", "neutral_highsync"}), sampler_mode),
            Phase("emotion_refinement", a, b, frozenset({"lab_emotional", "neutral_highsync"}), sampler_mode),
            Phase("lip_sync_specialization", b, total_steps, frozenset({"neutral_highsync"}), final_mode),
        ]
    )


def single_phase_curriculum(total_steps: int, sampler_mode: str = "emotion_aware") -> CurriculumConfig:
    """All data, one phase; the no-progressive ablation."""
    return CurriculumConfig(
        phases=[
            Phase("mixed", 0, total_steps, frozenset({"wild", "lab_emotional", "neutral_highsync"}), sampler_mode)
        ]
    )


def curriculum_phase(step: int, config: CurriculumConfig) -> Phase:
    """The unique phase whose [start, end) interval contains the step."""
    for phase in config.phases:
        if phase.start_step <= step < phase.end_step:
            return phase
    raise SamplingError(f"step {step} outside the curriculum (0..{config.total_steps})")


# ---------------------------------------------------------------------------
# Pair samplers
# ---------------------------------------------------------------------------


def _pick(rng: Rng, items):
    return items[rng.choice_index(len(items))]


def _window_start(rng: Rng, record: ClipRecord, window: int) -> int:
    if record.frame_count < window:
        raise SamplingError(
            f"clip {record.clip_id} has {record.frame_count} frames, window needs {window}"
        )
    return int(rng.integers(0, record.frame_count - window + 1))


def _make_pair(
    store: ArrayStore,
    ref_record: ClipRecord,
    ref_frame_idx: int,
    target_record: ClipRecord,
    start: int,
    window: int,
) -> TrainingPair:
    frames = store.frames(target_record)
    audio = store.audio(target_record)
    return TrainingPair(
        reference_frame=store.frames(ref_record)[ref_frame_idx],
        target_window=frames[start : start + window],
        e_f_key=target_record.identity_id,
        e_t_key=(target_record.emotion_label, target_record.intensity),
        e_a_window=audio[start : start + window],
        meta={
            "reference_clip": ref_record.clip_id,
            "reference_frame": ref_frame_idx,
            "target_clip": target_record.clip_id,
            "target_start": start,
        },
    )


def emotion_aware_sample(
    manifest: Manifest,
    store: ArrayStore,
    identity: str,
    emotion: str,
    rng: Rng,
    window: int = 1,
) -> TrainingPair:
    """Target window from the requested emotion's clips; reference frame from
    the identity's neutral clips (a different clip whenever one exists)."""
    if identity not in manifest.by_identity:
        raise SamplingError(f"unknown identity {identity!r}")
    targets = manifest.by_identity_emotion.get((identity, emotion), [])
    if not targets:
        raise SamplingError(f"identity {identity!r} has no {emotion!r} clips")
    neutrals = manifest.neutral_clips(identity)
    if not neutrals:
        raise NoNeutralReferenceError(
            f"identity {identity!r} has no neutral clip to use as reference"
        )
    target = _pick(rng, targets)
    start = _window_start(rng, target, window)

    if emotion == "neutral":
        others = [r for r in neutrals if r.clip_id != target.clip_id]
        if others:
            ref = _pick(rng, others)
            ref_idx = int(rng.integers(0, ref.frame_count))
        else:
            ref = target
            free = [i for i in range(ref.frame_count) if not (start <= i < start + window)]
            if not free:
                raise SamplingError(
                    f"clip {ref.clip_id} too short for a non-overlapping neutral reference"
                )
            ref_idx = _pick(rng, free)
    else:
        ref = _pick(rng, neutrals)
        ref_idx = int(rng.integers(0, ref.frame_count))
    return _make_pair(store, ref, ref_idx, target, start, window)


def intra_video_sample(
    manifest: Manifest,
    store: ArrayStore,
    identity: str,
    emotion: str,
    rng: Rng,
    window: int = 1,
) -> TrainingPair:
    """Reference and target from the same clip (the pre-strategy baseline)."""
    targets = manifest.by_identity_emotion.get((identity, emotion), [])
    if not targets:
        raise SamplingError(f"identity {identity!r} has no {emotion!r} clips")
    target = _pick(rng, targets)
    start = _window_start(rng, target, window)
    ref_idx = int(rng.integers(0, target.frame_count))
    return _make_pair(store, target, ref_idx, target, start, window)


@dataclass
class SamplerConfig:
    curriculum: CurriculumConfig
    batch_size: int
    window: int


def batch_sample(
    step: int,
    manifest: Manifest,
    store: ArrayStore,
    config: SamplerConfig,
    rng: Rng,
) -> list[TrainingPair]:
    """One batch drawn under the phase active at `step`."""
    phase = curriculum_phase(step, config.curriculum)
    view = manifest.restrict_tags(phase.allowed_source_tags)
    if len(view) == 0:
        raise SamplingError(f"phase {phase.name!r} admits no records")
    pairs = []
    for _ in range(config.batch_size):
        identity = _pick(rng, view.identities)
        if phase.sampler_mode == "neutral_only":
            emotion = "neutral"
        else:
            available = sorted(
                {e for (i, e) in view.by_identity_emotion if i == identity}
            )
            emotion = _pick(rng, available)
        if phase.sampler_mode == "intra_video":
            pairs.append(intra_video_sample(view, store, identity, emotion, rng, config.window))
        else:
            pairs.append(emotion_aware_sample(view, store, identity, emotion, rng, config.window))
    return pairs
