"""Procedurally generated "face world": deterministic clips whose lip,
expression and pose regions are driven by known signals, so every claim
about conditioning, sync and emotion accuracy can be checked exactly.

Per frame:
* the lip rectangle shows a bar whose (sub-pixel) height is proportional to
  that frame's audio energy, so mean lip intensity is exactly affine in
  energy;
* the expression rectangle shows a per-emotion cosine grating scaled by the
  clip's intensity (neutral renders nothing);
* the pose rectangle carries a thin bar drifting on a slow sinusoid;
* everywhere else a fixed per-identity clutter pattern fills the canvas.

Audio features are [energy, fixed random projection of the local energy
window], mimicking a frozen speech encoder.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .manifest import (
    EMOTIONS,
    ArrayStore,
    ClipRecord,
    Manifest,
    SyntheticAnnotator,
    annotate,
    lip_sync_filter,
    recorded_sync_scorer,
    save_manifest,
)
from .rng import Rng

DEFAULT_REGIONS = {
    "lip": {"top": 10, "left": 5, "height": 5, "width": 6},
    "exp": {"top": 2, "left": 2, "height": 6, "width": 6},
    "pose": {"top": 2, "left": 10, "height": 5, "width": 4},
}

# (u, v) cosine-grating indices per emotion; pairwise orthogonal over the
# expression rectangle, which keeps the probe's task linearly separable
_GLYPH_FREQS = {
    "neutral": (0, 0),
    "angry": (0, 1),
    "contempt": (1, 0),
    "disgusted": (1, 1),
    "fear": (0, 2),
    "happy": (2, 0),
    "sad": (1, 2),
    "surprised": (2, 1),
}


class WorldConfigError(ValueError):
    pass


@dataclass
class SyntheticWorldConfig:
    n_identities: int = 2
    emotions: tuple = ("neutral", "happy", "angry")
    clips_per_identity_emotion: int = 1
    grid: tuple = (16, 16)
    channels: int = 1
    frames_per_clip: int = 24
    audio_dim: int = 8
    regions: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_REGIONS.items()})
    wild_clips_per_identity: int = 2
    wild_shuffled_fraction: float = 0.5
    highsync_clips_per_identity: int = 2
    intensity_range: tuple = (0.6, 1.0)
    pose_period: float = 12.0
    seed: int = 0

    def __post_init__(self):
        H, W = self.grid
        for name, r in self.regions.items():
            if name not in ("lip", "exp", "pose"):
                raise WorldConfigError(f"unknown region {name!r}")
            if r["top"] < 0 or r["left"] < 0 or r["top"] + r["height"] > H or r["left"] + r["width"] > W:
                raise WorldConfigError(f"{name} region {r} outside the {H}x{W} grid")
            if r["height"] < 1 or r["width"] < 1:
                raise WorldConfigError(f"{name} region is empty")
        if "neutral" not in self.emotions:
            raise WorldConfigError("the emotion set must include neutral")
        for e in self.emotions:
            if e not in EMOTIONS:
                raise WorldConfigError(f"unknown emotion {e!r}")
        if self.audio_dim < 1:
            raise WorldConfigError("audio_dim must be >= 1")
        if not 0.0 <= self.wild_shuffled_fraction <= 1.0:
            raise WorldConfigError("wild_shuffled_fraction must be in [0, 1]")

    @property
    def identity_ids(self) -> list[str]:
        return [f"id{i}" for i in range(self.n_identities)]

    def frame_size(self) -> int:
        H, W = self.grid
        return self.channels * H * W


def emotion_glyph(label: str, height: int, width: int) -> np.ndarray:
    """Unit-amplitude cosine grating for a label; zero for neutral."""
    u, v = _GLYPH_FREQS[label]
    if (u, v) == (0, 0):
        return np.zeros((height, width))
    y = (np.arange(height) + 0.5) / height
    x = (np.arange(width) + 0.5) / width
    return np.cos(math.pi * u * y)[:, None] * np.cos(math.pi * v * x)[None, :]


def lip_bar(energy: float, height: int, width: int) -> np.ndarray:
    """Bar filling the rectangle bottom-up; mean intensity equals `energy`."""
    level = energy * height
    rows = np.clip(level - np.arange(height), 0.0, 1.0)[::-1]
    return np.repeat(rows[:, None], width, axis=1)


def pose_bar(phase01: float, height: int, width: int) -> np.ndarray:
    """One-row bright bar at a sub-pixel vertical offset."""
    out = np.zeros((height, width))
    if height == 1:
        out[0, :] = 1.0
        return out
    pos = (height - 1) * phase01
    j = int(math.floor(pos))
    frac = pos - j
    out[j, :] = 1.0 - frac
    if j + 1 < height:
        out[j + 1, :] = frac
    return out


def audio_features(energy: np.ndarray, proj: np.ndarray) -> np.ndarray:
    """[energy, R @ clamped local window] per frame; `proj` is [3, d-1]."""
    F = energy.shape[0]
    idx = np.arange(F)
    window = np.stack(
        [energy[np.clip(idx - 1, 0, F - 1)], energy, energy[np.clip(idx + 1, 0, F - 1)]], axis=1
    )
    feats = np.concatenate([energy[:, None], window @ proj], axis=1)
    return feats


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    denom = math.sqrt(float((a * a).sum()) * float((b * b).sum()))
    if denom == 0.0:
        return 0.0
    return float((a * b).sum() / denom)


class SyntheticWorld:
    """Generated clips plus the fixed structures needed to render or
    featurize new material (identity patterns, audio projection, regions)."""

    def __init__(self, config: SyntheticWorldConfig, manifest: Manifest, store: ArrayStore,
                 identity_patterns: dict[str, np.ndarray], audio_proj: np.ndarray):
        self.config = config
        self.manifest = manifest
        self.store = store
        self.identity_patterns = identity_patterns
        self.audio_proj = audio_proj

    def featurize_audio(self, energy: np.ndarray) -> np.ndarray:
        return audio_features(np.asarray(energy, dtype=np.float64), self.audio_proj).astype(np.float32)

    def new_audio_track(self, n_frames: int, rng: Rng) -> np.ndarray:
        return rng.uniform(0.05, 0.95, (n_frames,))

    def region_slices(self, name: str):
        r = self.config.regions[name]
        return slice(r["top"], r["top"] + r["height"]), slice(r["left"], r["left"] + r["width"])

    def meta_dict(self) -> dict:
        return {
            "grid": list(self.config.grid),
            "channels": self.config.channels,
            "audio_dim": self.config.audio_dim,
            "regions": self.config.regions,
            "emotions": list(self.config.emotions),
            "identities": self.config.identity_ids,
            "seed": self.config.seed,
            "audio_proj": [[float(v) for v in row] for row in self.audio_proj],
        }

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_manifest(self.manifest, out / "manifest.jsonl")
        self.store.save(out)
        (out / "world_meta.json").write_text(
            json.dumps(self.meta_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )


def render_frame(
    config: SyntheticWorldConfig,
    identity_pattern: np.ndarray,
    emotion: str,
    intensity: float,
    energy: float,
    pose_phase01: float,
) -> np.ndarray:
    H, W = config.grid
    frame = identity_pattern.copy()
    for name, patch in (
        ("lip", lambda r: lip_bar(energy, r["height"], r["width"])),
        ("exp", lambda r: intensity * emotion_glyph(emotion, r["height"], r["width"])),
        ("pose", lambda r: pose_bar(pose_phase01, r["height"], r["width"])),
    ):
        r = config.regions[name]
        frame[r["top"] : r["top"] + r["height"], r["left"] : r["left"] + r["width"]] = patch(r)
    return np.broadcast_to(frame, (config.channels, H, W)).copy()


def render_clip(
    config: SyntheticWorldConfig,
    identity_pattern: np.ndarray,
    emotion: str,
    intensity: float,
    energy: np.ndarray,
    pose_phase: float,
) -> np.ndarray:
    F = energy.shape[0]
    frames = np.empty((F, config.channels) + tuple(config.grid), dtype=np.float32)
    for t in range(F):
        ph = 0.5 * (1.0 + math.sin(2.0 * math.pi * (t / config.pose_period + pose_phase)))
        frames[t] = render_frame(config, identity_pattern, emotion, intensity, float(energy[t]), ph)
    return frames


def synth_generate(config: SyntheticWorldConfig) -> SyntheticWorld:
    """Generate the whole world deterministically from its seed."""
    root = Rng.from_seed(config.seed).split("world")
    H, W = config.grid
    audio_proj = root.split("audio_proj").normal((3, config.audio_dim - 1)) / math.sqrt(3.0)

    identity_patterns = {}
    region_mask = np.zeros((H, W), dtype=bool)
    for name in ("lip", "exp", "pose"):
        r = config.regions[name]
        region_mask[r["top"] : r["top"] + r["height"], r["left"] : r["left"] + r["width"]] = True
    for ident in config.identity_ids:
        pat = root.split(f"identity_pattern/{ident}").uniform(-0.8, 0.8, (H, W))
        pat[region_mask] = 0.0
        identity_patterns[ident] = pat

    records: list[ClipRecord] = []
    store = ArrayStore()
    annotator = SyntheticAnnotator()

    def add_clip(ident: str, tag: str, emotion: str, k: int, shuffled: bool, crng: Rng):
        clip_id = f"{ident}_{tag}_{emotion}_{k}"
        F = config.frames_per_clip
        energy = crng.split("energy").uniform(0.05, 0.95, (F,))
        intensity = (
            0.0
            if emotion == "neutral"
            else float(crng.split("intensity").uniform(*config.intensity_range, ()))
        )
        pose_phase = float(crng.split("pose_phase").uniform(0.0, 1.0, ()))
        frames = render_clip(config, identity_patterns[ident], emotion, intensity, energy, pose_phase)
        stored_energy = energy[crng.split("shuffle").permutation(F)] if shuffled else energy
        audio = audio_features(stored_energy, audio_proj).astype(np.float32)
        lip_rows, lip_cols = (
            slice(config.regions["lip"]["top"], config.regions["lip"]["top"] + config.regions["lip"]["height"]),
            slice(config.regions["lip"]["left"], config.regions["lip"]["left"] + config.regions["lip"]["width"]),
        )
        openness = frames[:, 0, lip_rows, lip_cols].mean(axis=(1, 2))
        sync = pearson(stored_energy.astype(np.float64), openness.astype(np.float64))
        frames_ref = f"arrays/{clip_id}.frames.etd"
        audio_ref = f"arrays/{clip_id}.audio.etd"
        store.put(frames_ref, frames)
        store.put(audio_ref, audio)
        rec = ClipRecord(
            clip_id=clip_id,
            identity_id=ident,
            source_tag=tag,
            emotion_label=emotion,
            intensity=round(intensity, 6),
            text_prompt="",
            frame_count=F,
            sync_score=round(sync, 9),
            frames_ref=frames_ref,
            audio_ref=audio_ref,
        )
        records.append(annotate(rec, annotator))

    for ident in config.identity_ids:
        for emotion in config.emotions:
            for k in range(config.clips_per_identity_emotion):
                add_clip(ident, "lab_emotional", emotion, k, False, root.split(f"clip/{ident}/lab/{emotion}/{k}"))
        for k in range(config.highsync_clips_per_identity):
            add_clip(ident, "neutral_highsync", "neutral", k, False, root.split(f"clip/{ident}/hs/{k}"))
        for k in range(config.wild_clips_per_identity):
            crng = root.split(f"clip/{ident}/wild/{k}")
            emotion = config.emotions[crng.split("emotion").choice_index(len(config.emotions))]
            shuffled = float(crng.split("is_shuffled").uniform(0.0, 1.0, ())) < config.wild_shuffled_fraction
            add_clip(ident, "wild", emotion, k, shuffled, crng)

    return SyntheticWorld(config, Manifest(records), store, identity_patterns, audio_proj)


def build_dataset(
    config: SyntheticWorldConfig,
    sync_threshold: Optional[float] = None,
    out_dir: Optional[str] = None,
) -> SyntheticWorld:
    """Generate, annotate (already part of generation) and optionally filter
    by sync score; write to disk when out_dir is given."""
    world = synth_generate(config)
    if sync_threshold is not None:
        world.manifest = lip_sync_filter(world.manifest, recorded_sync_scorer, sync_threshold)
    if out_dir is not None:
        world.save(out_dir)
    return world


def load_world_meta(path) -> dict:
    meta = json.loads(Path(path).read_text(encoding="utf-8"))
    meta["audio_proj"] = np.asarray(meta["audio_proj"], dtype=np.float64)
    return meta


def open_world(world_dir) -> SyntheticWorld:
    """Reopen a world written by `SyntheticWorld.save` (or `build_dataset`).

    Identity render patterns are not persisted; everything needed for
    training and evaluation (manifest, arrays, regions, audio projection)
    is restored.
    """
    from .manifest import load_manifest

    root = Path(world_dir)
    meta = load_world_meta(root / "world_meta.json")
    manifest = load_manifest(root / "manifest.jsonl")
    frame_counts = {r.frame_count for r in manifest.records}
    config = SyntheticWorldConfig(
        n_identities=len(meta["identities"]),
        emotions=tuple(meta["emotions"]),
        grid=tuple(meta["grid"]),
        channels=meta["channels"],
        frames_per_clip=max(frame_counts) if frame_counts else 1,
        audio_dim=meta["audio_dim"],
        regions=meta["regions"],
        seed=meta["seed"],
    )
    store = ArrayStore.open(root)
    return SyntheticWorld(config, manifest, store, identity_patterns={}, audio_proj=meta["audio_proj"])
