"""The toy reference-encoder + denoising UNet with all conditioning blocks.

Three resolution levels; each decoder level runs, in order: convolution,
self-attention with reference injection, decoupled emotive attention,
region-masked audio attention, temporal attention (temporal stage only).
All attention contributions are residual; temporal and combiner output
projections start at zero so new modules begin as identities.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .attention import (
    CrossAttentionParams,
    DecoupledEmotiveParams,
    EmbeddingBank,
    EmotiveAudioParams,
    RegionMasks,
    cross_attention,
    decoupled_emotive_attention,
    emotive_audio_feature,
    make_cross_attention_params,
    make_decoupled_params,
    make_emotive_audio_params,
    reference_inject,
    region_audio_attention,
    temporal_attention,
    uniform_init,
)
from .manifest import EMOTIONS
from .rng import Rng
from .tensor import (
    ShapeError,
    Tensor,
    avg_pool2,
    concat,
    conv2d,
    index_rows,
    matmul,
    reshape,
    silu,
    transpose,
    upsample2,
)
from .world import DEFAULT_REGIONS


class MissingConditionError(ValueError):
    pass


@dataclass
class ArchConfig:
    grid: tuple = (16, 16)
    channels_world: int = 1
    level_channels: tuple = (8, 16, 32)
    attn_dim: int = 32
    cond_dim: int = 32
    time_dim: int = 32
    audio_dim: int = 8
    audio_context: int = 1  # radius of the per-frame audio window
    frames: int = 8
    emotions: tuple = EMOTIONS
    identities: tuple = ()
    regions: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_REGIONS.items()})
    use_decoupled: bool = True
    use_emotive_audio: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        H, W = self.grid
        levels = len(self.level_channels)
        if levels < 1:
            raise ValueError("need at least one resolution level")
        div = 2 ** (levels - 1)
        if H % div or W % div:
            raise ValueError(f"grid {self.grid} not divisible across {levels} levels")
        if self.cond_dim != self.attn_dim:
            # keeps the raw-audio bypass (ablation) type-compatible with the
            # region attention blocks
            raise ValueError("cond_dim must equal attn_dim")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @property
    def levels(self) -> int:
        return len(self.level_channels)

    def frame_size(self) -> int:
        return self.channels_world * self.grid[0] * self.grid[1]

    def to_dict(self) -> dict:
        return {
            "grid": list(self.grid),
            "channels_world": self.channels_world,
            "level_channels": list(self.level_channels),
            "attn_dim": self.attn_dim,
            "cond_dim": self.cond_dim,
            "time_dim": self.time_dim,
            "audio_dim": self.audio_dim,
            "audio_context": self.audio_context,
            "frames": self.frames,
            "emotions": list(self.emotions),
            "identities": list(self.identities),
            "regions": self.regions,
            "use_decoupled": self.use_decoupled,
            "use_emotive_audio": self.use_emotive_audio,
            "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        d = dict(d)
        d["grid"] = tuple(d["grid"])
        d["level_channels"] = tuple(d["level_channels"])
        d["emotions"] = tuple(d["emotions"])
        d["identities"] = tuple(d["identities"])
        return cls(**d)

    def canonical_json(self) -> bytes:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()

    def config_hash(self) -> int:
        return int.from_bytes(hashlib.sha256(self.canonical_json()).digest()[:8], "little")


@dataclass
class ConvBlock:
    conv1: Tensor
    conv2: Tensor
    temb_proj: Optional[Tensor] = None

    def named(self, prefix: str):
        out = [(f"{prefix}.conv1", self.conv1), (f"{prefix}.conv2", self.conv2)]
        if self.temb_proj is not None:
            out.append((f"{prefix}.temb_proj", self.temb_proj))
        return out


@dataclass
class LevelAttention:
    ref: CrossAttentionParams
    decoupled: Optional[DecoupledEmotiveParams]
    fused: Optional[CrossAttentionParams]  # shared single-block ablation
    region: EmotiveAudioParams
    temporal: CrossAttentionParams

    def named(self, prefix: str):
        out = self.ref.named(f"{prefix}.ref")
        if self.decoupled is not None:
            out += self.decoupled.named(f"{prefix}.decoupled")
        if self.fused is not None:
            out += self.fused.named(f"{prefix}.fused")
        out += self.region.named(f"{prefix}.region", include_audio_feature=False)
        out += self.temporal.named(f"{prefix}.temporal")
        return out


@dataclass
class Conditions:
    """Per-sample conditioning for one denoiser forward pass."""

    e_f: Tensor  # [B, 1, cond_dim]
    e_t: Tensor  # [B, N_t, cond_dim]
    e_a: Tensor  # [B, F, cond_dim]
    reference: list  # per-level token maps [B, N_l, ch_l]

    def validate(self, levels: int) -> None:
        for name in ("e_f", "e_t", "e_a", "reference"):
            if getattr(self, name) is None:
                raise MissingConditionError(f"condition {name!r} is missing")
        if len(self.reference) != levels:
            raise MissingConditionError(
                f"reference features cover {len(self.reference)} levels, model has {levels}"
            )


def _conv_init(rng: Rng, c_out: int, c_in: int, k: int, dtype) -> Tensor:
    bound = 1.0 / math.sqrt(c_in * k * k)
    return Tensor(rng.uniform(-bound, bound, (c_out, c_in, k, k), dtype=dtype), requires_grad=True)


def _zero_conv(c_out: int, c_in: int, k: int, dtype) -> Tensor:
    return Tensor(np.zeros((c_out, c_in, k, k), dtype=dtype), requires_grad=True)


class EmoCastModel:
    def __init__(self, config: ArchConfig, seed: int):
        self.config = config
        self.seed = seed
        dt = config.np_dtype
        root = Rng.from_seed(seed).split("model")
        ch = config.level_channels
        L = config.levels
        cw = config.channels_world
        d = config.attn_dim
        dc = config.cond_dim
        td = config.time_dim

        self.bank = EmbeddingBank.build(
            root.split("bank"),
            config.identities,
            config.emotions,
            d_cond=dc,
            d_audio=config.audio_dim,
            frame_size=config.frame_size(),
            dtype=dt,
        )

        masks = RegionMasks.from_rects(config.grid, config.regions, dtype=dt)
        self.masks_per_level = [masks]
        for _ in range(L - 1):
            masks = masks.downsample2()
            self.masks_per_level.append(masks)

        def block(rng, c, with_temb=True):
            return ConvBlock(
                conv1=_conv_init(rng.split("conv1"), c, c, 3, dt),
                conv2=_conv_init(rng.split("conv2"), c, c, 3, dt),
                temb_proj=uniform_init(rng.split("temb"), (td, c), dt) if with_temb else None,
            )

        self.stem = _conv_init(root.split("stem"), ch[0], cw, 3, dt)
        self.time_w1 = uniform_init(root.split("time_w1"), (td, td), dt)
        self.time_w2 = uniform_init(root.split("time_w2"), (td, td), dt)
        self.enc_blocks = [block(root.split(f"enc{l}"), ch[l]) for l in range(L)]
        self.down_convs = [
            _conv_init(root.split(f"down{l}"), ch[l + 1], ch[l], 3, dt) for l in range(L - 1)
        ]
        self.mid_block = block(root.split("mid"), ch[L - 1])
        self.up_convs = [
            _conv_init(root.split(f"up{l}"), ch[l], ch[l + 1], 3, dt) for l in range(L - 1)
        ]
        self.merge_convs = [
            _conv_init(root.split(f"merge{l}"), ch[l], 2 * ch[l], 3, dt) for l in range(L - 1)
        ]
        self.dec_blocks = [block(root.split(f"dec{l}"), ch[l]) for l in range(L)]
        self.head = _zero_conv(cw, ch[0], 3, dt)

        self.audio_feature_params = make_cross_attention_params(
            root.split("audio_feature"), dc, dc, d, d_out=d, dtype=dt
        )
        self.level_attn: list[LevelAttention] = []
        for l in range(L):
            arng = root.split(f"attn{l}")
            decoupled = fused = None
            if config.use_decoupled:
                decoupled = make_decoupled_params(arng.split("decoupled"), ch[l], dc, dc, d, dtype=dt)
            else:
                fused = make_cross_attention_params(arng.split("fused"), ch[l], dc, d, dtype=dt)
            self.level_attn.append(
                LevelAttention(
                    ref=make_cross_attention_params(arng.split("ref"), ch[l], ch[l], d, dtype=dt),
                    decoupled=decoupled,
                    fused=fused,
                    region=make_emotive_audio_params(
                        arng.split("region"), ch[l], d,
                        audio_feature=self.audio_feature_params, dtype=dt,
                    ),
                    temporal=make_cross_attention_params(
                        arng.split("temporal"), ch[l], ch[l], d, zero_output=True, dtype=dt
                    ),
                )
            )

        self.ref_stem = _conv_init(root.split("ref_stem"), ch[0], cw, 3, dt)
        self.ref_blocks = [block(root.split(f"ref{l}"), ch[l], with_temb=False) for l in range(L)]
        self.ref_downs = [
            _conv_init(root.split(f"ref_down{l}"), ch[l + 1], ch[l], 3, dt) for l in range(L - 1)
        ]

        self.params: dict[str, Tensor] = {}
        self._register()

    # -- parameter registry -------------------------------------------------

    def _register(self):
        L = self.config.levels
        entries = [("stem", self.stem), ("time_w1", self.time_w1), ("time_w2", self.time_w2)]
        for l in range(L):
            entries += self.enc_blocks[l].named(f"enc{l}")
        for l in range(L - 1):
            entries.append((f"down{l}", self.down_convs[l]))
        entries += self.mid_block.named("mid")
        for l in range(L - 1):
            entries.append((f"up{l}", self.up_convs[l]))
            entries.append((f"merge{l}", self.merge_convs[l]))
        for l in range(L):
            entries += self.dec_blocks[l].named(f"dec{l}")
        entries.append(("head", self.head))
        entries += self.audio_feature_params.named("audio_feature")
        for l in range(L):
            entries += self.level_attn[l].named(f"attn{l}")
        entries.append(("ref_stem", self.ref_stem))
        for l in range(L):
            entries += self.ref_blocks[l].named(f"ref{l}")
        for l in range(L - 1):
            entries.append((f"ref_down{l}", self.ref_downs[l]))
        for name, t in entries:
            if name in self.params:
                raise ValueError(f"duplicate parameter name {name}")
            self.params[name] = t

    def parameter_count(self) -> int:
        return sum(t.size for t in self.params.values())

    def temporal_param_names(self) -> set[str]:
        return {n for n in self.params if ".temporal." in n}

    def set_stage(self, stage: str, finetune_spatial: bool = False) -> None:
        """Freeze parameters according to the training stage."""
        if stage not in ("spatial", "temporal"):
            raise ValueError(f"unknown stage {stage!r}")
        temporal = self.temporal_param_names()
        for name, p in self.params.items():
            if stage == "spatial":
                p.requires_grad = name not in temporal
            else:
                p.requires_grad = (name in temporal) or finetune_spatial

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, p) for n, p in self.params.items() if p.requires_grad]

    def all_finite(self) -> bool:
        return all(np.isfinite(p.data).all() for p in self.params.values())

    # -- forward helpers ----------------------------------------------------

    def _timestep_embedding(self, t_arr: np.ndarray) -> Tensor:
        td = self.config.time_dim
        half = td // 2
        freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
        args = np.asarray(t_arr, dtype=np.float64)[:, None] * freqs[None, :]
        emb = np.concatenate([np.sin(args), np.cos(args)], axis=1).astype(self.config.np_dtype)
        h = silu(matmul(Tensor(emb), self.time_w1))
        return matmul(h, self.time_w2)  # [B, time_dim]

    def _conv_block(self, blk: ConvBlock, h: Tensor, temb_rows: Optional[Tensor]) -> Tensor:
        y = conv2d(h, blk.conv1)
        if blk.temb_proj is not None and temb_rows is not None:
            bias = matmul(temb_rows, blk.temb_proj)  # [N, C]
            y = y + reshape(bias, (bias.shape[0], bias.shape[1], 1, 1))
        y = silu(y)
        y = conv2d(y, blk.conv2)
        return h + y

    def encode_reference(self, ref_frames) -> list[Tensor]:
        """Per-level reference tokens [B, N_l, ch_l]; computed once and reused
        across diffusion steps."""
        x = ref_frames if isinstance(ref_frames, Tensor) else Tensor(
            np.asarray(ref_frames, dtype=self.config.np_dtype)
        )
        if x.data.ndim == 3:
            x = reshape(x, (1,) + tuple(x.shape))
        h = conv2d(x, self.ref_stem)
        feats = []
        for l in range(self.config.levels):
            h = self._conv_block(self.ref_blocks[l], h, None)
            B, C, Hl, Wl = h.shape
            feats.append(transpose(reshape(h, (B, C, Hl * Wl)), (0, 2, 1)))
            if l < self.config.levels - 1:
                h = conv2d(avg_pool2(h), self.ref_downs[l])
        return feats

    def _emotion_audio_context(self, cond: Conditions, B: int, F: int):
        """Per-frame audio context tokens [B*F, K, cond_dim] and the
        emotion-aware feature [B*F, N_t, d] (or the raw bypass)."""
        r = self.config.audio_context
        K = 2 * r + 1
        dc = self.config.cond_dim
        offsets = np.arange(-r, r + 1)
        frame_idx = np.clip(np.arange(F)[:, None] + offsets[None, :], 0, F - 1)  # [F, K]
        idx = (np.arange(B)[:, None, None] * F + frame_idx[None, :, :]).reshape(-1)
        flat = reshape(cond.e_a, (B * F, dc))
        ctx = reshape(index_rows(flat, idx), (B * F, K, dc))
        if not self.config.use_emotive_audio:
            return ctx
        rep = np.repeat(np.arange(B), F)
        e_t_rep = index_rows(cond.e_t, rep)  # [B*F, N_t, dc]
        return emotive_audio_feature(e_t_rep, ctx, self.audio_feature_params)

    def predict_noise_batch(
        self, z_t: Tensor, t_arr: np.ndarray, cond: Conditions, include_temporal: bool
    ) -> Tensor:
        cfg = self.config
        cond.validate(cfg.levels)
        if z_t.data.ndim != 5:
            raise ShapeError(f"expected [B, F, C, H, W] latents, got {z_t.shape}")
        B, F, C, H, W = z_t.shape
        if C != cfg.channels_world or (H, W) != tuple(cfg.grid):
            raise ShapeError(f"latent grid {(C, H, W)} does not match the model {cfg.channels_world, *cfg.grid}")
        if len(np.asarray(t_arr).reshape(-1)) != B:
            raise ShapeError(f"need one timestep per sample: got {t_arr} for batch {B}")
        rep = np.repeat(np.arange(B), F)

        temb = self._timestep_embedding(np.asarray(t_arr).reshape(-1))  # [B, td]
        temb_rows = index_rows(temb, rep)  # [B*F, td]
        f_ea = self._emotion_audio_context(cond, B, F)  # [B*F, ., d]
        e_f_rep = index_rows(cond.e_f, rep)
        e_t_rep = index_rows(cond.e_t, rep)

        h = conv2d(reshape(z_t, (B * F, C, H, W)), self.stem)
        skips = []
        for l in range(cfg.levels):
            h = self._conv_block(self.enc_blocks[l], h, temb_rows)
            skips.append(h)
            if l < cfg.levels - 1:
                h = conv2d(avg_pool2(h), self.down_convs[l])
        h = self._conv_block(self.mid_block, h, temb_rows)

        for l in reversed(range(cfg.levels)):
            if l < cfg.levels - 1:
                h = conv2d(upsample2(h), self.up_convs[l])
                h = conv2d(concat([h, skips[l]], axis=1), self.merge_convs[l])
            h = self._conv_block(self.dec_blocks[l], h, temb_rows)
            h = self._attention_stack(h, l, B, F, e_f_rep, e_t_rep, f_ea, cond.reference[l], rep,
                                      include_temporal)
        out = conv2d(h, self.head)
        return reshape(out, (B, F, C, H, W))

    def _attention_stack(self, h, level, B, F, e_f_rep, e_t_rep, f_ea, ref_tokens, rep,
                         include_temporal):
        p = self.level_attn[level]
        BF, C, Hl, Wl = h.shape
        N = Hl * Wl
        tokens = transpose(reshape(h, (BF, C, N)), (0, 2, 1))
        ref_rep = index_rows(ref_tokens, rep)
        tokens = tokens + reference_inject(tokens, ref_rep, p.ref)
        if p.decoupled is not None:
            tokens = tokens + decoupled_emotive_attention(tokens, e_f_rep, e_t_rep, p.decoupled)
        else:
            tokens = tokens + cross_attention(tokens, concat([e_t_rep, e_f_rep], axis=1), p.fused)
        h = reshape(transpose(tokens, (0, 2, 1)), (BF, C, Hl, Wl))
        h = h + region_audio_attention(h, f_ea, self.masks_per_level[level], p.region)
        if include_temporal:
            frames_view = reshape(h, (B, F, C, Hl, Wl))
            frames_view = frames_view + temporal_attention(frames_view, p.temporal)
            h = reshape(frames_view, (BF, C, Hl, Wl))
        return h


def build_model(arch_config: ArchConfig, seed: int) -> EmoCastModel:
    """Deterministic model construction: two builds with one seed are
    bit-identical."""
    return EmoCastModel(arch_config, seed)


def predict_noise(
    model: EmoCastModel, z_t: Tensor, t: int, cond: Conditions, include_temporal: bool = True
) -> Tensor:
    """Single-sample surface: z_t is [F, C, H, W]."""
    if z_t.data.ndim != 4:
        raise ShapeError(f"expected [F, C, H, W] latents, got {z_t.shape}")
    out = model.predict_noise_batch(
        reshape(z_t, (1,) + tuple(z_t.shape)), np.array([t]), cond, include_temporal
    )
    return reshape(out, tuple(z_t.shape))


def build_conditions(model: EmoCastModel, reference_frames, emotions, audio_windows) -> Conditions:
    """Assemble the condition set for a batch.

    reference_frames: [B, C, H, W]; emotions: list of (label, intensity);
    audio_windows: [B, F, d_audio] raw features.
    """
    dt = model.config.np_dtype
    bank = model.bank
    e_f = np.concatenate([bank.face_from_frame(f).data for f in reference_frames], axis=0)
    e_t = np.concatenate([bank.emotion(lbl, inten).data for (lbl, inten) in emotions], axis=0)
    e_a = np.stack([bank.audio(w).data for w in audio_windows], axis=0)
    reference = model.encode_reference(np.asarray(reference_frames, dtype=dt))
    return Conditions(
        e_f=Tensor(e_f[:, None, :]),
        e_t=Tensor(e_t[:, None, :]),
        e_a=Tensor(e_a),
        reference=reference,
    )
