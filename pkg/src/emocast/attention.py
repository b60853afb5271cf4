"""Attention machinery for the emotional talking-head denoiser.

Five mechanisms, all single-head scaled dot-product attention over explicit
projection matrices:

* generic cross-attention (queries from one stream, keys/values from another)
* decoupled emotive attention: two parallel branches (face identity tokens,
  emotion text tokens) sharing one query projection, summed after a shared
  per-branch output projection
* emotion-aware audio features: emotion tokens attending over audio frames
* region audio attention: three independent cross-attentions of visual tokens
  against the emotion-aware audio feature, Hadamard-masked to the lip,
  expression and pose regions, then fused by a 1x1 combiner convolution
* temporal attention across the frame axis at every spatial location, and
  reference injection (self-attention whose keys/values include the
  reference tokens)

All functions accept an optional leading batch axis on the token arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .rng import Rng
from .tensor import (
    ShapeError,
    Tensor,
    concat,
    conv2d,
    mask_apply,
    matmul,
    reshape,
    scale,
    softmax,
    transpose,
)


def _swap_last2(x: Tensor) -> Tensor:
    n = x.data.ndim
    axes = tuple(range(n - 2)) + (n - 1, n - 2)
    return transpose(x, axes)


def uniform_init(rng: Rng, shape, dtype=np.float32) -> Tensor:
    """uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); fan_in is the first axis."""
    bound = 1.0 / math.sqrt(shape[0])
    return Tensor(rng.uniform(-bound, bound, shape, dtype=dtype), requires_grad=True)


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------


@dataclass
class CrossAttentionParams:
    """Projections for one attention block.

    w_q: [d_model, d]; w_k, w_v: [d_ctx, d]; w_o: [d, d_out]. The scaling
    denominator is sqrt(d).
    """

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    d: int

    def named(self, prefix: str):
        return [
            (f"{prefix}.w_q", self.w_q),
            (f"{prefix}.w_k", self.w_k),
            (f"{prefix}.w_v", self.w_v),
            (f"{prefix}.w_o", self.w_o),
        ]


def make_cross_attention_params(
    rng: Rng,
    d_model: int,
    d_ctx: int,
    d: int,
    d_out: Optional[int] = None,
    zero_output: bool = False,
    dtype=np.float32,
) -> CrossAttentionParams:
    d_out = d_model if d_out is None else d_out
    w_o = (
        Tensor(np.zeros((d, d_out), dtype=dtype), requires_grad=True)
        if zero_output
        else uniform_init(rng.split("w_o"), (d, d_out), dtype)
    )
    return CrossAttentionParams(
        w_q=uniform_init(rng.split("w_q"), (d_model, d), dtype),
        w_k=uniform_init(rng.split("w_k"), (d_ctx, d), dtype),
        w_v=uniform_init(rng.split("w_v"), (d_ctx, d), dtype),
        w_o=w_o,
        d=d,
    )


@dataclass
class DecoupledEmotiveParams:
    """Two parallel branches sharing a single query projection instance."""

    w_q: Tensor
    face_k: Tensor
    face_v: Tensor
    text_k: Tensor
    text_v: Tensor
    w_o: Tensor
    d: int

    def named(self, prefix: str):
        return [
            (f"{prefix}.w_q", self.w_q),
            (f"{prefix}.face_k", self.face_k),
            (f"{prefix}.face_v", self.face_v),
            (f"{prefix}.text_k", self.text_k),
            (f"{prefix}.text_v", self.text_v),
            (f"{prefix}.w_o", self.w_o),
        ]


def make_decoupled_params(
    rng: Rng, d_model: int, d_face: int, d_text: int, d: int, dtype=np.float32
) -> DecoupledEmotiveParams:
    return DecoupledEmotiveParams(
        w_q=uniform_init(rng.split("w_q"), (d_model, d), dtype),
        face_k=uniform_init(rng.split("face_k"), (d_face, d), dtype),
        face_v=uniform_init(rng.split("face_v"), (d_face, d), dtype),
        text_k=uniform_init(rng.split("text_k"), (d_text, d), dtype),
        text_v=uniform_init(rng.split("text_v"), (d_text, d), dtype),
        w_o=uniform_init(rng.split("w_o"), (d, d_model), dtype),
        d=d,
    )


@dataclass
class RegionMasks:
    """Binary lip / expression / pose masks over a latent grid."""

    lip: Tensor
    exp: Tensor
    pose: Tensor

    def __post_init__(self):
        shapes = {tuple(self.lip.shape), tuple(self.exp.shape), tuple(self.pose.shape)}
        if len(shapes) != 1:
            raise ShapeError(f"region masks disagree on grid shape: {shapes}")
        for name, m in (("lip", self.lip), ("exp", self.exp), ("pose", self.pose)):
            md = m.data
            if not np.all((md == 0) | (md == 1)):
                raise ValueError(f"{name} mask has non-binary entries")

    @property
    def grid(self):
        return tuple(self.lip.shape)

    @classmethod
    def from_rects(cls, grid_hw, rects: dict, dtype=np.float32) -> "RegionMasks":
        """Build masks from {top, left, height, width} rectangles; each must
        be nonempty and inside the grid."""
        H, W = grid_hw
        out = {}
        for name in ("lip", "exp", "pose"):
            r = rects[name]
            t, l, h, w = r["top"], r["left"], r["height"], r["width"]
            if h <= 0 or w <= 0:
                raise ValueError(f"{name} rectangle is empty")
            if t < 0 or l < 0 or t + h > H or l + w > W:
                raise ValueError(f"{name} rectangle {r} exceeds the {H}x{W} grid")
            m = np.zeros((H, W), dtype=dtype)
            m[t : t + h, l : l + w] = 1.0
            out[name] = Tensor(m)
        return cls(lip=out["lip"], exp=out["exp"], pose=out["pose"])

    def downsample2(self) -> "RegionMasks":
        """Halve resolution; a coarse cell is active if any covered fine cell is."""

        def down(m: Tensor) -> Tensor:
            d = m.data
            H, W = d.shape
            blocks = d.reshape(H // 2, 2, W // 2, 2)
            return Tensor(blocks.max(axis=(1, 3)))

        return RegionMasks(lip=down(self.lip), exp=down(self.exp), pose=down(self.pose))


@dataclass
class EmotiveAudioParams:
    """Eq-style audio conditioning bundle: text-to-audio attention producing
    the emotion-aware audio feature, three region attentions over it, and the
    channel combiner (1x1 convolution over the three concatenated maps)."""

    audio_feature: CrossAttentionParams
    lip: CrossAttentionParams
    exp: CrossAttentionParams
    pose: CrossAttentionParams
    combiner: Tensor  # [C, 3C, 1, 1]

    def __post_init__(self):
        c_out, c_in, kh, kw = self.combiner.shape
        if c_in != 3 * c_out:
            raise ShapeError(f"combiner must map 3C -> C channels, got {c_in} -> {c_out}")

    def named(self, prefix: str, include_audio_feature: bool = True):
        out = []
        if include_audio_feature:
            out += self.audio_feature.named(f"{prefix}.audio_feature")
        for region in ("lip", "exp", "pose"):
            out += getattr(self, region).named(f"{prefix}.{region}")
        out.append((f"{prefix}.combiner", self.combiner))
        return out


def make_emotive_audio_params(
    rng: Rng,
    channels: int,
    d: int,
    audio_feature: Optional[CrossAttentionParams] = None,
    d_text: Optional[int] = None,
    d_cond: Optional[int] = None,
    dtype=np.float32,
) -> EmotiveAudioParams:
    if audio_feature is None:
        audio_feature = make_cross_attention_params(
            rng.split("audio_feature"), d_text, d, d, d_out=d, dtype=dtype
        )
    regions = {
        name: make_cross_attention_params(rng.split(name), channels, d, d, dtype=dtype)
        for name in ("lip", "exp", "pose")
    }
    combiner = Tensor(np.zeros((channels, 3 * channels, 1, 1), dtype=dtype), requires_grad=True)
    return EmotiveAudioParams(audio_feature=audio_feature, combiner=combiner, **regions)


# ---------------------------------------------------------------------------
# Embedding bank: synthetic stand-ins for the pretrained encoders
# ---------------------------------------------------------------------------


class EmbeddingBank:
    """Frozen lookup tables and projections producing condition embeddings.

    Stands in for the pretrained face encoder (identity -> e_f), text encoder
    (emotion prompt -> e_t) and audio encoder projection (frame features ->
    e_a). All buffers are fixed at build time; downstream attention
    projections do the learning.
    """

    def __init__(
        self,
        identity_table: dict[str, np.ndarray],
        emotion_table: dict[str, np.ndarray],
        audio_proj: np.ndarray,
        frame_embed: np.ndarray,
        dtype=np.float32,
    ):
        self.identity_table = identity_table
        self.emotion_table = emotion_table
        self.audio_proj = audio_proj
        self.frame_embed = frame_embed
        self.dtype = dtype
        dims = {v.shape[-1] for v in identity_table.values()}
        dims |= {v.shape[-1] for v in emotion_table.values()}
        dims |= {audio_proj.shape[1], frame_embed.shape[1]}
        if len(dims) != 1:
            raise ShapeError(f"embedding bank dimensionality disagrees: {dims}")
        self.d_cond = dims.pop()

    @classmethod
    def build(cls, rng: Rng, identities, emotion_labels, d_cond, d_audio, frame_size, dtype=np.float32):
        s = 1.0 / math.sqrt(d_cond)
        ident = {
            i: rng.split(f"identity/{i}").normal((1, d_cond)).astype(dtype) * s
            for i in identities
        }
        emo = {
            e: rng.split(f"emotion/{e}").normal((1, d_cond)).astype(dtype) * s
            for e in emotion_labels
        }
        audio_proj = (rng.split("audio_proj").normal((d_audio, d_cond)) / math.sqrt(d_audio)).astype(dtype)
        frame_embed = (rng.split("frame_embed").normal((frame_size, d_cond)) / math.sqrt(frame_size)).astype(dtype)
        return cls(ident, emo, audio_proj, frame_embed, dtype=dtype)

    def face(self, identity_id: str) -> Tensor:
        if identity_id not in self.identity_table:
            raise KeyError(f"unknown identity {identity_id!r}")
        return Tensor(self.identity_table[identity_id])

    def face_from_frame(self, frame: np.ndarray) -> Tensor:
        """e_f for an arbitrary reference frame via the frozen linear embedder."""
        flat = np.asarray(frame, dtype=self.dtype).reshape(1, -1)
        if flat.shape[1] != self.frame_embed.shape[0]:
            raise ShapeError(
                f"frame has {flat.shape[1]} values, embedder expects {self.frame_embed.shape[0]}"
            )
        return Tensor(flat @ self.frame_embed)

    def emotion(self, label: str, intensity: float) -> Tensor:
        """e_t for one prompt token; intensity scales the label embedding."""
        if label not in self.emotion_table:
            raise KeyError(f"unknown emotion label {label!r}")
        return Tensor(self.emotion_table[label] * np.asarray(intensity, dtype=self.dtype))

    def audio(self, features: np.ndarray) -> Tensor:
        """Project raw per-frame audio features [F, d_audio] to e_a tokens."""
        feats = np.asarray(features, dtype=self.dtype)
        if feats.ndim != 2 or feats.shape[1] != self.audio_proj.shape[0]:
            raise ShapeError(
                f"audio features {feats.shape} incompatible with projection {self.audio_proj.shape}"
            )
        return Tensor(feats @ self.audio_proj)

    def named_buffers(self, prefix: str = "bank"):
        out = []
        for i in sorted(self.identity_table):
            out.append((f"{prefix}.identity.{i}", self.identity_table[i]))
        for e in sorted(self.emotion_table):
            out.append((f"{prefix}.emotion.{e}", self.emotion_table[e]))
        out.append((f"{prefix}.audio_proj", self.audio_proj))
        out.append((f"{prefix}.frame_embed", self.frame_embed))
        return out


# ---------------------------------------------------------------------------
# Attention operations
# ---------------------------------------------------------------------------


def _attend(q: Tensor, ctx: Tensor, w_k: Tensor, w_v: Tensor, d: int) -> Tensor:
    """softmax(q k^T / sqrt(d)) v for a precomputed query projection.

    The 1/sqrt(d) scaling is applied to q (cheaper than scaling the score
    matrix; same quantity).
    """
    if ctx.shape[-2] == 0:
        raise ShapeError("attention over an empty context")
    k = matmul(ctx, w_k)
    v = matmul(ctx, w_v)
    a = softmax(matmul(scale(q, 1.0 / math.sqrt(d)), _swap_last2(k)), axis=-1)
    return matmul(a, v)


def cross_attention(queries_in: Tensor, context: Tensor, params: CrossAttentionParams) -> Tensor:
    """out = softmax(Q K^T / sqrt(d)) V, projected by the output matrix."""
    q = matmul(queries_in, params.w_q)
    return matmul(_attend(q, context, params.w_k, params.w_v, params.d), params.w_o)


def decoupled_emotive_attention(
    z_tokens: Tensor, e_f: Tensor, e_t: Tensor, params: DecoupledEmotiveParams
) -> Tensor:
    """Sum of the face and text attention branches over a shared query.

    The output projection is applied per branch before summation, so the
    face-only output plus the text-only output equals the fused output
    bit-exactly.
    """
    q = matmul(z_tokens, params.w_q)
    try:
        face = _attend(q, e_f, params.face_k, params.face_v, params.d)
    except ShapeError as e:
        raise ShapeError(f"face branch: {e}") from None
    try:
        text = _attend(q, e_t, params.text_k, params.text_v, params.d)
    except ShapeError as e:
        raise ShapeError(f"text branch: {e}") from None
    return matmul(face, params.w_o) + matmul(text, params.w_o)


def emotive_audio_feature(e_t: Tensor, e_a: Tensor, params: CrossAttentionParams) -> Tensor:
    """Emotion-aware audio feature: emotion tokens attend over audio frames."""
    if e_a.shape[-2] == 0:
        raise ShapeError("emotive_audio_feature: empty audio context")
    return cross_attention(e_t, e_a, params)


def region_features(
    f_v: Tensor, f_ea: Tensor, masks: RegionMasks, params: EmotiveAudioParams
) -> tuple[Tensor, Tensor, Tensor]:
    """The three masked region maps, before combination.

    f_v is [C, H, W] or [B, C, H, W]; f_ea is [N_t, d] or [B, N_t, d].
    """
    batched = f_v.data.ndim == 4
    shape = f_v.shape
    C, H, W = shape[-3], shape[-2], shape[-1]
    if masks.grid != (H, W):
        raise ShapeError(f"masks are {masks.grid} but features are {(H, W)}")
    if batched:
        tokens = transpose(reshape(f_v, (shape[0], C, H * W)), (0, 2, 1))
    else:
        tokens = transpose(reshape(f_v, (C, H * W)), (1, 0))

    def one(region_params: CrossAttentionParams, mask: Tensor) -> Tensor:
        att = cross_attention(tokens, f_ea, region_params)
        if batched:
            grid = reshape(transpose(att, (0, 2, 1)), (shape[0], C, H, W))
        else:
            grid = reshape(transpose(att, (1, 0)), (C, H, W))
        return mask_apply(grid, mask)

    return (
        one(params.lip, masks.lip),
        one(params.exp, masks.exp),
        one(params.pose, masks.pose),
    )


def region_audio_attention(
    f_v: Tensor, f_ea: Tensor, masks: RegionMasks, params: EmotiveAudioParams
) -> Tensor:
    """Masked lip/exp/pose attention maps fused by the 1x1 combiner.

    Returns the residual contribution; the caller adds it to f_v.
    """
    f_lip, f_exp, f_pose = region_features(f_v, f_ea, masks, params)
    stacked = concat([f_lip, f_exp, f_pose], axis=-3)
    return conv2d(stacked, params.combiner)


def temporal_attention(frames: Tensor, params: CrossAttentionParams) -> Tensor:
    """Self-attention over the frame axis at each spatial location.

    frames is [F, C, H, W] or [B, F, C, H, W]; returns the residual
    contribution (zero at init because the output projection starts at zero).
    """
    batched = frames.data.ndim == 5
    shape = frames.shape
    F, C, H, W = shape[-4], shape[-3], shape[-2], shape[-1]
    if batched:
        toks = transpose(reshape(frames, (shape[0], F, C, H * W)), (0, 3, 1, 2))  # [B,HW,F,C]
    else:
        toks = transpose(reshape(frames, (F, C, H * W)), (2, 0, 1))  # [HW,F,C]
    q = matmul(toks, params.w_q)
    out = matmul(_attend(q, toks, params.w_k, params.w_v, params.d), params.w_o)
    if batched:
        return reshape(transpose(out, (0, 2, 3, 1)), shape)
    return reshape(transpose(out, (1, 2, 0)), shape)


def reference_inject(
    self_attn_tokens: Tensor, reference_tokens: Tensor, params: CrossAttentionParams
) -> Tensor:
    """Self-attention whose keys/values span [self tokens; reference tokens].

    Queries come from the self tokens only. Returns the attended output
    (residual contribution).
    """
    if self_attn_tokens.shape[-1] != reference_tokens.shape[-1]:
        raise ShapeError(
            f"token dims differ: {self_attn_tokens.shape[-1]} vs {reference_tokens.shape[-1]}"
        )
    if reference_tokens.shape[-2] == 0:
        kv = self_attn_tokens
    else:
        kv = concat([self_attn_tokens, reference_tokens], axis=-2)
    q = matmul(self_attn_tokens, params.w_q)
    return matmul(_attend(q, kv, params.w_k, params.w_v, params.d), params.w_o)
