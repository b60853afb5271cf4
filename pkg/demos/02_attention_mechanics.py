"""Show the conditioning attention pieces one by one: decoupled face/text
branches sharing a query, the emotion-aware audio feature, and the
region-masked audio attention with its combiner.
"""

import numpy as np

import emocast as ec
from emocast import attention as attn

rng = ec.Rng.from_seed(1)
d_model, d_cond, d = 6, 8, 8

# Decoupled emotive attention: the identity branch and the text branch are
# additive, so zeroing the text values recovers the face-only output exactly.
params = attn.make_decoupled_params(rng.split("dec"), d_model, d_cond, d_cond, d, dtype=np.float64)
z = ec.Tensor(rng.normal((5, d_model)))
e_f = ec.Tensor(rng.normal((1, d_cond)))
e_t = ec.Tensor(rng.normal((1, d_cond)))
both = attn.decoupled_emotive_attention(z, e_f, e_t, params)
params.text_v.data[:] = 0.0
face_only = attn.decoupled_emotive_attention(z, e_f, e_t, params)
print("text branch contribution norm:", float(np.abs(both.data - face_only.data).max()))

# Emotion-aware audio feature: emotion tokens attending over audio frames.
eq3 = attn.make_cross_attention_params(rng.split("eq3"), d_cond, d_cond, d, d_out=d, dtype=np.float64)
audio_tokens = ec.Tensor(rng.normal((6, d_cond)))
f_ea = attn.emotive_audio_feature(e_t, audio_tokens, eq3)
print("f_ea shape:", f_ea.shape)

# Region attention: content flows only inside each region's mask.
masks = attn.RegionMasks.from_rects(
    (8, 8),
    {
        "lip": {"top": 5, "left": 2, "height": 2, "width": 4},
        "exp": {"top": 1, "left": 1, "height": 3, "width": 3},
        "pose": {"top": 1, "left": 5, "height": 2, "width": 2},
    },
)
region = attn.make_emotive_audio_params(rng.split("region"), channels=3, d=d, d_text=d_cond, dtype=np.float64)
f_v = ec.Tensor(rng.normal((3, 8, 8)))
f_lip, f_exp, f_pose = attn.region_features(f_v, f_ea, masks, region)
print("lip feature is zero off-mask:", bool(np.all(f_lip.data[:, masks.lip.data == 0] == 0)))

out = attn.region_audio_attention(f_v, f_ea, masks, region)
print("combined region contribution (zero-init combiner):", float(np.abs(out.data).max()))

# ASCII view of the three masks on the grid.
glyph = {0: ".", 1: "L", 2: "E", 3: "P"}
board = masks.lip.data + 2 * masks.exp.data + 3 * masks.pose.data
print("\nregion layout (L=lip, E=expression, P=pose):")
for row in board.astype(int):
    print("  " + "".join(glyph[v] for v in row))
