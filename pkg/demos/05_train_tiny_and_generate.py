"""Overfit a tiny world in the spatial stage, then reconstruct a training
frame by sampling: the conditional diffusion loop end to end.

Runs in about a minute.
"""

import numpy as np

import emocast as ec
from emocast.sampling import single_phase_curriculum

world = ec.synth_generate(
    ec.SyntheticWorldConfig(
        n_identities=1,
        emotions=("neutral", "happy"),
        clips_per_identity_emotion=1,
        frames_per_clip=2,
        wild_clips_per_identity=0,
        highsync_clips_per_identity=0,
        grid=(8, 8),
        audio_dim=4,
        regions={
            "lip": {"top": 5, "left": 2, "height": 2, "width": 4},
            "exp": {"top": 1, "left": 1, "height": 3, "width": 3},
            "pose": {"top": 1, "left": 5, "height": 2, "width": 2},
        },
        seed=5,
    )
)
arch = ec.ArchConfig(
    grid=(8, 8), level_channels=(6, 12), attn_dim=16, cond_dim=16, time_dim=16,
    audio_dim=4, frames=1, emotions=world.config.emotions,
    identities=tuple(world.config.identity_ids), regions=world.config.regions,
)
model = ec.build_model(arch, seed=2)
print("parameters:", model.parameter_count())

steps = 600
cfg = ec.TrainConfig(stage="spatial", steps=steps, curriculum=single_phase_curriculum(steps),
                     batch_size=4, window=1, lr=2e-3, seed=0)
state = ec.train(model, world.manifest, world.store, cfg)
trace = state.loss_trace
print(f"loss: {trace[0]:.3f} -> {np.mean(trace[-50:]):.4f} over {steps} steps")

happy = next(r for r in world.manifest.records if r.emotion_label == "happy")
neutral = next(r for r in world.manifest.records if r.emotion_label == "neutral")
target = world.store.frames(happy)[0]
gen = ec.generate(
    model,
    world.store.frames(neutral)[0],
    world.store.audio(happy)[:1],
    "happy",
    happy.intensity,
    seed=9,
    frames=1,
    steps=25,
    include_temporal=False,
)
mse = float(((gen[0] - target) ** 2).mean())
print(f"reconstruction mse vs the training frame: {mse:.4f}")

rows, cols = world.region_slices("exp")
print("expression region, target vs generated (rounded):")
print(np.round(target[0, rows, cols], 1))
print(np.round(gen[0][0, rows, cols], 1))
