"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The end-to-end criteria (6-8, 10) train real models; the whole module takes
tens of minutes. Run `pytest tests/test_acceptance.py -v -s` to watch the
per-criterion lines, or `pytest -m "not slow"` elsewhere to skip the long
runs.
"""

import math
import time
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest
from scipy import stats

import emocast as ec
from emocast import attention as attn
from emocast import diffusion as dif
from emocast import evaluate as ev
from emocast import sampling as sp
from emocast.experiment import ExperimentConfig, apply_ablation, evaluate_model, train_pipeline
from emocast.model import build_conditions
from emocast.sampling import single_phase_curriculum
from emocast.training import TrainConfig, generate, restore_trainer_state
from emocast.world import SyntheticWorldConfig

from helpers import assert_grad_close, softmax_np


def report(criterion: int, ok: bool, detail: str):
    print(f"ACCEPTANCE criterion {criterion}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {criterion}: {detail}"


# ---------------------------------------------------------------------------
# Shared end-to-end configuration (criteria 7, 8, 10)
# ---------------------------------------------------------------------------

E2E_REGIONS = {
    "lip": {"top": 9, "left": 4, "height": 6, "width": 8},
    "exp": {"top": 1, "left": 1, "height": 6, "width": 6},
    "pose": {"top": 1, "left": 10, "height": 5, "width": 4},
}


def e2e_config() -> ExperimentConfig:
    return ExperimentConfig(
        seed=0,
        world=SyntheticWorldConfig(
            n_identities=2,
            emotions=("neutral", "happy", "angry"),
            clips_per_identity_emotion=2,
            frames_per_clip=24,
            wild_clips_per_identity=3,
            wild_shuffled_fraction=0.6,
            highsync_clips_per_identity=2,
            regions={k: dict(v) for k, v in E2E_REGIONS.items()},
            seed=0,
        ),
        total_steps=4000,
        spatial_fraction=0.8,
        spatial_batch=4,
        temporal_batch=2,
        lr=2e-3,
        eval_frames=12,
        sampler_steps=40,
    )


@pytest.fixture(scope="module")
def base_run():
    cfg = e2e_config()
    start = time.monotonic()
    world, model, training = train_pipeline(cfg)
    train_seconds = time.monotonic() - start
    rep = evaluate_model(model, world, cfg)
    return SimpleNamespace(
        cfg=cfg, world=world, model=model, training=training, report=rep,
        train_seconds=train_seconds,
    )


# ---------------------------------------------------------------------------
# Criterion 1: gradient suite
# ---------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_1_gradient_suite():
    start = time.monotonic()
    rng = ec.Rng.from_seed(101)

    def fd(f, x, h=1e-5):
        g = np.zeros_like(x)
        flat, gf = x.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = f()
            flat[i] = old - h
            fm = f()
            flat[i] = old
            gf[i] = (fp - fm) / (2 * h)
        return g

    ops = [
        ("add", lambda xs: xs[0] + xs[1], [(3, 4), (3, 4)]),
        ("sub", lambda xs: xs[0] - xs[1], [(3, 4), (3, 4)]),
        ("mul", lambda xs: xs[0] * xs[1], [(3, 4), (3, 4)]),
        ("scale", lambda xs: ec.scale(xs[0], 1.3), [(3, 4)]),
        ("matmul", lambda xs: xs[0] @ xs[1], [(3, 4), (4, 2)]),
        ("softmax", lambda xs: ec.softmax(xs[0], axis=1), [(3, 5)]),
        ("log_softmax", lambda xs: ec.log_softmax(xs[0], axis=1), [(3, 5)]),
        ("silu", lambda xs: ec.silu(xs[0]), [(4, 4)]),
        ("conv2d", lambda xs: ec.conv2d(xs[0], xs[1]), [(2, 4, 4), (3, 2, 3, 3)]),
        ("avg_pool2", lambda xs: ec.avg_pool2(xs[0]), [(1, 2, 4, 4)]),
        ("upsample2", lambda xs: ec.upsample2(xs[0]), [(1, 2, 3, 3)]),
        ("concat", lambda xs: ec.concat([xs[0], xs[1]], axis=1), [(2, 3), (2, 2)]),
        ("mask", lambda xs: ec.mask_apply(xs[0], ec.Tensor(np.eye(3))), [(3, 3)]),
        ("index_rows", lambda xs: ec.index_rows(xs[0], [0, 2, 1, 2]), [(3, 4)]),
        ("reshape", lambda xs: ec.reshape(xs[0], (12,)), [(3, 4)]),
        ("transpose", lambda xs: ec.transpose(xs[0], (1, 0)), [(3, 4)]),
        ("sum", lambda xs: ec.tsum(xs[0], axis=0), [(3, 4)]),
        ("mean", lambda xs: ec.tmean(xs[0], axis=1), [(3, 4)]),
        ("mse", lambda xs: ec.mse_loss(xs[0], xs[1]), [(3, 4), (3, 4)]),
        ("attention", None, None),  # handled below
    ]
    for name, op, shapes in ops:
        if op is None:
            continue
        xs = [ec.Tensor(rng.normal(s), requires_grad=True) for s in shapes]
        proj = rng.normal(op(xs).shape)

        def forward():
            return ec.tsum(op(xs) * ec.Tensor(proj))

        ec.backward(forward())
        grads = [x.grad.copy() for x in xs]

        def eval_loss():
            with ec.no_grad():
                return forward().item()

        for x, g in zip(xs, grads):
            assert_grad_close(g, fd(eval_loss, x.data))

    # full-model finite differences on a random parameter slice (float64)
    arch = ec.ArchConfig(
        grid=(8, 8), level_channels=(4, 8), attn_dim=8, cond_dim=8, time_dim=8,
        audio_dim=4, frames=2, emotions=("neutral", "happy"), identities=("id0",),
        regions={
            "lip": {"top": 5, "left": 2, "height": 2, "width": 3},
            "exp": {"top": 1, "left": 1, "height": 3, "width": 3},
            "pose": {"top": 1, "left": 5, "height": 2, "width": 2},
        },
        dtype="float64",
    )
    model = ec.build_model(arch, seed=7)
    model.set_stage("temporal", finetune_spatial=True)
    refs = rng.normal((1, 1, 8, 8))
    audio = [rng.normal((2, 4))]
    z = ec.Tensor(rng.normal((1, 2, 1, 8, 8)))
    t_arr = np.array([13])
    target = rng.normal(z.shape)

    def model_loss():
        cond = build_conditions(model, refs, [("happy", 0.7)], audio)
        pred = model.predict_noise_batch(z, t_arr, cond, include_temporal=True)
        return ec.mse_loss(pred, ec.Tensor(target))

    ec.backward(model_loss())
    picked = ["attn1.decoupled.w_q", "attn0.region.lip.w_k", "audio_feature.w_v",
              "attn1.temporal.w_v", "enc0.conv1", "merge0", "head"]
    saved = {n: model.params[n].grad.copy() for n in picked}

    def eval_model_loss():
        with ec.no_grad():
            return model_loss().item()

    checked = 0
    for name in picked:
        p = model.params[name]
        idx = ec.Rng.from_seed(abs(hash(name)) % 2**31).permutation(p.data.size)[:5]
        flat = p.data.reshape(-1)
        num = np.zeros(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + 1e-5
            fp = eval_model_loss()
            flat[i] = old - 1e-5
            fm = eval_model_loss()
            flat[i] = old
            num[j] = (fp - fm) / 2e-5
        assert_grad_close(saved[name].reshape(-1)[idx], num)
        checked += len(idx)

    elapsed = time.monotonic() - start
    report(1, elapsed < 120,
           f"all op gradchecks + {checked} full-model coordinates at rel<=1e-4 in {elapsed:.0f}s < 120s")


# ---------------------------------------------------------------------------
# Criterion 2: attention exactness, 200 random cases each
# ---------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_2_attention_exactness():
    start = time.monotonic()
    worst = {"decoupled": 0.0, "audio_feature": 0.0, "region": 0.0}

    for case in range(200):
        rng = ec.Rng.from_seed(20_000 + case)
        p = attn.make_decoupled_params(rng.split("p"), 4, 3, 5, 6, dtype=np.float64)
        z, ef, et = rng.normal((3, 4)), rng.normal((2, 3)), rng.normal((2, 5))
        got = attn.decoupled_emotive_attention(
            ec.Tensor(z), ec.Tensor(ef), ec.Tensor(et), p
        ).data
        q = z @ p.w_q.data
        af = softmax_np(q @ (ef @ p.face_k.data).T / np.sqrt(p.d))
        at = softmax_np(q @ (et @ p.text_k.data).T / np.sqrt(p.d))
        oracle = (af @ (ef @ p.face_v.data)) @ p.w_o.data + (at @ (et @ p.text_v.data)) @ p.w_o.data
        worst["decoupled"] = max(worst["decoupled"], float(np.abs(got - oracle).max()))

    for case in range(200):
        rng = ec.Rng.from_seed(30_000 + case)
        p = attn.make_cross_attention_params(rng.split("p"), 5, 3, 4, d_out=4, dtype=np.float64)
        et, ea = rng.normal((2, 5)), rng.normal((6, 3))
        got = attn.emotive_audio_feature(ec.Tensor(et), ec.Tensor(ea), p).data
        A = softmax_np((et @ p.w_q.data) @ (ea @ p.w_k.data).T / np.sqrt(p.d))
        oracle = (A @ (ea @ p.w_v.data)) @ p.w_o.data
        worst["audio_feature"] = max(worst["audio_feature"], float(np.abs(got - oracle).max()))

    masks = attn.RegionMasks(
        lip=ec.Tensor(np.asarray([[1, 0, 0], [0, 0, 0], [0, 0, 0]], dtype=np.float64)),
        exp=ec.Tensor(np.asarray([[0, 1, 1], [0, 1, 1], [0, 0, 0]], dtype=np.float64)),
        pose=ec.Tensor(np.asarray([[0, 0, 0], [0, 0, 0], [1, 1, 0]], dtype=np.float64)),
    )
    for case in range(200):
        rng = ec.Rng.from_seed(40_000 + case)
        C, d = 2, 4
        p = attn.make_emotive_audio_params(rng.split("p"), channels=C, d=d, d_text=d, dtype=np.float64)
        p.combiner = ec.Tensor(rng.split("comb").normal((C, 3 * C, 1, 1)))
        f_v = rng.split("fv").normal((C, 3, 3))
        f_ea = rng.split("fea").normal((2, d))
        got = attn.region_audio_attention(ec.Tensor(f_v), ec.Tensor(f_ea), masks, p).data
        tokens = f_v.reshape(C, 9).T
        maps = []
        for name, m in (("lip", masks.lip), ("exp", masks.exp), ("pose", masks.pose)):
            rp = getattr(p, name)
            A = softmax_np((tokens @ rp.w_q.data) @ (f_ea @ rp.w_k.data).T / np.sqrt(rp.d))
            grid = ((A @ (f_ea @ rp.w_v.data)) @ rp.w_o.data).T.reshape(C, 3, 3)
            maps.append(grid * m.data[None])
        oracle = np.einsum("oc,chw->ohw", p.combiner.data[:, :, 0, 0], np.concatenate(maps, axis=0))
        worst["region"] = max(worst["region"], float(np.abs(got - oracle).max()))

    elapsed = time.monotonic() - start
    ok = all(v <= 1e-10 for v in worst.values()) and elapsed < 60
    report(2, ok, f"max errors {({k: f'{v:.1e}' for k, v in worst.items()})} <= 1e-10 in {elapsed:.0f}s < 60s")


# ---------------------------------------------------------------------------
# Criterion 3: decoupling property
# ---------------------------------------------------------------------------


def test_criterion_3_decoupling_property():
    worst = 0.0
    for case in range(20):
        rng = ec.Rng.from_seed(50_000 + case)
        p = attn.make_decoupled_params(rng.split("p"), 4, 3, 5, 6, dtype=np.float64)
        p.text_v.data[:] = 0.0
        z, ef, et = rng.normal((3, 4)), rng.normal((2, 3)), rng.normal((2, 5))
        zt, eft, ett = ec.Tensor(z), ec.Tensor(ef), ec.Tensor(et)
        both = attn.decoupled_emotive_attention(zt, eft, ett, p).data
        q = ec.matmul(zt, p.w_q)
        face_only = ec.matmul(attn._attend(q, eft, p.face_k, p.face_v, p.d), p.w_o).data
        worst = max(worst, float(np.abs(both - face_only).max()))
    report(3, worst <= 1e-12, f"zeroed text value branch reproduces face-only attention, max err {worst:.2e} <= 1e-12")


# ---------------------------------------------------------------------------
# Criterion 4: diffusion suite
# ---------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_4_diffusion_suite():
    start = time.monotonic()
    sched = dif.make_linear_schedule(50, 1.5e-3, 0.30)
    mono = bool(np.all(np.diff(sched.alpha_bar) < 0))

    t = 20
    ab = sched.alpha_bar_at(t)
    z0 = np.array([1.5, -0.5, 2.0, 0.25])
    n = 100_000
    eps = ec.Rng.from_seed(404).normal((n, 4))
    draws = math.sqrt(ab) * z0[None] + math.sqrt(1 - ab) * eps
    mean_ok = bool(np.all(np.abs(draws.mean(0) - math.sqrt(ab) * z0) < 3 * math.sqrt((1 - ab) / n)))
    var_ok = bool(np.all(np.abs(draws.var(0, ddof=1) - (1 - ab)) < 3 * (1 - ab) * math.sqrt(2 / (n - 1))))

    rng = ec.Rng.from_seed(405)
    z0r = rng.normal((4, 4))
    z = dif.q_sample(ec.Tensor(z0r), 50, ec.Tensor(rng.normal((4, 4))), sched)
    for t_, tp in dif.ddim_timesteps(50, 5):
        ab_ = sched.alpha_bar_at(t_)
        eps_true = (z.data - math.sqrt(ab_) * z0r) / math.sqrt(1 - ab_)
        z = dif.ddim_step(z, t_, tp, ec.Tensor(eps_true), sched, eta=0.0)
    ddim_mse = float(((z.data - z0r) ** 2).mean())

    model = lambda zt, tt: ec.scale(zt, 0.1)
    a = dif.sample_loop(model, (3, 3), sched, sampler="ddim", steps=7, seed=11)
    b = dif.sample_loop(model, (3, 3), sched, sampler="ddim", steps=7, seed=11)
    deterministic = bool(np.array_equal(a, b))

    elapsed = time.monotonic() - start
    ok = mono and mean_ok and var_ok and ddim_mse <= 1e-6 and deterministic and elapsed < 120
    report(4, ok,
           f"alpha-bar monotone={mono}, MC mean/var in 3SE={mean_ok}/{var_ok}, "
           f"perfect-denoiser ddim mse={ddim_mse:.1e} <= 1e-6, eta=0 bit-deterministic={deterministic}, "
           f"{elapsed:.0f}s < 120s")


# ---------------------------------------------------------------------------
# Criterion 5: sampler and curriculum contracts
# ---------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_5_sampler_curriculum_contracts():
    start = time.monotonic()
    world = ec.synth_generate(SyntheticWorldConfig(
        n_identities=2, emotions=("neutral", "happy", "angry"),
        clips_per_identity_emotion=2, frames_per_clip=12,
        wild_clips_per_identity=2, highsync_clips_per_identity=2, seed=3,
    ))
    by_id = {r.clip_id: r for r in world.manifest.records}
    rng = ec.Rng.from_seed(777)
    neutral_ids = [r.clip_id for r in world.manifest.neutral_clips("id0")]
    angry_ids = [r.clip_id for r in world.manifest.by_identity_emotion[("id0", "angry")]]
    counts = {(a, b): 0 for a in neutral_ids for b in angry_ids}
    violations = 0
    for _ in range(10_000):
        pair = sp.emotion_aware_sample(world.manifest, world.store, "id0", "angry", rng)
        ref = by_id[pair.meta["reference_clip"]]
        tgt = by_id[pair.meta["target_clip"]]
        if not (ref.identity_id == tgt.identity_id == "id0" and ref.emotion_label == "neutral"):
            violations += 1
        counts[(ref.clip_id, tgt.clip_id)] += 1
    _, p_val = stats.chisquare(np.array(list(counts.values())))

    cur = sp.SamplerConfig(curriculum=sp.progressive_curriculum(300), batch_size=8, window=2)
    phase3_ok = True
    for step in range(250, 300, 10):
        for pair in sp.batch_sample(step, world.manifest, world.store, cur, rng):
            tgt = by_id[pair.meta["target_clip"]]
            if tgt.source_tag != "neutral_highsync" or tgt.emotion_label != "neutral":
                phase3_ok = False

    elapsed = time.monotonic() - start
    ok = violations == 0 and p_val > 0.01 and phase3_ok and elapsed < 60
    report(5, ok,
           f"10^4 samples, 0 invariant violations={violations == 0}, chi-square p={p_val:.3f} > 0.01, "
           f"phase-3 batches neutral_highsync-only={phase3_ok}, {elapsed:.0f}s < 60s")


# ---------------------------------------------------------------------------
# Criterion 6: overfit reconstruction
# ---------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_6_overfit_reconstruction():
    start = time.monotonic()
    world = ec.synth_generate(SyntheticWorldConfig(
        n_identities=2, emotions=("neutral", "happy"), clips_per_identity_emotion=1,
        frames_per_clip=2, wild_clips_per_identity=0, highsync_clips_per_identity=0, seed=5,
    ))
    assert len(world.manifest) == 4
    arch = ec.ArchConfig(
        identities=tuple(world.config.identity_ids), emotions=world.config.emotions,
        regions=world.config.regions, frames=1,
    )
    model = ec.build_model(arch, seed=2)
    steps = 2000
    cfg = TrainConfig(stage="spatial", steps=steps, curriculum=single_phase_curriculum(steps),
                      batch_size=8, window=1, lr=2e-3, seed=0)
    state = ec.train(model, world.manifest, world.store, cfg)
    trace = state.loss_trace
    initial = trace[0]
    final = float(np.mean(trace[-100:]))
    ratio = final / initial

    mses = []
    for identity in world.manifest.identities:
        neutral = next(r for r in world.manifest.by_identity[identity] if r.emotion_label == "neutral")
        for rec in world.manifest.by_identity[identity]:
            frames = world.store.frames(rec)
            audio = world.store.audio(rec)
            for f_idx in range(rec.frame_count):
                ref_idx = 1 - f_idx if rec.emotion_label == "neutral" else 0
                gen = generate(
                    model, world.store.frames(neutral)[ref_idx], audio[f_idx : f_idx + 1],
                    rec.emotion_label, rec.intensity, seed=1000 + len(mses), frames=1,
                    steps=25, include_temporal=False,
                )
                mses.append(float(((gen[0] - frames[f_idx]) ** 2).mean()))
    recon = float(np.mean(mses))

    elapsed = time.monotonic() - start
    ok = ratio <= 0.05 and recon <= 0.05 and elapsed < 600
    report(6, ok,
           f"loss {initial:.3f} -> {final:.4f} (ratio {ratio:.4f} <= 0.05), "
           f"reconstruction mse {recon:.4f} <= 0.05 over {len(mses)} frames, {elapsed:.0f}s < 600s")


# ---------------------------------------------------------------------------
# Criterion 7: end-to-end desk-scale emotional generation
# ---------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_7_end_to_end(base_run):
    rep = base_run.report
    elapsed = base_run.train_seconds
    ok = rep.emotion_accuracy >= 0.90 and rep.lip_sync_correlation >= 0.5 and elapsed < 1800
    report(7, ok,
           f"emotion accuracy {rep.emotion_accuracy:.3f} >= 0.90, "
           f"lip-sync corr {rep.lip_sync_correlation:.3f} >= 0.5 on held-out audio, "
           f"training {elapsed:.0f}s < 1800s")


@pytest.mark.slow
def test_emotion_swap_moves_expression_region_more_than_pose(base_run):
    # swapping only the emotion label should mostly change the exp region
    world, model = base_run.world, base_run.model
    from emocast.experiment import neutral_reference_frame

    ref = neutral_reference_frame(world, "id0")
    energy = world.new_audio_track(8, ec.Rng.from_seed(999))
    feats = world.featurize_audio(energy)
    a = generate(model, ref, feats, "happy", 0.8, seed=77, frames=8,
                 steps=base_run.cfg.sampler_steps, schedule=base_run.cfg.schedule())
    b = generate(model, ref, feats, "angry", 0.8, seed=77, frames=8,
                 steps=base_run.cfg.sampler_steps, schedule=base_run.cfg.schedule())
    exp_rows, exp_cols = world.region_slices("exp")
    pose_rows, pose_cols = world.region_slices("pose")
    exp_mse = float(((a - b)[:, :, exp_rows, exp_cols] ** 2).mean())
    pose_mse = float(((a - b)[:, :, pose_rows, pose_cols] ** 2).mean())
    assert exp_mse > pose_mse, (exp_mse, pose_mse)


# ---------------------------------------------------------------------------
# Criterion 8: ablation directions (paired seeds)
# ---------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_8_ablation_directions(base_run):
    base = base_run.report
    results = {}
    for name in ("no_emotion_aware_sampling", "no_progressive", "no_decoupled"):
        cfg = apply_ablation(base_run.cfg, name)
        world, model, _ = train_pipeline(cfg)
        results[name] = evaluate_model(model, world, cfg, config_hash=base.config_hash, ablation=name)

    sampling_down = results["no_emotion_aware_sampling"].emotion_accuracy < base.emotion_accuracy
    progressive_down = results["no_progressive"].lip_sync_correlation < base.lip_sync_correlation
    decoupled_down = results["no_decoupled"].emotion_accuracy < base.emotion_accuracy
    hashes_ok = all(r.config_hash == base.config_hash for r in results.values())

    ok = sampling_down and progressive_down and decoupled_down and hashes_ok
    report(8, ok,
           f"acc: base {base.emotion_accuracy:.3f} | no_emotion_aware "
           f"{results['no_emotion_aware_sampling'].emotion_accuracy:.3f} | no_decoupled "
           f"{results['no_decoupled'].emotion_accuracy:.3f}; corr: base "
           f"{base.lip_sync_correlation:.3f} | no_progressive "
           f"{results['no_progressive'].lip_sync_correlation:.3f}; paired hashes={hashes_ok}")


# ---------------------------------------------------------------------------
# Criterion 9: persistence
# ---------------------------------------------------------------------------


def test_criterion_9_persistence(tmp_path):
    regions = {
        "lip": {"top": 5, "left": 2, "height": 2, "width": 3},
        "exp": {"top": 1, "left": 1, "height": 3, "width": 3},
        "pose": {"top": 1, "left": 5, "height": 2, "width": 2},
    }
    world = ec.synth_generate(SyntheticWorldConfig(
        n_identities=2, emotions=("neutral", "happy"), clips_per_identity_emotion=1,
        grid=(8, 8), frames_per_clip=6, audio_dim=4, regions=regions,
        wild_clips_per_identity=1, highsync_clips_per_identity=1, seed=0,
    ))
    arch = ec.ArchConfig(
        grid=(8, 8), level_channels=(4, 8), attn_dim=8, cond_dim=8, time_dim=8,
        audio_dim=4, frames=2, emotions=world.config.emotions,
        identities=tuple(world.config.identity_ids), regions=regions,
    )

    # checkpoint byte-identical round trip
    model = ec.build_model(arch, seed=4)
    p1, p2 = tmp_path / "a.emck", tmp_path / "b.emck"
    ec.save_checkpoint(model, p1, global_step=2, stage="spatial")
    restored, ckpt = ec.load_model(p1)
    ec.save_checkpoint(restored, p2, global_step=2, stage="spatial")
    roundtrip_ok = p1.read_bytes() == p2.read_bytes()

    # bit-exact training resume
    cfg = TrainConfig(stage="spatial", steps=8, curriculum=single_phase_curriculum(8),
                      batch_size=2, window=1, seed=0)
    m_full = ec.build_model(arch, seed=4)
    full = ec.train(m_full, world.manifest, world.store, cfg)
    m_part = ec.build_model(arch, seed=4)
    mid = ec.train(m_part, world.manifest, world.store, cfg, until_step=5)
    mid_path = tmp_path / "mid.emck"
    ec.save_checkpoint(m_part, mid_path, global_step=mid.step, stage=mid.stage,
                       optimizer_entries=mid.optimizer_entries([n for n, _ in m_part.trainable()]),
                       rng_states=mid.rng_state_arrays())
    m_res, ck = ec.load_model(mid_path)
    m_res.set_stage("spatial")
    rstate = restore_trainer_state(cfg, ck.entries, [n for n, _ in m_res.trainable()])
    done = ec.train(m_res, world.manifest, world.store, cfg, state=rstate)
    resume_ok = (mid.loss_trace + done.loss_trace == full.loss_trace) and all(
        np.array_equal(m_full.params[n].data, m_res.params[n].data) for n in m_full.params
    )

    # manifest byte-identical round trip
    mp1, mp2 = tmp_path / "m1.jsonl", tmp_path / "m2.jsonl"
    ec.save_manifest(world.manifest, mp1)
    ec.save_manifest(ec.load_manifest(mp1), mp2)
    manifest_ok = mp1.read_bytes() == mp2.read_bytes()

    ok = roundtrip_ok and resume_ok and manifest_ok
    report(9, ok,
           f"checkpoint save/load/save byte-identical={roundtrip_ok}, "
           f"resume reproduces trace bit-exactly={resume_ok}, manifest round-trip byte-identical={manifest_ok}")


# ---------------------------------------------------------------------------
# Criterion 10: determinism of the full run
# ---------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_10_determinism(base_run):
    cfg = e2e_config()
    world2, model2, training2 = train_pipeline(cfg)
    traces_equal = base_run.training.loss_trace == training2.loss_trace

    from emocast.experiment import neutral_reference_frame

    ref1 = neutral_reference_frame(base_run.world, "id0")
    ref2 = neutral_reference_frame(world2, "id0")
    energy = base_run.world.new_audio_track(8, ec.Rng.from_seed(31337))
    feats1 = base_run.world.featurize_audio(energy)
    feats2 = world2.featurize_audio(energy)
    g1 = generate(base_run.model, ref1, feats1, "happy", 0.8, seed=5, frames=8,
                  steps=cfg.sampler_steps, schedule=cfg.schedule())
    g2 = generate(model2, ref2, feats2, "happy", 0.8, seed=5, frames=8,
                  steps=cfg.sampler_steps, schedule=cfg.schedule())
    frames_equal = bool(np.array_equal(g1, g2))

    ok = traces_equal and frames_equal
    report(10, ok,
           f"identical loss traces={traces_equal} ({len(training2.loss_trace)} steps), "
           f"identical generated frames={frames_equal}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v", "-s"]))
