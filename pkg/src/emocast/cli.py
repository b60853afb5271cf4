"""Command-line surface.

Subcommands: synth-data, train, generate, eval, ablate, inspect-manifest.
Exit codes: 0 success, 1 usage error, 2 data/model error. The EMOCAST_SEED
environment variable overrides the config seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_model, save_checkpoint
from .experiment import (
    ABLATIONS,
    ExperimentConfig,
    evaluate_model,
    load_experiment_config,
    run_ablation,
    train_pipeline,
)
from .manifest import ManifestError, load_manifest, read_array, write_array
from .model import MissingConditionError
from .sampling import SamplingError
from .tensor import ShapeError
from .training import TrainingDivergedError, generate
from .world import WorldConfigError, build_dataset, load_world_meta, open_world


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


_DATA_ERRORS = (
    ManifestError,
    SamplingError,
    WorldConfigError,
    CheckpointError,
    MissingConditionError,
    TrainingDivergedError,
    ShapeError,
    ValueError,
    KeyError,
    FileNotFoundError,
)


def _load_config(path) -> ExperimentConfig:
    override = os.environ.get("EMOCAST_SEED")
    seed = int(override) if override is not None else None
    return load_experiment_config(path, seed_override=seed)


def _cmd_synth_data(args) -> int:
    cfg = _load_config(args.config)
    world = build_dataset(cfg.world, sync_threshold=args.sync_threshold, out_dir=args.out)
    print(f"wrote {len(world.manifest)} clips to {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args.config)
    world = open_world(Path(args.manifest).parent) if args.manifest else None
    if args.resume:
        print(f"resuming from {args.resume}")
        from .checkpoint import load_checkpoint

        ckpt = load_checkpoint(args.resume)
        if ckpt.config_hash != cfg.arch().config_hash():
            raise CheckpointError("checkpoint architecture does not match the config")
    world, model, result = train_pipeline(cfg, world=world)
    trace = result.loss_trace
    final_state = result.temporal or result.spatial
    save_checkpoint(
        model,
        args.out_checkpoint,
        global_step=final_state.step,
        stage=final_state.stage,
        optimizer_entries=final_state.optimizer_entries([n for n, _ in model.trainable()]),
        rng_states=final_state.rng_state_arrays(),
    )
    print(
        f"trained {len(trace)} steps; loss {trace[0]:.4f} -> {float(np.mean(trace[-50:])):.4f}; "
        f"checkpoint at {args.out_checkpoint}"
    )
    return 0


def _cmd_generate(args) -> int:
    model, _ = load_model(args.checkpoint)
    reference = read_array(args.reference)
    audio = read_array(args.audio)
    if audio.ndim == 1:
        meta_path = args.world_meta or str(Path(args.audio).parent / "world_meta.json")
        meta = load_world_meta(meta_path)
        from .world import audio_features

        audio = audio_features(audio.astype(np.float64), meta["audio_proj"]).astype(np.float32)
    frames = generate(
        model,
        reference,
        audio,
        args.emotion,
        args.intensity,
        seed=args.seed,
        frames=args.frames,
    )
    write_array(args.out, frames.astype(np.float32))
    print(f"wrote {frames.shape[0]} frames to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    model, _ = load_model(args.checkpoint)
    world = open_world(Path(args.manifest).parent)
    cfg = _load_config(args.config) if args.config else ExperimentConfig()
    report = evaluate_model(model, world, cfg)
    Path(args.report).write_text(report.to_json(), encoding="utf-8")
    print(
        f"emotion accuracy {report.emotion_accuracy:.3f}, "
        f"lip sync {report.lip_sync_correlation:.3f}; report at {args.report}"
    )
    return 0


def _cmd_ablate(args) -> int:
    cfg = _load_config(args.config)
    base, ablated = run_ablation(args.name, cfg)
    payload = {"base": json.loads(base.to_json()), "ablated": json.loads(ablated.to_json())}
    Path(args.report).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    print(
        f"{args.name}: accuracy {base.emotion_accuracy:.3f} -> {ablated.emotion_accuracy:.3f}, "
        f"lip sync {base.lip_sync_correlation:.3f} -> {ablated.lip_sync_correlation:.3f}"
    )
    return 0


def _cmd_inspect_manifest(args) -> int:
    manifest = load_manifest(args.manifest)
    per_emotion: dict[str, int] = {}
    per_tag: dict[str, int] = {}
    for r in manifest.records:
        per_emotion[r.emotion_label] = per_emotion.get(r.emotion_label, 0) + 1
        per_tag[r.source_tag] = per_tag.get(r.source_tag, 0) + 1
    print(f"records: {len(manifest)}")
    print(f"identities: {len(manifest.identities)}")
    for emotion in sorted(per_emotion):
        print(f"emotion {emotion}: {per_emotion[emotion]}")
    for tag in sorted(per_tag):
        print(f"tag {tag}: {per_tag[tag]}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="emocast", description="Desk-scale emotional talking-head diffusion.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic face world")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sync-threshold", type=float, default=None)
    p.set_defaults(fn=_cmd_synth_data)

    p = sub.add_parser("train", help="run staged + phased training")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--resume", default=None)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("generate", help="generate frames from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--audio", required=True)
    p.add_argument("--emotion", required=True)
    p.add_argument("--intensity", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--world-meta", default=None)
    p.set_defaults(fn=_cmd_generate)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a world")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("ablate", help="paired base/ablated runs")
    p.add_argument("--name", required=True, choices=ABLATIONS)
    p.add_argument("--config", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("inspect-manifest", help="summarize a manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(fn=_cmd_inspect_manifest)
    return parser


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    try:
        return args.fn(args)
    except _DATA_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli())
