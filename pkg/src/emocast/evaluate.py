"""Synthetic-world evaluation: an emotion probe over the expression region,
lip-sync correlation against audio energy, reconstruction error, and the
paired ablation harness.

The probe is a small two-layer perceptron trained exclusively on
ground-truth frames (provenance is tracked and enforced); it stands in for
a pretrained emotion recognizer at desk scale.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .manifest import EMOTIONS, ArrayStore, Manifest
from .model import EmoCastModel
from .optim import OptimizerState, optimizer_step
from .rng import Rng
from .tensor import (
    ShapeError,
    Tensor,
    backward,
    log_softmax,
    matmul,
    no_grad,
    silu,
    tmean,
    tsum,
)

GROUND_TRUTH = "ground_truth"
GENERATED = "generated"


class ProvenanceError(ValueError):
    pass


class UndefinedCorrelationError(ValueError):
    pass


@dataclass
class TaggedFrames:
    """Frames with a provenance tag; the probe refuses non-ground-truth."""

    frames: np.ndarray  # [N, C, H, W]
    labels: list[str]
    provenance: str


def _exp_patch(frames: np.ndarray, exp_region: dict) -> np.ndarray:
    r = exp_region
    patch = frames[..., r["top"] : r["top"] + r["height"], r["left"] : r["left"] + r["width"]]
    return patch.reshape(frames.shape[0], -1)


@dataclass
class ProbeClassifier:
    exp_region: dict
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    labels: tuple = EMOTIONS
    heldout_accuracy: float = 0.0

    def logits(self, patches: np.ndarray) -> np.ndarray:
        with no_grad():
            h = silu(matmul(Tensor(patches.astype(np.float32)), self.w1) + self.b1)
            return (matmul(h, self.w2) + self.b2).data

    def predict(self, frames: np.ndarray) -> list[str]:
        if frames.ndim != 4:
            raise ShapeError(f"expected [N, C, H, W] frames, got {frames.shape}")
        patches = _exp_patch(frames, self.exp_region)
        if patches.shape[1] != self.w1.shape[0]:
            raise ShapeError(
                f"expression patch size {patches.shape[1]} does not match probe input {self.w1.shape[0]}"
            )
        idx = self.logits(patches).argmax(axis=1)
        return [self.labels[i] for i in idx]


def collect_ground_truth_frames(manifest: Manifest, store: ArrayStore) -> TaggedFrames:
    frames, labels = [], []
    for rec in manifest.records:
        clip = store.frames(rec)
        frames.append(clip)
        labels += [rec.emotion_label] * clip.shape[0]
    return TaggedFrames(np.concatenate(frames, axis=0), labels, GROUND_TRUTH)


def fit_probe(
    data: TaggedFrames,
    exp_region: dict,
    seed: int,
    hidden: int = 32,
    steps: int = 400,
    lr: float = 5e-3,
    noise_sigma: float = 0.1,
    holdout_fraction: float = 0.25,
) -> ProbeClassifier:
    """Train the probe on tagged ground-truth frames; refuses anything else."""
    if data.provenance != GROUND_TRUTH:
        raise ProvenanceError(f"probe may only be trained on ground-truth frames, got {data.provenance!r}")
    counts: dict[str, int] = {}
    for lbl in data.labels:
        counts[lbl] = counts.get(lbl, 0) + 1
    usable = {k: v for k, v in counts.items() if v >= 20}
    if len(usable) < 2:
        raise ValueError(f"need >= 2 emotion classes with >= 20 frames each, have {counts}")

    rng = Rng.from_seed(seed).split("probe")
    X = _exp_patch(data.frames, exp_region).astype(np.float32)
    y = np.array([EMOTIONS.index(lbl) for lbl in data.labels])
    n = X.shape[0]
    perm = rng.split("shuffle").permutation(n)
    X, y = X[perm], y[perm]
    n_hold = max(1, int(n * holdout_fraction))
    X_tr, y_tr = X[n_hold:], y[n_hold:]
    X_ho, y_ho = X[:n_hold], y[:n_hold]

    D = X.shape[1]
    w1 = Tensor(rng.split("w1").normal((D, hidden)).astype(np.float32) / math.sqrt(D), requires_grad=True)
    b1 = Tensor(np.zeros((1, hidden), dtype=np.float32), requires_grad=True)
    w2 = Tensor(rng.split("w2").normal((hidden, len(EMOTIONS))).astype(np.float32) / math.sqrt(hidden), requires_grad=True)
    b2 = Tensor(np.zeros((1, len(EMOTIONS)), dtype=np.float32), requires_grad=True)
    params = [w1, b1, w2, b2]
    onehot = np.eye(len(EMOTIONS), dtype=np.float32)[y_tr]
    opt = OptimizerState(mode="adam", lr=lr)
    noise_rng = rng.split("augment")
    for _ in range(steps):
        noisy = X_tr + noise_sigma * noise_rng.normal(X_tr.shape).astype(np.float32)
        h = silu(matmul(Tensor(noisy), w1) + b1)
        logits = matmul(h, w2) + b2
        nll = tsum(log_softmax(logits, axis=1) * Tensor(onehot), axis=1)
        loss = tmean(nll) * -1.0
        backward(loss)
        grads = [p.grad for p in params]
        optimizer_step(params, grads, opt)
        for p in params:
            p.grad = None

    probe = ProbeClassifier(exp_region=dict(exp_region), w1=w1, b1=b1, w2=w2, b2=b2)
    pred = probe.logits(X_ho).argmax(axis=1)
    probe.heldout_accuracy = float((pred == y_ho).mean())
    return probe


def train_probe(manifest: Manifest, store: ArrayStore, exp_region: dict, seed: int, **kw) -> ProbeClassifier:
    return fit_probe(collect_ground_truth_frames(manifest, store), exp_region, seed, **kw)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def emotion_accuracy(frames: np.ndarray, true_label: str, probe: ProbeClassifier) -> float:
    """Fraction of frames classified as the requested label."""
    if frames.shape[0] == 0:
        raise ValueError("no frames to score")
    preds = probe.predict(frames)
    return sum(p == true_label for p in preds) / len(preds)


def lip_sync_correlation(audio_energy: np.ndarray, frames: np.ndarray, lip_mask: np.ndarray) -> float:
    """Pearson correlation between audio energy and mean lip-region intensity."""
    audio_energy = np.asarray(audio_energy, dtype=np.float64)
    if frames.ndim != 4:
        raise ShapeError(f"expected [F, C, H, W] frames, got {frames.shape}")
    F = frames.shape[0]
    if audio_energy.shape != (F,):
        raise ShapeError(f"energy {audio_energy.shape} does not match {F} frames")
    if F < 2:
        raise ValueError("need at least 2 frames for a correlation")
    mask = np.asarray(lip_mask, dtype=np.float64)
    m = mask.sum()
    if m == 0:
        raise ValueError("empty lip mask")
    openness = (frames.astype(np.float64) * mask[None, None]).sum(axis=(1, 2, 3)) / (m * frames.shape[1])
    a = audio_energy - audio_energy.mean()
    b = openness - openness.mean()
    denom = math.sqrt(float((a * a).sum()) * float((b * b).sum()))
    if denom == 0.0:
        raise UndefinedCorrelationError("a series has zero variance; correlation undefined")
    return float((a * b).sum() / denom)


def reconstruction_mse(generated: np.ndarray, ground_truth: np.ndarray) -> float:
    generated = np.asarray(generated, dtype=np.float64)
    ground_truth = np.asarray(ground_truth, dtype=np.float64)
    if generated.shape != ground_truth.shape:
        raise ShapeError(f"shape mismatch {generated.shape} vs {ground_truth.shape}")
    return float(((generated - ground_truth) ** 2).mean())


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def _sig9(x: Optional[float]):
    if x is None:
        return None
    return float(f"{float(x):.9g}")


@dataclass
class EvalReport:
    config_hash: str
    seed: int
    emotion_accuracy: float
    lip_sync_correlation: float
    reconstruction_mse: Optional[float]
    confusion: dict  # true label -> {predicted label -> count}
    probe_heldout_accuracy: float
    n_generated_frames: int
    ablation: Optional[str] = None
    schema_version: int = 1
    fid: str = "out_of_scope"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        total = sum(sum(row.values()) for row in self.confusion.values())
        diag = sum(self.confusion.get(lbl, {}).get(lbl, 0) for lbl in self.confusion)
        if total and abs(self.emotion_accuracy - diag / total) > 1e-9:
            raise ValueError("emotion_accuracy must equal the confusion-matrix trace ratio")

    def to_json(self) -> str:
        payload = {
            "schema_version": self.schema_version,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "ablation": self.ablation,
            "emotion_accuracy": _sig9(self.emotion_accuracy),
            "lip_sync_correlation": _sig9(self.lip_sync_correlation),
            "reconstruction_mse": _sig9(self.reconstruction_mse),
            "probe_heldout_accuracy": _sig9(self.probe_heldout_accuracy),
            "n_generated_frames": self.n_generated_frames,
            "fid": self.fid,
            "confusion": self.confusion,
            "metadata": self.metadata,
        }
        return json.dumps(payload, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        return cls(
            config_hash=d["config_hash"],
            seed=d["seed"],
            emotion_accuracy=d["emotion_accuracy"],
            lip_sync_correlation=d["lip_sync_correlation"],
            reconstruction_mse=d["reconstruction_mse"],
            confusion=d["confusion"],
            probe_heldout_accuracy=d["probe_heldout_accuracy"],
            n_generated_frames=d["n_generated_frames"],
            ablation=d["ablation"],
            schema_version=d["schema_version"],
            fid=d["fid"],
            metadata=d.get("metadata", {}),
        )
