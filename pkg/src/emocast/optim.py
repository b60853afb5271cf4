"""Deterministic in-place parameter updates (plain SGD and Adam)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass
class OptimizerState:
    """Update rule plus per-parameter moment buffers.

    `m`/`v` are allocated lazily on the first step so the state can be
    created before parameter shapes are known (checkpoint restore fills
    them back in explicitly).
    """

    mode: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: Optional[list[np.ndarray]] = field(default=None, repr=False)
    v: Optional[list[np.ndarray]] = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer mode {self.mode!r}")


def optimizer_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: OptimizerState) -> None:
    """Apply one update in place. Deterministic given the state."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} params but {len(grads)} grads")
    for p, g in zip(params, grads):
        if g.shape != p.data.shape:
            raise ShapeError(f"grad shape {g.shape} does not match param shape {p.data.shape}")
    state.step_count += 1
    if state.mode == "sgd":
        for p, g in zip(params, grads):
            p.data -= (state.lr * g).astype(p.data.dtype, copy=False)
        return
    if state.m is None:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = g.astype(p.data.dtype, copy=False)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = (state.lr * (m / bc1)) / (np.sqrt(v / bc2) + state.eps)
        p.data -= update.astype(p.data.dtype, copy=False)
