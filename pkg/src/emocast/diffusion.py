"""Noise schedule, forward diffusion, the noise-prediction objective, and
DDPM/DDIM reverse samplers.

Timesteps are 1-based: t runs over 1..T, with the convention
alpha_bar(0) = 1 so that a step to t_prev = 0 lands on the clean latent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .rng import Rng
from .tensor import ShapeError, Tensor, as_tensor, mse_loss


@dataclass
class NoiseSchedule:
    """Per-timestep beta/alpha/alpha-bar tables."""

    beta: np.ndarray
    alpha: np.ndarray = field(init=False)
    alpha_bar: np.ndarray = field(init=False)

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.beta.ndim != 1 or self.beta.size < 1:
            raise ValueError("beta must be a non-empty 1-D table")
        if np.any(self.beta <= 0) or np.any(self.beta >= 1):
            raise ValueError("beta entries must lie in (0, 1)")
        self.alpha = 1.0 - self.beta
        self.alpha_bar = np.cumprod(self.alpha)

    @property
    def T(self) -> int:
        return self.beta.size

    def _check_t(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside 1..{self.T}")
        return t

    def beta_at(self, t: int) -> float:
        return float(self.beta[self._check_t(t) - 1])

    def alpha_at(self, t: int) -> float:
        return float(self.alpha[self._check_t(t) - 1])

    def alpha_bar_at(self, t: int) -> float:
        if t == 0:
            return 1.0
        return float(self.alpha_bar[self._check_t(t) - 1])


def make_linear_schedule(T: int, beta_1: float, beta_T: float) -> NoiseSchedule:
    """Linearly interpolated variance schedule, endpoints inclusive."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_1 <= beta_T < 1.0):
        raise ValueError(f"need 0 < beta_1 <= beta_T < 1, got {beta_1}, {beta_T}")
    return NoiseSchedule(beta=np.linspace(beta_1, beta_T, T))


@dataclass
class LatentCodec:
    """Pixel-latent mapping. Identity by default; optionally a linear map
    with explicit encode/decode matrices (decode(encode(x)) must be exact
    only in identity mode)."""

    mode: str = "identity"
    encode_w: Optional[np.ndarray] = None
    decode_w: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mode not in ("identity", "linear"):
            raise ValueError(f"unknown codec mode {self.mode!r}")
        if self.mode == "linear" and (self.encode_w is None or self.decode_w is None):
            raise ValueError("linear codec needs encode/decode matrices")

    def encode(self, x: np.ndarray) -> np.ndarray:
        if self.mode == "identity":
            return x
        return x @ self.encode_w  # linear map along the trailing axis

    def decode(self, z: np.ndarray) -> np.ndarray:
        if self.mode == "identity":
            return z
        return z @ self.decode_w


def q_sample(z_0: Tensor, t: int, eps: Tensor, sched: NoiseSchedule) -> Tensor:
    """Closed-form forward corruption: sqrt(ab_t) z_0 + sqrt(1 - ab_t) eps."""
    z_0, eps = as_tensor(z_0), as_tensor(eps)
    if z_0.shape != eps.shape:
        raise ShapeError(f"q_sample: noise shape {eps.shape} != latent shape {z_0.shape}")
    ab = sched.alpha_bar_at(sched._check_t(t))
    return z_0 * math.sqrt(ab) + eps * math.sqrt(1.0 - ab)


def training_loss(eps_pred: Tensor, eps: Tensor) -> Tensor:
    """Mean squared error between predicted and injected noise."""
    return mse_loss(eps_pred, eps)


def ddpm_step(z_t: Tensor, t: int, eps_pred: Tensor, sched: NoiseSchedule, rng: Rng) -> Tensor:
    """One ancestral reverse step; no noise is injected at t = 1."""
    t = sched._check_t(t)
    beta = sched.beta_at(t)
    alpha = sched.alpha_at(t)
    ab_t = sched.alpha_bar_at(t)
    ab_prev = sched.alpha_bar_at(t - 1)
    mean = (z_t - eps_pred * (beta / math.sqrt(1.0 - ab_t))) * (1.0 / math.sqrt(alpha))
    if t == 1:
        return mean
    var = beta * (1.0 - ab_prev) / (1.0 - ab_t)
    noise = rng.normal(z_t.shape, dtype=np.float64).astype(z_t.dtype)
    return mean + Tensor(noise) * math.sqrt(var)


def ddim_step(
    z_t: Tensor, t: int, t_prev: int, eps_pred: Tensor, sched: NoiseSchedule,
    eta: float = 0.0, rng: Optional[Rng] = None,
) -> Tensor:
    """Deterministic (eta = 0) or partially stochastic DDIM update."""
    t = sched._check_t(t)
    if not 0 <= t_prev < t:
        raise ValueError(f"need 0 <= t_prev < t, got t_prev={t_prev}, t={t}")
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must be in [0, 1], got {eta}")
    ab_t = sched.alpha_bar_at(t)
    ab_prev = sched.alpha_bar_at(t_prev)
    z0_hat = (z_t - eps_pred * math.sqrt(1.0 - ab_t)) * (1.0 / math.sqrt(ab_t))
    sigma = eta * math.sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * math.sqrt(1.0 - ab_t / ab_prev)
    dir_coeff = math.sqrt(max(1.0 - ab_prev - sigma * sigma, 0.0))
    out = z0_hat * math.sqrt(ab_prev) + eps_pred * dir_coeff
    if sigma > 0.0:
        if rng is None:
            raise ValueError("eta > 0 requires an rng")
        out = out + Tensor(rng.normal(z_t.shape, dtype=np.float64).astype(z_t.dtype)) * sigma
    return out


def ddim_timesteps(T: int, steps: int) -> list[tuple[int, int]]:
    """(t, t_prev) pairs descending from T to 0, evenly spaced."""
    ts = np.unique(np.linspace(0, T, steps + 1).round().astype(int))[::-1]
    return [(int(a), int(b)) for a, b in zip(ts[:-1], ts[1:])]


def sample_loop(
    model: Callable[[Tensor, int], Tensor],
    shape,
    sched: NoiseSchedule,
    sampler: str = "ddim",
    steps: int = 0,
    seed: int = 0,
    eta: float = 0.0,
    codec: Optional[LatentCodec] = None,
    dtype=np.float32,
) -> np.ndarray:
    """Iterate the chosen sampler from seeded N(0, I) noise and decode.

    `model(z_t, t)` returns the predicted noise; conditioning is closed over
    by the caller.
    """
    if sampler not in ("ddpm", "ddim"):
        raise ValueError(f"unknown sampler {sampler!r}")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    codec = codec or LatentCodec()
    rng = Rng.from_seed(seed)
    z = Tensor(rng.split("init_noise").normal(shape, dtype=np.float64).astype(dtype))
    if sampler == "ddpm":
        if steps != sched.T:
            raise ValueError(f"ddpm runs all {sched.T} schedule steps, got steps={steps}")
        noise_rng = rng.split("ddpm_noise")
        for t in range(sched.T, 0, -1):
            z = ddpm_step(z, t, model(z, t), sched, noise_rng)
    else:
        noise_rng = rng.split("ddim_noise")
        for t, t_prev in ddim_timesteps(sched.T, steps):
            z = ddim_step(z, t, t_prev, model(z, t), sched, eta=eta, rng=noise_rng)
    return codec.decode(z.data)
