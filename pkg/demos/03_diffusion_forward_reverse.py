"""Forward corruption and reverse sampling, with a perfect denoiser standing
in for a trained network: DDIM walks back to the clean latent.
"""

import math

import numpy as np

import emocast as ec
from emocast import diffusion as dif

T = 50
sched = dif.make_linear_schedule(T, 1.5e-3, 0.30)
print(f"schedule: T={T}, alpha_bar_1={sched.alpha_bar[0]:.4f}, alpha_bar_T={sched.alpha_bar[-1]:.2e}")

rng = ec.Rng.from_seed(3)
z0 = rng.normal((4, 4))
eps = rng.normal((4, 4))

print("\nforward corruption (signal fraction sqrt(alpha_bar)):")
for t in (1, 10, 25, 50):
    zt = dif.q_sample(ec.Tensor(z0), t, ec.Tensor(eps), sched)
    frac = math.sqrt(sched.alpha_bar_at(t))
    err = float(((zt.data - z0) ** 2).mean())
    print(f"  t={t:>2}  signal={frac:.3f}   mse vs z0 = {err:.3f}")

# A "perfect" denoiser knows z0 and reports the exact noise in z_t.
z = dif.q_sample(ec.Tensor(z0), T, ec.Tensor(eps), sched)
for t, t_prev in dif.ddim_timesteps(T, 5):
    ab = sched.alpha_bar_at(t)
    eps_true = (z.data - math.sqrt(ab) * z0) / math.sqrt(1 - ab)
    z = dif.ddim_step(z, t, t_prev, ec.Tensor(eps_true), sched, eta=0.0)
print(f"\n5-step DDIM with a perfect denoiser: mse(z_hat, z0) = {((z.data - z0) ** 2).mean():.2e}")

# eta = 0 sampling is bit-deterministic.
model = lambda zt, t: ec.scale(zt, 0.1)
a = dif.sample_loop(model, (2, 2), sched, sampler="ddim", steps=10, seed=7)
b = dif.sample_loop(model, (2, 2), sched, sampler="ddim", steps=10, seed=7)
print("same-seed DDIM runs identical:", bool(np.array_equal(a, b)))
