"""Walk through the tensor substrate: tape recording, backward, gradients
checked against central finite differences, and one optimizer step.
"""

import numpy as np

import emocast as ec

rng = ec.Rng.from_seed(0)

# A small computation: masked projection through a softmax, squared error.
x = ec.Tensor(rng.normal((3, 4)), requires_grad=True)
w = ec.Tensor(rng.normal((4, 2)), requires_grad=True)
mask = ec.Tensor((rng.uniform(0, 1, (3, 2)) > 0.3).astype(np.float64))
target = ec.Tensor(np.full((3, 2), 0.4))

h = ec.softmax(ec.mask_apply(ec.silu(x @ w), mask), axis=1)
loss = ec.mse_loss(h, target)
print(f"loss = {loss.item():.6f}")

ec.backward(loss)
print("grad wrt w:\n", np.round(w.grad, 4))

# Check one coordinate against central differences.
i, j = 1, 0
h_step = 1e-5
old = w.data[i, j]
vals = []
for delta in (+h_step, -h_step):
    w.data[i, j] = old + delta
    with ec.no_grad():
        hh = ec.softmax(ec.mask_apply(ec.silu(x @ w), mask), axis=1)
        vals.append(ec.mse_loss(hh, target).item())
w.data[i, j] = old
numeric = (vals[0] - vals[1]) / (2 * h_step)
print(f"analytic {w.grad[i, j]:+.8f}  vs finite-difference {numeric:+.8f}")

# One Adam step moves the parameters against the gradient.
state = ec.OptimizerState(mode="adam", lr=1e-2)
before = w.data.copy()
ec.optimizer_step([w], [w.grad], state)
print("max |w change| after one adam step:", float(np.abs(w.data - before).max()))
