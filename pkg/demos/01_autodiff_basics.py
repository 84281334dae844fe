"""Tape-based gradients on a toy problem, no model code involved.

Fits y = w*x + b by full-batch Adam on tracked tensors, then cross-checks an
analytic gradient against central differences with grad_check.
"""

import numpy as np

from tripletformer import AdamState, adam_step, spawn
from tripletformer.tensor import (
    GradTape,
    Tensor,
    backward,
    grad_check,
    matmul,
    relu,
    tmean,
    tsum,
)

rng = spawn(0, "autodiff-demo")

# noisy line: y = 2.5 x - 1.0 + eps
x = rng.uniform_array(-1.0, 1.0, (64, 1))
y = 2.5 * x - 1.0 + rng.normal_array(0.0, 0.05, (64, 1))

w = Tensor(np.zeros((1, 1)))
b = Tensor(0.0)
named = [("w", w), ("b", b)]
state = AdamState.for_params(named)

for step in range(200):
    tape = GradTape()
    tape.watch(w)
    tape.watch(b)
    pred = matmul(Tensor(x), w) + b
    diff = pred - Tensor(y)
    loss = tmean(diff * diff)
    grads = backward(loss)
    adam_step(named, grads, state, lr=0.05)
    if step % 50 == 0:
        print(f"step {step:3d}  mse {loss.item():.5f}  w {w.data[0, 0]:+.3f}  b {b.item():+.3f}")

print(f"fitted  w {w.data[0, 0]:+.4f} (true +2.5)  b {b.item():+.4f} (true -1.0)")

# a gradient check on a small composite: sum(relu(A @ B))
a0 = rng.normal_array(0.0, 1.0, (4, 3))
b0 = rng.normal_array(0.0, 1.0, (3, 2))
err = grad_check(lambda ts: tsum(relu(matmul(ts[0], ts[1]))), [a0, b0])
print(f"grad check on sum(relu(A @ B)): max rel err {err:.2e}")
