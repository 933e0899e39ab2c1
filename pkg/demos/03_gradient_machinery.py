"""A tour of the differentiation engine behind the training loop.

Shows the tape in action on a toy function, a finite-difference check
of network gradients, and the forward-over-reverse trick: directional
derivatives (Jacobian columns) that can themselves be differentiated,
which is what powers the conformality regularizer.

Run:  python3 demos/03_gradient_machinery.py
"""

import numpy as np

from neuraluv import autodiff as ad
from neuraluv.autodiff import Tape, backward
from neuraluv.nets import NetSpec, init_params, jvp, mlp_forward

# --- reverse mode on a toy scalar -----------------------------------
tape = Tape()
x = tape.leaf(np.array([1.0, 2.0, 3.0]))
loss = ad.reduce_sum(ad.square(x))  # sum x_i^2
backward(loss)
print("d/dx sum(x^2) at (1,2,3):", x.grad, "(expect 2x)")

# --- gradient of a small MLP vs finite differences ------------------
spec = NetSpec((2, 8, 8, 3))
store = init_params(spec, seed=0)
inputs = np.random.default_rng(0).normal(size=(5, 2))

tape = Tape()
layers = [(tape.leaf(w), tape.leaf(b))
          for w, b in zip(store.weights, store.biases)]
out = mlp_forward(spec, layers, inputs, tape)
loss = ad.reduce_sum(ad.square(out))
backward(loss)

w0 = store.weights[0]
step = 1e-6


def loss_value():
    return float((np.asarray(ad.value_of(mlp_forward(spec, store, inputs))) ** 2).sum())


w0[0, 0] += step
up = loss_value()
w0[0, 0] -= 2 * step
down = loss_value()
w0[0, 0] += step
fd = (up - down) / (2 * step)
print(f"dL/dW[0,0]: analytic {layers[0][0].grad[0, 0]:.8f} vs FD {fd:.8f}")

# --- forward-over-reverse: differentiate a Jacobian column ----------
tape = Tape()
layers = [(tape.leaf(w), tape.leaf(b))
          for w, b in zip(store.weights, store.biases)]
column = jvp(spec, layers, inputs, np.array([1.0, 0.0]), tape)  # J e_u per row
penalty = ad.reduce_sum(ad.square(column))  # a loss built FROM derivatives
backward(penalty)
grad_norm = np.linalg.norm(layers[0][0].grad)
print(f"gradient of a Jacobian-based loss w.r.t. layer-0 weights: "
      f"|g| = {grad_norm:.6f}")
