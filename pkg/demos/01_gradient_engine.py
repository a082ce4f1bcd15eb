"""Tour of the reverse-mode engine.

Builds a small graph, checks a gradient against central finite
differences, runs the adaptive-moment optimizer on a quadratic, and shows
the Gumbel-Softmax relaxation at work.
"""

import numpy as np

from cfsynth.autodiff import Graph, OptimizerState, backward, forward, optimizer_step

# --- a two-layer net and its gradients ------------------------------------
rng = np.random.default_rng(0)
g = Graph()
x = g.placeholder("x")
w1 = g.parameter("w1", rng.normal(size=(3, 8)))
b1 = g.parameter("b1", np.zeros(8))
w2 = g.parameter("w2", rng.normal(size=(8, 2)))
h = g.relu(g.add(g.matmul(x, w1), b1))
g.mark_output("loss", g.mean(g.mul(g.matmul(h, w2), g.matmul(h, w2))))

inputs = {"x": rng.normal(size=(5, 3))}
forward(g, inputs)
grads = backward(g, "loss")

# finite-difference check on one entry of w1
eps = 1e-5
w = g.params.values["w1"]
w[0, 0] += eps
up = float(forward(g, inputs)["loss"])
w[0, 0] -= 2 * eps
down = float(forward(g, inputs)["loss"])
w[0, 0] += eps
numeric = (up - down) / (2 * eps)
print(f"analytic dL/dw1[0,0] = {grads['w1'][0, 0]:+.8f}")
print(f"numeric  dL/dw1[0,0] = {numeric:+.8f}")

# --- optimizer on a quadratic bowl -----------------------------------------
g2 = Graph()
p = g2.parameter("p", np.array([2.0, -1.5]))
g2.mark_output("loss", g2.sum(g2.mul(p, p)))
opt = OptimizerState(g2.params, ["p"], lr=0.1)
for step in range(120):
    loss = float(forward(g2, {})["loss"])
    backward(g2, "loss")
    optimizer_step(opt, g2)
    if step % 30 == 0:
        print(f"step {step:3d}  loss {loss:.6f}  p = {g2.params.values['p']}")
print(f"final loss {float(forward(g2, {})['loss']):.2e}")

# --- gumbel-softmax: temperature controls hardness --------------------------
g3 = Graph()
logits = g3.placeholder("logits")
noise = g3.placeholder("noise")
for tau in (2.0, 0.5, 0.05):
    g3b = Graph()
    l3, n3 = g3b.placeholder("logits"), g3b.placeholder("noise")
    g3b.mark_output("y", g3b.gumbel_softmax(l3, n3, tau))
    out = forward(g3b, {"logits": np.log([0.5, 0.3, 0.2]),
                        "noise": np.full(3, 0.5)})["y"]
    print(f"tau={tau:<4} relaxed sample {np.round(out, 3)}")
