"""Umbrella windows and the overlap fixed point.

Part 1 solves the window weights on a fully enumerable toy (uniform over
1..10 with two overlapping indicator windows) and compares against exact
enumeration. Part 2 runs the full machinery on an imbalanced table: a 3%
category gets its own window, draws come out balanced, and the solved
weights still track the true category masses.
"""

import numpy as np
import pandas as pd

from cfsynth.encoding import encode_frame, fit_schema
from cfsynth.umbrella import (
    MaskPolicy,
    build_plan,
    draw_training_queries,
    overlap_matrix,
    solve_weights,
)


# --- part 1: the enumerable toy --------------------------------------------
class Indicator:
    def __init__(self, index, low=None, high=None):
        self.index, self.low, self.high = index, low, high

    def log_profile(self, x):
        x = np.atleast_2d(x)[:, 0]
        ok = np.ones(len(x), dtype=bool)
        if self.low is not None:
            ok &= x >= self.low
        if self.high is not None:
            ok &= x <= self.high
        return np.where(ok, 0.0, -np.inf)

    def profile(self, x):
        return np.exp(self.log_profile(x))


support = np.arange(1.0, 11.0)
windows = [Indicator(0, high=6.0), Indicator(1, low=4.0)]
rng = np.random.default_rng(0)
chains = [rng.choice(support[:6], size=20000)[:, None],   # P1 = uniform 1..6
          rng.choice(support[3:], size=20000)[:, None]]   # P2 = uniform 4..10
w = solve_weights(chains, windows)
print("toy weights (sampled):   ", np.round(w, 4))
print("toy weights (enumerated):", np.round([6 / 13, 7 / 13], 4))
m = overlap_matrix(chains, windows, w)
print("overlap matrix:\n", np.round(m, 3))

# --- part 2: a 97/3 categorical --------------------------------------------
rng = np.random.default_rng(4)
n = 1500
status = np.where(rng.uniform(size=n) < 0.03, "rare", "common")
amount = np.where(status == "rare", rng.normal(3, 1, n), rng.normal(0, 1, n))
df = pd.DataFrame({"status": status, "amount": amount})
schema = fit_schema(df, n_modes=2)
enc = encode_frame(df, schema)

plan = build_plan(enc, schema, focus=["status"], steps=400, seed=9)
freqs = schema.attribute("status").frequencies
print(f"\ncategory frequencies: {dict(zip(schema.attribute('status').categories, np.round(freqs, 4)))}")
print(f"solved window weights: {np.round(plan.weights, 4)}")
print(f"fixed-point residual:  {plan.diagnostics['fixed_point_residual']:.2e}")

batch = draw_training_queries(plan, schema, 400,
                              MaskPolicy(always_keep=("status",)), seed=2)
blk = schema.block("status")
shares = batch.encoded[:, blk].sum(axis=0) / len(batch.encoded)
print(f"drawn batch category shares (before weighting): {np.round(shares, 3)}")
print("the 3% category now fills half the training batch, while the solved")
print("weights preserve how draws reconstruct the original distribution")
