"""End-to-end counterfactuals on the two-moons set.

Trains a feed-forward classifier, trains the synthesizer against it, then
asks for counterfactuals of a negatively classified query point and plots
everything (saved under demos/output/).
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from cfsynth.classifiers import predict, train_mlp, train_test_split
from cfsynth.datasets import make_moons
from cfsynth.encoding import encode_frame, fit_schema, make_query
from cfsynth.synthesizer import PlainQuerySource, TrainConfig, generate, train
from cfsynth.umbrella import MaskPolicy

df = make_moons(500, seed=11)
feats = df[["x1", "x2"]]
labels = df["label"].to_numpy()
schema = fit_schema(feats, n_modes=5)
enc = encode_frame(feats, schema)
tr, te = train_test_split(len(df), seed=11)

f = train_mlp(enc[tr], labels[tr], seed=11)
acc = np.mean(predict(f, enc[te]) == labels[te])
print(f"deployed classifier holdout accuracy: {acc:.3f}")

cfg = TrainConfig(epochs=300)
src = PlainQuerySource(enc[tr], schema, MaskPolicy(), seed=11)
synth = train(enc[tr], schema, f, src, cfg, seed=11)
log = synth.training_log
print(f"trained {cfg.epochs} epochs; final d_loss {log[-1]['d_loss']:.3f}, "
      f"g_loss {log[-1]['g_loss']:.3f}, cf_loss {log[-1]['cf_loss']:.3f}")

# pick a held-out point the model rejects and ask for 20 counterfactuals
neg = te[predict(f, enc[te]) == -1]
query_row = feats.iloc[int(neg[0])]
query = make_query(dict(query_row), schema)
cf = generate(synth, query, n=20, seed=7, f=f)
print(f"\nquery {dict(np.round(query_row, 3))} (predicted -1)")
print(f"validity {cf.validity_rate:.2f}, avg encoded distance "
      f"{cf.distances.mean():.3f}")
print(cf.rows.assign(valid=cf.valid).head(8).round(3).to_string(index=False))

outdir = Path(__file__).parent / "output"
outdir.mkdir(exist_ok=True)

# decision surface + counterfactual cloud
import pandas as pd

from cfsynth.classifiers import predict_proba

xx, yy = np.meshgrid(np.linspace(-1.6, 2.6, 160), np.linspace(-1.2, 1.6, 160))
grid = np.c_[xx.ravel(), yy.ravel()]
grid_enc = encode_frame(pd.DataFrame({"x1": grid[:, 0], "x2": grid[:, 1]}), schema)
pp = predict_proba(f, grid_enc)[:, 1].reshape(xx.shape)

fig, ax = plt.subplots(figsize=(7, 5))
ax.contourf(xx, yy, pp, levels=12, cmap="RdBu", alpha=0.55)
ax.scatter(feats["x1"], feats["x2"], c=np.where(labels == 1, "tab:blue", "tab:red"),
           s=8, alpha=0.4, label="data")
ax.scatter(cf.rows["x1"], cf.rows["x2"], marker="^", s=60, c="black",
           label="counterfactuals")
ax.scatter([query_row["x1"]], [query_row["x2"]], marker="*", s=250,
           c="gold", edgecolors="black", label="query")
ax.legend(loc="upper right")
ax.set_title("counterfactuals hop the decision boundary near the query")
fig.tight_layout()
fig.savefig(outdir / "moons_counterfactuals.png", dpi=130)
print(f"\nwrote {outdir / 'moons_counterfactuals.png'}")

fig2, ax2 = plt.subplots(figsize=(6, 3.2))
epochs = [e["epoch"] for e in log]
ax2.plot(epochs, [e["d_loss"] for e in log], label="d_loss")
ax2.plot(epochs, [e["g_loss"] for e in log], label="g_loss")
ax2.plot(epochs, [e["cf_loss"] for e in log], label="cf_loss")
ax2.set_xlabel("epoch")
ax2.legend()
fig2.tight_layout()
fig2.savefig(outdir / "moons_training_losses.png", dpi=130)
print(f"wrote {outdir / 'moons_training_losses.png'}")
