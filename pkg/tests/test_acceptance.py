"""Acceptance suite: one test per criterion, each printing a PASS line
with its measured numbers (run with `pytest -s tests/test_acceptance.py`
to watch them live). Heavy fixtures are session-scoped and shared."""

import hashlib
import time

import numpy as np
import pandas as pd
import pytest

from cfsynth.autodiff import Graph, backward, forward
from cfsynth.causal_eval import causation_score, to_numeric
from cfsynth.causal_generator import CausalGraph, ModularGenerator
from cfsynth.classifiers import (
    MlpConfig,
    predict,
    train_mlp,
    train_random_forest,
    train_test_split,
)
from cfsynth.datasets import anm_pair, make_census, make_moons
from cfsynth.encoding import encode_frame, fit_schema, make_query
from cfsynth.eval_harness import latency_profile, model_compatibility
from cfsynth.synthesizer import (
    PlainQuerySource,
    TrainConfig,
    UmbrellaQuerySource,
    ZeroQuerySource,
    generate,
    generate_unconditional,
    train,
)
from cfsynth.umbrella import (
    MaskPolicy,
    build_plan,
    fixed_point_residual,
    overlap_matrix,
    solve_weights,
)
from test_autodiff import OP_CASES, _op_inputs
from util_gradcheck import max_rel_err, numeric_grad_param

EDU_ORDER = ["School", "HS-grad", "Some-college", "Assoc", "Bachelors",
             "Masters", "Doctorate"]


def report(tag: str, detail: str) -> None:
    print(f"\n{tag} PASS: {detail}")


# ----------------------------------------------------------- shared models


@pytest.fixture(scope="session")
def moons_model():
    """A3's artifact: moons + feed-forward classifier + 300-epoch training."""
    df = make_moons(500, seed=11)
    feats = df[["x1", "x2"]]
    schema = fit_schema(feats, n_modes=5)
    enc = encode_frame(feats, schema)
    labels = df["label"].to_numpy()
    tr, te = train_test_split(len(df), seed=11)
    f = train_mlp(enc[tr], labels[tr], seed=11)
    cfg = TrainConfig(epochs=300)
    src = PlainQuerySource(enc[tr], schema, MaskPolicy(), seed=11)
    synth = train(enc[tr], schema, f, src, cfg, seed=11)
    return {"schema": schema, "f": f, "synth": synth}


@pytest.fixture(scope="session")
def census_10k():
    df = make_census(10000, seed=31)
    feats = df[["age", "education", "hours", "marital"]]
    schema = fit_schema(feats, n_modes=5,
                        category_order={"education": EDU_ORDER})
    return df, feats, schema


# -------------------------------------------------------------------- A1


def test_a1_gradient_correctness():
    start = time.time()
    worst = 0.0
    rng = np.random.default_rng(2024)
    for trial in range(100):
        # every supported op at random inputs
        for name, builder in OP_CASES.items():
            g = Graph()
            inputs = _op_inputs(name, rng)
            p = g.parameter("x", inputs["x"])
            g.mark_output("loss", builder(g, p))
            feed = {k: v for k, v in inputs.items() if k != "x"}
            forward(g, feed)
            grads = backward(g, "loss")
            err = max_rel_err(grads["x"], numeric_grad_param(g, feed, "x"))
            worst = max(worst, err)
        # one randomly wired two-layer net per trial
        g = Graph()
        x = g.placeholder("x")
        w1 = g.parameter("w1", rng.normal(size=(3, 4)))
        b1 = g.parameter("b1", rng.normal(size=4))
        w2 = g.parameter("w2", rng.normal(size=(4, 2)))
        act = rng.choice(["relu", "sigmoid", "tanh", "softplus"])
        h = getattr(g, act)(g.add(g.matmul(x, w1), b1))
        out = g.matmul(h, w2)
        g.mark_output("loss", g.mean(g.mul(out, out)))
        feed = {"x": rng.normal(size=(4, 3))}
        forward(g, feed)
        grads = backward(g, "loss")
        for pname in ("w1", "b1", "w2"):
            err = max_rel_err(grads[pname], numeric_grad_param(g, feed, pname))
            worst = max(worst, err)
    elapsed = time.time() - start
    assert worst <= 1e-4
    assert elapsed < 30.0
    report("A1", f"max relative gradient error {worst:.2e} over 100 trials, "
                 f"{elapsed:.1f}s")


# -------------------------------------------------------------------- A2


class _Indicator:
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


def test_a2_umbrella_weight_fidelity():
    start = time.time()
    support = np.arange(1.0, 11.0)
    windows = [_Indicator(0, high=6.0), _Indicator(1, low=4.0)]
    rng = np.random.default_rng(7)
    chains = [rng.choice(support[:6], size=20000)[:, None],
              rng.choice(support[3:], size=20000)[:, None]]
    w = solve_weights(chains, windows)
    truth = np.array([6 / 13, 7 / 13])  # enumeration oracle: <u_i> = .6, .7
    m = overlap_matrix(chains, windows, w)
    residual = fixed_point_residual(w, m)
    elapsed = time.time() - start
    assert np.abs(w - truth).max() <= 0.02
    assert residual <= 1e-8
    assert elapsed < 60.0
    report("A2", f"w = [{w[0]:.4f}, {w[1]:.4f}] vs [6/13, 7/13], "
                 f"residual {residual:.1e}, {elapsed:.1f}s")


# -------------------------------------------------------------------- A3


@pytest.mark.slow
def test_a3_counterfactual_validity(moons_model):
    start = time.time()
    schema, f, synth = (moons_model[k] for k in ("schema", "f", "synth"))
    holdout = make_moons(600, seed=99)  # fresh draw, never trained on
    feats = holdout[["x1", "x2"]]
    enc = encode_frame(feats, schema)
    negatives = np.nonzero(predict(f, enc) == -1)[0][:100]
    assert len(negatives) == 100
    rates, dists = [], []
    for i in negatives:
        q = make_query(dict(feats.iloc[int(i)]), schema)
        cf = generate(synth, q, n=20, seed=1000 + int(i), f=f)
        rates.append(cf.valid.mean())
        dists.append(cf.distances.mean())
    validity = float(np.mean(rates))
    delta = float(np.mean(dists))
    elapsed = time.time() - start
    assert validity >= 0.9
    assert np.isfinite(delta)
    assert elapsed < 15 * 60
    report("A3", f"validity {validity:.3f} over 100 negative queries x 20, "
                 f"delta_avg {delta:.3f}, {elapsed:.0f}s (+ training fixture)")


# -------------------------------------------------------------------- A4


@pytest.mark.slow
def test_a4_rare_value_conditioning():
    start = time.time()
    df = make_census(3000, seed=21, widowed_share=0.03)
    feats = df[["age", "education", "hours", "marital"]]
    share = (df["marital"] == "Widowed").mean()
    assert 0.015 <= share <= 0.05  # the planted ~3% category
    labels = np.where(df["income"] == ">50K", 1, -1)
    schema = fit_schema(feats, n_modes=5, category_order={"education": EDU_ORDER})
    enc = encode_frame(feats, schema)
    tr, _ = train_test_split(len(df), seed=21)
    f = train_mlp(enc[tr], labels[tr], seed=21)
    cfg = TrainConfig(epochs=300)
    policy = MaskPolicy(keep_probability=0.25, always_keep=("marital",))

    def match_rate(synth):
        vals = []
        for rep in range(25):
            cf = generate(synth, make_query({"marital": "Widowed"}, schema),
                          n=20, seed=500 + rep, f=f)
            vals.append((cf.rows["marital"] == "Widowed").mean())
        return float(np.mean(vals))

    base = train(enc[tr], schema, f,
                 PlainQuerySource(enc[tr], schema, policy, seed=21), cfg, seed=21)
    rate_base = match_rate(base)
    plan = build_plan(enc[tr], schema, focus=["marital"], steps=600, seed=21)
    us = train(enc[tr], schema, f,
               UmbrellaQuerySource(plan, schema, policy, seed=21), cfg, seed=21)
    rate_us = match_rate(us)
    elapsed = time.time() - start
    assert rate_us >= 0.6
    assert rate_us >= 2 * rate_base
    assert elapsed < 20 * 60
    report("A4", f"rare-category match: US {rate_us:.3f} vs base "
                 f"{rate_base:.3f} ({rate_us / max(rate_base, 1e-9):.0f}x), "
                 f"{elapsed:.0f}s")


# -------------------------------------------------------------------- A5


@pytest.mark.slow
def test_a5_model_compatibility(census_10k):
    start = time.time()
    df, feats, schema = census_10k
    full_schema = fit_schema(df, n_modes=5,
                             category_order={"education": EDU_ORDER})
    enc = encode_frame(df, full_schema)
    tr, _ = train_test_split(len(df), seed=31)
    cfg = TrainConfig(epochs=140, lambda_ce=0.0, lambda_dist=0.0)
    synth = train(enc[tr], full_schema, None, ZeroQuerySource(full_schema),
                  cfg, seed=31)
    synthesized = generate_unconditional(synth, n=len(tr), seed=77)
    report_obj = model_compatibility(df, synthesized, label="income",
                                     desired_value=">50K", schema=schema,
                                     kinds=("forest",), rounds=5, seed=31)
    f_o = report_obj.mean("forest", "original")
    f_p = report_obj.mean("forest", "synthesized")
    elapsed = time.time() - start
    assert len(df) >= 10000
    assert abs(f_o - f_p) <= 0.10
    assert elapsed < 30 * 60
    report("A5", f"forest F_o {f_o:.3f} vs F_p {f_p:.3f} "
                 f"(gap {abs(f_o - f_p):.3f}) over 5 rounds, {elapsed:.0f}s")


# -------------------------------------------------------------------- A6


@pytest.mark.slow
def test_a6_causal_identifiability(census_10k):
    start = time.time()
    df, feats, schema = census_10k
    enc = encode_frame(feats, schema)
    tr, _ = train_test_split(len(df), seed=41)

    cfg = TrainConfig(epochs=100, lambda_ce=0.0, lambda_dist=0.0)
    graph = CausalGraph.from_edges(schema.names, [("education", "age")])
    gen = ModularGenerator(schema, cfg, graph)
    synth = train(enc[tr], schema, None, ZeroQuerySource(schema), cfg,
                  seed=41, generator=gen)
    synthesized = generate_unconditional(synth, n=2000, seed=99)

    edu = schema.attribute("education")
    s_syn = causation_score(to_numeric(synthesized["education"], edu),
                            synthesized["age"].to_numpy(), "ANM",
                            names=("education", "age"), seed=7)
    sub = np.sort(np.random.default_rng(5).choice(tr, 2000, replace=False))
    s_org = causation_score(to_numeric(df.iloc[sub]["education"], edu),
                            df.iloc[sub]["age"].to_numpy(), "ANM",
                            names=("education", "age"), seed=7)

    mechs = ["cubic", "tanh", "exp", "sine"]
    hits = sum(
        causation_score(*anm_pair(mechs[i % 4], n=500, seed=i), "ANM",
                        names=("a", "b"), seed=i).verdict == "a -> b"
        for i in range(20))
    elapsed = time.time() - start
    assert s_syn.score >= 1.0
    assert s_syn.verdict == "education -> age"
    assert s_syn.score > s_org.score
    assert hits >= 16
    assert elapsed < 20 * 60
    report("A6", f"tau_c synth {s_syn.score:+.1f} vs original "
                 f"{s_org.score:+.1f}; direction recovery {hits}/20, "
                 f"{elapsed:.0f}s")


# -------------------------------------------------------------------- A7


@pytest.mark.slow
def test_a7_latency_constancy(moons_model):
    synth = moons_model["synth"]
    prof = latency_profile(synth, query_counts=(10, 20, 30), repeats=5,
                           n_per_query=20, seed=5)
    means = np.array([prof[c]["mean"] for c in (10, 20, 30)])
    center = means.mean()
    spread = np.abs(means - center).max() / center
    assert spread <= 0.20
    report("A7", "per-query time " +
           ", ".join(f"{c}: {prof[c]['mean'] * 1e3:.2f}ms" for c in (10, 20, 30)) +
           f" (max deviation {spread * 100:.1f}%)")


# -------------------------------------------------------------------- A8


SCHEMA_INI = """
[dataset]
label = label
desired = 1

[attribute x1]
kind = continuous
modes = 3

[attribute x2]
kind = continuous
modes = 3
"""

RUN_INI = """
[paths]
dataset = ../moons.csv
schema = ../schema.ini
outdir = .

[run]
classifier = mlp
seed = 23

[train]
epochs = 10
batch = 200
latent = 16
hidden = 32
sampler = plain
"""


def test_a8_end_to_end_determinism(tmp_path):
    from cfsynth.cli import main

    start = time.time()
    make_moons(250, seed=8).to_csv(tmp_path / "moons.csv", index=False)
    (tmp_path / "schema.ini").write_text(SCHEMA_INI)
    digests = {}
    for run in ("one", "two"):
        outdir = tmp_path / run
        outdir.mkdir()
        (outdir / "run.ini").write_text(RUN_INI)
        config = str(outdir / "run.ini")
        assert main(["--config", config, "setup"]) == 0
        assert main(["--config", config, "train"]) == 0
        assert main(["--config", config, "generate", "--query",
                     "x1=0.3,x2=0.1", "--n", "5", "--seed", "4",
                     "--out", str(outdir / "cf.csv")]) == 0
        digests[run] = {
            name: hashlib.sha256((outdir / name).read_bytes()).hexdigest()
            for name in ("setup.mcs1", "classifier.mcs1", "model.mcs1",
                         "training_log.csv", "cf.csv")
        }
    assert digests["one"] == digests["two"]
    report("A8", "setup/train/generate artifacts byte-identical across two "
                 f"runs ({time.time() - start:.0f}s)")
