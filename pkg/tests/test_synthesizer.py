import numpy as np
import pandas as pd
import pytest

from cfsynth.classifiers import MlpConfig, predict_proba, train_mlp
from cfsynth.container import ContainerError
from cfsynth.datasets import make_moons
from cfsynth.encoding import Query, encode_frame, fit_schema, make_query
from cfsynth.synthesizer import (
    CounterfactualSet,
    PlainQuerySource,
    SynthesizerError,
    TrainConfig,
    ZeroQuerySource,
    counterfactual_loss,
    generate,
    generate_unconditional,
    load,
    save,
    train,
)
from cfsynth.umbrella import MaskPolicy


def tiny_frame(n=700, seed=3):
    rng = np.random.default_rng(seed)
    grade = rng.choice(["lo", "mid", "hi"], size=n, p=[0.5, 0.3, 0.2])
    shift = np.select([grade == "lo", grade == "mid"], [0.0, 3.0], 6.0)
    return pd.DataFrame({"amount": rng.normal(shift, 1.0), "grade": grade})


def tiny_setup(epochs=2, seed=0, **kw):
    df = tiny_frame()
    schema = fit_schema(df, n_modes=3)
    enc = encode_frame(df, schema)
    y = np.where(df["grade"] == "hi", 1, -1)
    f = train_mlp(enc, y, config=MlpConfig(max_iter=60), seed=seed)
    cfg = TrainConfig(epochs=epochs, latent_dim=16, hidden_dim=32,
                      batch_size=200, **kw)
    src = PlainQuerySource(enc, schema, MaskPolicy(), seed=seed)
    return df, schema, enc, f, cfg, src


# ------------------------------------------------------ counterfactual loss


def test_cf_loss_zero_when_matched_and_flipped():
    df, schema, enc, f, cfg, _ = tiny_setup()
    q = enc[:4].copy()
    mask = np.ones_like(q)
    # force f to predict the desired class with probability ~1
    f.params.values["w1"][...] = 0.0
    f.params.values["w2"][...] = 0.0
    f.params.values["b1"][...] = 0.0
    f.params.values["b2"][:] = [-40.0, 40.0]
    val = counterfactual_loss(q, q, mask, 1, f)
    assert val == pytest.approx(0.0, abs=1e-12)


def test_cf_loss_all_masked_query_kills_distance():
    df, schema, enc, f, cfg, _ = tiny_setup()
    gen = enc[:5]
    q = np.zeros_like(gen)
    mask = np.zeros_like(gen)
    val = counterfactual_loss(gen, q, mask, 1, f, lambda_ce=0.0)
    assert val == 0.0


def test_cf_loss_matches_hand_formula():
    # Independent two-point oracle computed right here from predict_proba.
    df, schema, enc, f, cfg, _ = tiny_setup()
    gen, q = enc[:2], enc[2:4]
    mask = np.ones_like(gen)
    mask[0, : schema.width // 2] = 0.0
    w = np.array([0.3, 0.7])
    proba = predict_proba(f, gen)
    expect = 0.0
    for i in range(2):
        ce = -np.log(proba[i, 1])
        dist = float((((gen[i] - q[i]) * mask[i]) ** 2).sum())
        expect += w[i] * (2.0 * ce + 0.5 * dist)
    got = counterfactual_loss(gen, q, mask, 1, f, lambda_ce=2.0,
                              lambda_dist=0.5, weights=w)
    assert got == pytest.approx(expect, abs=1e-12)


def test_cf_loss_shape_mismatch():
    df, schema, enc, f, cfg, _ = tiny_setup()
    with pytest.raises(SynthesizerError, match="shape"):
        counterfactual_loss(enc[:2], enc[:3], np.ones((2, schema.width)), 1, f)


# ----------------------------------------------------------------- training


def test_config_defaults_echo_paper_settings():
    cfg = TrainConfig(epochs=1)
    assert cfg.batch_size == 500
    assert cfg.learning_rate == 2e-4
    assert cfg.latent_dim == 128
    assert cfg.hidden_dim == 256
    assert cfg.tau == 0.5


def test_config_validation():
    with pytest.raises(SynthesizerError):
        TrainConfig(epochs=0)
    with pytest.raises(SynthesizerError):
        TrainConfig(epochs=1, desired_label=2)


def test_training_writes_log_and_is_deterministic():
    df, schema, enc, f, cfg, src = tiny_setup(epochs=3)
    s1 = train(enc, schema, f, src, cfg, seed=5)
    s2 = train(enc, schema, f, src, cfg, seed=5)
    assert [e["g_loss"] for e in s1.training_log] == \
        [e["g_loss"] for e in s2.training_log]
    assert {"epoch", "d_loss", "g_loss", "cf_loss"} <= set(s1.training_log[0])
    for name in s1.params.values:
        assert np.array_equal(s1.params.values[name], s2.params.values[name])


def test_generate_determinism_and_defaults():
    df, schema, enc, f, cfg, src = tiny_setup(epochs=2)
    synth = train(enc, schema, f, src, cfg, seed=1)
    q = make_query({"grade": "hi"}, schema)
    a = generate(synth, q, n=20, seed=9, f=f)
    b = generate(synth, q, n=20, seed=9, f=f)
    assert np.array_equal(a.encoded, b.encoded)
    assert np.array_equal(a.valid, b.valid)
    assert len(a.rows) == 20  # the default counterfactual set size


def test_generated_discrete_blocks_are_exact_one_hots():
    df, schema, enc, f, cfg, src = tiny_setup(epochs=2)
    synth = train(enc, schema, f, src, cfg, seed=2)
    out = generate(synth, Query(values={}), n=40, seed=3, f=f)
    blk = schema.block("grade")
    hard = out.encoded[:, blk]
    assert np.all(hard.sum(axis=1) == 1.0)
    assert set(np.unique(hard)) <= {0.0, 1.0}
    modes = out.encoded[:, schema.block("amount")][:, :3]
    assert np.all(modes.sum(axis=1) == 1.0)


def test_generate_unconditional_matches_all_masked_generate():
    df, schema, enc, f, cfg, src = tiny_setup(epochs=2)
    synth = train(enc, schema, f, src, cfg, seed=4)
    rows = generate_unconditional(synth, n=7, seed=11)
    via_query = generate(synth, Query(values={}), n=7, seed=11, f=f)
    pd.testing.assert_frame_equal(rows, via_query.rows)
    assert rows.shape == (7, 2)


def test_validity_flags_use_true_model():
    df, schema, enc, f, cfg, src = tiny_setup(epochs=2)
    synth = train(enc, schema, f, src, cfg, seed=6)
    out = generate(synth, Query(values={}), n=15, seed=2, f=f)
    from cfsynth.classifiers import predict

    assert np.array_equal(out.valid, predict(f, out.encoded) == 1)


@pytest.mark.slow
def test_observational_mode_matches_marginals():
    # L^cf off, q = 0: per-attribute marginal total-variation <= 0.15.
    df = tiny_frame(n=1500, seed=8)
    schema = fit_schema(df, n_modes=3)
    enc = encode_frame(df, schema)
    cfg = TrainConfig(epochs=150, latent_dim=32, hidden_dim=64,
                      batch_size=500, lambda_ce=0.0, lambda_dist=0.0)
    synth = train(enc, schema, None, ZeroQuerySource(schema), cfg, seed=7)
    sample = generate_unconditional(synth, n=1500, seed=3)

    p = df["grade"].value_counts(normalize=True)
    q = sample["grade"].value_counts(normalize=True)
    tv_cat = 0.5 * sum(abs(p.get(c, 0) - q.get(c, 0)) for c in set(p.index) | set(q.index))
    assert tv_cat <= 0.15

    lo = min(df["amount"].min(), sample["amount"].min())
    hi = max(df["amount"].max(), sample["amount"].max())
    bins = np.linspace(lo, hi, 16)
    hp, _ = np.histogram(df["amount"], bins=bins)
    hq, _ = np.histogram(sample["amount"], bins=bins)
    tv_cont = 0.5 * np.abs(hp / hp.sum() - hq / hq.sum()).sum()
    assert tv_cont <= 0.15


@pytest.mark.slow
def test_validity_monotone_in_ce_weight():
    # On moons with a fixed seed, turning the model-flip term on cannot
    # reduce validity.
    df = make_moons(400, seed=17)
    feats = df[["x1", "x2"]]
    schema = fit_schema(feats, n_modes=3)
    enc = encode_frame(feats, schema)
    y = df["label"].to_numpy()
    f = train_mlp(enc, y, config=MlpConfig(max_iter=300), seed=17)
    rates = {}
    for lam in (0.0, 1.0):
        cfg = TrainConfig(epochs=120, latent_dim=32, hidden_dim=64,
                          batch_size=400, lambda_ce=lam)
        src = PlainQuerySource(enc, schema, MaskPolicy(), seed=17)
        synth = train(enc, schema, f, src, cfg, seed=17)
        neg = np.nonzero(y == -1)[0][:40]
        vals = []
        for i in neg:
            q = make_query(dict(feats.iloc[i]), schema)
            vals.append(generate(synth, q, n=10, seed=100 + i, f=f).validity_rate)
        rates[lam] = float(np.mean(vals))
    assert rates[1.0] >= rates[0.0]


# -------------------------------------------------------------- persistence


def test_save_load_roundtrip_bit_identical(tmp_path):
    df, schema, enc, f, cfg, src = tiny_setup(epochs=2)
    synth = train(enc, schema, f, src, cfg, seed=8)
    path = tmp_path / "model.mcs1"
    save(synth, path)
    again = load(path)
    q = make_query({"grade": "mid"}, schema)
    a = generate(synth, q, n=10, seed=21, f=f)
    b = generate(again, q, n=10, seed=21, f=f)
    assert np.array_equal(a.encoded, b.encoded)
    assert again.config == synth.config
    assert path.read_bytes()[:4] == b"MCS1"


def test_truncated_model_fails_checksum(tmp_path):
    df, schema, enc, f, cfg, src = tiny_setup(epochs=1)
    synth = train(enc, schema, f, src, cfg, seed=9)
    path = tmp_path / "model.mcs1"
    save(synth, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-200])
    with pytest.raises(ContainerError, match="truncated|checksum"):
        load(path)


def test_load_rejects_non_synthesizer_container(tmp_path):
    from cfsynth.container import write_container

    path = tmp_path / "x.mcs1"
    write_container(path, {"format": "other"})
    with pytest.raises(SynthesizerError, match="not a synthesizer"):
        load(path)
