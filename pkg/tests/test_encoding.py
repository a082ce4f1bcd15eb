import numpy as np
import pandas as pd
import pytest

from cfsynth.encoding import (
    STD_FLOOR,
    DataSchema,
    EncodingError,
    PreprocessRules,
    decode_instance,
    decode_matrix,
    encode_frame,
    encode_instance,
    fit_gmm,
    fit_schema,
    make_query,
    parse_schema_config,
    preprocess,
)


def toy_frame(n=400, seed=0):
    rng = np.random.default_rng(seed)
    return pd.DataFrame({
        "amount": np.concatenate([rng.normal(0, 1, n // 2), rng.normal(10, 1, n - n // 2)]),
        "grade": rng.choice(["a", "b", "c"], size=n, p=[0.5, 0.3, 0.2]),
    })


# --------------------------------------------------------------------- GMM


def test_fit_gmm_single_mode_closed_form():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    model = fit_gmm(x, 1)
    assert model.means[0] == pytest.approx(x.mean(), abs=1e-9)
    assert model.stds[0] == pytest.approx(x.std(), abs=1e-6)
    assert model.weights[0] == pytest.approx(1.0)


def test_fit_gmm_two_clusters():
    # Sample-and-fit oracle with a fixed seed: draws from N(0,1) and N(10,1).
    rng = np.random.default_rng(42)
    x = np.concatenate([rng.normal(0, 1, 250), rng.normal(10, 1, 250)])
    model = fit_gmm(x, 2)
    means = np.sort(model.means)
    assert abs(means[0] - 0.0) < 0.3
    assert abs(means[1] - 10.0) < 0.3


def test_fit_gmm_identical_values_floors_std():
    model = fit_gmm(np.full(50, 3.25), 3)
    assert np.allclose(model.means, 3.25)
    assert np.all(model.stds == STD_FLOOR)


def test_fit_gmm_errors():
    with pytest.raises(EncodingError, match="empty"):
        fit_gmm([], 1)
    with pytest.raises(EncodingError):
        fit_gmm([1.0, 2.0], 5)


def test_fit_gmm_weights_sum_to_one():
    rng = np.random.default_rng(3)
    model = fit_gmm(rng.normal(size=300), 4)
    assert model.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(model.stds > 0)


# ---------------------------------------------------------------- encoding


def test_categorical_one_hot():
    df = pd.DataFrame({"grade": ["a", "b", "c", "b"]})
    schema = fit_schema(df)
    vec = encode_instance({"grade": "b"}, schema)
    assert np.array_equal(vec, [0.0, 1.0, 0.0])


def test_continuous_center_encodes_to_zero_scalar():
    df = toy_frame()
    schema = fit_schema(df, n_modes=2)
    spec = schema.attribute("amount")
    mu = spec.gmm.means[0]
    vec = encode_instance({"amount": mu, "grade": "a"}, schema)
    block = vec[schema.block("amount")]
    k = spec.gmm.n_modes
    assert block[k] == pytest.approx(0.0, abs=1e-12)
    assert block[:k].sum() == 1.0 and set(np.unique(block[:k])) <= {0.0, 1.0}


def test_unknown_category_and_nonfinite_error():
    schema = fit_schema(toy_frame(), n_modes=2)
    with pytest.raises(EncodingError, match="unknown category"):
        encode_instance({"amount": 1.0, "grade": "z"}, schema)
    with pytest.raises(EncodingError, match="non-finite"):
        encode_instance({"amount": np.nan, "grade": "a"}, schema)


def test_width_matches_schema():
    df = toy_frame()
    schema = fit_schema(df, n_modes=3)
    enc = encode_frame(df, schema)
    assert enc.shape == (len(df), schema.width)
    assert schema.width == (3 + 1) + 3


def test_decode_width_mismatch():
    schema = fit_schema(toy_frame(), n_modes=2)
    with pytest.raises(EncodingError, match="width"):
        decode_matrix(np.zeros((1, schema.width + 1)), schema)


def test_decode_zero_scalar_returns_mode_mean():
    schema = fit_schema(toy_frame(), n_modes=2)
    spec = schema.attribute("amount")
    vec = np.zeros(schema.width)
    vec[schema.block("amount")][0] = 1.0  # mode 0, scalar 0
    vec[schema.block("grade")][2] = 1.0
    row = decode_instance(vec, schema)
    assert row["amount"] == pytest.approx(spec.gmm.means[0])
    assert row["grade"] == "c"


def test_relaxed_block_hardens_by_argmax():
    df = pd.DataFrame({"grade": ["a", "b", "a"]})
    schema = fit_schema(df)
    row = decode_instance(np.array([0.6, 0.4]), schema)
    assert row["grade"] == "a"


def test_round_trip_thousand_rows():
    # Round-trip oracle: categorical exact, continuous within 1e-9 when the
    # value lies inside the clipping range of its argmax mode.
    df = toy_frame(n=1000, seed=7)
    schema = fit_schema(df, n_modes=2)
    enc = encode_frame(df, schema)
    dec = decode_matrix(enc, schema)
    assert list(dec["grade"]) == list(df["grade"])
    spec = schema.attribute("amount")
    x = df["amount"].to_numpy()
    modes = spec.gmm.assign_modes(x)
    span = 4.0 * spec.gmm.stds[modes]
    unclipped = np.abs(x - spec.gmm.means[modes]) <= span
    assert unclipped.mean() > 0.95
    err = np.abs(dec["amount"].to_numpy() - x)
    assert err[unclipped].max() <= 1e-9


# ------------------------------------------------------------------- query


def test_empty_query_is_zero_vector():
    schema = fit_schema(toy_frame(), n_modes=2)
    q = make_query({}, schema)
    assert np.array_equal(q.encode(schema), np.zeros(schema.width))
    assert set(q.masked(schema)) == {"amount", "grade"}


def test_query_single_block_nonzero():
    schema = fit_schema(toy_frame(), n_modes=2)
    q = make_query({"grade": "b"}, schema)
    vec = q.encode(schema)
    blk = schema.block("grade")
    assert vec[blk].sum() == 1.0
    outside = np.delete(vec, np.arange(blk.start, blk.stop))
    assert np.all(outside == 0.0)


def test_full_query_equals_encode_instance():
    schema = fit_schema(toy_frame(), n_modes=2)
    row = {"amount": 9.7, "grade": "c"}
    q = make_query(row, schema)
    assert np.array_equal(q.encode(schema), encode_instance(row, schema))


def test_query_none_values_masked_and_unknown_attr():
    schema = fit_schema(toy_frame(), n_modes=2)
    q = make_query({"grade": None}, schema)
    assert q.masked(schema) == ["amount", "grade"]
    with pytest.raises(EncodingError, match="unknown attribute"):
        make_query({"nope": 1}, schema)


def test_dim_mask_covers_unmasked_blocks():
    schema = fit_schema(toy_frame(), n_modes=2)
    q = make_query({"amount": 0.5}, schema)
    mask = q.dim_mask(schema)
    assert np.all(mask[schema.block("amount")] == 1.0)
    assert np.all(mask[schema.block("grade")] == 0.0)


# -------------------------------------------------------------- preprocess


def test_preprocess_drops_missing_rows():
    df = pd.DataFrame({"a": [1.0, np.nan, 3.0], "b": ["x", "y", ""]})
    out = preprocess(df)
    assert len(out) == 1
    assert out.iloc[0]["a"] == 1.0


def test_preprocess_merges_values():
    df = pd.DataFrame({"education": ["Assoc-voc", "Assoc-acdm", "Bachelors"]})
    rules = PreprocessRules(merges={"education": {"Assoc-voc": "Assoc",
                                                  "Assoc-acdm": "Assoc"}})
    out = preprocess(df, rules)
    assert list(out["education"]) == ["Assoc", "Assoc", "Bachelors"]


def test_preprocess_identity_without_rules():
    df = toy_frame(n=50)
    out = preprocess(df)
    pd.testing.assert_frame_equal(out, df)


def test_preprocess_bad_rules():
    df = pd.DataFrame({"a": [1]})
    with pytest.raises(EncodingError, match="absent column"):
        preprocess(df, PreprocessRules(drop_columns=("zz",)))
    with pytest.raises(EncodingError, match="absent column"):
        preprocess(df, PreprocessRules(merges={"zz": {"x": "y"}}))


def test_preprocess_drop_columns():
    df = pd.DataFrame({"a": [1, 2], "fnlwgt": [9, 9]})
    out = preprocess(df, PreprocessRules(drop_columns=("fnlwgt",)))
    assert list(out.columns) == ["a"]


# ----------------------------------------------------------- schema config


CONFIG = """
[dataset]
drop = fnlwgt
label = income
desired = >50K
focus = marital

[attribute education]
kind = categorical
categories = School, HS-grad, Assoc, Bachelors
merge = Assoc-voc -> Assoc, Assoc-acdm -> Assoc

[attribute age]
kind = continuous
modes = 4
"""


def test_parse_schema_config():
    cfg = parse_schema_config(CONFIG)
    assert cfg.rules.drop_columns == ("fnlwgt",)
    assert cfg.label == "income" and cfg.desired_value == ">50K"
    assert cfg.focus == ("marital",)
    assert cfg.kinds == {"education": "categorical", "age": "continuous"}
    assert cfg.n_modes == {"age": 4}
    assert cfg.category_order["education"] == ["School", "HS-grad", "Assoc", "Bachelors"]
    assert cfg.rules.merges["education"]["Assoc-voc"] == "Assoc"


def test_schema_json_roundtrip():
    schema = fit_schema(toy_frame(), n_modes=2)
    again = DataSchema.from_json(schema.to_json())
    assert again.names == schema.names
    assert again.width == schema.width
    row = {"amount": 3.3, "grade": "b"}
    assert np.array_equal(encode_instance(row, again), encode_instance(row, schema))


def test_category_order_respected():
    df = pd.DataFrame({"grade": ["b", "a", "c"]})
    schema = fit_schema(df, category_order={"grade": ["c", "b", "a"]})
    assert schema.attribute("grade").categories == ("c", "b", "a")
    vec = encode_instance({"grade": "c"}, schema)
    assert np.array_equal(vec, [1.0, 0.0, 0.0])
