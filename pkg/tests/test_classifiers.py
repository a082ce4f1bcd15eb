import numpy as np
import pytest

from cfsynth.autodiff import Graph, forward
from cfsynth.classifiers import (
    Classifier,
    ClassifierError,
    ForestConfig,
    MlpConfig,
    distill_surrogate,
    f_score,
    load_classifier,
    predict,
    predict_proba,
    save_classifier,
    train_mlp,
    train_random_forest,
    train_test_split,
)
from util_gradcheck import max_rel_err, numeric_grad_param


def blobs(n=200, seed=0, gap=6.0):
    rng = np.random.default_rng(seed)
    x = np.vstack([rng.normal(0, 1, (n // 2, 2)), rng.normal(gap, 1, (n // 2, 2))])
    y = np.array([-1] * (n // 2) + [1] * (n // 2))
    return x, y


def xor_data(n=400, seed=1):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, (n, 2))
    y = np.where((x[:, 0] > 0) ^ (x[:, 1] > 0), 1, -1)
    return x, y


def moons_like(n=300, seed=2):
    rng = np.random.default_rng(seed)
    t = rng.uniform(0, np.pi, n // 2)
    a = np.c_[np.cos(t), np.sin(t)]
    b = np.c_[1 - np.cos(t), 0.5 - np.sin(t)]
    x = np.vstack([a, b]) + rng.normal(0, 0.1, (n, 2))
    y = np.array([-1] * (n // 2) + [1] * (n // 2))
    return x, y


# --------------------------------------------------------------------- MLP


def test_mlp_default_config_echo():
    cfg = MlpConfig()
    assert cfg.hidden == 100 and cfg.l2 == 1.0 and cfg.max_iter == 1000


def test_mlp_separable_blobs_perfect_holdout():
    x, y = blobs(seed=3)
    tr, te = train_test_split(len(x), seed=3)
    clf = train_mlp(x[tr], y[tr], seed=3)
    assert np.mean(predict(clf, x[te]) == y[te]) == 1.0
    assert np.isfinite(clf.meta["final_loss"])


def test_mlp_constant_features_predict_majority():
    x = np.ones((60, 3))
    y = np.array([1] * 45 + [-1] * 15)
    clf = train_mlp(x, y, seed=0)
    assert np.all(predict(clf, np.ones((5, 3))) == 1)


def test_single_class_data_errors():
    x = np.random.default_rng(0).normal(size=(10, 2))
    with pytest.raises(ClassifierError, match="single class"):
        train_mlp(x, np.ones(10, dtype=int))
    with pytest.raises(ClassifierError, match="single class"):
        train_random_forest(x, -np.ones(10, dtype=int))


def test_mlp_zero_weights_uniform_proba():
    clf = train_mlp(*blobs(60, seed=4), config=MlpConfig(max_iter=1), seed=4)
    for name in clf.param_names:
        clf.params.values[name][...] = 0.0
    proba = predict_proba(clf, np.random.default_rng(1).normal(size=(7, 2)))
    assert np.allclose(proba, 0.5, atol=1e-12)


# ------------------------------------------------------------------ forest


def test_forest_default_config_echo():
    cfg = ForestConfig()
    assert cfg.n_trees == 10 and cfg.max_depth == 5


def test_forest_xor_accuracy():
    x, y = xor_data()
    tr, te = train_test_split(len(x), seed=1)
    clf = train_random_forest(x[tr], y[tr], seed=1)
    assert np.mean(predict(clf, x[te]) == y[te]) >= 0.9
    for tree in clf.trees:
        assert tree.feature.min() >= -1


def test_forest_depth_capped():
    x, y = xor_data(600, seed=5)
    clf = train_random_forest(x, y, seed=5)

    def depth(tree, node=0):
        if tree.feature[node] < 0:
            return 0
        return 1 + max(depth(tree, tree.left[node]), depth(tree, tree.right[node]))

    assert max(depth(t) for t in clf.trees) <= 5


def test_pure_node_becomes_leaf():
    x = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([-1, -1, 1, 1])
    clf = train_random_forest(x, y, config=ForestConfig(n_trees=1), seed=7)
    tree = clf.trees[0]
    leaves = tree.feature < 0
    assert leaves.any()
    # every leaf distribution sums to one
    assert np.allclose(tree.dist[leaves].sum(axis=1), 1.0)


def test_forest_identical_stumps_vote_one():
    stump = train_random_forest(
        np.array([[0.0], [1.0]] * 10), np.array([-1, 1] * 10),
        config=ForestConfig(n_trees=1, max_depth=1), seed=0).trees[0]
    clf = Classifier(kind="forest", input_width=1, trees=[stump] * 10)
    proba = predict_proba(clf, np.array([[1.0]]))
    assert np.allclose(proba, [[0.0, 1.0]])


def test_forest_prediction_invariant_under_tree_order():
    x, y = xor_data(200, seed=9)
    clf = train_random_forest(x, y, seed=9)
    shuffled = Classifier(kind="forest", input_width=2, trees=clf.trees[::-1])
    pts = np.random.default_rng(2).uniform(-1, 1, (50, 2))
    assert np.array_equal(predict_proba(clf, pts), predict_proba(shuffled, pts))


# ----------------------------------------------------------- predict_proba


def test_proba_rows_sum_to_one_all_kinds():
    x, y = moons_like()
    pts = np.random.default_rng(0).normal(size=(40, 2))
    for clf in (train_mlp(x, y, config=MlpConfig(max_iter=100), seed=0),
                train_random_forest(x, y, seed=0)):
        proba = predict_proba(clf, pts)
        assert np.allclose(proba.sum(axis=1), 1.0, atol=1e-9)


def test_width_mismatch_error():
    clf = train_random_forest(*xor_data(100), seed=0)
    with pytest.raises(ClassifierError, match="width"):
        predict_proba(clf, np.zeros((2, 5)))


def test_argmax_consistency_between_proba_and_predict():
    x, y = moons_like(seed=11)
    clf = train_mlp(x, y, config=MlpConfig(max_iter=200), seed=11)
    pts = np.random.default_rng(3).normal(size=(1000, 2))
    proba = predict_proba(clf, pts)
    hard = predict(clf, pts)
    assert np.array_equal(np.where(proba[:, 1] > proba[:, 0], 1, -1), hard)


# ----------------------------------------------------------------- f-score


def test_f_score_cases():
    x = np.arange(8, dtype=float).reshape(-1, 1)
    clf = train_random_forest(
        np.array([[0.0], [10.0]] * 20), np.array([-1, 1] * 20),
        config=ForestConfig(n_trees=1, max_depth=1), seed=0)
    y_perfect = predict(clf, x)
    assert f_score(clf, x, y_perfect) == 1.0
    assert f_score(clf, x, -y_perfect) == 0.0


def test_f_score_formula():
    # precision 0.5, recall 1.0 -> 2/3, checked on constructed predictions
    class Fixed(Classifier):
        pass

    clf = train_random_forest(np.array([[0.0], [10.0]] * 20),
                              np.array([-1, 1] * 20),
                              config=ForestConfig(n_trees=1, max_depth=1), seed=0)
    x = np.array([[10.0], [10.0], [0.0], [0.0]])  # predicted: 1 1 -1 -1
    y = np.array([1, -1, -1, -1])
    assert f_score(clf, x, y) == pytest.approx(2 / 3)


# --------------------------------------------------------------- surrogate


def test_surrogate_matches_mlp_teacher():
    x, y = moons_like(seed=13)
    teacher = train_mlp(x, y, config=MlpConfig(max_iter=300), seed=13)
    surrogate = distill_surrogate(teacher, x, seed=13)
    assert surrogate.meta["agreement"] >= 0.98


def test_surrogate_matches_forest_teacher():
    x, y = moons_like(n=400, seed=15)
    teacher = train_random_forest(x, y, seed=15)
    surrogate = distill_surrogate(teacher, x, seed=15)
    assert surrogate.meta["agreement"] >= 0.9


def test_surrogate_constant_teacher():
    x, y = blobs(100, seed=17)
    teacher = train_mlp(x, y, config=MlpConfig(max_iter=1), seed=17)
    for name in teacher.param_names:
        teacher.params.values[name][...] = 0.0
    teacher.params.values["b2"][:] = [5.0, -5.0]  # always class -1
    surrogate = distill_surrogate(teacher, x, seed=17)
    pts = np.random.default_rng(4).normal(size=(50, 2))
    assert np.all(predict(surrogate, pts) == -1)


def test_surrogate_gradient_matches_finite_differences():
    x, y = blobs(100, seed=19)
    teacher = train_mlp(x, y, config=MlpConfig(max_iter=100), seed=19)
    g = Graph()
    xin = g.parameter("xin", np.array([[0.3, -0.7]]))
    logits = teacher.attach_logits(g, xin, "f_")
    target = g.constant(np.array([[0.0, 1.0]]))
    g.mark_output("loss", g.mean(g.cross_entropy(logits, target)))
    forward(g, {})
    from cfsynth.autodiff import backward

    grads = backward(g, "loss")
    num = numeric_grad_param(g, {}, "xin")
    assert max_rel_err(grads["xin"], num) <= 1e-4


def test_empty_reference_errors():
    x, y = blobs(50, seed=21)
    teacher = train_mlp(x, y, config=MlpConfig(max_iter=1), seed=21)
    with pytest.raises(ClassifierError, match="empty"):
        distill_surrogate(teacher, np.zeros((0, 2)))


# ---------------------------------------------------------------- plumbing


def test_split_is_seed_deterministic():
    a = train_test_split(100, seed=5)
    b = train_test_split(100, seed=5)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert len(a[0]) == 80 and len(a[1]) == 20


def test_classifier_container_roundtrip(tmp_path):
    x, y = moons_like(seed=23)
    for clf in (train_mlp(x, y, config=MlpConfig(max_iter=50), seed=23),
                train_random_forest(x, y, seed=23)):
        path = tmp_path / f"{clf.kind}.mcs1"
        save_classifier(clf, path)
        again = load_classifier(path)
        pts = np.random.default_rng(5).normal(size=(20, 2))
        assert np.array_equal(predict_proba(clf, pts), predict_proba(again, pts))
    assert path.read_bytes()[:4] == b"MCS1"
