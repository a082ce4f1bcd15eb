"""Deployed models under explanation.

Binary classifiers over encoded instances with labels -1 (undesired) and
+1 (desired): a one-hidden-layer feed-forward net, a 10-tree Gini random
forest, and a distilled feed-forward surrogate providing gradients when the
deployed model itself is not differentiable. Validity is always judged
against the true model, never the surrogate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import (
    Graph,
    OptimizerState,
    ParamStore,
    backward,
    forward,
    glorot_init,
    optimizer_step,
)
from .container import read_container, write_container
from .seeding import spawn_rng

LABELS = (-1, 1)


class ClassifierError(Exception):
    pass


@dataclass
class MlpConfig:
    hidden: int = 100
    l2: float = 1.0
    max_iter: int = 1000
    lr: float = 1e-2
    tol: float = 1e-8


@dataclass
class ForestConfig:
    n_trees: int = 10
    max_depth: int = 5
    min_samples_split: int = 2


# ------------------------------------------------------------------ forest


@dataclass
class Tree:
    """Node-table representation: feature < 0 marks a leaf. ``dist`` holds
    the class distribution at every node (used only at leaves)."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    dist: np.ndarray  # (n_nodes, 2)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(len(x), dtype=int)
        while True:
            active = np.nonzero(self.feature[node] >= 0)[0]
            if len(active) == 0:
                break
            cur = node[active]
            vals = x[active, self.feature[cur]]
            node[active] = np.where(vals <= self.threshold[cur],
                                    self.left[cur], self.right[cur])
        return self.dist[node]


def _gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - (p * p).sum())


def _best_split(x: np.ndarray, y01: np.ndarray, feat_ids: np.ndarray):
    """Exhaustive Gini scan over candidate features; thresholds are the
    midpoints between consecutive distinct values."""
    n = len(y01)
    total = np.bincount(y01, minlength=2)
    base = _gini(total)
    best = (None, None, 0.0)  # feature, threshold, gain
    for f in feat_ids:
        order = np.argsort(x[:, f], kind="stable")
        xs, ys = x[order, f], y01[order]
        left = np.zeros(2)
        right = total.astype(float).copy()
        for i in range(n - 1):
            left[ys[i]] += 1
            right[ys[i]] -= 1
            if xs[i + 1] <= xs[i]:
                continue
            nl, nr = i + 1, n - i - 1
            impurity = (nl * _gini(left) + nr * _gini(right)) / n
            gain = base - impurity
            if gain > best[2] + 1e-15:
                best = (f, 0.5 * (xs[i] + xs[i + 1]), gain)
    return best


def _grow_tree(x: np.ndarray, y01: np.ndarray, cfg: ForestConfig,
               rng: np.random.Generator) -> Tree:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    dist: list[np.ndarray] = []
    n_sub = max(1, int(round(np.sqrt(x.shape[1]))))

    def leaf(idx: np.ndarray) -> int:
        counts = np.bincount(y01[idx], minlength=2).astype(float)
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        dist.append(counts / counts.sum())
        return node

    def grow(idx: np.ndarray, depth: int) -> int:
        counts = np.bincount(y01[idx], minlength=2)
        if (depth >= cfg.max_depth or len(idx) < cfg.min_samples_split
                or _gini(counts) == 0.0):
            return leaf(idx)
        feat_ids = np.sort(rng.choice(x.shape[1], size=n_sub, replace=False))
        f, thr, gain = _best_split(x[idx], y01[idx], feat_ids)
        if f is None:
            return leaf(idx)
        f = int(f)
        thr = float(thr)
        node = len(feature)
        feature.append(f)
        threshold.append(thr)
        left.append(-1)
        right.append(-1)
        dist.append(np.bincount(y01[idx], minlength=2) / len(idx))
        mask = x[idx, f] <= thr
        left[node] = grow(idx[mask], depth + 1)
        right[node] = grow(idx[~mask], depth + 1)
        return node

    grow(np.arange(len(x)), 0)
    return Tree(np.array(feature), np.array(threshold), np.array(left),
                np.array(right), np.array(dist))


# -------------------------------------------------------------- classifier


@dataclass
class Classifier:
    """kind is one of mlp / forest / surrogate. Nets keep their parameter
    store; forests keep their trees. ``meta`` carries training facts
    (final loss, agreement rate) for reporting."""

    kind: str
    input_width: int
    params: ParamStore | None = None
    hidden: int = 0
    trees: list[Tree] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def _net_graph(self) -> Graph:
        g = Graph(self.params)
        x = g.placeholder("x")
        w1, b1 = g.parameter("w1"), g.parameter("b1")
        w2, b2 = g.parameter("w2"), g.parameter("b2")
        h = g.relu(g.add(g.matmul(x, w1), b1))
        g.mark_output("logits", g.add(g.matmul(h, w2), b2))
        return g

    def logits(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "forest":
            raise ClassifierError("forest has no logits; distill a surrogate")
        return forward(self._net_graph(), {"x": np.atleast_2d(x)})["logits"]

    def attach_logits(self, graph: Graph, x_node: int, prefix: str) -> int:
        """Wire this net's (frozen) logits on top of an existing graph node,
        sharing parameter arrays through the graph's store."""
        if self.kind == "forest":
            raise ClassifierError("forest is not differentiable; use a surrogate")
        for pname in ("w1", "b1", "w2", "b2"):
            full = f"{prefix}{pname}"
            if full not in graph.params.values:
                graph.params.register(full, self.params.values[pname])
        h = graph.relu(graph.add(graph.matmul(x_node, graph.parameter(f"{prefix}w1")),
                                 graph.parameter(f"{prefix}b1")))
        return graph.add(graph.matmul(h, graph.parameter(f"{prefix}w2")),
                         graph.parameter(f"{prefix}b2"))

    @property
    def param_names(self) -> list[str]:
        return ["w1", "b1", "w2", "b2"]


def predict_proba(clf: Classifier, x: np.ndarray) -> np.ndarray:
    """Class probabilities, columns ordered as labels (-1, 1)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != clf.input_width:
        raise ClassifierError(
            f"instance width {x.shape[1]} != classifier width {clf.input_width}")
    if clf.kind == "forest":
        stacked = np.stack([tree.predict_proba(x) for tree in clf.trees])
        # sort along the tree axis first: float addition is not associative,
        # and the forest average must not depend on tree order
        return np.sort(stacked, axis=0).sum(axis=0) / len(clf.trees)
    logits = clf.logits(x)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def predict(clf: Classifier, x: np.ndarray) -> np.ndarray:
    proba = predict_proba(clf, x)
    return np.where(np.argmax(proba, axis=1) == 1, 1, -1)


def _check_labels(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y)
    bad = set(np.unique(y)) - set(LABELS)
    if bad:
        raise ClassifierError(f"labels must be in {LABELS}, got extras {sorted(bad)}")
    if len(np.unique(y)) < 2:
        raise ClassifierError("training data contains a single class")
    return (y == 1).astype(int)


def _init_net(width: int, hidden: int, rng: np.random.Generator) -> ParamStore:
    store = ParamStore()
    store.register("w1", glorot_init(rng, width, hidden))
    store.register("b1", np.zeros(hidden))
    store.register("w2", glorot_init(rng, hidden, 2))
    store.register("b2", np.zeros(2))
    return store


def _train_net(x: np.ndarray, targets: np.ndarray, cfg: MlpConfig,
               seed: int) -> tuple[ParamStore, float]:
    """Full-batch adaptive-moment training of the two-layer net against
    (possibly soft) targets, with an L2 penalty scaled like 1/(2n)."""
    n, width = x.shape
    store = _init_net(width, cfg.hidden, spawn_rng(seed, "mlp-init"))
    g = Graph(store)
    xin = g.placeholder("x")
    tgt = g.placeholder("t")
    w1, b1 = g.parameter("w1"), g.parameter("b1")
    w2, b2 = g.parameter("w2"), g.parameter("b2")
    h = g.relu(g.add(g.matmul(xin, w1), b1))
    logits = g.add(g.matmul(h, w2), b2)
    ce = g.mean(g.cross_entropy(logits, tgt))
    penalty = g.scale(g.add(g.sum(g.mul(w1, w1)), g.sum(g.mul(w2, w2))),
                      cfg.l2 / (2.0 * n))
    g.mark_output("loss", g.add(ce, penalty))

    opt = OptimizerState(store, ["w1", "b1", "w2", "b2"], lr=cfg.lr,
                         beta1=0.9, beta2=0.999)
    feed = {"x": x, "t": targets}
    prev = np.inf
    final = np.inf
    for _ in range(cfg.max_iter):
        final = float(forward(g, feed)["loss"])
        if abs(prev - final) < cfg.tol:
            break
        prev = final
        backward(g, "loss")
        optimizer_step(opt, g)
    return store, final


def train_mlp(x: np.ndarray, y: np.ndarray, config: MlpConfig | None = None,
              seed: int = 0) -> Classifier:
    """ReLU net with one hidden layer (default 100 units, L2 coefficient 1,
    at most 1000 iterations). Reports the final training loss in meta."""
    cfg = config or MlpConfig()
    x = np.asarray(x, dtype=np.float64)
    y01 = _check_labels(y)
    targets = np.zeros((len(x), 2))
    targets[np.arange(len(x)), y01] = 1.0
    store, final_loss = _train_net(x, targets, cfg, seed)
    return Classifier(kind="mlp", input_width=x.shape[1], params=store,
                      hidden=cfg.hidden, meta={"final_loss": final_loss,
                                               "config": vars(cfg).copy()})


def train_random_forest(x: np.ndarray, y: np.ndarray,
                        config: ForestConfig | None = None,
                        seed: int = 0) -> Classifier:
    """Bootstrap Gini forest, sqrt(d) features per split, depth capped at 5.
    Per-tree seeds are spawned by tree index, so results do not depend on
    training order."""
    cfg = config or ForestConfig()
    x = np.asarray(x, dtype=np.float64)
    y01 = _check_labels(y)
    trees = []
    for t in range(cfg.n_trees):
        rng = spawn_rng(seed, "forest-tree", t)
        idx = rng.integers(0, len(x), size=len(x))
        trees.append(_grow_tree(x[idx], y01[idx], cfg, rng))
    return Classifier(kind="forest", input_width=x.shape[1], trees=trees,
                      meta={"config": vars(cfg).copy()})


def distill_surrogate(teacher: Classifier, reference: np.ndarray,
                      config: MlpConfig | None = None, seed: int = 0) -> Classifier:
    """Fit a differentiable net to the teacher's probability outputs.

    Trains on 80% of the reference set against soft labels and reports the
    held-out hard-prediction agreement; below 0.85 a warning is raised but
    the surrogate is still returned.
    """
    cfg = config or MlpConfig(l2=1e-4, max_iter=2000)
    reference = np.asarray(reference, dtype=np.float64)
    if len(reference) == 0:
        raise ClassifierError("reference set is empty")
    soft = predict_proba(teacher, reference)
    rng = spawn_rng(seed, "surrogate-split")
    order = rng.permutation(len(reference))
    cut = max(1, int(0.8 * len(reference)))
    tr, ho = order[:cut], order[cut:]
    store, final_loss = _train_net(reference[tr], soft[tr], cfg, seed)
    surrogate = Classifier(kind="surrogate", input_width=reference.shape[1],
                           params=store, hidden=cfg.hidden,
                           meta={"final_loss": final_loss})
    if len(ho):
        agreement = float(np.mean(
            predict(surrogate, reference[ho]) == predict(teacher, reference[ho])))
    else:
        agreement = 1.0
    surrogate.meta["agreement"] = agreement
    if agreement < 0.85:
        warnings.warn(f"surrogate agreement {agreement:.3f} below 0.85",
                      stacklevel=2)
    return surrogate


def f_score(clf: Classifier, x: np.ndarray, y: np.ndarray) -> float:
    """Harmonic mean of precision and recall for the desired class (+1);
    defined as 0 when both are undefined."""
    pred = predict(clf, x)
    y = np.asarray(y)
    tp = int(np.sum((pred == 1) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y == -1)))
    fn = int(np.sum((pred == -1) & (y == 1)))
    if 2 * tp + fp + fn == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def train_test_split(n: int, test_fraction: float = 0.2,
                     seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Seed-deterministic 80/20 index split."""
    order = spawn_rng(seed, "train-test-split").permutation(n)
    cut = int(round(n * (1.0 - test_fraction)))
    return order[:cut], order[cut:]


# -------------------------------------------------------------- persistence


def save_classifier(clf: Classifier, path) -> None:
    entries: dict = {"kind": clf.kind, "input_width": np.array(float(clf.input_width))}
    if clf.kind == "forest":
        entries["n_trees"] = np.array(float(len(clf.trees)))
        for i, tree in enumerate(clf.trees):
            entries[f"tree{i}/feature"] = tree.feature.astype(float)
            entries[f"tree{i}/threshold"] = tree.threshold
            entries[f"tree{i}/left"] = tree.left.astype(float)
            entries[f"tree{i}/right"] = tree.right.astype(float)
            entries[f"tree{i}/dist"] = tree.dist
    else:
        entries["hidden"] = np.array(float(clf.hidden))
        for name in clf.param_names:
            entries[f"net/{name}"] = clf.params.values[name]
    write_container(path, entries)


def load_classifier(path) -> Classifier:
    entries = read_container(path)
    kind = entries["kind"]
    width = int(entries["input_width"])
    if kind == "forest":
        trees = []
        for i in range(int(entries["n_trees"])):
            trees.append(Tree(
                feature=entries[f"tree{i}/feature"].astype(int),
                threshold=entries[f"tree{i}/threshold"],
                left=entries[f"tree{i}/left"].astype(int),
                right=entries[f"tree{i}/right"].astype(int),
                dist=entries[f"tree{i}/dist"],
            ))
        return Classifier(kind="forest", input_width=width, trees=trees)
    store = ParamStore()
    for name in ("w1", "b1", "w2", "b2"):
        store.register(name, entries[f"net/{name}"])
    return Classifier(kind=str(kind), input_width=width, params=store,
                      hidden=int(entries["hidden"]))
