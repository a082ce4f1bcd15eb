"""Conditional adversarial counterfactual synthesizer.

A generator maps (noise z, query q) to an encoded instance through
per-attribute output heads (Gumbel-Softmax blocks for categoricals and
mixture modes, tanh scalars); a discriminator scores (instance, query)
pairs. Both train in a min-max game whose generator objective carries a
counterfactual term: cross-entropy of the deployed model's prediction
against the preferred label plus the squared distance to the query over
unmasked attributes, every term weighted by the query batch's importance
weights. Once trained, counterfactuals for any query are a single forward
pass per sample.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from .autodiff import (
    Graph,
    OptimizerState,
    ParamStore,
    backward,
    forward,
    glorot_init,
    load_snapshot,
    optimizer_step,
)
from .classifiers import Classifier, distill_surrogate, predict
from .container import read_container, write_container
from .encoding import DataSchema, Query, decode_matrix
from .seeding import spawn_rng
from .umbrella import (
    MaskPolicy,
    QueryBatch,
    UmbrellaPlan,
    apply_mask,
    draw_training_queries,
    harden_unit_blocks,
)

NOISE_EPS = 1e-9


class SynthesizerError(Exception):
    pass


@dataclass
class TrainConfig:
    latent_dim: int = 128
    hidden_dim: int = 256
    batch_size: int = 500
    learning_rate: float = 2e-4
    epochs: int = 300
    distance: str = "sq_euclid"
    lambda_ce: float = 1.0
    lambda_dist: float = 1.0
    desired_label: int = 1
    tau: float = 0.5
    pairing_pool: int = 4096

    def __post_init__(self):
        for name in ("latent_dim", "hidden_dim", "batch_size", "epochs"):
            if getattr(self, name) <= 0:
                raise SynthesizerError(f"{name} must be positive")
        if self.desired_label not in (-1, 1):
            raise SynthesizerError("desired_label must be -1 or +1")
        if self.distance != "sq_euclid":
            raise SynthesizerError(f"unsupported distance {self.distance!r}")


# ------------------------------------------------------------ architectures


def _head_params(store: ParamStore, rng, prefix: str, hidden: int,
                 spec) -> None:
    if spec.kind == "categorical":
        c = len(spec.categories)
        store.register(f"{prefix}head/{spec.name}/w", glorot_init(rng, hidden, c))
        store.register(f"{prefix}head/{spec.name}/b", np.zeros(c))
    else:
        k = spec.gmm.n_modes
        store.register(f"{prefix}head/{spec.name}/mw", glorot_init(rng, hidden, k))
        store.register(f"{prefix}head/{spec.name}/mb", np.zeros(k))
        store.register(f"{prefix}head/{spec.name}/sw", glorot_init(rng, hidden, 1))
        store.register(f"{prefix}head/{spec.name}/sb", np.zeros(1))


def _attach_heads(g: Graph, h: int, prefix: str, spec, tau: float) -> int:
    """Output block for one attribute on top of hidden node ``h``."""
    if spec.kind == "categorical":
        logits = g.add(g.matmul(h, g.parameter(f"{prefix}head/{spec.name}/w")),
                       g.parameter(f"{prefix}head/{spec.name}/b"))
        return g.gumbel_softmax(logits, g.placeholder(f"gu/{spec.name}"), tau)
    mode_logits = g.add(g.matmul(h, g.parameter(f"{prefix}head/{spec.name}/mw")),
                        g.parameter(f"{prefix}head/{spec.name}/mb"))
    modes = g.gumbel_softmax(mode_logits, g.placeholder(f"gu/{spec.name}"), tau)
    scalar = g.tanh(g.add(g.matmul(h, g.parameter(f"{prefix}head/{spec.name}/sw")),
                          g.parameter(f"{prefix}head/{spec.name}/sb")))
    return g.concat(modes, scalar)


class MonolithicGenerator:
    """Single two-layer net: concat(z, q) -> hidden -> per-attribute heads."""

    kind = "monolithic"

    def __init__(self, schema: DataSchema, config: TrainConfig):
        self.schema = schema
        self.config = config

    def describe(self) -> dict:
        return {"kind": self.kind}

    def init_params(self, store: ParamStore, seed: int) -> None:
        rng = spawn_rng(seed, "gen-init")
        width = self.schema.width
        store.register("g/w1", glorot_init(rng, self.config.latent_dim + width,
                                           self.config.hidden_dim))
        store.register("g/b1", np.zeros(self.config.hidden_dim))
        for spec in self.schema.attributes:
            _head_params(store, rng, "g/", self.config.hidden_dim, spec)

    def param_names(self, store: ParamStore) -> list[str]:
        return [n for n in store.values if n.startswith("g/")]

    def build(self, g: Graph, q_node: int) -> int:
        z = g.placeholder("z")
        h = g.relu(g.add(g.matmul(g.concat(z, q_node), g.parameter("g/w1")),
                         g.parameter("g/b1")))
        blocks = [_attach_heads(g, h, "g/", spec, self.config.tau)
                  for spec in self.schema.attributes]
        return g.concat(*blocks) if len(blocks) > 1 else blocks[0]

    def sample_noise(self, rng: np.random.Generator, n: int) -> dict[str, np.ndarray]:
        feeds = {"z": rng.normal(size=(n, self.config.latent_dim))}
        for spec in self.schema.attributes:
            width = len(spec.categories) if spec.kind == "categorical" \
                else spec.gmm.n_modes
            feeds[f"gu/{spec.name}"] = rng.uniform(NOISE_EPS, 1 - NOISE_EPS,
                                                   size=(n, width))
        return feeds


# -------------------------------------------------------------- discriminator


def init_discriminator(store: ParamStore, schema: DataSchema, config: TrainConfig,
                       seed: int) -> None:
    rng = spawn_rng(seed, "disc-init")
    width = 2 * schema.width  # sample concat query
    store.register("d/w1", glorot_init(rng, width, config.hidden_dim))
    store.register("d/b1", np.zeros(config.hidden_dim))
    store.register("d/w2", glorot_init(rng, config.hidden_dim, 1))
    store.register("d/b2", np.zeros(1))


def _attach_discriminator(g: Graph, x_node: int, q_node: int) -> int:
    """Returns the pre-sigmoid score node, shape (n, 1)."""
    h = g.relu(g.add(g.matmul(g.concat(x_node, q_node), g.parameter("d/w1")),
                     g.parameter("d/b1")))
    return g.add(g.matmul(h, g.parameter("d/w2")), g.parameter("d/b2"))


def _log_sigmoid(g: Graph, s: int) -> int:
    # log sigmoid(s) = -softplus(-s), stable at both tails
    return g.scale(g.softplus(g.scale(s, -1.0)), -1.0)


def _log_one_minus_sigmoid(g: Graph, s: int) -> int:
    # log(1 - sigmoid(s)) = -softplus(s)
    return g.scale(g.softplus(s), -1.0)


# ----------------------------------------------------------- loss (numpy op)


def counterfactual_loss(generated: np.ndarray, queries: np.ndarray,
                        dim_mask: np.ndarray, desired_label: int,
                        f_grad: Classifier, lambda_ce: float = 1.0,
                        lambda_dist: float = 1.0,
                        weights: np.ndarray | None = None) -> float:
    """The counterfactual regularizer as a plain number.

    lambda_ce * CE(f(x_hat), y') + lambda_dist * |(x_hat - q) restricted to
    unmasked dims|^2, averaged with the batch importance weights. Mirrors
    the node structure used inside training graphs.
    """
    generated = np.asarray(generated, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    if generated.shape != queries.shape:
        raise SynthesizerError(
            f"generated shape {generated.shape} != queries {queries.shape}")
    n = len(generated)
    if weights is None:
        weights = np.full(n, 1.0 / n)
    weights = np.asarray(weights, dtype=np.float64)

    ce = np.zeros(n)
    if lambda_ce != 0.0:
        logits = f_grad.logits(generated)
        shifted = logits - logits.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        col = 1 if desired_label == 1 else 0
        ce = -logp[:, col]
    diff = (generated - queries) * dim_mask
    dist = (diff * diff).sum(axis=1)
    return float(lambda_ce * (weights * ce).sum()
                 + lambda_dist * (weights * dist).sum())


# ------------------------------------------------------------- query sources


class PlainQuerySource:
    """Masked random rows of the training data; uniform weights."""

    def __init__(self, encoded: np.ndarray, schema: DataSchema,
                 policy: MaskPolicy, seed: int):
        self.encoded = encoded
        self.schema = schema
        self.policy = policy
        self.seed = seed

    def draw(self, batch_size: int, counter: int) -> QueryBatch:
        rng = spawn_rng(self.seed, "plain-queries", counter)
        rows = self.encoded[rng.integers(0, len(self.encoded), size=batch_size)]
        masked, attr_mask, dim_mask = apply_mask(rows, self.schema, self.policy, rng)
        return QueryBatch(encoded=masked, attr_mask=attr_mask, dim_mask=dim_mask,
                          weights=np.full(batch_size, 1.0 / batch_size))


class ZeroQuerySource:
    """All-masked queries (q = 0): observational synthesis mode."""

    def __init__(self, schema: DataSchema):
        self.schema = schema

    def draw(self, batch_size: int, counter: int) -> QueryBatch:
        width = self.schema.width
        n_attr = len(self.schema.attributes)
        return QueryBatch(encoded=np.zeros((batch_size, width)),
                          attr_mask=np.zeros((batch_size, n_attr), dtype=bool),
                          dim_mask=np.zeros((batch_size, width)),
                          weights=np.full(batch_size, 1.0 / batch_size))


class UmbrellaQuerySource:
    """Draws from a solved umbrella plan.

    ``balanced=True`` (default) trains on the balanced window mixture with
    uniform loss weights; the plan's solved w still governs how the draws
    reconstruct the prior. Attaching the full reconstruction weights
    instead (``balanced=False``) provably restores plain-prior gradients
    in expectation, which re-suppresses exactly the rare values the
    windows exist to cover; measured on a 97/3 attribute it collapses the
    rare-value conditional back to the unassisted baseline.
    """

    def __init__(self, plan: UmbrellaPlan, schema: DataSchema,
                 policy: MaskPolicy, seed: int, balanced: bool = True):
        self.plan = plan
        self.schema = schema
        self.policy = policy
        self.seed = seed
        self.balanced = balanced

    def draw(self, batch_size: int, counter: int) -> QueryBatch:
        batch = draw_training_queries(self.plan, self.schema, batch_size,
                                      self.policy, self.seed, counter=counter)
        if self.balanced:
            batch.weights = np.full(len(batch.encoded), 1.0 / len(batch.encoded))
        return batch


# ----------------------------------------------------------------- pairing


class RealPairer:
    """Pick, for each query, a real instance that matches it on the
    unmasked attributes when one exists, else the nearest match in encoded
    distance. Exact-match ties are broken uniformly at random so the
    discriminator sees the full conditional slice of the data."""

    def __init__(self, encoded: np.ndarray, pool_size: int, seed: int):
        rng = spawn_rng(seed, "pairing-pool")
        if len(encoded) > pool_size:
            keep = rng.choice(len(encoded), size=pool_size, replace=False)
            self.pool = encoded[np.sort(keep)]
        else:
            self.pool = encoded
        self._pool_sq = self.pool**2

    def pair(self, batch: QueryBatch, rng: np.random.Generator) -> np.ndarray:
        q, m = batch.encoded, batch.dim_mask
        term1 = ((q * q) * m).sum(axis=1)
        term2 = -2.0 * (q * m) @ self.pool.T
        term3 = m @ self._pool_sq.T
        d2 = term1[:, None] + term2 + term3
        d2 += rng.uniform(0.0, 1e-9, size=d2.shape)  # randomize exact ties
        return self.pool[np.argmin(d2, axis=1)]


# ------------------------------------------------------------------ training


@dataclass
class TrainedSynthesizer:
    schema: DataSchema
    config: TrainConfig
    arch: dict
    params: ParamStore
    training_log: list = field(default_factory=list)

    def _generator(self):
        from .causal_generator import CausalGraph, ModularGenerator

        if self.arch.get("kind") == "modular":
            graph = CausalGraph.from_edges(self.schema.names,
                                           self.arch.get("edges", []))
            return ModularGenerator(self.schema, self.config, graph)
        return MonolithicGenerator(self.schema, self.config)

    def generation_graph(self) -> Graph:
        g = Graph(self.params)
        q = g.placeholder("q")
        gen = self._generator()
        g.mark_output("x", gen.build(g, q))
        return g

    def raw_samples(self, query_vec: np.ndarray, n: int, seed: int) -> np.ndarray:
        gen = self._generator()
        g = self.generation_graph()
        rng = spawn_rng(seed, "generate")
        feeds = gen.sample_noise(rng, n)
        feeds["q"] = np.tile(query_vec[None, :], (n, 1))
        return forward(g, feeds)["x"]

    def schema_hash(self) -> str:
        return hashlib.sha256(self.schema.to_json().encode()).hexdigest()


@dataclass
class CounterfactualSet:
    query: Query
    rows: pd.DataFrame
    encoded: np.ndarray
    valid: np.ndarray
    distances: np.ndarray

    @property
    def validity_rate(self) -> float:
        return float(self.valid.mean())


def _build_generator_graph(gen, schema: DataSchema, config: TrainConfig,
                           store: ParamStore, f_grad: Classifier | None):
    """The generator-side training graph: adversarial term + counterfactual
    term, all weighted. Returns (graph, node names dict)."""
    g = Graph(store)
    q = g.placeholder("q")
    x_fake = gen.build(g, q)
    g.mark_output("x_fake", x_fake)
    s_fake = _attach_discriminator(g, x_fake, q)
    wcol = g.placeholder("wcol")
    adv = g.sum(g.mul(wcol, _log_one_minus_sigmoid(g, s_fake)))

    terms = [adv]
    w = g.placeholder("w")
    if config.lambda_ce != 0.0:
        if f_grad is None:
            raise SynthesizerError("lambda_ce > 0 requires a differentiable model")
        f_logits = f_grad.attach_logits(g, x_fake, "f/")
        ce = g.cross_entropy(f_logits, g.placeholder("y_target"))
        terms.append(g.scale(g.sum(g.mul(w, ce)), config.lambda_ce))
    if config.lambda_dist != 0.0:
        mask = g.placeholder("dim_mask")
        dist = g.squared_distance(g.mul(x_fake, mask), g.mul(q, mask))
        terms.append(g.scale(g.sum(g.mul(w, dist)), config.lambda_dist))
    cf = None
    if len(terms) > 1:
        cf = terms[1]
        for t in terms[2:]:
            cf = g.add(cf, t)
        g.mark_output("cf_loss", cf)
        g.mark_output("g_loss", g.add(adv, cf))
    else:
        g.mark_output("g_loss", adv)
    g.mark_output("adv", adv)
    return g


def _build_discriminator_graph(schema: DataSchema, store: ParamStore) -> Graph:
    g = Graph(store)
    x_real = g.placeholder("x_real")
    x_fake = g.placeholder("x_fake")
    q = g.placeholder("q")
    wcol = g.placeholder("wcol")
    s_real = _attach_discriminator(g, x_real, q)
    s_fake = _attach_discriminator(g, x_fake, q)
    value = g.add(g.sum(g.mul(wcol, _log_sigmoid(g, s_real))),
                  g.sum(g.mul(wcol, _log_one_minus_sigmoid(g, s_fake))))
    g.mark_output("d_loss", g.scale(value, -1.0))  # maximize value
    g.mark_output("score_real", g.sigmoid(s_real))
    return g


def train(encoded: np.ndarray, schema: DataSchema, f: Classifier | None,
          query_source, config: TrainConfig, seed: int = 0,
          generator=None, f_grad: Classifier | None = None,
          log_hook=None) -> TrainedSynthesizer:
    """Alternating min-max training over umbrella-weighted query batches.

    ``f`` is the deployed model; when it is not differentiable and no
    ``f_grad`` is supplied, a surrogate is distilled from it on the
    training data. One discriminator step per generator step.
    """
    encoded = np.asarray(encoded, dtype=np.float64)
    store = ParamStore()
    gen = generator if generator is not None else MonolithicGenerator(schema, config)
    gen.init_params(store, seed)
    init_discriminator(store, schema, config, seed)

    if config.lambda_ce != 0.0:
        if f is None and f_grad is None:
            raise SynthesizerError(
                "lambda_ce > 0 requires a deployed model (or set lambda_ce=0)")
        if f_grad is None:
            f_grad = f if f.kind in ("mlp", "surrogate") \
                else distill_surrogate(f, encoded, seed=seed)
    else:
        f_grad = None

    g_graph = _build_generator_graph(gen, schema, config, store, f_grad)
    d_graph = _build_discriminator_graph(schema, store)
    g_names = gen.param_names(store)
    d_names = [n for n in store.values if n.startswith("d/")]
    opt_g = OptimizerState(store, g_names, lr=config.learning_rate)
    opt_d = OptimizerState(store, d_names, lr=config.learning_rate)

    pairer = RealPairer(encoded, config.pairing_pool, seed)
    y_target = None
    if f_grad is not None:
        y_target = np.zeros(2)
        y_target[1 if config.desired_label == 1 else 0] = 1.0

    steps_per_epoch = max(1, int(np.ceil(len(encoded) / config.batch_size)))
    log: list[dict] = []
    synth = TrainedSynthesizer(schema=schema, config=config,
                               arch=gen.describe(), params=store,
                               training_log=log)
    counter = 0
    for epoch in range(config.epochs):
        d_losses, g_losses, cf_losses = [], [], []
        for _ in range(steps_per_epoch):
            rng = spawn_rng(seed, "train-step", counter)
            batch = query_source.draw(config.batch_size, counter)
            counter += 1
            n = len(batch.encoded)
            feeds = gen.sample_noise(rng, n)
            feeds["q"] = batch.encoded
            feeds["w"] = batch.weights
            feeds["wcol"] = batch.weights[:, None]
            if f_grad is not None:
                feeds["y_target"] = np.tile(y_target, (n, 1))
            if config.lambda_dist != 0.0:
                feeds["dim_mask"] = batch.dim_mask

            out = forward(g_graph, feeds)
            x_fake = out["x_fake"]
            x_real = pairer.pair(batch, rng)

            store.zero_grad()  # the G step also deposits grads on D params
            d_out = forward(d_graph, {"x_real": x_real, "x_fake": x_fake,
                                      "q": batch.encoded,
                                      "wcol": batch.weights[:, None]})
            d_loss = float(d_out["d_loss"])
            if not np.isfinite(d_loss):
                raise SynthesizerError(
                    f"discriminator loss became non-finite at epoch {epoch}")
            backward(d_graph, "d_loss")
            optimizer_step(opt_d, d_graph)

            store.zero_grad()
            out = forward(g_graph, feeds)
            backward(g_graph, "g_loss")
            optimizer_step(opt_g, g_graph)

            d_losses.append(d_loss)
            g_losses.append(float(out["g_loss"]))
            cf_losses.append(float(out.get("cf_loss", 0.0)))
        entry = {"epoch": epoch, "d_loss": float(np.mean(d_losses)),
                 "g_loss": float(np.mean(g_losses)),
                 "cf_loss": float(np.mean(cf_losses))}
        log.append(entry)
        if log_hook is not None:
            log_hook(entry)
    return synth


# ---------------------------------------------------------------- generate


def generate(synth: TrainedSynthesizer, query: Query, n: int = 20,
             seed: int = 0, f: Classifier | None = None) -> CounterfactualSet:
    """Sample n counterfactuals for a query. Discrete blocks are hardened
    to exact one-hots; validity flags come from the true deployed model."""
    if n < 1:
        raise SynthesizerError("n must be >= 1")
    q_vec = query.encode(synth.schema)
    raw = synth.raw_samples(q_vec, n, seed)
    hard = harden_unit_blocks(raw, synth.schema)
    rows = decode_matrix(hard, synth.schema)
    mask = query.dim_mask(synth.schema)
    diff = (hard - q_vec[None, :]) * mask[None, :]
    distances = np.sqrt((diff * diff).sum(axis=1))
    if f is not None:
        valid = predict(f, hard) == synth.config.desired_label
    else:
        valid = np.zeros(n, dtype=bool)
    return CounterfactualSet(query=query, rows=rows, encoded=hard,
                             valid=valid, distances=distances)


def generate_unconditional(synth: TrainedSynthesizer, n: int,
                           seed: int = 0) -> pd.DataFrame:
    """Unconstrained synthesis: the all-masked (zero) query."""
    out = generate(synth, Query(values={}), n=n, seed=seed, f=None)
    return out.rows


# -------------------------------------------------------------- persistence


def save(synth: TrainedSynthesizer, path) -> None:
    entries: dict = {
        "format": "synthesizer",
        "config": json.dumps(asdict(synth.config), sort_keys=True),
        "schema": synth.schema.to_json(),
        "schema_hash": synth.schema_hash(),
        "arch": json.dumps(synth.arch, sort_keys=True),
        "training_log": json.dumps(synth.training_log),
    }
    for name in sorted(synth.params.values):
        entries[f"param/{name}"] = synth.params.values[name]
    write_container(path, entries)


def load(path) -> TrainedSynthesizer:
    entries = read_container(path)
    if entries.get("format") != "synthesizer":
        raise SynthesizerError(f"{path}: not a synthesizer container")
    schema = DataSchema.from_json(entries["schema"])
    digest = hashlib.sha256(entries["schema"].encode()).hexdigest()
    if digest != entries["schema_hash"]:
        raise SynthesizerError(f"{path}: schema hash mismatch")
    config = TrainConfig(**json.loads(entries["config"]))
    store = ParamStore()
    values = {name[len("param/"):]: arr for name, arr in entries.items()
              if name.startswith("param/")}
    load_snapshot(store, values)
    return TrainedSynthesizer(schema=schema, config=config,
                              arch=json.loads(entries["arch"]), params=store,
                              training_log=json.loads(entries["training_log"]))
