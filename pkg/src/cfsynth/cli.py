"""Command-line pipeline: setup -> train -> generate, plus evaluation
reports and the HTTP service.

One global seed in the run config fans out deterministically to every
stochastic component, so rerunning any phase with the same inputs
reproduces its artifacts byte for byte.

Exit codes: 0 ok, 2 user error (files, config, queries), 3 numerical
failure (umbrella non-convergence, training divergence).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import causal_eval, eval_harness, synthesizer
from .causal_generator import CausalGraph, ModularGenerator, parse_edge_list
from .classifiers import (
    load_classifier,
    predict,
    save_classifier,
    train_mlp,
    train_random_forest,
    train_test_split,
)
from .container import ContainerError, read_container, write_container
from .encoding import (
    DataSchema,
    EncodingError,
    encode_frame,
    fit_schema,
    make_query,
    parse_schema_config,
    preprocess,
)
from .synthesizer import (
    PlainQuerySource,
    SynthesizerError,
    TrainConfig,
    UmbrellaQuerySource,
    ZeroQuerySource,
    generate,
    generate_unconditional,
)
from .umbrella import MaskPolicy, UmbrellaError, build_plan

EXIT_OK = 0
EXIT_USER = 2
EXIT_NUMERIC = 3


class CliError(Exception):
    pass


@dataclass
class RunConfig:
    dataset: Path
    schema: Path
    outdir: Path
    graph: Path | None = None
    classifier: str = "mlp"
    seed: int = 0
    sampler: str = "us"
    windows: int | None = None
    walkers: int = 8
    steps: int = 1000
    zeta: float = 0.01
    keep_probability: float = 0.5
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=300))
    eval_epochs: int = 100
    causal_samples: int = 2000

    @staticmethod
    def load(path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise CliError(f"config file not found: {path}")
        cp = configparser.ConfigParser()
        cp.read(path)
        if "paths" not in cp:
            raise CliError(f"{path}: missing [paths] section")
        paths = cp["paths"]
        for key in ("dataset", "schema", "outdir"):
            if key not in paths:
                raise CliError(f"{path}: [paths] needs {key}")
        base = path.parent

        def respath(value: str) -> Path:
            p = Path(value)
            return p if p.is_absolute() else base / p

        run = cp["run"] if "run" in cp else {}
        umb = cp["umbrella"] if "umbrella" in cp else {}
        trn = cp["train"] if "train" in cp else {}
        tcfg = TrainConfig(
            epochs=int(trn.get("epochs", 300)),
            batch_size=int(trn.get("batch", 500)),
            latent_dim=int(trn.get("latent", 128)),
            hidden_dim=int(trn.get("hidden", 256)),
            learning_rate=float(trn.get("lr", 2e-4)),
            lambda_ce=float(trn.get("lambda_ce", 1.0)),
            lambda_dist=float(trn.get("lambda_dist", 1.0)),
            desired_label=1,
            tau=float(trn.get("tau", 0.5)),
        )
        return RunConfig(
            dataset=respath(paths["dataset"]),
            schema=respath(paths["schema"]),
            outdir=respath(paths["outdir"]),
            graph=respath(paths["graph"]) if "graph" in paths else None,
            classifier=str(run.get("classifier", "mlp")),
            seed=int(run.get("seed", 0)),
            sampler=str(trn.get("sampler", "us")),
            windows=int(umb["windows"]) if "windows" in umb else None,
            walkers=int(umb.get("walkers", 8)),
            steps=int(umb.get("steps", 1000)),
            zeta=float(umb.get("zeta", 0.01)),
            keep_probability=float(trn.get("keep_prob", 0.5)),
            eval_epochs=int(trn.get("eval_epochs", 100)),
            causal_samples=int(run.get("causal_samples", 2000)),
        )


# ------------------------------------------------------------------ phases


def _load_setup(cfg: RunConfig):
    path = cfg.outdir / "setup.mcs1"
    if not path.exists():
        raise CliError(f"setup artifact missing: {path} (run `cfsynth setup`)")
    entries = read_container(path)
    schema = DataSchema.from_json(entries["schema"])
    meta = json.loads(entries["meta"])
    frame = pd.read_json(io.StringIO(entries["data"]), orient="split")
    return schema, meta, frame, entries


def _encoded_split(cfg: RunConfig):
    schema, meta, frame, entries = _load_setup(cfg)
    enc = encode_frame(frame[meta["features"]], schema)
    labels = np.asarray(json.loads(entries["labels"]), dtype=int)
    tr = np.asarray(json.loads(entries["train_idx"]), dtype=int)
    te = np.asarray(json.loads(entries["test_idx"]), dtype=int)
    return schema, meta, frame, enc, labels, tr, te


def cmd_setup(cfg: RunConfig) -> int:
    """Preprocess, fit the encoder, split 80/20, train the deployed
    classifier, persist everything."""
    if not cfg.dataset.exists():
        raise CliError(f"dataset not found: {cfg.dataset}")
    if not cfg.schema.exists():
        raise CliError(f"schema config not found: {cfg.schema}")
    sc = parse_schema_config(cfg.schema.read_text())
    if sc.label is None or sc.desired_value is None:
        raise CliError("schema config must set label and desired under [dataset]")
    df = pd.read_csv(cfg.dataset)
    df = preprocess(df, sc.rules)
    if sc.label not in df.columns:
        raise CliError(f"label column {sc.label!r} not in dataset")
    features = [c for c in df.columns if c != sc.label]
    schema = fit_schema(df[features], kinds=sc.kinds,
                        n_modes={**{f: 5 for f in features}, **sc.n_modes},
                        category_order=sc.category_order)
    enc = encode_frame(df[features], schema)
    labels = np.where(df[sc.label].astype(str) == sc.desired_value, 1, -1)
    tr, te = train_test_split(len(df), seed=cfg.seed)
    if cfg.classifier == "mlp":
        clf = train_mlp(enc[tr], labels[tr], seed=cfg.seed)
    elif cfg.classifier == "forest":
        clf = train_random_forest(enc[tr], labels[tr], seed=cfg.seed)
    else:
        raise CliError(f"unknown classifier kind {cfg.classifier!r}")
    accuracy = float(np.mean(predict(clf, enc[te]) == labels[te]))

    cfg.outdir.mkdir(parents=True, exist_ok=True)
    meta = {"features": features, "label": sc.label,
            "desired_value": sc.desired_value, "focus": list(sc.focus),
            "classifier": cfg.classifier, "seed": cfg.seed,
            "holdout_accuracy": accuracy}
    write_container(cfg.outdir / "setup.mcs1", {
        "format": "setup",
        "schema": schema.to_json(),
        "meta": json.dumps(meta, sort_keys=True),
        "labels": json.dumps([int(v) for v in labels]),
        "train_idx": json.dumps([int(i) for i in tr]),
        "test_idx": json.dumps([int(i) for i in te]),
        "data": df.to_json(orient="split", index=False, double_precision=15),
    })
    save_classifier(clf, cfg.outdir / "classifier.mcs1")
    print(f"setup: {len(df)} rows, {len(features)} attributes, "
          f"classifier={cfg.classifier}, holdout accuracy {accuracy:.3f}")
    return EXIT_OK


def _make_query_source(cfg: RunConfig, schema, meta, enc, frame):
    focus = meta["focus"]
    policy = MaskPolicy(keep_probability=cfg.keep_probability,
                        always_keep=tuple(focus))
    if cfg.sampler == "plain":
        return PlainQuerySource(enc, schema, policy, seed=cfg.seed), None
    if cfg.sampler == "zero":
        return ZeroQuerySource(schema), None
    if cfg.sampler == "lf":
        if not focus:
            raise CliError("lf sampler needs focus attributes in the schema config")

        class LfSource:
            def draw(self, batch_size, counter):
                return eval_harness.log_frequency_queries(
                    enc, frame, schema, focus[0], batch_size, policy,
                    seed=cfg.seed, counter=counter)

        return LfSource(), None
    if cfg.sampler == "us":
        if not focus:
            raise CliError("us sampler needs focus attributes in the schema config")
        plan = build_plan(enc, schema, focus=focus, n_windows=cfg.windows,
                          walkers=cfg.walkers, steps=cfg.steps, zeta=cfg.zeta,
                          seed=cfg.seed)
        return UmbrellaQuerySource(plan, schema, policy, seed=cfg.seed), plan
    raise CliError(f"unknown sampler {cfg.sampler!r} (use us|lf|plain|zero)")


def cmd_train(cfg: RunConfig) -> int:
    """Build the query source (umbrella plan when sampler=us), train the
    synthesizer, persist model + plan."""
    schema, meta, frame, enc, labels, tr, te = _encoded_split(cfg)
    clf = load_classifier(cfg.outdir / "classifier.mcs1")
    source, plan = _make_query_source(cfg, schema, meta, enc[tr], frame.iloc[tr])

    generator = None
    arch_note = "monolithic"
    if cfg.graph is not None:
        if not cfg.graph.exists():
            raise CliError(f"graph file not found: {cfg.graph}")
        edges = parse_edge_list(cfg.graph.read_text())
        graph = CausalGraph.from_edges(schema.names, edges)
        generator = ModularGenerator(schema, cfg.train, graph)
        arch_note = f"modular({len(edges)} edges)"

    synth = synthesizer.train(enc[tr], schema, clf, source, cfg.train,
                              seed=cfg.seed, generator=generator)
    synthesizer.save(synth, cfg.outdir / "model.mcs1")
    if plan is not None:
        (cfg.outdir / "plan.txt").write_text(plan.to_text())
        print("umbrella weights: "
              + " ".join(f"{w:.4f}" for w in plan.weights))
    with open(cfg.outdir / "training_log.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "d_loss", "g_loss",
                                                "cf_loss"])
        writer.writeheader()
        writer.writerows(synth.training_log)
    last = synth.training_log[-1]
    print(f"train: sampler={cfg.sampler} arch={arch_note} "
          f"epochs={cfg.train.epochs} final d_loss {last['d_loss']:.4f} "
          f"g_loss {last['g_loss']:.4f} cf_loss {last['cf_loss']:.4f}")
    return EXIT_OK


def parse_query_spec(spec: str | None, schema: DataSchema):
    """'attr=value,attr=value' -> Query; empty or 'none' -> all masked."""
    if not spec or spec.strip().lower() == "none":
        return make_query({}, schema)
    values = {}
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise CliError(f"bad query fragment {part!r} (expected attr=value)")
        name, raw = (s.strip() for s in part.split("=", 1))
        attr = schema.attribute(name)
        values[name] = float(raw) if attr.kind == "continuous" else raw
    return make_query(values, schema)


def cmd_generate(cfg: RunConfig, query_spec: str | None, n: int,
                 seed: int | None, out: str | None) -> int:
    schema, meta, frame, entries = _load_setup(cfg)
    clf = load_classifier(cfg.outdir / "classifier.mcs1")
    synth = synthesizer.load(cfg.outdir / "model.mcs1")
    query = parse_query_spec(query_spec, schema)
    cf = generate(synth, query, n=n, seed=cfg.seed if seed is None else seed,
                  f=clf)
    frame_out = cf.rows.copy()
    frame_out["valid"] = cf.valid.astype(int)
    frame_out["distance"] = cf.distances
    text = frame_out.to_csv(index=False)
    if out:
        Path(out).write_text(text)
        print(f"wrote {len(frame_out)} counterfactuals to {out} "
              f"(validity {cf.valid.mean():.2f}, "
              f"avg distance {cf.distances.mean():.4f})")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig) -> int:
    """Model-compatibility report (observational synthesis, label treated
    as an attribute) plus validity/distance summary of the trained model
    over held-out queries."""
    schema, meta, frame, enc, labels, tr, te = _encoded_split(cfg)
    clf = load_classifier(cfg.outdir / "classifier.mcs1")
    cfg.outdir.mkdir(parents=True, exist_ok=True)

    # observational synthesizer over features + label
    full_schema = fit_schema(
        frame, kinds={meta["label"]: "categorical"},
        n_modes=5)
    full_enc = encode_frame(frame, full_schema)
    ocfg = TrainConfig(epochs=cfg.eval_epochs, latent_dim=cfg.train.latent_dim,
                       hidden_dim=cfg.train.hidden_dim,
                       batch_size=cfg.train.batch_size,
                       learning_rate=cfg.train.learning_rate,
                       lambda_ce=0.0, lambda_dist=0.0)
    osynth = synthesizer.train(full_enc[tr], full_schema, None,
                               ZeroQuerySource(full_schema), ocfg,
                               seed=cfg.seed)
    synthesized = generate_unconditional(osynth, n=len(tr), seed=cfg.seed)
    report = eval_harness.model_compatibility(
        frame, synthesized, label=meta["label"],
        desired_value=meta["desired_value"], schema=schema,
        kinds=("forest", "mlp"), rounds=5, seed=cfg.seed)
    with open(cfg.outdir / "compatibility.csv", "w", newline="") as fh:
        rows = report.as_rows()
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    (cfg.outdir / "compatibility.txt").write_text(report.table_text())
    print(report.table_text())

    # counterfactual quality of the trained model on held-out queries
    model_path = cfg.outdir / "model.mcs1"
    if model_path.exists():
        synth = synthesizer.load(model_path)
        negatives = te[predict(clf, enc[te]) == -1][:50]
        rates, dists = [], []
        for i in negatives:
            q = make_query(dict(frame.iloc[int(i)][meta["features"]]), schema)
            cf = generate(synth, q, n=20, seed=cfg.seed + int(i), f=clf)
            rates.append(cf.valid.mean())
            dists.append(cf.distances.mean())
        summary = {"queries": len(negatives),
                   "validity_rate": float(np.mean(rates)),
                   "avg_distance": float(np.mean(dists))}
        (cfg.outdir / "counterfactual_quality.json").write_text(
            json.dumps(summary, sort_keys=True))
        print(f"validity {summary['validity_rate']:.3f} over "
              f"{summary['queries']} held-out negative queries, "
              f"avg distance {summary['avg_distance']:.4f}")
    return EXIT_OK


def cmd_causal(cfg: RunConfig) -> int:
    """ANM and CDS causation scores for the configured cause-effect pairs,
    on original vs synthesized samples."""
    schema, meta, frame, enc, labels, tr, te = _encoded_split(cfg)
    if cfg.graph is None or not cfg.graph.exists():
        raise CliError("causal evaluation needs a graph file in [paths]")
    edges = parse_edge_list(cfg.graph.read_text())
    synth = synthesizer.load(cfg.outdir / "model.mcs1")
    n = min(cfg.causal_samples, len(tr))
    synthesized = generate_unconditional(synth, n=n, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    sub = np.sort(rng.choice(tr, size=n, replace=False))

    rows = []
    for cause, effect in edges:
        for source, data in (("original", frame.iloc[sub]),
                             ("synthesized", synthesized)):
            a = causal_eval.to_numeric(data[cause], schema.attribute(cause))
            b = causal_eval.to_numeric(data[effect], schema.attribute(effect))
            for method in ("ANM", "CDS"):
                score = causal_eval.causation_score(
                    a, b, method, names=(cause, effect), seed=cfg.seed)
                rows.append({"source": source, **score.as_row()})
    with open(cfg.outdir / "causation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    for row in rows:
        print(f"{row['source']:<12} {row['pair']:<24} {row['method']:<4} "
              f"tau_c {row['tau_c']:+8.2f}  {row['verdict']}")
    return EXIT_OK


def cmd_serve(cfg: RunConfig, port: int) -> int:
    from .service import run_service

    schema, meta, frame, entries = _load_setup(cfg)
    clf = load_classifier(cfg.outdir / "classifier.mcs1")
    synth = synthesizer.load(cfg.outdir / "model.mcs1")
    edges = []
    if cfg.graph is not None and cfg.graph.exists():
        edges = parse_edge_list(cfg.graph.read_text())
    run_service(synth, clf, meta, edges, port=port)
    return EXIT_OK


# -------------------------------------------------------------------- main


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="cfsynth",
        description="model-based counterfactual synthesizer pipeline")
    parser.add_argument("--config", required=True, help="run config (ini)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("setup")
    p_train = sub.add_parser("train")
    p_train.add_argument("--sampler", choices=["us", "lf", "plain", "zero"])
    p_gen = sub.add_parser("generate")
    p_gen.add_argument("--query", default=None,
                       help="attr=value,... (omit for unconditional)")
    p_gen.add_argument("--n", type=int, default=20)
    p_gen.add_argument("--seed", type=int, default=None)
    p_gen.add_argument("--out", default=None)
    sub.add_parser("evaluate")
    sub.add_parser("causal")
    p_serve = sub.add_parser("serve")
    p_serve.add_argument("--port", type=int, default=8765)

    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
        if args.command == "setup":
            return cmd_setup(cfg)
        if args.command == "train":
            if args.sampler:
                cfg.sampler = args.sampler
            return cmd_train(cfg)
        if args.command == "generate":
            return cmd_generate(cfg, args.query, args.n, args.seed, args.out)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "causal":
            return cmd_causal(cfg)
        if args.command == "serve":
            return cmd_serve(cfg, args.port)
        raise CliError(f"unknown command {args.command!r}")
    except (UmbrellaError, SynthesizerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CliError, EncodingError, ContainerError, OSError, ValueError,
            KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER


if __name__ == "__main__":
    sys.exit(main())
