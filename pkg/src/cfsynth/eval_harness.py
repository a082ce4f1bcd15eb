"""Evaluation protocols for the synthesizer.

Distance and validity of counterfactual sets; model compatibility (train a
classifier on original vs synthesized data, test both on one held-out
original split); conditional histograms; the log-frequency training-query
baseline; latency profiling.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .classifiers import (
    Classifier,
    f_score,
    predict,
    train_mlp,
    train_random_forest,
    train_test_split,
)
from .encoding import DataSchema, encode_frame
from .seeding import spawn_rng
from .umbrella import MaskPolicy, QueryBatch, apply_mask


class EvalError(Exception):
    pass


# -------------------------------------------------------- set-level metrics


def avg_euclid_distance(query_vec: np.ndarray, encoded_set: np.ndarray,
                        dim_mask: np.ndarray | None = None) -> float:
    """Mean Euclidean distance between a query and a counterfactual set,
    over the encoded dims of unmasked attributes."""
    encoded_set = np.atleast_2d(np.asarray(encoded_set, dtype=np.float64))
    if len(encoded_set) == 0:
        raise EvalError("counterfactual set is empty")
    diff = encoded_set - np.asarray(query_vec)[None, :]
    if dim_mask is not None:
        diff = diff * np.asarray(dim_mask)[None, :]
    return float(np.sqrt((diff**2).sum(axis=1)).mean())


def validity_rate(cf_set, f: Classifier, desired_label: int) -> float:
    """Fraction of the set the deployed model maps to the preferred label."""
    encoded = cf_set.encoded if hasattr(cf_set, "encoded") else np.asarray(cf_set)
    if len(encoded) == 0:
        raise EvalError("counterfactual set is empty")
    return float(np.mean(predict(f, encoded) == desired_label))


# ------------------------------------------------------ model compatibility


_TRAINERS = {"forest": train_random_forest, "mlp": train_mlp}


@dataclass
class CompatibilityReport:
    """Mean F-score per (classifier kind, training source) over rounds."""

    rounds: int
    scores: dict = field(default_factory=dict)  # (kind, source) -> list

    def mean(self, kind: str, source: str) -> float:
        return float(np.mean(self.scores[(kind, source)]))

    def as_rows(self) -> list[dict]:
        rows = []
        for (kind, source), vals in sorted(self.scores.items()):
            rows.append({"classifier": kind, "source": source,
                         "mean_f": float(np.mean(vals)),
                         **{f"round{i}": v for i, v in enumerate(vals)}})
        return rows

    def table_text(self) -> str:
        kinds = sorted({k for k, _ in self.scores})
        lines = ["source      " + "  ".join(f"{k:>8}" for k in kinds)]
        for source in ("original", "synthesized"):
            cells = "  ".join(f"{self.mean(k, source):8.3f}" for k in kinds)
            lines.append(f"{source:<12}{cells}")
        return "\n".join(lines) + "\n"


def model_compatibility(original: pd.DataFrame, synthesized: pd.DataFrame,
                        label: str, desired_value: str, schema: DataSchema,
                        kinds: tuple[str, ...] = ("forest",), rounds: int = 5,
                        seed: int = 0) -> CompatibilityReport:
    """Classifiers trained on the original train split vs on synthesized
    data, both tested on the same held-out original split, over ``rounds``
    seeded repetitions. The schema must cover the feature columns; the
    label column is carried by both frames."""
    for frame, name in ((original, "original"), (synthesized, "synthesized")):
        if label not in frame.columns:
            raise EvalError(f"{name} data lacks the label column {label!r}")
    feats = [c for c in original.columns if c != label]
    x_org = encode_frame(original[feats], schema)
    y_org = np.where(original[label].astype(str) == desired_value, 1, -1)
    x_syn = encode_frame(synthesized[feats], schema)
    y_syn = np.where(synthesized[label].astype(str) == desired_value, 1, -1)

    tr, te = train_test_split(len(original), seed=seed)
    report = CompatibilityReport(rounds=rounds)
    for kind in kinds:
        trainer = _TRAINERS[kind]
        # per-round seeds are shared across sources: identical training data
        # must give identical scores
        round_seeds = [int(spawn_rng(seed, "compat-round", kind, r).integers(0, 2**31))
                       for r in range(rounds)]
        for source, (x, y) in (("original", (x_org[tr], y_org[tr])),
                               ("synthesized", (x_syn, y_syn))):
            vals = []
            for r in range(rounds):
                clf = trainer(x, y, seed=round_seeds[r])
                vals.append(f_score(clf, x_org[te], y_org[te]))
            report.scores[(kind, source)] = vals
    return report


# -------------------------------------------------------------- histograms


def conditional_histogram(samples: pd.DataFrame, attribute: str,
                          schema: DataSchema, bins: int = 20) -> dict:
    """Normalized frequencies of one attribute over a sample set.
    Categorical: per category in schema order. Continuous: fixed bin edges
    derived from the schema's mixture span, so histograms are comparable
    across sample sets."""
    spec = schema.attribute(attribute)
    if attribute not in samples.columns:
        raise EvalError(f"samples lack attribute {attribute!r}")
    if len(samples) == 0:
        raise EvalError("no samples")
    if spec.kind == "categorical":
        counts = samples[attribute].astype(str).value_counts()
        freq = np.array([counts.get(c, 0) for c in spec.categories], float)
        return {"labels": list(spec.categories),
                "frequencies": (freq / freq.sum()).tolist()}
    lo = float(np.min(spec.gmm.means - 4.0 * spec.gmm.stds))
    hi = float(np.max(spec.gmm.means + 4.0 * spec.gmm.stds))
    edges = np.linspace(lo, hi, bins + 1)
    h, _ = np.histogram(np.clip(samples[attribute].to_numpy(), lo, hi), bins=edges)
    return {"edges": edges.tolist(), "frequencies": (h / h.sum()).tolist()}


# ------------------------------------------------- log-frequency baseline


def log_frequency_masses(counts: np.ndarray) -> np.ndarray:
    """Category masses proportional to ln(1 + count); zero-count
    categories are skipped (mass 0)."""
    masses = np.log1p(np.asarray(counts, dtype=np.float64))
    total = masses.sum()
    if total <= 0:
        raise EvalError("no nonempty categories")
    return masses / total


def log_frequency_queries(encoded: np.ndarray, df: pd.DataFrame,
                          schema: DataSchema, focus: str, batch_size: int,
                          policy: MaskPolicy | None, seed: int,
                          counter: int = 0) -> QueryBatch:
    """Training-query baseline: sample the focus category with probability
    proportional to ln(1 + count), then a random data row carrying that
    category; uniform weights."""
    spec = schema.attribute(focus)
    if spec.kind != "categorical":
        raise EvalError("log-frequency sampling needs a categorical focus")
    values = df[focus].astype(str).to_numpy()
    counts = np.array([(values == c).sum() for c in spec.categories])
    masses = log_frequency_masses(counts)
    rng = spawn_rng(seed, "lf-queries", counter)
    cat_idx = rng.choice(len(masses), size=batch_size, p=masses)
    row_idx = np.empty(batch_size, dtype=int)
    for j, c in enumerate(spec.categories):
        members = np.nonzero(values == c)[0]
        sel = cat_idx == j
        if sel.any():
            row_idx[sel] = members[rng.integers(0, len(members), size=int(sel.sum()))]
    rows = encoded[row_idx]
    if policy is None:
        policy = MaskPolicy(always_keep=(focus,))
    masked, attr_mask, dim_mask = apply_mask(rows, schema, policy, rng)
    return QueryBatch(encoded=masked, attr_mask=attr_mask, dim_mask=dim_mask,
                      weights=np.full(batch_size, 1.0 / batch_size))


# ----------------------------------------------------------------- latency


def latency_profile(synth, query_counts=(10, 20, 30), repeats: int = 5,
                    n_per_query: int = 20, seed: int = 0) -> dict:
    """Mean and deviation of per-query generation wall time per batch size."""
    from .encoding import Query
    from .synthesizer import generate

    out = {}
    for count in query_counts:
        times = []
        for rep in range(repeats):
            start = time.perf_counter()
            for qi in range(count):
                generate(synth, Query(values={}), n=n_per_query,
                         seed=seed + 1000 * rep + qi)
            times.append((time.perf_counter() - start) / count)
        out[count] = {"mean": float(np.mean(times)), "std": float(np.std(times))}
    return out
