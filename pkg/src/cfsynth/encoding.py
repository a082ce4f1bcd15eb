"""Tabular schema and instance encoding.

Continuous attributes are encoded mode-specifically: a Gaussian mixture is
fitted per attribute, a value is assigned to its most probable mode, and
the block becomes (mode one-hot of length K, normalized scalar). Categorical
attributes become plain one-hots. A query is a partially specified instance:
unmasked attributes encode as usual, masked attribute blocks are all zero.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

SCALAR_SPAN = 4.0  # scalar = (x - mu) / (SCALAR_SPAN * sigma), clipped to [-1, 1]
STD_FLOOR = 1e-4


class EncodingError(Exception):
    pass


# --------------------------------------------------------------------- GMM


@dataclass(frozen=True)
class GmmModel:
    """A one-dimensional Gaussian mixture with floored stds."""

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    @property
    def n_modes(self) -> int:
        return len(self.weights)

    def log_responsibilities(self, x: np.ndarray) -> np.ndarray:
        """Unnormalized log p(k, x); shape (n, K)."""
        x = np.asarray(x, dtype=np.float64)[:, None]
        return (
            np.log(self.weights[None, :])
            - 0.5 * ((x - self.means[None, :]) / self.stds[None, :]) ** 2
            - np.log(self.stds[None, :])
        )

    def assign_modes(self, x: np.ndarray) -> np.ndarray:
        """Most probable mode per value (argmax posterior, deterministic)."""
        return np.argmax(self.log_responsibilities(np.asarray(x)), axis=1)


def fit_gmm(values, n_modes: int, *, tol: float = 1e-6, max_iter: int = 200) -> GmmModel:
    """Fit by EM until the total log-likelihood moves less than ``tol``.

    Initialization is deterministic (quantile means), so identical data
    always yields an identical model. The log-likelihood is asserted
    non-decreasing every iteration.
    """
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise EncodingError("fit_gmm: empty input")
    if n_modes < 1:
        raise EncodingError(f"fit_gmm: n_modes must be >= 1, got {n_modes}")
    if x.size < n_modes:
        raise EncodingError(f"fit_gmm: {x.size} values for {n_modes} modes")
    if not np.all(np.isfinite(x)):
        raise EncodingError("fit_gmm: non-finite values")

    k = n_modes
    means = np.quantile(x, (np.arange(k) + 0.5) / k)
    stds = np.full(k, max(float(x.std()), STD_FLOOR))
    weights = np.full(k, 1.0 / k)

    prev_ll = -np.inf
    for _ in range(max_iter):
        logr = (
            np.log(weights[None, :])
            - 0.5 * ((x[:, None] - means[None, :]) / stds[None, :]) ** 2
            - np.log(stds[None, :])
            - 0.5 * np.log(2 * np.pi)
        )
        m = logr.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(logr - m).sum(axis=1))
        ll = float(lse.sum())
        assert ll >= prev_ll - 1e-7 * max(1.0, abs(prev_ll)), "EM log-likelihood decreased"
        resp = np.exp(logr - lse[:, None])

        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-12)
        weights = nk / nk.sum()
        means = (resp * x[:, None]).sum(axis=0) / nk
        var = (resp * (x[:, None] - means[None, :]) ** 2).sum(axis=0) / nk
        stds = np.maximum(np.sqrt(var), STD_FLOOR)

        if abs(ll - prev_ll) < tol:
            break
        prev_ll = ll
    return GmmModel(weights=weights, means=means, stds=stds)


# ------------------------------------------------------------------ schema


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    kind: str  # "continuous" | "categorical"
    categories: tuple[str, ...] | None = None
    frequencies: tuple[float, ...] | None = None  # empirical category shares
    gmm: GmmModel | None = None

    def __post_init__(self):
        if self.kind not in ("continuous", "categorical"):
            raise EncodingError(f"{self.name}: unknown kind {self.kind!r}")
        if self.kind == "categorical":
            if not self.categories or len(self.categories) < 2:
                raise EncodingError(f"{self.name}: categorical needs >= 2 categories")
        elif self.gmm is None:
            raise EncodingError(f"{self.name}: continuous attribute without a mixture")

    @property
    def width(self) -> int:
        if self.kind == "categorical":
            return len(self.categories)
        return self.gmm.n_modes + 1


@dataclass(frozen=True)
class DataSchema:
    attributes: tuple[AttributeSpec, ...]
    _index: dict = field(repr=False, default_factory=dict)

    def __post_init__(self):
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise EncodingError("duplicate attribute names")
        offset = 0
        for a in self.attributes:
            self._index[a.name] = (a, slice(offset, offset + a.width))
            offset += a.width
        object.__setattr__(self, "_width", offset)

    @property
    def width(self) -> int:
        return self._width

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    def attribute(self, name: str) -> AttributeSpec:
        try:
            return self._index[name][0]
        except KeyError:
            raise EncodingError(f"unknown attribute {name!r}") from None

    def block(self, name: str) -> slice:
        self.attribute(name)
        return self._index[name][1]

    def onehot_columns(self) -> np.ndarray:
        """Boolean mask over encoded dims covering every one-hot block
        (categorical blocks and continuous mode blocks)."""
        mask = np.zeros(self.width, dtype=bool)
        for a in self.attributes:
            blk = self.block(a.name)
            if a.kind == "categorical":
                mask[blk] = True
            else:
                mask[blk.start : blk.stop - 1] = True
        return mask

    def to_json(self) -> str:
        def spec_dict(a: AttributeSpec) -> dict:
            d: dict = {"name": a.name, "kind": a.kind}
            if a.kind == "categorical":
                d["categories"] = list(a.categories)
                d["frequencies"] = list(a.frequencies)
            else:
                d["weights"] = a.gmm.weights.tolist()
                d["means"] = a.gmm.means.tolist()
                d["stds"] = a.gmm.stds.tolist()
            return d

        return json.dumps({"attributes": [spec_dict(a) for a in self.attributes]},
                          sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "DataSchema":
        raw = json.loads(text)
        specs = []
        for d in raw["attributes"]:
            if d["kind"] == "categorical":
                specs.append(AttributeSpec(
                    name=d["name"], kind="categorical",
                    categories=tuple(d["categories"]),
                    frequencies=tuple(d["frequencies"])))
            else:
                specs.append(AttributeSpec(
                    name=d["name"], kind="continuous",
                    gmm=GmmModel(weights=np.array(d["weights"]),
                                 means=np.array(d["means"]),
                                 stds=np.array(d["stds"]))))
        return DataSchema(attributes=tuple(specs))


def fit_schema(
    df: pd.DataFrame,
    kinds: dict[str, str] | None = None,
    n_modes: int | dict[str, int] = 5,
    category_order: dict[str, list[str]] | None = None,
) -> DataSchema:
    """Fit attribute specs from a dataframe.

    kinds defaults to dtype sniffing (numeric -> continuous). Categories are
    ordered per ``category_order`` when given (the order defines the ordinal
    index used downstream), otherwise sorted.
    """
    kinds = kinds or {}
    category_order = category_order or {}
    specs = []
    for col in df.columns:
        kind = kinds.get(col) or (
            "continuous" if pd.api.types.is_numeric_dtype(df[col]) else "categorical")
        if kind == "continuous":
            k = n_modes[col] if isinstance(n_modes, dict) else n_modes
            values = df[col].to_numpy(dtype=np.float64)
            specs.append(AttributeSpec(name=col, kind="continuous",
                                       gmm=fit_gmm(values, k)))
        else:
            values = df[col].astype(str)
            counts = values.value_counts()
            if col in category_order:
                cats = [str(c) for c in category_order[col]]
                extra = sorted(set(counts.index) - set(cats))
                if extra:
                    raise EncodingError(f"{col}: categories {extra} not in declared order")
            else:
                cats = sorted(counts.index)
            freq = np.array([counts.get(c, 0) for c in cats], dtype=np.float64)
            freq = freq / freq.sum()
            specs.append(AttributeSpec(name=col, kind="categorical",
                                       categories=tuple(cats),
                                       frequencies=tuple(freq)))
    return DataSchema(attributes=tuple(specs))


# ---------------------------------------------------------------- encoding


def _encode_continuous(spec: AttributeSpec, x: np.ndarray) -> np.ndarray:
    gmm = spec.gmm
    k = gmm.n_modes
    out = np.zeros((len(x), k + 1))
    modes = gmm.assign_modes(x)
    out[np.arange(len(x)), modes] = 1.0
    mu, sd = gmm.means[modes], gmm.stds[modes]
    out[:, k] = np.clip((x - mu) / (SCALAR_SPAN * sd), -1.0, 1.0)
    return out


def _encode_categorical(spec: AttributeSpec, values) -> np.ndarray:
    lookup = {c: i for i, c in enumerate(spec.categories)}
    out = np.zeros((len(values), len(spec.categories)))
    for row, v in enumerate(values):
        try:
            out[row, lookup[str(v)]] = 1.0
        except KeyError:
            raise EncodingError(
                f"{spec.name}: unknown category {v!r} "
                f"(expected one of {list(spec.categories)})") from None
    return out


def encode_instance(row, schema: DataSchema) -> np.ndarray:
    """Encode one raw row (mapping or Series) to the concatenated vector."""
    return encode_frame(pd.DataFrame([dict(row)]), schema)[0]


def encode_frame(df: pd.DataFrame, schema: DataSchema) -> np.ndarray:
    out = np.zeros((len(df), schema.width))
    for spec in schema.attributes:
        if spec.name not in df.columns:
            raise EncodingError(f"missing attribute {spec.name!r}")
        blk = schema.block(spec.name)
        if spec.kind == "continuous":
            x = df[spec.name].to_numpy(dtype=np.float64)
            if not np.all(np.isfinite(x)):
                raise EncodingError(f"{spec.name}: non-finite value")
            out[:, blk] = _encode_continuous(spec, x)
        else:
            out[:, blk] = _encode_categorical(spec, df[spec.name].tolist())
    return out


def decode_instance(vec: np.ndarray, schema: DataSchema, harden: bool = True) -> dict:
    return decode_matrix(np.asarray(vec, dtype=np.float64)[None, :], schema,
                         harden=harden).iloc[0].to_dict()


def decode_matrix(x: np.ndarray, schema: DataSchema, harden: bool = True) -> pd.DataFrame:
    """Invert the encoding. One-hot blocks resolve by argmax when ``harden``;
    continuous values are mu_k + span * sigma_k * scalar."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != schema.width:
        raise EncodingError(
            f"vector width {x.shape[-1] if x.ndim else 0} != schema width {schema.width}")
    cols = {}
    for spec in schema.attributes:
        blk = schema.block(spec.name)
        block = x[:, blk]
        if spec.kind == "categorical":
            idx = np.argmax(block, axis=1)
            cols[spec.name] = [spec.categories[i] for i in idx]
        else:
            k = spec.gmm.n_modes
            modes = np.argmax(block[:, :k], axis=1)
            scalar = block[:, k]
            if harden:
                scalar = np.clip(scalar, -1.0, 1.0)
            cols[spec.name] = spec.gmm.means[modes] + SCALAR_SPAN * spec.gmm.stds[modes] * scalar
    return pd.DataFrame(cols)


# ------------------------------------------------------------------- query


@dataclass(frozen=True)
class Query:
    """A partially specified instance: attribute -> value for unmasked
    attributes; everything else is masked."""

    values: dict

    def masked(self, schema: DataSchema) -> list[str]:
        return [n for n in schema.names if n not in self.values]

    def encode(self, schema: DataSchema) -> np.ndarray:
        vec = np.zeros(schema.width)
        if not self.values:
            return vec
        for name, value in self.values.items():
            spec = schema.attribute(name)
            blk = schema.block(name)
            if spec.kind == "continuous":
                x = np.asarray([value], dtype=np.float64)
                if not np.all(np.isfinite(x)):
                    raise EncodingError(f"{name}: non-finite value")
                vec[blk] = _encode_continuous(spec, x)[0]
            else:
                vec[blk] = _encode_categorical(spec, [value])[0]
        return vec

    def dim_mask(self, schema: DataSchema) -> np.ndarray:
        """1.0 on encoded dims of unmasked attributes, 0.0 elsewhere."""
        mask = np.zeros(schema.width)
        for name in self.values:
            mask[schema.block(name)] = 1.0
        return mask


def make_query(partial, schema: DataSchema) -> Query:
    """Build a query from a partial row; values equal to None are masked.
    An empty input yields the all-masked (zero vector) query."""
    values = {}
    for name, value in dict(partial).items():
        schema.attribute(name)  # unknown attribute -> error
        if value is None:
            continue
        values[name] = value
    q = Query(values=values)
    q.encode(schema)  # validate now, not at use time
    return q


# -------------------------------------------------------------- preprocess


@dataclass(frozen=True)
class PreprocessRules:
    """Appendix-style cleanup: drop missing rows, delete columns, merge
    category values that share semantics."""

    drop_columns: tuple[str, ...] = ()
    merges: dict = None  # column -> {old value -> new value}

    def __post_init__(self):
        object.__setattr__(self, "merges", dict(self.merges or {}))


def preprocess(df: pd.DataFrame, rules: PreprocessRules | None = None) -> pd.DataFrame:
    rules = rules or PreprocessRules()
    out = df.copy()
    for col in rules.drop_columns:
        if col not in out.columns:
            raise EncodingError(f"drop rule references absent column {col!r}")
        out = out.drop(columns=[col])
    for col, mapping in rules.merges.items():
        if col not in out.columns:
            raise EncodingError(f"merge rule references absent column {col!r}")
        out[col] = out[col].map(lambda v: mapping.get(v, v))
    out = out.replace(r"^\s*$", np.nan, regex=True).dropna()
    return out.reset_index(drop=True)


# ------------------------------------------------------------ config files


@dataclass(frozen=True)
class SchemaConfig:
    kinds: dict
    n_modes: dict
    category_order: dict
    rules: PreprocessRules
    label: str | None
    desired_value: str | None
    focus: tuple[str, ...]


def parse_schema_config(text: str) -> SchemaConfig:
    """Parse the key-value schema config.

    Sections: [dataset] with optional drop / label / desired / focus keys,
    plus one [attribute NAME] section per declared attribute with kind,
    categories (order-defining), modes and merge rules ("old -> new" pairs).
    """
    cp = configparser.ConfigParser()
    cp.read_string(text)
    kinds: dict = {}
    n_modes: dict = {}
    order: dict = {}
    merges: dict = {}
    drop: tuple[str, ...] = ()
    label = desired = None
    focus: tuple[str, ...] = ()
    for section in cp.sections():
        if section == "dataset":
            sec = cp["dataset"]
            if "drop" in sec:
                drop = tuple(s.strip() for s in sec["drop"].split(",") if s.strip())
            label = sec.get("label") or None
            desired = sec.get("desired") or None
            if "focus" in sec:
                focus = tuple(s.strip() for s in sec["focus"].split(",") if s.strip())
            continue
        if not section.startswith("attribute "):
            raise EncodingError(f"unknown config section [{section}]")
        name = section[len("attribute "):].strip()
        sec = cp[section]
        kind = sec.get("kind", "").strip()
        if kind:
            kinds[name] = kind
        if "modes" in sec:
            n_modes[name] = int(sec["modes"])
        if "categories" in sec:
            order[name] = [s.strip() for s in sec["categories"].split(",") if s.strip()]
        if "merge" in sec:
            mapping = {}
            for pair in sec["merge"].split(","):
                pair = pair.strip()
                if not pair:
                    continue
                if "->" not in pair:
                    raise EncodingError(f"{name}: bad merge rule {pair!r}")
                old, new = (s.strip() for s in pair.split("->", 1))
                mapping[old] = new
            merges[name] = mapping
    return SchemaConfig(kinds=kinds, n_modes=n_modes, category_order=order,
                        rules=PreprocessRules(drop_columns=drop, merges=merges),
                        label=label, desired_value=desired, focus=focus)
