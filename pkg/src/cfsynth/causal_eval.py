"""Pairwise cause-effect identification on samples.

For a direction a -> b, fitness is how well the data agrees with an
additive-noise mechanism in that direction: regress b on a, test the
residual's independence from a (HSIC for ANM), or compare conditional
histograms across cause bins (CDS). Raw statistics are standardized by a
permutation null so the +-1 decision threshold means "one null standard
deviation of directional asymmetry" on any dataset. The causation score
is the backward fitness minus the forward fitness; large positive values
support a -> b.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .seeding import spawn_rng

N_PERMUTATIONS = 32
RIDGE = 1e-3
CAUSE_BINS = 10
EFFECT_BINS = 20


class CausalEvalError(Exception):
    pass


def _median_bandwidth(x: np.ndarray) -> float:
    d = np.abs(x[:, None] - x[None, :])
    med = float(np.median(d[np.triu_indices(len(x), k=1)]))
    return med if med > 0 else 1.0


def _gaussian_gram(x: np.ndarray, bandwidth: float) -> np.ndarray:
    d2 = (x[:, None] - x[None, :]) ** 2
    return np.exp(-d2 / (2.0 * bandwidth**2))


def hsic(x, y) -> float:
    """Biased HSIC V-statistic trace(KHLH)/n^2 with Gaussian kernels and
    median-heuristic bandwidths. Zero-variance inputs give exactly 0."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(x) != len(y):
        raise CausalEvalError(f"length mismatch {len(x)} vs {len(y)}")
    if len(x) < 10:
        raise CausalEvalError("need at least 10 samples")
    if x.std() == 0 or y.std() == 0:
        return 0.0
    n = len(x)
    k = _gaussian_gram(x, _median_bandwidth(x))
    l = _gaussian_gram(y, _median_bandwidth(y))
    kc = k - k.mean(axis=0, keepdims=True) - k.mean(axis=1, keepdims=True) + k.mean()
    return float((kc * l).sum() / n**2)


def _hsic_null_std(x: np.ndarray, y: np.ndarray, seed: int) -> float:
    """Permutation-null standard deviation via shared Gram matrices."""
    n = len(x)
    k = _gaussian_gram(x, _median_bandwidth(x))
    l = _gaussian_gram(y, _median_bandwidth(y))
    kc = k - k.mean(axis=0, keepdims=True) - k.mean(axis=1, keepdims=True) + k.mean()
    rng = spawn_rng(seed, "hsic-null")
    vals = np.empty(N_PERMUTATIONS)
    for i in range(N_PERMUTATIONS):
        perm = rng.permutation(n)
        vals[i] = (kc * l[np.ix_(perm, perm)]).sum() / n**2
    sd = float(vals.std())
    return sd if sd > 0 else 1e-12


def _standardize(v: np.ndarray) -> np.ndarray:
    sd = v.std()
    if sd == 0:
        raise CausalEvalError("degenerate input: zero variance")
    return (v - v.mean()) / sd


def _kernel_ridge_residual(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Residual of a Gaussian-kernel ridge regression b ~ g(a)."""
    k = _gaussian_gram(a, _median_bandwidth(a))
    alpha = np.linalg.solve(k + RIDGE * np.eye(len(a)), b)
    return b - k @ alpha


def anm_fitness(cause, effect, seed: int = 0) -> float:
    """Additive-noise fitness for cause -> effect: standardized HSIC
    between the cause and the nonparametric regression residual. Small
    values mean the direction is compatible with an additive mechanism."""
    a = np.asarray(cause, dtype=np.float64).ravel()
    b = np.asarray(effect, dtype=np.float64).ravel()
    if len(a) != len(b):
        raise CausalEvalError(f"length mismatch {len(a)} vs {len(b)}")
    if len(a) < 50:
        raise CausalEvalError("need at least 50 samples")
    a = _standardize(a)
    b = _standardize(b)
    r = _kernel_ridge_residual(a, b)
    raw = hsic(a, r)
    return float(raw / _hsic_null_std(a, r, seed))


def cds_fitness(cause, effect, seed: int = 0) -> float:
    """Conditional-distribution-similarity fitness for cause -> effect:
    dispersion (mean pairwise L2) of the effect's conditional histograms
    across equal-count cause bins, standardized by its permutation null."""
    a = np.asarray(cause, dtype=np.float64).ravel()
    b = np.asarray(effect, dtype=np.float64).ravel()
    if len(a) != len(b):
        raise CausalEvalError(f"length mismatch {len(a)} vs {len(b)}")
    if len(a) < 50:
        raise CausalEvalError("need at least 50 samples")
    a = _standardize(a)
    b = _standardize(b)

    edges = np.quantile(a, np.linspace(0, 1, CAUSE_BINS + 1))
    edges[0] -= 1e-9
    edges[-1] += 1e-9
    bin_of = np.clip(np.searchsorted(edges, a, side="right") - 1, 0, CAUSE_BINS - 1)

    def dispersion(values: np.ndarray) -> float:
        # standardize the effect within each cause bin, so only the SHAPE of
        # the conditional matters; an additive mechanism leaves identical
        # shapes along the causal direction
        hists = []
        for i in range(CAUSE_BINS):
            sel = values[bin_of == i]
            if len(sel) < 2 or sel.std() == 0:
                continue
            std = (sel - sel.mean()) / sel.std()
            h, _ = np.histogram(std, bins=EFFECT_BINS, range=(-3.0, 3.0))
            hists.append(h / len(sel))
        if len(hists) < 3:
            raise CausalEvalError("fewer than 3 nonempty cause bins")
        hists = np.asarray(hists)
        m = len(hists)
        total = 0.0
        count = 0
        for i in range(m):
            for j in range(i + 1, m):
                total += float(np.linalg.norm(hists[i] - hists[j]))
                count += 1
        return total / count

    raw = dispersion(b)
    rng = spawn_rng(seed, "cds-null")
    null = np.empty(N_PERMUTATIONS)
    for i in range(N_PERMUTATIONS):
        null[i] = dispersion(b[rng.permutation(len(b))])
    sd = float(null.std())
    if sd == 0:
        return 0.0
    # raw / null-std, matching the ANM convention: for exchangeable data the
    # two directions produce comparable ratios and the score difference
    # cancels, so the +-1 threshold keeps its meaning
    return float(raw / sd)


@dataclass(frozen=True)
class CausationScore:
    pair: tuple[str, str]
    method: str
    forward_fitness: float  # tau_f for A -> B
    backward_fitness: float  # tau_f for B -> A
    n: int
    threshold: float = 1.0

    @property
    def score(self) -> float:
        return self.backward_fitness - self.forward_fitness

    @property
    def verdict(self) -> str:
        if self.score >= self.threshold:
            return f"{self.pair[0]} -> {self.pair[1]}"
        if self.score <= -self.threshold:
            return f"{self.pair[1]} -> {self.pair[0]}"
        return "none"

    def as_row(self) -> dict:
        return {"pair": f"{self.pair[0]},{self.pair[1]}", "method": self.method,
                "n": self.n, "tau_f_forward": self.forward_fitness,
                "tau_f_backward": self.backward_fitness, "tau_c": self.score,
                "verdict": self.verdict}


_METHODS = {"ANM": anm_fitness, "CDS": cds_fitness}


def causation_score(a, b, method: str = "ANM", names: tuple[str, str] = ("A", "B"),
                    threshold: float = 1.0, seed: int = 0) -> CausationScore:
    """tau_c = tau_f(B->A) - tau_f(A->B); a direction is declared when
    |tau_c| reaches the threshold (default 1)."""
    if method not in _METHODS:
        raise CausalEvalError(f"unknown method {method!r}")
    fit = _METHODS[method]
    fwd = fit(a, b, seed=seed)
    bwd = fit(b, a, seed=seed)
    return CausationScore(pair=names, method=method, forward_fitness=fwd,
                          backward_fitness=bwd, n=len(np.asarray(a).ravel()),
                          threshold=threshold)


def to_numeric(values, spec) -> np.ndarray:
    """Map attribute values to reals for scoring: categorical values become
    their index in the schema's category order (ordinal by construction)."""
    if spec.kind == "continuous":
        return np.asarray(values, dtype=np.float64)
    lookup = {c: i for i, c in enumerate(spec.categories)}
    return np.asarray([lookup[str(v)] for v in values], dtype=np.float64)
