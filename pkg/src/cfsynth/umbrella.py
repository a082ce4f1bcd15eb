"""Enhanced sampling of training queries.

The prior over queries is highly imbalanced, so conditioning on rare
attribute values is learned from a handful of examples. The fix: decompose
the query distribution into overlapping umbrella windows, sample each
biased window with an affine-invariant ensemble sampler, estimate the
overlap matrix between windows, and recover per-window weights as the
fixed point of ``w M(w) = w``. Weighted draws from the pooled window
chains then reproduce expectations under the original distribution while
covering rare values far more densely than plain sampling would.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoding import DataSchema
from .seeding import spawn_rng

DEFAULT_WALKERS = 8
DEFAULT_STEPS = 1000
DEFAULT_ZETA = 0.01  # threshold on Rhat - 1
BURN_IN_FRACTION = 0.2


class UmbrellaError(Exception):
    pass


# -------------------------------------------------------------- relaxation


def relax_instances(encoded: np.ndarray, schema: DataSchema, tau: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Relax hard categorical blocks onto the simplex interior.

    Each categorical block is replaced by a Gumbel-Softmax draw over the
    attribute's log-frequency logits; continuous blocks are untouched. The
    relaxed cloud is what the window samplers and the KDE target live on.
    """
    if not tau > 0:
        raise UmbrellaError(f"tau must be positive, got {tau}")
    out = np.array(encoded, dtype=np.float64, copy=True)
    if out.ndim == 1:
        return relax_instances(out[None, :], schema, tau, rng)[0]
    for spec in schema.attributes:
        if spec.kind != "categorical":
            continue
        blk = schema.block(spec.name)
        logits = np.log(np.asarray(spec.frequencies) + 1e-12)
        u = rng.uniform(1e-12, 1.0 - 1e-12, size=(len(out), len(spec.categories)))
        g = -np.log(-np.log(u))
        z = (logits[None, :] + g) / tau
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        out[:, blk] = e / e.sum(axis=1, keepdims=True)
    return out


def relax_instance(encoded: np.ndarray, schema: DataSchema, tau: float = 0.5,
                   rng: np.random.Generator | None = None) -> np.ndarray:
    return relax_instances(encoded, schema, tau,
                           rng if rng is not None else np.random.default_rng(0))


# ------------------------------------------------------------------ target


class RelaxedKde:
    """Gaussian KDE over the relaxed encoded training data, bandwidth by
    Scott's rule per dimension (floored, some encoded dims are nearly
    constant). This is the sampling target: queries share the data prior."""

    def __init__(self, reference: np.ndarray, bandwidth_floor: float = 0.05,
                 max_reference: int = 2048, seed: int = 0):
        reference = np.asarray(reference, dtype=np.float64)
        if len(reference) > max_reference:
            keep = spawn_rng(seed, "kde-subsample").choice(
                len(reference), size=max_reference, replace=False)
            reference = reference[np.sort(keep)]
        self.reference = reference
        m, d = reference.shape
        scott = m ** (-1.0 / (d + 4))
        self.bandwidth = np.maximum(reference.std(axis=0) * scott, bandwidth_floor)
        self._log_norm = -0.5 * d * np.log(2 * np.pi) - np.log(self.bandwidth).sum() \
            - np.log(m)

    def log_density(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        # (n, m) squared Mahalanobis-like distances with diagonal bandwidth
        xs = x / self.bandwidth
        rs = self.reference / self.bandwidth
        d2 = (
            (xs * xs).sum(axis=1)[:, None]
            - 2.0 * xs @ rs.T
            + (rs * rs).sum(axis=1)[None, :]
        )
        m = -0.5 * d2
        mx = m.max(axis=1)
        return mx + np.log(np.exp(m - mx[:, None]).sum(axis=1)) + self._log_norm

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Exact draws from the mixture the KDE defines."""
        idx = rng.integers(0, len(self.reference), size=n)
        return self.reference[idx] + self.bandwidth * rng.normal(
            size=(n, self.reference.shape[1]))


# ----------------------------------------------------------------- windows


@dataclass(frozen=True)
class UmbrellaWindow:
    """A Gaussian bump over selected focus coordinates of the relaxed
    encoded space: u_i(x) = exp(-|x_F - center|^2 / (2 sigma^2))."""

    index: int
    coords: tuple[int, ...]
    center: np.ndarray
    sigma: float
    label: str = ""

    def log_profile(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        diff = x[:, list(self.coords)] - self.center[None, :]
        return -0.5 * (diff * diff).sum(axis=1) / (self.sigma**2)

    def profile(self, x: np.ndarray) -> np.ndarray:
        return np.exp(self.log_profile(x))


def build_windows(schema: DataSchema, encoded: np.ndarray, focus: list[str],
                  n_windows: int | None = None,
                  width_factor: float = 0.25) -> list[UmbrellaWindow]:
    """Place windows over the focus attributes.

    Categorical focus: one window per category, centered on the one-hot
    vertex. Continuous focus: centers on an even quantile grid of encoded
    (mode block, scalar) points. sigma = width_factor * center spacing;
    0.25 is narrow enough that a window can lift a ~3% category to parity
    while Gaussian tails keep adjacent windows overlapping.
    """
    if not focus:
        raise UmbrellaError("at least one focus attribute is required")
    windows: list[UmbrellaWindow] = []
    per_attr = max(2, int(round((n_windows or 8) / len(focus))))
    for name in focus:
        spec = schema.attribute(name)
        blk = schema.block(name)
        coords = tuple(range(blk.start, blk.stop))
        if spec.kind == "categorical":
            c = len(spec.categories)
            spacing = np.sqrt(2.0)  # distance between one-hot vertices
            for j in range(c):
                center = np.zeros(c)
                center[j] = 1.0
                windows.append(UmbrellaWindow(
                    index=len(windows), coords=coords, center=center,
                    sigma=width_factor * spacing,
                    label=f"{name}={spec.categories[j]}"))
        else:
            qs = (np.arange(per_attr) + 0.5) / per_attr
            scalars = encoded[:, blk.stop - 1]
            centers = []
            for q in qs:
                vec = np.zeros(blk.stop - blk.start)
                # pick the mode block of the nearest data point at that quantile
                target = np.quantile(scalars, q)
                ref = encoded[np.argmin(np.abs(scalars - target)), blk]
                vec[:] = ref
                vec[-1] = target
                centers.append(vec)
            dists = [np.linalg.norm(centers[j + 1] - centers[j])
                     for j in range(len(centers) - 1)] or [1.0]
            spacing = max(float(np.mean(dists)), 1e-3)
            for j, center in enumerate(centers):
                windows.append(UmbrellaWindow(
                    index=len(windows), coords=coords, center=np.asarray(center),
                    sigma=width_factor * spacing, label=f"{name}@q{qs[j]:.2f}"))
    return [UmbrellaWindow(index=i, coords=w.coords, center=w.center,
                           sigma=w.sigma, label=w.label)
            for i, w in enumerate(windows)]


# ----------------------------------------------------------------- sampler


@dataclass
class ChainSet:
    """Post burn-in samples for one window: (walkers, steps, dim)."""

    window_index: int
    samples: np.ndarray
    acceptance: np.ndarray
    steps_run: int
    gr_statistic: float

    def pooled(self) -> np.ndarray:
        return self.samples.reshape(-1, self.samples.shape[-1])


def gelman_rubin(chains: np.ndarray) -> np.ndarray:
    """Rhat - 1 per dimension for an array shaped (chains, steps, dim).

    Zero within-chain variance yields 0 when the chains agree exactly and
    +inf when they disagree.
    """
    chains = np.asarray(chains, dtype=np.float64)
    if chains.ndim != 3:
        raise UmbrellaError(f"expected (chains, steps, dim), got {chains.shape}")
    m, n, d = chains.shape
    if m < 2 or n < 10:
        raise UmbrellaError("need at least 2 chains and 10 retained steps")
    means = chains.mean(axis=1)  # (m, d)
    w = chains.var(axis=1, ddof=1).mean(axis=0)  # within, per dim
    b_over_n = means.var(axis=0, ddof=1)  # B/n, per dim
    out = np.empty(d)
    for j in range(d):
        if w[j] == 0.0:
            out[j] = 0.0 if b_over_n[j] == 0.0 else np.inf
        else:
            vhat = (n - 1) / n * w[j] + (1.0 + 1.0 / m) * b_over_n[j]
            # the (n-1)/n correction lets Rhat dip below 1; only the excess
            # above 1 signals disagreement, so clamp at zero
            out[j] = max(0.0, np.sqrt(vhat / w[j]) - 1.0)
    return out


def ensemble_sample(log_density, window: UmbrellaWindow | None, dim: int,
                    walkers: int = DEFAULT_WALKERS, steps: int = DEFAULT_STEPS,
                    seed: int = 0, zeta: float | None = DEFAULT_ZETA,
                    init: np.ndarray | None = None,
                    stretch: float = 2.0, jump_proposal=None,
                    jump_every: int = 5) -> ChainSet:
    """Affine-invariant stretch-move sampling of exp(log_density) * u_window.

    The ensemble updates in two half-batches (each half proposes against
    the other), which vectorizes the density evaluations. When the target
    is KDE * profile, ``jump_proposal`` (the KDE) enables an exact
    independence move every ``jump_every`` steps whose acceptance ratio is
    just the profile ratio; it carries walkers across well-separated modes
    (one-hot vertices) that stretch moves alone cross too rarely. The first
    20% of ``steps`` is burn-in; afterwards sampling may stop early once
    the maximum Gelman-Rubin statistic over dimensions drops below
    ``zeta``. Identical seeds give bit-identical chains.
    """
    if walkers < 4 or walkers % 2:
        raise UmbrellaError("walkers must be an even number >= 4")
    rng = spawn_rng(seed, "ensemble", window.index if window is not None else "none")

    def logp(x: np.ndarray) -> np.ndarray:
        val = np.asarray(log_density(x), dtype=np.float64)
        if window is not None:
            val = val + window.log_profile(x)
        return val

    if init is None:
        init = np.zeros((walkers, dim))
    pos = np.array(init, dtype=np.float64, copy=True)
    if pos.shape != (walkers, dim):
        raise UmbrellaError(f"init shape {pos.shape} != ({walkers}, {dim})")
    lp = logp(pos)
    if not np.all(np.isfinite(lp)):
        raise UmbrellaError("log-density not finite at initial walker positions")

    burn = max(1, int(BURN_IN_FRACTION * steps))
    halves = (np.arange(walkers) < walkers // 2, np.arange(walkers) >= walkers // 2)
    history = np.empty((walkers, steps, dim))
    accepted = np.zeros(walkers)
    stale = 0
    steps_done = 0
    for step in range(steps):
        any_accept = False
        for half in halves:
            idx = np.nonzero(half)[0]
            other = np.nonzero(~half)[0]
            partners = other[rng.integers(0, len(other), size=len(idx))]
            z = ((stretch - 1.0) * rng.uniform(size=len(idx)) + 1.0) ** 2 / stretch
            proposal = pos[partners] + z[:, None] * (pos[idx] - pos[partners])
            lp_prop = logp(proposal)
            log_accept = (dim - 1) * np.log(z) + lp_prop - lp[idx]
            take = np.log(rng.uniform(size=len(idx))) < log_accept
            pos[idx[take]] = proposal[take]
            lp[idx[take]] = lp_prop[take]
            accepted[idx[take]] += 1
            any_accept = any_accept or bool(take.any())
        if jump_proposal is not None and (step + 1) % jump_every == 0:
            cand = jump_proposal.sample(rng, walkers)
            if window is not None:
                la = window.log_profile(cand) - window.log_profile(pos)
            else:
                la = np.zeros(walkers)
            take = np.log(rng.uniform(size=walkers)) < la
            if take.any():
                pos[take] = cand[take]
                lp[take] = logp(cand[take])
                accepted[take] += 1
                any_accept = True
        history[:, step] = pos
        steps_done = step + 1
        stale = 0 if any_accept else stale + 1
        if stale >= 100:
            raise UmbrellaError(
                f"window {window.index if window else '-'}: all proposals "
                f"rejected for 100 consecutive steps (degenerate window)")
        if (zeta is not None and steps_done > burn + 20
                and steps_done % 50 == 0):
            gr = gelman_rubin(history[:, burn:steps_done])
            if np.max(gr) <= zeta:
                break
    retained = history[:, burn:steps_done]
    gr = float(np.max(gelman_rubin(retained))) if retained.shape[1] >= 10 else np.inf
    return ChainSet(window_index=window.index if window is not None else -1,
                    samples=retained.copy(),
                    acceptance=accepted / max(1, steps_done),
                    steps_run=steps_done, gr_statistic=gr)


# ------------------------------------------------------- weights and plan


def _profile_matrix(samples: np.ndarray, windows: list[UmbrellaWindow]) -> np.ndarray:
    return np.column_stack([w.profile(samples) for w in windows])


def overlap_matrix(chains: list[np.ndarray], windows: list[UmbrellaWindow],
                   w: np.ndarray) -> np.ndarray:
    """M_ij = mean over window-i samples of (u_j / w_i) / sum_k (u_k / w_k).

    Note the row sums equal 1 exactly only when all weights coincide; the
    fixed point w M(w) = w still recovers the window weights.
    """
    w = np.asarray(w, dtype=np.float64)
    n = len(windows)
    if np.any(w <= 0):
        raise UmbrellaError("weights must be strictly positive")
    m = np.zeros((n, n))
    for i, samples in enumerate(chains):
        if len(samples) == 0:
            raise UmbrellaError(f"window {i} has no samples")
        u = _profile_matrix(np.asarray(samples), windows)  # (s, n)
        denom = (u / w[None, :]).sum(axis=1)
        if np.any(denom <= 0):
            raise UmbrellaError(
                "windows fail to cover the domain: zero total profile at a sample")
        m[i] = ((u / w[i]) / denom[:, None]).mean(axis=0)
    return m


def fixed_point_residual(w: np.ndarray, m: np.ndarray) -> float:
    """L1 distance between w and the renormalized product w M."""
    wm = np.asarray(w) @ np.asarray(m)
    wm = wm / wm.sum()
    return float(np.abs(wm - w).sum())


def solve_weights(chains: list[np.ndarray], windows: list[UmbrellaWindow],
                  tol: float = 1e-8, max_iter: int = 10000) -> np.ndarray:
    """Self-consistent iteration w <- normalize(w M(w)) from uniform start.

    Converges to weights proportional to the average window profile under
    the target. Raises on disconnected windows or non-convergence. The
    iteration is driven a decade below ``tol`` so the reported residual
    lands safely inside it.
    """
    n = len(windows)
    if n == 1:
        return np.array([1.0])
    profiles = [_profile_matrix(np.asarray(c), windows) for c in chains]

    # connectivity: windows i, j communicate when window i's chain sees u_j
    link = np.zeros((n, n), dtype=bool)
    for i, u in enumerate(profiles):
        link[i] = (u > 1e-12).any(axis=0)
    link = link | link.T
    reach = {0}
    frontier = [0]
    while frontier:
        i = frontier.pop()
        for j in np.nonzero(link[i])[0]:
            if j not in reach:
                reach.add(j)
                frontier.append(int(j))
    if len(reach) != n:
        missing = sorted(set(range(n)) - reach)
        raise UmbrellaError(f"windows {missing} are disconnected from window 0")

    w = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        m = np.zeros((n, n))
        for i, u in enumerate(profiles):
            denom = (u / w[None, :]).sum(axis=1)
            if np.any(denom <= 0):
                raise UmbrellaError("zero total profile at a sample")
            m[i] = ((u / w[i]) / denom[:, None]).mean(axis=0)
        w_new = w @ m
        total = w_new.sum()
        if total <= 0:
            raise UmbrellaError("weight iteration collapsed to zero")
        w_new = w_new / total
        delta = np.abs(w_new - w).sum()
        w = w_new
        if delta <= 0.1 * tol:
            return w
    residual = np.abs(w @ m - w).sum()
    raise UmbrellaError(
        f"weight fixed point did not converge in {max_iter} iterations "
        f"(residual {residual:.3e})")


@dataclass
class UmbrellaPlan:
    windows: list[UmbrellaWindow]
    chains: list[ChainSet]
    weights: np.ndarray
    overlap: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_windows(self) -> int:
        return len(self.windows)

    def to_text(self) -> str:
        lines = ["umbrella-plan v1", f"windows {self.n_windows}"]
        for w in self.windows:
            center = " ".join(f"{c:.17g}" for c in w.center)
            coords = " ".join(str(c) for c in w.coords)
            lines.append(f"window {w.index} | label {w.label} | sigma {w.sigma:.17g} "
                         f"| coords {coords} | center {center}")
        lines.append("weights " + " ".join(f"{x:.17g}" for x in self.weights))
        for i, row in enumerate(self.overlap):
            lines.append(f"overlap {i} " + " ".join(f"{x:.17g}" for x in row))
        for key, val in sorted(self.diagnostics.items()):
            lines.append(f"diag {key} {val}")
        return "\n".join(lines) + "\n"


def build_plan(encoded: np.ndarray, schema: DataSchema, focus: list[str],
               n_windows: int | None = None, walkers: int = DEFAULT_WALKERS,
               steps: int = DEFAULT_STEPS, zeta: float = DEFAULT_ZETA,
               tau: float = 0.5, seed: int = 0,
               width_factor: float = 0.25) -> UmbrellaPlan:
    """Relax the data, build windows, run one biased sampler per window,
    then solve the overlap fixed point for the window weights."""
    rng = spawn_rng(seed, "relax")
    relaxed = relax_instances(encoded, schema, tau, rng)
    kde = RelaxedKde(relaxed, seed=seed)
    windows = build_windows(schema, relaxed, focus, n_windows=n_windows,
                            width_factor=width_factor)
    dim = relaxed.shape[1]
    # a stretch-move ensemble only explores the affine hull of its walkers,
    # so the walker count must exceed the dimension with room to spare
    walkers = max(walkers, 2 * dim + 2)
    walkers += walkers % 2
    chains: list[ChainSet] = []
    for win in windows:
        init_rng = spawn_rng(seed, "walker-init", win.index)
        base = relaxed[init_rng.integers(0, len(relaxed), size=walkers)]
        base[:, list(win.coords)] = win.center[None, :]
        base = base + 0.01 * init_rng.normal(size=base.shape)
        chains.append(ensemble_sample(
            kde.log_density, win, dim, walkers=walkers, steps=steps,
            seed=seed, zeta=zeta, init=base, jump_proposal=kde))
    pooled = [c.pooled() for c in chains]
    weights = solve_weights(pooled, windows)
    overlap = overlap_matrix(pooled, windows, weights)
    residual = fixed_point_residual(weights, overlap)
    diagnostics = {
        "fixed_point_residual": residual,
        "max_gr": max(c.gr_statistic for c in chains),
        "steps": [c.steps_run for c in chains],
        "acceptance_mean": float(np.mean([c.acceptance.mean() for c in chains])),
    }
    return UmbrellaPlan(windows=windows, chains=chains, weights=weights,
                        overlap=overlap, diagnostics=diagnostics)


# ------------------------------------------------------------------ draws


@dataclass(frozen=True)
class MaskPolicy:
    """Independent per-attribute Bernoulli masking for training queries;
    focus attributes are always kept."""

    keep_probability: float = 0.5
    always_keep: tuple[str, ...] = ()


@dataclass
class QueryBatch:
    """Encoded queries with attribute-level masks, dim-level masks and
    normalized importance weights."""

    encoded: np.ndarray
    attr_mask: np.ndarray  # (batch, n_attrs) True = kept
    dim_mask: np.ndarray  # (batch, width) 1.0 on kept blocks
    weights: np.ndarray


def harden_unit_blocks(x: np.ndarray, schema: DataSchema) -> np.ndarray:
    """Snap every one-hot block (categorical and mode blocks) to its argmax
    vertex and clip scalars to [-1, 1]."""
    out = np.array(x, dtype=np.float64, copy=True)
    for spec in schema.attributes:
        blk = schema.block(spec.name)
        if spec.kind == "categorical":
            sub = out[:, blk]
            hard = np.zeros_like(sub)
            hard[np.arange(len(sub)), np.argmax(sub, axis=1)] = 1.0
            out[:, blk] = hard
        else:
            k = spec.gmm.n_modes
            sub = out[:, blk.start : blk.start + k]
            hard = np.zeros_like(sub)
            hard[np.arange(len(sub)), np.argmax(sub, axis=1)] = 1.0
            out[:, blk.start : blk.start + k] = hard
            out[:, blk.stop - 1] = np.clip(out[:, blk.stop - 1], -1.0, 1.0)
    return out


def apply_mask(encoded: np.ndarray, schema: DataSchema, policy: MaskPolicy,
               rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Zero out masked attribute blocks; returns (masked, attr_mask, dim_mask)."""
    n = len(encoded)
    names = schema.names
    keep = rng.uniform(size=(n, len(names))) < policy.keep_probability
    for j, name in enumerate(names):
        if name in policy.always_keep:
            keep[:, j] = True
    dim_mask = np.zeros((n, schema.width))
    for j, name in enumerate(names):
        blk = schema.block(name)
        dim_mask[:, blk] = keep[:, j : j + 1]
    return encoded * dim_mask, keep, dim_mask


def draw_training_queries(plan: UmbrellaPlan, schema: DataSchema, batch_size: int,
                          policy: MaskPolicy, seed: int,
                          counter: int = 0) -> QueryBatch:
    """Equal per-window draws from the retained chains, reweighted back to
    the target: weight(s) = 1 / sum_k(u_k(s) / w_k), normalized over the
    batch. Discrete blocks are hardened and the mask policy applied."""
    n = plan.n_windows
    if batch_size < n:
        raise UmbrellaError(f"batch size {batch_size} < {n} windows")
    per = max(1, batch_size // n)
    rng = spawn_rng(seed, "query-draw", counter)
    rows = []
    weights = []
    for i, chain in enumerate(plan.chains):
        pool = chain.pooled()
        pick = pool[rng.integers(0, len(pool), size=per)]
        u = _profile_matrix(pick, plan.windows)
        if np.any(u[:, i] <= 0):
            raise UmbrellaError(f"window {i}: zero profile at a retained sample")
        denom = (u / plan.weights[None, :]).sum(axis=1)
        rows.append(pick)
        weights.append(1.0 / denom)
    samples = np.vstack(rows)
    weights = np.concatenate(weights)
    weights = weights / weights.sum()
    if schema is None:
        # raw draws, e.g. for reweighting checks on toy targets
        return QueryBatch(encoded=samples,
                          attr_mask=np.ones((len(samples), 0), dtype=bool),
                          dim_mask=np.ones_like(samples), weights=weights)
    hard = harden_unit_blocks(samples, schema)
    masked, attr_mask, dim_mask = apply_mask(hard, schema, policy, rng)
    return QueryBatch(encoded=masked, attr_mask=attr_mask, dim_mask=dim_mask,
                      weights=weights)
