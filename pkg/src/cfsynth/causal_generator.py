"""DAG-structured generation.

Instead of one monolithic net, the generator is assembled from one
feed-forward module per attribute, wired along a user-supplied causal
graph: module s consumes its parents' generated blocks plus a private
noise slice (and the shared query), mimicking the structural equation of
the mechanism cause -> effect. Perturbing one attribute's private noise
can therefore only ever change that attribute and its descendants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, ParamStore, forward, glorot_init
from .encoding import DataSchema
from .seeding import spawn_rng

MIN_NOISE_DIM = 8


class CausalGraphError(Exception):
    pass


@dataclass(frozen=True)
class CausalGraph:
    vertices: tuple[str, ...]
    edges: tuple[tuple[str, str], ...]

    @staticmethod
    def from_edges(vertices, edges) -> "CausalGraph":
        vertices = tuple(vertices)
        known = set(vertices)
        norm = []
        for cause, effect in edges:
            if cause not in known:
                raise CausalGraphError(f"unknown attribute {cause!r} in edge")
            if effect not in known:
                raise CausalGraphError(f"unknown attribute {effect!r} in edge")
            if cause == effect:
                raise CausalGraphError(f"self-loop on {cause!r}")
            norm.append((cause, effect))
        return CausalGraph(vertices=vertices, edges=tuple(norm))

    def parents(self, name: str) -> list[str]:
        return sorted({c for c, e in self.edges if e == name})

    def children(self, name: str) -> list[str]:
        return sorted({e for c, e in self.edges if c == name})

    def descendants(self, name: str) -> set[str]:
        out: set[str] = set()
        frontier = [name]
        while frontier:
            cur = frontier.pop()
            for child in self.children(cur):
                if child not in out:
                    out.add(child)
                    frontier.append(child)
        return out


def validate_dag(graph: CausalGraph) -> list[str]:
    """Kahn topological order with a stable alphabetical tie-break.
    Raises on cycles, listing one offending cycle."""
    if not graph.vertices:
        raise CausalGraphError("graph has no vertices")
    indegree = {v: 0 for v in graph.vertices}
    for _, effect in graph.edges:
        indegree[effect] += 1
    order: list[str] = []
    remaining = dict(indegree)
    while remaining:
        ready = sorted(v for v, d in remaining.items() if d == 0)
        if not ready:
            cycle = _find_cycle(graph, set(remaining))
            raise CausalGraphError("cycle detected: " + " -> ".join(cycle))
        head = ready[0]
        order.append(head)
        del remaining[head]
        for child in graph.children(head):
            if child in remaining:
                remaining[child] -= 1
    return order


def _find_cycle(graph: CausalGraph, remaining: set[str]) -> list[str]:
    start = sorted(remaining)[0]
    path = [start]
    seen = {start}
    cur = start
    while True:
        nxt = [p for p in graph.parents(cur) if p in remaining]
        cur = sorted(nxt)[0]
        if cur in seen:
            i = path.index(cur)
            return path[i:] + [cur]
        seen.add(cur)
        path.append(cur)


def parse_edge_list(text: str) -> list[tuple[str, str]]:
    """One 'cause -> effect' per line; '#' starts a comment."""
    edges = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "->" not in line:
            raise CausalGraphError(f"line {lineno}: expected 'cause -> effect'")
        cause, effect = (s.strip() for s in line.split("->", 1))
        if not cause or not effect:
            raise CausalGraphError(f"line {lineno}: empty endpoint")
        edges.append((cause, effect))
    return edges


class ModularGenerator:
    """One two-layer module per attribute, evaluated in topological order.

    Fig-4-style wiring: module input = concat(parent output blocks,
    private noise z_s, query q). The query is fed to every module so
    conditional generation composes with the causal structure. The latent
    dimension is partitioned across attributes (floor MIN_NOISE_DIM each).
    """

    kind = "modular"

    def __init__(self, schema: DataSchema, config, graph: CausalGraph):
        for v in graph.vertices:
            schema.attribute(v)  # unknown attribute -> error
        missing = [n for n in schema.names if n not in graph.vertices]
        if missing:
            graph = CausalGraph.from_edges(tuple(schema.names), graph.edges)
        self.schema = schema
        self.config = config
        self.graph = graph
        self.order = validate_dag(graph)
        s = len(schema.names)
        self.noise_dims = {name: max(MIN_NOISE_DIM, round(config.latent_dim / s))
                           for name in schema.names}

    def describe(self) -> dict:
        return {"kind": self.kind, "edges": [list(e) for e in self.graph.edges]}

    def init_params(self, store: ParamStore, seed: int) -> None:
        from .synthesizer import _head_params

        rng = spawn_rng(seed, "modular-init")
        for name in self.order:
            spec = self.schema.attribute(name)
            in_width = (sum(self.schema.attribute(p).width
                            for p in self.graph.parents(name))
                        + self.noise_dims[name] + self.schema.width)
            store.register(f"g/mod/{name}/w1",
                           glorot_init(rng, in_width, self.config.hidden_dim))
            store.register(f"g/mod/{name}/b1", np.zeros(self.config.hidden_dim))
            _head_params(store, rng, f"g/mod/{name}/", self.config.hidden_dim, spec)

    def param_names(self, store: ParamStore) -> list[str]:
        return [n for n in store.values if n.startswith("g/")]

    def build(self, g: Graph, q_node: int) -> int:
        from .synthesizer import _attach_heads

        blocks: dict[str, int] = {}
        for name in self.order:
            spec = self.schema.attribute(name)
            inputs = [blocks[p] for p in self.graph.parents(name)]
            inputs.append(g.placeholder(f"z/{name}"))
            inputs.append(q_node)
            joined = g.concat(*inputs) if len(inputs) > 1 else inputs[0]
            h = g.relu(g.add(g.matmul(joined, g.parameter(f"g/mod/{name}/w1")),
                             g.parameter(f"g/mod/{name}/b1")))
            blocks[name] = _attach_heads(g, h, f"g/mod/{name}/", spec,
                                         self.config.tau)
        ordered = [blocks[n] for n in self.schema.names]
        return g.concat(*ordered) if len(ordered) > 1 else ordered[0]

    def sample_noise(self, rng: np.random.Generator, n: int) -> dict[str, np.ndarray]:
        """Private noise per attribute: a latent slice plus the Gumbel
        uniforms for the attribute's own blocks. Draw order is the fixed
        schema order, so identical seeds give identical bundles."""
        feeds: dict[str, np.ndarray] = {}
        for name in self.schema.names:
            spec = self.schema.attribute(name)
            feeds[f"z/{name}"] = rng.normal(size=(n, self.noise_dims[name]))
            width = len(spec.categories) if spec.kind == "categorical" \
                else spec.gmm.n_modes
            feeds[f"gu/{name}"] = rng.uniform(1e-9, 1 - 1e-9, size=(n, width))
        return feeds


def resample_noise(gen: ModularGenerator, noise: dict[str, np.ndarray],
                   attribute: str, seed: int) -> dict[str, np.ndarray]:
    """Replace only ``attribute``'s noise partition; every other entry is
    the same array object, hence bit-identical."""
    spec = gen.schema.attribute(attribute)
    out = dict(noise)
    n = len(next(iter(noise.values())))
    rng = spawn_rng(seed, "resample", attribute)
    out[f"z/{attribute}"] = rng.normal(size=(n, gen.noise_dims[attribute]))
    width = len(spec.categories) if spec.kind == "categorical" else spec.gmm.n_modes
    out[f"gu/{attribute}"] = rng.uniform(1e-9, 1 - 1e-9, size=(n, width))
    return out


def modular_forward(gen: ModularGenerator, store: ParamStore,
                    noise: dict[str, np.ndarray], query_vec: np.ndarray) -> np.ndarray:
    """Deterministic forward pass of the modular generator for a fixed
    noise bundle and query."""
    n = len(next(iter(noise.values())))
    g = Graph(store)
    q = g.placeholder("q")
    g.mark_output("x", gen.build(g, q))
    feeds = dict(noise)
    feeds["q"] = np.tile(np.asarray(query_vec, dtype=np.float64)[None, :], (n, 1))
    return forward(g, feeds)["x"]
