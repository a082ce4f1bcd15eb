"""Reverse-mode differentiation over small dense computation graphs.

Just enough machinery for two-layer feed-forward generators, discriminators
and classifiers: float64 everywhere, explicit static graphs, and an
adaptive-moment optimizer. Noise for the Gumbel-Softmax relaxation is an
explicit graph input so gradient checks can hold it fixed.

Tensors are plain ``numpy.ndarray`` of dtype float64; a graph node records
the op kind and its input node ids. Several graphs may share one
:class:`ParamStore` so a generator graph and a discriminator graph can
train against each other while owning disjoint parameter subsets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GraphError(Exception):
    """Structural problem in a graph: bad shapes, bad wiring, bad values."""


class ParamStore:
    """Named trainable tensors plus their gradient accumulators."""

    def __init__(self) -> None:
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def register(self, name: str, value: np.ndarray) -> None:
        if name in self.values:
            raise GraphError(f"parameter {name!r} registered twice")
        arr = np.asarray(value, dtype=np.float64)
        self.values[name] = arr
        self.grads[name] = np.zeros_like(arr)

    def zero_grad(self, names: list[str] | None = None) -> None:
        for name in names if names is not None else self.grads:
            self.grads[name][...] = 0.0


@dataclass
class Node:
    idx: int
    op: str
    inputs: tuple[int, ...]
    attrs: dict = field(default_factory=dict)
    name: str | None = None

    def label(self) -> str:
        return f"node {self.idx} ({self.op}{'' if self.name is None else ' ' + self.name})"


# Ops whose output is elementwise in their single input.
_ELEMENTWISE = {"relu", "sigmoid", "tanh", "softplus", "log"}


class Graph:
    """A DAG of operation records over float64 tensors.

    Build ops through the methods below (each returns a node id), mark
    outputs with :meth:`mark_output`, then call :func:`forward` /
    :func:`backward`. Forward values are cached on the graph between the
    two calls; a graph is single-threaded mutable state during training.
    """

    def __init__(self, params: ParamStore | None = None) -> None:
        self.nodes: list[Node] = []
        self.params = params if params is not None else ParamStore()
        self.placeholders: dict[str, int] = {}
        self.param_nodes: dict[str, int] = {}
        self.outputs: dict[str, int] = {}
        self._values: list[np.ndarray] | None = None

    # -- construction -----------------------------------------------------

    def _add(self, op: str, inputs: tuple[int, ...], attrs: dict | None = None,
             name: str | None = None) -> int:
        for i in inputs:
            if not (0 <= i < len(self.nodes)):
                raise GraphError(f"op {op!r} references unknown node {i}")
        node = Node(len(self.nodes), op, inputs, attrs or {}, name)
        self.nodes.append(node)
        return node.idx

    def placeholder(self, name: str) -> int:
        if name in self.placeholders:
            raise GraphError(f"placeholder {name!r} already defined")
        idx = self._add("placeholder", (), name=name)
        self.placeholders[name] = idx
        return idx

    def parameter(self, name: str, init: np.ndarray | None = None) -> int:
        """Bind a named parameter node. ``init`` registers the value in the
        shared store; pass None to reference an already registered one."""
        if init is not None:
            self.params.register(name, init)
        elif name not in self.params.values:
            raise GraphError(f"parameter {name!r} not in store and no init given")
        if name in self.param_nodes:
            return self.param_nodes[name]
        idx = self._add("parameter", (), name=name)
        self.param_nodes[name] = idx
        return idx

    def constant(self, value: np.ndarray) -> int:
        idx = self._add("constant", ())
        self.nodes[idx].attrs["value"] = np.asarray(value, dtype=np.float64)
        return idx

    def mark_output(self, name: str, idx: int) -> int:
        self.outputs[name] = idx
        return idx

    # op builders
    def matmul(self, a: int, b: int) -> int:
        return self._add("matmul", (a, b))

    def add(self, a: int, b: int) -> int:
        return self._add("add", (a, b))

    def sub(self, a: int, b: int) -> int:
        return self._add("sub", (a, b))

    def mul(self, a: int, b: int) -> int:
        return self._add("mul", (a, b))

    def concat(self, *xs: int) -> int:
        if len(xs) < 2:
            raise GraphError("concat needs at least two inputs")
        return self._add("concat", tuple(xs))

    def relu(self, x: int) -> int:
        return self._add("relu", (x,))

    def sigmoid(self, x: int) -> int:
        return self._add("sigmoid", (x,))

    def tanh(self, x: int) -> int:
        return self._add("tanh", (x,))

    def softplus(self, x: int) -> int:
        return self._add("softplus", (x,))

    def log(self, x: int) -> int:
        return self._add("log", (x,))

    def softmax(self, x: int) -> int:
        """Softmax over the last axis."""
        return self._add("softmax", (x,))

    def gumbel_softmax(self, logits: int, noise: int, tau: float) -> int:
        """softmax((logits + g)/tau) with g = -log(-log(noise)).

        ``noise`` must be uniform(0,1) of the same shape as ``logits``; it
        is a graph input, not a consumer of gradients.
        """
        if not tau > 0:
            raise GraphError(f"gumbel_softmax needs tau > 0, got {tau}")
        return self._add("gumbel_softmax", (logits, noise), {"tau": float(tau)})

    def cross_entropy(self, logits: int, target: int) -> int:
        """Per-row -sum(target * log_softmax(logits)); targets may be soft."""
        return self._add("cross_entropy", (logits, target))

    def squared_distance(self, a: int, b: int) -> int:
        """Per-row squared Euclidean distance sum((a-b)^2, axis=-1)."""
        return self._add("squared_distance", (a, b))

    def mean(self, x: int) -> int:
        return self._add("mean", (x,))

    def sum(self, x: int) -> int:
        return self._add("sum", (x,))

    def scale(self, x: int, c: float) -> int:
        return self._add("scale", (x,), {"c": float(c)})

    # -- evaluation --------------------------------------------------------

    def value(self, idx: int) -> np.ndarray:
        if self._values is None:
            raise GraphError("forward has not been run")
        return self._values[idx]


def _softmax_last(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _check_binary_shapes(node: Node, a: np.ndarray, b: np.ndarray) -> None:
    # Equal shapes, or b broadcastable as a trailing-axes bias / scalar.
    if a.shape == b.shape or b.ndim == 0:
        return
    if b.shape == a.shape[a.ndim - b.ndim:]:
        return
    raise GraphError(f"{node.label()}: shapes {a.shape} and {b.shape} incompatible")


def forward(graph: Graph, inputs: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Evaluate the graph and return its marked outputs.

    Deterministic given inputs and parameters. Raises GraphError naming the
    offending node for shape mismatches or invalid values.
    """
    missing = set(graph.placeholders) - set(inputs)
    if missing:
        raise GraphError(f"missing inputs: {sorted(missing)}")
    values: list[np.ndarray] = [None] * len(graph.nodes)  # type: ignore[list-item]
    for node in graph.nodes:
        op = node.op
        src = [values[i] for i in node.inputs]
        if op == "placeholder":
            out = np.asarray(inputs[node.name], dtype=np.float64)
        elif op == "parameter":
            out = graph.params.values[node.name]
        elif op == "constant":
            out = node.attrs["value"]
        elif op == "matmul":
            a, b = src
            if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
                raise GraphError(
                    f"{node.label()}: cannot matmul {a.shape} by {b.shape}")
            out = a @ b
        elif op in ("add", "sub", "mul"):
            a, b = src
            _check_binary_shapes(node, a, b)
            out = a + b if op == "add" else a - b if op == "sub" else a * b
        elif op == "concat":
            dims = {v.ndim for v in src}
            if len(dims) != 1:
                raise GraphError(f"{node.label()}: mixed ranks {sorted(dims)}")
            lead = {v.shape[:-1] for v in src}
            if len(lead) != 1:
                raise GraphError(f"{node.label()}: leading shapes differ {sorted(lead)}")
            out = np.concatenate(src, axis=-1)
        elif op == "relu":
            out = np.maximum(src[0], 0.0)
        elif op == "sigmoid":
            x = src[0]
            out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                           np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        elif op == "tanh":
            out = np.tanh(src[0])
        elif op == "softplus":
            out = np.logaddexp(0.0, src[0])
        elif op == "log":
            x = src[0]
            if np.any(x <= 0):
                raise GraphError(f"{node.label()}: log of non-positive value")
            out = np.log(x)
        elif op == "softmax":
            out = _softmax_last(src[0])
        elif op == "gumbel_softmax":
            logits, noise = src
            if logits.shape != noise.shape:
                raise GraphError(
                    f"{node.label()}: noise shape {noise.shape} != logits {logits.shape}")
            if np.any(noise <= 0.0) or np.any(noise >= 1.0):
                raise GraphError(f"{node.label()}: noise must lie strictly in (0,1)")
            g = -np.log(-np.log(noise))
            out = _softmax_last((logits + g) / node.attrs["tau"])
        elif op == "cross_entropy":
            logits, target = src
            if logits.shape != target.shape:
                raise GraphError(
                    f"{node.label()}: target shape {target.shape} != logits {logits.shape}")
            shifted = logits - logits.max(axis=-1, keepdims=True)
            logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
            out = -((shifted - logz) * target).sum(axis=-1)
        elif op == "squared_distance":
            a, b = src
            if a.shape != b.shape:
                raise GraphError(f"{node.label()}: shapes {a.shape} != {b.shape}")
            out = ((a - b) ** 2).sum(axis=-1)
        elif op == "mean":
            out = np.asarray(src[0].mean())
        elif op == "sum":
            out = np.asarray(src[0].sum())
        elif op == "scale":
            out = src[0] * node.attrs["c"]
        else:
            raise GraphError(f"{node.label()}: unknown op")
        values[node.idx] = out
    graph._values = values
    result = {name: values[idx] for name, idx in graph.outputs.items()}
    for name, val in result.items():
        if not np.all(np.isfinite(val)):
            raise GraphError(f"output {name!r} contains non-finite values")
    return result


def _bias_reduce(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to a broadcast operand's shape."""
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(grad.sum())
    extra = grad.ndim - len(shape)
    return grad.sum(axis=tuple(range(extra)))


def backward(graph: Graph, loss: int | str) -> dict[str, np.ndarray]:
    """Accumulate d(loss)/d(parameter) for every parameter reachable from
    the scalar loss node. Requires a prior :func:`forward` on this graph."""
    if isinstance(loss, str):
        loss = graph.outputs[loss]
    if graph._values is None:
        raise GraphError("backward called before forward")
    values = graph._values
    if np.ndim(values[loss]) != 0:
        raise GraphError(
            f"{graph.nodes[loss].label()}: loss must be scalar, got shape "
            f"{np.shape(values[loss])}")

    adjoint: dict[int, np.ndarray] = {loss: np.asarray(1.0)}
    for node in reversed(graph.nodes[: loss + 1]):
        g = adjoint.get(node.idx)
        if g is None:
            continue
        op = node.op
        src = [values[i] for i in node.inputs]

        def send(i: int, contrib: np.ndarray) -> None:
            tgt = node.inputs[i]
            if tgt in adjoint:
                adjoint[tgt] = adjoint[tgt] + contrib
            else:
                adjoint[tgt] = contrib

        if op in ("placeholder", "constant"):
            continue
        elif op == "parameter":
            graph.params.grads[node.name] += g
        elif op == "matmul":
            a, b = src
            send(0, g @ b.T)
            send(1, a.T @ g)
        elif op == "add":
            send(0, g)
            send(1, _bias_reduce(g, src[1].shape))
        elif op == "sub":
            send(0, g)
            send(1, -_bias_reduce(g, src[1].shape))
        elif op == "mul":
            a, b = src
            send(0, g * b)
            send(1, _bias_reduce(g * a, b.shape))
        elif op == "concat":
            offset = 0
            for i, v in enumerate(src):
                width = v.shape[-1]
                send(i, g[..., offset : offset + width])
                offset += width
        elif op == "relu":
            send(0, g * (src[0] > 0))
        elif op == "sigmoid":
            y = values[node.idx]
            send(0, g * y * (1.0 - y))
        elif op == "tanh":
            y = values[node.idx]
            send(0, g * (1.0 - y * y))
        elif op == "softplus":
            x = src[0]
            sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                           np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
            send(0, g * sig)
        elif op == "log":
            send(0, g / src[0])
        elif op in ("softmax", "gumbel_softmax"):
            y = values[node.idx]
            inner = g * y
            contrib = inner - y * inner.sum(axis=-1, keepdims=True)
            if op == "gumbel_softmax":
                send(0, contrib / node.attrs["tau"])
            else:
                send(0, contrib)
        elif op == "cross_entropy":
            logits, target = src
            p = _softmax_last(logits)
            tsum = target.sum(axis=-1, keepdims=True)
            send(0, g[..., None] * (p * tsum - target))
            shifted = logits - logits.max(axis=-1, keepdims=True)
            logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
            send(1, g[..., None] * -(shifted - logz))
        elif op == "squared_distance":
            a, b = src
            diff = 2.0 * (a - b) * g[..., None]
            send(0, diff)
            send(1, -diff)
        elif op == "mean":
            send(0, np.full(src[0].shape, float(g) / src[0].size))
        elif op == "sum":
            send(0, np.full(src[0].shape, float(g)))
        elif op == "scale":
            send(0, g * node.attrs["c"])
        else:
            raise GraphError(f"{node.label()}: no gradient rule")
    return graph.params.grads


@dataclass
class OptimizerState:
    """Adaptive-moment (Adam) state over a subset of a ParamStore.

    betas default to (0.5, 0.999): the low first moment keeps adversarial
    training from oscillating. Learning rate default 2e-4.
    """

    params: ParamStore
    names: list[str]
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in self.names:
            if name not in self.params.values:
                raise GraphError(f"optimizer references unknown parameter {name!r}")
            self.m[name] = np.zeros_like(self.params.values[name])
            self.v[name] = np.zeros_like(self.params.values[name])


def optimizer_step(state: OptimizerState, graph: Graph) -> None:
    """Apply one adaptive-moment update from accumulated gradients, then
    clear the gradients of the optimized parameters."""
    if graph.params is not state.params:
        raise GraphError("optimizer and graph use different parameter stores")
    state.step_count += 1
    t = state.step_count
    store = state.params
    for name in state.names:
        g = store.grads[name]
        if np.any(np.isnan(g)):
            raise GraphError(f"NaN gradient for parameter {name!r}")
        state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * g * g
        mhat = state.m[name] / (1 - state.beta1**t)
        vhat = state.v[name] / (1 - state.beta2**t)
        store.values[name] = store.values[name] - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    store.zero_grad(state.names)


def glorot_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """Uniform Glorot initialization, the usual choice for tanh/relu stacks."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def snapshot(params: ParamStore) -> dict[str, np.ndarray]:
    """Immutable copy of parameter values, safe to share across threads."""
    return {name: value.copy() for name, value in params.values.items()}


def load_snapshot(params: ParamStore, values: dict[str, np.ndarray]) -> None:
    for name, value in values.items():
        arr = np.asarray(value, dtype=np.float64)
        if name in params.values:
            if params.values[name].shape != arr.shape:
                raise GraphError(
                    f"snapshot shape {arr.shape} != parameter {name!r} "
                    f"shape {params.values[name].shape}")
            params.values[name] = arr
            params.grads[name] = np.zeros_like(arr)
        else:
            params.register(name, arr)
