"""Reverse-mode automatic differentiation over dense real matrices.

A :class:`Graph` is built once (per sequence length) by calling its op
methods, which append :class:`Node` objects in creation order. Creation order
is a topological order, so :func:`forward` simply walks the node list and
:func:`backward` walks it in reverse.

Every value is a float64 array whose trailing two axes are the ``rows x cols``
of the matrix the node represents. Inputs may carry extra leading axes
(a minibatch); parameters broadcast over them and their adjoints are summed
back to the parameter shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np
from scipy.special import expit

__all__ = [
    "ShapeError",
    "UnboundInputError",
    "Node",
    "Graph",
    "forward",
    "backward",
    "finite_diff_check",
    "FiniteDiffReport",
]

OP_KINDS = (
    "input", "parameter", "matmul", "add", "mul", "sigmoid", "tanh", "relu",
    "softmax", "conv1d", "maxpool1d", "global_maxpool", "mean_over_time",
    "concat", "slice", "scale", "sum_squares", "sum", "dropout", "nll",
)

_P_FLOOR = 1e-12


class ShapeError(ValueError):
    pass


class UnboundInputError(KeyError):
    pass


class Node:
    __slots__ = ("id", "op", "parents", "name", "attrs", "value", "adjoint", "cache")

    def __init__(self, id, op, parents=(), name=None, attrs=None):
        self.id = id
        self.op = op
        self.parents = tuple(parents)
        self.name = name
        self.attrs = attrs or {}
        self.value = None
        self.adjoint = None
        self.cache = None

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Node {self.id} {self.op}{label}>"


class Graph:
    """An append-only computation graph."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.inputs: dict[str, Node] = {}
        self.parameters: dict[str, Node] = {}

    def __len__(self):
        return len(self.nodes)

    def _add(self, op, parents=(), name=None, **attrs):
        for p in parents:
            if not isinstance(p, Node) or p.id >= len(self.nodes) or self.nodes[p.id] is not p:
                raise ValueError(f"{op}: parent {p!r} does not belong to this graph")
        node = Node(len(self.nodes), op, parents, name, attrs)
        self.nodes.append(node)
        return node

    # leaves

    def input(self, name: str) -> Node:
        if name in self.inputs or name in self.parameters:
            raise ValueError(f"duplicate leaf name {name!r}")
        node = self._add("input", name=name)
        self.inputs[name] = node
        return node

    def constant(self, name: str, value) -> Node:
        """An input that falls back to ``value`` when left unbound."""
        node = self.input(name)
        node.attrs["default"] = np.asarray(value, dtype=np.float64)
        return node

    def parameter(self, name: str) -> Node:
        if name in self.parameters:
            return self.parameters[name]
        if name in self.inputs:
            raise ValueError(f"duplicate leaf name {name!r}")
        node = self._add("parameter", name=name)
        self.parameters[name] = node
        return node

    # ops

    def matmul(self, a, b, trans_b=False, name=None):
        return self._add("matmul", (a, b), name, trans_b=trans_b)

    def add(self, a, b, name=None):
        return self._add("add", (a, b), name)

    def mul(self, a, b, name=None):
        return self._add("mul", (a, b), name)

    def sigmoid(self, a, name=None):
        return self._add("sigmoid", (a,), name)

    def tanh(self, a, name=None):
        return self._add("tanh", (a,), name)

    def relu(self, a, name=None):
        return self._add("relu", (a,), name)

    def softmax(self, a, name=None):
        return self._add("softmax", (a,), name)

    def conv1d(self, x, weight, bias, width, name=None):
        """Linear temporal convolution, right zero-padded to keep length T.

        ``weight`` is ``n_out x (n_in * width)`` with column ``j * width + z``
        holding the tap for input channel ``j`` at offset ``z``.
        """
        if width < 1:
            raise ValueError("filter width must be >= 1")
        return self._add("conv1d", (x, weight, bias), name, width=int(width))

    def maxpool1d(self, x, size, name=None):
        if size < 1:
            raise ValueError("pool size must be >= 1")
        return self._add("maxpool1d", (x,), name, size=int(size))

    def global_maxpool(self, x, name=None):
        return self._add("global_maxpool", (x,), name)

    def mean_over_time(self, x, name=None):
        return self._add("mean_over_time", (x,), name)

    def concat(self, parts, axis=-1, name=None):
        if axis not in (-1, -2):
            raise ValueError("concat axis must be -1 (columns) or -2 (rows)")
        return self._add("concat", tuple(parts), name, axis=axis)

    def slice(self, x, start, stop, axis=-2, name=None):
        if axis not in (-1, -2):
            raise ValueError("slice axis must be -1 (columns) or -2 (rows)")
        return self._add("slice", (x,), name, start=int(start), stop=int(stop), axis=axis)

    def scale(self, x, factor, name=None):
        return self._add("scale", (x,), name, factor=float(factor))

    def sum_squares(self, x, name=None):
        return self._add("sum_squares", (x,), name)

    def sum(self, x, name=None):
        return self._add("sum", (x,), name)

    def dropout(self, x, keep, name=None):
        if not 0.0 < keep <= 1.0:
            raise ValueError(f"keep probability must lie in (0, 1], got {keep}")
        return self._add("dropout", (x,), name, keep=float(keep))

    def nll(self, probs, targets, name=None):
        """Mean negative log-likelihood of one-hot ``targets`` under ``probs``."""
        return self._add("nll", (probs, targets), name)


# ---------------------------------------------------------------------------
# forward rules


def _err(node, msg):
    label = f" ({node.name})" if node.name else ""
    return ShapeError(f"node {node.id} [{node.op}]{label}: {msg}")


def _mm(a, b):
    """``a @ b`` with a 2-D ``b``; batch axes of ``a`` fold into one GEMM."""
    if a.ndim > 2 and b.ndim == 2:
        return (a.reshape(-1, a.shape[-1]) @ b).reshape(*a.shape[:-1], b.shape[-1])
    return a @ b


def _fw_matmul(node, a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise _err(node, "operands must be at least 2-D")
    inner_b = b.shape[-1] if node.attrs["trans_b"] else b.shape[-2]
    if a.shape[-1] != inner_b:
        raise _err(node, f"cannot multiply {a.shape} by {b.shape}"
                         f"{' (transposed)' if node.attrs['trans_b'] else ''}")
    if node.attrs["trans_b"]:
        b = np.swapaxes(b, -1, -2)
    return _mm(a, b)


def _broadcast_check(node, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise _err(node, f"incompatible shapes {a.shape} and {b.shape}") from None


def _fw_add(node, a, b):
    _broadcast_check(node, a, b)
    return a + b


def _fw_mul(node, a, b):
    _broadcast_check(node, a, b)
    return a * b


def _sigmoid(x):
    return expit(x)


def _softmax(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _im2col(x, width):
    """(..., T, n_in) -> (..., T, n_in * width), right zero padded."""
    pad = [(0, 0)] * (x.ndim - 2) + [(0, width - 1), (0, 0)]
    xp = np.pad(x, pad)
    win = np.lib.stride_tricks.sliding_window_view(xp, width, axis=-2)
    # win: (..., T, n_in, width)
    return win.reshape(*win.shape[:-2], -1)


def _fw_conv1d(node, x, w, b):
    k = node.attrs["width"]
    if x.ndim < 2:
        raise _err(node, "input must be at least 2-D")
    n_in = x.shape[-1]
    if w.ndim != 2 or w.shape[1] != n_in * k:
        raise _err(node, f"weight shape {w.shape} does not fit {n_in} input channels "
                         f"and width {k} (expected n_out x {n_in * k})")
    if b.shape != (1, w.shape[0]):
        raise _err(node, f"bias shape {b.shape}, expected (1, {w.shape[0]})")
    cols = _im2col(x, k)
    node.cache = cols
    return cols @ w.T + b


def _pool_windows(t, m):
    return [(s, min(s + m, t)) for s in range(0, t, m)]


def _fw_maxpool1d(node, x):
    m = node.attrs["size"]
    t = x.shape[-2]
    if t < 1:
        raise _err(node, "empty time axis")
    n_out = -(-t // m)
    pad = n_out * m - t
    if pad:
        fill = [(0, 0)] * (x.ndim - 2) + [(0, pad), (0, 0)]
        x = np.pad(x, fill, constant_values=-np.inf)
    blocks = x.reshape(*x.shape[:-2], n_out, m, x.shape[-1])
    arg = blocks.argmax(axis=-2)  # first maximum on ties
    node.cache = arg
    return np.take_along_axis(blocks, arg[..., None, :], axis=-2)[..., 0, :]


def _fw_global_maxpool(node, x):
    if x.shape[-2] < 1:
        raise _err(node, "empty time axis")
    arg = x.argmax(axis=-2)
    node.cache = arg
    return np.take_along_axis(x, arg[..., None, :], axis=-2)


def _fw_concat(node, *parts):
    axis = node.attrs["axis"]
    other = -1 if axis == -2 else -2
    lead = parts[0].shape[:-2]
    for p in parts:
        if p.shape[other] != parts[0].shape[other]:
            raise _err(node, f"concat along {axis}: mismatched shapes "
                             f"{[q.shape for q in parts]}")
        if p.shape[:-2] != lead:
            lead = np.broadcast_shapes(lead, p.shape[:-2])
    if any(p.shape[:-2] != lead for p in parts):
        parts = [np.broadcast_to(p, lead + p.shape[-2:]) for p in parts]
    return np.concatenate(parts, axis=axis)


def _fw_slice(node, x):
    a = node.attrs
    size = x.shape[a["axis"]]
    if not 0 <= a["start"] < a["stop"] <= size:
        raise _err(node, f"slice [{a['start']}:{a['stop']}] out of range for axis size {size}")
    if a["axis"] == -2:
        return x[..., a["start"]:a["stop"], :]
    return x[..., a["start"]:a["stop"]]


def _fw_dropout(node, x, training, rng):
    keep = node.attrs["keep"]
    if not training or keep == 1.0:
        node.cache = None
        return x
    if rng is None:
        raise ValueError(f"node {node.id} [dropout]: training mode needs an rng")
    mask = (rng.random(x.shape) < keep) / keep
    node.cache = mask
    return x * mask


def _fw_nll(node, p, y):
    if p.shape != y.shape:
        raise _err(node, f"probabilities {p.shape} vs targets {y.shape}")
    p_true = (p * y).sum(axis=-1)
    rows = p_true.size
    node.cache = (p_true, rows)
    return np.array([[-np.log(np.maximum(p_true, _P_FLOOR)).sum() / rows]])


_FORWARD: dict[str, Callable] = {
    "matmul": _fw_matmul,
    "add": _fw_add,
    "mul": _fw_mul,
    "sigmoid": lambda n, a: _sigmoid(a),
    "tanh": lambda n, a: np.tanh(a),
    "relu": lambda n, a: np.maximum(a, 0.0),
    "softmax": lambda n, a: _softmax(a),
    "conv1d": _fw_conv1d,
    "maxpool1d": _fw_maxpool1d,
    "global_maxpool": _fw_global_maxpool,
    "mean_over_time": lambda n, a: a.mean(axis=-2, keepdims=True),
    "concat": _fw_concat,
    "slice": _fw_slice,
    "scale": lambda n, a: a * n.attrs["factor"],
    "sum_squares": lambda n, a: np.array([[np.sum(a * a)]]),
    "sum": lambda n, a: np.array([[np.sum(a)]]),
    "nll": _fw_nll,
}


def _resolve(mapping, node):
    if mapping is not None:
        if node in mapping:
            return mapping[node]
        if node.name in mapping:
            return mapping[node.name]
    if "default" in node.attrs:
        return node.attrs["default"]
    raise UnboundInputError(f"{node.op} {node.name!r} is unbound")


def forward(graph: Graph, bindings: Mapping, params: Mapping | None = None, *,
            training: bool = False, rng: np.random.Generator | None = None) -> dict:
    """Evaluate every node in creation order.

    ``bindings`` maps input names (or nodes) to arrays, ``params`` does the
    same for parameters. Dropout is active only when ``training`` is set.
    Returns a dict from node to value; values are also left on the nodes.
    """
    for node in graph.nodes:
        if node.op == "input":
            node.value = np.asarray(_resolve(bindings, node), dtype=np.float64)
        elif node.op == "parameter":
            node.value = np.asarray(_resolve(params, node), dtype=np.float64)
        elif node.op == "dropout":
            node.value = _fw_dropout(node, node.parents[0].value, training, rng)
        else:
            node.value = _FORWARD[node.op](node, *(p.value for p in node.parents))
        node.adjoint = None
    return {node: node.value for node in graph.nodes}


# ---------------------------------------------------------------------------
# backward rules


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class _Adjoints:
    """Adjoint buffers keyed by node id; tracks which buffers we own."""

    def __init__(self):
        self.buf: dict[int, np.ndarray] = {}
        self.owned: set[int] = set()

    def add(self, node, g):
        g = _unbroadcast(g, node.value.shape)
        cur = self.buf.get(node.id)
        if cur is None:
            self.buf[node.id] = g
        else:
            self.buf[node.id] = cur + g
            self.owned.add(node.id)

    def writable(self, node):
        cur = self.buf.get(node.id)
        if cur is None:
            cur = np.zeros(node.value.shape)
            self.buf[node.id] = cur
            self.owned.add(node.id)
        elif node.id not in self.owned or not cur.flags.writeable:
            cur = np.array(cur)
            self.buf[node.id] = cur
            self.owned.add(node.id)
        return cur


def _bw_matmul(node, g, adj):
    a, b = node.parents
    av, bv = a.value, b.value
    trans = node.attrs["trans_b"]
    if bv.ndim == 2 and av.ndim > 2:
        # fold batch axes so the weight gradient is one GEMM, not a batch of outer products
        a2 = av.reshape(-1, av.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        adj.add(a, _mm(g, bv if trans else bv.T))
        adj.add(b, g2.T @ a2 if trans else a2.T @ g2)
        return
    if trans:
        # out = a @ b.T
        adj.add(a, g @ bv)
        adj.add(b, np.swapaxes(g, -1, -2) @ av)
    else:
        adj.add(a, g @ np.swapaxes(bv, -1, -2))
        adj.add(b, np.swapaxes(av, -1, -2) @ g)


def _bw_add(node, g, adj):
    a, b = node.parents
    adj.add(a, g)
    adj.add(b, g)


def _bw_mul(node, g, adj):
    a, b = node.parents
    adj.add(a, g * b.value)
    adj.add(b, g * a.value)


def _bw_sigmoid(node, g, adj):
    s = node.value
    adj.add(node.parents[0], g * s * (1.0 - s))


def _bw_tanh(node, g, adj):
    adj.add(node.parents[0], g * (1.0 - node.value * node.value))


def _bw_relu(node, g, adj):
    adj.add(node.parents[0], g * (node.parents[0].value > 0))


def _bw_softmax(node, g, adj):
    s = node.value
    adj.add(node.parents[0], s * (g - (g * s).sum(axis=-1, keepdims=True)))


def _bw_conv1d(node, g, adj):
    x, w, b = node.parents
    k = node.attrs["width"]
    cols = node.cache
    t, n_in = x.value.shape[-2], x.value.shape[-1]
    gw = np.swapaxes(g, -1, -2) @ cols
    adj.add(w, gw)
    adj.add(b, g)
    dcols = (g @ w.value).reshape(*g.shape[:-1], n_in, k)
    dx = np.zeros(g.shape[:-2] + (t + k - 1, n_in))
    for z in range(k):
        dx[..., z:z + t, :] += dcols[..., z]
    adj.add(x, dx[..., :t, :])


def _bw_maxpool1d(node, g, adj):
    x = node.parents[0]
    m = node.attrs["size"]
    arg = node.cache
    t = x.value.shape[-2]
    n_out = g.shape[-2]
    blocks = np.zeros(g.shape[:-2] + (n_out, m, g.shape[-1]))
    np.put_along_axis(blocks, arg[..., None, :], g[..., None, :], axis=-2)
    dx = blocks.reshape(*g.shape[:-2], n_out * m, g.shape[-1])[..., :t, :]
    adj.add(x, dx)


def _bw_global_maxpool(node, g, adj):
    x = node.parents[0]
    dx = np.zeros(np.broadcast_shapes(x.value.shape, g.shape[:-2] + x.value.shape[-2:]))
    np.put_along_axis(dx, node.cache[..., None, :], g, axis=-2)
    adj.add(x, dx)


def _bw_mean_over_time(node, g, adj):
    x = node.parents[0]
    t = x.value.shape[-2]
    adj.add(x, np.broadcast_to(g / t, g.shape[:-2] + x.value.shape[-2:]))


def _bw_concat(node, g, adj):
    axis = node.attrs["axis"]
    start = 0
    for p in node.parents:
        size = p.value.shape[axis]
        part = g[..., start:start + size, :] if axis == -2 else g[..., start:start + size]
        adj.add(p, part)
        start += size


def _bw_slice(node, g, adj):
    x = node.parents[0]
    a = node.attrs
    buf = adj.writable(x)
    if a["axis"] == -2:
        buf[..., a["start"]:a["stop"], :] += g
    else:
        buf[..., a["start"]:a["stop"]] += g


def _bw_dropout(node, g, adj):
    mask = node.cache
    adj.add(node.parents[0], g if mask is None else g * mask)


def _bw_nll(node, g, adj):
    p, y = node.parents
    p_true, rows = node.cache
    live = (p_true >= _P_FLOOR).astype(np.float64)
    coef = -(g[0, 0] / rows) * live / np.maximum(p_true, _P_FLOOR)
    adj.add(p, y.value * coef[..., None])
    adj.add(y, p.value * coef[..., None])


_BACKWARD: dict[str, Callable] = {
    "matmul": _bw_matmul,
    "add": _bw_add,
    "mul": _bw_mul,
    "sigmoid": _bw_sigmoid,
    "tanh": _bw_tanh,
    "relu": _bw_relu,
    "softmax": _bw_softmax,
    "conv1d": _bw_conv1d,
    "maxpool1d": _bw_maxpool1d,
    "global_maxpool": _bw_global_maxpool,
    "mean_over_time": _bw_mean_over_time,
    "concat": _bw_concat,
    "slice": _bw_slice,
    "scale": lambda n, g, adj: adj.add(n.parents[0], g * n.attrs["factor"]),
    "sum_squares": lambda n, g, adj: adj.add(n.parents[0], 2.0 * g[0, 0] * n.parents[0].value),
    "sum": lambda n, g, adj: adj.add(n.parents[0], np.full(n.parents[0].value.shape, g[0, 0])),
    "dropout": _bw_dropout,
    "nll": _bw_nll,
}


def backward(graph: Graph, loss: Node) -> dict[str, np.ndarray]:
    """Propagate d(loss)/d(node) to every node that ``loss`` depends on.

    Returns the adjoints of all parameters and inputs keyed by name; leaves
    the loss does not depend on get zeros. Every node's ``adjoint`` is set.
    """
    if loss.value is None:
        raise RuntimeError("run forward() before backward()")
    if loss.value.shape != (1, 1):
        raise ShapeError(f"loss node {loss.id} must be 1x1, got {loss.value.shape}")
    adj = _Adjoints()
    adj.buf[loss.id] = np.ones((1, 1))
    for node in reversed(graph.nodes[:loss.id + 1]):
        g = adj.buf.get(node.id)
        if g is None:
            continue
        node.adjoint = g
        rule = _BACKWARD.get(node.op)
        if rule is not None:
            rule(node, g, adj)
    out = {}
    for node in graph.nodes:
        if node.adjoint is None and node.value is not None:
            node.adjoint = np.zeros(node.value.shape)
        if node.op in ("parameter", "input"):
            out[node.name] = node.adjoint
    return out


# ---------------------------------------------------------------------------
# finite differences


@dataclass
class FiniteDiffReport:
    step: float
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def _relative_error(a, n, floor):
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def finite_diff_check(graph: Graph, loss: Node, bindings: Mapping, params: Mapping,
                      step: float = 1e-5, tolerance: float = 1e-4, *,
                      wrt: Iterable[str] | None = None,
                      gradients: Mapping[str, np.ndarray] | None = None,
                      floor: float = 1e-6) -> FiniteDiffReport:
    """Compare backward adjoints against central differences.

    ``wrt`` names the leaves to perturb (default: every parameter).
    ``gradients`` overrides the analytic adjoints being checked.
    Relative error is ``|a - n| / max(|a|, |n|, floor)``, maximised per leaf.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    bindings = {(k.name if isinstance(k, Node) else k): np.array(v, dtype=np.float64)
                for k, v in bindings.items()}
    if gradients is None:
        forward(graph, bindings, params)
        gradients = backward(graph, loss)
    names = list(graph.parameters) if wrt is None else list(wrt)

    def objective():
        forward(graph, bindings, params)
        return float(loss.value[0, 0])

    report = FiniteDiffReport(step, tolerance)
    for name in names:
        store = params if name in params else bindings
        arr = store[name]
        numeric = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            up = objective()
            arr[idx] = orig - step
            down = objective()
            arr[idx] = orig
            numeric[idx] = (up - down) / (2.0 * step)
        analytic = np.asarray(gradients[name], dtype=np.float64)
        report.errors[name] = _relative_error(analytic, numeric, floor)
    forward(graph, bindings, params)
    return report
