"""Layer building blocks expressed as graph fragments.

Parameters live outside the graph in a ``name -> array`` mapping; each layer
here only declares parameter nodes under a name prefix. The ``*Params``
dataclasses describe the shapes and create initial values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, Node

GATES = ("i", "f", "o", "g")


def init_params(shape, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform on ``[-sqrt(1/fan_in), +sqrt(1/fan_in)]``."""
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass(frozen=True)
class ConvLayerParams:
    n_out: int
    n_in: int
    width: int

    def __post_init__(self):
        if self.width < 1 or self.n_in < 1 or self.n_out < 1:
            raise ValueError(f"invalid conv layer {self}")

    def shapes(self, prefix):
        return {f"{prefix}.W": (self.n_out, self.n_in * self.width),
                f"{prefix}.B": (1, self.n_out)}

    def init(self, prefix, rng):
        fan_in = self.n_in * self.width
        return {name: init_params(shape, fan_in, rng) for name, shape in self.shapes(prefix).items()}


@dataclass(frozen=True)
class PoolSpec:
    size: int

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("pool size must be >= 1")


@dataclass(frozen=True)
class LstmParams:
    """Shapes for one LSTM direction: ``W*`` are ``d x n_in``, ``U*`` ``d x d``, ``b*`` ``1 x d``."""

    n_in: int
    d: int

    def shapes(self, prefix):
        out = {}
        for gate in GATES:
            out[f"{prefix}.W{gate}"] = (self.d, self.n_in)
            out[f"{prefix}.U{gate}"] = (self.d, self.d)
            out[f"{prefix}.b{gate}"] = (1, self.d)
        return out

    def init(self, prefix, rng):
        fan_in = self.n_in + self.d
        return {name: init_params(shape, fan_in, rng) for name, shape in self.shapes(prefix).items()}


@dataclass(frozen=True)
class DropoutSpec:
    keep: float = 0.5
    enabled: bool = True

    def __post_init__(self):
        if not 0.0 < self.keep <= 1.0:
            raise ValueError(f"keep probability must lie in (0, 1], got {self.keep}")


# ---------------------------------------------------------------------------
# fragments


def conv1d(g: Graph, x: Node, prefix: str, width: int) -> Node:
    """ReLU(conv(x) + B); output keeps the input length."""
    w = g.parameter(f"{prefix}.W")
    b = g.parameter(f"{prefix}.B")
    return g.relu(g.conv1d(x, w, b, width))


def maxpool1d(g: Graph, x: Node, spec: PoolSpec | int) -> Node:
    size = spec.size if isinstance(spec, PoolSpec) else int(spec)
    return g.maxpool1d(x, size)


def global_maxpool(g: Graph, x: Node) -> Node:
    return g.global_maxpool(x)


def dropout(g: Graph, x: Node, spec: DropoutSpec) -> Node:
    """Inverted dropout; a disabled spec adds nothing to the graph."""
    if not spec.enabled or spec.keep == 1.0:
        return x
    return g.dropout(x, spec.keep)


def _stacked(g, prefix, kind, axis):
    """The four per-gate arrays of one kind stacked in i, f, o, g order."""
    return g.concat([g.parameter(f"{prefix}.{kind}{gate}") for gate in GATES], axis=axis)


def _step(g, proj, h_prev, c_prev, u_all, b_all, d):
    """One LSTM update given the stacked input projection ``proj`` (``1 x 4d``)."""
    pre = g.add(g.add(proj, g.matmul(h_prev, u_all, trans_b=True)), b_all)
    gates = g.sigmoid(g.slice(pre, 0, 3 * d, axis=-1))
    i = g.slice(gates, 0, d, axis=-1)
    f = g.slice(gates, d, 2 * d, axis=-1)
    o = g.slice(gates, 2 * d, 3 * d, axis=-1)
    cand = g.tanh(g.slice(pre, 3 * d, 4 * d, axis=-1))
    c = g.add(g.mul(f, c_prev), g.mul(i, cand))
    h = g.mul(o, g.tanh(c))
    return h, c


def lstm_step(g: Graph, x_t: Node, h_prev: Node, c_prev: Node, prefix: str, d: int):
    """Gate block for a single timestep; returns ``(h_t, c_t)`` nodes.

    The four gates share one stacked matmul each for ``W`` and ``U``;
    the arithmetic is the same as evaluating every gate separately.
    """
    proj = g.matmul(x_t, _stacked(g, prefix, "W", -2), trans_b=True)
    return _step(g, proj, h_prev, c_prev, _stacked(g, prefix, "U", -2),
                 _stacked(g, prefix, "b", -1), d)


def lstm_sequence(g: Graph, x: Node, length: int, prefix: str, zeros: Node, d: int,
                  reverse: bool = False) -> list[Node]:
    """Run one LSTM direction over ``length`` rows of ``x``.

    Returns the ``h_t`` nodes indexed by input position (so for ``reverse``
    the first element is the state after consuming the whole sequence).
    ``zeros`` is a ``1 x d`` zero constant used for ``h_0`` and ``c_0``.
    """
    proj_all = g.matmul(x, _stacked(g, prefix, "W", -2), trans_b=True)
    u_all = _stacked(g, prefix, "U", -2)
    b_all = _stacked(g, prefix, "b", -1)
    h, c = zeros, zeros
    out: list[Node | None] = [None] * length
    order = range(length - 1, -1, -1) if reverse else range(length)
    for t in order:
        h, c = _step(g, g.slice(proj_all, t, t + 1), h, c, u_all, b_all, d)
        out[t] = h
    return out


def bilstm(g: Graph, x: Node, length: int, fwd_prefix: str, bwd_prefix: str, zeros: Node,
           d: int, return_sequences: bool = False):
    """Bidirectional LSTM; returns the temporal mean of each direction.

    With ``return_sequences`` the per-position ``T x 2d`` output matrix
    (forward and backward ``h_t`` side by side) is returned as well.
    """
    if length < 1:
        raise ValueError("bilstm needs at least one timestep")
    hf = lstm_sequence(g, x, length, fwd_prefix, zeros, d)
    hb = lstm_sequence(g, x, length, bwd_prefix, zeros, d, reverse=True)
    seq_f = g.concat(hf, axis=-2) if length > 1 else hf[0]
    seq_b = g.concat(hb, axis=-2) if length > 1 else hb[0]
    mean_f = g.mean_over_time(seq_f)
    mean_b = g.mean_over_time(seq_b)
    if return_sequences:
        return mean_f, mean_b, g.concat([seq_f, seq_b], axis=-1)
    return mean_f, mean_b
