"""Saliency maps, temporal output scores, class optimization and the
convolution-activation baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph, backward, forward
from .models import POSITIVE, Model, SequenceTooShortError
from .motif import MOTIF_WIDTH, ExtractedMotif
from .training import NumericError
from . import nn


class UnsupportedArchitectureError(ValueError):
    pass


def _as_onehot(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 4:
        raise ValueError(f"expected a T x 4 matrix, got shape {x.shape}")
    return x


def score_gradient(model: Model, x: np.ndarray):
    """Positive-class logit at ``x`` and its gradient with respect to ``x``."""
    sg = model.graph(x.shape[0])
    forward(sg.graph, {"x": x[None], "y": np.zeros((1, 1, 2))}, model.params)
    score = float(sg.score.value[0, 0])
    grads = backward(sg.graph, sg.score)
    return score, grads["x"][0]


@dataclass
class SaliencyMap:
    magnitudes: np.ndarray  # length T, >= 0
    gradient: np.ndarray  # T x 4
    score: float
    label: int = 1

    def to_dict(self, record_id: str) -> dict:
        return {"id": record_id, "magnitudes": [float(v) for v in self.magnitudes]}


def saliency_map(model: Model, x) -> SaliencyMap:
    """``|dS+/dX * X|`` per position, S+ being the positive pre-softmax logit."""
    x = _as_onehot(x)
    score, w = score_gradient(model, x)
    mags = np.abs(w * x).sum(axis=1)
    return SaliencyMap(mags, w, score)


@dataclass
class TemporalScores:
    forward: np.ndarray  # P(+) on prefixes x[:t], t = 1..T
    backward: np.ndarray  # P(+) on suffixes x[T-t:], t = 1..T
    score_kind: str = "prob-positive"

    def to_dict(self, record_id: str) -> dict:
        return {"id": record_id, "forward": [float(v) for v in self.forward],
                "backward": [float(v) for v in self.backward]}


def _fill_leading(values, first):
    """Positions before ``first`` take the first computable value."""
    values[:first] = values[first]
    return values


def temporal_output_scores(model: Model, x) -> TemporalScores:
    """Whole-model prediction on every prefix and every suffix of ``x``."""
    if model.config.architecture == "CNN":
        raise UnsupportedArchitectureError(
            "temporal output scores are defined for RNN and CNN-RNN models only")
    x = _as_onehot(x)
    t_len = x.shape[0]
    lo = model.min_length
    if t_len < lo:
        raise SequenceTooShortError(f"sequence length {t_len} below model minimum {lo}")
    fwd = np.empty(t_len)
    bwd = np.empty(t_len)
    for t in range(lo, t_len + 1):
        pair = np.stack([x[:t], x[t_len - t:]])
        probs, _ = model.forward_batch(pair)
        fwd[t - 1] = probs[0, POSITIVE]
        bwd[t - 1] = probs[1, POSITIVE]
    return TemporalScores(_fill_leading(fwd, lo - 1), _fill_leading(bwd, lo - 1))


@dataclass
class ClassOptConfig:
    reg: float = 0.01  # weight of the squared-norm penalty
    steps: int = 500
    step_size: float = 1.0
    seed: int = 0
    init: str = "zeros"

    def __post_init__(self):
        if self.reg < 0:
            raise ValueError("regularization weight must be >= 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.init not in ("zeros", "small-uniform"):
            raise ValueError("init must be 'zeros' or 'small-uniform'")


def row_softmax(m):
    e = np.exp(m - m.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class OptimizedInput:
    matrix: np.ndarray  # T x 4, unconstrained
    score_trace: list[float]
    display: np.ndarray  # per-position softmax of ``matrix``
    final_score: float
    config: ClassOptConfig = field(default_factory=ClassOptConfig)

    def to_dict(self, preset: str) -> dict:
        return {"preset": preset, "lambda": self.config.reg, "steps": self.config.steps,
                "matrix": self.matrix.tolist(), "display_matrix": self.display.tolist(),
                "score_trace": list(self.score_trace)}


def class_optimize(model: Model, length: int, cfg: ClassOptConfig | None = None) -> OptimizedInput:
    """Gradient ascent on ``S+(X) - reg * ||X||^2`` with model weights frozen.

    Each step moves along the score gradient and then applies the penalty
    through its proximal map, ``X <- (X + s * grad) / (1 + 2 * reg * s)``,
    which has the same fixed points as plain ascent on the penalised
    objective but stays stable for any ``reg``.
    """
    cfg = cfg or ClassOptConfig()
    if length < model.min_length:
        raise SequenceTooShortError(f"length {length} below model minimum {model.min_length}")
    if cfg.init == "zeros":
        x = np.zeros((length, 4))
    else:
        x = np.random.default_rng(cfg.seed).uniform(-0.01, 0.01, size=(length, 4))
    shrink = 1.0 + 2.0 * cfg.reg * cfg.step_size
    trace = []
    for step in range(cfg.steps):
        score, grad = score_gradient(model, x)
        if not (math.isfinite(score) and np.isfinite(grad).all()):
            raise NumericError(f"non-finite class score at step {step}")
        trace.append(score)
        x = (x + cfg.step_size * grad) / shrink
    final, _ = score_gradient(model, x)
    if not math.isfinite(final):
        raise NumericError(f"non-finite class score at step {cfg.steps}")
    trace.append(final)
    return OptimizedInput(x, trace, row_softmax(x), final, cfg)


def class_opt_motif_window(opt: OptimizedInput, width: int = MOTIF_WIDTH) -> int:
    """Start of the ``width`` window of the display matrix with the most information."""
    p = opt.display
    ic = 2.0 + (p * np.log2(np.maximum(p, 1e-300))).sum(axis=1)
    if len(ic) < width:
        raise ValueError("optimized input is shorter than the motif width")
    sums = np.convolve(ic, np.ones(width), mode="valid")
    return int(np.argmax(sums))


def first_layer_activations(model: Model, x) -> np.ndarray:
    if not model.config.conv_layers:
        raise UnsupportedArchitectureError("model has no convolution layer")
    x = _as_onehot(x)
    g = Graph()
    inp = g.input("x")
    act = nn.conv1d(g, inp, "conv0", model.config.conv_filter_sizes[0])
    forward(g, {"x": x}, model.params)
    return act.value


def conv_activation_motif(model: Model, x, width: int = MOTIF_WIDTH) -> ExtractedMotif:
    """Input window under the strongest first-layer filter activation."""
    from .data import one_hot_decode

    x = _as_onehot(x)
    k = model.config.conv_filter_sizes[0] if model.config.conv_layers else 0
    if not model.config.conv_layers:
        raise UnsupportedArchitectureError("convolution-activation motifs need a conv layer")
    if k > width:
        raise ValueError(f"first-layer filter width {k} exceeds motif width {width}")
    t_len = x.shape[0]
    if t_len < width:
        raise SequenceTooShortError(f"sequence length {t_len} below motif width {width}")
    act = first_layer_activations(model, x)
    pos = int(np.argmax(act)) // act.shape[1]  # row-major: earliest position wins ties
    center = pos + (k - 1) // 2
    start = min(max(center - width // 2, 0), t_len - width)
    seq = one_hot_decode(x)
    return ExtractedMotif(start, seq[start:start + width])
