"""The three classifier architectures, their presets and checkpoints."""

from __future__ import annotations

import json
import threading
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import nn
from .autodiff import Graph, Node, forward

ARCHITECTURES = ("CNN", "RNN", "CNN-RNN")
CHECKPOINT_MAGIC = "DEEPMOTIF-CHECKPOINT"
CHECKPOINT_VERSION = 1
N_CHANNELS = 4
# logits/probabilities are ordered (positive, negative)
POSITIVE, NEGATIVE = 0, 1


class ConfigError(ValueError):
    pass


class SequenceTooShortError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    architecture: str
    conv_layers: int = 0
    conv_sizes: tuple[int, ...] = ()
    conv_filter_sizes: tuple[int, ...] = ()
    pool_size: int = 1
    lstm_layers: int = 0
    lstm_size: int = 0
    dropout_keep: float = 0.5
    preset_name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "conv_sizes", tuple(int(v) for v in self.conv_sizes))
        object.__setattr__(self, "conv_filter_sizes", tuple(int(v) for v in self.conv_filter_sizes))
        self.validate()

    def validate(self):
        a = self.architecture
        if a not in ARCHITECTURES:
            raise ConfigError(f"architecture must be one of {ARCHITECTURES}, got {a!r}")
        if len(self.conv_sizes) != self.conv_layers or len(self.conv_filter_sizes) != self.conv_layers:
            raise ConfigError("conv_sizes and conv_filter_sizes must have conv_layers entries")
        if any(v < 1 for v in self.conv_sizes + self.conv_filter_sizes):
            raise ConfigError("conv sizes and filter sizes must be >= 1")
        if self.pool_size < 1:
            raise ConfigError("pool_size must be >= 1")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ConfigError("dropout_keep must lie in (0, 1]")
        if a == "CNN" and (self.conv_layers < 1 or self.lstm_layers):
            raise ConfigError("CNN needs >= 1 conv layer and no LSTM layers")
        if a == "RNN" and (self.conv_layers or self.lstm_layers < 1):
            raise ConfigError("RNN needs >= 1 LSTM layer and no conv layers")
        if a == "CNN-RNN" and (self.conv_layers < 1 or self.lstm_layers < 1):
            raise ConfigError("CNN-RNN needs >= 1 conv layer and >= 1 LSTM layer")
        if self.lstm_layers and self.lstm_size < 1:
            raise ConfigError("lstm_size must be >= 1")

    @property
    def min_length(self) -> int:
        return max(self.conv_filter_sizes, default=1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_sizes"] = list(self.conv_sizes)
        d["conv_filter_sizes"] = list(self.conv_filter_sizes)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        fields = {"architecture", "conv_layers", "conv_sizes", "conv_filter_sizes", "pool_size",
                  "lstm_layers", "lstm_size", "dropout_keep", "preset_name"}
        unknown = set(doc) - fields
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}")
        return cls(**doc)


def _cnn(name, sizes, widths, pool=2):
    return ModelConfig("CNN", len(sizes), sizes, widths, pool, preset_name=name)


def _rnn(name, layers, d):
    return ModelConfig("RNN", lstm_layers=layers, lstm_size=d, preset_name=name)


def _cnn_rnn(name, sizes, widths, pool, layers, d):
    return ModelConfig("CNN-RNN", len(sizes), sizes, widths, pool, layers, d, preset_name=name)


PRESETS: dict[str, ModelConfig] = {c.preset_name: c for c in (
    _rnn("Small RNN", 1, 16),
    _rnn("Medium RNN", 1, 32),
    _rnn("Large RNN", 2, 32),
    _cnn("Small CNN", (64, 64), (9, 5)),
    _cnn("Medium CNN", (64, 64, 64), (9, 5, 3)),
    _cnn("Large CNN", (64, 64, 64, 64), (9, 5, 3, 3)),
    _cnn_rnn("Small CNN-RNN", (64,), (5,), 1, 2, 32),
    _cnn_rnn("Medium CNN-RNN", (128,), (9,), 1, 1, 32),
    _cnn_rnn("Large CNN-RNN", (128, 128), (9, 5), 2, 1, 32),
)}


def get_preset(name: str) -> ModelConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; valid presets: {', '.join(PRESETS)}") from None


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, int]]:
    shapes: dict[str, tuple[int, int]] = {}
    n_in = N_CHANNELS
    for i, (n_out, k) in enumerate(zip(config.conv_sizes, config.conv_filter_sizes)):
        shapes.update(nn.ConvLayerParams(n_out, n_in, k).shapes(f"conv{i}"))
        n_in = n_out
    for layer in range(config.lstm_layers):
        spec = nn.LstmParams(n_in, config.lstm_size)
        shapes.update(spec.shapes(f"lstm{layer}.fwd"))
        shapes.update(spec.shapes(f"lstm{layer}.bwd"))
        n_in = 2 * config.lstm_size
    features = n_in
    shapes["out.W"] = (2, features)
    shapes["out.b"] = (1, 2)
    return shapes


def init_parameters(config: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    params = {}
    n_in = N_CHANNELS
    for i, (n_out, k) in enumerate(zip(config.conv_sizes, config.conv_filter_sizes)):
        params.update(nn.ConvLayerParams(n_out, n_in, k).init(f"conv{i}", rng))
        n_in = n_out
    for layer in range(config.lstm_layers):
        spec = nn.LstmParams(n_in, config.lstm_size)
        params.update(spec.init(f"lstm{layer}.fwd", rng))
        params.update(spec.init(f"lstm{layer}.bwd", rng))
        n_in = 2 * config.lstm_size
    params["out.W"] = nn.init_params((2, n_in), n_in, rng)
    params["out.b"] = nn.init_params((1, 2), n_in, rng)
    return params


@dataclass
class ScoringGraph:
    """A graph for one sequence length with its named endpoints."""

    graph: Graph
    x: Node
    y: Node
    logits: Node
    probs: Node
    loss: Node
    score: Node  # summed pre-softmax positive logit
    length: int


def _pooled_length(t, m):
    return -(-t // m)


def build_graph(config: ModelConfig, length: int) -> ScoringGraph:
    """Graph from a ``(B,) T x 4`` one-hot input to the 2-way softmax."""
    if length < config.min_length:
        raise SequenceTooShortError(
            f"sequence length {length} is shorter than the widest filter ({config.min_length})")
    g = Graph()
    x = g.input("x")
    y = g.input("y")
    h, t = x, length
    n_conv = config.conv_layers
    for i, k in enumerate(config.conv_filter_sizes):
        h = nn.conv1d(g, h, f"conv{i}", k)
        last = i == n_conv - 1
        if config.architecture == "CNN":
            h = nn.global_maxpool(g, h) if last else nn.maxpool1d(g, h, config.pool_size)
        elif not last and config.pool_size > 1:
            h = nn.maxpool1d(g, h, config.pool_size)
            t = _pooled_length(t, config.pool_size)
    if config.lstm_layers:
        zeros = g.constant("zeros", np.zeros((1, config.lstm_size)))
        for layer in range(config.lstm_layers):
            top = layer == config.lstm_layers - 1
            res = nn.bilstm(g, h, t, f"lstm{layer}.fwd", f"lstm{layer}.bwd", zeros,
                            config.lstm_size, return_sequences=not top)
            if top:
                h = g.concat(res, axis=-1)
            else:
                h = res[2]
    h = nn.dropout(g, h, nn.DropoutSpec(config.dropout_keep))
    logits = g.add(g.matmul(h, g.parameter("out.W"), trans_b=True), g.parameter("out.b"),
                   name="logits")
    probs = g.softmax(logits, name="probs")
    loss = g.nll(probs, y, name="loss")
    score = g.sum(g.slice(logits, POSITIVE, POSITIVE + 1, axis=-1), name="score")
    return ScoringGraph(g, x, y, logits, probs, loss, score, length)


GraphBuilder = Callable[[ModelConfig, int], ScoringGraph]


@dataclass
class Model:
    config: ModelConfig
    params: dict[str, np.ndarray]
    builder: GraphBuilder = build_graph
    _local: threading.local = field(default_factory=threading.local, repr=False, compare=False)

    def graph(self, length: int) -> ScoringGraph:
        """Cached per thread and length; a graph is single-writer."""
        cache = getattr(self._local, "graphs", None)
        if cache is None:
            cache = self._local.graphs = {}
        sg = cache.get(length)
        if sg is None:
            sg = cache[length] = self.builder(self.config, length)
        return sg

    @property
    def min_length(self) -> int:
        return self.config.min_length

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def checksum(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name]).tobytes())
        return h.hexdigest()

    def forward_batch(self, x: np.ndarray):
        """Probabilities and logits for a ``(B, T, 4)`` batch in inference mode."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        sg = self.graph(x.shape[1])
        forward(sg.graph, {"x": x, "y": np.zeros((x.shape[0], 1, 2))}, self.params)
        return sg.probs.value[:, 0, :].copy(), sg.logits.value[:, 0, :].copy()


def build_model(config: ModelConfig | str, rng: np.random.Generator | int | None = None) -> Model:
    if isinstance(config, str):
        config = get_preset(config)
    config.validate()
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return Model(config, init_parameters(config, rng))


def predict(model: Model, x) -> tuple[float, float]:
    """``(prob_positive, logit_positive)`` for one ``T x 4`` one-hot matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != N_CHANNELS:
        raise ValueError(f"expected a T x 4 one-hot matrix, got shape {x.shape}")
    probs, logits = model.forward_batch(x[None])
    return float(probs[0, POSITIVE]), float(logits[0, POSITIVE])


def predict_batch(model: Model, x: np.ndarray, batch_size: int = 256):
    """Positive-class probabilities and logits for ``(N, T, 4)`` inputs."""
    x = np.asarray(x, dtype=np.float64)
    probs, logits = [], []
    for s in range(0, len(x), batch_size):
        p, z = model.forward_batch(x[s:s + batch_size])
        probs.append(p[:, POSITIVE])
        logits.append(z[:, POSITIVE])
    if not probs:
        return np.zeros(0), np.zeros(0)
    return np.concatenate(probs), np.concatenate(logits)


# ---------------------------------------------------------------------------
# checkpoints
#
#   DEEPMOTIF-CHECKPOINT
#   version 1
#   preset <preset name>
#   config <one-line JSON>
#   extra <one-line JSON>            (training state such as the Adam step)
#   tensors <count>
#   tensor <name> <rows> <cols>
#   <cols big-endian float64 values as 16 hex digits, space separated>  x rows
#   end


def _hex_row(row):
    return " ".join(np.asarray(row, dtype=">f8").tobytes().hex()[i:i + 16]
                    for i in range(0, 16 * len(row), 16))


def save_checkpoint(model: Model, path, extra_tensors: dict | None = None,
                    extra: dict | None = None) -> None:
    tensors = dict(model.params)
    tensors.update(extra_tensors or {})
    lines = [CHECKPOINT_MAGIC, f"version {CHECKPOINT_VERSION}",
             f"preset {model.config.preset_name}",
             f"config {json.dumps(model.config.to_dict(), sort_keys=True)}",
             f"extra {json.dumps(extra or {}, sort_keys=True)}",
             f"tensors {len(tensors)}"]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2:
            raise CheckpointShapeError(f"tensor {name!r} is not 2-D")
        if " " in name:
            raise CheckpointFormatError(f"tensor name {name!r} contains a space")
        lines.append(f"tensor {name} {arr.shape[0]} {arr.shape[1]}")
        lines.extend(_hex_row(row) for row in arr)
    lines.append("end")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _expect(lines, i, key, path):
    if i >= len(lines) or not lines[i].startswith(key + " "):
        raise CheckpointFormatError(f"{path}: line {i + 1}: expected '{key} ...'")
    return lines[i][len(key) + 1:]


def read_checkpoint(path):
    """Parse a checkpoint into ``(config, tensors, extra)`` without building a model."""
    try:
        with open(path, encoding="ascii") as fh:
            lines = fh.read().splitlines()
    except UnicodeDecodeError:
        raise CheckpointFormatError(f"{path}: not a text checkpoint") from None
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: missing {CHECKPOINT_MAGIC} header")
    version = _expect(lines, 1, "version", path)
    if version != str(CHECKPOINT_VERSION):
        raise CheckpointVersionError(f"{path}: checkpoint version {version}, "
                                     f"this build reads version {CHECKPOINT_VERSION}")
    _expect(lines, 2, "preset", path)
    try:
        config = ModelConfig.from_dict(json.loads(_expect(lines, 3, "config", path)))
        extra = json.loads(_expect(lines, 4, "extra", path))
        count = int(_expect(lines, 5, "tensors", path))
    except (json.JSONDecodeError, ValueError, TypeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointFormatError(f"{path}: corrupt header ({exc})") from None
    tensors = {}
    i = 6
    for _ in range(count):
        head = _expect(lines, i, "tensor", path).split()
        i += 1
        if len(head) != 3:
            raise CheckpointFormatError(f"{path}: line {i}: malformed tensor header")
        name, rows, cols = head[0], int(head[1]), int(head[2])
        data = []
        for r in range(rows):
            if i >= len(lines):
                raise CheckpointFormatError(f"{path}: tensor {name!r} truncated")
            words = lines[i].split()
            i += 1
            if len(words) != cols or any(len(w) != 16 for w in words):
                raise CheckpointFormatError(f"{path}: line {i}: tensor {name!r} row {r} "
                                            f"is not {cols} 16-digit hex values")
            try:
                data.append(np.frombuffer(bytes.fromhex("".join(words)), dtype=">f8"))
            except ValueError:
                raise CheckpointFormatError(f"{path}: line {i}: invalid hex") from None
        arr = np.array(data, dtype=np.float64).reshape(rows, cols)
        tensors[name] = arr
    if i >= len(lines) or lines[i] != "end":
        raise CheckpointFormatError(f"{path}: missing end marker")
    return config, tensors, extra


def load_checkpoint(path, with_extra: bool = False):
    config, tensors, extra = read_checkpoint(path)
    expected = parameter_shapes(config)
    params = {}
    for name, shape in expected.items():
        if name not in tensors:
            raise CheckpointShapeError(f"{path}: missing parameter tensor {name!r}")
        if tensors[name].shape != shape:
            raise CheckpointShapeError(f"{path}: tensor {name!r} has shape {tensors[name].shape}, "
                                       f"expected {shape}")
        params[name] = tensors.pop(name)
    model = Model(config, params)
    if with_extra:
        return model, tensors, extra
    return model
