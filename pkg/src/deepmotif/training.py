"""Minibatch Adam training on negative log-likelihood, plus evaluation statistics."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import backward, forward
from .data import LabeledDataset, encode_batch, one_hot_encode
from .models import NEGATIVE, POSITIVE, Model, predict_batch

log = logging.getLogger(__name__)

P_FLOOR = 1e-12


class NumericError(ArithmeticError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 30
    patience: int = 3
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    def to_tensors(self) -> dict[str, np.ndarray]:
        out = {f"adam.m/{k}": v for k, v in self.m.items()}
        out.update({f"adam.v/{k}": v for k, v in self.v.items()})
        return out

    @classmethod
    def from_tensors(cls, tensors: dict, t: int) -> "AdamState":
        st = cls(t=t)
        for key, arr in tensors.items():
            if key.startswith("adam.m/"):
                st.m[key[7:]] = arr
            elif key.startswith("adam.v/"):
                st.v[key[7:]] = arr
        return st


def nll_loss(probabilities, labels) -> float:
    """Mean ``-log p(true class)`` with class order (positive, negative)."""
    p = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels)
    if p.ndim != 2 or p.shape[1] != 2 or len(p) != len(labels):
        raise ValueError(f"expected batch x 2 probabilities matching {len(labels)} labels")
    if np.abs(p.sum(axis=1) - 1.0).max() > 1e-6 or (p < 0).any():
        raise ValueError("probability rows must be non-negative and sum to 1")
    if not np.isin(labels, (1, -1)).all():
        raise ValueError("labels must be +1 or -1")
    p_true = np.where(labels == 1, p[:, POSITIVE], p[:, NEGATIVE])
    return float(np.mean(-np.log(np.maximum(p_true, P_FLOOR))))


def label_targets(labels) -> np.ndarray:
    """``(N, 1, 2)`` one-hot targets for +1/-1 labels."""
    labels = np.asarray(labels)
    y = np.zeros((len(labels), 1, 2))
    y[labels == 1, 0, POSITIVE] = 1.0
    y[labels == -1, 0, NEGATIVE] = 1.0
    return y


def adam_step(params: dict, grads: dict, state: AdamState, cfg: TrainConfig):
    """Bias-corrected Adam update, in place; returns ``(params, state)``."""
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        if name not in params:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return params, state


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    model: Model
    history: list[dict]
    state: AdamState
    best_epoch: int


def _batches(indices, lengths, batch_size):
    """Split permuted indices into same-length batches, keeping order."""
    groups: dict[int, list[int]] = {}
    for i in indices:
        groups.setdefault(lengths[i], []).append(i)
    out = []
    for group in groups.values():
        out.extend(group[s:s + batch_size] for s in range(0, len(group), batch_size))
    return out


def dataset_loss(model: Model, seqs, labels, batch_size: int = 512) -> float:
    probs, _ = predict_batch(model, encode_batch(seqs), batch_size)
    p = np.stack([probs, 1.0 - probs], axis=1)
    return nll_loss(p, labels)


def train(model: Model, train_set: LabeledDataset, cfg: TrainConfig | None = None, *,
          state: AdamState | None = None, start_epoch: int = 0) -> TrainResult:
    """Train in place with dropout on; early-stop on held-out loss.

    A ``val_fraction`` slice of the shuffled training set is held out. The
    parameters of the epoch with the lowest held-out loss are kept.
    """
    cfg = cfg or TrainConfig()
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    seqs = train_set.sequences
    for s in seqs:
        if len(s) < model.min_length:
            raise ValueError(f"sequence of length {len(s)} shorter than model minimum "
                             f"{model.min_length}")
    labels = train_set.labels
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(seqs))
    n_val = int(len(seqs) * cfg.val_fraction)
    val_idx, fit_idx = order[:n_val], order[n_val:]
    onehots = [None] * len(seqs)
    lengths = [len(s) for s in seqs]
    targets = label_targets(labels)
    for i in fit_idx:
        onehots[i] = one_hot_encode(seqs[i])
    val_seqs = [seqs[i] for i in val_idx]
    val_labels = labels[val_idx]

    state = state or AdamState()
    history = []
    best_loss, best_epoch, best_params, bad = math.inf, start_epoch, None, 0
    for epoch in range(start_epoch + 1, start_epoch + cfg.max_epochs + 1):
        t0 = time.perf_counter()
        perm = fit_idx[rng.permutation(len(fit_idx))]
        total, count = 0.0, 0
        for batch in _batches(perm, lengths, cfg.batch_size):
            x = np.stack([onehots[i] for i in batch])
            sg = model.graph(x.shape[1])
            forward(sg.graph, {"x": x, "y": targets[batch]}, model.params, training=True, rng=rng)
            loss = float(sg.loss.value[0, 0])
            if not math.isfinite(loss):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            grads = backward(sg.graph, sg.loss)
            adam_step(model.params, grads, state, cfg)
            total += loss * len(batch)
            count += len(batch)
        train_loss = total / count
        val_loss = dataset_loss(model, val_seqs, val_labels) if n_val else None
        rec = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
               "wall_seconds": time.perf_counter() - t0}
        history.append(rec)
        log.info("epoch %d train %.4f val %s", epoch, train_loss,
                 "-" if val_loss is None else f"{val_loss:.4f}")
        if val_loss is None:
            best_epoch = epoch
            continue
        if val_loss < best_loss:
            best_loss, best_epoch, bad = val_loss, epoch, 0
            best_params = {k: v.copy() for k, v in model.params.items()}
        else:
            bad += 1
            if bad >= cfg.patience:
                break
    if best_params is not None:
        model.params.update(best_params)
    return TrainResult(model, history, state, best_epoch)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    auc: float
    roc: list[tuple[float, float]]
    scores: np.ndarray
    labels: np.ndarray

    def to_dict(self, ids=None) -> dict:
        doc = {"auc": self.auc, "roc": [list(p) for p in self.roc],
               "n_positive": int((self.labels == 1).sum()),
               "n_negative": int((self.labels == -1).sum())}
        if ids is not None:
            doc["scores"] = {i: float(s) for i, s in zip(ids, self.scores)}
        return doc


def _split_scores(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos, neg = scores[labels == 1], scores[labels == -1]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("AUC needs at least one positive and one negative example")
    return pos, neg


def auc_score(scores, labels) -> float:
    """P(random positive outscores random negative), ties counted one half."""
    pos, neg = _split_scores(scores, labels)
    neg = np.sort(neg)
    below = np.searchsorted(neg, pos, side="left")
    at_or_below = np.searchsorted(neg, pos, side="right")
    doubled = int(np.sum(2 * below + (at_or_below - below)))
    return doubled / (2 * len(pos) * len(neg))


def roc_curve(scores, labels) -> list[tuple[float, float]]:
    """(FPR, TPR) points from (0, 0) to (1, 1), one per distinct score."""
    pos, neg = _split_scores(scores, labels)
    thresholds = np.unique(np.concatenate([pos, neg]))[::-1]
    pts = [(0.0, 0.0)]
    for th in thresholds:
        pts.append((float((neg >= th).sum() / len(neg)), float((pos >= th).sum() / len(pos))))
    return pts


def trapezoid_auc(points) -> float:
    xs, ys = zip(*points)
    return float(sum((xs[i + 1] - xs[i]) * (ys[i + 1] + ys[i]) / 2 for i in range(len(xs) - 1)))


def evaluate_auc(model: Model, test_set: LabeledDataset, batch_size: int = 512) -> EvalReport:
    labels = test_set.labels
    _split_scores(np.zeros(len(labels)), labels)
    probs, _ = predict_batch(model, encode_batch(test_set.sequences), batch_size)
    return EvalReport(auc_score(probs, labels), roc_curve(probs, labels), probs, labels)


# ---------------------------------------------------------------------------
# paired t-test


@dataclass(frozen=True)
class TTestResult:
    t: float
    p_value: float
    df: int
    degenerate: bool = False


def _betacf(a, b, x, max_iter=500, eps=1e-16):
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise NumericError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x in (0.0, 1.0):
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    """``P(|T| >= |t|)`` for Student's t with ``df`` degrees of freedom."""
    return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))


def paired_ttest(a, b) -> TTestResult:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired t-test needs two equal-length 1-D lists")
    n = len(a)
    if n < 2:
        raise ValueError("paired t-test needs at least 2 pairs")
    diff = a - b
    mean = float(diff.mean())
    sd = float(diff.std(ddof=1))
    df = n - 1
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, 1.0, df, degenerate=True)
        return TTestResult(math.copysign(math.inf, mean), np.finfo(float).tiny, df, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    return TTestResult(t, t_two_sided_p(t, df), df)
