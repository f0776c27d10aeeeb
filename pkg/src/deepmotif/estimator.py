"""scikit-learn compatible wrapper around preset models and the Adam trainer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .data import LabeledDataset, Record, encode_batch, validate_sequence
from .models import NEGATIVE, POSITIVE, build_model, get_preset
from .training import TrainConfig, train


def check_sequences(X, min_length: int = 1) -> list[str]:
    """Coerce ``X`` to a list of validated, uppercase DNA strings.

    Accepts an iterable of strings or an ``(N, T, 4)`` one-hot array.
    """
    if isinstance(X, str):
        raise ValueError("expected a collection of sequences, got a single string")
    if isinstance(X, np.ndarray) and X.ndim == 3:
        from .data import one_hot_decode
        seqs = [one_hot_decode(m) for m in X]
    else:
        seqs = [validate_sequence(str(s)) for s in X]
    if not seqs:
        raise ValueError("no sequences given")
    for i, s in enumerate(seqs):
        if len(s) < min_length:
            raise ValueError(f"sequence {i} has length {len(s)}, model needs {min_length}")
    return seqs


def _check_labels(y, n):
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != n:
        raise ValueError(f"y must be 1-D with {n} entries")
    labels = set(np.unique(y).tolist())
    if not labels <= {-1, 1}:
        raise ValueError(f"labels must be -1 or +1, got {sorted(labels)}")
    if len(labels) < 2:
        raise ValueError("training data needs both classes")
    return y.astype(np.int64)


class DeepMotifClassifier(ClassifierMixin, BaseEstimator):
    """Binary TFBS classifier over DNA strings; ``classes_`` is ``[-1, 1]``."""

    def __init__(self, preset="Medium CNN", learning_rate=1e-3, batch_size=256, max_epochs=30,
                 patience=3, val_fraction=0.1, random_state=0):
        self.preset = preset
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.val_fraction = val_fraction
        self.random_state = random_state

    def fit(self, X, y):
        config = get_preset(self.preset)
        seqs = check_sequences(X, config.min_length)
        y = _check_labels(y, len(seqs))
        ds = LabeledDataset([Record(f"seq{i}", s, int(l)) for i, (s, l) in enumerate(zip(seqs, y))])
        cfg = TrainConfig(batch_size=self.batch_size, learning_rate=self.learning_rate,
                          max_epochs=self.max_epochs, patience=self.patience,
                          val_fraction=self.val_fraction, seed=self.random_state)
        self.model_ = build_model(config, self.random_state)
        result = train(self.model_, ds, cfg)
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.classes_ = np.array([-1, 1])
        return self

    def _logits(self, X):
        check_is_fitted(self, "model_")
        seqs = check_sequences(X, self.model_.min_length)
        out = np.empty((len(seqs), 2))
        by_len: dict[int, list[int]] = {}
        for i, s in enumerate(seqs):
            by_len.setdefault(len(s), []).append(i)
        for idx in by_len.values():
            for start in range(0, len(idx), self.batch_size):
                chunk = idx[start:start + self.batch_size]
                _, z = self.model_.forward_batch(encode_batch([seqs[i] for i in chunk]))
                out[chunk] = z
        return out

    def decision_function(self, X):
        """Positive minus negative logit; the log-odds of class ``+1``."""
        z = self._logits(X)
        return z[:, POSITIVE] - z[:, NEGATIVE]

    def predict_proba(self, X):
        z = self._logits(X)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)
        return np.column_stack([p[:, NEGATIVE], p[:, POSITIVE]])

    def predict(self, X):
        return np.where(self.decision_function(X) > 0, 1, -1)
