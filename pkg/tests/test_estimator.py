import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from deepmotif.data import SyntheticSpec, encode_batch, generate_synthetic
from deepmotif.estimator import DeepMotifClassifier, check_sequences


@pytest.fixture(scope="module")
def small_data():
    train, test = generate_synthetic(SyntheticSpec(sequence_length=40, train_count=200,
                                                   test_count=40, seed=2))
    return train, test


def test_params_round_trip_through_clone():
    est = DeepMotifClassifier(preset="Small CNN", max_epochs=4, random_state=3)
    params = est.get_params()
    assert params["preset"] == "Small CNN" and params["random_state"] == 3
    twin = clone(est)
    assert twin.get_params() == params and twin is not est


def test_unfitted_estimator_refuses_to_predict():
    with pytest.raises(NotFittedError):
        DeepMotifClassifier().predict(["ACGTACGTACGT"])


def test_fit_predict_on_strings(small_data):
    train, test = small_data
    est = DeepMotifClassifier(preset="Small CNN", max_epochs=2, batch_size=32, random_state=0)
    assert est.fit(train.sequences, train.labels) is est
    assert list(est.classes_) == [-1, 1]
    proba = est.predict_proba(test.sequences)
    assert proba.shape == (40, 2) and np.allclose(proba.sum(axis=1), 1)
    pred = est.predict(test.sequences)
    assert set(pred) <= {-1, 1}
    dec = est.decision_function(test.sequences)
    assert np.array_equal(pred, np.where(dec > 0, 1, -1))
    assert 0.0 <= est.score(test.sequences, test.labels) <= 1.0
    assert len(est.history_) >= 1


def test_one_hot_input_gives_same_predictions(small_data):
    train, test = small_data
    est = DeepMotifClassifier(preset="Small CNN", max_epochs=1, random_state=0)
    est.fit(train.sequences, train.labels)
    assert np.allclose(est.predict_proba(encode_batch(test.sequences)),
                       est.predict_proba(test.sequences))


def test_fit_is_reproducible(small_data):
    train, test = small_data
    kw = dict(preset="Small CNN", max_epochs=2, batch_size=32, random_state=5)
    a = DeepMotifClassifier(**kw).fit(train.sequences, train.labels)
    b = DeepMotifClassifier(**kw).fit(train.sequences, train.labels)
    assert np.array_equal(a.decision_function(test.sequences), b.decision_function(test.sequences))


def test_mixed_lengths_are_scored():
    train, _ = generate_synthetic(SyntheticSpec(sequence_length=30, train_count=40,
                                                test_count=0, seed=1))
    est = DeepMotifClassifier(preset="Small RNN", max_epochs=1).fit(train.sequences, train.labels)
    assert est.predict(["ACGT" * 3, "ACGTACGTACGTACGTACGTAC"]).shape == (2,)


@pytest.mark.parametrize("labels", [[1, 1, 1, 1], [0, 1, 0, 1], [[1], [-1], [1], [-1]]])
def test_bad_labels_rejected(labels):
    with pytest.raises(ValueError):
        DeepMotifClassifier(preset="Small CNN", max_epochs=1).fit(["ACGTACGTAC"] * 4, labels)


def test_check_sequences():
    assert check_sequences(["ACG", "TTTT"]) == ["ACG", "TTTT"]
    assert check_sequences(np.eye(4)[None].repeat(2, axis=0)) == ["ACGT", "ACGT"]
    with pytest.raises(ValueError):
        check_sequences([])
    with pytest.raises(ValueError):
        check_sequences(["ACGN"])
    with pytest.raises(ValueError):
        check_sequences(["AC"], min_length=5)
    with pytest.raises(ValueError):
        check_sequences(np.full((1, 3, 4), 0.25))
