import numpy as np
import pytest

from deepmotif.data import one_hot_encode
from deepmotif.interpret import (ClassOptConfig, UnsupportedArchitectureError, class_opt_motif_window,
                                 class_optimize, conv_activation_motif, row_softmax, saliency_map,
                                 temporal_output_scores)
from deepmotif.models import build_model, predict
from deepmotif.training import NumericError

from handbuilt import linear_model, tt_detector


def rand_seq(rng, n):
    return "".join("ACGT"[i] for i in rng.integers(0, 4, n))


# --- saliency --------------------------------------------------------------------------


def test_linear_saliency_picks_out_weights():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(20, 4))
    seq = rand_seq(rng, 20)
    x = one_hot_encode(seq)
    sal = saliency_map(linear_model(v), x)
    expected = np.abs(v[np.arange(20), ["ACGT".index(c) for c in seq]])
    assert np.allclose(sal.magnitudes, expected, atol=1e-12)
    assert np.allclose(sal.gradient, v)
    assert sal.score == pytest.approx(float((v * x).sum()))


def test_saliency_shape_and_sign():
    rng = np.random.default_rng(1)
    model = build_model("Small CNN", 0)
    x = one_hot_encode(rand_seq(rng, 50))
    sal = saliency_map(model, x)
    assert sal.magnitudes.shape == (50,) and (sal.magnitudes >= 0).all()
    assert sal.score == pytest.approx(predict(model, x)[1])
    assert set(sal.to_dict("r1")) == {"id", "magnitudes"}


def test_interpretation_leaves_weights_untouched():
    rng = np.random.default_rng(2)
    model = build_model("Small CNN-RNN", 0)
    before = model.checksum()
    x = one_hot_encode(rand_seq(rng, 30))
    saliency_map(model, x)
    temporal_output_scores(model, x)
    class_optimize(model, 20, ClassOptConfig(steps=3))
    assert model.checksum() == before


# --- temporal ----------------------------------------------------------------------------


@pytest.mark.parametrize("name", ["Small RNN", "Small CNN-RNN"])
def test_temporal_scores_are_prefix_and_suffix_predictions(name):
    rng = np.random.default_rng(3)
    model = build_model(name, 1)
    seq = rand_seq(rng, 25)
    x = one_hot_encode(seq)
    ts = temporal_output_scores(model, x)
    assert ts.forward[-1] == pytest.approx(predict(model, x)[0], abs=1e-12)
    assert ts.backward[-1] == pytest.approx(predict(model, x)[0], abs=1e-12)
    lo = model.min_length
    for t in (lo, 12, 20):
        assert ts.forward[t - 1] == pytest.approx(predict(model, x[:t])[0], abs=1e-12)
        assert ts.backward[t - 1] == pytest.approx(predict(model, x[25 - t:])[0], abs=1e-12)
    assert np.all(ts.forward[:lo - 1] == ts.forward[lo - 1])


def test_zero_output_gives_flat_half():
    model = build_model("Small RNN", 0)
    model.params["out.W"][:] = 0
    model.params["out.b"][:] = 0
    ts = temporal_output_scores(model, one_hot_encode("ACGTTGCA" * 3))
    assert np.all(ts.forward == 0.5) and np.all(ts.backward == 0.5)


@pytest.mark.parametrize("seq,first", [("ACGTTA", 5), ("TTTT", 2), ("ACGACG", None),
                                       ("TATAT", None)])
def test_tt_detector_flips_at_first_tt(seq, first):
    ts = temporal_output_scores(tt_detector(), one_hot_encode(seq))
    t = np.arange(1, len(seq) + 1)
    expect = t >= first if first else np.zeros(len(seq), bool)
    assert np.array_equal(ts.forward > 0.5, expect)


def test_temporal_refuses_cnn():
    with pytest.raises(UnsupportedArchitectureError):
        temporal_output_scores(build_model("Small CNN", 0), one_hot_encode("A" * 30))


# --- class optimization ----------------------------------------------------------------


def test_linear_class_opt_reaches_closed_form():
    rng = np.random.default_rng(4)
    v = rng.normal(size=(12, 4))
    cfg = ClassOptConfig(reg=0.5, steps=500, step_size=0.5)
    opt = class_optimize(linear_model(v), 12, cfg)
    assert np.abs(opt.matrix - v / (2 * cfg.reg)).max() < 1e-3
    assert len(opt.score_trace) == cfg.steps + 1
    assert opt.final_score == opt.score_trace[-1]
    assert np.allclose(opt.display, row_softmax(opt.matrix))


def test_huge_penalty_pins_input_at_zero():
    v = np.random.default_rng(5).normal(size=(10, 4))
    opt = class_optimize(linear_model(v), 10, ClassOptConfig(reg=1e6, steps=50))
    assert np.abs(opt.matrix).max() < 1e-5


def test_class_opt_score_rises_on_real_model():
    opt = class_optimize(build_model("Small CNN", 0), 40, ClassOptConfig(steps=60))
    assert opt.score_trace[-1] > opt.score_trace[0]
    doc = opt.to_dict("Small CNN")
    assert doc["lambda"] == 0.01 and len(doc["display_matrix"]) == 40
    assert 0 <= class_opt_motif_window(opt) <= 31


def test_class_opt_reports_non_finite_step():
    v = np.zeros((10, 4))
    v[0, 0] = np.nan
    with pytest.raises(NumericError, match="step 0"):
        class_optimize(linear_model(v), 10, ClassOptConfig(steps=5))


@pytest.mark.parametrize("bad", [dict(reg=-1), dict(steps=0), dict(step_size=0),
                                 dict(init="gaussian")])
def test_class_opt_config_validation(bad):
    with pytest.raises(ValueError):
        ClassOptConfig(**bad)


# --- first-layer activation baseline ------------------------------------------------------


def detector(name, kmer, filt=3):
    model = build_model(name, 0)
    k = model.config.conv_filter_sizes[0]
    assert len(kmer) == k
    w = np.zeros_like(model.params["conv0.W"])
    for j, ch in enumerate(kmer):
        w[filt, "ACGT".index(ch) * k + j] = 1.0
    model.params["conv0.W"] = w
    model.params["conv0.B"] = np.zeros_like(model.params["conv0.B"])
    return model


@pytest.mark.parametrize("where,expect", [(30, 30), (0, 0), (91, 91)])
def test_conv_activation_centres_on_detected_site(where, expect):
    model = detector("Medium CNN-RNN", "TGACTCAGT")
    seq = list("A" * 100)
    seq[where:where + 9] = "TGACTCAGT"
    seq = "".join(seq)[:100]
    m = conv_activation_motif(model, one_hot_encode(seq))
    assert m.start == expect and m.sequence == seq[expect:expect + 9]


def test_conv_activation_narrow_filter():
    model = detector("Small CNN-RNN", "GACTC")
    seq = "A" * 20 + "GACTC" + "A" * 20
    m = conv_activation_motif(model, one_hot_encode(seq))
    assert m.start == 18  # site at 20, centre 22, window 18..26


def test_conv_activation_needs_conv_layer():
    with pytest.raises(UnsupportedArchitectureError):
        conv_activation_motif(build_model("Small RNN", 0), one_hot_encode("A" * 20))
