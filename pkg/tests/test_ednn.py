"""Encoder-decoder network: architecture algebra, metric, training gates."""

import numpy as np
import pytest

from traceweights.ednn import (
    EdnnDivergence,
    EdnnHistory,
    EdnnTrainConfig,
    build_ednn,
    ednn_accuracy,
    predict_weights,
    read_ednn,
    train_ednn,
    write_ednn,
)
from traceweights.nn import Adam, Conv1D, ConvTranspose1D, Dense, Dropout


def _signal_lengths(model, x):
    lengths = []
    a = np.atleast_2d(x)
    for layer in model.layers:
        a = layer.forward(a, train=False)
        if isinstance(layer, (Conv1D, ConvTranspose1D)) or (
            a.ndim == 3 and isinstance(layer, type(model.layers[2]))
        ):
            lengths.append(a.shape[-1])
    return lengths, a


def test_paper_scale_conv_length_chain():
    model = build_ednn(1024, (3, 2), "paper", seed=0)
    x = np.zeros((1, 1024))
    lengths, out = _signal_lengths(model, x)
    # reshape 256, conv 253/250/247, deconv 251/254
    assert lengths == [256, 253, 250, 247, 251, 254]
    assert out.shape == (1, 3, 2)
    channels = [l.w.shape[0] for l in model.layers if isinstance(l, Conv1D)]
    assert channels == [256, 128, 64]
    dchannels = [l.w.shape[1] for l in model.layers if isinstance(l, ConvTranspose1D)]
    assert dchannels == [256, 128]


def test_desk_scale_halves_widths_and_sizes_final_dense():
    model = build_ednn(256, (7, 4), "desk", seed=1)
    dense_layers = [l for l in model.layers if isinstance(l, Dense)]
    assert dense_layers[0].w.shape == (256, 128)
    assert dense_layers[-1].w.shape[1] == 28  # rows*cols for (7,4)
    channels = [l.w.shape[0] for l in model.layers if isinstance(l, Conv1D)]
    assert channels == [128, 64, 32]
    drops = [l for l in model.layers if isinstance(l, Dropout)]
    assert len(drops) == 2 and all(d.rate == 0.5 for d in drops)
    out = model.forward(np.zeros(256))
    assert out.shape == (1, 7, 4)


def test_build_validation():
    with pytest.raises(ValueError):
        build_ednn(15, (2, 2), "desk", seed=0)
    with pytest.raises(ValueError):
        build_ednn(64, (2, 2), "bench", seed=0)
    with pytest.raises(ValueError):
        build_ednn(64, (0, 2), "desk", seed=0)


def test_build_is_seed_deterministic():
    a = build_ednn(32, (2, 3), "desk", seed=7)
    b = build_ednn(32, (2, 3), "desk", seed=7)
    c = build_ednn(32, (2, 3), "desk", seed=8)
    assert np.array_equal(a.param_vector(), b.param_vector())
    assert not np.array_equal(a.param_vector(), c.param_vector())


def test_ednn_accuracy_frozen_examples():
    truth = np.zeros((2, 2))
    assert ednn_accuracy(truth, truth, tau=0.05) == 1.0
    assert ednn_accuracy(truth + 0.1, truth, tau=0.05) == 0.0  # off by 2*tau
    pred = np.array([[0.04, 0.06], [0.0, 0.0]])
    assert ednn_accuracy(pred, truth, tau=0.05) == 0.75
    # boundary counts as a hit (<=)
    assert ednn_accuracy(truth + 0.05, truth, tau=0.05) == 1.0


def test_ednn_accuracy_mask_and_batch():
    truth = np.zeros((2, 2))
    pred = np.array([[0.04, 0.06], [0.0, 0.0]])
    mask = np.array([[True, True], [True, False]])
    assert ednn_accuracy(pred, truth, tau=0.05, mask=mask) == pytest.approx(2 / 3)
    batch_p = np.stack([pred, truth])
    batch_t = np.stack([truth, truth])
    assert ednn_accuracy(batch_p, batch_t, tau=0.05) == pytest.approx(7 / 8)
    with pytest.raises(ValueError):
        ednn_accuracy(np.zeros((2, 2)), np.zeros((2, 3)))


def test_memorizes_identical_pairs_within_50_epochs():
    rng = np.random.default_rng(3)
    x = np.tile(rng.normal(size=16), (8, 1))
    y = np.full((8, 2, 2), 0.2)
    model = build_ednn(16, (2, 2), "desk", seed=4)
    cfg = EdnnTrainConfig(epochs=50, batch_size=1, lr=0.003, tau=0.05, seed=5)
    hist = train_ednn(model, x, y, cfg, theta=1.0, val=(x, y))
    assert hist.reached_theta
    assert hist.val_accuracy[-1] == 1.0
    assert hist.epochs_run <= 50
    # Eq.-2 loss of the trained model goes to ~0 (the in-loop bookkeeping
    # value keeps dropout noise and stays above it)
    diff = predict_weights(model, x) - y
    assert float(np.sum(diff * diff) / x.shape[0]) < 1e-3


def test_theta_zero_returns_after_first_epoch():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(10, 16))
    y = rng.normal(size=(10, 2, 2))
    model = build_ednn(16, (2, 2), "desk", seed=7)
    hist = train_ednn(
        model, x, y, EdnnTrainConfig(epochs=30, batch_size=10, seed=8),
        theta=0.0, val=(x, y),
    )
    assert hist.epochs_run == 1
    assert hist.reached_theta


def test_gate_never_reports_success_below_theta():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(12, 16))
    y = rng.normal(size=(12, 2, 2)) * 5.0  # far outside tau reach
    model = build_ednn(16, (2, 2), "desk", seed=10)
    hist = train_ednn(
        model, x, y, EdnnTrainConfig(epochs=3, batch_size=12, seed=11),
        theta=0.99, val=(x, y),
    )
    assert not hist.reached_theta
    assert all(acc < 0.99 for acc in hist.val_accuracy)
    # and whenever the flag is set, the last recorded accuracy clears theta
    model2 = build_ednn(16, (2, 2), "desk", seed=12)
    y2 = np.zeros((12, 2, 2))
    hist2 = train_ednn(
        model2, x, y2, EdnnTrainConfig(epochs=50, batch_size=4, lr=0.003, seed=13),
        theta=0.9, val=(x, y2),
    )
    if hist2.reached_theta:
        assert hist2.val_accuracy[-1] >= 0.9


def test_divergence_aborts_with_epoch_index():
    # inputs large enough that the squared loss overflows float64
    rng = np.random.default_rng(14)
    x = rng.normal(size=(6, 16)) * 1e180
    y = rng.normal(size=(6, 2, 2))
    model = build_ednn(16, (2, 2), "desk", seed=15)
    with pytest.raises(EdnnDivergence) as err, np.errstate(over="ignore"):
        train_ednn(
            model, x, y, EdnnTrainConfig(epochs=5, batch_size=6, seed=16),
            theta=2.0,
        )
    assert err.value.epoch == 1
    assert "epoch" in str(err.value)


def test_full_batch_eq2_loss_non_increasing_at_small_lr():
    # the Eq.-2 quantity is the deterministic training-set MSE of the
    # model at each epoch boundary; the dropped-forward bookkeeping
    # value inside the loop is noisy and exempt.
    rng = np.random.default_rng(17)
    x = rng.normal(size=(50, 16))
    y = rng.normal(size=(50, 2, 2)) * 0.3
    model = build_ednn(16, (2, 2), "desk", seed=18)
    opt = Adam(model.params(), lr=1e-4)

    def eq2_loss():
        diff = predict_weights(model, x) - y
        return float(np.sum(diff * diff) / x.shape[0])

    losses = [eq2_loss()]
    for epoch in range(40):
        train_ednn(
            model, x, y,
            EdnnTrainConfig(epochs=1, batch_size=50, lr=1e-4, seed=19 + epoch),
            theta=2.0, opt=opt,
        )
        losses.append(eq2_loss())
    assert all(b <= a for a, b in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]


def test_train_rejects_empty_or_misaligned_pairs():
    model = build_ednn(16, (2, 2), "desk", seed=20)
    cfg = EdnnTrainConfig(epochs=1, batch_size=4)
    with pytest.raises(ValueError):
        train_ednn(model, np.empty((0, 16)), np.empty((0, 2, 2)), cfg, theta=0.5)
    with pytest.raises(ValueError):
        train_ednn(model, np.zeros((3, 16)), np.zeros((2, 2, 2)), cfg, theta=0.5)


def test_predict_weights_shapes_and_determinism():
    model = build_ednn(20, (3, 3), "desk", seed=21)
    rng = np.random.default_rng(22)
    one = rng.normal(size=20)
    batch = rng.normal(size=(4, 20))
    a = predict_weights(model, one)
    b = predict_weights(model, one)
    assert a.shape == (3, 3)
    assert np.array_equal(a, b)
    out = predict_weights(model, batch)
    assert out.shape == (4, 3, 3)
    # batched and single GEMM paths agree to rounding, not bitwise
    assert np.allclose(out[0], predict_weights(model, batch[0]), atol=1e-12)
    assert np.all(np.isfinite(out))


def test_checkpoint_round_trip(tmp_path):
    model = build_ednn(18, (2, 3), "desk", seed=23)
    write_ednn(tmp_path / "m", model, meta={"tag": "t"})
    back, header = read_ednn(tmp_path / "m")
    assert np.array_equal(back.param_vector(), model.param_vector())
    assert header["rows"] == 2 and header["cols"] == 3 and header["tag"] == "t"
    x = np.random.default_rng(24).normal(size=18)
    assert np.array_equal(predict_weights(back, x), predict_weights(model, x))
    with pytest.raises(ValueError):
        back.load_param_vector(np.zeros(5))


def test_warm_optimizer_continues_across_calls():
    rng = np.random.default_rng(25)
    x = rng.normal(size=(10, 16))
    y = np.full((10, 2, 2), 0.1)
    model = build_ednn(16, (2, 2), "desk", seed=26)
    opt = Adam(model.params(), lr=0.001)
    train_ednn(model, x, y, EdnnTrainConfig(epochs=2, batch_size=5, seed=27),
               theta=2.0, opt=opt)
    t_after_first = opt.t
    train_ednn(model, x, y, EdnnTrainConfig(epochs=2, batch_size=5, seed=28),
               theta=2.0, opt=opt)
    assert opt.t == 2 * t_after_first
