import math

import numpy as np
import pytest

from noiseadapt import neural_net as nn
from noiseadapt.errors import InvalidArgumentError, InvalidStateError
from noiseadapt.features import FeatureMatrix


def numeric_gradients(net, x, y, y2=None, weight=None, h=1e-5):
    grads = []
    for p in net.parameters():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            lp, _ = net.loss_and_grads(x, y, y2, weight)
            p[idx] = old - h
            lm, _ = net.loss_and_grads(x, y, y2, weight)
            p[idx] = old
            g[idx] = (lp - lm) / (2 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def _data(rng, n, d, k, k2=None):
    x = rng.standard_normal((n, d))
    y = rng.integers(0, k, n)
    y2 = None if k2 is None else rng.integers(0, k2, n)
    return x, y, y2


def test_init_is_deterministic_and_bounded():
    cfg = nn.NetworkConfig([4, 8, 3], seed=5)
    a, b = nn.Network.init(cfg), nn.Network.init(cfg)
    for p, q in zip(a.parameters(), b.parameters()):
        assert np.array_equal(p, q)
    for w in a.weights:
        assert np.all(np.abs(w) <= math.sqrt(6 / (w.shape[0] + w.shape[1])))
    assert all(np.all(b == 0) for b in a.biases)


@pytest.mark.parametrize("kwargs", [
    dict(layer_sizes=[4]),
    dict(layer_sizes=[4, 0, 2]),
    dict(layer_sizes=[4, 5, 2], bottleneck_index=1),
    dict(layer_sizes=[4, 5, 2], second_head=(1, [2])),
    dict(layer_sizes=[4, 5, 2], activation="softsign"),
])
def test_invalid_configs(kwargs):
    with pytest.raises(InvalidArgumentError):
        nn.NetworkConfig(**kwargs)


def test_forward_zero_network():
    cfg = nn.NetworkConfig([3, 4, 4, 2])
    net = nn.Network.init(cfg)
    for p in net.parameters():
        p[...] = 0
    out = net.forward(np.ones((5, 3)))
    assert all(np.all(h == 0.5) for h in out.hidden)
    assert np.all(out.logits == 0)


def test_forward_affine_case():
    rng = np.random.default_rng(0)
    net = nn.Network.init(nn.NetworkConfig([3, 2]))
    net.biases[0][:] = rng.standard_normal(2)
    x = rng.standard_normal((4, 3))
    np.testing.assert_array_equal(net.forward(x).logits, x @ net.weights[0] + net.biases[0])


def test_forward_matches_straight_line_oracle():
    rng = np.random.default_rng(1)
    net = nn.Network.init(nn.NetworkConfig([5, 7, 6, 3], activation="tanh", seed=2))
    for b in net.biases:
        b[:] = rng.standard_normal(b.shape)
    x = rng.standard_normal((9, 5))
    (w0, w1, w2), (b0, b1, b2) = net.weights, net.biases
    expected = np.zeros((9, 3))
    for r in range(9):
        h1 = [math.tanh(sum(x[r, i] * w0[i, j] for i in range(5)) + b0[j]) for j in range(7)]
        h2 = [math.tanh(sum(h1[i] * w1[i, j] for i in range(7)) + b1[j]) for j in range(6)]
        expected[r] = [sum(h2[i] * w2[i, j] for i in range(6)) + b2[j] for j in range(3)]
    np.testing.assert_allclose(net.forward(x).logits, expected, atol=1e-12)


def test_forward_rejects_wrong_width():
    net = nn.Network.init(nn.NetworkConfig([3, 2]))
    with pytest.raises(InvalidArgumentError):
        net.forward(np.ones((2, 4)))


def test_softmax_xent_uniform_and_stable():
    loss, grad = nn.softmax_xent(np.zeros(7), 3)
    assert loss == pytest.approx(math.log(7), rel=1e-12)
    logits = np.zeros(4)
    logits[2] = 1000.0
    loss, grad = nn.softmax_xent(logits, 2)
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.isfinite(grad))
    with pytest.raises(InvalidArgumentError):
        nn.softmax_xent(np.zeros(3), 3)


def test_softmax_xent_gradient_finite_differences():
    rng = np.random.default_rng(3)
    z = rng.standard_normal(6)
    _, grad = nn.softmax_xent(z, 4)
    h = 1e-5
    num = np.array([(nn.softmax_xent(z + h * e, 4)[0] - nn.softmax_xent(z - h * e, 4)[0]) / (2 * h)
                    for e in np.eye(6)])
    np.testing.assert_allclose(grad, num, rtol=1e-6, atol=1e-9)


def test_softmax_sums_to_one():
    rng = np.random.default_rng(4)
    p = nn.softmax(rng.standard_normal((50, 9)) * 20)
    np.testing.assert_allclose(p.sum(1), 1.0, atol=1e-12)


@pytest.mark.parametrize("activation", ["sigmoid", "tanh", "relu"])
def test_gradients_single_head(activation):
    rng = np.random.default_rng(5)
    net = nn.Network.init(nn.NetworkConfig([4, 6, 5, 3], activation=activation, seed=1))
    x, y, _ = _data(rng, 10, 4, 3)
    _, grads = net.loss_and_grads(x, y)
    assert max_relative_error(grads, numeric_gradients(net, x, y)) <= 1e-4


def test_gradients_bottleneck_shape():
    rng = np.random.default_rng(6)
    net = nn.Network.init(nn.NetworkConfig([5, 6, 6, 2, 6, 4], bottleneck_index=2, seed=2))
    x, y, _ = _data(rng, 10, 5, 4)
    _, grads = net.loss_and_grads(x, y)
    assert max_relative_error(grads, numeric_gradients(net, x, y)) <= 1e-4


@pytest.mark.parametrize("weight", [0.3, 1.0])
def test_gradients_dual_head(weight):
    rng = np.random.default_rng(7)
    cfg = nn.NetworkConfig([4, 6, 3, 5, 5, 3], second_head=(1, [4, 2]), seed=3)
    net = nn.Network.init(cfg)
    x, y, y2 = _data(rng, 10, 4, 3, 2)
    _, grads = net.loss_and_grads(x, y, y2, weight)
    assert max_relative_error(grads, numeric_gradients(net, x, y, y2, weight)) <= 1e-4


def test_zero_head_weight_matches_single_head():
    rng = np.random.default_rng(8)
    single = nn.Network.init(nn.NetworkConfig([4, 6, 5, 3], seed=4))
    dual = nn.Network.init(nn.NetworkConfig([4, 6, 5, 3], second_head=(0, [3, 2]), seed=4))
    x, y, y2 = _data(rng, 12, 4, 3, 2)
    _, g1 = single.loss_and_grads(x, y)
    _, g2 = dual.loss_and_grads(x, y, y2, 0.0)
    n = len(single.weights)
    for a, b in zip(g1[:2 * n], g2[:2 * n]):
        assert np.array_equal(a, b)


def test_zero_head_weight_training_trajectory_matches():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((200, 4))
    y = (x[:, 0] > 0).astype(int)
    y2 = (x[:, 1] > 0).astype(int)
    common = dict(seed=6, epochs=3, batch_size=16, learning_rate=0.1)
    single = nn.Network.init(nn.NetworkConfig([4, 6, 5, 2], **common))
    dual = nn.Network.init(nn.NetworkConfig([4, 6, 5, 2], second_head=(1, [2]),
                                            head2_weight=0.0, **common))
    nn.train(single, FeatureMatrix(x, y), FeatureMatrix(x[:50], y[:50]))
    nn.train(dual, FeatureMatrix(x, y), FeatureMatrix(x[:50], y[:50]), y2, y2[:50])
    for a, b in zip(single.weights + single.biases, dual.weights + dual.biases):
        assert np.array_equal(a, b)


def test_zero_learning_rate_is_a_no_op():
    rng = np.random.default_rng(10)
    net = nn.Network.init(nn.NetworkConfig([3, 4, 2]))
    before = [p.copy() for p in net.parameters()]
    x, y, _ = _data(rng, 8, 3, 2)
    net.backward_update(x, y, learning_rate=0.0)
    for a, b in zip(before, net.parameters()):
        assert np.array_equal(a, b)


def test_negative_head_weight_rejected():
    net = nn.Network.init(nn.NetworkConfig([3, 4, 2], second_head=(0, [2])))
    with pytest.raises(InvalidArgumentError):
        net.loss_and_grads(np.ones((2, 3)), [0, 1], [0, 1], -0.1)


def _separable(rng, n):
    y = rng.integers(0, 2, n)
    x = rng.standard_normal((n, 2)) + np.where(y[:, None] == 1, 4.0, -4.0) * np.array([1, 0])
    return FeatureMatrix(x, y)


def test_separable_toy_learns():
    rng = np.random.default_rng(11)
    tr, dv = _separable(rng, 2000), _separable(rng, 500)
    net = nn.Network.init(nn.NetworkConfig([2, 16, 2], epochs=20, seed=1, learning_rate=0.1))
    report = nn.train(net, tr, dv)
    assert report.epochs_run <= 20
    assert net.evaluate(dv, dv.labels)[1] >= 0.99
    upticks = sum(b > a for a, b in zip(report.train_loss, report.train_loss[1:]))
    assert upticks <= 2
    assert all(np.isfinite(report.train_loss)) and min(report.train_loss) >= 0


def test_training_is_deterministic():
    rng = np.random.default_rng(12)
    tr, dv = _separable(rng, 300), _separable(rng, 100)
    reports, nets = [], []
    for _ in range(2):
        net = nn.Network.init(nn.NetworkConfig([2, 8, 2], epochs=4, seed=3))
        reports.append(nn.train(net, tr, dv))
        nets.append(net)
    assert reports[0] == reports[1]
    for a, b in zip(nets[0].parameters(), nets[1].parameters()):
        assert np.array_equal(a, b)


def test_train_rejects_empty_splits():
    net = nn.Network.init(nn.NetworkConfig([2, 2]))
    empty = FeatureMatrix(np.zeros((0, 2)), np.zeros(0, int))
    with pytest.raises(InvalidArgumentError):
        nn.train(net, empty, FeatureMatrix(np.zeros((1, 2)), [0]))


def test_bottleneck_tap():
    rng = np.random.default_rng(13)
    net = nn.Network.init(nn.NetworkConfig([6, 8, 40, 8, 3], bottleneck_index=1))
    x = rng.standard_normal((5, 6))
    x[3] = x[1]
    tap = net.tap_bottleneck(x).values
    assert tap.shape == (5, 40)
    assert np.array_equal(tap[1], tap[3])
    np.testing.assert_array_equal(tap, net.forward(x).hidden[1])
    plain = nn.Network.init(nn.NetworkConfig([6, 8, 3]))
    with pytest.raises(InvalidStateError):
        plain.tap_bottleneck(x)


def test_save_load_round_trip(tmp_path):
    cfg = nn.NetworkConfig([4, 5, 3, 2], second_head=(0, [3, 2]), bottleneck_index=1, seed=7)
    net = nn.Network.init(cfg)
    net.save(tmp_path / "n.json")
    back = nn.Network.load(tmp_path / "n.json")
    assert back.config == cfg
    for a, b in zip(net.parameters(), back.parameters()):
        assert np.array_equal(a, b)


def test_parameter_count():
    cfg = nn.NetworkConfig([4, 5, 3, 2], second_head=(0, [3, 2]))
    assert nn.count_parameters(cfg) == nn.Network.init(cfg).num_parameters()
    assert nn.count_parameters(cfg) == (4 * 5 + 5) + (5 * 3 + 3) + (3 * 2 + 2) + (5 * 3 + 3) + (3 * 2 + 2)
