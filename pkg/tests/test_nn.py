import numpy as np
import pytest

from flowcast import nn


def test_init_shapes_and_determinism():
    net = nn.init_network((2, 2), seed=4)
    assert net.weights[0].shape == (2, 2)
    assert net.biases[0].shape == (2,)
    again = nn.init_network((2, 2), seed=4)
    assert all(np.array_equal(a, b) for a, b in zip(net.weights, again.weights))


def test_init_he_scaling():
    net = nn.init_network((1000, 1000), seed=0)
    std = net.weights[0].std()
    want = np.sqrt(2.0 / 1000)
    assert abs(std - want) / want < 0.05


def test_forward_zero_weights_returns_bias():
    net = nn.init_network((3, 4, 2), seed=1)
    for w in net.weights:
        w[:] = 0.0
    net.biases[-1][:] = [5.0, -1.0]
    out = nn.forward(net, np.random.default_rng(0).standard_normal((7, 3)))
    assert np.allclose(out, [5.0, -1.0])


def test_forward_identity_single_layer():
    net = nn.MlpNetwork(layer_dims=(3, 3), weights=[np.eye(3)], biases=[np.zeros(3)])
    x = np.random.default_rng(1).standard_normal((5, 3))
    assert np.allclose(nn.forward(net, x), x)


def test_forward_matches_hand_computation():
    # 2-3-1 net evaluated layer by layer by hand
    w1 = np.array([[0.5, -1.0, 2.0], [1.0, 0.25, -0.5]])
    b1 = np.array([0.1, -0.2, 0.0])
    w2 = np.array([[1.0], [-2.0], [0.5]])
    b2 = np.array([0.3])
    net = nn.MlpNetwork(layer_dims=(2, 3, 1), weights=[w1, w2], biases=[b1, b2])
    x = np.array([[1.0, -1.0], [0.5, 2.0]])
    hidden = np.maximum(x @ w1 + b1, 0.0)
    want = hidden @ w2 + b2
    assert np.allclose(nn.forward(net, x), want, atol=1e-15)


def test_forward_rejects_bad_width():
    net = nn.init_network((3, 2), seed=0)
    with pytest.raises(ValueError):
        nn.forward(net, np.zeros((4, 5)))


def test_backward_finite_differences():
    rng = np.random.default_rng(42)
    net = nn.init_network((10, 8, 5), seed=7)
    x = rng.standard_normal((6, 10))
    g_out = rng.standard_normal((6, 5))
    gw, gb = nn.backward(net, x, g_out)

    def scalar():
        return float(np.sum(nn.forward(net, x) * g_out))

    h = 1e-5
    worst = 0.0
    for li in range(net.n_layers):
        for arr, grad in ((net.weights[li], gw[li]), (net.biases[li], gb[li])):
            flat = arr.reshape(-1)
            for k in range(0, flat.size, max(1, flat.size // 25)):
                old = flat[k]
                flat[k] = old + h
                fp = scalar()
                flat[k] = old - h
                fm = scalar()
                flat[k] = old
                fd = (fp - fm) / (2 * h)
                an = grad.reshape(-1)[k]
                scale = max(abs(an), abs(fd), 1e-8)
                worst = max(worst, abs(an - fd) / scale)
    assert worst < 1e-5


def test_backward_zero_grad_out():
    net = nn.init_network((4, 3, 2), seed=2)
    gw, gb = nn.backward(net, np.ones((5, 4)), np.zeros((5, 2)))
    assert all(np.all(g == 0) for g in gw + gb)


def test_backward_linear_net_closed_form():
    # no hidden layer, loss = mean squared error
    rng = np.random.default_rng(3)
    w = rng.standard_normal((4, 2))
    net = nn.MlpNetwork(layer_dims=(4, 2), weights=[w], biases=[np.zeros(2)])
    x = rng.standard_normal((16, 4))
    y = rng.standard_normal((16, 2))
    pred = nn.forward(net, x)
    _, grad_out = nn.mse_loss(pred, y)
    gw, _ = nn.backward(net, x, grad_out)
    closed = 2.0 * x.T @ (x @ w - y) / y.size
    assert np.allclose(gw[0], closed, atol=1e-12)


def test_adam_first_step_magnitude():
    cfg = nn.TrainConfig(seed=0)
    net = nn.MlpNetwork(layer_dims=(1, 1), weights=[np.array([[1.0]])],
                        biases=[np.array([0.0])])
    state = nn.AdamState.for_network(net)
    g = np.array([[0.25]])
    nn.adam_step(net, [g], [np.zeros(1)], state, cfg)
    want = 1.0 - cfg.learning_rate * 0.25 / (0.25 + cfg.eps)
    assert np.isclose(net.weights[0][0, 0], want, rtol=1e-12)


def test_adam_zero_gradient_keeps_parameters():
    cfg = nn.TrainConfig(seed=0)
    net = nn.init_network((3, 2), seed=5)
    w0 = net.weights[0].copy()
    state = nn.AdamState.for_network(net)
    for _ in range(10):
        nn.adam_step(net, [np.zeros((3, 2))], [np.zeros(2)], state, cfg)
    assert np.array_equal(net.weights[0], w0)


def test_adam_deterministic():
    cfg = nn.TrainConfig(seed=0)
    results = []
    for _ in range(2):
        net = nn.init_network((3, 2), seed=5)
        state = nn.AdamState.for_network(net)
        g = np.full((3, 2), 0.1)
        for _ in range(5):
            nn.adam_step(net, [g], [np.zeros(2)], state, cfg)
        results.append(net.weights[0].copy())
    assert np.array_equal(results[0], results[1])


def test_train_learns_affine_map():
    rng = np.random.default_rng(7)
    x = rng.uniform(-1, 1, size=(1000, 1))
    y = 2.0 * x + 1.0
    sx, sy = nn.Scaler.fit(x[:800]), nn.Scaler.fit(y[:800])
    cfg = nn.TrainConfig(epochs=200, seed=3, width_factor=16)
    net = nn.init_network(nn.layer_dims_for(1, 1, cfg), seed=3)
    best, history = nn.train(net, sx.transform(x[:800]), sy.transform(y[:800]),
                             sx.transform(x[800:]), sy.transform(y[800:]), cfg)
    pred = sy.inverse(nn.forward(best, sx.transform(x[800:])))
    assert float(np.mean((pred - y[800:]) ** 2)) < 1e-3
    assert len(history["train"]) == 200
    assert all(np.isfinite(v) for v in history["train"])


def test_train_zero_epochs_returns_initial():
    cfg = nn.TrainConfig(epochs=0, seed=1)
    net = nn.init_network((2, 3, 1), seed=9)
    w0 = [w.copy() for w in net.weights]
    best, history = nn.train(net, np.zeros((8, 2)), np.zeros((8, 1)),
                             np.zeros((4, 2)), np.zeros((4, 1)), cfg)
    assert all(np.array_equal(a, b) for a, b in zip(best.weights, w0))
    assert history["train"] == []


def test_train_bit_identical_history():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((200, 3))
    y = x @ rng.standard_normal((3, 2))
    cfg = nn.TrainConfig(epochs=12, seed=21)
    runs = []
    for _ in range(2):
        net = nn.init_network(nn.layer_dims_for(3, 2, cfg), seed=21)
        _, history = nn.train(net, x[:150], y[:150], x[150:], y[150:], cfg)
        runs.append(history)
    assert runs[0]["train"] == runs[1]["train"]
    assert runs[0]["val"] == runs[1]["val"]


def test_train_selects_best_validation(model9=None):
    rng = np.random.default_rng(5)
    x = rng.standard_normal((120, 2))
    y = x @ np.array([[1.0], [-1.0]])
    cfg = nn.TrainConfig(epochs=25, seed=2)
    net = nn.init_network((2, 8, 1), seed=2)
    initial_val = nn._eval_loss(net, x[100:], y[100:], nn.mse_loss, cfg.batch_size)
    best, history = nn.train(net, x[:100], y[:100], x[100:], y[100:], cfg)
    final_val = nn._eval_loss(best, x[100:], y[100:], nn.mse_loss, cfg.batch_size)
    assert final_val <= initial_val
    assert final_val <= min(history["val"]) + 1e-15


def test_train_aborts_on_divergence():
    x = np.full((64, 1), 1e200)
    y = np.full((64, 1), -1e200)
    cfg = nn.TrainConfig(epochs=3, seed=0, batch_size=16)
    net = nn.init_network((1, 4, 1), seed=0)
    with np.errstate(over="ignore"), pytest.raises(nn.TrainingDivergedError):
        nn.train(net, x, y, x, y, cfg)


def test_batch_size_larger_than_train_rejected():
    cfg = nn.TrainConfig(epochs=1, seed=0, batch_size=64)
    net = nn.init_network((2, 1), seed=0)
    with pytest.raises(ValueError):
        nn.train(net, np.zeros((8, 2)), np.zeros((8, 1)),
                 np.zeros((4, 2)), np.zeros((4, 1)), cfg)


def test_scaler_round_trip():
    rng = np.random.default_rng(11)
    y = rng.standard_normal((50, 6)) * np.array([1, 10, 100, 0.1, 5, 1]) + 3.0
    scaler = nn.Scaler.fit(y)
    assert np.max(np.abs(scaler.inverse(scaler.transform(y)) - y)) < 1e-10


def test_scaler_flags_constant_features():
    y = np.column_stack([np.ones(20), np.arange(20.0)])
    scaler = nn.Scaler.fit(y)
    assert scaler.constant.tolist() == [True, False]
    assert scaler.stds[0] == 1.0
    assert np.all(np.isfinite(scaler.transform(y)))


def test_network_json_round_trip(tmp_path):
    net = nn.init_network((3, 5, 2), seed=8)
    path = tmp_path / "net.json"
    nn.save_network(net, path)
    again = nn.load_network(path)
    assert again.layer_dims == net.layer_dims
    assert all(np.array_equal(a, b) for a, b in zip(again.weights, net.weights))
    x = np.random.default_rng(0).standard_normal((4, 3))
    assert np.array_equal(nn.forward(again, x), nn.forward(net, x))
