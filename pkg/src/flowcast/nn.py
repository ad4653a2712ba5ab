"""Self-contained multilayer perceptron with explicit backpropagation.

ReLU hidden layers, identity output, He-scaled initialization, Adam with
bias correction, mini-batch training with z-score standardization on the
training split and best-validation-loss model selection.  Everything is
float64 and deterministic per seed; heavy per-layer products run through
the selected kernel backend.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 64
    hidden_layers: int = 3
    width_factor: float = 2.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if min(self.learning_rate, self.batch_size, self.width_factor) <= 0:
            raise ValueError("learning_rate, batch_size, width_factor must be positive")
        if self.epochs < 0 or self.hidden_layers < 0:
            raise ValueError("epochs and hidden_layers must be nonnegative")


def hidden_width(n_inputs, config):
    return max(1, int(round(n_inputs * config.width_factor)))


def layer_dims_for(n_inputs, n_outputs, config):
    width = hidden_width(n_inputs, config)
    return (n_inputs,) + (width,) * config.hidden_layers + (n_outputs,)


@dataclass
class MlpNetwork:
    layer_dims: tuple
    weights: list
    biases: list

    @property
    def n_layers(self):
        return len(self.weights)

    def copy(self):
        return MlpNetwork(layer_dims=self.layer_dims,
                          weights=[w.copy() for w in self.weights],
                          biases=[b.copy() for b in self.biases])

    def check_finite(self):
        for w in self.weights + self.biases:
            if not np.all(np.isfinite(w)):
                raise TrainingDivergedError("non-finite network parameters")


def init_network(layer_dims, seed=0):
    """He-scaled Gaussian weights, zero biases, deterministic per seed."""
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError("layer_dims needs at least (input, output), all >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x17]))
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    return MlpNetwork(layer_dims=dims, weights=weights, biases=biases)


def forward_cached(net, x):
    """Forward pass keeping every post-activation (the last is the output)."""
    acts = []
    a = np.ascontiguousarray(x)
    last = net.n_layers - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        a = kernels.affine(a, w, b, l < last)
        acts.append(a)
    return acts


def forward(net, x):
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != net.layer_dims[0]:
        raise ValueError(f"expected (batch, {net.layer_dims[0]}) input, got {x.shape}")
    return forward_cached(net, x)[-1]


def backward_from_cache(net, x, acts, grad_out):
    """Gradients of the scalar whose output-gradient is grad_out."""
    grads_w = [None] * net.n_layers
    grads_b = [None] * net.n_layers
    delta = np.ascontiguousarray(grad_out)
    last = net.n_layers - 1
    for l in range(last, -1, -1):
        a_in = x if l == 0 else acts[l - 1]
        relu_act = acts[l] if l < last else None
        grads_w[l], grads_b[l], delta = kernels.backprop_layer(
            delta, np.ascontiguousarray(a_in), net.weights[l], relu_act)
    return grads_w, grads_b


def backward(net, x, grad_out):
    x = np.ascontiguousarray(x)
    grad_out = np.asarray(grad_out)
    if grad_out.shape != (x.shape[0], net.layer_dims[-1]):
        raise ValueError("grad_out shape must match the network output")
    return backward_from_cache(net, x, forward_cached(net, x), grad_out)


# --------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    m_w: list
    v_w: list
    m_b: list
    v_b: list
    t: int = 0

    @classmethod
    def for_network(cls, net):
        return cls(m_w=[np.zeros_like(w) for w in net.weights],
                   v_w=[np.zeros_like(w) for w in net.weights],
                   m_b=[np.zeros_like(b) for b in net.biases],
                   v_b=[np.zeros_like(b) for b in net.biases])


def adam_step(net, grads_w, grads_b, state, config):
    """One bias-corrected Adam update over all parameters (in place)."""
    state.t += 1
    for w, g, m, v in zip(net.weights, grads_w, state.m_w, state.v_w):
        kernels.adam_step(w, g, m, v, state.t, config.learning_rate,
                          config.beta1, config.beta2, config.eps)
    for b, g, m, v in zip(net.biases, grads_b, state.m_b, state.v_b):
        kernels.adam_step(b, g, m, v, state.t, config.learning_rate,
                          config.beta1, config.beta2, config.eps)


# --------------------------------------------------------------------------
# standardization

@dataclass(frozen=True)
class Scaler:
    means: np.ndarray
    stds: np.ndarray
    constant: np.ndarray = field(default=None)

    @classmethod
    def fit(cls, x):
        x = np.asarray(x)
        means = x.mean(axis=0)
        stds = x.std(axis=0)
        constant = stds == 0.0
        stds = np.where(constant, 1.0, stds)
        return cls(means=means, stds=stds, constant=constant)

    def transform(self, x):
        return (x - self.means) / self.stds

    def inverse(self, z):
        return z * self.stds + self.means


# --------------------------------------------------------------------------
# training loop

def minibatch_plan(n, batch_size, epochs, seed):
    """Deterministic epoch-by-epoch shuffled batch index stream.

    Shared by every trainer so differently structured models consume
    identical batch sequences for the same seed.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5F]))
    for _ in range(epochs):
        order = rng.permutation(n)
        yield [order[i:i + batch_size] for i in range(0, n, batch_size)]


def mse_loss(pred, target):
    """Mean over batch and components; gradient w.r.t. pred."""
    err = pred - target
    denom = err.size
    return float(np.mean(err * err)), (2.0 / denom) * err


def train(net, x_train, y_train, x_val, y_val, config, loss=mse_loss,
          feature_stream=None):
    """Mini-batch Adam training with best-validation selection.

    Inputs are expected pre-standardized.  feature_stream(epoch), when
    given, supplies that epoch's training features (e.g. a fresh
    measurement-noise draw); x_train then only fixes the row count.
    Returns (best network, history) where history has per-epoch train/val
    losses and the selected epoch.  Raises TrainingDivergedError on
    non-finite loss.
    """
    n = x_train.shape[0]
    if config.epochs > 0 and config.batch_size > n:
        raise ValueError("batch_size exceeds the training-set size")
    x_train = np.ascontiguousarray(x_train)
    x_val = np.ascontiguousarray(x_val)

    state = AdamState.for_network(net)
    history = {"train": [], "val": [], "best_epoch": -1}
    best = net.copy()
    best_val = _eval_loss(net, x_val, y_val, loss, config.batch_size)

    for epoch, epoch_batches in enumerate(
            minibatch_plan(n, config.batch_size, config.epochs, config.seed)):
        x_epoch = x_train if feature_stream is None \
            else np.ascontiguousarray(feature_stream(epoch))
        running = 0.0
        for batch in epoch_batches:
            xb = np.ascontiguousarray(x_epoch[batch])
            acts = forward_cached(net, xb)
            loss_val, grad = loss(acts[-1], y_train[batch])
            if not np.isfinite(loss_val):
                raise TrainingDivergedError(
                    f"loss became {loss_val} at epoch {len(history['train'])}")
            gw, gb = backward_from_cache(net, xb, acts, grad)
            adam_step(net, gw, gb, state, config)
            running += loss_val * len(batch)
        val_loss = _eval_loss(net, x_val, y_val, loss, config.batch_size)
        history["train"].append(running / n)
        history["val"].append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best = net.copy()
            history["best_epoch"] = len(history["val"]) - 1
    best.check_finite()
    return best, history


def _eval_loss(net, x, y, loss, batch_size):
    if x.shape[0] == 0:
        return np.inf
    total = 0.0
    for start in range(0, x.shape[0], batch_size):
        sl = slice(start, start + batch_size)
        pred = forward_cached(net, np.ascontiguousarray(x[sl]))[-1]
        loss_val, _ = loss(pred, y[sl])
        total += loss_val * (min(sl.stop or x.shape[0], x.shape[0]) - start)
    return total / x.shape[0]


# --------------------------------------------------------------------------
# serialization

def network_to_dict(net):
    return {"layer_dims": list(net.layer_dims),
            "weights": [w.tolist() for w in net.weights],
            "biases": [b.tolist() for b in net.biases]}


def network_from_dict(doc):
    return MlpNetwork(layer_dims=tuple(doc["layer_dims"]),
                      weights=[np.array(w) for w in doc["weights"]],
                      biases=[np.array(b) for b in doc["biases"]])


def scaler_to_dict(s):
    return {"means": s.means.tolist(), "stds": s.stds.tolist(),
            "constant": s.constant.tolist()}


def scaler_from_dict(doc):
    return Scaler(means=np.array(doc["means"]), stds=np.array(doc["stds"]),
                  constant=np.array(doc["constant"], dtype=bool))


def save_network(net, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(network_to_dict(net), f)


def load_network(path):
    with open(path, encoding="utf-8") as f:
        return network_from_dict(json.load(f))
