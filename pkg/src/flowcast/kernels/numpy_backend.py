"""Pure-NumPy implementations of the training hot kernels.

Same contract as the compiled backend (_fastcore): float64, C-contiguous,
adam_step mutates its param/moment arrays in place.
"""

import numpy as np

NAME = "numpy"


def affine(x, w, b, relu):
    """x @ w + b, with ReLU applied when relu is true."""
    out = x @ w + b
    if relu:
        np.maximum(out, 0.0, out=out)
    return out


def backprop_layer(delta, a_in, w, relu_act):
    """One reverse step through an affine(+ReLU) layer.

    delta: gradient w.r.t. this layer's output (post-activation when
    relu_act is given, which is this layer's own output).  Returns
    (dw, db, delta_prev); the ReLU subgradient at 0 is 0.
    """
    if relu_act is not None:
        delta = delta * (relu_act > 0.0)
    dw = a_in.T @ delta
    db = delta.sum(axis=0)
    delta_prev = delta @ w.T
    return dw, db, delta_prev


def adam_step(param, grad, m, v, t, lr, beta1, beta2, eps):
    """Bias-corrected Adam update, in place on param/m/v."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)
