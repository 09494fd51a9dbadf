"""Random model and query generation for tests and benchmarks.

Batch-norm statistics are drawn so unit thresholds land inside the reachable
pre-activation range; otherwise every unit constant-folds and the generated
queries are vacuous. Everything is driven by a caller-supplied numpy
Generator, so corpora are reproducible from a seed.
"""

from __future__ import annotations

import numpy as np

from . import model as bnn
from .encoder import pixel_interval


def random_dense_layer(rng, n_in, n_out, is_output=False, sparsity=0.3,
                       mean_scale=None, allow_negative_gamma=True):
    w = rng.choice((-1, 0, 1), size=(n_out, n_in),
                   p=(0.5 * (1 - sparsity), sparsity, 0.5 * (1 - sparsity)))
    nch = 1 if is_output else n_out
    gamma = rng.uniform(0.5, 2.0, nch)
    if allow_negative_gamma and not is_output:
        gamma = gamma * rng.choice((-1.0, 1.0), nch)
    var = rng.uniform(0.25, 4.0, nch)
    if mean_scale is None:
        mean_scale = max(1.0, n_in / 4)
    mean = rng.uniform(-mean_scale, mean_scale, n_out)
    beta = rng.uniform(-1.5, 1.5, n_out)
    return bnn.BnnLayer(
        kind="dense",
        weight_sign=np.asarray(w, dtype=np.int64),
        bn_gamma=np.asarray(gamma, dtype=np.float64),
        bn_beta=np.asarray(beta, dtype=np.float64),
        bn_mean=np.asarray(mean, dtype=np.float64),
        bn_var=np.asarray(var, dtype=np.float64),
        is_output=is_output,
    )


def random_conv_layer(rng, in_shape, out_channels, kernel=(2, 2),
                      stride=(1, 1), padding=(0, 0), sparsity=0.25,
                      mean_scale=None):
    h, w, c = in_shape
    kh, kw = kernel
    wgt = rng.choice((-1, 0, 1), size=(out_channels, c, kh, kw),
                     p=(0.5 * (1 - sparsity), sparsity, 0.5 * (1 - sparsity)))
    fan_in = c * kh * kw
    if mean_scale is None:
        mean_scale = fan_in / 3
    gamma = rng.uniform(0.5, 2.0, out_channels) * rng.choice(
        (-1.0, 1.0), out_channels)
    return bnn.BnnLayer(
        kind="conv",
        weight_sign=np.asarray(wgt, dtype=np.int64),
        bn_gamma=np.asarray(gamma, dtype=np.float64),
        bn_beta=np.asarray(rng.uniform(-1.5, 1.5, out_channels)),
        bn_mean=np.asarray(rng.uniform(-mean_scale, mean_scale, out_channels)),
        bn_var=np.asarray(rng.uniform(0.25, 4.0, out_channels)),
        stride=stride,
        padding=padding,
    )


def random_tiny_model(rng, input_shape=(1, 4, 1), hidden=(3,), num_classes=3,
                      quant_step=0.4, with_conv=False) -> bnn.BnnModel:
    """2-3 layer model small enough for grid enumeration."""
    layers = []
    shape = input_shape
    size = shape[0] * shape[1] * shape[2]
    scale = 1.0 / quant_step
    if with_conv:
        layer = random_conv_layer(rng, shape, out_channels=2, kernel=(2, 2),
                                  stride=(1, 1), padding=(0, 1))
        layer.bn_mean = layer.bn_mean * scale  # sees integer pixels
        layers.append(layer)
        oh = shape[0] + 2 * layer.padding[0] - 1
        ow = shape[1] + 2 * layer.padding[1] - 1
        shape = (oh, ow, 2)
        size = oh * ow * 2
    for nh in hidden:
        lyr = random_dense_layer(rng, size, nh)
        if not layers:
            lyr.bn_mean = lyr.bn_mean * scale
        layers.append(lyr)
        shape = (1, 1, nh)
        size = nh
    layers.append(random_dense_layer(rng, size, num_classes, is_output=True))
    return bnn.validate_model(bnn.BnnModel(
        layers=layers, input_shape=input_shape, quant_step=quant_step))


def random_bench_model(rng, n_pixels=16, hidden=(16, 12), num_classes=10,
                       quant_step=0.5, sparsity=0.2) -> bnn.BnnModel:
    """Medium dense model for the native-vs-CNF solving comparison."""
    layers = []
    size = n_pixels
    scale = 1.0 / quant_step
    for nh in hidden:
        lyr = random_dense_layer(rng, size, nh, sparsity=sparsity)
        if not layers:
            lyr.bn_mean = lyr.bn_mean * scale
        layers.append(lyr)
        size = nh
    layers.append(random_dense_layer(rng, size, num_classes,
                                     is_output=True, sparsity=sparsity))
    return bnn.validate_model(bnn.BnnModel(
        layers=layers, input_shape=(1, n_pixels, 1), quant_step=quant_step))


def perturbable_steps(model, x0, eps) -> int:
    """Total integer freedom of the quantized perturbation ball."""
    return sum(hi - lo
               for lo, hi in (pixel_interval(x, eps, model.quant_step)
                              for x in np.asarray(x0).reshape(-1)))


def calibrate_eps(model, x0, target_steps, max_eps=1.0) -> float:
    """Smallest eps from a fixed ladder giving at least target_steps freedom."""
    eps = float(model.quant_step) / 4
    while eps < max_eps and perturbable_steps(model, x0, eps) < target_steps:
        eps *= 1.3
    return min(eps, max_eps)


def random_correct_query(rng, model, target_steps, max_tries=50):
    """(x0, label, eps): label is the clean prediction, freedom calibrated.

    Returns None if the model never yields a strict prediction (degenerate).
    """
    for _ in range(max_tries):
        x0 = rng.uniform(0, 1, model.input_size)
        q = bnn.quantize_input(model, x0)
        res = bnn.infer(model, q)
        label = res.predicted
        if res.misclassifies(label):  # tie: no strict prediction
            continue
        eps = calibrate_eps(model, x0, target_steps)
        return x0, label, eps
    return None


def tiny_query_corpus(seed, count, with_conv_fraction=0.5, max_steps=12):
    """Deterministic corpus of (model, x0, label, eps) with bounded freedom."""
    rng = np.random.default_rng(seed)
    corpus = []
    while len(corpus) < count:
        with_conv = rng.random() < with_conv_fraction
        if with_conv:
            model = random_tiny_model(
                rng, input_shape=(2, 3, 1), hidden=(3,), num_classes=3,
                quant_step=float(rng.choice((0.34, 0.4, 0.5))),
                with_conv=True)
        else:
            model = random_tiny_model(
                rng, input_shape=(1, 4, 1),
                hidden=(4,) if rng.random() < 0.5 else (3, 3),
                num_classes=int(rng.integers(2, 5)),
                quant_step=float(rng.choice((0.3, 0.4, 0.5))))
        q = random_correct_query(rng, model, target_steps=int(
            rng.integers(4, max_steps + 1)))
        if q is None:
            continue
        x0, label, eps = q
        if perturbable_steps(model, x0, eps) > max_steps:
            continue
        corpus.append((model, x0, label, eps))
    return corpus
