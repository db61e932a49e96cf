"""Greedy layer-wise stacks and the dropout-regularized pair classifier.

Stacks are trained bottom-up: each layer fits the deterministic hidden
probabilities of the one below. Encoding never samples. The classifier is a
feed-forward sigmoid net trained by backprop with inverted dropout: at train
time each layer input is masked by Bernoulli(1 - r) draws and scaled by
1 / (1 - r); at inference nothing is masked or scaled.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import RngStream, sigmoid
from .rbm import (
    BERNOULLI,
    GAUSSIAN,
    DivergenceError,
    TrainConfig,
    _aggregate_rows,
    cd_train,
    hidden_given_visible,
    init_layer,
)


@dataclass
class FcOptions:
    """First-layer options for a stack: filters, noise model, regularizers.

    Filters and Gaussian units apply to the data-facing layer only; the
    contractive weight applies to every layer in the stack.
    """

    n_filters: int = 0
    filter_size: int = 3
    alpha: float = 0.0
    beta: float = 0.0
    first_layer_gaussian: bool = False
    image_shape: tuple | None = None


@dataclass
class DbnStack:
    layers: list

    @property
    def layer_dims(self):
        dims = [self.layers[0].n_visible]
        dims += [layer.n_hidden for layer in self.layers]
        return dims

    def validate(self):
        for i in range(1, len(self.layers)):
            lo, hi = self.layers[i - 1], self.layers[i]
            if lo.n_hidden != hi.n_visible:
                raise ValueError(
                    f"layer {i}: input width {hi.n_visible} != "
                    f"previous output {lo.n_hidden}"
                )
            if hi.n_filters > 0 or hi.unit_kind == GAUSSIAN:
                raise ValueError("only the first layer may be filtered/gaussian")


def greedy_pretrain(dims, data, cfg, fc=None):
    """Train a stack layer by layer; dims are node counts per layer.

    dims[0] must match the data width. Layer i is trained on the hidden
    probabilities produced by the already-trained layers below it. Only the
    first layer may carry filters or Gaussian units (per ``fc``); the
    contractive weight fc.alpha applies to every layer.
    """
    fc = fc or FcOptions()
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != dims[0]:
        raise ValueError(f"data width {data.shape} does not match dims[0]={dims[0]}")
    if len(dims) < 2:
        raise ValueError("need at least input and one hidden layer")
    stream = RngStream(seed=cfg.seed)
    layers = []
    x = data
    for i in range(len(dims) - 1):
        first = i == 0
        layer = init_layer(
            dims[i], dims[i + 1], stream.child(i),
            unit_kind=GAUSSIAN if (first and fc.first_layer_gaussian) else BERNOULLI,
            n_filters=fc.n_filters if first else 0,
            filter_size=fc.filter_size,
            alpha=fc.alpha,
            beta=fc.beta if first else 0.0,
            image_shape=fc.image_shape if first else None,
        )
        layer_cfg = TrainConfig(
            learning_rate=cfg.learning_rate, epochs=cfg.epochs,
            batch_size=cfg.batch_size, cd_steps=cfg.cd_steps,
            momentum=cfg.momentum, seed=stream.child(1000 + i).seed,
        )
        try:
            layer, _ = cd_train(layer, x, layer_cfg)
        except DivergenceError as exc:
            raise DivergenceError(exc.epoch, f"layer {i}: {exc}") from exc
        layers.append(layer)
        x = hidden_given_visible(_aggregate_rows(x, layer), layer)
    return DbnStack(layers=layers)


def encode(stack, v):
    """Deterministic composition of hidden probabilities through the stack.

    Accepts one vector or a batch of rows; no sampling anywhere.
    """
    v = np.asarray(v, dtype=np.float64)
    squeeze = v.ndim == 1
    x = v[None, :] if squeeze else v
    for layer in stack.layers:
        x = hidden_given_visible(_aggregate_rows(x, layer), layer)
    return x[0] if squeeze else x


@dataclass
class MlpModel:
    """Feed-forward sigmoid net with a 1-unit sigmoid head."""

    weights: list
    biases: list
    dropout_input: float = 0.0
    dropout_hidden: float = 0.0

    def validate(self):
        for r in (self.dropout_input, self.dropout_hidden):
            if not 0.0 <= r < 1.0:
                raise ValueError(f"dropout rate must be in [0, 1), got {r}")
        if self.weights[-1].shape[1] != 1:
            raise ValueError("final layer must have one output unit")


def mlp_init(arch, stream, dropout_input=0.0, dropout_hidden=0.0):
    weights, biases = [], []
    for i in range(len(arch) - 1):
        w = stream.gaussian(arch[i] * arch[i + 1], sigma=0.1)
        weights.append(w.reshape(arch[i], arch[i + 1]))
        biases.append(np.zeros(arch[i + 1]))
    model = MlpModel(weights=weights, biases=biases,
                     dropout_input=dropout_input, dropout_hidden=dropout_hidden)
    model.validate()
    return model


def _forward_train(model, x, stream, masks=None):
    """Masked, scaled forward pass; returns activations and cached inputs."""
    y = np.asarray(x, dtype=np.float64)
    if y.ndim == 1:
        y = y[None, :]
    cache = []
    for layer_idx, (w, b) in enumerate(zip(model.weights, model.biases)):
        r = model.dropout_input if layer_idx == 0 else model.dropout_hidden
        if masks is not None:
            m = masks[layer_idx]
        else:
            m = stream.bernoulli(y.size, 1.0 - r).reshape(y.shape)
        u = y * m / (1.0 - r)
        z = u @ w + b
        out = sigmoid(z)
        cache.append((y, m, u, out))
        y = out
    return y, cache


def dropout_forward(model, x, stream=None, train=False, masks=None):
    """Forward pass with inverted dropout.

    train=True: every layer input is elementwise-masked by Bernoulli(1 - r)
    draws (r = dropout_input for the first layer, dropout_hidden above) and
    scaled by 1 / (1 - r). train=False: plain pass, no masks, no scaling.
    ``masks`` overrides the stream (one array per layer, for reproducing a
    specific sub-network).
    """
    model.validate()
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    y = x[None, :] if squeeze else x
    if not train:
        for w, b in zip(model.weights, model.biases):
            y = sigmoid(y @ w + b)
        return y[0] if squeeze else y
    if stream is None and masks is None:
        raise ValueError("train=True needs a stream or explicit masks")
    y, _ = _forward_train(model, y, stream, masks)
    return y[0] if squeeze else y


def mlp_predict(model, x):
    """Inference probabilities, squeezed to a scalar per sample."""
    out = dropout_forward(model, x, train=False)
    return out[..., 0] if out.ndim > 1 else float(out[0])


def bake_input_scaler(model, mean, std):
    """Fold a (x - mean) / std input transform into the first layer.

    After baking, running the model on raw inputs reproduces the model as
    trained on standardized inputs. Returns the same model, mutated.
    """
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    w0 = model.weights[0] / std[:, None]
    model.biases[0] = model.biases[0] - (mean / std) @ model.weights[0]
    model.weights[0] = w0
    return model


def _bce(p, y):
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def mlp_loss_grads(model, x, y):
    """Cross-entropy loss and exact backprop gradients, dropout disabled."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    n = x.shape[0]
    acts = [x]
    for w, b in zip(model.weights, model.biases):
        acts.append(sigmoid(acts[-1] @ w + b))
    p = acts[-1]
    loss = _bce(p[:, 0], y[:, 0])
    delta = (p - y) / n  # sigmoid + cross-entropy
    gw, gb = [], []
    for layer_idx in range(len(model.weights) - 1, -1, -1):
        gw.insert(0, acts[layer_idx].T @ delta)
        gb.insert(0, delta.sum(axis=0))
        if layer_idx > 0:
            back = delta @ model.weights[layer_idx].T
            delta = back * acts[layer_idx] * (1.0 - acts[layer_idx])
    return loss, {"weights": gw, "biases": gb}


def mlp_train(features, labels, arch, cfg, dropout_input=0.0, dropout_hidden=0.0):
    """Backprop training of the kin/non-kin classifier.

    arch lists node counts from input to the single output unit. Returns
    (model, per-epoch loss history); deterministic given cfg.seed. Raises
    on single-class labels.
    """
    cfg.validate()
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ValueError("features must be (N, D) with one label per row")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise ValueError("labels must be binary")
    if len(np.unique(y)) < 2:
        raise ValueError("degenerate labels: both classes required")
    if arch[0] != x.shape[1] or arch[-1] != 1:
        raise ValueError(f"arch {arch} inconsistent with data width {x.shape[1]}")
    stream = RngStream(seed=cfg.seed)
    model = mlp_init(arch, stream.child(0),
                     dropout_input=dropout_input, dropout_hidden=dropout_hidden)
    sample_stream = stream.child(1)
    mask_stream = stream.child(2)
    vel_w = [np.zeros_like(w) for w in model.weights]
    vel_b = [np.zeros_like(b) for b in model.biases]
    history = []
    yy = y.reshape(-1, 1)
    for _ in range(cfg.epochs):
        order = sample_stream.permutation(x.shape[0])
        losses = []
        for start in range(0, x.shape[0], cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = x[idx], yy[idx]
            out, cache = _forward_train(model, xb, mask_stream)
            losses.append(_bce(out[:, 0], yb[:, 0]))
            delta = (out - yb) / xb.shape[0]
            for layer_idx in range(len(model.weights) - 1, -1, -1):
                _, m, u, _ = cache[layer_idx]
                r = model.dropout_input if layer_idx == 0 else model.dropout_hidden
                gw = u.T @ delta
                gb = delta.sum(axis=0)
                if layer_idx > 0:
                    back = (delta @ model.weights[layer_idx].T) * m / (1.0 - r)
                    prev_out = cache[layer_idx - 1][3]
                    delta = back * prev_out * (1.0 - prev_out)
                vel_w[layer_idx] = (cfg.momentum * vel_w[layer_idx]
                                    - cfg.learning_rate * gw)
                vel_b[layer_idx] = (cfg.momentum * vel_b[layer_idx]
                                    - cfg.learning_rate * gb)
                model.weights[layer_idx] += vel_w[layer_idx]
                model.biases[layer_idx] += vel_b[layer_idx]
        epoch_loss = float(np.mean(losses))
        if not np.isfinite(epoch_loss):
            raise RuntimeError("mlp training loss went non-finite")
        history.append(epoch_loss)
    return model, history
