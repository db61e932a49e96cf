"""Energy-based layers: plain, Gaussian-visible, and filtered contractive RBMs.

A layer owns a D x F weight matrix, biases, optional visible noise scales,
and optional learned convolution filters applied to the (image-shaped)
visible input before it reaches the hidden units. Training is CD-k with
analytic gradients for the contractive and filter-decay regularizers.

Sign convention for Gaussian visibles: the quadratic term enters the energy
with a positive sign, + sum_i (v_i - b_i)^2 / (2 sigma_i^2), so the energy
is bounded below.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    RngStream,
    conv2d_same,
    conv2d_same_kernel_grad,
    sigmoid,
)

BERNOULLI = "bernoulli"
GAUSSIAN = "gaussian"

# filter update stabilizers (see cd_train)
FILTER_RATE_DAMPING = 10.0
FILTER_GRAD_CLIP = 1.0


class DivergenceError(RuntimeError):
    """Raised when parameters go non-finite during training."""

    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"training diverged (NaN/Inf) at epoch {epoch}")


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 10
    batch_size: int = 64
    cd_steps: int = 1
    momentum: float = 0.5
    seed: int = 0

    def validate(self):
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1 or self.cd_steps < 1:
            raise ValueError("batch_size and cd_steps must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")


@dataclass
class RbmLayer:
    """Parameters of one (possibly filtered contractive) RBM layer.

    W: (D, F) weights; a: (F,) hidden biases; b: (D,) visible biases.
    sigma: (D,) visible noise scales, Gaussian units only.
    filters: K small kernels convolved with the visible image and summed;
    K = 0 means a plain layer. image_shape is required when K >= 1 so flat
    visible vectors can be reshaped for convolution.
    alpha scales the contractive penalty, beta the filter L2 decay.
    """

    W: np.ndarray
    a: np.ndarray
    b: np.ndarray
    unit_kind: str = BERNOULLI
    sigma: np.ndarray | None = None
    filters: list = field(default_factory=list)
    alpha: float = 0.0
    beta: float = 0.0
    image_shape: tuple | None = None

    @property
    def n_visible(self):
        return self.W.shape[0]

    @property
    def n_hidden(self):
        return self.W.shape[1]

    @property
    def n_filters(self):
        return len(self.filters)

    def copy(self):
        return RbmLayer(
            W=self.W.copy(),
            a=self.a.copy(),
            b=self.b.copy(),
            unit_kind=self.unit_kind,
            sigma=None if self.sigma is None else self.sigma.copy(),
            filters=[f.copy() for f in self.filters],
            alpha=self.alpha,
            beta=self.beta,
            image_shape=self.image_shape,
        )


def init_layer(n_visible, n_hidden, stream, unit_kind=BERNOULLI, n_filters=0,
               filter_size=3, alpha=0.0, beta=0.0, image_shape=None):
    """Fresh layer: weights N(0, 0.01), zero biases, filters near identity.

    Filter responses are summed, so each filter starts at identity / K plus
    N(0, 0.01) noise: the aggregate stays close to the raw image and a
    freshly filtered layer behaves almost like a plain one.
    """
    if n_filters > 0 and image_shape is None:
        raise ValueError("filtered layers need image_shape")
    if image_shape is not None and image_shape[0] * image_shape[1] != n_visible:
        raise ValueError(
            f"image_shape {image_shape} inconsistent with n_visible {n_visible}"
        )
    W = stream.gaussian(n_visible * n_hidden, sigma=0.01).reshape(n_visible, n_hidden)
    a = np.zeros(n_hidden)
    b = np.zeros(n_visible)
    sigma = np.ones(n_visible) if unit_kind == GAUSSIAN else None
    filters = []
    for _ in range(n_filters):
        f = stream.gaussian(filter_size * filter_size, sigma=0.01)
        f = f.reshape(filter_size, filter_size)
        f[filter_size // 2, filter_size // 2] += 1.0 / n_filters
        filters.append(f)
    return RbmLayer(W=W, a=a, b=b, unit_kind=unit_kind, sigma=sigma,
                    filters=filters, alpha=alpha, beta=beta,
                    image_shape=image_shape)


def _check_sigma(layer):
    if layer.sigma is None or np.any(layer.sigma <= 0):
        raise ValueError("gaussian units need sigma > 0")


def _as_batch(v, width, what):
    v = np.asarray(v, dtype=np.float64)
    squeeze = v.ndim == 1
    if squeeze:
        v = v[None, :]
    if v.ndim != 2 or v.shape[1] != width:
        raise ValueError(f"{what}: expected width {width}, got shape {v.shape}")
    return v, squeeze


def energy_bernoulli(v, h, layer):
    """E(v, h) = -v^T W h - b^T v - a^T h for binary units."""
    if layer.unit_kind != BERNOULLI:
        raise ValueError("energy_bernoulli needs a bernoulli layer")
    v = np.asarray(v, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if v.shape != (layer.n_visible,) or h.shape != (layer.n_hidden,):
        raise ValueError(
            f"shape mismatch: v {v.shape}, h {h.shape}, "
            f"layer {layer.n_visible}x{layer.n_hidden}"
        )
    return float(-v @ layer.W @ h - layer.b @ v - layer.a @ h)


def energy_gaussian(v, h, layer):
    """Gaussian-visible energy, bounded below.

    E(v, h) = -sum_ij (v_i / sigma_i) W_ij h_j
              + sum_i (v_i - b_i)^2 / (2 sigma_i^2) - a^T h
    """
    if layer.unit_kind != GAUSSIAN:
        raise ValueError("energy_gaussian needs a gaussian layer")
    _check_sigma(layer)
    v = np.asarray(v, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if v.shape != (layer.n_visible,) or h.shape != (layer.n_hidden,):
        raise ValueError(
            f"shape mismatch: v {v.shape}, h {h.shape}, "
            f"layer {layer.n_visible}x{layer.n_hidden}"
        )
    quad = np.sum((v - layer.b) ** 2 / (2.0 * layer.sigma ** 2))
    return float(-(v / layer.sigma) @ layer.W @ h + quad - layer.a @ h)


def hidden_given_visible(v, layer):
    """p(h_j = 1 | v), factorized over hidden units.

    Accepts a single vector or a batch of row vectors. For filtered layers
    ``v`` is the filter-aggregated visible (see apply_filters); for Gaussian
    layers the visibles are scaled by 1 / sigma before the weights.
    """
    v, squeeze = _as_batch(v, layer.n_visible, "hidden_given_visible")
    if layer.unit_kind == GAUSSIAN:
        _check_sigma(layer)
        v = v / layer.sigma
    p = sigmoid(v @ layer.W + layer.a)
    return p[0] if squeeze else p


def visible_given_hidden(h, layer):
    """Visible conditional parameters given hidden activity.

    Bernoulli: p(v_i = 1 | h) = sigmoid((W h)_i + b_i).
    Gaussian: mean b_i + sigma_i (W h)_i (the per-unit std is layer.sigma).
    """
    h, squeeze = _as_batch(h, layer.n_hidden, "visible_given_hidden")
    pre = h @ layer.W.T
    if layer.unit_kind == GAUSSIAN:
        _check_sigma(layer)
        out = layer.b + layer.sigma * pre
    else:
        out = sigmoid(pre + layer.b)
    return out[0] if squeeze else out


def filter_responses(image, layer):
    """Individual filtered images V_k = conv2d_same(image, f_k)."""
    if layer.n_filters == 0:
        raise ValueError("layer has no filters")
    image = np.asarray(image, dtype=np.float64)
    if layer.image_shape is not None and image.shape != tuple(layer.image_shape):
        raise ValueError(
            f"image shape {image.shape} != layer image_shape {layer.image_shape}"
        )
    return [conv2d_same(image, f) for f in layer.filters]


def apply_filters(image, layer):
    """Aggregated visible: flatten(sum_k conv2d_same(image, f_k))."""
    responses = filter_responses(image, layer)
    total = responses[0]
    for r in responses[1:]:
        total = total + r
    return total.ravel()


def _aggregate_rows(X, layer):
    """Filter-aggregate a batch of flattened images (no-op for K = 0)."""
    if layer.n_filters == 0:
        return X
    h, w = layer.image_shape
    out = np.empty_like(X)
    for n in range(X.shape[0]):
        out[n] = apply_filters(X[n].reshape(h, w), layer)
    return out


def _filter_grads_from_dv(X, dV, layer):
    """Chain batch gradients on the aggregated visible back to each filter."""
    h, w = layer.image_shape
    grads = [np.zeros_like(f) for f in layer.filters]
    for n in range(X.shape[0]):
        img = X[n].reshape(h, w)
        g = dV[n].reshape(h, w)
        for k, f in enumerate(layer.filters):
            grads[k] += conv2d_same_kernel_grad(img, g, f.shape)
    return grads


def _contractive_terms(layer, V, activation="sigmoid"):
    """Penalty value plus exact gradients w.r.t. W, a and the input rows.

    V rows are the vectors the hidden layer actually sees (aggregate first
    for filtered layers). With the sigmoid activation the penalty is the
    squared Frobenius norm of the hidden Jacobian, batch-averaged:
    mean_n sum_j (phi_j (1 - phi_j))^2 sum_i W_ij^2. In linear mode the
    derivative factor is 1 and the value collapses to the weight-decay sum.
    """
    n = V.shape[0]
    w2 = np.sum(layer.W ** 2, axis=0)  # (F,)
    scale = layer.sigma if layer.unit_kind == GAUSSIAN else None
    Vs = V / scale if scale is not None else V
    if activation == "linear":
        value = float(np.sum(w2))
        dW = 2.0 * layer.W
        da = np.zeros_like(layer.a)
        dV = np.zeros_like(V)
        return value, dW, da, dV
    if activation != "sigmoid":
        raise ValueError(f"unknown activation {activation!r}")
    phi = sigmoid(Vs @ layer.W + layer.a)  # (N, F)
    s = phi * (1.0 - phi)
    s2 = s ** 2
    value = float(np.mean(s2 @ w2))
    # d(value)/d(pre-activation): 2 s^2 (1 - 2 phi) w2, batch-averaged
    dz = 2.0 * s2 * (1.0 - 2.0 * phi) * w2 / n
    da = dz.sum(axis=0)
    dW = Vs.T @ dz + 2.0 * layer.W * s2.sum(axis=0) / n
    dV = dz @ layer.W.T
    if scale is not None:
        dV = dV / scale
    return value, dW, da, dV


def contractive_penalty(layer, batch, activation="sigmoid"):
    """Batch-averaged contractive penalty with analytic W and a gradients.

    ``batch`` rows are the visible vectors seen by the hidden layer
    (filter-aggregated for filtered layers). Returns (value, grads) where
    grads maps "W" and "a" to exact derivatives of the value.
    """
    batch, _ = _as_batch(batch, layer.n_visible, "contractive_penalty")
    if batch.shape[0] == 0:
        raise ValueError("contractive_penalty: empty batch")
    value, dW, da, _ = _contractive_terms(layer, batch, activation)
    return value, {"W": dW, "a": da}


def _reconstruction_terms(layer, V):
    """Deterministic one-step reconstruction error and its gradients.

    phi = p(h | V), Vhat = visible conditional mean given phi; the loss is
    mean over batch entries of (Vhat - V)^2. Returns the loss, gradients on
    W, a, b, and the total gradient on V (both the target path and the
    encoding path).
    """
    n, d = V.shape
    scale = layer.sigma if layer.unit_kind == GAUSSIAN else None
    Vs = V / scale if scale is not None else V
    z1 = Vs @ layer.W + layer.a
    phi = sigmoid(z1)
    pre2 = phi @ layer.W.T
    if layer.unit_kind == GAUSSIAN:
        vhat = layer.b + scale * pre2
    else:
        vhat = sigmoid(pre2 + layer.b)
    diff = vhat - V
    loss = float(np.mean(diff ** 2))
    g0 = 2.0 * diff / (n * d)  # dL/dVhat
    if layer.unit_kind == GAUSSIAN:
        g2 = g0 * scale  # dL/dpre2
        db = g0.sum(axis=0)
    else:
        g2 = g0 * vhat * (1.0 - vhat)
        db = g2.sum(axis=0)
    dW = g2.T @ phi  # decode path
    dh = g2 @ layer.W
    g1 = dh * phi * (1.0 - phi)
    da = g1.sum(axis=0)
    dW += Vs.T @ g1  # encode path
    dV = -g0 + (g1 @ layer.W.T) / scale if scale is not None else -g0 + g1 @ layer.W.T
    return loss, dW, da, db, dV


def fc_loss(layer, batch):
    """Training objective proxy: reconstruction + regularizers.

    mean squared one-step reconstruction error (on filter-aggregated
    visibles when the layer has filters) + alpha * contractive penalty
    + beta * sum_k ||f_k||_2^2. The exact negative log-likelihood is
    intractable; this is the quantity training histories monitor.
    """
    value, _ = fc_loss_grads(layer, batch)
    return value


def fc_loss_grads(layer, batch):
    """fc_loss value plus exact analytic gradients for W, a, b and filters."""
    width = layer.n_visible
    batch, _ = _as_batch(batch, width, "fc_loss")
    if batch.shape[0] == 0:
        raise ValueError("fc_loss: empty batch")
    V = _aggregate_rows(batch, layer)
    recon, dW, da, db, dV = _reconstruction_terms(layer, V)
    value = recon
    if layer.alpha != 0.0:
        pval, pW, pa, pV = _contractive_terms(layer, V)
        value += layer.alpha * pval
        dW = dW + layer.alpha * pW
        da = da + layer.alpha * pa
        dV = dV + layer.alpha * pV
    grads = {"W": dW, "a": da, "b": db}
    if layer.n_filters > 0:
        fgrads = _filter_grads_from_dv(batch, dV, layer)
        if layer.beta != 0.0:
            value += layer.beta * sum(float(np.sum(f ** 2)) for f in layer.filters)
            fgrads = [g + 2.0 * layer.beta * f
                      for g, f in zip(fgrads, layer.filters)]
        grads["filters"] = fgrads
    return value, grads


def cd_gradients(layer, batch, stream, cd_steps=1):
    """CD-k log-likelihood ascent estimate (no regularizers).

    Hidden states are sampled along the chain; visible reconstructions use
    conditional means. Filter gradients descend the deterministic
    reconstruction proxy instead of chaining the likelihood term: with
    sigma fixed, the likelihood of the filtered visibles is maximized by a
    zero-sum kernel that erases the input, so the likelihood chain drives
    every filter toward that degenerate point. The reconstruction anchor
    keeps the aggregate informative. Returns (grads dict, mean one-step
    reconstruction error).
    """
    X, _ = _as_batch(batch, layer.n_visible, "cd_gradients")
    n = X.shape[0]
    V = _aggregate_rows(X, layer)
    scale = layer.sigma if layer.unit_kind == GAUSSIAN else None
    Vs = V / scale if scale is not None else V

    h0 = hidden_given_visible(V, layer)
    hs = (stream.uniform01(h0.size).reshape(h0.shape) < h0).astype(np.float64)
    vk = V
    for _ in range(cd_steps):
        vk = visible_given_hidden(hs, layer)
        hk = hidden_given_visible(vk, layer)
        hs = (stream.uniform01(hk.size).reshape(hk.shape) < hk).astype(np.float64)
    vks = vk / scale if scale is not None else vk

    gW = (Vs.T @ h0 - vks.T @ hk) / n
    ga = (h0 - hk).mean(axis=0)
    if layer.unit_kind == GAUSSIAN:
        gb = ((V - vk) / layer.sigma ** 2).mean(axis=0)
    else:
        gb = (V - vk).mean(axis=0)
    grads = {"W": gW, "a": ga, "b": gb}
    if layer.n_filters > 0:
        _, _, _, _, dV = _reconstruction_terms(layer, V)
        grads["filters"] = [-g for g in _filter_grads_from_dv(X, dV, layer)]
    recon = float(np.mean((visible_given_hidden(h0, layer) - V) ** 2))
    return grads, recon


def cd_train(layer, data, cfg):
    """Contrastive-divergence training of one layer.

    Returns (trained copy, per-epoch mean reconstruction error). The input
    layer is not mutated. Deterministic given cfg.seed; raises
    DivergenceError naming the epoch if any parameter goes non-finite.
    """
    cfg.validate()
    data, _ = _as_batch(data, layer.n_visible, "cd_train")
    if data.shape[0] == 0:
        raise ValueError("cd_train: empty data")
    out = layer.copy()
    stream = RngStream(seed=cfg.seed)
    order = stream.permutation(data.shape[0])
    data = data[order]
    batches = [data[i:i + cfg.batch_size]
               for i in range(0, data.shape[0], cfg.batch_size)]
    vel = {"W": np.zeros_like(out.W), "a": np.zeros_like(out.a),
           "b": np.zeros_like(out.b),
           "filters": [np.zeros_like(f) for f in out.filters]}
    history = []
    for epoch in range(cfg.epochs):
        errs = []
        for batch in batches:
            like, recon = cd_gradients(out, batch, stream, cfg.cd_steps)
            errs.append(recon)
            step = {k: like[k].copy() if k != "filters"
                    else [g.copy() for g in like[k]] for k in like}
            if out.alpha != 0.0:
                V = _aggregate_rows(batch, out)
                _, pW, pa, pV = _contractive_terms(out, V)
                step["W"] -= out.alpha * pW
                step["a"] -= out.alpha * pa
                if out.n_filters > 0:
                    pf = _filter_grads_from_dv(batch, pV, out)
                    step["filters"] = [g - out.alpha * dgf
                                       for g, dgf in zip(step["filters"], pf)]
            if out.beta != 0.0 and out.n_filters > 0:
                step["filters"] = [g - 2.0 * out.beta * f
                                   for g, f in zip(step["filters"], out.filters)]
            vel["W"] = cfg.momentum * vel["W"] + cfg.learning_rate * step["W"]
            vel["a"] = cfg.momentum * vel["a"] + cfg.learning_rate * step["a"]
            vel["b"] = cfg.momentum * vel["b"] + cfg.learning_rate * step["b"]
            out.W += vel["W"]
            out.a += vel["a"]
            out.b += vel["b"]
            if out.n_filters > 0 and "filters" in step:
                # bounded filter steps: norm-clip each gradient and damp the
                # rate so the filter/weight feedback loop cannot run away
                filter_lr = cfg.learning_rate / FILTER_RATE_DAMPING
                for k in range(out.n_filters):
                    g = step["filters"][k]
                    norm = float(np.linalg.norm(g))
                    if norm > FILTER_GRAD_CLIP:
                        g = g * (FILTER_GRAD_CLIP / norm)
                    vel["filters"][k] = (cfg.momentum * vel["filters"][k]
                                         + filter_lr * g)
                    out.filters[k] += vel["filters"][k]
        history.append(float(np.mean(errs)))
        params = [out.W, out.a, out.b] + out.filters
        if not all(np.all(np.isfinite(p)) for p in params):
            raise DivergenceError(epoch + 1)
    return out, history
