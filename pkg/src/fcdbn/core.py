"""Deterministic numeric primitives shared by every other module.

Everything here is pure: dense float64 arrays in, dense float64 arrays out.
The random stream is counter-based so that a (seed, counter) pair fully
determines the draw sequence on any platform.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Upper clamp keeps sigmoid strictly below 1.0 in float64.
_SIGMOID_CEIL = 1.0 - 2.0 ** -53


def sigmoid(x):
    """Elementwise logistic function 1 / (1 + exp(-x)).

    Inputs are clamped to [-500, 500] before exponentiation, so the result
    never overflows and stays strictly inside (0, 1) for all finite inputs.
    """
    x = np.asarray(x, dtype=np.float64)
    z = np.clip(x, -500.0, 500.0)
    out = 1.0 / (1.0 + np.exp(-z))
    return np.minimum(out, _SIGMOID_CEIL)


def sigmoid_prime(x):
    """Derivative of ``sigmoid`` evaluated at x: s(x) * (1 - s(x))."""
    s = sigmoid(x)
    return s * (1.0 - s)


def _check_kernel(image, kernel):
    if image.ndim != 2 or kernel.ndim != 2:
        raise ValueError("conv2d_same expects 2-D arrays")
    kr, kc = kernel.shape
    if kr % 2 == 0 or kc % 2 == 0:
        raise ValueError(f"kernel dims must be odd, got {kr}x{kc}")
    if kr > image.shape[0] or kc > image.shape[1]:
        raise ValueError(
            f"kernel {kr}x{kc} larger than image {image.shape[0]}x{image.shape[1]}"
        )


def conv2d_same(image, kernel):
    """2-D convolution with 'same' zero padding.

    True convolution (the kernel is flipped): out[r, c] =
    sum_{p,q} kernel[p, q] * image[r - p + cp, c - q + cq], with entries
    outside the image treated as zero and (cp, cq) the kernel center.
    Output dims equal input dims. Kernel dims must be odd.
    """
    image = np.asarray(image, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    _check_kernel(image, kernel)
    h, w = image.shape
    kr, kc = kernel.shape
    cp, cq = kr // 2, kc // 2
    padded = np.zeros((h + 2 * cp, w + 2 * cq))
    padded[cp:cp + h, cq:cq + w] = image
    out = np.zeros((h, w))
    for p in range(kr):
        for q in range(kc):
            out += kernel[p, q] * padded[2 * cp - p:2 * cp - p + h,
                                         2 * cq - q:2 * cq - q + w]
    return out


def conv2d_same_kernel_grad(image, upstream, kernel_shape):
    """Gradient of sum(upstream * conv2d_same(image, kernel)) w.r.t. kernel.

    ``upstream`` has the image's shape; returns an array of kernel_shape.
    """
    image = np.asarray(image, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    h, w = image.shape
    kr, kc = kernel_shape
    cp, cq = kr // 2, kc // 2
    padded = np.zeros((h + 2 * cp, w + 2 * cq))
    padded[cp:cp + h, cq:cq + w] = image
    grad = np.zeros((kr, kc))
    for p in range(kr):
        for q in range(kc):
            grad[p, q] = np.sum(upstream * padded[2 * cp - p:2 * cp - p + h,
                                                  2 * cq - q:2 * cq - q + w])
    return grad


def conv2d_same_image_grad(upstream, kernel):
    """Gradient of sum(upstream * conv2d_same(image, kernel)) w.r.t. image."""
    kernel = np.asarray(kernel, dtype=np.float64)
    return conv2d_same(upstream, kernel[::-1, ::-1])


# --- counter-based random stream -------------------------------------------
#
# Draw i is a pure function of (seed, counter + i): the 64-bit state
# seed + (counter + i) * GOLDEN is passed through the splitmix64 finalizer
# (two xor-shift-multiply rounds), giving one 64-bit word per counter value.
# uniform01 maps the top 53 bits to [0, 1); gaussian consumes two words per
# value via Box-Muller with u1 mapped to (0, 1]; bernoulli consumes one word
# per value. Counter advances: uniform01/bernoulli by n, gaussian by 2n.

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U53 = 2.0 ** -53


def _splitmix(state):
    z = state
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@dataclass
class RngStream:
    """Counter-based random stream; single-owner per logical task."""

    seed: int
    counter: int = 0

    def _words(self, n):
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        state = np.uint64(self.seed & 0xFFFFFFFFFFFFFFFF) + idx * _GOLDEN
        return _splitmix(state)

    def uniform01(self, n):
        """n draws uniform on [0, 1); advances the counter by n."""
        return (self._words(n) >> np.uint64(11)).astype(np.float64) * _U53

    def gaussian(self, n, mu=0.0, sigma=1.0):
        """n Gaussian draws via Box-Muller; advances the counter by 2n."""
        if sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {sigma}")
        words = self._words(2 * n)
        u1 = ((words[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * _U53
        u2 = (words[1::2] >> np.uint64(11)).astype(np.float64) * _U53
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return mu + sigma * z

    def bernoulli(self, n, p):
        """n draws in {0.0, 1.0} with P(1) = p; advances the counter by n."""
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"bernoulli p must be in [0, 1], got {p}")
        return (self.uniform01(n) < p).astype(np.float64)

    def permutation(self, n):
        """Deterministic random permutation of range(n); advances by n."""
        return np.argsort(self.uniform01(n), kind="stable")

    def child(self, index):
        """Independent substream derived from (seed, index)."""
        mask = 0xFFFFFFFFFFFFFFFF
        state = ((self.seed & mask) * int(_MIX1) + (index + 1) * int(_GOLDEN)) & mask
        z = (state ^ (state >> 30)) * int(_MIX1) & mask
        z = (z ^ (z >> 27)) * int(_MIX2) & mask
        return RngStream(seed=z ^ (z >> 31))
