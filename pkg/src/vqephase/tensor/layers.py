"""Layers used by the encoder, decoder and denoiser networks.

Layers are plain functions ``f(x, params, ...)`` where ``params`` maps short
names (``"W"``, ``"b"``, ...) to leaf tensors. Models keep one flat
:class:`LayerParams` with dotted names and hand each layer its slice.
"""
from __future__ import annotations

import math

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class LayerParams(dict):
    """Ordered name -> Tensor map with dotted-prefix views."""

    def sub(self, prefix: str) -> "LayerParams":
        pre = prefix + "."
        return LayerParams({k[len(pre):]: v for k, v in self.items() if k.startswith(pre)})

    def add(self, prefix: str, params: dict) -> None:
        for k, v in params.items():
            name = f"{prefix}.{k}"
            if name in self:
                raise KeyError(f"duplicate parameter {name}")
            if not v.requires_grad:
                raise ValueError(f"parameter {name} must require grad")
            v.name = name
            self[name] = v

    def zero_grad(self) -> None:
        for v in self.values():
            v.grad = None

    def n_values(self) -> int:
        return int(sum(v.data.size for v in self.values()))

    def state(self) -> dict:
        return {k: v.data.copy() for k, v in self.items()}

    def load_state(self, arrays: dict) -> None:
        if set(arrays) != set(self):
            raise KeyError(f"state keys differ: {sorted(set(arrays) ^ set(self))}")
        for k, v in self.items():
            if arrays[k].shape != v.data.shape:
                raise ValueError(f"{k}: shape {arrays[k].shape} != {v.data.shape}")
            v.data = np.array(arrays[k], dtype=np.float64)


# ---------------------------------------------------------------------------
# Initialisers
# ---------------------------------------------------------------------------


def _uniform(rng, fan_in, shape):
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return ag.parameter(rng.uniform(-bound, bound, shape))


def init_linear(rng, n_in: int, n_out: int) -> dict:
    return {"W": _uniform(rng, n_in, (n_in, n_out)), "b": _uniform(rng, n_in, (n_out,))}


def init_conv1d(rng, c_in: int, c_out: int, kernel: int = 3) -> dict:
    fan = c_in * kernel
    return {"W": _uniform(rng, fan, (kernel, c_in, c_out)), "b": _uniform(rng, fan, (c_out,))}


def init_layer_norm(dim: int) -> dict:
    return {"g": ag.parameter(np.ones(dim)), "b": ag.parameter(np.zeros(dim))}


def init_attention(rng, d_model: int) -> dict:
    return {k: _uniform(rng, d_model, (d_model, d_model)) for k in ("Wq", "Wk", "Wv", "Wo")}


def init_resnet_block(rng, channels: int, kernel: int = 3) -> dict:
    out = {}
    for i in (1, 2):
        for k, v in init_conv1d(rng, channels, channels, kernel).items():
            out[f"conv{i}.{k}"] = v
    return out


def init_mlp(rng, sizes) -> dict:
    out = {}
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        for k, v in init_linear(rng, a, b).items():
            out[f"{i}.{k}"] = v
    return out


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


def linear(x, p) -> Tensor:
    return ag.matmul(x, p["W"]) + p["b"]


def conv1d(x, p) -> Tensor:
    """``x``: ``(B, L, C_in)`` -> ``(B, L, C_out)``, same padding, stride 1."""
    return ag.conv1d_raw(x, p["W"], p.get("b"))


def conv1d_transposed(x, p) -> Tensor:
    """Adjoint of :func:`conv1d` in the input: ``y[m] = sum_k x[m - k + K//2] W[k]``.

    At stride 1 with same padding this is a cross-correlation with the kernel
    reversed along its spatial axis.
    """
    return ag.conv1d_raw(x, ag.getitem(p["W"], slice(None, None, -1)), p.get("b"))


def layer_norm(x, p, eps: float = 1e-5) -> Tensor:
    mu = ag.mean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = ag.mean(xc * xc, axis=-1, keepdims=True)
    return xc * ag.power(var + eps, -0.5) * p["g"] + p["b"]


def attention(x, p, heads: int, return_weights: bool = False):
    """Multi-head scaled dot-product self-attention over the length axis.

    ``x``: ``(B, L, D)``; each head projects to ``D // heads`` features.
    """
    B, L, D = x.shape
    if D % heads:
        raise ValueError(f"d_model={D} is not divisible by heads={heads}")
    dk = D // heads

    def split(t):
        return ag.transpose(ag.reshape(t, (B, L, heads, dk)), (0, 2, 1, 3))

    q = split(ag.matmul(x, p["Wq"]))
    k = split(ag.matmul(x, p["Wk"]))
    v = split(ag.matmul(x, p["Wv"]))
    scores = ag.matmul(q, ag.swap_last(k)) * (1.0 / math.sqrt(dk))
    weights = ag.softmax(scores, axis=-1)
    heads_out = ag.matmul(weights, v)
    merged = ag.reshape(ag.transpose(heads_out, (0, 2, 1, 3)), (B, L, D))
    out = ag.matmul(merged, p["Wo"])
    return (out, weights) if return_weights else out


def resnet_block(x, p, activation: str = "gelu") -> Tensor:
    act = ag.ACTIVATIONS[activation]
    h = act(conv1d(x, _sub(p, "conv1")))
    return x + conv1d(h, _sub(p, "conv2"))


def mlp(x, p, n_layers: int, activation: str = "gelu", final_activation: bool = False) -> Tensor:
    """Stack of ``n_layers`` affine maps with activations in between."""
    act = ag.ACTIVATIONS[activation]
    for i in range(n_layers):
        x = linear(x, _sub(p, str(i)))
        if i < n_layers - 1 or final_activation:
            x = act(x)
    return x


def _sub(p: dict, prefix: str) -> dict:
    pre = prefix + "."
    return {k[len(pre):]: v for k, v in p.items() if k.startswith(pre)}


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def mse_loss(pred, target) -> Tensor:
    """Mean over samples of the per-sample mean squared error."""
    pred, target = ag.as_tensor(pred), ag.as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    d = pred - target
    return ag.mean(d * d)


def kl_gauss(mu, logvar) -> Tensor:
    """KL(N(mu, exp(logvar)) || N(0, I)), summed over latent dims, averaged over rows."""
    mu, logvar = ag.as_tensor(mu), ag.as_tensor(logvar)
    if mu.shape != logvar.shape:
        raise ValueError(f"shape mismatch {mu.shape} vs {logvar.shape}")
    per = mu * mu + ag.exp(logvar) - logvar - 1.0
    total = ag.tsum(per) * 0.5
    rows = mu.shape[0] if mu.ndim > 1 else 1
    return total * (1.0 / rows)
