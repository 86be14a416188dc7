"""Attention VAE, conditional VAE and latent conditional diffusion.

The estimators follow the scikit-learn protocol: hyperparameters are constructor
arguments (so ``get_params``/``set_params``/``clone`` work), learned state lives
in trailing-underscore attributes set by ``fit``.

Encoder: three same-padded 1D convolutions (1 -> 8 -> 16 -> 32 channels), a
pre-normalised multi-head self-attention layer with a residual connection, a
residual convolution block, and an MLP head producing ``mu`` and ``log sigma^2``.
Decoder: an MLP back to ``(input_len, 32)`` followed by transposed convolutions
32 -> 16 -> 8 -> 1.
"""
from __future__ import annotations

import hashlib
import logging
import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .tensor import autograd as ag
from .tensor import layers as L
from .tensor.checkpoint import load_checkpoint, save_checkpoint
from .tensor.optim import Adam
from .validation import check_fitted, check_labels, check_matrix

logger = logging.getLogger(__name__)

CHANNELS = (8, 16, 32)


class TrainingError(RuntimeError):
    pass


def reparameterize(mu, logvar, eps) -> np.ndarray:
    """``z = mu + exp(logvar / 2) * eps``."""
    mu, logvar, eps = (np.asarray(a, dtype=np.float64) for a in (mu, logvar, eps))
    if not (mu.shape == logvar.shape == eps.shape):
        raise ValueError(f"shape mismatch {mu.shape}, {logvar.shape}, {eps.shape}")
    return mu + np.exp(0.5 * logvar) * eps


def _params_hash(params: dict) -> str:
    h = hashlib.sha256()
    for k in sorted(params):
        h.update(k.encode())
        h.update(np.ascontiguousarray(params[k].data, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


class AttentionVAE(BaseEstimator, TransformerMixin):
    """Variational autoencoder over flattened circuit-parameter vectors.

    Parameters
    ----------
    d_latent : int
        Latent dimension.
    beta : float
        Weight of the KL term in ``MSE + beta * KL``.
    epochs, batch_size, learning_rate : training schedule (Adam).
    heads : int
        Attention heads over the 32-channel feature map.
    kernel_size : int
        Odd convolution width used by every convolution.
    hidden : int
        Width of the MLP layers between the feature map and the latent space.
    attention : bool
        ``False`` drops the attention layer (CNN-only ablation).
    activation : {"gelu", "relu", "tanh", "silu"}
    seed : int
        Seeds weight initialisation, shuffling and reparameterisation noise.
    """

    conditional = False

    def __init__(self, d_latent=16, beta=1e-3, epochs=200, batch_size=32, learning_rate=1e-3,
                 heads=4, kernel_size=3, hidden=128, attention=True, activation="gelu", seed=0,
                 verbose=False):
        self.d_latent = d_latent
        self.beta = beta
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.heads = heads
        self.kernel_size = kernel_size
        self.hidden = hidden
        self.attention = attention
        self.activation = activation
        self.seed = seed
        self.verbose = verbose

    # -- network -----------------------------------------------------------
    def _build(self, input_len: int, n_cond: int, rng) -> L.LayerParams:
        if self.d_latent < 1:
            raise ValueError("d_latent must be >= 1")
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd")
        c1, c2, c3 = CHANNELS
        if c3 % self.heads:
            raise ValueError(f"{c3} channels are not divisible by {self.heads} heads")
        k, h, d = self.kernel_size, self.hidden, self.d_latent
        p = L.LayerParams()
        p.add("enc.conv1", L.init_conv1d(rng, 1, c1, k))
        p.add("enc.conv2", L.init_conv1d(rng, c1, c2, k))
        p.add("enc.conv3", L.init_conv1d(rng, c2, c3, k))
        if self.attention:
            p.add("enc.ln", L.init_layer_norm(c3))
            p.add("enc.attn", L.init_attention(rng, c3))
        p.add("enc.res", L.init_resnet_block(rng, c3, k))
        p.add("enc.fc", L.init_linear(rng, input_len * c3, h))
        p.add("enc.mu", L.init_linear(rng, h, d))
        p.add("enc.logvar", L.init_linear(rng, h, d))
        p.add("dec.fc", L.init_mlp(rng, (d + n_cond, h, input_len * c3)))
        p.add("dec.up1", L.init_conv1d(rng, c3, c2, k))
        p.add("dec.up2", L.init_conv1d(rng, c2, c1, k))
        p.add("dec.up3", L.init_conv1d(rng, c1, 1, k))
        # the logvar head starts near zero so early KL terms stay bounded
        p["enc.logvar.W"].data *= 0.01
        p["enc.logvar.b"].data[:] = 0.0
        return p

    def _encode_t(self, p, x):
        act = ag.ACTIVATIONS[self.activation]
        B, n = x.shape
        h = ag.reshape(x, (B, n, 1))
        for name in ("enc.conv1", "enc.conv2", "enc.conv3"):
            h = act(L.conv1d(h, p.sub(name)))
        if self.attention:
            h = h + L.attention(L.layer_norm(h, p.sub("enc.ln")), p.sub("enc.attn"), self.heads)
        h = L.resnet_block(h, p.sub("enc.res"), self.activation)
        h = act(L.linear(ag.reshape(h, (B, n * CHANNELS[2])), p.sub("enc.fc")))
        return L.linear(h, p.sub("enc.mu")), L.linear(h, p.sub("enc.logvar"))

    def _decode_t(self, p, z, cond=None):
        act = ag.ACTIVATIONS[self.activation]
        if cond is not None:
            z = ag.concat([ag.as_tensor(z), ag.as_tensor(cond)], axis=-1)
        B = z.shape[0]
        n = self.input_len_
        h = act(L.mlp(z, p.sub("dec.fc"), 2, self.activation))
        h = ag.reshape(h, (B, n, CHANNELS[2]))
        h = act(L.conv1d_transposed(h, p.sub("dec.up1")))
        h = act(L.conv1d_transposed(h, p.sub("dec.up2")))
        h = L.conv1d_transposed(h, p.sub("dec.up3"))
        return ag.reshape(h, (B, n))

    # -- training ----------------------------------------------------------
    def _cond_matrix(self, y):
        return None

    def fit(self, X, y=None):
        X = check_matrix(X, "X")
        rng = np.random.default_rng(self.seed)
        self.input_len_ = X.shape[1]
        self.mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        self.scale_ = np.where(scale > 1e-12, scale, 1.0)
        Xs = (X - self.mean_) / self.scale_
        cond = self._prepare_conditions(y, X.shape[0])
        n_cond = 0 if cond is None else cond.shape[1]
        self.params_ = self._build(self.input_len_, n_cond, rng)
        opt = Adam(self.params_, lr=self.learning_rate)
        self.loss_history_ = []
        self.recon_history_ = []
        self.kl_history_ = []
        n = X.shape[0]
        bs = min(self.batch_size, n)
        for epoch in range(self.epochs):
            order = rng.permutation(n)
            tot = rec_tot = kl_tot = 0.0
            for start in range(0, n, bs):
                idx = order[start:start + bs]
                xb = ag.Tensor(Xs[idx])
                mu, logvar = self._encode_t(self.params_, xb)
                eps = rng.standard_normal(mu.shape)
                z = mu + ag.exp(logvar * 0.5) * eps
                xhat = self._decode_t(self.params_, z, None if cond is None else cond[idx])
                rec = L.mse_loss(xhat, xb)
                kl = L.kl_gauss(mu, logvar)
                loss = rec + kl * self.beta if self.beta else rec
                if not math.isfinite(loss.item()):
                    raise TrainingError(f"loss became non-finite at epoch {epoch}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                w = len(idx) / n
                tot += w * loss.item()
                rec_tot += w * rec.item()
                kl_tot += w * kl.item()
            self.loss_history_.append(tot)
            self.recon_history_.append(rec_tot)
            self.kl_history_.append(kl_tot)
            if self.verbose and (epoch % 10 == 0 or epoch == self.epochs - 1):
                logger.info("epoch %d loss %.5f recon %.5f kl %.3f", epoch, tot, rec_tot, kl_tot)
        return self

    def _prepare_conditions(self, y, n):
        return None

    # -- inference ---------------------------------------------------------
    def _batched(self, fn, *arrays, batch=256):
        outs = []
        for start in range(0, arrays[0].shape[0], batch):
            outs.append(fn(*[a[start:start + batch] for a in arrays]))
        if not outs:
            return None
        if isinstance(outs[0], tuple):
            return tuple(np.concatenate(parts) for parts in zip(*outs))
        return np.concatenate(outs)

    def encode(self, X):
        """Return ``(mu, logvar)`` for rows of ``X`` (raw radians)."""
        check_fitted(self, "params_")
        X = check_matrix(X, "X", n_features=self.input_len_)
        if X.shape[0] == 0:
            return np.zeros((0, self.d_latent)), np.zeros((0, self.d_latent))
        Xs = (X - self.mean_) / self.scale_

        def run(xb):
            mu, lv = self._encode_t(self.params_, ag.Tensor(xb))
            return mu.data, lv.data

        return self._batched(run, Xs)

    def transform(self, X):
        return self.encode(X)[0]

    def decode(self, Z, labels=None):
        """Map latent rows back to circuit parameters (de-standardised)."""
        check_fitted(self, "params_")
        Z = check_matrix(Z, "Z", n_features=self.d_latent)
        if labels is not None:
            raise ValueError("this model was trained without conditioning; labels not accepted")
        if Z.shape[0] == 0:
            return np.zeros((0, self.input_len_))
        out = self._batched(lambda zb: self._decode_t(self.params_, ag.Tensor(zb)).data, Z)
        return out * self.scale_ + self.mean_

    def inverse_transform(self, Z):
        return self.decode(Z)

    def reconstruct(self, X):
        return self.decode(self.transform(X))

    def sample(self, n: int, seed: int = 0, labels=None):
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((n, self.d_latent))
        return self.decode(z, labels) if labels is not None else self.decode(z)

    def params_hash(self) -> str:
        check_fitted(self, "params_")
        return _params_hash(self.params_)

    # -- persistence -------------------------------------------------------
    def _extra_meta(self) -> dict:
        return {}

    def save(self, path, meta: dict | None = None) -> None:
        check_fitted(self, "params_")
        arrays = {k: v.data for k, v in self.params_.items()}
        arrays["_stats.mean"] = self.mean_
        arrays["_stats.scale"] = self.scale_
        header = {
            "model": type(self).__name__,
            "config": self.get_params(),
            "input_len": self.input_len_,
            "loss_history": list(self.loss_history_),
            **self._extra_meta(),
            **(meta or {}),
        }
        save_checkpoint(path, arrays, header)

    @classmethod
    def load(cls, path):
        arrays, meta = load_checkpoint(path)
        kind = meta.get("model")
        target = MODEL_TYPES.get(kind)
        if target is None or not issubclass(target, AttentionVAE):
            raise ValueError(f"{path} holds a {kind!r}, not a VAE checkpoint")
        model = target(**meta["config"])
        model.input_len_ = int(meta["input_len"])
        model._restore_extra(meta)
        n_cond = len(getattr(model, "classes_", []))
        model.params_ = model._build(model.input_len_, n_cond, np.random.default_rng(0))
        model.mean_ = arrays.pop("_stats.mean")
        model.scale_ = arrays.pop("_stats.scale")
        model.params_.load_state(arrays)
        model.loss_history_ = list(meta.get("loss_history", []))
        model.meta_ = meta
        return model

    def _restore_extra(self, meta: dict) -> None:
        pass


class ConditionalVAE(AttentionVAE):
    """VAE whose decoder also receives a one-hot phase label."""

    conditional = True

    def _prepare_conditions(self, y, n):
        if y is None:
            raise ValueError("ConditionalVAE.fit needs labels")
        y = check_labels(y, n)
        self.classes_ = np.unique(y)
        return self._one_hot(y)

    def _one_hot(self, labels):
        labels = np.asarray(labels)
        unknown = set(labels.tolist()) - set(self.classes_.tolist())
        if unknown:
            raise ValueError(f"labels {sorted(unknown)} were not seen during training")
        return (labels[:, None] == self.classes_[None, :]).astype(np.float64)

    def decode(self, Z, labels=None):
        check_fitted(self, "params_")
        Z = check_matrix(Z, "Z", n_features=self.d_latent)
        if labels is None:
            raise ValueError("ConditionalVAE.decode needs labels")
        labels = np.broadcast_to(np.asarray(labels), (Z.shape[0],))
        if Z.shape[0] == 0:
            return np.zeros((0, self.input_len_))
        C = self._one_hot(labels)
        out = self._batched(lambda zb, cb: self._decode_t(self.params_, ag.Tensor(zb),
                                                           ag.Tensor(cb)).data, Z, C)
        return out * self.scale_ + self.mean_

    def reconstruct(self, X, labels=None):
        return self.decode(self.transform(X), labels)

    def inverse_transform(self, Z, labels=None):
        return self.decode(Z, labels)

    def _extra_meta(self):
        return {"classes": [int(c) for c in self.classes_]}

    def _restore_extra(self, meta):
        self.classes_ = np.asarray(meta["classes"])


# ---------------------------------------------------------------------------
# Latent diffusion
# ---------------------------------------------------------------------------


def linear_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> np.ndarray:
    """Per-step retention factors ``alpha_t = 1 - beta_t`` for ``t = 1..T``."""
    return 1.0 - np.linspace(beta_start, beta_end, T)


def forward_noise(z0, t: int, eps, alphas) -> np.ndarray:
    """Closed-form ``z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps`` (``t`` is 1-based)."""
    alphas = np.asarray(alphas, dtype=np.float64)
    T = alphas.shape[0]
    t_arr = np.asarray(t)
    if np.any(t_arr < 1) or np.any(t_arr > T):
        raise ValueError(f"t must lie in [1, {T}]")
    abar = np.cumprod(alphas)[t_arr - 1]
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z0.ndim > 1 and np.ndim(abar) == 1:
        abar = abar[:, None]
    return np.sqrt(abar) * z0 + np.sqrt(1.0 - abar) * eps


def time_embedding(t, dim: int, T: int) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class LatentDiffusion(BaseEstimator):
    """Label-conditioned DDPM over (standardised) VAE latent vectors.

    The noise predictor is an MLP on ``[z_t, one_hot(c), sinusoidal(t)]``.
    """

    def __init__(self, T=1000, beta_start=1e-4, beta_end=0.02, hidden=256, n_hidden=2,
                 time_dim=32, epochs=10000, batch_size=128, learning_rate=1e-3,
                 activation="silu", seed=0, verbose=False):
        self.T = T
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.hidden = hidden
        self.n_hidden = n_hidden
        self.time_dim = time_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.activation = activation
        self.seed = seed
        self.verbose = verbose

    @property
    def alphas(self) -> np.ndarray:
        return linear_schedule(self.T, self.beta_start, self.beta_end)

    def _check_schedule(self):
        a = self.alphas
        if not np.all((a > 0) & (a < 1)):
            raise ValueError("alphas must lie strictly inside (0, 1)")
        if not np.all(np.diff(np.cumprod(a)) < 0):
            raise ValueError("cumulative alphas must be strictly decreasing")

    def _net(self, zt, cond, t):
        x = ag.Tensor(np.concatenate([zt, cond, time_embedding(t, self.time_dim, self.T)], axis=1)) \
            if not isinstance(zt, ag.Tensor) else zt
        return L.mlp(x, self.params_.sub("eps"), self.n_hidden + 1, self.activation)

    def _one_hot(self, labels):
        labels = np.asarray(labels)
        unknown = set(labels.tolist()) - set(self.classes_.tolist())
        if unknown:
            raise ValueError(f"labels {sorted(unknown)} were not seen during training")
        return (labels[:, None] == self.classes_[None, :]).astype(np.float64)

    def fit(self, Z, y):
        Z = check_matrix(Z, "Z")
        y = check_labels(y, Z.shape[0])
        self._check_schedule()
        rng = np.random.default_rng(self.seed)
        self.d_latent_ = Z.shape[1]
        self.classes_ = np.unique(y)
        self.z_mean_ = Z.mean(axis=0)
        sd = Z.std(axis=0)
        self.z_scale_ = np.where(sd > 1e-12, sd, 1.0)
        Zs = (Z - self.z_mean_) / self.z_scale_
        C = self._one_hot(y)
        sizes = [self.d_latent_ + len(self.classes_) + self.time_dim] + \
            [self.hidden] * self.n_hidden + [self.d_latent_]
        self.params_ = L.LayerParams()
        self.params_.add("eps", L.init_mlp(rng, sizes))
        abar = np.cumprod(self.alphas)
        opt = Adam(self.params_, lr=self.learning_rate)
        self.loss_history_ = []
        n = Z.shape[0]
        bs = min(self.batch_size, n)
        for epoch in range(self.epochs):
            order = rng.permutation(n)
            tot = 0.0
            for start in range(0, n, bs):
                idx = order[start:start + bs]
                t = rng.integers(1, self.T + 1, size=len(idx))
                eps = rng.standard_normal((len(idx), self.d_latent_))
                a = abar[t - 1][:, None]
                zt = np.sqrt(a) * Zs[idx] + np.sqrt(1 - a) * eps
                pred = self._net(zt, C[idx], t)
                diff = pred - eps
                loss = ag.tsum(diff * diff) * (1.0 / len(idx))
                if not math.isfinite(loss.item()):
                    raise TrainingError(f"diffusion loss became non-finite at epoch {epoch}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                tot += loss.item() * len(idx) / n
            self.loss_history_.append(tot)
            if self.verbose and epoch % 100 == 0:
                logger.info("diffusion epoch %d loss %.4f", epoch, tot)
        return self

    def predict_noise(self, zt, labels, t) -> np.ndarray:
        check_fitted(self, "params_")
        zt = np.atleast_2d(zt)
        labels = np.broadcast_to(np.asarray(labels), (zt.shape[0],))
        t = np.broadcast_to(np.asarray(t), (zt.shape[0],))
        return self._net(zt, self._one_hot(labels), t).data

    def sample(self, label, n: int, seed: int = 0) -> np.ndarray:
        """Ancestral reverse process from ``z_T ~ N(0, I)``; returns latent rows."""
        check_fitted(self, "params_")
        if n == 0:
            return np.zeros((0, self.d_latent_))
        rng = np.random.default_rng(seed)
        alphas = self.alphas
        abar = np.cumprod(alphas)
        labels = np.full(n, label)
        C = self._one_hot(labels)
        z = rng.standard_normal((n, self.d_latent_))
        for t in range(self.T, 0, -1):
            a, ab = alphas[t - 1], abar[t - 1]
            eps = self._net(z, C, np.full(n, t)).data
            mean = (z - (1 - a) / math.sqrt(1 - ab) * eps) / math.sqrt(a)
            if t > 1:
                var = (1 - a) * (1 - abar[t - 2]) / (1 - ab)
                z = mean + math.sqrt(var) * rng.standard_normal(z.shape)
            else:
                z = mean
        return z * self.z_scale_ + self.z_mean_

    def save(self, path, meta: dict | None = None) -> None:
        check_fitted(self, "params_")
        arrays = {k: v.data for k, v in self.params_.items()}
        arrays["_stats.z_mean"] = self.z_mean_
        arrays["_stats.z_scale"] = self.z_scale_
        header = {"model": type(self).__name__, "config": self.get_params(),
                  "d_latent": self.d_latent_, "classes": [int(c) for c in self.classes_],
                  "loss_history": list(self.loss_history_), **(meta or {})}
        save_checkpoint(path, arrays, header)

    @classmethod
    def load(cls, path):
        arrays, meta = load_checkpoint(path)
        if meta.get("model") != cls.__name__:
            raise ValueError(f"{path} holds a {meta.get('model')!r}, not a diffusion checkpoint")
        model = cls(**meta["config"])
        model.d_latent_ = int(meta["d_latent"])
        model.classes_ = np.asarray(meta["classes"])
        model.z_mean_ = arrays.pop("_stats.z_mean")
        model.z_scale_ = arrays.pop("_stats.z_scale")
        sizes = [model.d_latent_ + len(model.classes_) + model.time_dim] + \
            [model.hidden] * model.n_hidden + [model.d_latent_]
        model.params_ = L.LayerParams()
        model.params_.add("eps", L.init_mlp(np.random.default_rng(0), sizes))
        model.params_.load_state(arrays)
        model.loss_history_ = list(meta.get("loss_history", []))
        model.meta_ = meta
        return model


MODEL_TYPES = {c.__name__: c for c in (AttentionVAE, ConditionalVAE, LatentDiffusion)}
