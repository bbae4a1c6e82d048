"""Autoencoder and variational autoencoder novelty models.

Both score a row by its mean squared reconstruction error.  The VAE scores
through the encoder mean, so scoring involves no sampling.
"""

from __future__ import annotations

import numpy as np

from ..nn import Adam, Dense, Network, network_from_dict, network_to_dict
from .base import FittedEstimator
from .training import train_loop

LOGVAR_CLAMP = (-10.0, 10.0)


def mlp(in_dim: int, hidden: list, out_dim: int, rng, hidden_act: str = "relu") -> list:
    dims = [in_dim, *hidden]
    layers = [Dense(a, b, hidden_act, rng) for a, b in zip(dims[:-1], dims[1:])]
    layers.append(Dense(dims[-1], out_dim, "identity", rng))
    return layers


def reconstruction_error(X: np.ndarray, recon: np.ndarray) -> np.ndarray:
    return np.mean((recon - X) ** 2, axis=1)


class FittedAE(FittedEstimator):
    kind = "ae"

    def __init__(self, config, net: Network, encoding=None):
        super().__init__(config, net.in_dim, encoding)
        self.net = net

    def reconstruct(self, X):
        return self.net(X)

    def _score(self, X):
        return reconstruction_error(X, self.net(X))

    def params_to_dict(self):
        return {"net": network_to_dict(self.net)}

    @classmethod
    def from_params(cls, config, params, encoding=None):
        return cls(config, network_from_dict(params["net"]), encoding)


def fit_ae(config, X, V, encoding=None) -> FittedAE:
    p = config.params
    rng = np.random.default_rng(config.seed)
    d = X.shape[1]
    latent = int(p["latent_dim"])
    hidden = [int(h) for h in p["hidden_dims"]]
    layers = mlp(d, hidden, latent, rng) + mlp(latent, hidden[::-1], d, rng)
    net = Network(layers)
    opt = Adam(net.layers, float(p["lr"]))

    def step(idx, epoch):
        xb = X[idx]
        out, tape = net.forward(xb, "train")
        diff = out - xb
        grads, _ = net.backward(tape, 2.0 * diff / diff.size)
        opt.step(grads)
        return float(np.mean(diff**2))

    val = None
    if V is not None and len(V):
        val = lambda epoch: float(np.mean((net(V) - V) ** 2))
    train_loop(
        name=config.name, n_train=len(X), epochs=config.epochs, batch_size=config.batch_size,
        patience=config.patience, rng=rng, step=step, val_loss=val,
        get_state=net.get_state, set_state=net.set_state,
    )
    return FittedAE(config, net, encoding)


# --------------------------------------------------------------------------
# VAE


def beta_schedule(epoch: int, warmup_epochs: int) -> float:
    """Linear KL warm-up from 0 to 1 over ``warmup_epochs`` epochs."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if warmup_epochs <= 0:
        return 1.0
    return min(1.0, epoch / warmup_epochs)


def kl_standard_normal(mu: np.ndarray, logvar: np.ndarray) -> np.ndarray:
    """Per-row KL(N(mu, diag exp(logvar)) || N(0, I))."""
    return 0.5 * np.sum(mu * mu + np.exp(logvar) - 1.0 - logvar, axis=1)


def vae_loss(enc: Network, dec: Network, batch: np.ndarray, beta: float, rng=None, eps=None,
             return_grads: bool = False):
    """Loss of one stochastic pass: ``recon_mse + beta * mean_kl / d``.

    ``recon_mse`` averages squared error over rows and features, and the KL
    term (summed over latent dims, averaged over rows) is divided by the
    feature count so both terms sit on a per-feature scale.  ``eps`` fixes the
    reparameterization noise; otherwise it is drawn from ``rng``.  With
    ``return_grads`` the parameter gradients ``(enc_grads, dec_grads)`` are
    returned as a third element.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    n, d = batch.shape
    mode = "train" if return_grads else "eval"
    h, enc_tape = enc.forward(batch, mode)
    latent = h.shape[1] // 2
    mu, raw_lv = h[:, :latent], h[:, latent:]
    logvar = np.clip(raw_lv, *LOGVAR_CLAMP)
    if eps is None:
        eps = np.random.default_rng(rng).standard_normal(mu.shape)
    std = np.exp(0.5 * logvar)
    z = mu + std * eps
    recon, dec_tape = dec.forward(z, mode)
    diff = recon - batch
    recon_mse = float(np.mean(diff**2))
    kl_rows = kl_standard_normal(mu, logvar)
    kl = float(np.mean(kl_rows))
    loss = recon_mse + beta * kl / d
    parts = {"recon_mse": recon_mse, "kl": kl, "beta": beta}
    if not return_grads:
        return loss, parts
    dec_grads, gz = dec.backward(dec_tape, 2.0 * diff / diff.size)
    c = beta / (n * d)
    g_mu = gz + c * mu
    g_lv = gz * eps * 0.5 * std + c * 0.5 * (np.exp(logvar) - 1.0)
    g_lv = g_lv * ((raw_lv > LOGVAR_CLAMP[0]) & (raw_lv < LOGVAR_CLAMP[1]))
    enc_grads, _ = enc.backward(enc_tape, np.concatenate([g_mu, g_lv], axis=1))
    return loss, parts, (enc_grads, dec_grads)


class FittedVAE(FittedEstimator):
    kind = "vae"

    def __init__(self, config, enc: Network, dec: Network, encoding=None):
        super().__init__(config, enc.in_dim, encoding)
        self.enc, self.dec = enc, dec

    def encode_mean(self, X):
        h = self.enc(X)
        return h[:, : h.shape[1] // 2]

    def reconstruct(self, X):
        return self.dec(self.encode_mean(X))

    def _score(self, X):
        return reconstruction_error(X, self.reconstruct(X))

    def params_to_dict(self):
        return {"enc": network_to_dict(self.enc), "dec": network_to_dict(self.dec)}

    @classmethod
    def from_params(cls, config, params, encoding=None):
        return cls(config, network_from_dict(params["enc"]), network_from_dict(params["dec"]), encoding)


def fit_vae(config, X, V, encoding=None) -> FittedVAE:
    p = config.params
    rng = np.random.default_rng(config.seed)
    d = X.shape[1]
    latent = int(p["latent_dim"])
    hidden = [int(h) for h in p["hidden_dims"]]
    warmup = int(p["beta_warmup_epochs"])
    enc = Network(mlp(d, hidden, 2 * latent, rng))
    dec = Network(mlp(latent, hidden[::-1], d, rng))
    opt = Adam(enc.layers + dec.layers, float(p["lr"]))

    def step(idx, epoch):
        beta = beta_schedule(epoch, warmup)
        loss, _, (ge, gd) = vae_loss(enc, dec, X[idx], beta, rng=rng, return_grads=True)
        opt.step(ge + gd)
        return loss

    def val(epoch):
        # deterministic: reconstruction through the mean latent plus the KL term
        h = enc(V)
        mu, lv = h[:, :latent], np.clip(h[:, latent:], *LOGVAR_CLAMP)
        mse = float(np.mean((dec(mu) - V) ** 2))
        return mse + beta_schedule(epoch, warmup) * float(np.mean(kl_standard_normal(mu, lv))) / d

    def get_state():
        return enc.get_state(), dec.get_state()

    def set_state(st):
        enc.set_state(st[0])
        dec.set_state(st[1])

    train_loop(
        name=config.name, n_train=len(X), epochs=config.epochs, batch_size=config.batch_size,
        patience=config.patience, rng=rng, step=step,
        val_loss=val if V is not None and len(V) else None,
        get_state=get_state, set_state=set_state, monitor_from=min(warmup, config.epochs - 1),
    )
    return FittedVAE(config, enc, dec, encoding)
