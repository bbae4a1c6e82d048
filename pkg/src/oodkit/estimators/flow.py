"""Masked autoregressive flow.

Each composite block is ``MADE affine -> batch norm -> reverse permutation``
(no permutation after the final block).  The data-to-noise direction is

    u_i = (x_i - m_i(x_<i)) * exp(-a_i(x_<i)),   log|det| = -sum_i a_i

and the density is ``log N(u; 0, I) + sum of block log-dets``.
"""

from __future__ import annotations

import numpy as np

from ..nn import (
    Adam,
    BatchNorm,
    Network,
    layer_from_dict,
    layer_state,
    layer_to_dict,
    made_network,
    network_from_dict,
    network_to_dict,
    set_layer_state,
)
from .base import FittedEstimator
from .training import train_loop

LOG_SCALE_CLAMP = (-7.0, 7.0)
LOG_2PI = np.log(2.0 * np.pi)


class MADEAffine:
    """Autoregressive affine bijection conditioned by a masked network."""

    def __init__(self, conditioner: Network):
        self.cond = conditioner
        self.dim = conditioner.in_dim

    @property
    def layers(self):
        return self.cond.layers

    def _params(self, out):
        d = self.dim
        raw_a = out[:, d:]
        return out[:, :d], np.clip(raw_a, *LOG_SCALE_CLAMP), raw_a

    def forward(self, x, train=False):
        out, tape = self.cond.forward(x, "train" if train else "eval")
        m, a, raw_a = self._params(out)
        u = (x - m) * np.exp(-a)
        return u, -a.sum(axis=1), (tape, a, raw_a, u)

    def backward(self, cache, gu, g_logdet):
        tape, a, raw_a, u = cache
        inv_scale = np.exp(-a)
        g_m = -gu * inv_scale
        g_a = (-gu * u - g_logdet[:, None]) * ((raw_a > LOG_SCALE_CLAMP[0]) & (raw_a < LOG_SCALE_CLAMP[1]))
        grads, gx_cond = self.cond.backward(tape, np.concatenate([g_m, g_a], axis=1))
        return gu * inv_scale + gx_cond, grads

    def inverse(self, u):
        x = np.zeros_like(u)
        for i in range(self.dim):
            m, a, _ = self._params(self.cond(x))
            x[:, i] = u[:, i] * np.exp(a[:, i]) + m[:, i]
        return x


class FlowBatchNorm:
    def __init__(self, bn: BatchNorm):
        self.bn = bn

    @property
    def layers(self):
        return [self.bn]

    def forward(self, x, train=False):
        y, cache = self.bn.forward(x, train)
        return y, np.full(x.shape[0], self.bn.log_det(cache)), cache

    def backward(self, cache, gy, g_logdet):
        gx, grads = self.bn.backward(cache, gy, g_logdet)
        return gx, [grads]

    def inverse(self, y):
        return self.bn.inverse(y)


class Reverse:
    layers: list = []

    def forward(self, x, train=False):
        return x[:, ::-1], np.zeros(x.shape[0]), None

    def backward(self, cache, gy, g_logdet):
        return gy[:, ::-1], []

    def inverse(self, y):
        return y[:, ::-1]


class MAFlow:
    def __init__(self, blocks: list):
        self.blocks = blocks
        self.dim = blocks[0].dim

    @classmethod
    def build(cls, dim: int, n_layers: int, hidden_units: int, batch_norm: bool = True, rng=None,
              identity: bool = False) -> MAFlow:
        """Random flow; the last conditioner layer starts near zero so every block
        begins close to the identity.  ``identity=True`` makes it exactly the
        identity (zero shift and log-scale, unit batch-norm)."""
        rng = np.random.default_rng(rng)
        blocks: list = []
        for i in range(n_layers):
            cond = made_network(dim, [hidden_units], 2, "tanh", rng)
            last = cond.layers[-1]
            if identity:
                last.params["W"][:] = 0.0
            else:
                last.params["W"] = rng.uniform(-1e-3, 1e-3, last.params["W"].shape)
            blocks.append(MADEAffine(cond))
            if batch_norm:
                bn = BatchNorm(dim)
                if identity:
                    bn.running_var = np.full(dim, 1.0 - bn.eps)
                blocks.append(FlowBatchNorm(bn))
            if i < n_layers - 1:
                blocks.append(Reverse())
        return cls(blocks)

    @property
    def layers(self):
        return [layer for b in self.blocks for layer in b.layers]

    def forward(self, x, train=False, keep_caches=None):
        """Map data to noise; returns ``(u, logdet_per_row, caches)``.

        Caches are kept only in train mode unless ``keep_caches`` says
        otherwise; scoring large batches would not fit in memory with them.
        """
        x = np.asarray(x, dtype=np.float64)
        keep = train if keep_caches is None else keep_caches
        logdet = np.zeros(x.shape[0])
        caches = []
        for b in self.blocks:
            x, ld, cache = b.forward(x, train)
            logdet += ld
            caches.append(cache if keep else None)
        return x, logdet, caches

    def log_prob(self, x) -> np.ndarray:
        u, logdet, _ = self.forward(x)
        return -0.5 * np.sum(u * u, axis=1) - 0.5 * self.dim * LOG_2PI + logdet

    def nll_and_grads(self, x):
        """Mean negative log-likelihood of a training batch and its parameter gradients."""
        n = x.shape[0]
        u, logdet, caches = self.forward(x, train=True)
        nll = float(np.mean(0.5 * np.sum(u * u, axis=1) + 0.5 * self.dim * LOG_2PI - logdet))
        g = u / n
        g_ld = np.full(n, -1.0 / n)
        grads: list = []
        for b, cache in zip(reversed(self.blocks), reversed(caches)):
            g, bg = b.backward(cache, g, g_ld)
            grads = list(bg) + grads
        return nll, grads

    def inverse(self, u) -> np.ndarray:
        x = np.asarray(u, dtype=np.float64)
        for b in reversed(self.blocks):
            x = b.inverse(x)
        return x

    def sample(self, n: int, rng=None) -> np.ndarray:
        return self.inverse(np.random.default_rng(rng).standard_normal((n, self.dim)))

    def calibrate(self, x) -> None:
        """Set every batch-norm's running statistics to exact full-data statistics."""
        x = np.asarray(x, dtype=np.float64)
        for b in self.blocks:
            if isinstance(b, FlowBatchNorm):
                b.bn.running_mean = x.mean(axis=0)
                b.bn.running_var = x.var(axis=0)
            x, _, _ = b.forward(x)

    def get_state(self):
        return [layer_state(layer) for layer in self.layers]

    def set_state(self, state):
        for layer, st in zip(self.layers, state):
            set_layer_state(layer, st)

    def to_dict(self) -> dict:
        out = []
        for b in self.blocks:
            if isinstance(b, MADEAffine):
                out.append({"type": "made", "net": network_to_dict(b.cond)})
            elif isinstance(b, FlowBatchNorm):
                out.append({"type": "batch_norm", "layer": layer_to_dict(b.bn)})
            else:
                out.append({"type": "reverse"})
        return {"blocks": out}

    @classmethod
    def from_dict(cls, d: dict) -> MAFlow:
        blocks: list = []
        for b in d["blocks"]:
            if b["type"] == "made":
                blocks.append(MADEAffine(network_from_dict(b["net"])))
            elif b["type"] == "batch_norm":
                blocks.append(FlowBatchNorm(layer_from_dict(b["layer"])))
            else:
                blocks.append(Reverse())
        flow = cls.__new__(cls)
        flow.blocks = blocks
        flow.dim = next(b.dim for b in blocks if isinstance(b, MADEAffine))
        return flow


def maf_log_prob(flow: MAFlow, X) -> np.ndarray:
    return flow.log_prob(X)


class FittedMAF(FittedEstimator):
    kind = "maf"

    def __init__(self, config, flow: MAFlow, encoding=None):
        super().__init__(config, flow.dim, encoding)
        self.flow = flow

    def log_prob(self, X):
        return self.flow.log_prob(X)

    def _score(self, X):
        return -self.flow.log_prob(X)

    def params_to_dict(self):
        return {"flow": self.flow.to_dict()}

    @classmethod
    def from_params(cls, config, params, encoding=None):
        return cls(config, MAFlow.from_dict(params["flow"]), encoding)


def fit_maf(config, X, V, encoding=None) -> FittedMAF:
    p = config.params
    rng = np.random.default_rng(config.seed)
    flow = MAFlow.build(X.shape[1], int(p["n_layers"]), int(p["hidden_units"]), bool(p["batch_norm"]), rng)
    opt = Adam(flow.layers, float(p["lr"]))

    def step(idx, epoch):
        nll, grads = flow.nll_and_grads(X[idx])
        opt.step(grads)
        return nll

    def val(epoch):
        flow.calibrate(X)
        return float(-np.mean(flow.log_prob(V)))

    train_loop(
        name=config.name, n_train=len(X), epochs=config.epochs, batch_size=config.batch_size,
        patience=config.patience, rng=rng, step=step,
        val_loss=val if V is not None and len(V) else None,
        get_state=flow.get_state, set_state=flow.set_state,
    )
    flow.calibrate(X)
    return FittedMAF(config, flow, encoding)
