"""Small sequential neural-network core with reverse-mode gradients.

Layers implement ``forward(x, train) -> (y, cache)`` and
``backward(cache, grad_y) -> (grad_x, param_grads)``.  A :class:`Network`
chains them and records a :class:`Tape`; every layer carries a version
counter that the optimizer bumps, so replaying a stale tape raises
:class:`~oodkit.errors.TapeError` instead of returning wrong gradients.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import TapeError

NN_MAGIC = "OODKIT-NN/1"

ACTIVATIONS = ("identity", "tanh", "relu")


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "identity":
        return z
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    raise ValueError(f"unknown activation {kind!r}")


def _activation_grad(z: np.ndarray, y: np.ndarray, gy: np.ndarray, kind: str) -> np.ndarray:
    if kind == "identity":
        return gy
    if kind == "tanh":
        return gy * (1.0 - y * y)
    return gy * (z > 0.0)


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.version = 0

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def touch(self) -> None:
        self.version += 1

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}


class Dense(Layer):
    """Affine map ``act(x W^T + b)`` with ``W`` of shape (out, in)."""

    kind = "dense"

    def __init__(self, in_dim: int, out_dim: int, activation: str = "identity", rng=None):
        super().__init__()
        if in_dim < 1 or out_dim < 1:
            raise ValueError("layer dimensions must be >= 1")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = np.random.default_rng(rng)
        self.in_dim, self.out_dim, self.activation = in_dim, out_dim, activation
        self.params = {
            "W": glorot_uniform(rng, out_dim, in_dim),
            "b": np.zeros(out_dim),
        }

    def weight(self) -> np.ndarray:
        return self.params["W"]

    def forward(self, x: np.ndarray, train: bool = False):
        z = x @ self.weight().T + self.params["b"]
        y = _activate(z, self.activation)
        return y, (x, z, y)

    def backward(self, cache, gy: np.ndarray):
        x, z, y = cache
        gz = _activation_grad(z, y, gy, self.activation)
        grads = {"W": gz.T @ x, "b": gz.sum(axis=0)}
        return gz @ self.weight(), grads

    def spec(self) -> dict:
        return {"kind": self.kind, "in_dim": self.in_dim, "out_dim": self.out_dim, "activation": self.activation}


class MaskedDense(Dense):
    """Dense layer whose weight is multiplied elementwise by a fixed 0/1 mask."""

    kind = "masked_dense"

    def __init__(self, in_dim: int, out_dim: int, mask: np.ndarray, activation: str = "identity", rng=None):
        super().__init__(in_dim, out_dim, activation, rng)
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != (out_dim, in_dim):
            raise ValueError(f"mask shape {mask.shape} does not match ({out_dim}, {in_dim})")
        if not np.all((mask == 0.0) | (mask == 1.0)):
            raise ValueError("mask entries must be 0 or 1")
        self.mask = mask

    def weight(self) -> np.ndarray:
        return self.params["W"] * self.mask

    def backward(self, cache, gy):
        gx, grads = super().backward(cache, gy)
        grads["W"] *= self.mask
        return gx, grads

    def spec(self) -> dict:
        d = super().spec()
        d["mask"] = self.mask
        return d


class BatchNorm(Layer):
    """Batch normalization with a log-parameterized scale.

    ``y = (x - mean) / sqrt(var + eps) * exp(log_scale) + offset``.  Train mode
    normalizes with batch statistics (population variance) and updates the
    running estimates; eval mode uses the running estimates only, making the
    layer a fixed affine map.  The log-scale form keeps the Jacobian
    determinant available in closed form for use inside flows.
    """

    kind = "batch_norm"

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        if dim < 1:
            raise ValueError("layer dimensions must be >= 1")
        self.in_dim = self.out_dim = dim
        self.momentum, self.eps = momentum, eps
        self.params = {"log_scale": np.zeros(dim), "offset": np.zeros(dim)}
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)

    def forward(self, x: np.ndarray, train: bool = False):
        if train:
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mean
            self.running_var = (1 - m) * self.running_var + m * var
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        y = xhat * np.exp(self.params["log_scale"]) + self.params["offset"]
        return y, (train, xhat, inv_std, var)

    def log_det(self, cache) -> float:
        """log |det dy/dx| for one sample (identical for every row)."""
        _, _, _, var = cache
        return float(np.sum(self.params["log_scale"] - 0.5 * np.log(var + self.eps)))

    def backward(self, cache, gy: np.ndarray, g_logdet: Optional[np.ndarray] = None):
        """Gradients of a loss depending on ``y`` and optionally on the per-row log-det.

        ``g_logdet`` is dL/d(logdet_i) for each row i.
        """
        train, xhat, inv_std, var = cache
        scale = np.exp(self.params["log_scale"])
        n = gy.shape[0]
        grads = {"log_scale": np.sum(gy * xhat, axis=0) * scale, "offset": gy.sum(axis=0)}
        gxhat = gy * scale
        if train:
            gx = inv_std * (gxhat - gxhat.mean(axis=0) - xhat * np.mean(gxhat * xhat, axis=0))
        else:
            gx = gxhat * inv_std
        if g_logdet is not None:
            g_total = float(np.sum(g_logdet))
            grads["log_scale"] = grads["log_scale"] + g_total
            if train:
                # d/dx_ij of -0.5 log(var_j + eps) = -(x_ij - mean_j) / (n (var_j + eps))
                gx = gx - g_total * xhat * inv_std / n
        return gx, grads

    def inverse(self, y: np.ndarray) -> np.ndarray:
        xhat = (y - self.params["offset"]) * np.exp(-self.params["log_scale"])
        return xhat * np.sqrt(self.running_var + self.eps) + self.running_mean

    def spec(self) -> dict:
        return {"kind": self.kind, "in_dim": self.in_dim, "momentum": self.momentum, "eps": self.eps}


@dataclass
class Tape:
    entries: list = field(default_factory=list)  # (layer, version, cache)


class Network:
    """Sequential stack of layers."""

    def __init__(self, layers: Sequence[Layer]):
        layers = list(layers)
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")
        self.layers = layers

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    def forward(self, x: np.ndarray, mode: str = "eval"):
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"expected input of width {self.in_dim}, got shape {x.shape}")
        tape = Tape()
        train = mode == "train"
        for layer in self.layers:
            y, cache = layer.forward(x, train)
            tape.entries.append((layer, layer.version, cache))
            x = y
        return x, tape

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x, "eval")[0]

    def backward(self, tape: Tape, grad_out: np.ndarray):
        """Return ``(param_grads, grad_input)``; param_grads aligns with ``layers``."""
        if len(tape.entries) != len(self.layers):
            raise TapeError("tape does not come from this network")
        g = grad_out
        grads: list = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            layer, version, cache = tape.entries[i]
            if layer is not self.layers[i]:
                raise TapeError("tape does not come from this network")
            if version != layer.version:
                raise TapeError("parameters changed since the forward pass; recompute the tape")
            g, grads[i] = layer.backward(cache, g)
        return grads, g

    def get_state(self) -> list:
        """Deep copy of parameters and batch-norm buffers."""
        return [layer_state(layer) for layer in self.layers]

    def set_state(self, state: list) -> None:
        for layer, st in zip(self.layers, state):
            set_layer_state(layer, st)


def layer_state(layer: Layer) -> dict:
    st = {k: v.copy() for k, v in layer.params.items()}
    if isinstance(layer, BatchNorm):
        st["running_mean"] = layer.running_mean.copy()
        st["running_var"] = layer.running_var.copy()
    return st


def set_layer_state(layer: Layer, st: dict) -> None:
    for k in layer.params:
        layer.params[k] = st[k].copy()
    if isinstance(layer, BatchNorm):
        layer.running_mean = st["running_mean"].copy()
        layer.running_var = st["running_var"].copy()
    layer.touch()


# --------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
    """One bias-corrected Adam update, applied in place to ``params``."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


class Adam:
    """Adam over a fixed list of layers; bumps layer versions after each step."""

    def __init__(self, layers: Sequence[Layer], lr: float):
        self.layers = list(layers)
        self.keys = [(layer, k) for layer in self.layers for k in sorted(layer.params)]
        self.state = AdamState(lr=lr)

    def step(self, grads: Sequence[dict]) -> None:
        flat_g = [g[k] for g in grads for k in sorted(g)]
        params = [layer.params[k] for layer, k in self.keys]
        adam_step(self.state, params, flat_g)
        for layer in self.layers:
            layer.touch()


# --------------------------------------------------------------------------
# MADE masks


def made_masks(
    in_dim: int,
    hidden_dims: Sequence[int],
    out_multiplier: int = 1,
    order: str = "natural",
    seed: Optional[int] = None,
) -> list[np.ndarray]:
    """Degree-based autoregressive masks, one (out, in) matrix per layer.

    Output unit for input i (in each of the ``out_multiplier`` heads) only sees
    inputs whose degree is strictly smaller than i's.  Hidden degrees cycle
    through ``1 .. in_dim-1``; with ``seed`` they are drawn at random instead.
    """
    if in_dim < 1 or any(h < 1 for h in hidden_dims) or out_multiplier < 1:
        raise ValueError("dimensions must be >= 1")
    if order == "natural":
        deg_in = np.arange(1, in_dim + 1)
    elif order == "reversed":
        deg_in = np.arange(in_dim, 0, -1)
    else:
        raise ValueError(f"unknown order {order!r}")
    rng = None if seed is None else np.random.default_rng(seed)
    low = min(1, in_dim - 1)
    degrees = [deg_in]
    for h in hidden_dims:
        if in_dim == 1:
            deg = np.zeros(h, dtype=int)
        elif rng is None:
            deg = np.arange(h) % (in_dim - 1) + 1
        else:
            deg = rng.integers(max(low, int(degrees[-1].min())), in_dim, size=h)
        degrees.append(deg)
    masks = [
        (d_out[:, None] >= d_in[None, :]).astype(np.float64)
        for d_in, d_out in zip(degrees[:-1], degrees[1:])
    ]
    deg_out = np.tile(deg_in, out_multiplier)
    masks.append((deg_out[:, None] > degrees[-1][None, :]).astype(np.float64))
    return masks


def made_network(
    in_dim: int,
    hidden_dims: Sequence[int],
    out_multiplier: int,
    activation: str = "tanh",
    rng=None,
    order: str = "natural",
) -> Network:
    rng = np.random.default_rng(rng)
    masks = made_masks(in_dim, hidden_dims, out_multiplier, order)
    dims = [in_dim, *hidden_dims, in_dim * out_multiplier]
    layers = []
    for i, mask in enumerate(masks):
        act = activation if i < len(masks) - 1 else "identity"
        layers.append(MaskedDense(dims[i], dims[i + 1], mask, act, rng))
    return Network(layers)


# --------------------------------------------------------------------------
# serialization


def encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).astype(np.float64)


def layer_to_dict(layer: Layer) -> dict:
    spec = dict(layer.spec())
    if "mask" in spec:
        spec["mask"] = encode_array(spec["mask"])
    spec["state"] = {k: encode_array(v) for k, v in layer_state(layer).items()}
    return spec


def layer_from_dict(d: dict) -> Layer:
    kind = d["kind"]
    if kind == "dense":
        layer: Layer = Dense(d["in_dim"], d["out_dim"], d["activation"], rng=0)
    elif kind == "masked_dense":
        layer = MaskedDense(d["in_dim"], d["out_dim"], decode_array(d["mask"]), d["activation"], rng=0)
    elif kind == "batch_norm":
        layer = BatchNorm(d["in_dim"], d["momentum"], d["eps"])
    else:
        raise ValueError(f"unknown layer kind {kind!r}")
    set_layer_state(layer, {k: decode_array(v) for k, v in d["state"].items()})
    return layer


def network_to_dict(net: Network) -> dict:
    return {"magic": NN_MAGIC, "layers": [layer_to_dict(layer) for layer in net.layers]}


def network_from_dict(d: dict) -> Network:
    if d.get("magic") != NN_MAGIC:
        raise ValueError(f"not a serialized network (magic {d.get('magic')!r})")
    return Network([layer_from_dict(x) for x in d["layers"]])
