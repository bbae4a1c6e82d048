"""Random small layer stacks and a finite-difference gradient check."""

from __future__ import annotations

import numpy as np

from oodkit.nn import ACTIVATIONS, BatchNorm, Dense, MaskedDense, Network

from oracles import central_differences, relative_errors


def random_stack(rng: np.random.Generator, max_params: int = 200) -> Network:
    while True:
        dims = [int(rng.integers(2, 6))]
        layers = []
        for _ in range(int(rng.integers(1, 4))):
            out = int(rng.integers(2, 6))
            kind = rng.choice(["dense", "masked", "bn"])
            act = str(rng.choice([a for a in ACTIVATIONS if a != "relu"] + ["relu"]))
            if kind == "bn":
                layers.append(BatchNorm(dims[-1]))
                layers[-1].params["log_scale"] = rng.normal(0, 0.3, dims[-1])
                layers[-1].params["offset"] = rng.normal(0, 0.3, dims[-1])
                layers[-1].running_mean = rng.normal(0, 0.5, dims[-1])
                layers[-1].running_var = rng.uniform(0.5, 2.0, dims[-1])
                continue
            if kind == "masked":
                mask = (rng.random((out, dims[-1])) < 0.6).astype(float)
                layers.append(MaskedDense(dims[-1], out, mask, act, rng))
            else:
                layers.append(Dense(dims[-1], out, act, rng))
            layers[-1].params["b"] = rng.normal(0, 0.2, out)
            dims.append(out)
        net = Network(layers)
        if net.n_params <= max_params:
            return net


def gradient_check(net: Network, rng: np.random.Generator, mode: str, h: float = 1e-5):
    """Relative errors of backward against central differences for the
    random linear functional ``sum(R * net(x))``, over parameters and input."""
    x = rng.normal(size=(7, net.in_dim))
    out, tape = net.forward(x, mode)
    R = rng.normal(size=out.shape)
    grads, gx = net.backward(tape, R)

    def loss():
        return float(np.sum(R * net.forward(x, mode)[0]))

    params = [layer.params[k] for layer in net.layers for k in sorted(layer.params)]
    numeric = central_differences(loss, params + [x], h)
    analytic = [g[k] for g in grads for k in sorted(g)] + [gx]
    return relative_errors(analytic, numeric)
