from __future__ import annotations

import logging
from typing import Callable, Optional

import numpy as np

from .base import check_finite_loss

logger = logging.getLogger(__name__)


def minibatches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled batches; the remainder is spread so no batch is smaller than ``batch_size``."""
    perm = rng.permutation(n)
    n_batches = max(1, n // batch_size)
    return np.array_split(perm, n_batches)


def train_loop(
    *,
    name: str,
    n_train: int,
    epochs: int,
    batch_size: int,
    patience: int,
    rng: np.random.Generator,
    step: Callable[[np.ndarray, int], float],
    val_loss: Optional[Callable[[int], float]],
    get_state: Callable[[], object],
    set_state: Callable[[object], None],
    monitor_from: int = 0,
) -> dict:
    """Run minibatch training with early stopping on validation loss.

    Early stopping only counts epochs from ``monitor_from`` onward (the VAE
    starts monitoring once its KL warm-up has finished). The parameters of the
    best monitored epoch are restored at the end.
    """
    history = {"train_loss": [], "val_loss": [], "best_epoch": None, "stopped_epoch": None}
    best, best_state, waited = np.inf, None, 0
    for epoch in range(epochs):
        total, count = 0.0, 0
        for idx in minibatches(n_train, batch_size, rng):
            loss = step(idx, epoch)
            check_finite_loss(loss, epoch, name)
            total += loss * len(idx)
            count += len(idx)
        history["train_loss"].append(total / count)
        if val_loss is None:
            continue
        vl = float(val_loss(epoch))
        check_finite_loss(vl, epoch, name)
        history["val_loss"].append(vl)
        if epoch < monitor_from:
            continue
        if vl < best:
            best, best_state, waited = vl, get_state(), 0
            history["best_epoch"] = epoch
        else:
            waited += 1
            if waited >= patience:
                history["stopped_epoch"] = epoch
                logger.debug("%s: early stop at epoch %d (best %d)", name, epoch, history["best_epoch"])
                break
    if best_state is not None:
        set_state(best_state)
    return history
