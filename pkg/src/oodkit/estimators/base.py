from __future__ import annotations

from typing import Optional, Union

import numpy as np

from ..data import EncodedMatrix, Encoding
from ..errors import FitError
from .config import EstimatorConfig

MatrixLike = Union[EncodedMatrix, np.ndarray]


def as_array(X: MatrixLike) -> np.ndarray:
    values = X.values if isinstance(X, EncodedMatrix) else X
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[None, :]
    return values


class FittedEstimator:
    """A trained novelty model. ``score`` returns higher values for more novel rows.

    Subclasses implement ``_score`` on a float matrix and must not mutate
    state while scoring.
    """

    kind = ""

    def __init__(self, config: EstimatorConfig, dim: int, encoding: Optional[Encoding] = None):
        self.config = config
        self.dim = dim
        self.encoding = encoding

    @property
    def name(self) -> str:
        return self.config.name

    @property
    def metric(self) -> str:
        return self.config.metric

    def score(self, X: MatrixLike) -> np.ndarray:
        values = as_array(X)
        if values.shape[1] != self.dim:
            raise ValueError(f"{self.name}: expected width {self.dim}, got {values.shape[1]}")
        return self._score(values)

    __call__ = score

    def _score(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params_to_dict(self) -> dict:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.name} d={self.dim}>"


def check_finite_loss(loss: float, epoch: int, name: str) -> None:
    if not np.isfinite(loss):
        raise FitError(f"{name}: non-finite training loss at epoch {epoch}")
