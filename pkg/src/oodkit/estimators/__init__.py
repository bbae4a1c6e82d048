"""Five novelty estimators behind one ``fit``/``score`` contract."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ..data import EncodedMatrix, Encoding
from ..errors import FitError
from .autoencoder import FittedAE, FittedVAE, beta_schedule, fit_ae, fit_vae, vae_loss
from .base import FittedEstimator, MatrixLike, as_array
from .config import DEFAULT_PARAMS, EstimatorConfig
from .flow import FittedMAF, MAFlow, fit_maf, maf_log_prob
from .lof import FittedLOF, fit_lof, lof_score
from .ppca import FittedPPCA, fit_ppca, ppca_closed_form, ppca_log_likelihood

__all__ = [
    "DEFAULT_PARAMS",
    "EstimatorConfig",
    "FittedEstimator",
    "MAFlow",
    "beta_schedule",
    "fit",
    "load_estimator",
    "lof_score",
    "maf_log_prob",
    "ppca_closed_form",
    "ppca_log_likelihood",
    "save_estimator",
    "score",
    "vae_loss",
]

ESTIMATOR_MAGIC = "OODKIT-EST/1"

_CLASSES = {"ppca": FittedPPCA, "lof": FittedLOF, "ae": FittedAE, "vae": FittedVAE, "maf": FittedMAF}


def fit(config: EstimatorConfig, train: MatrixLike, val: Optional[MatrixLike] = None) -> FittedEstimator:
    """Fit one estimator; ``val`` (possibly empty) drives early stopping."""
    X = as_array(train)
    if X.shape[0] == 0:
        raise FitError(f"{config.name}: empty training set")
    if not np.all(np.isfinite(X)):
        raise FitError(f"{config.name}: training data contains non-finite values")
    encoding = train.encoding if isinstance(train, EncodedMatrix) else None
    V = None
    if val is not None:
        V = as_array(val)
        if V.shape[0] and V.shape[1] != X.shape[1]:
            raise FitError(f"{config.name}: validation width {V.shape[1]} != training width {X.shape[1]}")
    if config.kind == "ppca":
        return fit_ppca(config, X, encoding)
    if config.kind == "lof":
        return fit_lof(config, X, encoding)
    if config.kind == "ae":
        return fit_ae(config, X, V, encoding)
    if config.kind == "vae":
        return fit_vae(config, X, V, encoding)
    return fit_maf(config, X, V, encoding)


def score(est: FittedEstimator, X: MatrixLike) -> np.ndarray:
    return est.score(X)


def estimator_to_dict(est: FittedEstimator) -> dict:
    return {
        "magic": ESTIMATOR_MAGIC,
        "kind": est.kind,
        "config": est.config.to_dict(),
        "dim": est.dim,
        "encoding": None if est.encoding is None else est.encoding.to_dict(),
        "params": est.params_to_dict(),
    }


def estimator_from_dict(d: dict) -> FittedEstimator:
    if d.get("magic") != ESTIMATOR_MAGIC:
        raise ValueError(f"not a serialized estimator (magic {d.get('magic')!r})")
    config = EstimatorConfig.from_dict(d["config"])
    encoding = None if d.get("encoding") is None else Encoding.from_dict(d["encoding"])
    return _CLASSES[d["kind"]].from_params(config, d["params"], encoding)


def save_estimator(est: FittedEstimator, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(estimator_to_dict(est)), encoding="utf-8")


def load_estimator(path: Union[str, Path]) -> FittedEstimator:
    return estimator_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
