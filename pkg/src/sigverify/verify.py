"""Per-user Gaussian target models with ridge-regularised covariance."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from .errors import (
    DimensionMismatch,
    EmptyTraining,
    NumericalFailure,
    ThresholdUnset,
    TooFewSamples,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class UserModel:
    """Gaussian target model for one user.

    ``covariance_factor`` is the lower Cholesky factor of the regularised
    covariance, so distances never form an explicit inverse.
    """

    user_id: str
    mean: np.ndarray
    covariance_factor: np.ndarray
    reg: float
    threshold: Optional[float] = None
    train_count: int = 0

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def covariance(self) -> np.ndarray:
        L = self.covariance_factor
        return L @ L.T


@dataclass(frozen=True)
class Decision:
    accepted: bool
    distance: float
    threshold: float

    @property
    def margin(self) -> float:
        return self.distance - self.threshold


def _values(v) -> np.ndarray:
    return np.asarray(getattr(v, "values", v), dtype=np.float64)


def _matrix(vectors) -> np.ndarray:
    rows = [_values(v) for v in vectors]
    if len({r.shape for r in rows}) > 1:
        raise DimensionMismatch("feature vectors differ in length")
    return np.stack(rows) if rows else np.empty((0, 0))


def fit_user_model(vectors, reg: float = 0.01, user_id: str = "") -> UserModel:
    """Sample mean and covariance plus a ridge of ``reg * trace / D``.

    With zero scatter (identical vectors) the ridge falls back to ``reg``.
    """
    V = _matrix(vectors)
    if V.shape[0] < 2:
        raise TooFewSamples(f"need at least 2 training vectors, got {V.shape[0]}")
    if reg < 0:
        raise ValueError("reg must be >= 0")
    n, D = V.shape
    mean = V.mean(axis=0)
    C = V - mean
    S = C.T @ C / (n - 1)
    tr = float(np.trace(S))
    ridge = reg * tr / D if tr > 0 else reg
    Sigma = S + ridge * np.eye(D)
    try:
        L = cholesky(Sigma, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"covariance is not positive definite (reg={reg}): {exc}") from exc
    if not np.all(np.diag(L) > 0):
        raise NumericalFailure("covariance factor has a non-positive diagonal")
    return UserModel(user_id=user_id, mean=mean, covariance_factor=L, reg=float(reg),
                     train_count=n)


def score(model: UserModel, v) -> float:
    """Squared Mahalanobis distance of ``v`` to the model."""
    x = _values(v)
    if x.shape != model.mean.shape:
        raise DimensionMismatch(f"vector of length {x.shape} vs model dimension {model.dim}")
    z = solve_triangular(model.covariance_factor, x - model.mean, lower=True, check_finite=False)
    return float(z @ z)


def score_many(model: UserModel, V) -> np.ndarray:
    V = np.atleast_2d(_matrix(V) if not isinstance(V, np.ndarray) else V)
    if V.shape[1] != model.dim:
        raise DimensionMismatch(f"vectors of length {V.shape[1]} vs model dimension {model.dim}")
    Z = solve_triangular(model.covariance_factor, (V - model.mean).T, lower=True, check_finite=False)
    return np.einsum("ij,ij->j", Z, Z)


def calibrate_threshold(model: UserModel, train_vectors, quantile: float = 1.0,
                        slack: float = 1.5) -> UserModel:
    """Set the threshold to ``slack`` times the (higher) empirical quantile of distances."""
    if not 0 < quantile <= 1:
        raise ValueError("quantile must lie in (0, 1]")
    vecs = list(train_vectors) if not isinstance(train_vectors, np.ndarray) else train_vectors
    if len(vecs) == 0:
        raise EmptyTraining("no training vectors to calibrate on")
    d = np.array([score(model, v) for v in vecs])
    return with_threshold(model, d, quantile, slack)


def with_threshold(model: UserModel, distances, quantile: float = 1.0, slack: float = 1.5) -> UserModel:
    d = np.asarray(distances, dtype=np.float64)
    if d.size == 0:
        raise EmptyTraining("no distances to calibrate on")
    q = float(np.quantile(d, quantile, method="higher"))
    return replace(model, threshold=q * slack)


def loo_distances(vectors, reg: float = 0.01) -> np.ndarray:
    """Distance of each vector to the model fitted on all the others."""
    V = _matrix(vectors)
    n = V.shape[0]
    if n < 3:
        raise TooFewSamples("leave-one-out calibration needs at least 3 vectors")
    idx = np.arange(n)
    return np.array([score(fit_user_model(V[idx != i], reg), V[i]) for i in range(n)])


def enroll(vectors, reg: float = 0.01, quantile: float = 1.0, slack: float = 1.5,
           calibration: str = "loo", user_id: str = "") -> UserModel:
    """Fit and calibrate a user model.

    ``calibration="resubstitution"`` scores the training vectors against the
    model they built. ``"loo"`` scores each against a model built without it,
    which matches what unseen genuine attempts look like when D >> n; it
    falls back to resubstitution with fewer than 3 vectors.
    """
    if calibration not in ("loo", "resubstitution"):
        raise ValueError(f"unknown calibration {calibration!r}")
    model = fit_user_model(vectors, reg, user_id)
    if calibration == "loo" and model.train_count >= 3:
        return with_threshold(model, loo_distances(vectors, reg), quantile, slack)
    if calibration == "loo":
        log.warning("user %s: %d training vectors, using resubstitution calibration",
                    user_id, model.train_count)
    return calibrate_threshold(model, vectors, quantile, slack)


def verify(model: UserModel, v) -> Decision:
    if model.threshold is None:
        raise ThresholdUnset(f"user {model.user_id!r} has no calibrated threshold")
    d = score(model, v)
    return Decision(accepted=d <= model.threshold, distance=d, threshold=model.threshold)
