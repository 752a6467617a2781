"""Sparse autoencoder objective with a sigmoid encoder and a linear decoder.

Cost for a batch X (m rows, k columns) and hidden activations
A = sigmoid(X W1^T + b1):

    (1/m) * sum_i ||A_i W2^T + b2 - X_i||^2
    + lambda * (||W1||_F^2 + ||W2||_F^2)
    + beta * sum_j KL(rho || rho_hat_j),     rho_hat = mean_i A_ij

Parameters are packed into a flat vector in the order W1, W2, b1, b2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DimensionMismatch, DomainError, NonFinite


@dataclass(frozen=True)
class Hyperparams:
    rho: float = 0.05
    beta: float = 3.0
    lam: float = 3e-3
    iterations: int = 700
    seed: int = 0
    hidden_size: int = 2000
    # read the sparsity average as mean of squared activations
    squared_activation: bool = False

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        if self.beta < 0 or self.lam < 0:
            raise ValueError("beta and lambda must be >= 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.hidden_size < 1:
            raise ValueError("hidden_size must be >= 1")


@dataclass(frozen=True, eq=False)
class AutoencoderParams:
    W1: np.ndarray  # h x k
    b1: np.ndarray  # h
    W2: np.ndarray  # k x h
    b2: np.ndarray  # k

    def __post_init__(self):
        h, k = self.W1.shape
        if self.W2.shape != (k, h) or self.b1.shape != (h,) or self.b2.shape != (k,):
            raise DimensionMismatch(
                f"inconsistent shapes W1{self.W1.shape} b1{self.b1.shape} "
                f"W2{self.W2.shape} b2{self.b2.shape}")

    @property
    def hidden_size(self) -> int:
        return self.W1.shape[0]

    @property
    def input_size(self) -> int:
        return self.W1.shape[1]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.W2.ravel(), self.b1, self.b2])

    @classmethod
    def unflat(cls, theta: np.ndarray, hidden: int, visible: int) -> "AutoencoderParams":
        h, k = hidden, visible
        theta = np.asarray(theta, dtype=np.float64)
        if theta.size != 2 * h * k + h + k:
            raise DimensionMismatch(f"parameter vector of size {theta.size} does not fit h={h}, k={k}")
        W1 = theta[:h * k].reshape(h, k)
        W2 = theta[h * k:2 * h * k].reshape(k, h)
        b1 = theta[2 * h * k:2 * h * k + h]
        b2 = theta[2 * h * k + h:]
        return cls(W1, b1, W2, b2)


@dataclass(frozen=True, eq=False)
class SparsityStats:
    rho_hat: np.ndarray


def initialize_params(hidden: int, visible: int, rng: np.random.Generator) -> AutoencoderParams:
    """Uniform weights in +-sqrt(6 / (fan_in + fan_out + 1)), zero biases."""
    r = math.sqrt(6.0 / (hidden + visible + 1))
    W1 = rng.uniform(-r, r, size=(hidden, visible))
    W2 = rng.uniform(-r, r, size=(visible, hidden))
    return AutoencoderParams(W1, np.zeros(hidden), W2, np.zeros(visible))


def sigmoid(z):
    # split by sign so exp never overflows
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def kl_divergence(rho, rho_hat):
    """KL divergence between Bernoulli(rho) and Bernoulli(rho_hat); elementwise."""
    rho = np.asarray(rho, dtype=np.float64)
    rho_hat = np.asarray(rho_hat, dtype=np.float64)
    if np.any((rho <= 0) | (rho >= 1)):
        raise DomainError("rho must lie in (0, 1)")
    if np.any(~np.isfinite(rho_hat) | (rho_hat <= 0) | (rho_hat >= 1)):
        raise DomainError("rho_hat must lie in (0, 1)")
    val = rho * np.log(rho / rho_hat) + (1 - rho) * np.log((1 - rho) / (1 - rho_hat))
    # exact zero at rho_hat == rho regardless of rounding in the logs
    val = np.where(rho_hat == rho, 0.0, np.maximum(val, 0.0))
    return val if val.ndim else float(val)


def _batch(batch) -> np.ndarray:
    x = batch.patches if hasattr(batch, "patches") else batch
    return np.asarray(x, dtype=np.float64)


def sparse_cost_grad(params: AutoencoderParams, batch, hyper: Hyperparams):
    """Cost, flat gradient and sparsity statistics for one batch.

    ``batch`` is an ``m x k`` array (or a PatchSet) of whitened inputs.
    """
    X = _batch(batch)
    m, k = X.shape
    if k != params.input_size:
        raise DimensionMismatch(f"batch has {k} columns, encoder expects {params.input_size}")
    W1, b1, W2, b2 = params.W1, params.b1, params.W2, params.b2
    rho, beta, lam = hyper.rho, hyper.beta, hyper.lam

    with np.errstate(over="raise", invalid="raise"):
        try:
            A = sigmoid(X @ W1.T + b1)
            out = A @ W2.T + b2
            diff = out - X
        except FloatingPointError as exc:
            raise NonFinite(f"overflow in forward pass: {exc}") from exc

    cost = float(np.sum(diff * diff)) / m + lam * (float(np.sum(W1 * W1)) + float(np.sum(W2 * W2)))

    d_out = (2.0 / m) * diff
    gW2 = d_out.T @ A + 2 * lam * W2
    gb2 = d_out.sum(axis=0)
    d_A = d_out @ W2

    if hyper.squared_activation:
        rho_hat = np.mean(A * A, axis=0)
    else:
        rho_hat = A.mean(axis=0)
    if beta > 0:
        if np.any((rho_hat <= 0) | (rho_hat >= 1)):
            raise NonFinite("average hidden activation saturated at 0 or 1")
        cost += beta * float(np.sum(kl_divergence(rho, rho_hat)))
        dkl = beta * (-rho / rho_hat + (1 - rho) / (1 - rho_hat)) / m
        d_A = d_A + (2 * A * dkl if hyper.squared_activation else dkl)

    d_Z = d_A * A * (1 - A)
    gW1 = d_Z.T @ X + 2 * lam * W1
    gb1 = d_Z.sum(axis=0)

    if not math.isfinite(cost):
        raise NonFinite("cost is not finite")
    grad = np.concatenate([gW1.ravel(), gW2.ravel(), gb1, gb2])
    return cost, grad, SparsityStats(rho_hat=rho_hat)


def reference_cost(theta, X, hyper: Hyperparams, hidden: int, visible: int,
                   dtype=np.longdouble):
    """Forward-only cost in extended precision; the finite-difference oracle.

    Written independently of :func:`sparse_cost_grad` so that a mistake in
    one is not mirrored in the other.
    """
    h, k = hidden, visible
    th = np.asarray(theta).astype(dtype)
    X = np.asarray(X).astype(dtype)
    W1 = th[:h * k].reshape(h, k)
    W2 = th[h * k:2 * h * k].reshape(k, h)
    b1 = th[2 * h * k:2 * h * k + h]
    b2 = th[2 * h * k + h:]
    one = dtype(1)
    A = one / (one + np.exp(-(X @ W1.T + b1)))
    R = A @ W2.T + b2 - X
    cost = np.sum(R * R) / X.shape[0] + dtype(hyper.lam) * (np.sum(W1 * W1) + np.sum(W2 * W2))
    if hyper.beta > 0:
        rh = np.mean(A * A if hyper.squared_activation else A, axis=0)
        r = dtype(hyper.rho)
        cost += dtype(hyper.beta) * np.sum(r * np.log(r / rh) + (one - r) * np.log((one - r) / (one - rh)))
    return cost


def numerical_gradient(fun, theta: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences, one coordinate at a time.

    ``theta`` is perturbed in the precision of ``fun``'s own arithmetic when
    ``fun`` accepts extended-precision vectors.
    """
    theta = np.array(theta, dtype=np.longdouble)
    g = np.empty(theta.size)
    h = np.longdouble(step)
    for i in range(theta.size):
        old = theta[i]
        theta[i] = old + h
        fp = fun(theta)
        theta[i] = old - h
        fm = fun(theta)
        theta[i] = old
        g[i] = float((fp - fm) / (2 * h))
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-8)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradient(k: int, h: int, m: int, hyper: Hyperparams, seed: int = 0,
                   step: float = 1e-5, corrupt: bool = False) -> float:
    """Max relative error between analytic and finite-difference gradients.

    Builds a random instance of the given size. The finite differences use
    :func:`reference_cost` in extended precision so roundoff in the cost does
    not swamp small gradient entries. ``corrupt`` doubles one analytic
    coordinate so callers can confirm the harness notices.
    """
    if max(k, h, m) > 32:
        raise ValueError("gradient check is meant for small instances (<= 32)")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((m, k))
    p = initialize_params(h, k, rng)
    p = AutoencoderParams(p.W1, 0.1 * rng.standard_normal(h), p.W2, 0.1 * rng.standard_normal(k))

    _, g, _ = sparse_cost_grad(p, X, hyper)
    if corrupt:
        g = g.copy()
        i = int(np.argmax(np.abs(g)))
        g[i] *= 2
    num = numerical_gradient(lambda th: reference_cost(th, X, hyper, h, k), p.flat(), step)
    return relative_error(g, num)
