"""Self-taught feature learning: patches -> whitening -> sparse autoencoder."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ..errors import LineSearchFailure
from .autoencoder import AutoencoderParams, Hyperparams, initialize_params, sparse_cost_grad
from .lbfgs import minimize_lbfgs
from .patches import PatchSet, WhiteningTransform, fit_whitening, remove_dc

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WhiteningConfig:
    epsilon: float = 0.1
    variance_to_keep: float = 0.99
    mode: str = "pca"


@dataclass(frozen=True, eq=False)
class FeatureBank:
    params: AutoencoderParams
    whitening: WhiteningTransform
    hyper: Hyperparams
    patch_h: int
    patch_w: int
    training_cost_trace: tuple = ()
    status: str = ""

    def __post_init__(self):
        if self.params.input_size != self.whitening.retained_k:
            raise ValueError("encoder input size must equal the whitening output size")
        if self.whitening.d != 2 * self.patch_h * self.patch_w:
            raise ValueError("whitening dimension does not match the patch geometry")

    @property
    def hidden_size(self) -> int:
        return self.params.hidden_size

    def composed_encoder(self):
        """Fold whitening into the first layer: ``sigmoid(W @ p + c)`` for a raw patch ``p``."""
        W = self.params.W1 @ self.whitening.basis
        c = self.params.b1 - W @ self.whitening.mean
        return W, c


def _objective(X, hyper, h, k):
    def fun(theta):
        cost, grad, _ = sparse_cost_grad(AutoencoderParams.unflat(theta, h, k), X, hyper)
        return cost, grad
    return fun


def train_features(patches: PatchSet, hyper: Hyperparams,
                   whitening: WhiteningConfig = WhiteningConfig(), history: int = 20,
                   gtol: float = 1e-8, strict: bool = False,
                   snapshots: Sequence[int] = ()) -> FeatureBank | dict:
    """Learn a :class:`FeatureBank` from raw (not yet DC-removed) patches.

    Args:
        patches: sampled two-channel patches.
        hyper: sparsity/decay weights, hidden size, iteration cap and seed.
        whitening: whitening parameters.
        history: L-BFGS memory.
        gtol: stop once the max-abs gradient falls below this.
        strict: raise :class:`LineSearchFailure` instead of keeping the last
            accepted iterate when the line search breaks down.
        snapshots: iteration counts at which to also capture a bank. When
            given, a dict ``{iterations: FeatureBank}`` is returned; each entry
            is identical to a separate run capped at that count.
    """
    dc = patches if patches.mean_removed else remove_dc(patches)
    tf = fit_whitening(dc, whitening.epsilon, whitening.variance_to_keep, whitening.mode)
    X = tf.apply(dc.patches)
    k, h = tf.retained_k, hyper.hidden_size
    rng = np.random.default_rng([hyper.seed, 0xAE])
    p0 = initialize_params(h, k, rng)
    log.info("training autoencoder: %d patches, input %d (of %d), hidden %d, %d iterations",
             X.shape[0], k, tf.d, h, hyper.iterations)

    def bank(theta, trace, status, iterations=hyper.iterations):
        return FeatureBank(AutoencoderParams.unflat(theta.copy(), h, k), tf,
                           replace(hyper, iterations=iterations),
                           patches.patch_h, patches.patch_w, tuple(trace), status)

    wanted = sorted(set(int(s) for s in snapshots))
    captured = {}
    max_iter = max(wanted) if wanted else hyper.iterations
    trace_so_far = []

    def callback(it, x, f):
        trace_so_far.append(f)
        if it in wanted:
            captured[it] = (x.copy(), len(trace_so_far))

    res = minimize_lbfgs(_objective(X, hyper, h, k), p0.flat(), max_iter=max_iter,
                         history=history, gtol=gtol, callback=callback)
    log.info("finished: %s after %d iterations, cost %.6g -> %.6g",
             res.status, res.n_iter, res.trace[0], res.trace[-1])
    if not res.success:
        if strict:
            raise LineSearchFailure("line search failed", result=res)

    if not wanted:
        return bank(res.x, res.trace, res.status)
    out = {}
    for w in wanted:
        if w in captured:
            x, n = captured[w]
            status = res.status if w == res.n_iter else "max_iter"
            out[w] = bank(x, res.trace[:n + 1], status, w)
        else:
            # optimiser stopped early; a capped run ends at the same point
            out[w] = bank(res.x, res.trace, res.status, w)
    return out
