"""Patch sampling, per-patch DC removal and PCA/ZCA whitening."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from ..errors import AlreadyRemoved, DimensionMismatch, NumericalFailure, PatchTooLarge

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PatchSet:
    """``m x d`` matrix of flattened two-channel patches (pressure block first)."""

    patches: np.ndarray
    patch_h: int
    patch_w: int
    mean_removed: bool = False

    def __post_init__(self):
        p = np.asarray(self.patches, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 2:
            raise ValueError("patches must be an m x d matrix with m >= 1, d >= 2")
        if not np.all(np.isfinite(p)):
            raise ValueError("patches contain non-finite values")
        object.__setattr__(self, "patches", p)

    @property
    def m(self) -> int:
        return self.patches.shape[0]

    @property
    def d(self) -> int:
        return self.patches.shape[1]


def image_stack(image) -> np.ndarray:
    """``(2, H, W)`` array from a SignatureImage or an already stacked array."""
    if hasattr(image, "channels"):
        return image.channels
    a = np.asarray(image, dtype=np.float64)
    if a.ndim != 3 or a.shape[0] != 2:
        raise ValueError("expected a (2, H, W) image stack")
    return a


def sample_patches(images, n_patches: int, patch_h: int, patch_w: int, seed) -> PatchSet:
    """Draw patches uniformly over all ``(image, top-left position)`` pairs.

    ``seed`` is an integer or a ``numpy.random.Generator``.
    """
    rng = np.random.default_rng(seed)
    if n_patches < 1:
        raise ValueError("n_patches must be >= 1")
    stacks = [image_stack(im) for im in images]
    if not stacks:
        raise ValueError("no images to sample from")
    npos = []
    for s in stacks:
        _, h, w = s.shape
        if h < patch_h or w < patch_w:
            raise PatchTooLarge(f"patch {patch_h}x{patch_w} does not fit image {h}x{w}")
        npos.append((h - patch_h + 1) * (w - patch_w + 1))
    cum = np.cumsum(npos)
    draws = rng.integers(0, cum[-1], size=n_patches)
    which = np.searchsorted(cum, draws, side="right")
    local = draws - np.concatenate([[0], cum[:-1]])[which]

    out = np.empty((n_patches, 2 * patch_h * patch_w))
    for i, (k, pos) in enumerate(zip(which, local)):
        s = stacks[k]
        ncols = s.shape[2] - patch_w + 1
        r, c = divmod(int(pos), ncols)
        out[i] = s[:, r:r + patch_h, c:c + patch_w].ravel()
    return PatchSet(out, patch_h, patch_w)


def remove_dc(patches: PatchSet, force: bool = False) -> PatchSet:
    """Subtract each patch's own scalar mean."""
    if patches.mean_removed and not force:
        raise AlreadyRemoved("patches already have their DC removed")
    x = patches.patches
    return replace(patches, patches=x - x.mean(axis=1, keepdims=True), mean_removed=True)


@dataclass(frozen=True, eq=False)
class WhiteningTransform:
    """Affine map ``z = basis @ (p - mean)``.

    PCA mode keeps ``retained_k`` rows (principal directions scaled by
    ``1/sqrt(eigenvalue + epsilon)``); ZCA mode rotates these back so the
    output has the input dimension.
    """

    mean: np.ndarray
    basis: np.ndarray
    epsilon: float
    retained_k: int
    variance_kept: float
    mode: str = "pca"

    @property
    def d(self) -> int:
        return self.basis.shape[1]

    @property
    def k(self) -> int:
        return self.basis.shape[0]

    def apply(self, patches: np.ndarray) -> np.ndarray:
        """Whiten one patch (length d) or a batch (n x d)."""
        p = np.asarray(patches, dtype=np.float64)
        if p.shape[-1] != self.d:
            raise DimensionMismatch(f"patch dimension {p.shape[-1]} != {self.d}")
        return (p - self.mean) @ self.basis.T


def apply_whitening(tf: WhiteningTransform, patch) -> np.ndarray:
    return tf.apply(patch)


def fit_whitening(patches: PatchSet, epsilon: float = 0.1, variance_to_keep: float = 0.99,
                  mode: str = "pca") -> WhiteningTransform:
    """Fit PCA or ZCA whitening on the sample covariance (1/m normalisation).

    ``retained_k`` is the smallest number of leading components whose
    eigenvalues hold at least ``variance_to_keep`` of the total, never more
    than the numerical rank of the covariance.
    """
    if mode not in ("pca", "zca"):
        raise ValueError(f"unknown whitening mode {mode!r}")
    if not 0 < variance_to_keep <= 1:
        raise ValueError("variance_to_keep must lie in (0, 1]")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if not patches.mean_removed:
        log.warning("fitting whitening on patches whose DC was not removed")
    x = patches.patches
    m, d = x.shape
    if m < d:
        log.warning("only %d patches for dimension %d; covariance is rank deficient", m, d)

    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / m
    try:
        evals, evecs = np.linalg.eigh(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigendecomposition failed: {exc}") from exc
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    # deterministic sign: largest-magnitude entry of each eigenvector positive
    idx = np.argmax(np.abs(evecs), axis=0)
    evecs = evecs * np.sign(evecs[idx, np.arange(d)])

    total = evals.sum()
    if total <= 0:
        raise NumericalFailure("patch covariance is zero")
    tol = evals[0] * d * np.finfo(float).eps
    rank = int(np.count_nonzero(evals > tol))
    cum = np.cumsum(evals)
    k = int(np.searchsorted(cum, variance_to_keep * total - d * np.finfo(float).eps * total) + 1)
    k = max(1, min(k, rank))

    scale = 1.0 / np.sqrt(evals[:k] + epsilon)
    basis = evecs[:, :k].T * scale[:, None]
    if mode == "zca":
        basis = evecs[:, :k] @ basis
    kept = float(cum[k - 1] / total)
    return WhiteningTransform(mean=mean, basis=basis, epsilon=float(epsilon),
                              retained_k=int(basis.shape[0]), variance_kept=kept, mode=mode)
