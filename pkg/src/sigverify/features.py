"""Convolve a learned feature bank over a signature image and mean-pool the maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ImageTooSmall, PoolTooFine
from .featurelearn.autoencoder import sigmoid
from .featurelearn.patches import image_stack
from .featurelearn.train import FeatureBank


@dataclass(frozen=True, eq=False)
class FeatureMaps:
    maps: np.ndarray  # hidden x out_h x out_w


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    pool_rows: int
    pool_cols: int

    def __len__(self):
        return len(self.values)


def patch_matrix(stack: np.ndarray, ph: int, pw: int) -> np.ndarray:
    """All valid ``ph x pw`` patches of a ``(2, H, W)`` stack as rows, pressure block first."""
    win = sliding_window_view(stack, (ph, pw), axis=(1, 2))  # 2, oh, ow, ph, pw
    oh, ow = win.shape[1], win.shape[2]
    return np.ascontiguousarray(win.transpose(1, 2, 0, 3, 4)).reshape(oh * ow, -1), oh, ow


def dc_folded_encoder(bank: FeatureBank):
    """Affine encoder acting on raw patches with per-patch DC removal folded in."""
    W, c = bank.composed_encoder()
    W = W - W.mean(axis=1, keepdims=True)
    return W, c


def convolve(bank: FeatureBank, image) -> FeatureMaps:
    """Hidden-unit activations at every valid patch position (stride 1, no padding)."""
    stack = image_stack(image)
    ph, pw = bank.patch_h, bank.patch_w
    if stack.shape[1] < ph or stack.shape[2] < pw:
        raise ImageTooSmall(f"image {stack.shape[1]}x{stack.shape[2]} smaller than patch {ph}x{pw}")
    P, oh, ow = patch_matrix(stack, ph, pw)
    W, c = dc_folded_encoder(bank)
    act = sigmoid(P @ W.T + c)  # positions x hidden
    return FeatureMaps(act.T.reshape(-1, oh, ow))


def pool_bounds(n: int, parts: int) -> np.ndarray:
    """Region edges splitting ``n`` cells into ``parts`` near-equal runs, larger runs last."""
    base, rem = divmod(n, parts)
    sizes = [base] * (parts - rem) + [base + 1] * rem
    return np.concatenate([[0], np.cumsum(sizes)])


def mean_pool(maps: FeatureMaps, pool_rows: int = 3, pool_cols: int = 3) -> FeatureVector:
    m = maps.maps
    _, oh, ow = m.shape
    if pool_rows < 1 or pool_cols < 1 or pool_rows > oh or pool_cols > ow:
        raise PoolTooFine(f"cannot pool {oh}x{ow} maps into a {pool_rows}x{pool_cols} grid")
    rb = pool_bounds(oh, pool_rows)
    cb = pool_bounds(ow, pool_cols)
    out = np.empty((m.shape[0], pool_rows, pool_cols))
    for i in range(pool_rows):
        for j in range(pool_cols):
            out[:, i, j] = m[:, rb[i]:rb[i + 1], cb[j]:cb[j + 1]].mean(axis=(1, 2))
    return FeatureVector(out.ravel(), pool_rows, pool_cols)


def extract(bank: FeatureBank, image, pool_rows: int = 3, pool_cols: int = 3) -> FeatureVector:
    return mean_pool(convolve(bank, image), pool_rows, pool_cols)


def extract_many(bank: FeatureBank, images, pool_rows: int = 3, pool_cols: int = 3) -> np.ndarray:
    """Stack of feature vectors, one row per image."""
    return np.stack([extract(bank, im, pool_rows, pool_cols).values for im in images])
