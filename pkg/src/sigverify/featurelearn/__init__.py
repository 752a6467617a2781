"""Sparse-autoencoder feature learning from unlabeled signature images."""

from .autoencoder import (
    AutoencoderParams,
    Hyperparams,
    SparsityStats,
    check_gradient,
    initialize_params,
    kl_divergence,
    sparse_cost_grad,
)
from .lbfgs import LbfgsResult, minimize_lbfgs
from .patches import PatchSet, WhiteningTransform, apply_whitening, fit_whitening, remove_dc, sample_patches
from .train import FeatureBank, WhiteningConfig, train_features

__all__ = [
    "AutoencoderParams", "Hyperparams", "SparsityStats", "check_gradient", "initialize_params",
    "kl_divergence", "sparse_cost_grad", "LbfgsResult", "minimize_lbfgs", "PatchSet",
    "WhiteningTransform", "apply_whitening", "fit_whitening", "remove_dc", "sample_patches",
    "FeatureBank", "WhiteningConfig", "train_features",
]
