"""Threshold-free metrics (ROC, EER, AUC) and the enrollment/test protocol."""

from __future__ import annotations

import json
import logging
import math
import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyPool, InsufficientGenuine, SigVerifyError
from .features import extract_many
from .preprocess import PreprocessConfig, preprocess_pipeline
from .signatures import Dataset, natural_key
from .verify import enroll, score_many

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1


@dataclass(frozen=True, eq=False)
class ScorePools:
    """Distances of genuine attempts and of forgeries for one user (lower = more genuine)."""

    genuine: np.ndarray
    forgery: np.ndarray
    user_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "genuine", np.asarray(self.genuine, dtype=np.float64).ravel())
        object.__setattr__(self, "forgery", np.asarray(self.forgery, dtype=np.float64).ravel())


@dataclass(frozen=True, eq=False)
class RocCurve:
    """Operating points ordered by increasing threshold (accept iff distance <= threshold)."""

    far: np.ndarray
    frr: np.ndarray
    thresholds: np.ndarray

    def points(self):
        return list(zip(self.far.tolist(), self.frr.tolist(), self.thresholds.tolist()))


def roc_curve(pools: ScorePools) -> RocCurve:
    g, f = pools.genuine, pools.forgery
    if g.size == 0 or f.size == 0:
        raise EmptyPool(f"user {pools.user_id!r}: both score pools must be non-empty")
    gs, fs = np.sort(g), np.sort(f)
    tau = np.unique(np.concatenate([gs, fs]))
    far = np.searchsorted(fs, tau, side="right") / fs.size
    frr = (gs.size - np.searchsorted(gs, tau, side="right")) / gs.size
    return RocCurve(
        far=np.concatenate([[0.0], far, [1.0]]),
        frr=np.concatenate([[1.0], frr, [0.0]]),
        thresholds=np.concatenate([[-np.inf], tau, [np.inf]]),
    )


def eer(curve: RocCurve) -> float:
    """Equal error rate, linearly interpolated across the far - frr sign change."""
    diff = curve.far - curve.frr
    i = int(np.argmax(diff >= 0))
    if diff[i] == 0 or i == 0:
        return float(curve.far[i])
    d0, d1 = diff[i - 1], diff[i]
    s = -d0 / (d1 - d0)
    return float(curve.far[i - 1] + s * (curve.far[i] - curve.far[i - 1]))


def auc(curve: RocCurve) -> float:
    """Area under true-accept rate (1 - frr) against far, trapezoidal."""
    tpr = 1.0 - curve.frr
    return float(np.sum(np.diff(curve.far) * (tpr[1:] + tpr[:-1]) / 2.0))


# -- protocol --------------------------------------------------------------------

def substream(seed: int, *names) -> np.random.Generator:
    """Independent generator for a named purpose derived from one seed."""
    key = [int(seed)] + [zlib.crc32(str(n).encode()) for n in names]
    return np.random.default_rng(key)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class ProtocolConfig:
    forgery_kind: str = "skilled"
    folds: int = 4
    train_fraction: float = 0.25
    seed: int = 0
    reg: float = 0.01
    quantile: float = 1.0
    slack: float = 1.5
    calibration: str = "loo"
    random_cap: int = 20
    pool_rows: int = 3
    pool_cols: int = 3
    eer_mode: str = "user"

    def __post_init__(self):
        if self.forgery_kind not in ("skilled", "random"):
            raise ValueError("forgery_kind must be 'skilled' or 'random'")
        if self.folds < 0:
            raise ValueError("folds must be >= 0 (0 or 1 disables K-fold)")
        if not 0 < self.train_fraction <= 1:
            raise ValueError("train_fraction must lie in (0, 1]")
        if self.eer_mode not in ("user", "pooled"):
            raise ValueError("eer_mode must be 'user' or 'pooled'")
        if self.random_cap < 1:
            raise ValueError("random_cap must be >= 1")


@dataclass
class UserResult:
    eer: float
    auc: float
    roc: RocCurve
    n_genuine: int
    n_forgery: int


@dataclass
class EvaluationReport:
    per_user: dict
    mean_eer: float
    mean_auc: float
    pooled_eer: float
    pooled_auc: float
    protocol: dict = field(default_factory=dict)

    def to_dict(self, emit_roc: bool = False) -> dict:
        users = []
        for u, r in self.per_user.items():
            entry = {"user": u, "eer": r.eer, "auc": r.auc,
                     "n_genuine_scores": r.n_genuine, "n_forgery_scores": r.n_forgery}
            if emit_roc:
                entry["roc"] = [[a, b, _jsonable(t)] for a, b, t in r.roc.points()]
            users.append(entry)
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "protocol": self.protocol,
            "per_user": users,
            "aggregate": {
                "mean_eer": self.mean_eer, "mean_auc": self.mean_auc,
                "pooled_eer": self.pooled_eer, "pooled_auc": self.pooled_auc,
                "n_users": len(self.per_user),
            },
        }

    def to_json(self, emit_roc: bool = False) -> str:
        return json.dumps(self.to_dict(emit_roc), indent=2, sort_keys=True) + "\n"

    @property
    def headline_eer(self) -> float:
        return self.pooled_eer if self.protocol.get("eer_mode") == "pooled" else self.mean_eer


def _jsonable(t: float):
    if math.isinf(t):
        return "inf" if t > 0 else "-inf"
    return t


REPORT_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "protocol", "per_user", "aggregate"],
    "properties": {
        "schema_version": {"const": REPORT_SCHEMA_VERSION},
        "protocol": {
            "type": "object",
            "required": ["forgery_kind", "folds", "train_fraction", "seed", "eer_mode", "config"],
        },
        "per_user": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["user", "eer", "auc", "n_genuine_scores", "n_forgery_scores"],
                "properties": {
                    "user": {"type": "string"},
                    "eer": {"type": "number", "minimum": 0, "maximum": 1},
                    "auc": {"type": "number", "minimum": 0, "maximum": 1},
                    "n_genuine_scores": {"type": "integer", "minimum": 1},
                    "n_forgery_scores": {"type": "integer", "minimum": 1},
                    "roc": {"type": "array", "items": {"type": "array", "minItems": 3, "maxItems": 3}},
                },
            },
        },
        "aggregate": {
            "type": "object",
            "required": ["mean_eer", "mean_auc", "pooled_eer", "pooled_auc", "n_users"],
            "properties": {
                k: {"type": "number", "minimum": 0, "maximum": 1}
                for k in ("mean_eer", "mean_auc", "pooled_eer", "pooled_auc")
            },
        },
    },
}


def dataset_images(dataset: Dataset, pcfg: PreprocessConfig = PreprocessConfig()) -> dict:
    """``{user: (genuine images, forgery images)}`` for a whole dataset."""
    out = {}
    for u in dataset:
        s = dataset[u]
        try:
            out[u] = ([preprocess_pipeline(x, pcfg) for x in s.genuine],
                      [preprocess_pipeline(x, pcfg) for x in s.forgeries])
        except SigVerifyError as exc:
            raise type(exc)(f"user {u}: {exc}") from exc
    return out


def _features(bank, images: dict, cfg: ProtocolConfig) -> dict:
    out = {}
    for u, (gi, fi) in images.items():
        G = extract_many(bank, gi, cfg.pool_rows, cfg.pool_cols)
        F = extract_many(bank, fi, cfg.pool_rows, cfg.pool_cols) if fi else np.empty((0, G.shape[1]))
        out[u] = (G, F)
    return out


def training_splits(n: int, cfg: ProtocolConfig, user_id: str) -> list:
    """``[(train_idx, test_idx), ...]`` for one user's genuine signatures."""
    perm = substream(cfg.seed, "folds", user_id).permutation(n)
    if cfg.folds >= 2:
        folds = np.array_split(perm, cfg.folds)
        rounds = [(np.sort(f), np.sort(np.setdiff1d(perm, f))) for f in folds]
    else:
        rounds = [enrollment_split(n, cfg.train_fraction, cfg.seed, user_id)]
    for tr, te in rounds:
        if tr.size < 2:
            raise InsufficientGenuine(
                f"user {user_id}: {n} genuine signatures leave a training split of {tr.size} (< 2)")
        if te.size == 0:
            raise InsufficientGenuine(f"user {user_id}: no genuine signatures left for testing")
    return rounds


def enrollment_split(n: int, fraction: float, seed: int, user_id: str):
    """Seeded ``(train_idx, held_out_idx)`` with ``round_half_up(fraction * n)`` training items."""
    if not 0 < fraction <= 1:
        raise ValueError("train_fraction must lie in (0, 1]")
    perm = substream(seed, "folds", user_id).permutation(n)
    k = round_half_up(fraction * n)
    return np.sort(perm[:k]), np.sort(perm[k:])


def random_forgery_indices(cfg: ProtocolConfig, user: str, impostor: str, n: int) -> np.ndarray:
    k = min(cfg.random_cap, n)
    return np.sort(substream(cfg.seed, "random", user, impostor).choice(n, size=k, replace=False))


def score_pools(vectors: dict, cfg: ProtocolConfig) -> dict:
    """Accumulate per-user ScorePools over every enrollment round."""
    users = sorted(vectors, key=natural_key)
    pools = {}
    for u in users:
        G, F = vectors[u]
        if cfg.forgery_kind == "random":
            F = np.concatenate([vectors[v][0][random_forgery_indices(cfg, u, v, len(vectors[v][0]))]
                                for v in users if v != u] or [np.empty((0, G.shape[1]))])
        gen, forg = [], []
        for tr, te in training_splits(len(G), cfg, u):
            model = enroll(G[tr], cfg.reg, cfg.quantile, cfg.slack, cfg.calibration, user_id=u)
            gen.append(score_many(model, G[te]))
            if len(F):
                forg.append(score_many(model, F))
        pools[u] = ScorePools(np.concatenate(gen), np.concatenate(forg) if forg else [], u)
    return pools


def report_from_pools(pools: dict, protocol: dict) -> EvaluationReport:
    per_user = {}
    for u, p in pools.items():
        curve = roc_curve(p)
        per_user[u] = UserResult(eer(curve), auc(curve), curve, p.genuine.size, p.forgery.size)
    allp = ScorePools(np.concatenate([p.genuine for p in pools.values()]),
                      np.concatenate([p.forgery for p in pools.values()]), "*")
    pc = roc_curve(allp)
    return EvaluationReport(
        per_user=per_user,
        mean_eer=float(np.mean([r.eer for r in per_user.values()])),
        mean_auc=float(np.mean([r.auc for r in per_user.values()])),
        pooled_eer=eer(pc), pooled_auc=auc(pc), protocol=protocol,
    )


def run_protocol(dataset: Dataset, bank, cfg: ProtocolConfig = ProtocolConfig(),
                 pcfg: PreprocessConfig = PreprocessConfig(), images: Optional[dict] = None,
                 config_snapshot: Optional[dict] = None) -> EvaluationReport:
    """Enroll every user on its training folds and score the held-out attempts.

    Skilled protocol tests against the user's own forgery files; random
    protocol against other users' genuine signatures (capped per impostor).
    Per-user EER/AUC are averaged; pooled figures are reported alongside.
    """
    if images is None:
        images = dataset_images(dataset, pcfg)
    for u, (gi, _) in images.items():
        if len(gi) < max(cfg.folds, 2):
            raise InsufficientGenuine(f"user {u}: {len(gi)} genuine signatures for {cfg.folds} folds")
    vectors = _features(bank, images, cfg)
    pools = score_pools(vectors, cfg)
    protocol = {
        "forgery_kind": cfg.forgery_kind, "folds": cfg.folds,
        "train_fraction": (1.0 / cfg.folds) if cfg.folds >= 2 else cfg.train_fraction,
        "seed": cfg.seed, "eer_mode": cfg.eer_mode,
        "eer_modes_note": "mean_eer averages per-user EERs (local thresholds); pooled_eer uses one global pool",
        "config": dict(config_snapshot or {}),
    }
    return report_from_pools(pools, protocol)


def hyperparameter_grid(dataset: Dataset, patches, hidden_sizes: Sequence[int],
                        iteration_counts: Sequence[int], hyper, whitening,
                        cfg: ProtocolConfig = ProtocolConfig(),
                        pcfg: PreprocessConfig = PreprocessConfig(),
                        images: Optional[dict] = None, history: int = 20,
                        config_snapshot: Optional[dict] = None) -> dict:
    """Retrain features for every (hidden, iterations) cell and rerun the protocol.

    Returns ``{"eer": {hidden: {iters: value}}, "auc": {...}, "cells": [...]}``.
    One training run per hidden size is snapshotted at each iteration count;
    snapshots equal separately capped runs.
    """
    from dataclasses import replace

    from .featurelearn.train import train_features

    if not hidden_sizes or not iteration_counts:
        raise ValueError("grid must be non-empty")
    if images is None:
        images = dataset_images(dataset, pcfg)
    eer_t, auc_t, cells = {}, {}, []
    for h in hidden_sizes:
        banks = train_features(patches, replace(hyper, hidden_size=int(h)), whitening,
                               history=history, snapshots=iteration_counts)
        for it in sorted(set(int(i) for i in iteration_counts)):
            rep = run_protocol(dataset, banks[it], cfg, pcfg, images, config_snapshot)
            eer_t.setdefault(int(h), {})[it] = rep.mean_eer
            auc_t.setdefault(int(h), {})[it] = rep.mean_auc
            cells.append({"hidden": int(h), "iterations": it, "mean_eer": rep.mean_eer,
                          "mean_auc": rep.mean_auc, "pooled_eer": rep.pooled_eer,
                          "final_cost": banks[it].training_cost_trace[-1]})
            log.info("grid hidden=%d iters=%d: EER %.4f AUC %.4f", h, it, rep.mean_eer, rep.mean_auc)
    return {"eer": eer_t, "auc": auc_t, "cells": cells}
