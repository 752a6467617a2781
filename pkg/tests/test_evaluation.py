"""ROC/EER/AUC against brute-force oracles and the enrollment protocol."""

import json
import time

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sigverify.errors import EmptyPool, InsufficientGenuine
from sigverify.featurelearn import Hyperparams, WhiteningConfig, sample_patches, train_features
from sigverify.evaluation import (
    REPORT_SCHEMA,
    ProtocolConfig,
    ScorePools,
    auc,
    dataset_images,
    eer,
    enrollment_split,
    hyperparameter_grid,
    roc_curve,
    run_protocol,
    training_splits,
)
from sigverify.preprocess import preprocess_pipeline
from sigverify.signatures import Dataset, UserSignatures
from sigverify.synthetic import CORPUS_TEMPLATE_OFFSET, make_testkit

from conftest import SMALL


def random_pools(rng, ties):
    ng, nf = (int(v) for v in rng.integers(1, 201, 2))
    if ties:
        g = rng.integers(0, 15, ng).astype(float)
        f = rng.integers(5, 20, nf).astype(float)
    else:
        g = rng.normal(0, 1, ng)
        f = rng.normal(rng.uniform(0, 2), 1, nf)
    return ScorePools(g, f)


def roc_oracle(g, f):
    """Double-loop count at every distinct score, with the two sentinels."""
    pts = [(0.0, 1.0)]
    for tau in sorted(set(g.tolist()) | set(f.tolist())):
        fa = sum(1 for x in f if x <= tau)
        fr = sum(1 for x in g if x > tau)
        pts.append((fa / len(f), fr / len(g)))
    pts.append((1.0, 0.0))
    return pts


def mann_whitney(g, f):
    wins = sum(1.0 if a < b else 0.5 if a == b else 0.0 for a in g for b in f)
    return wins / (len(g) * len(f))


def eer_oracle(pts):
    """min over thresholds of max(far, frr), plus the step size at the crossing."""
    best = min(max(a, b) for a, b in pts)
    i = next(k for k, (a, b) in enumerate(pts) if a - b >= 0)
    step = 0.0 if i == 0 else max(abs(pts[i][0] - pts[i - 1][0]), abs(pts[i][1] - pts[i - 1][1]))
    return best, step


class TestMetricOracles:
    @pytest.mark.parametrize("ties", [False, True])
    def test_roc_auc_eer_against_oracles(self, ties):
        rng = np.random.default_rng(10 + ties)
        for _ in range(100):
            p = random_pools(rng, ties)
            curve = roc_curve(p)
            pts = roc_oracle(p.genuine, p.forgery)
            assert list(zip(curve.far.tolist(), curve.frr.tolist())) == pts
            assert abs(auc(curve) - mann_whitney(p.genuine, p.forgery)) <= 1e-12
            best, step = eer_oracle(pts)
            assert abs(eer(curve) - best) <= step

    def test_perfect_separation(self):
        curve = roc_curve(ScorePools([1.0, 2.0], [10.0, 20.0]))
        assert (0.0, 0.0) in list(zip(curve.far.tolist(), curve.frr.tolist()))
        assert eer(curve) == 0.0 and auc(curve) == 1.0

    def test_swapped_pools(self):
        assert auc(roc_curve(ScorePools([10.0, 20.0], [1.0, 2.0]))) == 0.0

    def test_identical_single_point_pools(self):
        curve = roc_curve(ScorePools([5.0], [5.0]))
        assert curve.points()[1][:2] == (1.0, 0.0)
        assert curve.points()[0][:2] == (0.0, 1.0)
        assert eer(curve) == 0.5 and auc(curve) == 0.5

    def test_empty_pool(self):
        with pytest.raises(EmptyPool):
            roc_curve(ScorePools([], [1.0]))
        with pytest.raises(EmptyPool):
            roc_curve(ScorePools([1.0], []))

    @settings(max_examples=80, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.booleans())
    def test_rank_statistic_properties(self, seed, ties):
        rng = np.random.default_rng(seed)
        p = random_pools(rng, ties)
        curve = roc_curve(p)
        assert np.all(np.diff(curve.far) >= 0) and np.all(np.diff(curve.frr) <= 0)
        e, a = eer(curve), auc(curve)
        assert 0 <= e <= 1 and 0 <= a <= 1
        # strictly increasing transform leaves every rank statistic unchanged
        t = roc_curve(ScorePools(np.exp(p.genuine / 3) + 2, np.exp(p.forgery / 3) + 2))
        assert eer(t) == e and auc(t) == a
        assert (a == 1.0) == bool(p.genuine.max() < p.forgery.min())


class TestSplits:
    def test_kfold_partitions_genuine(self):
        cfg = ProtocolConfig(folds=4, seed=5)
        rounds = training_splits(16, cfg, "3")
        assert len(rounds) == 4
        assert sorted(np.concatenate([tr for tr, _ in rounds]).tolist()) == list(range(16))
        for tr, te in rounds:
            assert len(tr) == 4 and sorted(tr.tolist() + te.tolist()) == list(range(16))

    def test_single_split_fraction(self):
        tr, te = enrollment_split(20, 0.25, 0, "1")
        assert len(tr) == 5 and len(te) == 15
        cfg = ProtocolConfig(folds=0, train_fraction=0.25)
        assert [len(x) for x in training_splits(20, cfg, "1")[0]] == [5, 15]

    def test_insufficient_genuine(self):
        with pytest.raises(InsufficientGenuine):
            training_splits(4, ProtocolConfig(folds=4), "1")


class TestProtocol:
    def test_deterministic_and_schema_valid(self, small_bank, small_kit):
        cfg = ProtocolConfig(folds=4, seed=1)
        images = dataset_images(small_kit, SMALL)
        a = run_protocol(small_kit, small_bank, cfg, SMALL, images).to_json(emit_roc=True)
        b = run_protocol(small_kit, small_bank, cfg, SMALL, images).to_json(emit_roc=True)
        assert a == b
        doc = json.loads(a)
        jsonschema.validate(doc, REPORT_SCHEMA)
        assert doc["aggregate"]["n_users"] == 4
        assert all(u["n_genuine_scores"] == 24 and u["n_forgery_scores"] == 24 for u in doc["per_user"])

    def test_user_order_does_not_matter(self, small_bank, small_kit):
        cfg = ProtocolConfig(folds=4)
        shuffled = Dataset({u: small_kit[u] for u in reversed(list(small_kit))})
        a = run_protocol(small_kit, small_bank, cfg, SMALL)
        b = run_protocol(shuffled, small_bank, cfg, SMALL)
        assert a.to_json() == b.to_json()

    def test_random_forgeries_come_from_the_other_user(self, small_bank):
        kit = make_testkit(2, 8, 0, 0.05, seed=4)
        ds = Dataset({u: UserSignatures(list(g), []) for u, (g, _) in kit.items()})
        cfg = ProtocolConfig(forgery_kind="random", folds=2, random_cap=20)
        rep = run_protocol(ds, small_bank, cfg, SMALL)
        for r in rep.per_user.values():
            assert r.n_forgery == 2 * 8 and r.n_genuine == 8
        capped = run_protocol(ds, small_bank, ProtocolConfig(forgery_kind="random", folds=2, random_cap=3), SMALL)
        assert all(r.n_forgery == 2 * 3 for r in capped.per_user.values())

    def test_skilled_and_random_differ(self, small_bank, small_kit):
        s = run_protocol(small_kit, small_bank, ProtocolConfig(forgery_kind="skilled"), SMALL)
        r = run_protocol(small_kit, small_bank, ProtocolConfig(forgery_kind="random"), SMALL)
        assert s.to_json() != r.to_json()

    def test_insufficient_genuine_names_user(self, small_bank):
        kit = make_testkit(2, 3, 1, 0.05, seed=0)
        ds = Dataset({u: UserSignatures(list(g), list(f)) for u, (g, f) in kit.items()})
        with pytest.raises(InsufficientGenuine, match="user 1"):
            run_protocol(ds, small_bank, ProtocolConfig(folds=4), SMALL)

    def test_one_cell_grid_equals_direct_run(self, small_kit):
        corpus = make_testkit(6, 3, 0, 0.05, seed=2, template_offset=CORPUS_TEMPLATE_OFFSET)
        imgs = [preprocess_pipeline(s, SMALL) for g, _ in corpus.values() for s in g]
        patches = sample_patches(imgs, 1500, 8, 8, 0)
        hyper = Hyperparams(hidden_size=12, iterations=15)
        images = dataset_images(small_kit, SMALL)
        grid = hyperparameter_grid(small_kit, patches, [12], [15], hyper, WhiteningConfig(),
                                   ProtocolConfig(), SMALL, images)
        bank = train_features(patches, hyper, WhiteningConfig())
        rep = run_protocol(small_kit, bank, ProtocolConfig(), SMALL, images)
        assert grid["eer"] == {12: {15: rep.mean_eer}}
        assert grid["auc"] == {12: {15: rep.mean_auc}}

    def test_empty_grid(self, small_kit):
        with pytest.raises(ValueError):
            hyperparameter_grid(small_kit, None, [], [10], Hyperparams(), WhiteningConfig())


@pytest.mark.slow
class TestDeskGrid:
    def test_eer_non_increasing_in_iterations(self):
        kit = make_testkit(10, 16, 16, 0.05, seed=2)
        ds = Dataset({u: UserSignatures(list(g), list(f)) for u, (g, f) in kit.items()})
        corpus = make_testkit(20, 10, 0, 0.05, seed=1, template_offset=CORPUS_TEMPLATE_OFFSET)
        imgs = [preprocess_pipeline(s, SMALL) for g, _ in corpus.values() for s in g]
        patches = sample_patches(imgs, 10_000, 8, 8, 0)
        t0 = time.perf_counter()
        grid = hyperparameter_grid(ds, patches, [25, 100], [50, 200], Hyperparams(), WhiteningConfig(),
                                   ProtocolConfig(), SMALL)
        print(f"desk grid {grid['eer']} in {time.perf_counter() - t0:.1f}s")
        pairs = [grid["eer"][h][200] <= grid["eer"][h][50] for h in (25, 100)]
        assert all(pairs)
