"""Shared fixtures: a small learned bank and an on-disk testkit."""

import numpy as np
import pytest

from sigverify.featurelearn import Hyperparams, sample_patches, train_features
from sigverify.preprocess import PreprocessConfig, preprocess_pipeline
from sigverify.signatures import Dataset, UserSignatures
from sigverify.synthetic import CORPUS_TEMPLATE_OFFSET, make_testkit, write_testkit

SMALL = PreprocessConfig(raster_width=32, raster_height=32)


@pytest.fixture(scope="session")
def small_bank():
    """16 hidden units on 8x8 patches from 32x32 images; a few seconds to train."""
    corpus = make_testkit(8, 4, 0, 0.05, seed=1, template_offset=CORPUS_TEMPLATE_OFFSET)
    images = [preprocess_pipeline(s, SMALL) for g, _ in corpus.values() for s in g]
    patches = sample_patches(images, 3000, 8, 8, 0)
    return train_features(patches, Hyperparams(hidden_size=16, iterations=40))


@pytest.fixture(scope="session")
def small_kit():
    """4 users x (8 genuine + 6 forgeries) as an in-memory Dataset."""
    kit = make_testkit(4, 8, 6, 0.05, seed=3)
    return Dataset({u: UserSignatures(list(g), list(f)) for u, (g, f) in kit.items()})


@pytest.fixture(scope="session")
def kit_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("kit")
    layout = write_testkit(root, n_users=4, n_genuine=8, n_forgery=6, jitter=0.05, seed=3)
    return root, layout


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL/SKIP line per acceptance criterion, with its measured detail."""
    rows = {}
    for outcome in ("passed", "failed", "skipped", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::" not in nodeid:
                continue
            if rep.when != "call" and not (rep.failed or rep.skipped):
                continue
            detail = dict(getattr(rep, "user_properties", ())).get("detail", "")
            if rep.skipped and not detail:
                detail = str(rep.longrepr[-1]) if isinstance(rep.longrepr, tuple) else ""
            rows[nodeid] = (rep.outcome.upper(), detail)
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid in sorted(rows, key=lambda n: int(n.split("criterion_")[1].split("_")[0])):
        status, detail = rows[nodeid]
        name = nodeid.split("::")[-1].replace("test_criterion_", "criterion ").replace("_", " ", 1)
        terminalreporter.write_line(f"{status:7s} {name}: {detail}".rstrip(": "))
