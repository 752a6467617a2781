"""Capture-file parsing, dataset enumeration and the synthetic generator."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sigverify.errors import (
    DatasetErrors,
    EmptyDataset,
    FieldCount,
    MalformedHeader,
    NonMonotoneTime,
    ParseError,
    TooFewPoints,
)
from sigverify.signatures import (
    GENUINE,
    SKILLED_FORGERY,
    SVC2004,
    DatasetLayout,
    RawSignature,
    load_corpus,
    load_dataset,
    match_files,
    parse_signature,
    serialize_svc2004,
)
from sigverify.synthetic import (
    generate_synthetic_signature,
    make_testkit,
    write_testkit,
)


def random_signature(rng, n=None):
    n = int(n or rng.integers(2, 60))
    down = rng.random(n) < 0.8
    down[rng.integers(n)] = True
    pressure = np.where(down, rng.integers(1, 1024, n), 0)
    return RawSignature(
        x=rng.integers(-5000, 20000, n), y=rng.integers(-5000, 20000, n),
        t=np.cumsum(rng.integers(0, 20, n)), pen_down=down, pressure=pressure,
        azimuth=rng.integers(0, 3600, n), altitude=rng.integers(0, 900, n),
    )


class TestParseSvc2004:
    def test_documented_example(self):
        text = "3\n100 200 0 1 0 0 512\n110 210 10 1 0 0 520\n120 220 20 0 0 0 0"
        sig = parse_signature(text)
        assert len(sig) == 3
        assert sig.pen_down.tolist() == [True, True, False]
        assert sig.x.tolist() == [100, 110, 120]
        assert sig.pressure.tolist() == [512, 520, 0]
        assert sig.points[1].t == 10

    def test_header_count_mismatch(self):
        with pytest.raises((MalformedHeader, TooFewPoints)):
            parse_signature("3\n1 2 0 1 0 0 5\n2 3 1 1 0 0 5\n")

    def test_unparseable_header(self):
        with pytest.raises(MalformedHeader) as e:
            parse_signature("three\n1 2 0 1 0 0 5\n")
        assert e.value.line == 1

    def test_declared_count_below_two(self):
        with pytest.raises(TooFewPoints):
            parse_signature("1\n1 2 0 1 0 0 5\n")

    def test_wrong_field_count(self):
        with pytest.raises(FieldCount) as e:
            parse_signature("2\n1 2 0 1 0 0 5\n2 3 1 1 0 5\n", path="f.txt")
        assert e.value.line == 3 and "f.txt" in str(e.value)

    def test_decreasing_time(self):
        with pytest.raises(NonMonotoneTime):
            parse_signature("2\n1 2 10 1 0 0 5\n2 3 9 1 0 0 5\n")

    def test_empty_file(self):
        with pytest.raises(ParseError):
            parse_signature(b"")

    def test_no_pen_down(self):
        with pytest.raises(ParseError):
            parse_signature("2\n1 2 0 0 0 0 0\n2 3 1 0 0 0 0\n")

    def test_round_trip_100_random(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            sig = random_signature(rng)
            again = parse_signature(serialize_svc2004(sig))
            assert again.same_points(sig)
            assert again.points == sig.points

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_serialize_parse_serialize(self, seed):
        sig = random_signature(np.random.default_rng(seed))
        text = serialize_svc2004(sig)
        assert serialize_svc2004(parse_signature(text)) == text

    def test_serialize_rejects_fractional(self):
        sig = RawSignature(x=[0.5, 1], y=[0, 1], t=[0, 1], pen_down=[1, 1], pressure=[1, 1])
        with pytest.raises(ValueError):
            serialize_svc2004(sig)


class TestColumnMapped:
    def test_synthesized_fields(self):
        layout = DatasetLayout("column_mapped", ("x", "y", "pressure"), header_lines=1)
        sig = parse_signature("x y p\n0 0 3\n1.5 2 0\n3 4 7\n", layout)
        assert sig.t.tolist() == [0, 1, 2]
        assert sig.pen_down.tolist() == [True, False, True]
        assert sig.x.tolist() == [0, 1.5, 3]

    def test_missing_pressure_is_one(self):
        layout = DatasetLayout("column_mapped", ("t", "_", "x", "y"))
        sig = parse_signature("0 9 1 1\n5 9 2 3\n", layout)
        assert sig.pressure.tolist() == [1, 1] and sig.pen_down.all()
        assert sig.t.tolist() == [0, 5]

    def test_layout_requires_xy(self):
        with pytest.raises(ValueError):
            DatasetLayout("column_mapped", ("x", "t"))

    def test_layout_rejects_unknown_column(self):
        with pytest.raises(ValueError):
            DatasetLayout("column_mapped", ("x", "y", "speed"))


class TestRawSignatureInvariants:
    def test_arrays_are_read_only(self):
        sig = random_signature(np.random.default_rng(0))
        with pytest.raises(ValueError):
            sig.x[0] = 1

    def test_negative_pressure_rejected(self):
        with pytest.raises(ParseError):
            RawSignature(x=[0, 1], y=[0, 1], t=[0, 1], pen_down=[1, 1], pressure=[1, -1])

    def test_from_points_round_trip(self):
        sig = random_signature(np.random.default_rng(1))
        assert RawSignature.from_points(sig.points).same_points(sig)


class TestLoadDataset:
    def test_svc2004_rule_buckets(self, tmp_path):
        sig = random_signature(np.random.default_rng(2), 10)
        for k in range(1, 41):
            (tmp_path / f"U1S{k}.TXT").write_text(serialize_svc2004(sig))
        (tmp_path / "readme.md").write_text("not a signature")
        ds = load_dataset(tmp_path, SVC2004)
        assert ds.counts() == {"1": (20, 20)}
        assert all(s.label == GENUINE for s in ds["1"].genuine)
        assert all(s.label == SKILLED_FORGERY for s in ds["1"].forgeries)
        assert ds["1"].genuine[1].source_path.endswith("U1S2.TXT")

    def test_empty_directory(self, tmp_path):
        with pytest.raises(EmptyDataset):
            load_dataset(tmp_path)

    def test_testkit_counts(self, tmp_path):
        layout = write_testkit(tmp_path, n_users=5, n_genuine=8, n_forgery=8, seed=0)
        ds = load_dataset(tmp_path, layout)
        assert ds.counts() == {str(u): (8, 8) for u in range(1, 6)}
        assert len(match_files(tmp_path, layout)) == sum(g + f for g, f in ds.counts().values())

    def test_errors_collected_with_paths(self, tmp_path):
        layout = write_testkit(tmp_path, n_users=2, n_genuine=3, n_forgery=0, seed=0)
        (tmp_path / "U1S2.TXT").write_text("5\n1 2 3\n")
        (tmp_path / "U2S1.TXT").write_text("x\n")
        with pytest.raises(DatasetErrors) as e:
            load_dataset(tmp_path, layout)
        paths = sorted(p for p, _ in e.value.errors)
        assert paths[0].endswith("U1S2.TXT") and paths[1].endswith("U2S1.TXT")
        with pytest.raises(ParseError):
            load_dataset(tmp_path, layout, on_error="raise")
        ds = load_dataset(tmp_path, layout, on_error="skip")
        assert ds.counts() == {"1": (2, 0), "2": (2, 0)}
        assert len(ds.skipped) == 2

    def test_natural_user_order(self, tmp_path):
        layout = write_testkit(tmp_path, n_users=11, n_genuine=2, n_forgery=0, seed=0)
        assert list(load_dataset(tmp_path, layout)) == [str(u) for u in range(1, 12)]

    def test_corpus_ignores_labels(self, tmp_path):
        write_testkit(tmp_path, n_users=2, n_genuine=3, n_forgery=2, seed=0)
        assert len(load_corpus(tmp_path, SVC2004)) == 10


class TestSynthetic:
    def test_deterministic(self):
        a = generate_synthetic_signature(5, 3, 0.05)
        b = generate_synthetic_signature(5, 3, 0.05)
        assert a.same_points(b)

    def test_zero_jitter_ignores_seed(self):
        a = generate_synthetic_signature(1, 3, 0.0)
        b = generate_synthetic_signature(2, 3, 0.0)
        assert a.same_points(b)

    def test_jitter_domain(self):
        with pytest.raises(ValueError):
            generate_synthetic_signature(0, 0, 1.5)

    def test_templates_are_well_separated(self):
        # between-template distance exceeds 10x the within-template jitter distance
        ratios = []
        for s in range(50):
            a = generate_synthetic_signature(2 * s, 0, 0.05)
            b = generate_synthetic_signature(2 * s + 1, 0, 0.05)
            c = generate_synthetic_signature(2 * s, 1, 0.05)
            n = min(len(a), len(c))
            within = np.mean(np.hypot(a.x - b.x, a.y - b.y))
            between = np.mean(np.hypot(a.x[:n] - c.x[:n], a.y[:n] - c.y[:n]))
            ratios.append(between / within)
        assert np.mean(ratios) > 10

    def test_testkit_forgeries_use_other_templates(self):
        kit = make_testkit(2, 2, 2, 0.0, seed=0)
        gen, forg = kit["1"]
        assert not gen[0].same_points(forg[0])
        assert gen[0].same_points(gen[1])
