import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ladc.dataset import (
    FeatureDataset,
    SyntheticSpec,
    cross_polytope_spec,
    generate_synthetic,
    load_dataset,
    long_tail_counts,
    partition_head_tail,
    save_dataset,
)
from ladc.errors import (
    DimensionMismatch,
    EmptyDataset,
    InvalidCovariance,
    LabelOutOfRange,
    MalformedHeader,
    NonFiniteValue,
    UnreadableFile,
)


def write_container(path, labels, feats, d, c, magic=b"LADC", version=1):
    n = len(labels)
    head = struct.pack("<4sIIIQ", magic, version, d, c, n)
    body = np.asarray(labels, "<u4").tobytes() + np.asarray(feats, "<f4").tobytes()
    path.write_bytes(head + body)


class TestBinaryContainer:
    def test_two_rows_round_trip(self, tmp_path):
        p = tmp_path / "d.ladc"
        write_container(p, [0, 1], [[1, 0, 0], [0, 1, 0]], d=3, c=2)
        ds = load_dataset(p)
        assert ds.counts.tolist() == [1, 1]
        assert ds.features.tolist() == [[1, 0, 0], [0, 1, 0]]
        assert ds.dim == 3

    def test_save_load_is_bit_exact(self, tmp_path, toy_dataset):
        p = tmp_path / "toy.ladc"
        save_dataset(toy_dataset, p)
        back = load_dataset(p)
        assert back == toy_dataset
        assert back.features.tobytes() == toy_dataset.features.tobytes()

    def test_layout_matches_documented_header(self, tmp_path, toy_dataset):
        p = tmp_path / "toy.ladc"
        save_dataset(toy_dataset, p)
        raw = p.read_bytes()
        assert struct.unpack_from("<4sIIIQ", raw) == (b"LADC", 1, 3, 5, 100)
        assert len(raw) == 24 + 4 * 100 + 4 * 100 * 3

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.ladc"
        write_container(p, [0], [[1.0]], d=1, c=1, magic=b"NOPE")
        with pytest.raises(MalformedHeader, match="byte 0"):
            load_dataset(p)

    def test_bad_version(self, tmp_path):
        p = tmp_path / "x.ladc"
        write_container(p, [0], [[1.0]], d=1, c=1, version=2)
        with pytest.raises(MalformedHeader, match="version"):
            load_dataset(p)

    def test_truncated_header(self, tmp_path):
        p = tmp_path / "x.ladc"
        p.write_bytes(b"LADC\x01")
        with pytest.raises(MalformedHeader):
            load_dataset(p)

    def test_payload_shorter_than_declared_dim(self, tmp_path):
        p = tmp_path / "x.ladc"
        write_container(p, [0, 1], [[1, 2, 3], [4, 5, 6]], d=4, c=2)
        with pytest.raises(DimensionMismatch):
            load_dataset(p)

    def test_nan_feature(self, tmp_path):
        p = tmp_path / "x.ladc"
        write_container(p, [0, 0], [[1.0, 2.0], [np.nan, 0.0]], d=2, c=1)
        with pytest.raises(NonFiniteValue, match="row 1"):
            load_dataset(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(UnreadableFile):
            load_dataset(tmp_path / "absent.ladc")

    def test_label_out_of_range(self, tmp_path):
        p = tmp_path / "x.ladc"
        write_container(p, [0, 5], [[1.0], [2.0]], d=1, c=2)
        with pytest.raises(LabelOutOfRange):
            load_dataset(p)


class TestCsv:
    def test_single_row(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("1,0.5,0.25\n")
        ds = load_dataset(p, dim=2)
        assert ds.labels.tolist() == [1]
        assert ds.features.tolist() == [[0.5, 0.25]]

    def test_declared_dim_disagrees_with_row(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("0,1,2,3,4\n1,1,2,3\n")
        with pytest.raises(DimensionMismatch, match="row 2"):
            load_dataset(p, dim=4)

    def test_round_trip(self, tmp_path, toy_dataset):
        p = tmp_path / "toy.csv"
        save_dataset(toy_dataset, p)
        assert load_dataset(p, num_classes=5) == toy_dataset

    def test_non_numeric(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("0,abc\n")
        with pytest.raises(MalformedHeader, match="row 1"):
            load_dataset(p)

    def test_infinite_value(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("0,1.0\n0,inf\n")
        with pytest.raises(NonFiniteValue, match="row 2"):
            load_dataset(p)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("")
        with pytest.raises(EmptyDataset):
            load_dataset(p)


class TestFeatureDataset:
    def test_read_only(self, toy_dataset):
        with pytest.raises(ValueError):
            toy_dataset.features[0, 0] = 1.0

    def test_stores_float32(self, toy_dataset):
        assert toy_dataset.features.dtype == np.float32

    def test_rejects_label_outside_classes(self):
        with pytest.raises(LabelOutOfRange):
            FeatureDataset(np.zeros((2, 2)), np.array([0, 3]), 2)


class TestPartition:
    def test_hand_computed_prefix(self):
        p = partition_head_tail([50, 30, 10, 6, 4], 0.6)
        assert p.head == (0, 1)
        assert p.tail == (2, 3, 4)

    def test_single_class_has_empty_tail(self):
        p = partition_head_tail([100], 0.6)
        assert p.head == (0,) and p.tail == ()

    def test_exact_threshold_counts_as_reached(self):
        p = partition_head_tail([10] * 5, 0.6)
        assert p.head == (0, 1, 2)
        assert p.tail == (3, 4)

    def test_unsorted_counts(self):
        p = partition_head_tail([4, 50, 6, 30, 10], 0.6)
        assert p.head == (1, 3)

    def test_equal_counts_break_by_index(self):
        p = partition_head_tail([5, 20, 20, 5], 0.5)
        assert p.head == (1, 2)
        p = partition_head_tail([5, 20, 20, 5], 0.3)
        assert p.head == (1,)

    def test_all_zero_counts(self):
        with pytest.raises(EmptyDataset):
            partition_head_tail([0, 0])

    @pytest.mark.parametrize("ratio", [0.0, -0.1, 1.5])
    def test_ratio_domain(self, ratio):
        with pytest.raises(ValueError):
            partition_head_tail([3, 2], ratio)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, 500), min_size=1, max_size=30).filter(lambda c: sum(c) > 0),
           st.floats(0.01, 1.0), st.floats(0.01, 1.0))
    def test_head_grows_with_ratio(self, counts, r1, r2):
        r1, r2 = sorted((r1, r2))
        h1 = set(partition_head_tail(counts, r1).head)
        h2 = set(partition_head_tail(counts, r2).head)
        assert h1 <= h2

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, 500), min_size=1, max_size=30).filter(lambda c: sum(c) > 0),
           st.floats(0.01, 1.0))
    def test_head_is_minimal_prefix_reaching_mass(self, counts, ratio):
        p = partition_head_tail(counts, ratio)
        assert sorted(p.head + p.tail) == list(range(len(counts)))
        head_mass = sum(counts[i] for i in p.head)
        assert head_mass >= ratio * sum(counts) * (1 - 1e-12)
        # dropping the last head class must fall short of the threshold
        smallest = p.head[-1]
        assert head_mass - counts[smallest] < ratio * sum(counts)
        assert min(counts[i] for i in p.head) >= max((counts[i] for i in p.tail), default=0)


class TestSyntheticGenerator:
    def test_balanced_profile(self):
        assert long_tail_counts(2, 1, 10) == [10, 10]

    def test_three_class_profile(self):
        assert long_tail_counts(3, 100, 100) == [100, 10, 1]

    def test_profile_never_below_one(self):
        assert min(long_tail_counts(10, 1e6, 5)) == 1

    @given(st.integers(2, 40), st.floats(1.0, 500.0), st.integers(1, 2000))
    def test_profile_non_increasing(self, c, imb, n1):
        counts = long_tail_counts(c, imb, n1)
        assert counts[0] == n1
        assert all(a >= b for a, b in zip(counts, counts[1:]))

    def _spec(self, seed=0, imb=1.0):
        means = np.array([[0.0, 0.0], [3.0, 0.0]])
        covs = np.array([np.eye(2), 0.5 * np.eye(2)])
        return SyntheticSpec(2, 2, imb, 10, means, covs, seed=seed, test_per_class=7)

    def test_balanced_generation(self):
        train, test = generate_synthetic(self._spec())
        assert train.counts.tolist() == [10, 10]
        assert test.counts.tolist() == [7, 7]

    def test_same_seed_is_bit_identical(self):
        a = generate_synthetic(self._spec(seed=4))
        b = generate_synthetic(self._spec(seed=4))
        assert a[0].features.tobytes() == b[0].features.tobytes()
        assert a[1].features.tobytes() == b[1].features.tobytes()
        c = generate_synthetic(self._spec(seed=5))
        assert a[0].features.tobytes() != c[0].features.tobytes()

    def test_rejects_indefinite_covariance(self):
        spec = self._spec()
        covs = spec.true_covariances.copy()
        covs[1] = np.diag([1.0, -1.0])
        bad = SyntheticSpec(2, 2, 1.0, 10, spec.true_means, covs)
        with pytest.raises(InvalidCovariance):
            generate_synthetic(bad)

    @pytest.mark.parametrize("c", [2, 5, 10, 17])
    def test_cross_polytope_classes_near_first_two(self, c):
        spec = cross_polytope_spec(num_classes=c, dim=max(16, c), imbalance_factor=100)
        for t in range(2, c):
            d = min(np.linalg.norm(spec.true_means[t] - spec.true_means[h]) for h in (0, 1))
            assert d < 1.0

    def test_cross_polytope_default_tails_near_head(self):
        spec = cross_polytope_spec()
        part = partition_head_tail(spec.counts, 0.6)
        assert part.head == (0, 1)
        for t in part.tail:
            d = min(np.linalg.norm(spec.true_means[t] - spec.true_means[h]) for h in part.head)
            assert d < 1.0
