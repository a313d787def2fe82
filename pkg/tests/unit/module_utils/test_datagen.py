import numpy as np
import pytest

from refcal.module_utils.datagen import (
    binary_group,
    class_centers,
    class_counts,
    corrupt,
    corruption_sigma,
    estimated_centers,
    generate_blobs,
    generate_ood,
    ood_center,
    round_half_up,
    split_sizes,
)
from refcal.module_utils.errors import (
    EmptyGroup,
    IncompleteMap,
    InvalidImbalance,
    SeverityOutOfRange,
    TooFewSamples,
    UsageError,
)


@pytest.fixture
def dataset():
    return generate_blobs(4, 120, 3, imbalance_factor=0.5, seed=3)


class TestClassCounts:
    def test_long_tail(self):
        counts = class_counts(10, 1000, 0.1)

        assert [1000, 774, 599] == counts[:3]
        assert 100 == counts[-1]
        assert counts == sorted(counts, reverse=True)

    def test_default_scenario(self):
        assert [500, 232, 108, 50] == class_counts(4, 500, 0.1)

    def test_balanced(self):
        assert [40] * 5 == class_counts(5, 40, 1.0)

    def test_minimum_two(self):
        assert 2 == class_counts(3, 6, 0.01)[-1]

    @pytest.mark.parametrize("value,expected", [(2.5, 3), (3.49, 3), (0.5, 1), (7.0, 7)])
    def test_round_half_up(self, value, expected):
        assert expected == round_half_up(value)


class TestSplits:
    @pytest.mark.parametrize(
        "count,expected",
        [
            (500, {"train": 350, "val": 75, "test": 75}),
            (4, {"train": 2, "val": 1, "test": 1}),
            (3, {"train": 3, "val": 0, "test": 0}),
        ],
    )
    def test_sizes(self, count, expected):
        assert expected == split_sizes(count)

    def test_stratified(self, dataset):
        for split in ("train", "val", "test"):
            assert np.all(dataset.class_counts(split) >= 1)
        assert np.all(dataset.class_counts("train") >= 2)
        assert dataset.size == sum(int(dataset.mask(split).sum()) for split in ("train", "val", "test"))


class TestClassCenters:
    @pytest.mark.parametrize("num_classes,dim", [(4, 8), (10, 8), (3, 2), (3, 1)])
    def test_separation(self, num_classes, dim):
        centers = class_centers(num_classes, dim, 4.0)
        distances = np.linalg.norm(centers[:, np.newaxis] - centers[np.newaxis, :], axis=2)

        assert (num_classes, dim) == centers.shape
        assert np.min(distances[~np.eye(num_classes, dtype=bool)]) >= 4.0 - 1e-9


class TestGenerateBlobs:
    def test_counts_follow_law(self, dataset):
        assert class_counts(4, 120, 0.5) == dataset.class_counts().tolist()
        assert 4 == dataset.meta.num_classes
        assert 0.5 == dataset.meta.imbalance_factor
        assert 3 == dataset.meta.seed
        assert 0 == dataset.meta.corruption_severity

    def test_deterministic(self):
        first = generate_blobs(3, 30, 2, seed=11)
        second = generate_blobs(3, 30, 2, seed=11)

        assert np.array_equal(first.features, second.features)
        assert np.array_equal(first.labels, second.labels)
        assert np.array_equal(first.split, second.split)

    def test_seed_matters(self):
        assert not np.array_equal(generate_blobs(3, 30, 2, seed=1).features, generate_blobs(3, 30, 2, seed=2).features)

    @pytest.mark.parametrize("imbalance", [0.0, -0.5, 1.5])
    def test_invalid_imbalance(self, imbalance):
        with pytest.raises(InvalidImbalance) as e:
            generate_blobs(4, 100, 2, imbalance_factor=imbalance)

        assert 2 == e.value.exit_code

    @pytest.mark.parametrize("num_classes,n_max", [(1, 100), (4, 7)])
    def test_too_few_samples(self, num_classes, n_max):
        with pytest.raises(TooFewSamples):
            generate_blobs(num_classes, n_max, 2)

    def test_invalid_dim(self):
        with pytest.raises(UsageError):
            generate_blobs(3, 30, 0)


class TestBinaryGroup:
    def test_pairwise_sum(self, dataset):
        grouped = binary_group(dataset, {0: 0, 1: 0, 2: 1, 3: 1})
        counts = dataset.class_counts()

        assert [counts[0] + counts[1], counts[2] + counts[3]] == grouped.class_counts().tolist()
        assert 2 == grouped.meta.num_classes
        assert np.array_equal(dataset.features, grouped.features)

    def test_identity_map(self):
        dataset = generate_blobs(2, 20, 2, seed=0)

        grouped = binary_group(dataset, {0: 0, 1: 1})

        assert np.array_equal(dataset.labels, grouped.labels)
        assert dataset.meta == grouped.meta

    def test_incomplete_map(self, dataset):
        with pytest.raises(IncompleteMap):
            binary_group(dataset, {0: 0, 1: 0, 2: 1})

    def test_group_out_of_range(self, dataset):
        with pytest.raises(IncompleteMap):
            binary_group(dataset, {0: 0, 1: 0, 2: 1, 3: 2})

    def test_empty_group(self, dataset):
        with pytest.raises(EmptyGroup):
            binary_group(dataset, {0: 0, 1: 0, 2: 0, 3: 0})


class TestCorrupt:
    def test_only_test_split(self, dataset):
        corrupted = corrupt(dataset, 3, seed=0)
        test = dataset.mask("test")

        assert np.array_equal(dataset.features[~test], corrupted.features[~test])
        assert not np.array_equal(dataset.features[test], corrupted.features[test])
        assert 3 == corrupted.meta.corruption_severity
        assert 0 == dataset.meta.corruption_severity

    def test_linear_sigma(self, dataset):
        assert np.allclose(5.0 * corruption_sigma(dataset, 1), corruption_sigma(dataset, 5))

    def test_deterministic(self, dataset):
        assert np.array_equal(corrupt(dataset, 2, seed=4).features, corrupt(dataset, 2, seed=4).features)

    @pytest.mark.parametrize("severity", [0, 6])
    def test_out_of_range(self, dataset, severity):
        with pytest.raises(SeverityOutOfRange):
            corrupt(dataset, severity)


class TestGenerateOod:
    def test_displacement(self, dataset):
        center, spread = ood_center(dataset)
        max_norm = np.linalg.norm(estimated_centers(dataset), axis=1).max()

        assert np.linalg.norm(center) >= 3.0 * max_norm - 1e-9
        assert spread > 0

    def test_shape_and_determinism(self, dataset):
        first = generate_ood(dataset, 50, seed=5)

        assert (50, 3) == first.shape
        assert np.array_equal(first, generate_ood(dataset, 50, seed=5))

    def test_too_few(self, dataset):
        with pytest.raises(TooFewSamples):
            generate_ood(dataset, 0)
