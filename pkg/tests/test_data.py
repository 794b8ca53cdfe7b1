import numpy as np
import pytest

from hiercons.data import (
    DatasetError,
    SampleSet,
    SyntheticConfig,
    dataset_to_csv,
    generate,
    load_dataset,
    parse_dataset,
    write_dataset,
)
from hiercons.hierarchy import balanced_hierarchy, lift_labels

SPEC = balanced_hierarchy([3, 7, 15])


def _nearest_centroid_accuracy(train, test):
    classes = np.unique(train.y[:, -1])
    centroids = np.stack([train.x[train.y[:, -1] == c].mean(axis=0) for c in classes])
    d = ((test.x[:, None, :] - centroids[None]) ** 2).sum(axis=-1)
    return float(np.mean(classes[np.argmin(d, axis=1)] == test.y[:, -1]))


class TestGenerate:
    def test_separable_data_nearest_centroid(self):
        data = generate(SPEC, SyntheticConfig(level_spreads=(12.0, 12.0, 12.0), seed=1))
        assert _nearest_centroid_accuracy(data["train"], data["test"]) >= 0.99

    def test_same_seed_identical(self):
        cfg = SyntheticConfig(noise_rate=0.2, clusters_per_class=2, seed=4)
        a, b = generate(SPEC, cfg), generate(SPEC, cfg)
        for s in a:
            assert a[s].x.tobytes() == b[s].x.tobytes()
            np.testing.assert_array_equal(a[s].y, b[s].y)

    def test_different_seeds_differ(self):
        a = generate(SPEC, SyntheticConfig(seed=0))["train"].x
        b = generate(SPEC, SyntheticConfig(seed=1))["train"].x
        assert not np.array_equal(a, b)

    def test_noise_preserves_parent(self):
        clean = generate(SPEC, SyntheticConfig(seed=2))
        noisy = generate(SPEC, SyntheticConfig(noise_rate=0.2, seed=2))
        for s in ("train", "val"):
            np.testing.assert_array_equal(noisy[s].y, lift_labels(SPEC, noisy[s].y[:, -1]))
            assert np.all(noisy[s].y[:, :2] == clean[s].y[:, :2])
            flipped = np.mean(noisy[s].y[:, -1] != clean[s].y[:, -1])
            assert 0.1 < flipped < 0.3
        np.testing.assert_array_equal(noisy["test"].y, clean["test"].y)

    def test_splits_partition_population(self):
        cfg = SyntheticConfig(samples_per_class=20, seed=3)
        data = generate(SPEC, cfg)
        ids = np.concatenate([data[s].ids for s in ("train", "val", "test")])
        assert ids.size == np.unique(ids).size == 15 * 20
        assert [len(data[s]) for s in ("train", "val", "test")] == [150, 75, 75]
        for s in data:
            assert set(np.unique(data[s].y[:, -1])) == set(range(15))

    def test_noise_rate_out_of_range(self):
        for rate in (1.0, 1.5, -0.1):
            with pytest.raises(DatasetError):
                generate(SPEC, SyntheticConfig(noise_rate=rate))

    def test_spread_count_mismatch(self):
        with pytest.raises(DatasetError):
            generate(SPEC, SyntheticConfig(level_spreads=(6.0, 3.0)))

    def test_too_few_samples(self):
        with pytest.raises(DatasetError):
            generate(SPEC, SyntheticConfig(samples_per_class=3))


class TestCSV:
    def test_round_trip(self, tmp_path):
        data = generate(SPEC, SyntheticConfig(samples_per_class=8, seed=5))
        write_dataset(tmp_path / "train.csv", data["train"])
        back = load_dataset(tmp_path / "train.csv", SPEC, 16)
        assert back.x.tobytes() == data["train"].x.tobytes()
        np.testing.assert_array_equal(back.y, data["train"].y)

    def test_fine_only_reconstructs_ancestors(self):
        data = generate(SPEC, SyntheticConfig(samples_per_class=8, seed=6))["val"]
        text = dataset_to_csv(data, fine_only=True)
        assert text.splitlines()[0].endswith(",f15,y3")
        back = parse_dataset(text, SPEC)
        np.testing.assert_array_equal(back.y, lift_labels(SPEC, data.y[:, -1]))

    def test_width_error(self):
        spec = balanced_hierarchy([2, 4])
        text = "f0,f1,f2,y1,y2\n0.1,0.2,0.3,0,1\n"
        with pytest.raises(DatasetError, match="3 features, expected 4"):
            parse_dataset(text, spec, feature_dim=4)

    @pytest.mark.parametrize("text, match", [
        ("f0,y1,y2\n0.1,0\n", "expected 3 fields"),
        ("f0,y1,y2\nabc,0,1\n", "malformed"),
        ("f0,y1,y2\n0.1,0,9\n", "out of range"),
        ("f0,y1\n0.1,0\n", "label columns"),
        ("f0,z,y2\n0.1,0,1\n", "unrecognised"),
        ("f0,y1,y2\nnan,0,1\n", "non-finite"),
        ("", "empty"),
    ])
    def test_malformed(self, text, match):
        with pytest.raises(DatasetError, match=match):
            parse_dataset(text, balanced_hierarchy([2, 4]))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path / "nope.csv", SPEC)

    def test_sample_set_shape_check(self):
        with pytest.raises(DatasetError):
            SampleSet(np.zeros((3, 2)), np.zeros((2, 1)))
