import gzip
import struct

import numpy as np
import pytest

from nystromnet.data import (BadMagicError, DataFormatError, Dataset, EmptyDatasetError,
                             FrozenExtractor, NonNumericFieldError, TruncatedPayloadError, extract,
                             load_csv, load_idx, make_blobs, read_idx, subsample_per_class,
                             write_csv, write_idx, write_manifest)


def idx_bytes(magic_type, dims, payload):
    return bytes([0, 0, magic_type, len(dims)]) + struct.pack(f">{len(dims)}I", *dims) + payload


class TestBlobs:
    def test_deterministic(self):
        a, b = make_blobs(300, 5, 3, 4.0, seed=2), make_blobs(300, 5, 3, 4.0, seed=2)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.split, b.split)

    def test_balanced(self):
        ds = make_blobs(103, 4, 10, 5.0, seed=0)
        counts = np.bincount(ds.labels)
        assert counts.max() - counts.min() <= 1

    def test_splits(self):
        ds = make_blobs(1000, 3, 4, 5.0, seed=1)
        n = {s: int(np.sum(ds.split == s)) for s in ("train", "val", "test")}
        assert sum(n.values()) == 1000
        assert abs(n["train"] - 700) <= 4
        for s in ("train", "val", "test"):
            counts = np.bincount(ds.labels[ds.split == s], minlength=4)
            assert counts.max() - counts.min() <= 2

    def test_center_separation(self):
        ds = make_blobs(4000, 6, 5, 7.0, seed=3)
        centers = np.array([ds.features[ds.labels == c].mean(0) for c in range(5)])
        d = np.linalg.norm(centers[:, None] - centers[None], axis=-1)[np.triu_indices(5, 1)]
        assert d.min() > 7.0 * 0.9

    def test_separable_limit(self):
        ds = make_blobs(400, 3, 2, 100.0, seed=0)
        x, y = ds.features, ds.labels
        # nearest-center rule is a linear classifier for two classes
        mu = np.array([x[y == c].mean(0) for c in (0, 1)])
        pred = np.argmin(((x[:, None] - mu[None]) ** 2).sum(-1), axis=1)
        assert np.mean(pred == y) == 1.0

    def test_needs_two_classes(self):
        with pytest.raises(ValueError):
            make_blobs(10, 2, 1, 1.0)


class TestSubsample:
    def test_counts(self):
        ds = subsample_per_class(make_blobs(1000, 4, 10, 5.0, seed=0), 5, seed=1)
        _, y = ds.train
        assert len(y) == 50
        np.testing.assert_array_equal(np.bincount(y), 5)

    def test_val_test_untouched(self):
        base = make_blobs(1000, 4, 10, 5.0, seed=0)
        ds = subsample_per_class(base, 5, seed=1)
        np.testing.assert_array_equal(ds.split == "val", base.split == "val")
        np.testing.assert_array_equal(ds.split == "test", base.split == "test")
        assert len(ds.landmark_pool()[1]) == len(base.train[1])

    def test_full_is_identity(self):
        base = make_blobs(200, 3, 2, 5.0, seed=0)
        k = int(np.bincount(base.train[1]).min())
        assert k == int(np.bincount(base.train[1]).max())
        ds = subsample_per_class(base, k, seed=0)
        np.testing.assert_array_equal(ds.split, base.split)

    def test_seeds_differ(self):
        base = make_blobs(1000, 4, 10, 5.0, seed=0)
        a = subsample_per_class(base, 5, seed=1)
        b = subsample_per_class(base, 5, seed=2)
        assert not np.array_equal(a.split, b.split)
        assert len(a.train[1]) == len(b.train[1])

    def test_insufficient(self):
        with pytest.raises(ValueError):
            subsample_per_class(make_blobs(100, 2, 10, 5.0), 20)


class TestDatasetInvariants:
    def test_nonfinite(self):
        with pytest.raises(ValueError):
            Dataset(np.array([[np.nan]]), np.array([0]), np.array(["train"]))

    def test_bad_split(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((1, 1)), np.array([0]), np.array(["oops"]))


class TestIdx:
    def test_images(self, tmp_path, rng):
        pix = rng.integers(0, 256, size=(3, 28, 28), dtype=np.uint8)
        (tmp_path / "img").write_bytes(idx_bytes(0x08, (3, 28, 28), pix.tobytes()))
        (tmp_path / "lab").write_bytes(idx_bytes(0x08, (3,), bytes([1, 0, 1])))
        arr = read_idx(tmp_path / "img")
        assert arr.shape == (3, 28, 28)
        np.testing.assert_array_equal(arr, pix)
        ds = load_idx(tmp_path / "img", tmp_path / "lab")
        assert ds.features.shape == (3, 784)
        np.testing.assert_array_equal(ds.features, pix.reshape(3, -1) / 255.0)
        np.testing.assert_array_equal(ds.labels, [1, 0, 1])

    def test_magic_0x803(self, tmp_path):
        raw = idx_bytes(0x08, (2, 28, 28), bytes(2 * 784))
        assert raw[:4] == bytes.fromhex("00000803")

    def test_gzip(self, tmp_path):
        (tmp_path / "a.gz").write_bytes(gzip.compress(idx_bytes(0x08, (2, 2), bytes([1, 2, 3, 4]))))
        np.testing.assert_array_equal(read_idx(tmp_path / "a.gz"), [[1, 2], [3, 4]])

    def test_big_endian_ints(self, tmp_path):
        arr = np.array([1, -2, 70000], dtype=np.int32)
        write_idx(tmp_path / "i", arr)
        assert (tmp_path / "i").read_bytes()[8:12] == b"\x00\x00\x00\x01"
        np.testing.assert_array_equal(read_idx(tmp_path / "i"), arr)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x").write_bytes(b"\x01\x02\x08\x01\x00\x00\x00\x01\x00")
        with pytest.raises(BadMagicError):
            read_idx(tmp_path / "x")

    def test_truncated(self, tmp_path):
        (tmp_path / "x").write_bytes(idx_bytes(0x08, (4, 4), bytes(10)))
        with pytest.raises(TruncatedPayloadError):
            read_idx(tmp_path / "x")

    def test_errors_distinct(self):
        assert len({BadMagicError, TruncatedPayloadError, NonNumericFieldError, EmptyDatasetError}) == 4
        assert all(issubclass(e, DataFormatError) for e in
                   (BadMagicError, TruncatedPayloadError, NonNumericFieldError, EmptyDatasetError))


class TestCsv:
    def test_round_trip(self, tmp_path, rng):
        x = rng.standard_normal((40, 5)) * 1e3
        y = rng.integers(0, 3, 40)
        write_csv(tmp_path / "d.csv", x, y)
        ds = load_csv(tmp_path / "d.csv")
        np.testing.assert_allclose(ds.features, x, rtol=0, atol=1e-12)
        np.testing.assert_array_equal(ds.labels, y)
        assert (tmp_path / "d.csv").read_text().splitlines()[0] == "label,f0,f1,f2,f3,f4"

    def test_empty_body(self, tmp_path):
        (tmp_path / "e.csv").write_text("label,f0,f1\n")
        with pytest.raises(EmptyDatasetError):
            load_csv(tmp_path / "e.csv")

    def test_non_numeric(self, tmp_path):
        (tmp_path / "n.csv").write_text("label,f0\n1,2.0\n0,abc\n")
        with pytest.raises(NonNumericFieldError, match=":3"):
            load_csv(tmp_path / "n.csv")

    def test_missing_header(self, tmp_path):
        (tmp_path / "h.csv").write_text("1,2.0\n")
        with pytest.raises(DataFormatError):
            load_csv(tmp_path / "h.csv")

    def test_manifest(self, tmp_path):
        import json
        ds = make_blobs(50, 2, 2, 3.0, seed=4)
        write_manifest(ds, tmp_path / "m.json")
        doc = json.loads((tmp_path / "m.json").read_text())
        assert doc["seed"] == 4 and sum(len(v) for v in doc["splits"].values()) == 50


class TestExtractor:
    def test_zero(self):
        fx = FrozenExtractor.make(8, 16, seed=0)
        np.testing.assert_array_equal(extract(fx, np.zeros((2, 8))), 0)

    def test_nonnegative_and_frozen(self, rng):
        fx = FrozenExtractor.make(8, 16, seed=0)
        x = rng.standard_normal((30, 8))
        a = extract(fx, x)
        assert a.min() >= 0
        np.testing.assert_array_equal(extract(fx, x), a)
        np.testing.assert_array_equal(extract(FrozenExtractor.make(8, 16, seed=0), x), a)
        with pytest.raises(ValueError):
            fx.projection[0, 0] = 1.0

    def test_shift(self, rng):
        fx = FrozenExtractor.make(4, 4, seed=1, shift=0.5)
        assert extract(fx, rng.standard_normal((10, 4))).min() >= 0.5

    def test_dimension(self):
        with pytest.raises(ValueError):
            extract(FrozenExtractor.make(4, 4), np.zeros((1, 5)))
