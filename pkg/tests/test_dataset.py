import json
import struct
from collections import Counter

import numpy as np
import pytest

from mmss.dataset import (
    DataError,
    batch_by_product,
    load_manifest,
    make_synthetic,
    read_tensor,
    write_dataset,
    write_tensor,
)


class TestTensorFile:
    def test_exact_layout(self, tmp_path):
        path = tmp_path / "t.bin"
        write_tensor(path, np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.5]]))
        blob = path.read_bytes()
        assert blob[:4] == b"MMSS"
        assert blob[4:7] == bytes([1, 0, 2])
        assert struct.unpack("<2I", blob[7:15]) == (2, 3)
        assert blob[15:] == np.array([1, 2, 3, 4, 5, 6.5], dtype="<f4").tobytes()

    def test_round_trip_widens(self, tmp_path):
        x = np.random.default_rng(0).normal(size=(5, 7)).astype(np.float32)
        write_tensor(tmp_path / "x.bin", x)
        y = read_tensor(tmp_path / "x.bin")
        assert y.dtype == np.float64
        np.testing.assert_array_equal(y, x.astype(np.float64))

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "t.bin"
        write_tensor(path, np.ones((2, 2)))
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(DataError, match="trailing"):
            read_tensor(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "t.bin"
        write_tensor(path, np.ones((2, 2)))
        path.write_bytes(path.read_bytes()[:-2])
        with pytest.raises(DataError):
            read_tensor(path)

    @pytest.mark.parametrize("patch,msg", [(b"XXXX", "magic"), (b"MMSS\x02", "version")])
    def test_bad_header(self, tmp_path, patch, msg):
        path = tmp_path / "t.bin"
        write_tensor(path, np.ones(3))
        blob = path.read_bytes()
        path.write_bytes(patch + blob[len(patch):])
        with pytest.raises(DataError, match=msg):
            read_tensor(path)


def _write_manifest(tmp_path, products):
    return write_dataset(tmp_path, products)


class TestManifest:
    def test_round_trip_bit_identical(self, tmp_path, tiny_products):
        path = _write_manifest(tmp_path, tiny_products)
        manifest, loaded = load_manifest(path)
        assert manifest.d_t == 8 and manifest.d_roi == 6
        assert [p.product_id for p in loaded] == [p.product_id for p in tiny_products]
        for a, b in zip(tiny_products, loaded):
            assert a.text_features.tobytes() == b.text_features.tobytes()
            assert a.image_features.tobytes() == b.image_features.tobytes()
            for ra, rb in zip(a.reviews, b.reviews):
                assert (ra.review_id, ra.label) == (rb.review_id, rb.label)
                assert ra.text_features.tobytes() == rb.text_features.tobytes()
                assert ra.image_features.tobytes() == rb.image_features.tobytes()

    def test_empty_products(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps({"version": 1, "d_t": 4, "d_roi": 4, "products": []}))
        with pytest.raises(DataError, match="manifest has no products"):
            load_manifest(path)

    def test_label_out_of_range_names_review(self, tmp_path, tiny_products):
        path = _write_manifest(tmp_path, tiny_products)
        raw = json.loads(path.read_text())
        bad = raw["products"][1]["reviews"][2]
        bad["label"] = 5
        path.write_text(json.dumps(raw))
        with pytest.raises(DataError, match=bad["review_id"]):
            load_manifest(path)

    def test_missing_file(self, tmp_path, tiny_products):
        path = _write_manifest(tmp_path, tiny_products)
        raw = json.loads(path.read_text())
        raw["products"][0]["reviews"][0]["image_file"] = "features/nope.bin"
        path.write_text(json.dumps(raw))
        with pytest.raises(DataError, match="nope.bin"):
            load_manifest(path)

    def test_dim_mismatch(self, tmp_path, tiny_products):
        path = _write_manifest(tmp_path, tiny_products)
        raw = json.loads(path.read_text())
        raw["d_t"] = 9
        path.write_text(json.dumps(raw))
        with pytest.raises(DataError, match="feature dim 8 != declared 9"):
            load_manifest(path)


class TestSynthetic:
    def test_deterministic(self):
        a = make_synthetic(3, 5, 6, 4, seed=1)
        b = make_synthetic(3, 5, 6, 4, seed=1)
        for pa, pb in zip(a, b):
            np.testing.assert_array_equal(pa.text_features, pb.text_features)
            for ra, rb in zip(pa.reviews, pb.reviews):
                assert ra.label == rb.label
                np.testing.assert_array_equal(ra.text_features, rb.text_features)
                np.testing.assert_array_equal(ra.image_features, rb.image_features)

    def test_labels_in_range(self):
        labels = [r.label for p in make_synthetic(10, 10, 4, 4, seed=2) for r in p.reviews]
        assert set(labels) <= set(range(5))
        assert len(set(labels)) == 5

    def test_shapes(self):
        for p in make_synthetic(4, 3, 6, 5, seed=3):
            assert p.text_features.shape[1] == 6 and p.image_features.shape[1] == 5
            assert p.image_features.shape[0] >= 1
            for r in p.reviews:
                assert r.text_features.shape[1] == 6 and r.image_features.shape[1] == 5

    def test_alignment_tracks_label_without_noise(self):
        # cosine of each review row to its best-matching product row
        def alignment(review, product):
            r = review / np.linalg.norm(review, axis=1, keepdims=True)
            p = product / np.linalg.norm(product, axis=1, keepdims=True)
            return float(np.mean(np.max(r @ p.T, axis=1)))

        by_label = {0: [], 4: []}
        for p in make_synthetic(30, 10, 16, 16, seed=4, s_noise=0.0):
            for r in p.reviews:
                if r.label in by_label:
                    by_label[r.label].append(
                        alignment(r.text_features, p.text_features)
                        + alignment(r.image_features, p.image_features)
                    )
        assert np.mean(by_label[4]) > np.mean(by_label[0])

    def test_invalid_counts(self):
        with pytest.raises(ValueError):
            make_synthetic(0, 3, 4, 4, seed=0)


class TestBatching:
    def _product(self, n):
        return make_synthetic(1, n, 2, 2, seed=n)[0]

    def test_small_product_one_batch(self):
        batches = batch_by_product([self._product(5)], 32)
        assert [len(b.reviews) for b in batches] == [5]

    def test_70_reviews(self):
        batches = batch_by_product([self._product(70)], 32)
        assert [len(b.reviews) for b in batches] == [32, 32, 6]

    @pytest.mark.parametrize("seed", [None, 0, 3])
    def test_partition(self, seed):
        products = make_synthetic(5, 9, 2, 2, seed=5)
        batches = batch_by_product(products, 4, seed=seed)
        seen = Counter(r.review_id for b in batches for r in b.reviews)
        expected = {r.review_id for p in products for r in p.reviews}
        assert set(seen) == expected
        assert max(seen.values()) == 1
        for b in batches:
            assert len(b.reviews) <= 4
            assert {r.review_id for r in b.reviews} <= {r.review_id for r in b.product.reviews}

    def test_shuffle_deterministic(self):
        products = make_synthetic(4, 9, 2, 2, seed=6)
        ids = lambda bs: [[r.review_id for r in b.reviews] for b in bs]  # noqa: E731
        assert ids(batch_by_product(products, 4, seed=[1, 2])) == ids(batch_by_product(products, 4, seed=[1, 2]))
        assert ids(batch_by_product(products, 4, seed=[1, 2])) != ids(batch_by_product(products, 4, seed=[1, 3]))

    def test_batch_size_floor(self):
        with pytest.raises(ValueError):
            batch_by_product([self._product(3)], 1)
