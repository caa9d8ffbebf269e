"""Feature ingestion, list-wise batching, and a synthetic review corpus.

Feature tensor files are a small little-endian binary container::

    b"MMSS" | u8 version=1 | u8 dtype (0 = float32) | u8 ndim | ndim x u32 dims | payload

The manifest is JSON and references one text and one image feature file per
product and per review.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"MMSS"
FORMAT_VERSION = 1
DTYPE_FLOAT32 = 0
MANIFEST_VERSION = 1
LABELS = range(5)


class DataError(Exception):
    """Malformed feature file or manifest."""


@dataclass(frozen=True)
class ReviewRecord:
    review_id: str
    text_features: np.ndarray
    image_features: np.ndarray
    label: int


@dataclass(frozen=True)
class ProductRecord:
    product_id: str
    text_features: np.ndarray
    image_features: np.ndarray
    reviews: tuple

    @property
    def d_t(self):
        return self.text_features.shape[1]

    @property
    def d_roi(self):
        return self.image_features.shape[1]


@dataclass
class Manifest:
    version: int
    d_t: int
    d_roi: int
    products: list = field(default_factory=list)


# --------------------------------------------------------------------------
# tensor files
# --------------------------------------------------------------------------


def write_tensor(path, array):
    array = np.asarray(array)
    if array.ndim > 255:
        raise ValueError("too many dimensions")
    payload = np.ascontiguousarray(array, dtype="<f4")
    header = MAGIC + struct.pack("<BBB", FORMAT_VERSION, DTYPE_FLOAT32, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def read_tensor(path):
    """Load a feature file, widened to float64."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read feature file {path}: {exc.strerror}") from exc
    if len(blob) < 7 or blob[:4] != MAGIC:
        raise DataError(f"{path}: bad magic bytes")
    version, dtype, ndim = struct.unpack_from("<BBB", blob, 4)
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {version}")
    if dtype != DTYPE_FLOAT32:
        raise DataError(f"{path}: unsupported dtype code {dtype}")
    offset = 7 + 4 * ndim
    if len(blob) < offset:
        raise DataError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{ndim}I", blob, 7)
    expected = 4 * int(np.prod(dims, dtype=np.int64))
    actual = len(blob) - offset
    if actual < expected:
        raise DataError(f"{path}: payload has {actual} bytes, expected {expected}")
    if actual > expected:
        raise DataError(f"{path}: {actual - expected} trailing bytes after payload")
    data = np.frombuffer(blob, dtype="<f4", offset=offset).reshape(dims)
    return data.astype(np.float64)


# --------------------------------------------------------------------------
# manifest
# --------------------------------------------------------------------------


def _load_matrix(base, rel, what, d_expected):
    arr = read_tensor(base / rel)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise DataError(f"{what}: expected a non-empty matrix, got shape {arr.shape}")
    if arr.shape[1] != d_expected:
        raise DataError(f"{what}: feature dim {arr.shape[1]} != declared {d_expected}")
    return arr


def load_manifest(path):
    """Read a manifest and every feature file it references.

    Returns ``(manifest, products)`` with products in manifest order.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from exc
    base = path.parent
    try:
        manifest = Manifest(
            version=int(raw["version"]),
            d_t=int(raw["d_t"]),
            d_roi=int(raw["d_roi"]),
            products=list(raw["products"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"manifest {path} missing or malformed field: {exc}") from exc
    if manifest.version != MANIFEST_VERSION:
        raise DataError(f"unsupported manifest version {manifest.version}")
    if not manifest.products:
        raise DataError("manifest has no products")

    products = []
    seen_reviews = set()
    for entry in manifest.products:
        pid = str(entry.get("product_id"))
        reviews_raw = entry.get("reviews") or []
        if not reviews_raw:
            raise DataError(f"product {pid} has no reviews")
        try:
            t_p = _load_matrix(base, entry["text_file"], f"product {pid} text", manifest.d_t)
            v_p = _load_matrix(base, entry["image_file"], f"product {pid} image", manifest.d_roi)
        except KeyError as exc:
            raise DataError(f"product {pid} missing field {exc}") from exc
        reviews = []
        for r in reviews_raw:
            rid = str(r.get("review_id"))
            if rid in seen_reviews:
                raise DataError(f"duplicate review_id {rid}")
            seen_reviews.add(rid)
            label = r.get("label")
            if not isinstance(label, int) or isinstance(label, bool) or label not in LABELS:
                raise DataError(f"review {rid}: label {label!r} outside {{0..4}}")
            try:
                t_r = _load_matrix(base, r["text_file"], f"review {rid} text", manifest.d_t)
                v_r = _load_matrix(base, r["image_file"], f"review {rid} image", manifest.d_roi)
            except KeyError as exc:
                raise DataError(f"review {rid} missing field {exc}") from exc
            reviews.append(ReviewRecord(rid, t_r, v_r, label))
        products.append(ProductRecord(pid, t_p, v_p, tuple(reviews)))
    return manifest, products


def write_dataset(out_dir, products, name="manifest.json"):
    """Write feature files plus a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    os.makedirs(feat_dir, exist_ok=True)
    if not products:
        raise ValueError("no products to write")
    d_t, d_roi = products[0].d_t, products[0].d_roi
    entries = []
    for p in products:
        p_text = f"features/{p.product_id}.text.bin"
        p_img = f"features/{p.product_id}.image.bin"
        write_tensor(out_dir / p_text, p.text_features)
        write_tensor(out_dir / p_img, p.image_features)
        reviews = []
        for r in p.reviews:
            r_text = f"features/{r.review_id}.text.bin"
            r_img = f"features/{r.review_id}.image.bin"
            write_tensor(out_dir / r_text, r.text_features)
            write_tensor(out_dir / r_img, r.image_features)
            reviews.append(
                {"review_id": r.review_id, "text_file": r_text, "image_file": r_img, "label": int(r.label)}
            )
        entries.append(
            {"product_id": p.product_id, "text_file": p_text, "image_file": p_img, "reviews": reviews}
        )
    manifest = {"version": MANIFEST_VERSION, "d_t": d_t, "d_roi": d_roi, "products": entries}
    path = out_dir / name
    path.write_text(json.dumps(manifest, indent=1))
    return path


# --------------------------------------------------------------------------
# synthetic data
# --------------------------------------------------------------------------


def _mixing(rng, d, strength=0.15):
    # Cayley transform of a small skew matrix: orthogonal and near identity
    g = rng.standard_normal((d, d)) * (strength / np.sqrt(d))
    skew = 0.5 * (g - g.T)
    eye = np.eye(d)
    return np.linalg.solve(eye - skew, eye + skew)


def _aligned(rng, source, mixing, h, sd):
    # blend of mixed source rows and fresh rows; h=4 is fully aligned
    w = 0.5 + h / 8.0
    fresh = rng.standard_normal(source.shape)
    noise = sd * rng.standard_normal(source.shape)
    return w * (source @ mixing) + np.sqrt(1.0 - w * w) * fresh + noise


def _f32(a):
    # features live on disk as float32; keep in-memory copies on that grid
    return a.astype(np.float32).astype(np.float64)


def make_synthetic(
    n_products,
    reviews_per_product,
    d_t,
    d_roi,
    seed,
    s_noise=0.1,
    text_rows=(4, 8),
    image_rows=(1, 3),
    mixing_seed=0,
    prefix="",
):
    """Generate products whose reviews align with them in proportion to the label.

    Each review draws ``h`` uniformly from {0..4} and uses it as its label.
    Review text rows are a subset of the product text rows pushed through a
    fixed near-identity orthogonal mixing, blended with fresh gaussian rows
    at weight ``0.5 + h/8`` on the aligned part, plus gaussian noise with std
    ``(4 - h) / 4 * s_noise``. Review RoI rows are built the same way from
    product RoI rows. The mixing matrices depend only on ``mixing_seed`` so
    separate splits share them.
    """
    if min(n_products, reviews_per_product, d_t, d_roi) < 1:
        raise ValueError("all counts must be >= 1")
    mix_rng = np.random.default_rng(mixing_seed)
    m_text = _mixing(mix_rng, d_t)
    m_image = _mixing(mix_rng, d_roi)
    rng = np.random.default_rng(seed)

    products = []
    for p in range(n_products):
        pid = f"{prefix}p{p:04d}"
        t_p = rng.standard_normal((int(rng.integers(text_rows[0], text_rows[1] + 1)), d_t))
        v_p = rng.standard_normal((int(rng.integers(image_rows[0], image_rows[1] + 1)), d_roi))
        reviews = []
        for j in range(reviews_per_product):
            h = int(rng.integers(0, 5))
            sd = (4 - h) / 4 * s_noise
            n_t = int(rng.integers(1, t_p.shape[0] + 1))
            t_rows = np.sort(rng.choice(t_p.shape[0], size=n_t, replace=False))
            t_r = _aligned(rng, t_p[t_rows], m_text, h, sd)
            n_v = int(rng.integers(1, v_p.shape[0] + 1))
            v_rows = np.sort(rng.choice(v_p.shape[0], size=n_v, replace=False))
            v_r = _aligned(rng, v_p[v_rows], m_image, h, sd)
            reviews.append(ReviewRecord(f"{pid}r{j:03d}", _f32(t_r), _f32(v_r), h))
        products.append(ProductRecord(pid, _f32(t_p), _f32(v_p), tuple(reviews)))
    return products


def write_synthetic(out_dir, products, name="manifest.json"):
    return write_dataset(out_dir, products, name=name)


# --------------------------------------------------------------------------
# batching
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Batch:
    product: ProductRecord
    reviews: tuple


def batch_by_product(records, batch_size, seed=None):
    """Split each product's reviews into chunks of at most ``batch_size``.

    Without a seed, products and reviews keep their input order. With a seed
    both the review order inside a product and the batch order are shuffled
    deterministically.
    """
    if batch_size < 2:
        raise ValueError(f"batch_size must be >= 2, got {batch_size}")
    rng = None if seed is None else np.random.default_rng(seed)
    batches = []
    for product in records:
        reviews = list(product.reviews)
        if rng is not None:
            reviews = [reviews[i] for i in rng.permutation(len(reviews))]
        for lo in range(0, len(reviews), batch_size):
            batches.append(Batch(product, tuple(reviews[lo:lo + batch_size])))
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches
