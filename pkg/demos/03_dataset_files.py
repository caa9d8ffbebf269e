"""Synthetic corpora, the binary feature format, and product-grouped batches."""

import tempfile
from pathlib import Path

import numpy as np

from mmss.dataset import batch_by_product, load_manifest, make_synthetic, read_tensor, write_dataset

products = make_synthetic(n_products=3, reviews_per_product=70, d_t=8, d_roi=8, seed=0)
print("labels of product 0:", [r.label for r in products[0].reviews][:12], "...")

# %% write and reload; features survive bit for bit
with tempfile.TemporaryDirectory() as tmp:
    manifest_path = write_dataset(tmp, products)
    manifest, loaded = load_manifest(manifest_path)
    print("manifest dims:", manifest.d_t, manifest.d_roi)
    same = all(
        a.text_features.tobytes() == b.text_features.tobytes() for a, b in zip(products, loaded)
    )
    print("bit-identical round trip:", same)
    first = sorted(Path(tmp, "features").iterdir())[0]
    print(first.name, "header bytes:", first.read_bytes()[:15].hex(" "))
    print("shape read back:", read_tensor(first).shape)

# %% batches never mix products; a 70-review product splits 32/32/6
sizes = [len(b.reviews) for b in batch_by_product(products[:1], batch_size=32)]
print("batch sizes:", sizes)

# %% with no noise, alignment with the product tracks the label
quiet = make_synthetic(20, 10, 16, 16, seed=1, s_noise=0.0)


def alignment(review, product):
    r = review / np.linalg.norm(review, axis=1, keepdims=True)
    p = product / np.linalg.norm(product, axis=1, keepdims=True)
    return float(np.mean(np.max(r @ p.T, axis=1)))


for label in (0, 4):
    vals = [alignment(r.text_features, p.text_features) for p in quiet for r in p.reviews if r.label == label]
    print(f"label {label}: mean text alignment {np.mean(vals):.3f}")
