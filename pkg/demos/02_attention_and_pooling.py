"""Self-attention and soft pooling, the two building blocks of every interaction."""

import numpy as np

from mmss.blocks import MlpHead, SelfAttentionLayer, soft_pool

rng = np.random.default_rng(1)
layer = SelfAttentionLayer.init(rng, d_in=6, d_out=6, heads=2)

# %% attention is permutation-equivariant over rows
x = rng.normal(size=(5, 6))
perm = np.array([4, 2, 0, 1, 3])
out = layer(x).value
print("equivariant:", np.allclose(layer(x[perm]).value, out[perm]))

# %% soft pooling: a per-column softmax-weighted mean that leans toward large entries
col = np.array([[0.0], [np.log(3.0)]])
print("soft_pool([0, ln 3]) =", float(soft_pool(col).value[0]), "(plain mean", float(col.mean()), ")")

# %% a scoring head maps the pooled vector to one number
head = MlpHead.init(rng, 6)
print("score:", float(head(soft_pool(out)).value))
