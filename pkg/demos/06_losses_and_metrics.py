"""Training objectives and ranking metrics on small hand-made inputs."""

import math

import numpy as np

from mmss import autograd as ag
from mmss.autograd import Node
from mmss.metrics import RankedList, average_precision, ndcg_at
from mmss.objectives import ranking_loss, subtask_loss, uncertainty_combine

# %% pairwise hinge: three ordered pairs, all tied, each costs the full margin
print("ranking loss:", float(ranking_loss([0.0, 0.0, 0.0], [4, 2, 0]).value))

# %% subtask loss weights each residual by how far the target moved from gold
l_s = subtask_loss({"ptrt": ag.constant([1.0])}, {"ptrt": [3.0]}, [2.0])["ptrt"]
print("subtask loss:", float(l_s.value), "= tanh(1) * 2 =", math.tanh(1) * 2)

# %% learnable log-variance settles at log L
eta = Node(np.array(0.0), requires_grad=True)
for _ in range(200):
    eta.grad = None
    uncertainty_combine({"a": ag.constant(2.0)}, {"a": eta}).backward()
    eta.value -= 0.5 * eta.grad
print("eta:", float(eta.value), "log 2:", math.log(2))

# %% ranking metrics
ranked = RankedList.build([("a", 0.9, 3), ("b", 0.5, 0), ("c", 0.1, 4)])
print("AP:", average_precision(ranked), "NDCG@3:", round(ndcg_at(ranked, 3), 4))
