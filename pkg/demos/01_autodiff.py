"""Reverse-mode differentiation on numpy arrays.

Every op returns a Node that remembers its parents and how to push a
gradient back to them. Calling backward() on a scalar walks the graph once.
"""

import numpy as np

from mmss import autograd as ag
from mmss.autograd import Node

# %% a tiny graph: y = sum(gelu(x @ w))
rng = np.random.default_rng(0)
x = Node(rng.normal(size=(3, 4)), requires_grad=True, name="x")
w = Node(rng.normal(size=(4, 2)), requires_grad=True, name="w")
y = ag.sum_(ag.gelu(ag.matmul(x, w)))
y.backward()
print("y =", float(y.value))
print("dy/dw =\n", w.grad)

# %% compare one entry with a central difference
h = 1e-5
w.value[0, 0] += h
up = float(ag.sum_(ag.gelu(ag.matmul(x, w))).value)
w.value[0, 0] -= 2 * h
down = float(ag.sum_(ag.gelu(ag.matmul(x, w))).value)
w.value[0, 0] += h
print("numeric dy/dw[0,0] =", (up - down) / (2 * h))

# %% shape errors name both operands
try:
    ag.matmul(np.ones((2, 3)), np.ones((4, 2)))
except ag.ShapeError as exc:
    print("ShapeError:", exc)
