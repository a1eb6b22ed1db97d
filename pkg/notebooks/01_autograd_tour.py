"""
A tour of the tensor library
============================

The forecaster is trained with a small reverse-mode autodiff engine built on
NumPy. This script walks through building a graph, pulling gradients out of
it and checking them against finite differences.
"""

import numpy as np

from averagetime import autograd as ag

# %%
# Tensors wrap arrays. Marking one as requiring a gradient makes every result
# computed from it remember how it was made.
rng = ag.make_rng(0)
w = ag.Tensor(rng.normal(size=(4, 2)), requires_grad=True)
x = ag.Tensor(rng.normal(size=(3, 4)))
y = ag.gelu(x @ w)
print("output shape:", y.shape)

# %%
# A scalar loss can be differentiated. Gradients land on the leaves.
loss = ag.mean(y * y)
ag.backward(loss)
print("dloss/dw:\n", w.grad)

# %%
# Central differences give an independent estimate. ``grad_check`` reports
# the largest relative disagreement over all components.
err = ag.grad_check(lambda t: ag.mean(ag.gelu(x @ t) * ag.gelu(x @ t)), w)
print(f"max relative error: {err:.2e}")

# %%
# Broadcasting works as in NumPy; the gradient of a broadcast operand is
# summed back to its own shape.
b = ag.Tensor(np.zeros(2), requires_grad=True)
ag.backward(ag.sum_(x @ w + b))
print("bias gradient (one per output column):", b.grad)

# %%
# Inside ``no_grad`` nothing is recorded, which is how evaluation runs.
with ag.no_grad():
    z = x @ w
print("tracked under no_grad:", z.requires_grad)
