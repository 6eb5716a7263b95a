"""A tour of the tape: build a small graph, run backward, verify with finite differences.

Run with ``python demos/01_autodiff_and_gradcheck.py``.
"""
import numpy as np

from r3net import tensor as T
from r3net.gradcheck import grad_check

rng = np.random.default_rng(0)

# Parameters are named leaves; backward() returns their gradients keyed by name.
W = T.parameter(rng.normal(size=(3, 2)), name="W")
b = T.parameter(np.zeros(2), name="b")
x = T.Tensor(rng.normal(size=(4, 3)))  # plain data, no gradient

# A logistic layer with a binary cross-entropy loss, written with tape ops.
y = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.0, 0.0]])
p = T.sigmoid(T.matmul(x, W) + b)
loss = -(T.Tensor(y) * T.log(p) + T.Tensor(1 - y) * T.log(1 - p)).mean()
grads = T.backward(loss)
print("loss", round(loss.item(), 6))
print("dL/dW\n", grads["W"])

# For this loss the gradient has the closed form x^T (p - y) / size.
closed = x.data.T @ (p.data - y) / y.size
print("closed form agrees:", np.allclose(grads["W"], closed, atol=1e-12))

# The same check, done generically: central differences on every entry.
def build(params):
    q = T.sigmoid(T.matmul(x, params["W"]) + params["b"])
    return -(T.Tensor(y) * T.log(q) + T.Tensor(1 - y) * T.log(1 - q)).mean()

print(grad_check(build, {"W": W, "b": b}, max_entries=None))

# Softmax stays finite even for huge logits.
print(T.softmax(T.Tensor(np.array([1000.0, 999.0, -1000.0]))).data)
