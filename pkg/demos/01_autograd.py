"""Reverse-mode differentiation on numpy arrays, checked against finite differences."""

import numpy as np

from cirn import tensor as T
from cirn.gradcheck import grad_check

T.set_default_dtype(np.float64)
rng = np.random.default_rng(0)

# A leaf tensor records gradients; everything computed from it remembers how.
x = T.tensor(rng.normal(size=(2, 3)), requires_grad=True)
w = T.tensor(rng.normal(size=(3, 4)), requires_grad=True)
y = T.relu(T.matmul(x, w))
loss = T.tsum(T.square(y))
print("graph, inputs first:", [node.op for node in T.topological_order(loss)])

T.backward(loss)
print("dloss/dx:\n", x.grad)

# Shapes never broadcast silently. Widening a row is an explicit step.
row = T.tensor(np.ones((1, 4)))
print("expanded:", T.expand(row, (3, 4)).shape)
try:
    T.add(T.zeros((3, 4)), T.zeros((4,)))
except ValueError as exc:
    print("refused:", exc)

# Convolution and pooling. Pooling windows that hang off the edge keep
# whatever fits, so a 5x5 map pools to 3x3.
img = T.tensor(rng.normal(size=(2, 5, 5)), requires_grad=True)
kernel = T.tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
pooled = T.maxpool2d(T.relu(T.conv2d(img, kernel)))
print("conv -> pool:", img.shape, "->", pooled.shape)

# Central differences agree with the analytic gradient to about 1e-9.
probe = rng.normal(size=pooled.shape)
report = grad_check(lambda: T.tsum(T.mul(T.maxpool2d(T.relu(T.conv2d(img, kernel))), T.tensor(probe))),
                    kernel, name="conv2d kernel")
print(report.line())
