"""
Checking the tape against finite differences
============================================

Every op records a backward closure.  Here we push a tiny batch through
conv -> batchnorm -> relu -> maxpool, take a cross-entropy loss, and
compare one weight gradient with a central difference.
"""

import numpy as np

from xrdseg import ops
from xrdseg.tensor import Tensor

rng = np.random.default_rng(0)
x = Tensor(rng.standard_normal((2, 1, 8, 8)), dtype=np.float64)
w = Tensor(rng.standard_normal((2, 1, 3, 3)), requires_grad=True, dtype=np.float64)
gamma = Tensor(np.ones(2), requires_grad=True, dtype=np.float64)
beta = Tensor(np.zeros(2), requires_grad=True, dtype=np.float64)
labels = rng.integers(0, 2, size=(2, 4, 4))


def loss():
    h = ops.conv2d(x, w, padding=1)
    h = ops.batchnorm2d(h, gamma, beta, np.zeros(2), np.ones(2), training=True)
    return ops.softmax_cross_entropy(ops.maxpool2(ops.relu(h)), labels)


value = loss()
value.backward()
print("loss", value.item())

eps = 1e-6
idx = (1, 0, 2, 0)
w.data[idx] += eps
up = loss().item()
w.data[idx] -= 2 * eps
down = loss().item()
w.data[idx] += eps
print("tape gradient      ", w.grad[idx])
print("central difference ", (up - down) / (2 * eps))
