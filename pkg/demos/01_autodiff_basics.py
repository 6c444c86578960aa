"""Tour of the tensor engine: forward ops, backward sweep, and the
finite-difference harness that audits every gradient rule."""

import numpy as np

from oclbench import autodiff as ad
from oclbench.autodiff import Tensor

# A tiny computation: mean(gelu(layer_norm(x) @ w))
rng = np.random.default_rng(0)
x = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
gamma = Tensor(np.ones(6), requires_grad=True)
beta = Tensor(np.zeros(6), requires_grad=True)
w = Tensor(rng.standard_normal((6, 3)))     # frozen: gets no gradient storage

loss = ad.tmean(ad.gelu(ad.matmul(ad.layer_norm(x, gamma, beta), w)))
loss.backward()
print("loss:", loss.item())
print("x.grad row 0:", np.round(x.grad[0], 4))
print("frozen w grad allocated?", w.grad is not None)

# matmul accumulates over the inner axis in a fixed order, so it agrees
# bit for bit with the naive triple loop
a, b = rng.standard_normal((3, 5)), rng.standard_normal((5, 2))
naive = np.zeros((3, 2))
for i in range(3):
    for j in range(2):
        for k in range(5):
            naive[i, j] += a[i, k] * b[k, j]
print("matmul == triple loop bitwise:", np.array_equal(ad.matmul(Tensor(a), Tensor(b)).data, naive))

# every backward rule is checked against central finite differences
err = ad.grad_check(
    lambda: ad.tmean(ad.gelu(ad.matmul(ad.layer_norm(x, gamma, beta), w))),
    [x, gamma, beta], step=1e-3)
print(f"max relative error autodiff vs finite differences: {err:.2e}")
