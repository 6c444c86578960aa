"""Cosine-prototype logits and minibatch logit masking, side by side with
the linear head they replace."""

import numpy as np

from oclbench import autodiff as ad
from oclbench.autodiff import Tensor
from oclbench import heads

rng = np.random.default_rng(4)
C, D = 6, 12
cos_head = heads.CosineHead.init(C, D, seed=1, tau=0.1)
g = Tensor(rng.standard_normal((4, D)), requires_grad=True)

z = heads.cosine_logits(g, cos_head)
print("cosine logits live in [-1/tau, 1/tau]:",
      float(z.data.min()), "..", float(z.data.max()))

# rescaling a prototype or a feature never moves a cosine logit
scaled = heads.CosineHead(Tensor(cos_head.prototypes.data * 1e3), tau=0.1)
drift = np.max(np.abs(heads.cosine_logits(g, scaled).data - z.data))
print(f"logit drift after 1000x prototype rescale: {drift:.2e}")

lin_head = heads.LinearHead(weight=Tensor(rng.standard_normal((C, D))),
                            bias=Tensor(np.zeros(C)))
zl = heads.linear_logits(g, lin_head)
zl2 = heads.linear_logits(g, heads.LinearHead(Tensor(lin_head.weight.data * 2),
                                              Tensor(np.zeros(C))))
print("linear logits double when weights double:", np.allclose(zl2.data, 2 * zl.data))

# the mask keeps only the classes present in the minibatch
labels = [1, 4, 1, 4]
mask = heads.make_mask(labels, C)
print("mask vector:", mask.as_vector())

loss = heads.masked_ce_loss(heads.cosine_logits(g, cos_head), mask, labels)
grads = ad.grads(loss, [cos_head.prototypes])[0]
print("per-class prototype grad norms (masked classes are exactly zero):")
for c in range(C):
    print(f"  class {c}: {np.linalg.norm(grads[c]):.6f}")

probs = heads.masked_softmax(z.data, mask)
print("masked softmax row 0:", np.round(probs[0], 4), "(zeros are exact)")
