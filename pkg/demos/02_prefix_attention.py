"""Prefix prompts inside attention: keys and values get learnable rows
prepended, queries stay untouched, the softmax renormalizes over the
longer key list, and gradients reach the prompts but never the backbone."""

import numpy as np

from oclbench import autodiff as ad
from oclbench.autodiff import Tensor
from oclbench.encoder import Encoder, EncoderConfig, PromptSet

cfg = EncoderConfig(depth=4, hidden_dim=32, heads=4, tokens=9, seed=1234)
enc = Encoder(cfg)
rng = np.random.default_rng(1)
x = rng.standard_normal((2, cfg.feature_dim))

# a zero-length prompt is bit-identical to no prompt at all
empty = PromptSet.init(cfg, layers=1, length=0, seed=2)
with ad.no_grad():
    plain = enc.encode(x).data
    degenerate = enc.encode(x, prompt_set=empty).data
print("M=0 output identical to no-prompt output:", plain.tobytes() == degenerate.tobytes())

# zero-VALUED prompts are not a no-op: they still soak up attention mass
zeros = PromptSet(length=4, pairs=[(Tensor(np.zeros((4, 32)), requires_grad=True),
                                    Tensor(np.zeros((4, 32)), requires_grad=True))])
with ad.no_grad():
    zeroed = enc.encode(x, prompt_set=zeros).data
print("zero-valued prompts change the features:", not np.array_equal(plain, zeroed))

# attention rows sum to 1 over tokens + prompt rows
prompts = PromptSet.init(cfg, layers=1, length=4, seed=3)
h = enc.embed(x[:1])
sink = []
enc.attention_block(h, 0, prompts=prompts.pairs[0], weight_sink=sink)
print("attention weight shape (queries x keys):", sink[0].shape)
print("row sums:", np.round(sink[0].sum(axis=1), 12))

# gradients flow into the prompts, never into the frozen weights
loss = ad.tmean(enc.encode(x, prompt_set=prompts))
loss.backward()
print("prompt grad norm:", np.linalg.norm(prompts.pairs[0][0].grad))
print("backbone grads allocated:", any(t.grad is not None for t in enc.params.all_tensors()))
