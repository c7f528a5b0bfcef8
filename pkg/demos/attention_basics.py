"""Walk through the attention primitives on tiny hand-sized inputs.

Shows the scaled dot-product core, the multi-head split, and the two
sanity properties the test suite leans on: rows of the attention weights
sum to one, and a single key/value pair makes attention a copy.
"""

import numpy as np

from ivt import tensor as T
from ivt.blocks import (AttentionConfig, attention, block_params,
                        multi_head_self_attention)
from ivt.tensor import Tensor

rng = np.random.default_rng(0)

# One query attending over three keys.
q = Tensor(rng.uniform(-1, 1, size=(1, 4)))
k = Tensor(rng.uniform(-1, 1, size=(3, 4)))
v = Tensor(np.eye(3, 4))

out = attention(q, k, v)
print("attention output:", np.round(out.data, 4))
print("rows of V are one-hot, so the output row is exactly the")
print("softmax weight vector over the three keys; it sums to",
      float(out.data.sum()))

# With a single key there is nothing to weigh: the value is copied.
single = attention(q, Tensor(k.data[:1]), Tensor(v.data[:1]))
print("\nsingle key copies the value:", np.array_equal(single.data, v.data[:1]))

# Multi-head self-attention mixes a whole token sequence.
cfg = AttentionConfig(d_model=8, heads=2)
params = block_params(rng, cfg)
tokens = Tensor(rng.uniform(-1, 1, size=(5, 8)), requires_grad=True)
mixed = multi_head_self_attention(tokens, params, cfg)
print("\nMHSA: 5 tokens of width 8 ->", mixed.shape)

# Self-attention has no notion of order: permuting the tokens permutes
# the outputs the same way (up to float summation noise).
perm = rng.permutation(5)
moved = multi_head_self_attention(Tensor(tokens.data[perm]), params, cfg)
print("permutation equivariance error:",
      float(np.max(np.abs(moved.data - mixed.data[perm]))))

# Everything above is differentiable; a scalar head gives gradients.
loss = T.tsum(mixed * mixed)
T.backward(loss)
print("\ngradient wrt tokens has shape", tokens.grad.shape,
      "and norm", float(np.linalg.norm(tokens.grad)))
