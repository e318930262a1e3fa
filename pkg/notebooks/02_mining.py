# ---
# jupyter:
#   jupytext:
#     formats: py:percent
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # Sampling learning instances
#
# A batch of b samples holds C(b, 4) four-element subsets, each with three ways
# to split it into two pairs. Splits whose pairs disagree on the same number
# of labels carry no signal. Rather than enumerating all of them, the sampler
# draws random splits and keeps the valid ones.

# %%
import itertools

import numpy as np

from quadloss import Batch, sample_batch, sample_minibatch
from quadloss.data import SyntheticSpec, generate_synthetic

# %%
labels = np.array([[0, 0, 0], [0, 0, 0], [1, 1, 1], [2, 2, 2]])
mb = sample_minibatch(Batch(np.arange(4)), labels, s=5, rng=np.random.default_rng(0))
print(mb.quads, mb.phi)

# %% [markdown]
# Only one of the three splits is valid here: {0,1} agree everywhere, {2,3}
# disagree everywhere. The other two splits compare 3 with 3.

# %%
for pairing in ([(0, 1), (2, 3)], [(0, 2), (1, 3)], [(0, 3), (1, 2)]):
    phis = [int(np.sum(labels[i] != labels[j])) for i, j in pairing]
    print(pairing, phis)

# %% [markdown]
# ## Yield on a realistic batch
#
# With 40 identities and two soft labels almost every random split is valid,
# so a mini-batch of 64 fills far inside the budget of 50 draws per instance
# (draws are made in chunks, so the count is a multiple of the chunk size).

# %%
ds = generate_synthetic(SyntheticSpec(), seed=0).dataset
rng = np.random.default_rng(1)
batch = sample_batch(len(ds), 64, rng)
mb = sample_minibatch(batch, ds.labels, 64, rng)
print(len(mb), "instances after", mb.attempts, "draws")
print("delta phi histogram", np.bincount(mb.phi[:, 0] - mb.phi[:, 1]))

# %% [markdown]
# A batch where everyone shares every label is flagged degenerate.

# %%
same = np.zeros((10, 3), dtype=int)
print(sample_minibatch(Batch(np.arange(10)), same, 8, rng).degenerate)
