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
# # Label disagreement and the quadruplet loss
#
# Two samples are compared through the number of label dimensions on which
# they disagree. A quadruplet holds two disjoint pairs; the pair with more
# disagreement should end up farther apart in the embedding by at least the
# margin.

# %%
import numpy as np

from quadloss import QuadrupletInstance, batch_loss, quadruplet_gradients, quadruplet_term
from quadloss.core import semantic_dissimilarity
from quadloss.losses import delta_f, quadruplet_loss_and_grad

# %% [markdown]
# Labels are (ID, gender, age group). Same person: 0. Different person with
# the same soft labels: 1. Nothing in common: 3.

# %%
a, b, c = (5, 1, 0), (9, 1, 0), (7, 0, 2)
print(semantic_dissimilarity(a, a), semantic_dissimilarity(a, b), semantic_dissimilarity(a, c))

# %% [markdown]
# ## One quadruplet
#
# Pair (0, 1) disagrees on 2 labels, pair (2, 3) on none. The dissimilar pair
# sits at squared distance 4 and the similar one at 1, so the margin is met
# and the hinge clamps.

# %%
emb = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
quad = QuadrupletInstance(0, 1, 2, 3, phi_ij=2, phi_pq=0)
print("delta_f", delta_f(*emb, 0.1))
print("term", quadruplet_term(quad, emb, 0.1))
print("batch loss", batch_loss([quad], emb))

# %% [markdown]
# Swap the roles: now the close pair is the dissimilar one, the term is
# positive and the gradients pull (2, 3) together and push (0, 1) apart.

# %%
bad = QuadrupletInstance(2, 3, 0, 1, phi_ij=2, phi_pq=0)
print("term", quadruplet_term(bad, emb, 0.1))
for name, g in zip("ijpq", quadruplet_gradients(bad, emb, 0.1)):
    print(name, g)

# %% [markdown]
# ## Finite-difference check
#
# The batch gradient is the sum of per-instance gradients over the number of
# instances. A wide margin keeps every instance active; central
# differences agree to rounding error.

# %%
rng = np.random.default_rng(0)
emb = rng.normal(size=(8, 3))
quads = np.array([rng.choice(8, 4, replace=False) for _ in range(5)])
loss, grad = quadruplet_loss_and_grad(quads, emb, 5.0)
h = 1e-6
numeric = np.zeros_like(emb)
for idx in np.ndindex(emb.shape):
    up, dn = emb.copy(), emb.copy()
    up[idx] += h
    dn[idx] -= h
    numeric[idx] = (quadruplet_loss_and_grad(quads, up, 5.0)[0]
                    - quadruplet_loss_and_grad(quads, dn, 5.0)[0]) / (2 * h)
print("loss", loss, "max abs diff", np.abs(grad - numeric).max())
