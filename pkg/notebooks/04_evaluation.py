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
# # Evaluation protocols
#
# Verification ROC, closed-set CMC, open-set DIR at rank 1, mean average
# precision, 1-NN soft-label inference with bootstrap, and retrieval with a
# soft-label filter. Raw synthetic features stand in for an embedding so
# the scores are not saturated.

# %%
import numpy as np

from quadloss import (GalleryProbeSplit, bootstrap_eval, cmc_curve, dir_at_rank1, knn_soft_labels,
                      labelling_error, semantic_retrieval, verification_roc)
from quadloss.cli import gallery_probe_split
from quadloss.data import SyntheticSpec, generate_synthetic
from quadloss.evaluation import map_from_split, top_fraction

ds = generate_synthetic(SyntheticSpec(identities=30, noise=1.5), seed=3).dataset
sp = gallery_probe_split(ds, ds.features, "open", gallery_fraction=0.5, impostor_fraction=0.2, seed=0)
closed = sp.probes(sp.genuine)
print(len(sp.gallery_embeddings), "gallery,", int(sp.genuine.sum()), "genuine and",
      int((~sp.genuine).sum()), "impostor probes")

# %%
roc = verification_roc(sp)
far_1pct = roc.y[np.searchsorted(roc.x, 0.01, side="right") - 1]
cmc = cmc_curve(closed)
print(f"VR at FAR 1%: {far_1pct:.3f}")
print(f"rank-1 {cmc[0]:.3f}, top-10% {top_fraction(cmc):.3f}, mAP {map_from_split(closed):.3f}")
dir_curve = dir_at_rank1(sp)
print("DIR at FAR <= 10%:", dir_curve.y[dir_curve.x <= 0.1].max())

# %% [markdown]
# ## Soft labels of unseen probes
#
# Each probe inherits the soft labels of its nearest gallery entry. The
# error is the share of wrong label cells, reported over ten resamples of
# 90% of the probes.

# %%
def soft_error(idx):
    sub = closed.probes(np.asarray(idx))
    return labelling_error(knn_soft_labels(sub, [1, 2]), sub.probe_labels[:, 1:])


print("e(X) =", bootstrap_eval(soft_error, np.arange(len(closed.probe_embeddings)), seed=0))

# %% [markdown]
# ## Filtering the gallery by soft labels
#
# When the query's soft labels are known, gallery entries that contradict
# them are dropped before ranking. Penetration is measured against the
# full gallery, so the filtered curve can only be higher.

# %%
truth = [{1: int(r[1]), 2: int(r[2])} for r in closed.probe_labels]
filtered = semantic_retrieval(closed, truth)
baseline = semantic_retrieval(closed)
for p in (0.01, 0.05, 0.1, 0.2):
    print(f"penetration {p:>4}: hit {baseline.hit_at(p):.3f} -> {filtered.hit_at(p):.3f}")
