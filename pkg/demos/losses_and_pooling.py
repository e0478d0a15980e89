"""
Pooling, losses and the learning-rate schedule
==============================================

The training-side formulas work on plain arrays: generalized-mean pooling
of a feature map, the pair-based circle loss, the batch-hard triplet loss,
the cosine learning-rate decay and the box extracted from an activation
heatmap.
"""

# %%
import numpy as np

from vocreid.features import LrSchedule, cosine_lr, gem_pool, wsd_bbox
from vocreid.losses import LabeledBatch, LossConfig, circle_loss, combined_loss, triplet_loss_batch_hard

rng = np.random.default_rng(0)

# %% GeM moves from average pooling (p=1) towards max pooling as p grows
fmap = rng.uniform(0, 1, size=(4, 7, 7))
print("mean ", fmap.reshape(4, -1).mean(axis=1).round(4))
for p in (1.0, 3.0, 10.0, 100.0):
    print(f"p={p:<5}", gem_pool(fmap, p).round(4))
print("max  ", fmap.reshape(4, -1).max(axis=1).round(4))

# %% Losses on a P x K batch
P, K = 4, 4
centers = rng.standard_normal((P, 16))
labels = np.repeat(np.arange(P), K)
for spread in (0.1, 0.5, 2.0):
    emb = centers[labels] + spread * rng.standard_normal((P * K, 16))
    b = LabeledBatch(emb, labels, P, K)
    print(f"spread {spread}: circle {circle_loss(b):.4f} triplet {triplet_loss_batch_hard(b):.4f}")

# %% A perfectly separated batch still has a small circle loss: negatives
# at similarity -1 contribute exp(0) each once their weight clamps to zero
sep = LabeledBatch(np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]]), [0, 0, 1, 1], 2, 2)
print("separated batch:", combined_loss(sep), "closed form:", np.log1p(8 * np.exp(-64 * 0.35**2)))
print("larger scale:", combined_loss(sep, LossConfig(circle_scale=256.0)))

# %% Cosine decay between the two learning rates
sched = LrSchedule(3.5e-4, 7.7e-7, 60)
print([f"{cosine_lr(sched, e):.2e}" for e in (0, 15, 30, 45, 60)])

# %% Box around the strongest activations
heat = np.zeros((8, 12))
heat[2:5, 3:9] = rng.uniform(0.6, 1.0, size=(3, 6))
heat += 0.1 * rng.uniform(size=heat.shape)
print("box (x0, y0, x1, y1):", wsd_bbox(heat, 0.5))
