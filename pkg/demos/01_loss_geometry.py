"""
Loss geometry
=============

Walk a single coordinate through the three ALoss regions and see how the
weight and the loss change. Ground truth sits at 0 and the teacher at 0.4.
"""
import numpy as np

from kdlandmarks import kd_loss as kd

gt, te, sigma = 0.0, 0.4, 0.4

# The teacher is mirrored onto the prediction's side of the ground truth,
# and beta sits at 40% of the teacher distance.
for pr in (0.6, 0.2, 0.16, 0.05, 0.0, -0.3):
    region = kd.Region(int(kd.classify_region(gt, pr, te, sigma)))
    print(f"pr={pr:+.2f}  beta={float(kd.beta(gt, pr, te, sigma)):+.2f}  "
          f"region={region.name:<13}  w={float(kd.assist_weight(gt, pr, te, sigma)):+.3f}  "
          f"ALoss={float(kd.aloss_scalar(gt, pr, te, sigma)):+.4f}")

# %%
# The main term is linear up to 0.5 and quadratic beyond, joined smoothly.
deltas = np.array([0.1, 0.5, 0.7])
print("Loss_Main:", kd.loss_main(np.zeros(3), deltas, kd.LossConfig()))

# %%
# Full KD-Loss with both teachers, plus its per-coordinate gradient.
pr = np.linspace(-0.5, 0.5, 11)
zeros = np.zeros_like(pr)
loss, grad = kd.kd_terms(zeros, pr, zeros + 0.4, zeros - 0.2)
for p, l, g in zip(pr, loss, grad):
    print(f"pr={p:+.1f}  kd={l:+.4f}  d/dpr={g:+.3f}")

# %%
# With two teachers the total can dip slightly below zero just next to the
# ground truth, where both low-influence terms are negative.
print("two teachers at 0.4, pr=0.01:",
      float(kd.kd_terms(0.0, 0.01, 0.4, 0.4)[0]))
