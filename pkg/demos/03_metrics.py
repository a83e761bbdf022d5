"""
Evaluation metrics
==================

Per-image normalized error, NME, failure rate, the CED curve and its AUC.
"""
import numpy as np

from kdlandmarks.metrics import ced_curve, evaluate_errors, per_image_error

gt = np.array([[0.0, 0.0], [1.0, 0.0]])
pred = gt + [0.0, 0.1]
print("per-image error:", per_image_error(pred, gt, (0, 1)))

# %%
rng = np.random.default_rng(0)
errors = np.abs(rng.normal(0.05, 0.03, 200))
report = evaluate_errors(errors)
print(f"NME {report.nme_percent:.2f}%  FR {report.fr_percent:.1f}%  AUC {report.auc:.4f}")

# %%
# A few points on the CED curve.
t, f = ced_curve(errors, samples=11)
for threshold, fraction in zip(t, f):
    print(f"error <= {threshold:.2f}: {fraction:.3f}")

# An error of exactly 0.1 is not a failure.
print("FR of [0.1]:", evaluate_errors([0.1]).fr_percent)
