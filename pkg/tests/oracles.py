"""Independent scalar reference implementations used as test oracles.

Written branch-by-branch in plain Python floats, deliberately not sharing
code with the vectorized library paths.
"""
import math


def sign(x):
    return int(x > 0) - int(x < 0)


def aloss(gt, pr, te, sigma=0.4):
    te_adapted = gt + sign(pr - gt) * abs(te - gt)
    b = gt + sigma * sign(pr - gt) * abs(te - gt)
    d_pr = abs(pr - gt)
    d_te = abs(te - gt)
    d_b = abs(b - gt)
    if d_pr == 0:
        return 0.0
    if d_pr - d_te >= 0:
        w = 1.0
    elif d_te - d_pr >= 0 and d_pr - d_b >= 0:
        w = -0.5
    else:
        # linear from 0 at gt to -0.5 at beta
        w = -0.5 * (pr - gt) / (b - gt)
    return w * abs(te_adapted - pr)


def main_term(gt, pr, threshold=0.5, c=0.25):
    delta = abs(gt - pr)
    return delta if delta <= threshold else delta * delta + c


def kd_term(gt, pr, te_tough, te_tolerant, sigma=0.4, phi=2.0):
    return phi * main_term(gt, pr) + aloss(gt, pr, te_tough, sigma) + aloss(gt, pr, te_tolerant, sigma)


def central_difference(f, x, h=1e-6):
    return (f(x + h) - f(x - h)) / (2 * h)


def ced_brute_force(errors, max_threshold, samples):
    thresholds = [max_threshold * i / (samples - 1) for i in range(samples)]
    fractions = []
    for t in thresholds:
        count = 0
        for e in errors:
            if e <= t:
                count += 1
        fractions.append(count / len(errors))
    return thresholds, fractions


def auc_brute_force(errors, max_threshold, samples):
    t, f = ced_brute_force(errors, max_threshold, samples)
    area = 0.0
    for i in range(1, len(t)):
        area += (t[i] - t[i - 1]) * (f[i] + f[i - 1]) / 2
    return area / max_threshold


def point_error(pred, gt, i, j):
    total = 0.0
    for (px, py), (gx, gy) in zip(pred, gt):
        total += math.hypot(px - gx, py - gy)
    norm = math.hypot(gt[i][0] - gt[j][0], gt[i][1] - gt[j][1])
    return total / len(gt) / norm
