"""Assistive, main and combined KD losses for coordinate regression.

Every operation is applied coordinate-wise: x and y of every landmark are
treated as independent scalars and batch losses are means over all scalar
terms. Arrays may have any shape as long as ground truth, prediction and
teacher arrays agree.
"""
import enum
import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

LOW_WEIGHT = -0.5


class Region(enum.IntEnum):
    POSITIVE = 0
    NEGATIVE = 1
    LOW_INFLUENCE = 2


@dataclass(frozen=True)
class LossConfig:
    """Parameters of KD-Loss.

    ``sigma_tolerant`` defaults to ``sigma``. ``use_tough``/``use_tolerant``
    switch the individual assistive terms off for ablations.
    """

    sigma: float = 0.4
    phi: float = 2.0
    c: float = 0.25
    main_threshold: float = 0.5
    sigma_tolerant: float | None = None
    use_tough: bool = True
    use_tolerant: bool = True

    def __post_init__(self):
        for name in ("sigma", "sigma_tolerant"):
            s = getattr(self, name)
            if s is not None and not 0.0 < s < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {s}")
        if self.phi <= 0:
            raise ValueError(f"phi must be positive, got {self.phi}")
        if self.main_threshold <= 0:
            raise ValueError(f"main_threshold must be positive, got {self.main_threshold}")
        if not np.isclose(self.c, self.main_threshold**2, rtol=0, atol=1e-12):
            raise ValueError(
                f"c={self.c} must equal main_threshold**2={self.main_threshold**2} "
                "for the main loss to be continuous"
            )

    @property
    def sigma_tough(self):
        return self.sigma

    @property
    def tolerant_sigma(self):
        return self.sigma if self.sigma_tolerant is None else self.sigma_tolerant


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("loss inputs contain non-finite values")


def _broadcast(*arrays):
    arrays = [np.asarray(a, dtype=float) for a in arrays]
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise ValueError(f"dimension mismatch: {shape} vs {a.shape}")
    _check_finite(*arrays)
    if logger.isEnabledFor(logging.DEBUG):
        if any(np.any(np.abs(a) > 0.5) for a in arrays):
            logger.debug("coordinates outside the nominal [-0.5, 0.5] domain")
    return arrays


def adapt_teacher(gt, pr, te):
    """Mirror the teacher coordinate onto the prediction's side of ``gt``."""
    gt, pr, te = (np.asarray(a, dtype=float) for a in (gt, pr, te))
    return gt + np.sign(pr - gt) * np.abs(te - gt)


def beta(gt, pr, te, sigma=0.4):
    gt, pr, te = (np.asarray(a, dtype=float) for a in (gt, pr, te))
    return gt + sigma * np.sign(pr - gt) * np.abs(te - gt)


def _regions(d_pr, d_te, sigma):
    positive = d_pr >= d_te
    negative = ~positive & (d_pr >= sigma * d_te)
    return positive, negative


def classify_region(gt, pr, te, sigma=0.4):
    """Region tags as an integer array of ``Region`` values."""
    gt, pr, te = _broadcast(gt, pr, te)
    d_pr = np.abs(pr - gt)
    d_te = np.abs(te - gt)
    positive, negative = _regions(d_pr, d_te, sigma)
    tags = np.full(d_pr.shape, Region.LOW_INFLUENCE, dtype=int)
    tags[negative] = Region.NEGATIVE
    tags[positive] = Region.POSITIVE
    return tags if tags.ndim else Region(int(tags))


def _weight(d_pr, d_te, sigma):
    positive, negative = _regions(d_pr, d_te, sigma)
    low = ~(positive | negative)
    d_beta = sigma * d_te
    omega = np.where(positive, 1.0, LOW_WEIGHT)
    # low region is empty when d_beta == 0, so the division is safe where used
    assert not np.any(low & (d_beta == 0))
    safe = np.where(low, d_beta, 1.0)
    omega = np.where(low, LOW_WEIGHT * d_pr / safe, omega)
    return np.where(d_pr == 0, 0.0, omega), positive, negative, low


def assist_weight(gt, pr, te, sigma=0.4):
    gt, pr, te = _broadcast(gt, pr, te)
    omega = _weight(np.abs(pr - gt), np.abs(te - gt), sigma)[0]
    return omega if omega.ndim else float(omega)


def _aloss_terms(gt, pr, te, sigma):
    """Per-coordinate assistive loss and its derivative w.r.t. ``pr``."""
    diff = pr - gt
    d_pr = np.abs(diff)
    d_te = np.abs(te - gt)
    omega, positive, negative, low = _weight(d_pr, d_te, sigma)
    # |te' - pr| with te' the mirrored teacher
    gap = np.abs(d_te - d_pr)
    loss = omega * gap

    d_beta = np.where(low, sigma * d_te, 1.0)
    slope = np.where(
        positive, 1.0, np.where(negative, -LOW_WEIGHT, LOW_WEIGHT * (d_te - 2.0 * d_pr) / d_beta)
    )
    grad = slope * np.sign(diff)
    return loss, grad


def aloss_scalar(gt, pr, te, sigma=0.4):
    """Assistive loss evaluated element-wise (no averaging)."""
    gt, pr, te = _broadcast(gt, pr, te)
    loss = _aloss_terms(gt, pr, te, sigma)[0]
    return loss if loss.ndim else float(loss)


def aloss_batch(gt, pr, te, sigma=0.4):
    gt, pr, te = _broadcast(gt, pr, te)
    return float(np.mean(_aloss_terms(gt, pr, te, sigma)[0]))


def _main_terms(gt, pr, threshold, c):
    diff = pr - gt
    delta = np.abs(diff)
    linear = delta <= threshold
    loss = np.where(linear, delta, delta * delta + c)
    grad = np.where(linear, 1.0, 2.0 * delta) * np.sign(diff)
    return loss, grad


def loss_main(gt, pr, config=LossConfig()):
    gt, pr = _broadcast(gt, pr)
    return float(np.mean(_main_terms(gt, pr, config.main_threshold, config.c)[0]))


def kd_terms(gt, pr, te_tough, te_tolerant, config=LossConfig()):
    """Per-coordinate KD-Loss contributions and derivatives.

    Returns ``(loss, grad)`` arrays of the input shape, before averaging.
    """
    gt, pr, te_tough, te_tolerant = _broadcast(gt, pr, te_tough, te_tolerant)
    loss, grad = _main_terms(gt, pr, config.main_threshold, config.c)
    loss = config.phi * loss
    grad = config.phi * grad
    if config.use_tough:
        l, g = _aloss_terms(gt, pr, te_tough, config.sigma_tough)
        loss = loss + l
        grad = grad + g
    if config.use_tolerant:
        l, g = _aloss_terms(gt, pr, te_tolerant, config.tolerant_sigma)
        loss = loss + l
        grad = grad + g
    return loss, grad


def kd_loss(gt, pr, te_tough, te_tolerant, config=LossConfig()):
    """``phi * main + ALoss_tough + ALoss_tolerant`` averaged over coordinates."""
    return float(np.mean(kd_terms(gt, pr, te_tough, te_tolerant, config)[0]))


def kd_loss_grad(gt, pr, te_tough, te_tolerant, config=LossConfig()):
    """Gradient of :func:`kd_loss` with respect to ``pr``.

    Teachers are constants. At kinks the derivative is taken from the side
    of larger ``|pr - gt|``; at ``pr == gt`` it is zero.
    """
    loss, grad = kd_terms(gt, pr, te_tough, te_tolerant, config)
    return grad / loss.size


def kd_loss_and_grad(gt, pr, te_tough, te_tolerant, config=LossConfig()):
    loss, grad = kd_terms(gt, pr, te_tough, te_tolerant, config)
    return float(np.mean(loss)), grad / loss.size


REFERENCE_KINDS = ("l2", "l1", "smooth_l1")


def reference_loss(kind, gt, pr):
    """Standard regression loss and its gradient w.r.t. ``pr``.

    ``kind`` is one of ``"l2"``, ``"l1"`` or ``"smooth_l1"``.
    """
    gt, pr = _broadcast(gt, pr)
    diff = pr - gt
    delta = np.abs(diff)
    n = diff.size
    if kind == "l2":
        return float(np.mean(diff * diff)), 2.0 * diff / n
    if kind == "l1":
        return float(np.mean(delta)), np.sign(diff) / n
    if kind == "smooth_l1":
        quad = delta < 1.0
        loss = np.where(quad, 0.5 * diff * diff, delta - 0.5)
        grad = np.where(quad, diff, np.sign(diff))
        return float(np.mean(loss)), grad / n
    raise ValueError(f"unknown reference loss {kind!r}; expected one of {REFERENCE_KINDS}")
