"""NME, failure rate, CED and AUC for landmark predictions."""
from dataclasses import dataclass, field

import numpy as np

FAILURE_THRESHOLD = 0.1
CED_SAMPLES = 1000

# outer-eye-corner indices, 0-based
NORM_PAIRS = {
    68: (36, 45),
    98: (60, 72),
    29: (8, 9),
}


def default_norm_pair(num_points):
    """Inter-ocular pair for a known annotation scheme, else ``(0, k - 1)``."""
    return NORM_PAIRS.get(num_points, (0, num_points - 1))


def _anchor(shapes, index):
    # an int selects one point; a sequence of ints selects their midpoint
    if np.ndim(index) == 0:
        return shapes[..., int(index), :]
    return shapes[..., list(index), :].mean(axis=-2)


def _check_pair(norm_pair, k):
    a, b = norm_pair
    flat = [int(i) for side in (a, b) for i in np.atleast_1d(side)]
    if any(i < 0 or i >= k for i in flat):
        raise IndexError(f"norm_pair {norm_pair} out of range for {k} points")
    if np.array_equal(np.atleast_1d(a), np.atleast_1d(b)):
        raise ValueError(f"norm_pair entries must be distinct, got {norm_pair}")


def per_image_errors(preds, gts, norm_pair):
    """Per-image normalized mean point error for ``(N, k, 2)`` batches."""
    preds = np.asarray(preds, dtype=float)
    gts = np.asarray(gts, dtype=float)
    if preds.shape != gts.shape or preds.ndim != 3 or preds.shape[-1] != 2:
        raise ValueError(f"shape mismatch: {preds.shape} vs {gts.shape}")
    _check_pair(norm_pair, gts.shape[1])
    norm = np.linalg.norm(_anchor(gts, norm_pair[0]) - _anchor(gts, norm_pair[1]), axis=-1)
    if np.any(norm <= 0):
        bad = int(np.flatnonzero(norm <= 0)[0])
        raise ValueError(f"zero normalizing distance for image {bad}")
    point_err = np.linalg.norm(preds - gts, axis=-1).mean(axis=-1)
    return point_err / norm


def per_image_error(pred, gt, norm_pair):
    return float(per_image_errors(np.asarray(pred)[None], np.asarray(gt)[None], norm_pair)[0])


def _errors(errors):
    errors = np.asarray(errors, dtype=float).ravel()
    if errors.size == 0:
        raise ValueError("error list is empty")
    if not np.all(np.isfinite(errors)) or np.any(errors < 0):
        raise ValueError("errors must be finite and non-negative")
    return errors


def nme(errors):
    """Mean normalized error in percent."""
    return 100.0 * float(np.mean(_errors(errors)))


def is_failure(errors, threshold=FAILURE_THRESHOLD):
    # strict: an error of exactly ``threshold`` passes
    return np.asarray(errors) > threshold


def failure_rate(errors, threshold=FAILURE_THRESHOLD):
    if threshold <= 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    return 100.0 * float(np.mean(is_failure(_errors(errors), threshold)))


def ced_curve(errors, max_threshold=FAILURE_THRESHOLD, samples=CED_SAMPLES):
    """``(thresholds, fractions)``: share of errors ``<= t`` on a uniform grid."""
    errors = np.sort(_errors(errors))
    if samples < 2:
        raise ValueError(f"samples must be >= 2, got {samples}")
    thresholds = np.linspace(0.0, max_threshold, samples)
    counts = np.searchsorted(errors, thresholds, side="right")
    return thresholds, counts / errors.size


def auc(thresholds, fractions):
    """Trapezoidal area under the CED, normalized by the last threshold."""
    thresholds = np.asarray(thresholds, dtype=float)
    fractions = np.asarray(fractions, dtype=float)
    if thresholds.ndim != 1 or thresholds.shape != fractions.shape or thresholds.size < 2:
        raise ValueError("malformed CED curve")
    if np.any(np.diff(thresholds) <= 0) or thresholds[0] != 0.0:
        raise ValueError("CED thresholds must start at 0 and increase strictly")
    if np.any(np.diff(fractions) < 0) or fractions.min() < 0 or fractions.max() > 1:
        raise ValueError("CED fractions must be non-decreasing within [0, 1]")
    widths = np.diff(thresholds)
    area = float(np.sum(widths * (fractions[1:] + fractions[:-1]) / 2.0))
    return area / thresholds[-1]


@dataclass
class EvalReport:
    nme_percent: float
    fr_percent: float
    auc: float
    ced: list = field(repr=False)
    n_images: int

    def to_dict(self):
        return {
            "nme_percent": self.nme_percent,
            "fr_percent": self.fr_percent,
            "auc": self.auc,
            "n_images": self.n_images,
            "ced": [[t, f] for t, f in self.ced],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            nme_percent=float(data["nme_percent"]),
            fr_percent=float(data["fr_percent"]),
            auc=float(data["auc"]),
            ced=[(float(t), float(f)) for t, f in data["ced"]],
            n_images=int(data["n_images"]),
        )


def evaluate_errors(errors, threshold=FAILURE_THRESHOLD, samples=CED_SAMPLES):
    errors = _errors(errors)
    t, f = ced_curve(errors, threshold, samples)
    return EvalReport(
        nme_percent=nme(errors),
        fr_percent=failure_rate(errors, threshold),
        auc=auc(t, f),
        ced=list(zip(t.tolist(), f.tolist())),
        n_images=int(errors.size),
    )
