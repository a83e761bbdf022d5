"""Point distribution model over normalized landmark shapes.

Shapes are ``(k, 2)`` float arrays in normalized coordinates; batches are
``(N, k, 2)``. Internally a shape is flattened to the interleaved 2k-vector
``(x0, y0, x1, y1, ...)``.
"""
import math
from dataclasses import dataclass

import numpy as np

from .eigen import fix_signs, jacobi_eigh

DEFAULT_M_TILDE = 0.9
DEFAULT_RANK_EPSILON = 1e-10


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    width: float
    height: float

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.width, self.height)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"bounding box has non-finite fields: {vals}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(
                f"degenerate bounding box: width={self.width}, height={self.height}"
            )

    @property
    def center(self):
        return np.array([self.x_min + 0.5 * self.width, self.y_min + 0.5 * self.height])

    @property
    def extent(self):
        return np.array([self.width, self.height], dtype=float)


@dataclass(frozen=True, eq=False)
class ShapeModel:
    """Mean shape, orthonormal eigenvector basis and eigenvalues.

    ``basis`` has shape ``(2k, m)``; ``eigenvalues`` has length ``m`` and is
    sorted descending.
    """

    mean: np.ndarray
    basis: np.ndarray
    eigenvalues: np.ndarray
    num_points: int

    @property
    def retained_count(self):
        return int(self.basis.shape[1])

    @property
    def mean_shape(self):
        return self.mean.reshape(self.num_points, 2)


def as_shapes(shapes):
    """Coerce to a finite ``(N, k, 2)`` float array."""
    arr = np.asarray(shapes, dtype=float)
    if arr.ndim != 3 or arr.shape[-1] != 2:
        raise ValueError(f"expected shapes of form (N, k, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("shapes contain non-finite coordinates")
    return arr


def normalize_shape(raw, box):
    """Map pixel landmarks into the box-relative ``[-0.5, 0.5]`` frame.

    Points outside the box are clamped to the range.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2 or raw.shape[1] != 2:
        raise ValueError(f"expected a (k, 2) shape, got {raw.shape}")
    if not np.all(np.isfinite(raw)):
        raise ValueError("raw shape contains non-finite coordinates")
    out = (raw - box.center) / box.extent
    return np.clip(out, -0.5, 0.5)


def mean_shape(shapes):
    if len(shapes) == 0:
        raise ValueError("mean_shape needs at least one shape")
    try:
        arr = as_shapes(shapes)
    except ValueError as exc:
        raise ValueError(f"inconsistent shapes: {exc}") from exc
    return arr.mean(axis=0)


def fit_shape_model(shapes, rank_epsilon=DEFAULT_RANK_EPSILON, tol=1e-12, max_sweeps=100):
    """Fit the point distribution model.

    Eigendecomposes the biased (1/N) covariance of the flattened shapes and
    keeps the eigenvectors whose eigenvalue exceeds
    ``rank_epsilon * max_eigenvalue``.
    """
    try:
        arr = as_shapes(shapes)
    except ValueError as exc:
        raise ValueError(f"inconsistent shapes: {exc}") from exc
    n, k, _ = arr.shape
    if n < 2:
        raise ValueError(f"need at least 2 shapes to fit a shape model, got {n}")

    flat = arr.reshape(n, 2 * k)
    mean = flat.mean(axis=0)
    centered = flat - mean
    cov = centered.T @ centered / n

    eigenvalues, vectors = jacobi_eigh(cov, tol=tol, max_sweeps=max_sweeps)
    lam_max = eigenvalues[0] if eigenvalues.size else 0.0
    if lam_max > 0:
        keep = eigenvalues > rank_epsilon * lam_max
    else:
        keep = np.zeros_like(eigenvalues, dtype=bool)
    basis = fix_signs(vectors[:, keep])
    return ShapeModel(
        mean=mean,
        basis=basis,
        eigenvalues=eigenvalues[keep].copy(),
        num_points=k,
    )


def _flatten_for(model, shape):
    arr = np.asarray(shape, dtype=float)
    if arr.shape[-2:] != (model.num_points, 2):
        raise ValueError(
            f"shape has {arr.shape[-2:]} points, model expects ({model.num_points}, 2)"
        )
    return arr.reshape(arr.shape[:-2] + (2 * model.num_points,))


def project(model, shape):
    """Shape coefficients ``V^T (f - mean)``; accepts one shape or a batch."""
    flat = _flatten_for(model, shape)
    return (flat - model.mean) @ model.basis


def reconstruct(model, coefficients, count=None):
    """``mean + V[:, :count] b``, returned as ``(..., k, 2)``."""
    coefficients = np.asarray(coefficients, dtype=float)
    count = model.retained_count if count is None else count
    flat = model.mean + coefficients[..., :count] @ model.basis[:, :count].T
    return flat.reshape(flat.shape[:-1] + (model.num_points, 2))


def clamp_coefficients(b, eigenvalues):
    b = np.asarray(b, dtype=float)
    eigenvalues = np.asarray(eigenvalues, dtype=float)
    if b.shape[-1] != eigenvalues.shape[-1]:
        raise ValueError(
            f"coefficient length {b.shape[-1]} != eigenvalue count {eigenvalues.shape[-1]}"
        )
    if np.any(eigenvalues < 0):
        raise ValueError("eigenvalues must be non-negative")
    limit = 3.0 * np.sqrt(eigenvalues)
    return np.clip(b, -limit, limit)


def modes_for(model, m_tilde):
    """Number of leading eigenvectors used for a given proportion."""
    if not 0.0 <= m_tilde <= 1.0:
        raise ValueError(f"m_tilde must be in [0, 1], got {m_tilde}")
    # guard against 0.1 * 30 == 3.0000000000000004
    return min(model.retained_count, math.ceil(m_tilde * model.retained_count - 1e-9))


def soften(model, shape, m_tilde=DEFAULT_M_TILDE):
    """Regenerate a shape from its clamped, truncated coefficient vector.

    Works on a single ``(k, 2)`` shape or an ``(N, k, 2)`` batch.
    """
    count = modes_for(model, m_tilde)
    b = project(model, shape)[..., :count]
    b = clamp_coefficients(b, model.eigenvalues[:count])
    return reconstruct(model, b, count)
