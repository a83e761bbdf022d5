"""Cyclic Jacobi eigensolver for small dense symmetric matrices."""
import numpy as np


class ConvergenceError(RuntimeError):
    """Raised when the Jacobi sweeps hit the iteration cap."""


def off_diagonal_norm(a):
    return float(np.linalg.norm(a - np.diag(np.diag(a))))


def jacobi_eigh(matrix, tol=1e-12, max_sweeps=100):
    """Eigendecomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Sweeps over every (p, q) pair in row order and annihilates ``a[p, q]``
    with a plane rotation, until the off-diagonal Frobenius norm drops below
    ``tol`` times the Frobenius norm of the input.

    Args:
        matrix: (n, n) symmetric array.
        tol: relative convergence threshold on the off-diagonal norm.
        max_sweeps: iteration cap; exceeding it raises ConvergenceError.

    Returns:
        (eigenvalues, eigenvectors) with eigenvalues sorted descending and
        eigenvectors as the matching columns.
    """
    a = np.array(matrix, dtype=float, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains non-finite entries")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max(initial=0.0))):
        raise ValueError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    v = np.eye(n)
    scale = np.linalg.norm(a)
    threshold = tol * scale

    sweeps = 0
    while off_diagonal_norm(a) > threshold:
        if sweeps >= max_sweeps:
            raise ConvergenceError(
                f"Jacobi did not converge in {max_sweeps} sweeps "
                f"(off-diagonal norm {off_diagonal_norm(a):.3e})"
            )
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c

                ap = a[:, p].copy()
                aq = a[:, q]
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :]
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                a[p, q] = a[q, p] = 0.0

                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq

    eigenvalues = np.diag(a).copy()
    order = np.argsort(-eigenvalues, kind="stable")
    return eigenvalues[order], v[:, order]


def fix_signs(vectors, tie_rtol=1e-9):
    """Flip each column so its largest-magnitude entry is positive.

    Entries within ``tie_rtol`` of the column maximum count as tied; the
    lowest index wins, so roundoff cannot flip the sign between runs.
    """
    vectors = np.array(vectors, dtype=float, copy=True)
    for j in range(vectors.shape[1]):
        mags = np.abs(vectors[:, j])
        top = mags.max(initial=0.0)
        if top == 0.0:
            continue
        i = int(np.flatnonzero(mags >= top * (1.0 - tie_rtol))[0])
        if vectors[i, j] < 0:
            vectors[:, j] = -vectors[:, j]
    return vectors
