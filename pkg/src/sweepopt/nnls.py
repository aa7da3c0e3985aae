"""Nonnegative least squares by the active-set method of Lawson and Hanson."""

import numpy as np

from .errors import NumericalFailure


def nnls(A, b, maxiter=None, tol=None):
    """Solve min ||A x - b||_2 subject to x >= 0.

    Parameters
    ----------
    A : (m, n) array
    b : (m,) array
    maxiter : int, optional
        Cap on passive-set changes; defaults to 3 * n + 30.
    tol : float, optional
        Dual-feasibility tolerance; defaults to a machine-scaled value.

    Returns
    -------
    x : (n,) array
    rnorm : float
        Euclidean norm of the residual ``A x - b``.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if n == 0:
        return np.zeros(0), float(np.linalg.norm(b))
    if maxiter is None:
        maxiter = 3 * n + 30
    if tol is None:
        tol = 10.0 * np.finfo(float).eps * max(m, n) * max(1.0, float(np.abs(A).max(initial=0.0))) \
            * max(1.0, float(np.abs(b).max(initial=0.0)))

    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    resid = b.copy()
    w = A.T @ resid

    iters = 0
    while True:
        candidates = ~passive & (w > tol)
        if not candidates.any():
            break
        if iters >= maxiter:
            raise NumericalFailure(
                f"nnls did not converge within {maxiter} active-set changes")
        j = int(np.argmax(np.where(candidates, w, -np.inf)))
        passive[j] = True

        while True:
            iters += 1
            cols = np.flatnonzero(passive)
            z_sub, *_ = np.linalg.lstsq(A[:, cols], b, rcond=None)
            z = np.zeros(n)
            z[cols] = z_sub
            if (z[cols] > 0).all():
                x = z
                break
            # Step toward z only as far as nonnegativity allows, then drop
            # the columns that hit zero from the passive set.
            neg = cols[z[cols] <= 0]
            alpha = np.min(x[neg] / (x[neg] - z[neg]))
            x = x + alpha * (z - x)
            passive &= x > tol
            x[~passive] = 0.0
            if iters >= maxiter:
                raise NumericalFailure(
                    f"nnls inner loop exceeded {maxiter} iterations")

        resid = b - A @ x
        w = A.T @ resid

    return x, float(np.linalg.norm(b - A @ x))
