"""LASSO by cyclic coordinate descent with an unpenalised intercept."""
from __future__ import annotations

import numpy as np

from ..errors import NonConvergenceError


def soft_threshold(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def lasso_fit(X, Y, lam: float, tol: float = 1e-8, max_sweeps: int = 100_000):
    """Minimise ``0.5 * ||Y - X A - b||^2 + lam * ||A||_1`` column by column.

    Returns ``(A, b)`` with ``A`` of shape (features, outputs). Converged when
    the largest coefficient change in a full sweep drops below ``tol``.
    Covariance updates are used, so a sweep costs O(features^2).
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    squeeze = Y.ndim == 1
    if squeeze:
        Y = Y[:, None]
    n, p = X.shape
    if Y.shape[0] != n:
        raise ValueError("X and Y need the same number of rows")
    if n < p:
        raise ValueError("need at least as many rows as features")
    if lam < 0:
        raise ValueError("lambda must be >= 0")

    x_mean = X.mean(axis=0)
    y_mean = Y.mean(axis=0)
    Xc = X - x_mean
    Yc = Y - y_mean
    G = Xc.T @ Xc
    C = Xc.T @ Yc
    diag = np.diag(G).copy()

    A = np.zeros((p, Y.shape[1]))
    for k in range(Y.shape[1]):
        a = A[:, k]
        c = C[:, k]
        Ga = np.zeros(p)
        for sweep in range(max_sweeps):
            max_change = 0.0
            for j in range(p):
                if diag[j] == 0.0:
                    continue
                old = a[j]
                rho = c[j] - Ga[j] + diag[j] * old
                new = soft_threshold(rho, lam) / diag[j]
                if new != old:
                    Ga += G[:, j] * (new - old)
                    a[j] = new
                    max_change = max(max_change, abs(new - old))
            if max_change < tol:
                break
        else:
            b = y_mean - x_mean @ A
            raise NonConvergenceError(
                f"coordinate descent did not converge in {max_sweeps} sweeps",
                best=(A.copy(), b),
            )
    b = y_mean - x_mean @ A
    if squeeze:
        return A[:, 0], b[0]
    return A, b
