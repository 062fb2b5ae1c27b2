"""Small dense linear-algebra helpers shared by the CGF and POMDP code."""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class PerronTriple:
    """Perron-Frobenius eigenvalue with left/right eigenvectors.

    ``u`` is a pmf (sums to one) and ``v`` is scaled so that ``u @ v == 1``.
    """

    lam: float
    u: np.ndarray
    v: np.ndarray
    method: str


def _power(A, tol, max_iter):
    n = A.shape[0]
    x = np.full(n, 1.0 / n)
    lam = 0.0
    drift_log = []
    for it in range(1, max_iter + 1):
        y = A @ x
        s = y.sum()
        if not np.isfinite(s) or s <= 0.0:
            return None
        x_new = y / s
        # s is the eigenvalue estimate once x is (nearly) invariant
        drift = abs(s - lam)
        lam = s
        step = np.abs(x_new - x).max()
        x = x_new
        if drift <= tol * max(1.0, lam) and step <= 1e-15 * 10:
            return lam, x, it
        if it % 500 == 0:
            drift_log.append(step)
            if len(drift_log) >= 2 and drift_log[-1] > 0.5 * drift_log[-2]:
                # periodic or nearly degenerate spectrum; let the caller fall back
                return None
    return None


def _dense(A):
    w, V = np.linalg.eig(A)
    k = int(np.argmax(w.real))
    lam = float(w[k].real)
    vec = np.abs(V[:, k].real)
    return lam, vec / vec.sum()


def perron_frobenius(A, tol=1e-14, max_iter=100_000):
    """Perron-Frobenius triple of a nonnegative square matrix.

    Power iteration on ``A`` and ``A.T``; falls back to a dense eigensolve
    when the iteration stalls (periodicity, tiny spectral gap).
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    if (A < 0).any():
        raise ValueError("matrix must be nonnegative")
    right = _power(A, tol, max_iter)
    left = _power(A.T, tol, max_iter) if right is not None else None
    if right is not None and left is not None:
        lam, v, _ = right
        _, u, _ = left
        method = "power"
    else:
        lam, v = _dense(A)
        _, u = _dense(A.T)
        method = "dense"
    uv = u @ v
    if not np.isfinite(uv) or uv <= 0:
        # happens when tilting underflows entries and the matrix turns reducible
        raise ArithmeticError("Perron-Frobenius vectors are orthogonal; matrix is numerically reducible")
    # Rayleigh-type refinement of the eigenvalue from the converged vector
    lam = float(u @ A @ v / uv)
    u = u / u.sum()
    v = v / (u @ v)
    return PerronTriple(lam, u, v, method)


def stationary_pmf(P):
    """Invariant pmf of a row-stochastic matrix with a single recurrent class."""
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    A = np.vstack([P.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    mu, *_ = np.linalg.lstsq(A, b, rcond=None)
    mu = np.where(np.abs(mu) < 1e-15, 0.0, mu)
    return mu / mu.sum()


def reachability(P):
    """Boolean matrix R with R[i, j] true iff j is reachable from i in n >= 1 steps."""
    A = np.asarray(P) > 0
    R = A.copy()
    while True:
        R_next = R | ((R.astype(int) @ A.astype(int)) > 0)
        if (R_next == R).all():
            return R
        R = R_next
